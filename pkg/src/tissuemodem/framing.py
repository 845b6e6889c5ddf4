"""Frame assembly and receiver-side coarse alignment.

A transmit frame is ``[linear chirp | guard interval | data]``.  The chirp
sweeps -fb/2 .. +fb/2 and is matched-filtered at the receiver for coarse
timing; correlating against time-rescaled chirp templates gives a coarse
Doppler estimate, which a windowed-sinc fractional resampler then removes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal as _sig

from .exceptions import ConfigurationError, SyncError
from .modem import BasebandSignal, PassbandSignal, PulseShape, design_rrc

DEFAULT_SYNC_THRESHOLD_DB = 6.0

# +/-0.5% in 0.05% steps; residual scale error stays within PLL pull-in range
DEFAULT_DOPPLER_GRID = 1.0 + 5e-4 * np.arange(-10, 11)

_RESAMPLE_HALF = 8          # 16-tap interpolation kernel
_RESAMPLE_KAISER_BETA = 8.0
_RESAMPLE_CHUNK = 1 << 16


@dataclass(frozen=True)
class FrameSpec:
    """Signal plan shared by transmitter and receiver.

    ``fs`` must be an exact integer multiple of ``fb``; the multiple is the
    oversampling factor L.
    """

    fb: float
    fc: float
    fs: float
    n_symbols: int
    chirp_duration: float
    guard_duration: float
    pulse: PulseShape
    training_fraction: float = 0.1

    def __post_init__(self):
        if self.fb <= 0 or self.fs <= 0:
            raise ConfigurationError("fb and fs must be positive")
        L = self.fs / self.fb
        if abs(L - round(L)) > 1e-9 or round(L) < 2:
            raise ConfigurationError(
                f"fs/fb must be an integer >= 2, got {L!r}"
            )
        if self.chirp_duration <= 0:
            raise ConfigurationError("chirp_duration must be positive")
        if self.guard_duration < 0:
            raise ConfigurationError("guard_duration must be >= 0")
        if not (0.0 < self.training_fraction < 1.0):
            raise ConfigurationError("training_fraction must be in (0, 1)")
        if self.n_symbols < 1:
            raise ConfigurationError("n_symbols must be >= 1")

    @property
    def samples_per_symbol(self) -> int:
        return int(round(self.fs / self.fb))

    @property
    def chirp_samples(self) -> int:
        return int(round(self.chirp_duration * self.fs))

    @property
    def guard_samples(self) -> int:
        return int(round(self.guard_duration * self.fs))

    @property
    def n_training(self) -> int:
        return math.ceil(self.training_fraction * self.n_symbols)

    @property
    def occupied_bandwidth(self) -> float:
        return self.fb * (1 + self.pulse.rolloff)

    @classmethod
    def design(
        cls,
        fb: float,
        fc: float,
        n_symbols: int,
        target_fs: float = 12e6,
        rolloff: float = 0.25,
        span_symbols: int = 8,
        chirp_duration: float | None = None,
        guard_duration: float = 1e-3,
        training_fraction: float = 0.1,
    ) -> "FrameSpec":
        """Pick an even oversampling factor near ``target_fs`` and build a spec.

        The chirp defaults to 100 symbol periods, which keeps its
        time-bandwidth product at 100 for robust correlation; pass an explicit
        duration to override (short chirps trade sync margin for overhead).
        """
        if fb <= 0 or fc <= 0:
            raise ConfigurationError("fb and fc must be positive")
        min_fs = 2 * (fc + fb * (1 + rolloff) / 2)
        L = max(2, int(round(target_fs / fb / 2)) * 2)
        while L * fb <= min_fs:
            L += 2
        pulse = design_rrc(rolloff, span_symbols, L)
        if chirp_duration is None:
            chirp_duration = 100.0 / fb
        return cls(
            fb=fb,
            fc=fc,
            fs=L * fb,
            n_symbols=n_symbols,
            chirp_duration=chirp_duration,
            guard_duration=guard_duration,
            pulse=pulse,
            training_fraction=training_fraction,
        )

    def with_symbol_rate(self, fb: float) -> "FrameSpec":
        """Re-plan for a different symbol rate, keeping fc and durations."""
        return FrameSpec.design(
            fb=fb,
            fc=self.fc,
            n_symbols=self.n_symbols,
            target_fs=self.fs,
            rolloff=self.pulse.rolloff,
            span_symbols=self.pulse.span_symbols,
            chirp_duration=self.chirp_duration,
            guard_duration=self.guard_duration,
            training_fraction=self.training_fraction,
        )


@dataclass(frozen=True)
class SyncResult:
    """Coarse alignment produced by the chirp matched filter."""

    coarse_offset: int          # index of the first data sample
    peak_to_sidelobe_db: float
    chirp_start: int
    doppler_scale: float = 1.0


@dataclass(frozen=True)
class DopplerEstimate:
    scale: float
    at_boundary: bool
    peak_to_sidelobe_db: float


def generate_chirp(spec: FrameSpec) -> BasebandSignal:
    """Unit-peak complex baseband linear chirp sweeping -fb/2 .. +fb/2."""
    n = spec.chirp_samples
    if n < 8:
        raise ConfigurationError(
            f"chirp of {n} samples is degenerate; need at least 8"
        )
    t = np.arange(n) / spec.fs
    rate = spec.fb / spec.chirp_duration
    phase = 2 * np.pi * (-0.5 * spec.fb * t + 0.5 * rate * t**2)
    return BasebandSignal(np.exp(1j * phase), spec.fs)


def build_frame(
    chirp: BasebandSignal, spec: FrameSpec, data: BasebandSignal
) -> BasebandSignal:
    """Concatenate ``[chirp | guard zeros | data]`` at a common sample rate."""
    if chirp.sample_rate != spec.fs or (
        len(data) and data.sample_rate != spec.fs
    ):
        raise ConfigurationError(
            "chirp, guard and data must share the frame sample rate"
        )
    guard = np.zeros(spec.guard_samples, dtype=complex)
    return BasebandSignal(
        np.concatenate([chirp.samples, guard, data.samples]), spec.fs
    )


def _correlate(received: np.ndarray, template: np.ndarray) -> np.ndarray:
    return _sig.fftconvolve(received, template[::-1].conj(), mode="valid")


def _peak_and_psl(corr_mag: np.ndarray, exclusion: int) -> tuple[int, float]:
    peak = int(np.argmax(corr_mag))
    lo = max(0, peak - exclusion)
    hi = min(len(corr_mag), peak + exclusion + 1)
    sidelobes = np.concatenate([corr_mag[:lo], corr_mag[hi:]])
    if len(sidelobes) == 0 or sidelobes.max() == 0:
        return peak, np.inf
    return peak, float(20 * np.log10(corr_mag[peak] / sidelobes.max()))


def matched_filter_sync(
    received: BasebandSignal,
    chirp: BasebandSignal,
    spec: FrameSpec,
    threshold_db: float = DEFAULT_SYNC_THRESHOLD_DB,
) -> SyncResult:
    """Locate the chirp and return the coarse offset of the data segment.

    The peak-to-sidelobe ratio excludes +/- one symbol period around the
    correlation peak; below ``threshold_db`` the preamble is declared
    undetected and ``SyncError`` is raised.
    """
    if len(received) < len(chirp):
        raise ConfigurationError("received signal is shorter than the chirp")
    corr = np.abs(_correlate(received.samples, chirp.samples))
    peak, psl = _peak_and_psl(corr, spec.samples_per_symbol)
    if psl < threshold_db:
        raise SyncError(
            f"chirp not detected: peak-to-sidelobe {psl:.1f} dB "
            f"< threshold {threshold_db:.1f} dB"
        )
    offset = peak + len(chirp) + spec.guard_samples
    return SyncResult(coarse_offset=offset, peak_to_sidelobe_db=psl, chirp_start=peak)


def estimate_doppler(
    received: BasebandSignal,
    chirp: BasebandSignal,
    scale_grid: np.ndarray | None = None,
    threshold_db: float = DEFAULT_SYNC_THRESHOLD_DB,
    search_window: tuple[int, int] | None = None,
    exclusion: int | None = None,
    carrier_hz: float = 0.0,
) -> DopplerEstimate:
    """Grid-search the time scale whose chirp template correlates best.

    Each grid scale rescales the chirp template; the scale with the largest
    norm-compensated correlation peak wins.  Resolving the default 0.05%
    grid needs a chirp time-bandwidth product of roughly 40 or more; short
    preambles simply return the unscaled template as the best match.  An
    estimate landing on the grid edge is flagged ``at_boundary`` (the true
    scale may lie outside the grid).

    When the received signal was Doppler-scaled at passband and then mixed
    down by a fixed ``carrier_hz``, a scale ``a`` also leaves a residual
    carrier offset ``carrier_hz * (a - 1)``; pass the carrier so the
    templates model it (leaving it at 0 biases the search by the classic
    chirp range-Doppler coupling).

    ``search_window`` restricts the correlation to a half-open sample range
    of the received signal (an optimization for callers that already ran
    coarse sync); ``exclusion`` is the sidelobe exclusion half-width in
    samples, nominally one symbol period.
    """
    grid = DEFAULT_DOPPLER_GRID if scale_grid is None else np.asarray(scale_grid, float)
    if len(grid) < 1:
        raise ConfigurationError("scale grid must be non-empty")
    rx = received.samples
    if search_window is not None:
        lo, hi = search_window
        rx = rx[max(0, lo) : hi]
    if exclusion is None:
        exclusion = max(1, len(chirp) // 8)
    best = (-1.0, 0, 0.0)  # peak magnitude, grid index, psl
    for gi, scale in enumerate(grid):
        template = _resample_array(chirp.samples, float(scale))
        if len(template) < 8 or len(rx) < len(template):
            continue
        if carrier_hz and scale != 1.0:
            shift = carrier_hz * (scale - 1.0)
            template = template * np.exp(
                2j * np.pi * shift * np.arange(len(template)) / received.sample_rate
            )
        corr = np.abs(_correlate(rx, template))
        peak, psl = _peak_and_psl(corr, exclusion)
        # matched-filter normalization keeps templates comparable
        mag = corr[peak] / math.sqrt(float(np.real(np.vdot(template, template))))
        if mag > best[0]:
            best = (mag, gi, psl)
    if best[0] < 0:
        raise SyncError("doppler search failed: no usable template")
    _, gi, psl = best
    if psl < threshold_db:
        raise SyncError(
            f"doppler search failed: best peak-to-sidelobe {psl:.1f} dB "
            f"< threshold {threshold_db:.1f} dB"
        )
    return DopplerEstimate(
        scale=float(grid[gi]),
        at_boundary=(gi == 0 or gi == len(grid) - 1) and len(grid) > 1,
        peak_to_sidelobe_db=psl,
    )


def _interp_kernel(mu: np.ndarray) -> np.ndarray:
    """Windowed-sinc interpolation kernel rows for fractional delays mu."""
    offs = np.arange(-_RESAMPLE_HALF + 1, _RESAMPLE_HALF + 1)
    u = offs[None, :] - mu[:, None]
    win = np.i0(
        _RESAMPLE_KAISER_BETA * np.sqrt(np.clip(1 - (u / _RESAMPLE_HALF) ** 2, 0, 1))
    ) / np.i0(_RESAMPLE_KAISER_BETA)
    return np.sinc(u) * win


def _resample_array(x: np.ndarray, scale: float) -> np.ndarray:
    if len(x) == 0:
        return x.copy()
    n_out = int(len(x) / scale)
    if n_out == 0:
        return x[:0].copy()
    pad = _RESAMPLE_HALF + 1
    xp = np.concatenate([np.zeros(pad, x.dtype), x, np.zeros(pad, x.dtype)])
    out = np.empty(n_out, dtype=x.dtype)
    for start in range(0, n_out, _RESAMPLE_CHUNK):
        idx = np.arange(start, min(start + _RESAMPLE_CHUNK, n_out))
        t = idx * scale
        k = np.floor(t).astype(np.int64)
        mu = t - k
        exact = mu == 0.0
        rows = xp[(k + pad)[:, None] + np.arange(-_RESAMPLE_HALF + 1, _RESAMPLE_HALF + 1)]
        kern = _interp_kernel(mu)
        vals = (rows * kern).sum(axis=1)
        # integer positions are exact by construction; avoid rounding fuzz
        vals[exact] = xp[k[exact] + pad]
        out[idx] = vals if np.iscomplexobj(x) else vals.real
    return out


def resample(signal, scale: float):
    """Time-rescale a signal: output[n] ~ input(n * scale).

    Uses a 16-tap Kaiser-windowed-sinc interpolator; the output length is
    ``floor(len / scale)`` and the sample rate is unchanged (the content,
    not the clock, is rescaled).
    """
    if not (0.9 <= scale <= 1.1):
        raise ConfigurationError(f"resample scale {scale} outside [0.9, 1.1]")
    if isinstance(signal, BasebandSignal):
        return BasebandSignal(_resample_array(signal.samples, scale), signal.sample_rate)
    if isinstance(signal, PassbandSignal):
        return PassbandSignal(_resample_array(signal.samples, scale), signal.sample_rate)
    return _resample_array(np.asarray(signal), scale)

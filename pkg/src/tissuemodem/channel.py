"""Propagation simulation: FIR multipath, Doppler time scaling, AWGN.

Channels are stored and applied at passband (real taps).  Taps are peak
normalized at load time; absolute channel gain is deliberately discarded
because noise is calibrated against the received (post-channel) signal
energy per bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal as _sig

from .exceptions import CalibrationError, ConfigurationError, TapFileError
from .framing import _resample_array, resample
from .modem import PassbandSignal

TAP_FILE_MAGIC = "# tissuemodem-fir v1"


@dataclass(frozen=True)
class ChannelModel:
    """Real FIR impulse response at a stated sample rate.

    Taps are normalized so the largest |tap| is 1.
    """

    taps: np.ndarray
    tap_sample_rate: float
    label: str = ""
    doppler_scale: float = 1.0

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=float)
        if taps.ndim != 1 or len(taps) < 1:
            raise ConfigurationError("channel needs at least one tap")
        if not np.all(np.isfinite(taps)):
            raise ConfigurationError("channel taps must be finite")
        if self.tap_sample_rate <= 0:
            raise ConfigurationError("tap_sample_rate must be positive")
        peak = np.abs(taps).max()
        if peak == 0:
            raise ConfigurationError("channel taps are all zero")
        object.__setattr__(self, "taps", taps / peak)

    @property
    def delay_spread_s(self) -> float:
        nz = np.nonzero(self.taps)[0]
        return float((nz[-1] - nz[0]) / self.tap_sample_rate)


@dataclass(frozen=True)
class NoiseSpec:
    """Per-bit SNR target for the AWGN stage.

    ``eb_n0_db = inf`` is the no-noise sentinel.  ``rng_seed=None`` draws a
    fresh entropy seed per call; the Monte-Carlo harness always passes an
    explicit per-trial generator instead.
    """

    eb_n0_db: float
    rng_seed: int | None = None

    def __post_init__(self):
        if math.isnan(self.eb_n0_db):
            raise ConfigurationError("eb_n0_db must not be NaN")


@dataclass(frozen=True)
class SynthChannelSpec:
    """Sparse-echo synthetic channel: direct path plus decaying echoes."""

    n_echoes: int
    max_delay_s: float
    decay_db_per_echo: float = 6.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_echoes < 1:
            raise ConfigurationError("n_echoes must be >= 1")
        if self.max_delay_s <= 0:
            raise ConfigurationError("max_delay_s must be positive")


def load_channel(path) -> ChannelModel:
    """Read a tap file (see format notes in the README).

    Line 1 must be the magic ``# tissuemodem-fir v1``; line 2 ``rate_hz=``;
    line 3 ``label=``; every further non-empty line is one real tap.
    Parse errors name the offending line number.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != TAP_FILE_MAGIC:
        raise TapFileError(
            f"{path}: line 1: expected header {TAP_FILE_MAGIC!r}, "
            f"got {(lines[0].strip() if lines else '<empty file>')!r}"
        )
    if len(lines) < 2 or not lines[1].strip().startswith("rate_hz="):
        raise TapFileError(f"{path}: line 2: expected 'rate_hz=<float>'")
    try:
        rate = float(lines[1].strip().split("=", 1)[1])
    except ValueError:
        raise TapFileError(f"{path}: line 2: rate_hz is not a number") from None
    if rate <= 0:
        raise TapFileError(f"{path}: line 2: rate_hz must be positive")
    if len(lines) < 3 or not lines[2].strip().startswith("label="):
        raise TapFileError(f"{path}: line 3: expected 'label=<string>'")
    label = lines[2].strip().split("=", 1)[1]
    taps = []
    for ln, raw in enumerate(lines[3:], start=4):
        text = raw.strip()
        if not text:
            continue
        try:
            taps.append(float(text))
        except ValueError:
            raise TapFileError(f"{path}: line {ln}: non-numeric tap {text!r}") from None
    if not taps:
        raise TapFileError(f"{path}: no taps found after the header")
    return ChannelModel(taps=np.array(taps), tap_sample_rate=rate, label=label)


def save_channel(model: ChannelModel, path) -> None:
    """Write a ChannelModel in the tap-file format."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TAP_FILE_MAGIC + "\n")
        fh.write(f"rate_hz={float(model.tap_sample_rate)!r}\n")
        fh.write(f"label={model.label}\n")
        for tap in model.taps:
            fh.write(f"{float(tap)!r}\n")


def synth_channel(spec: SynthChannelSpec, sample_rate: float) -> ChannelModel:
    """Generate a sparse multipath channel, deterministic for a given seed.

    The direct path sits at delay zero with amplitude 1; the remaining
    echoes land at uniform-random delays up to ``max_delay_s`` (sorted
    ascending) with alternating signs, each ``decay_db_per_echo`` weaker
    than the previous.
    """
    rng = np.random.default_rng(spec.rng_seed)
    max_delay = int(round(spec.max_delay_s * sample_rate))
    taps = np.zeros(max_delay + 1)
    taps[0] = 1.0
    if spec.n_echoes > 1:
        delays = np.sort(rng.integers(1, max_delay + 1, size=spec.n_echoes - 1))
        amp = 10 ** (-spec.decay_db_per_echo / 20.0)
        for i, d in enumerate(delays):
            taps[d] += (-1) ** (i + 1) * amp ** (i + 1)
    n_last = np.nonzero(taps)[0][-1]
    label = f"synth-{spec.n_echoes}-echo"
    return ChannelModel(taps=taps[: n_last + 1], tap_sample_rate=sample_rate, label=label)


def apply_channel(
    x: PassbandSignal, ch: ChannelModel, resample_taps: bool = False
) -> PassbandSignal:
    """Full linear convolution with the channel impulse response.

    The tap sample rate must match the signal's; set ``resample_taps`` to
    interpolate the taps onto the signal rate first.
    """
    taps = ch.taps
    if ch.tap_sample_rate != x.sample_rate:
        if not resample_taps:
            raise ConfigurationError(
                f"channel taps at {ch.tap_sample_rate:g} Hz do not match the "
                f"signal rate {x.sample_rate:g} Hz (pass resample_taps=True)"
            )
        if ch.tap_sample_rate > x.sample_rate:
            raise ConfigurationError(
                "tap rate above the signal rate: decimating taps would alias; "
                "run the simulation at the tap rate instead"
            )
        taps = _resample_array(ch.taps, ch.tap_sample_rate / x.sample_rate)
    out = _sig.fftconvolve(x.samples, taps, mode="full")
    return PassbandSignal(out, x.sample_rate)


def add_awgn(
    x: PassbandSignal,
    n_bits: int,
    noise: NoiseSpec,
    rng: np.random.Generator | None = None,
) -> PassbandSignal:
    """Add white Gaussian noise calibrated to a per-bit SNR.

    Eb is the continuous-time energy of ``x`` divided by ``n_bits``; the
    per-sample noise variance is ``N0 * fs / 2`` so the noise spectral
    density over the sampled band is N0/2.
    """
    if n_bits <= 0:
        raise ConfigurationError("n_bits must be positive")
    if len(x) == 0:
        raise CalibrationError("cannot calibrate noise against an empty signal")
    if math.isinf(noise.eb_n0_db) and noise.eb_n0_db > 0:
        return x
    energy = x.energy
    if energy == 0:
        raise CalibrationError("cannot calibrate noise against a zero-energy signal")
    eb = energy / n_bits
    n0 = eb / 10 ** (noise.eb_n0_db / 10.0)
    sigma = math.sqrt(n0 * x.sample_rate / 2.0)
    if rng is None:
        rng = np.random.default_rng(noise.rng_seed)
    return PassbandSignal(x.samples + rng.normal(0.0, sigma, len(x)), x.sample_rate)


def noise_sigma(x: PassbandSignal, n_bits: int, eb_n0_db: float) -> float:
    """Per-sample noise standard deviation add_awgn would use."""
    eb = x.energy / n_bits
    return math.sqrt(eb / 10 ** (eb_n0_db / 10.0) * x.sample_rate / 2.0)


def apply_doppler(x: PassbandSignal, scale: float) -> PassbandSignal:
    """Time-rescale a passband signal (motion-induced compression/dilation)."""
    if not (0.99 <= scale <= 1.01):
        raise ConfigurationError(f"doppler scale {scale} outside [0.99, 1.01]")
    if scale == 1.0:
        return x
    return resample(x, scale)

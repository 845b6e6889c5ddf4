"""Monte-Carlo experiment orchestration.

A trial transmits one packet of random bits through the full chain
(map, shape, frame, upconvert, channel, Doppler, AWGN, downconvert, sync,
Doppler correction, equalize, demap) and counts bit errors over the
decision-directed segment.  Batches average trials; sweeps scan
(M, fb, Eb/N0) grids and evaluate the BER-below-threshold success rule.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import modem
from .channel import (
    ChannelModel,
    NoiseSpec,
    SynthChannelSpec,
    add_awgn,
    apply_channel,
    apply_doppler,
    synth_channel,
)
from .equalizer import (
    EqualizerConfig,
    EqualizerOutput,
    equalize,
    output_snr_db,
)
from .exceptions import ConfigurationError, EqualizerDivergence, SyncError
from .framing import (
    DEFAULT_DOPPLER_GRID,
    FrameSpec,
    build_frame,
    estimate_doppler,
    generate_chirp,
    matched_filter_sync,
    resample,
)
from .modem import build_constellation, data_rate, demap, map_bits

# stream tags keep per-trial rng draws independent
_STREAM_BITS = 0
_STREAM_NOISE = 1

# below this chirp time-bandwidth product the 0.05%-step scale search cannot
# discriminate and would resample on noise, so it is skipped unless the
# config supplies an explicit grid
MIN_DOPPLER_TIME_BANDWIDTH = 40.0

BER_SUCCESS_THRESHOLD = 1e-4
SNR_SUCCESS_LIMIT_DB = 30.0
MIN_CONVERGED_FRACTION = 0.95


@dataclass(frozen=True)
class TrialConfig:
    """Everything one Monte-Carlo grid point needs."""

    frame: FrameSpec
    order: int
    channel: ChannelModel | SynthChannelSpec
    noise: NoiseSpec
    eq: EqualizerConfig = field(default_factory=EqualizerConfig)
    n_trials: int = 100
    rng_seed: int = 0
    equalize_enabled: bool = True
    sync_mode: str = "chirp"          # "chirp" | "known"
    sync_threshold_db: float = 6.0
    doppler_grid: tuple | None = None  # None -> framing.DEFAULT_DOPPLER_GRID
    rx_freq_offset_hz: float = 0.0
    rx_phase_offset_rad: float = 0.0
    resample_channel_taps: bool = False
    keep_traces: bool = False

    def __post_init__(self):
        if self.n_trials < 1:
            raise ConfigurationError("n_trials must be >= 1")
        if self.order not in modem.SUPPORTED_ORDERS:
            raise ConfigurationError(f"unsupported order {self.order}")
        if self.sync_mode not in ("chirp", "known"):
            raise ConfigurationError("sync_mode must be 'chirp' or 'known'")
        L = self.frame.samples_per_symbol
        K = self.eq.fractional_factor
        if self.equalize_enabled and L % K:
            raise ConfigurationError(
                f"oversampling factor {L} not divisible by fractional factor {K}"
            )
        if self.equalize_enabled and self.frame.n_training < self.eq.n_taps:
            raise ConfigurationError(
                f"training too short: {self.frame.n_training} symbols for "
                f"{self.eq.n_taps} equalizer taps"
            )
        if self.sync_mode == "known" and self._doppler_scale() != 1.0:
            raise ConfigurationError("sync_mode='known' cannot correct Doppler")

    def _doppler_scale(self) -> float:
        return getattr(self.channel, "doppler_scale", 1.0)

    @property
    def data_rate_bps(self) -> float:
        return data_rate(self.frame.fb, self.order)


@dataclass(frozen=True)
class SingleTrialResult:
    trial_index: int
    converged: bool
    failure: str | None
    bit_errors: int
    bits_tested: int
    output_snr_db: float
    sync_offset_error: int | None
    doppler_scale_est: float | None
    mse_trace: np.ndarray | None = None
    equalizer_output: EqualizerOutput | None = None

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_tested if self.bits_tested else math.nan


@dataclass(frozen=True)
class TrialReport:
    """Aggregate of ``n_trials`` trials at one grid point."""

    order: int
    fb: float
    eb_n0_db: float
    n_trials: int
    n_converged: int
    bit_errors: int
    bits_tested: int
    output_snr_db: float
    data_rate_bps: float
    trials: tuple[SingleTrialResult, ...]

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_tested if self.bits_tested else math.nan

    @property
    def converged(self) -> bool:
        return self.n_converged >= MIN_CONVERGED_FRACTION * self.n_trials


@dataclass(frozen=True)
class SuccessResult:
    success: bool
    min_snr_db: float | None


def resolve_channel(cfg: TrialConfig) -> ChannelModel:
    """Materialize the trial channel at the frame sample rate."""
    if isinstance(cfg.channel, ChannelModel):
        ch = cfg.channel
        if len(ch.taps) == 1 and ch.tap_sample_rate != cfg.frame.fs:
            # an impulse is rate independent; re-rate so fb sweeps compose
            return replace(ch, tap_sample_rate=cfg.frame.fs)
        return ch
    return synth_channel(cfg.channel, cfg.frame.fs)


def _trial_rng(seed: int, trial_index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(trial_index, stream))
    )


def transmit_frame(cfg: TrialConfig, symbols) -> tuple:
    """Shape, frame and upconvert one packet of symbols.

    Returns ``(passband, chirp)``; the chirp is reused by the receiver as
    the matched-filter template.
    """
    spec = cfg.frame
    chirp = generate_chirp(spec)
    data_bb = modem.shape(symbols, spec.pulse, sample_rate=spec.fs)
    frame = build_frame(chirp, spec, data_bb)
    passband = modem.upconvert(frame, spec.fc, spec.occupied_bandwidth)
    return passband, chirp


def receive_aligned_baseband(cfg: TrialConfig, rx_passband, chirp, channel: ChannelModel):
    """Downconvert, synchronize and Doppler-correct a received frame.

    Returns ``(baseband, data_start_index, diagnostics)`` where
    ``data_start_index`` points at the first data sample (coarse offset plus
    nothing else; the pulse group delay is applied by the caller).
    """
    spec = cfg.frame
    bb, g_lp = modem.downconvert(rx_passband, spec.fc, spec.occupied_bandwidth / 2)
    if cfg.rx_freq_offset_hz or cfg.rx_phase_offset_rad:
        n = np.arange(len(bb))
        rot = np.exp(
            1j * (2 * np.pi * cfg.rx_freq_offset_hz * n / spec.fs + cfg.rx_phase_offset_rad)
        )
        bb = modem.BasebandSignal(bb.samples * rot, spec.fs)
    true_start = (
        spec.chirp_samples
        + spec.guard_samples
        + int(np.argmax(np.abs(channel.taps)))
        + g_lp
    )
    diagnostics = {"doppler_scale_est": None, "sync_offset_error": None}
    if cfg.sync_mode == "known":
        return bb, true_start, diagnostics
    sync = matched_filter_sync(bb, chirp, spec, threshold_db=cfg.sync_threshold_db)
    if cfg.doppler_grid is not None:
        grid = np.asarray(cfg.doppler_grid, float)
    elif spec.chirp_duration * spec.fb >= MIN_DOPPLER_TIME_BANDWIDTH:
        grid = DEFAULT_DOPPLER_GRID
    else:
        grid = np.array([1.0])
    if len(grid) > 1 or grid[0] != 1.0:
        margin = len(chirp) + int(0.02 * sync.chirp_start) + 64
        est = estimate_doppler(
            bb,
            chirp,
            scale_grid=grid,
            threshold_db=cfg.sync_threshold_db,
            search_window=(sync.chirp_start - margin, sync.chirp_start + len(chirp) + margin),
            exclusion=spec.samples_per_symbol,
            carrier_hz=spec.fc,
        )
        diagnostics["doppler_scale_est"] = est.scale
        if est.scale != 1.0:
            bb = resample(bb, 1.0 / est.scale)
            # a passband time scale also moved the carrier; undo the part the
            # resample leaves behind so only grid quantization reaches the PLL
            residual_hz = spec.fc * (1.0 - 1.0 / est.scale)
            n = np.arange(len(bb))
            bb = modem.BasebandSignal(
                bb.samples * np.exp(-2j * np.pi * residual_hz * n / spec.fs), spec.fs
            )
            sync = matched_filter_sync(bb, chirp, spec, threshold_db=cfg.sync_threshold_db)
    diagnostics["sync_offset_error"] = sync.coarse_offset - true_start
    return bb, sync.coarse_offset, diagnostics


def decode_symbols(cfg: TrialConfig, bb, data_start: int, training_symbols, constellation):
    """Equalize (or matched-filter and slice) the aligned data segment.

    Returns ``(decided_symbols, EqualizerOutput | None)``.
    """
    spec = cfg.frame
    L = spec.samples_per_symbol
    g_p = spec.pulse.group_delay
    N = spec.n_symbols
    if cfg.equalize_enabled:
        K = cfg.eq.fractional_factor
        step = L // K
        start = data_start + g_p
        end = start + (K * N + cfg.eq.n_ff + 2) * step
        samples = bb.samples
        if end > len(samples):
            samples = np.concatenate([samples, np.zeros(end - len(samples), complex)])
        rx2 = samples[start:end:step]
        out = equalize(rx2, training_symbols, constellation, cfg.eq, n_symbols=N)
        return out.decided_symbols, out
    mf = modem.matched_filter(bb, spec.pulse)
    idx = data_start + 2 * g_p + L * np.arange(N)
    samples = mf.samples
    if idx[-1] >= len(samples):
        samples = np.concatenate([samples, np.zeros(idx[-1] + 1 - len(samples), complex)])
    cursors = samples[idx]
    decided_idx = modem.decide(cursors, constellation)
    decided = constellation.points[decided_idx]
    n_train = len(training_symbols)
    snr = output_snr_db(cursors[n_train:], decided[n_train:]) if n_train < N else math.nan
    pseudo = EqualizerOutput(
        soft_symbols=cursors,
        decided_symbols=decided,
        mse_trace=np.abs(decided - cursors) ** 2,
        output_snr_db=snr,
        theta_trace=np.zeros(N),
        n_training=n_train,
        state=None,
    )
    return decided, pseudo


def run_trial(cfg: TrialConfig, trial_index: int) -> SingleTrialResult:
    """Run one end-to-end trial, deterministic in (rng_seed, trial_index)."""
    spec = cfg.frame
    constellation = build_constellation(cfg.order)
    k = constellation.bits_per_symbol
    chan = resolve_channel(cfg)
    bits_rng = _trial_rng(cfg.rng_seed, trial_index, _STREAM_BITS)
    bits = bits_rng.integers(0, 2, spec.n_symbols * k, dtype=np.uint8)
    symbols = map_bits(bits, constellation)
    passband, chirp = transmit_frame(cfg, symbols)
    rx = apply_channel(passband, chan, resample_taps=cfg.resample_channel_taps)
    if chan.doppler_scale != 1.0:
        rx = apply_doppler(rx, chan.doppler_scale)
    noise_seed = cfg.noise.rng_seed if cfg.noise.rng_seed is not None else cfg.rng_seed
    rx = add_awgn(
        rx,
        n_bits=spec.n_symbols * k,
        noise=cfg.noise,
        rng=_trial_rng(noise_seed, trial_index, _STREAM_NOISE),
    )
    n_train = spec.n_training
    try:
        bb, data_start, diag = receive_aligned_baseband(cfg, rx, chirp, chan)
        decided, out = decode_symbols(
            cfg, bb, data_start, symbols[:n_train], constellation
        )
    except (SyncError, EqualizerDivergence) as exc:
        return SingleTrialResult(
            trial_index=trial_index,
            converged=False,
            failure=f"{type(exc).__name__}: {exc}",
            bit_errors=0,
            bits_tested=0,
            output_snr_db=math.nan,
            sync_offset_error=None,
            doppler_scale_est=None,
        )
    rx_bits = demap(decided[n_train:], constellation)
    tx_bits = bits[n_train * k :]
    errors = int(np.count_nonzero(rx_bits != tx_bits))
    return SingleTrialResult(
        trial_index=trial_index,
        converged=True,
        failure=None,
        bit_errors=errors,
        bits_tested=len(tx_bits),
        output_snr_db=out.output_snr_db,
        sync_offset_error=diag["sync_offset_error"],
        doppler_scale_est=diag["doppler_scale_est"],
        mse_trace=out.mse_trace if cfg.keep_traces else None,
        equalizer_output=out if cfg.keep_traces else None,
    )


@dataclass(frozen=True)
class SyncTrialResult:
    trial_index: int
    detected: bool
    offset_error: int | None
    peak_to_sidelobe_db: float | None
    true_delay: int


def sync_trial(cfg: TrialConfig, trial_index: int, max_delay_samples: int = 4096) -> SyncTrialResult:
    """One sync-only trial: random integer arrival delay, then chirp detection.

    Measures the coarse-offset error of the matched-filter synchronizer
    against the known composite delay (inserted silence + channel peak +
    receive-filter group delay).
    """
    spec = cfg.frame
    constellation = build_constellation(cfg.order)
    k = constellation.bits_per_symbol
    chan = resolve_channel(cfg)
    bits_rng = _trial_rng(cfg.rng_seed, trial_index, _STREAM_BITS)
    bits = bits_rng.integers(0, 2, spec.n_symbols * k, dtype=np.uint8)
    symbols = map_bits(bits, constellation)
    passband, chirp = transmit_frame(cfg, symbols)
    delay = int(bits_rng.integers(0, max_delay_samples + 1))
    delayed = modem.PassbandSignal(
        np.concatenate([np.zeros(delay), passband.samples]), spec.fs
    )
    rx = apply_channel(delayed, chan, resample_taps=cfg.resample_channel_taps)
    noise_seed = cfg.noise.rng_seed if cfg.noise.rng_seed is not None else cfg.rng_seed
    rx = add_awgn(
        rx,
        n_bits=spec.n_symbols * k,
        noise=cfg.noise,
        rng=_trial_rng(noise_seed, trial_index, _STREAM_NOISE),
    )
    bb, g_lp = modem.downconvert(rx, spec.fc, spec.occupied_bandwidth / 2)
    true_start = (
        delay
        + spec.chirp_samples
        + spec.guard_samples
        + int(np.argmax(np.abs(chan.taps)))
        + g_lp
    )
    try:
        sync = matched_filter_sync(bb, chirp, spec, threshold_db=cfg.sync_threshold_db)
    except SyncError:
        return SyncTrialResult(
            trial_index=trial_index,
            detected=False,
            offset_error=None,
            peak_to_sidelobe_db=None,
            true_delay=delay,
        )
    return SyncTrialResult(
        trial_index=trial_index,
        detected=True,
        offset_error=int(sync.coarse_offset - true_start),
        peak_to_sidelobe_db=sync.peak_to_sidelobe_db,
        true_delay=delay,
    )


def run_batch(cfg: TrialConfig) -> TrialReport:
    """Average ``cfg.n_trials`` independent trials at one grid point."""
    trials = [run_trial(cfg, i) for i in range(cfg.n_trials)]
    converged = [t for t in trials if t.converged]
    snrs = [t.output_snr_db for t in converged if math.isfinite(t.output_snr_db)]
    return TrialReport(
        order=cfg.order,
        fb=cfg.frame.fb,
        eb_n0_db=cfg.noise.eb_n0_db,
        n_trials=cfg.n_trials,
        n_converged=len(converged),
        bit_errors=sum(t.bit_errors for t in converged),
        bits_tested=sum(t.bits_tested for t in converged),
        output_snr_db=float(np.mean(snrs)) if snrs else math.nan,
        data_rate_bps=cfg.data_rate_bps,
        trials=tuple(trials),
    )


@dataclass(frozen=True)
class SweepSeries:
    """All Eb/N0 points for one (order, fb) pair, plus the success verdict."""

    order: int
    fb: float
    reports: tuple[TrialReport, ...]
    success: bool
    min_snr_db: float | None


@dataclass(frozen=True)
class SweepResult:
    series: tuple[SweepSeries, ...]


def success_criterion(
    series,
    ber_threshold: float = BER_SUCCESS_THRESHOLD,
    snr_limit_db: float = SNR_SUCCESS_LIMIT_DB,
) -> SuccessResult:
    """Decide whether a BER-vs-Eb/N0 series clears the bar.

    Success means some point with Eb/N0 strictly below ``snr_limit_db``
    reached BER below ``ber_threshold``; points where fewer than 95% of
    trials converged do not count.  ``series`` is a sequence of TrialReports
    or (eb_n0_db, ber) pairs sorted by Eb/N0.
    """
    if len(series) == 0:
        raise ConfigurationError("empty BER series")
    qualifying = []
    for item in series:
        if isinstance(item, TrialReport):
            eb, ber, ok = item.eb_n0_db, item.ber, item.converged
        else:
            eb, ber = item
            ok = True
        if ok and eb < snr_limit_db and ber < ber_threshold:
            qualifying.append(eb)
    if not qualifying:
        return SuccessResult(success=False, min_snr_db=None)
    return SuccessResult(success=True, min_snr_db=min(qualifying))


def sweep(
    base_cfg: TrialConfig,
    orders=None,
    symbol_rates=None,
    eb_n0_dbs=None,
) -> SweepResult:
    """Scan a (M, fb, Eb/N0) grid, one TrialReport per point.

    Grid axes default to the base configuration's single value.  Individual
    trial failures are recorded in the reports; the sweep always completes.
    """
    orders = list(orders) if orders is not None else [base_cfg.order]
    symbol_rates = (
        list(symbol_rates) if symbol_rates is not None else [base_cfg.frame.fb]
    )
    eb_n0_dbs = (
        list(eb_n0_dbs) if eb_n0_dbs is not None else [base_cfg.noise.eb_n0_db]
    )
    if not orders or not symbol_rates or not eb_n0_dbs:
        raise ConfigurationError("sweep grid axes must be non-empty")
    all_series = []
    for order in orders:
        for fb in symbol_rates:
            frame = (
                base_cfg.frame
                if fb == base_cfg.frame.fb
                else base_cfg.frame.with_symbol_rate(fb)
            )
            reports = []
            for eb in sorted(eb_n0_dbs):
                cfg = replace(
                    base_cfg,
                    frame=frame,
                    order=order,
                    noise=replace(base_cfg.noise, eb_n0_db=eb),
                )
                reports.append(run_batch(cfg))
            verdict = success_criterion(reports)
            all_series.append(
                SweepSeries(
                    order=order,
                    fb=fb,
                    reports=tuple(reports),
                    success=verdict.success,
                    min_snr_db=verdict.min_snr_db,
                )
            )
    return SweepResult(series=tuple(all_series))


def _fmt(x) -> str:
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return f"{x:.12g}"
    return str(x)


def write_ber_series_csv(reports, path) -> None:
    """Columns: eb_n0_db, ber, trials, converged."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["eb_n0_db", "ber", "trials", "converged"])
        for r in reports:
            wr.writerow([_fmt(r.eb_n0_db), _fmt(r.ber), r.n_trials, r.n_converged])


def write_summary_csv(result: SweepResult, path) -> None:
    """One row per grid point; series-level success repeated on its rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(
            [
                "order", "fb_hz", "eb_n0_db", "data_rate_bps", "ber",
                "bit_errors", "bits_tested", "trials", "converged_trials",
                "output_snr_db", "series_success", "series_min_snr_db",
            ]
        )
        for s in sorted(result.series, key=lambda s: (s.order, s.fb)):
            for r in s.reports:
                wr.writerow(
                    [
                        r.order, _fmt(r.fb), _fmt(r.eb_n0_db),
                        _fmt(r.data_rate_bps), _fmt(r.ber), r.bit_errors,
                        r.bits_tested, r.n_trials, r.n_converged,
                        _fmt(r.output_snr_db), int(s.success),
                        _fmt(s.min_snr_db) if s.min_snr_db is not None else "",
                    ]
                )


def write_mse_trace_csv(trace, path) -> None:
    """Columns: symbol_index, mse."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["symbol_index", "mse"])
        for i, v in enumerate(np.asarray(trace, float)):
            wr.writerow([i, _fmt(float(v))])


def write_constellation_csv(output: EqualizerOutput, path) -> None:
    """Columns: re, im, decided_re, decided_im."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["re", "im", "decided_re", "decided_im"])
        for y, d in zip(output.soft_symbols, output.decided_symbols):
            wr.writerow([_fmt(y.real), _fmt(y.imag), _fmt(d.real), _fmt(d.imag)])


def emit_csv(obj, path) -> None:
    """Write any harness product as CSV (dispatch on type)."""
    if isinstance(obj, SweepResult):
        write_summary_csv(obj, path)
    elif isinstance(obj, EqualizerOutput):
        write_constellation_csv(obj, path)
    elif isinstance(obj, (list, tuple)) and obj and isinstance(obj[0], TrialReport):
        write_ber_series_csv(obj, path)
    elif isinstance(obj, (list, tuple, np.ndarray)):
        write_mse_trace_csv(obj, path)
    else:
        raise ConfigurationError(f"do not know how to emit {type(obj).__name__} as CSV")

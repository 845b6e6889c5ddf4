"""Fractionally-spaced decision-feedback equalizer with carrier tracking.

The feedforward section runs at a fraction (default T/2) of the symbol
period and is de-rotated by a second-order decision-directed phase loop
before filtering; the feedback section subtracts ISI re-synthesized from
past decisions at symbol spacing.  Both sections adapt jointly with
exponentially-weighted RLS over the concatenated weight vector.  Feedback
taps can be pruned to a sparse active set once training ends.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import erfc

from .exceptions import ConfigurationError, EqualizerDivergence
from .modem import BasebandSignal, Constellation

# divergence checks ignore MSE below this (relative to unit symbol energy),
# so noise-free runs near machine precision never trip the guard
_DIVERGENCE_MSE_FLOOR = 1e-6
_DIVERGENCE_WINDOW = 200

_PRUNE_OFF = 0
_PRUNE_KEEP_TOP_N = 1
_PRUNE_MAGNITUDE_FLOOR = 2


@dataclass(frozen=True)
class SparsePolicy:
    """Feedback-tap pruning rule applied once, after training."""

    kind: str = "off"
    n: int = 0
    ratio: float = 0.0

    @classmethod
    def off(cls) -> "SparsePolicy":
        return cls("off")

    @classmethod
    def keep_top_n(cls, n: int) -> "SparsePolicy":
        if n < 1:
            raise ConfigurationError("keep_top_n needs n >= 1")
        return cls("keep_top_n", n=n)

    @classmethod
    def magnitude_floor(cls, ratio: float) -> "SparsePolicy":
        if not (0.0 < ratio <= 1.0):
            raise ConfigurationError("magnitude_floor ratio must be in (0, 1]")
        return cls("magnitude_floor", ratio=ratio)

    @classmethod
    def parse(cls, text: str) -> "SparsePolicy":
        """Parse 'off', 'keep_top_n:<n>' or 'magnitude_floor:<ratio>'."""
        if text == "off":
            return cls.off()
        kind, _, arg = text.partition(":")
        if kind == "keep_top_n" and arg:
            return cls.keep_top_n(int(arg))
        if kind == "magnitude_floor" and arg:
            return cls.magnitude_floor(float(arg))
        raise ConfigurationError(f"unknown sparse policy {text!r}")

    def _code(self) -> int:
        return {"off": _PRUNE_OFF, "keep_top_n": _PRUNE_KEEP_TOP_N,
                "magnitude_floor": _PRUNE_MAGNITUDE_FLOOR}[self.kind]


@dataclass(frozen=True)
class EqualizerConfig:
    """DFE dimensions, RLS forgetting, PLL gains and pruning policy.

    ``pll_k2`` defaults to ``pll_k1 / 20``; set both gains to zero to
    disable carrier tracking entirely.  ``prune_after_symbols=None`` prunes
    at the end of training (when a sparse policy is active).
    ``divergence_factor`` may be ``inf`` to disable the blow-up guard.
    """

    n_ff: int = 18
    n_fb: int = 100
    fractional_factor: int = 2
    rls_lambda: float = 0.997
    rls_delta: float = 1e-3
    pll_k1: float = 1e-2
    pll_k2: float | None = None
    sparse_policy: SparsePolicy = field(default_factory=SparsePolicy.off)
    prune_after_symbols: int | None = None
    divergence_factor: float = 10.0

    def __post_init__(self):
        if self.n_ff < 1:
            raise ConfigurationError("n_ff must be >= 1")
        if self.n_fb < 0:
            raise ConfigurationError("n_fb must be >= 0")
        if not (0.9 < self.rls_lambda <= 1.0):
            raise ConfigurationError("rls_lambda must be in (0.9, 1]")
        if self.rls_delta <= 0:
            raise ConfigurationError("rls_delta must be positive")
        if self.fractional_factor < 1:
            raise ConfigurationError("fractional_factor must be >= 1")
        if self.pll_k2 is None:
            object.__setattr__(self, "pll_k2", self.pll_k1 / 20.0)
        if self.sparse_policy.kind == "keep_top_n" and self.sparse_policy.n > self.n_fb:
            raise ConfigurationError(
                f"keep_top_n({self.sparse_policy.n}) exceeds n_fb={self.n_fb}"
            )

    @property
    def n_taps(self) -> int:
        return self.n_ff + self.n_fb


@dataclass
class DfeState:
    """Adaptive state after (or during) equalization of one packet."""

    ff_weights: np.ndarray
    fb_weights: np.ndarray
    inv_corr: np.ndarray
    carrier_phase: float
    phase_integrator: float
    decision_history: np.ndarray
    active_tap_mask: np.ndarray  # over [ff | fb]; pruned taps are False

    @property
    def active_feedback(self) -> int:
        return int(self.active_tap_mask[len(self.ff_weights):].sum())


@dataclass(frozen=True)
class EqualizerOutput:
    """Per-symbol traces plus the final adaptive state.

    ``state`` is None for outputs produced by non-adaptive receive paths.
    """

    soft_symbols: np.ndarray
    decided_symbols: np.ndarray
    mse_trace: np.ndarray
    output_snr_db: float
    theta_trace: np.ndarray
    n_training: int
    state: DfeState | None


def output_snr_db(soft: np.ndarray, decided: np.ndarray) -> float:
    """10 log10( mean|d|^2 / mean|d - y|^2 ) over the given segment."""
    err = np.mean(np.abs(decided - soft) ** 2)
    if err == 0:
        return math.inf
    return float(10 * np.log10(np.mean(np.abs(decided) ** 2) / err))


@njit(cache=True)
def _dfe_loop(
    rx2, pre, n_symbols, n_train, training, points,
    n_ff, n_fb, K, lam, k1, k2, theta0, pll_start,
    w, P, active,
    prune_kind, prune_n, prune_ratio, prune_at,
    div_factor,
):  # pragma: no cover - exercised via equalize()
    m = n_ff + n_fb
    c_off = n_ff // 2
    n_pts = len(points)
    v = np.zeros(m, dtype=np.complex128)
    dhist = np.zeros(max(n_fb, 1), dtype=np.complex128)
    soft = np.zeros(n_symbols, dtype=np.complex128)
    decided = np.zeros(n_symbols, dtype=np.complex128)
    mse = np.zeros(n_symbols)
    theta_trace = np.zeros(n_symbols)
    window = np.zeros(_DIVERGENCE_WINDOW)
    win_sum = 0.0
    win_fill = 0
    win_pos = 0
    baseline = -1.0
    theta = theta0
    integ = 0.0
    diverged_at = -1
    for k in range(n_symbols):
        base = pre + K * k
        rot = complex(math.cos(theta), -math.sin(theta))
        for i in range(n_ff):
            v[i] = rx2[base + c_off - i] * rot
        for j in range(n_fb):
            v[n_ff + j] = -dhist[j]
        y = 0j
        for i in range(m):
            y += w[i].conjugate() * v[i]
        if k < n_train:
            d = training[k]
        else:
            bi = 0
            bd = 1e300
            for q in range(n_pts):
                dre = points[q].real - y.real
                dim = points[q].imag - y.imag
                dd = dre * dre + dim * dim
                if dd < bd:
                    bd = dd
                    bi = q
            d = points[bi]
        e = d - y
        if (k1 != 0.0 or k2 != 0.0) and k >= pll_start:
            dmag2 = d.real * d.real + d.imag * d.imag
            phi = (y * d.conjugate()).imag / dmag2
            integ += k2 * phi
            theta += k1 * phi + integ
        pi_v = np.dot(P, v)
        denom = lam
        for i in range(m):
            denom += (v[i].conjugate() * pi_v[i]).real
        inv_lam = 1.0 / lam
        # rank-1 update of the upper triangle, mirrored: keeping P exactly
        # Hermitian suppresses the slow numerical instability of long RLS runs
        for a in range(m):
            ga = pi_v[a] / denom
            diag = (P[a, a] - ga * pi_v[a].conjugate()) * inv_lam
            P[a, a] = complex(diag.real, 0.0)
            for b in range(a + 1, m):
                val = (P[a, b] - ga * pi_v[b].conjugate()) * inv_lam
                P[a, b] = val
                P[b, a] = val.conjugate()
            w[a] = w[a] + ga * e.conjugate()
        if n_fb > 0:
            for j in range(n_fb - 1, 0, -1):
                dhist[j] = dhist[j - 1]
            dhist[0] = d
        ek = e.real * e.real + e.imag * e.imag
        soft[k] = y
        decided[k] = d
        mse[k] = ek
        theta_trace[k] = theta
        # rolling MSE window for the divergence guard
        if win_fill < _DIVERGENCE_WINDOW:
            window[win_pos] = ek
            win_sum += ek
            win_fill += 1
        else:
            win_sum += ek - window[win_pos]
            window[win_pos] = ek
        win_pos = (win_pos + 1) % _DIVERGENCE_WINDOW
        if k == n_train - 1:
            baseline = win_sum / win_fill
        if (
            baseline >= 0.0
            and k >= n_train + _DIVERGENCE_WINDOW
            and np.isfinite(div_factor)
        ):
            mean_now = win_sum / _DIVERGENCE_WINDOW
            floor = baseline
            if floor < _DIVERGENCE_MSE_FLOOR:
                floor = _DIVERGENCE_MSE_FLOOR
            if mean_now > div_factor * floor:
                diverged_at = k
                break
        if prune_kind != _PRUNE_OFF and k == prune_at:
            mags = np.zeros(n_fb)
            for j in range(n_fb):
                if active[n_ff + j]:
                    wj = w[n_ff + j]
                    mags[j] = math.sqrt(wj.real * wj.real + wj.imag * wj.imag)
            keep = np.zeros(n_fb, dtype=np.uint8)
            if prune_kind == _PRUNE_KEEP_TOP_N:
                for _sel in range(prune_n):
                    best = -1.0
                    bj = -1
                    for j in range(n_fb):
                        if keep[j] == 0 and active[n_ff + j] and mags[j] > best:
                            best = mags[j]
                            bj = j
                    if bj >= 0:
                        keep[bj] = 1
            else:
                mmax = 0.0
                for j in range(n_fb):
                    if mags[j] > mmax:
                        mmax = mags[j]
                for j in range(n_fb):
                    if active[n_ff + j] and mags[j] >= prune_ratio * mmax:
                        keep[j] = 1
            for j in range(n_fb):
                if active[n_ff + j] and keep[j] == 0:
                    c = n_ff + j
                    active[c] = 0
                    w[c] = 0j
                    for b in range(m):
                        P[c, b] = 0j
                        P[b, c] = 0j
    last_ratio = 0.0
    if diverged_at >= 0 and baseline > 0:
        floor = baseline if baseline > _DIVERGENCE_MSE_FLOOR else _DIVERGENCE_MSE_FLOOR
        last_ratio = (win_sum / _DIVERGENCE_WINDOW) / floor
    return soft, decided, mse, theta_trace, dhist, theta, integ, diverged_at, last_ratio


def acquire_phase(cursors: np.ndarray, training: np.ndarray) -> float:
    """Data-aided one-shot phase estimate from training-position samples."""
    z = np.sum(cursors * np.conj(training))
    if z == 0:
        return 0.0
    return float(np.angle(z))


def equalize(
    rx,
    known_training,
    constellation: Constellation,
    cfg: EqualizerConfig,
    n_symbols: int | None = None,
) -> EqualizerOutput:
    """Run the phase-tracking DFE over one packet of fractionally-spaced samples.

    Parameters
    ----------
    rx : BasebandSignal or ndarray
        Complex samples at ``cfg.fractional_factor`` samples per symbol,
        aligned so ``rx[K * k]`` is the cursor sample of symbol ``k``.
    known_training : ndarray
        The first transmitted symbols (constellation points); adaptation is
        data-aided over this prefix and decision-directed afterwards.
    constellation : Constellation
        Decision alphabet.
    cfg : EqualizerConfig
    n_symbols : int, optional
        Symbols to decode; defaults to ``len(rx) // K``.

    Returns
    -------
    EqualizerOutput

    Raises
    ------
    EqualizerDivergence
        If the post-training windowed MSE exceeds ``cfg.divergence_factor``
        times its end-of-training value.
    """
    samples = rx.samples if isinstance(rx, BasebandSignal) else np.asarray(rx)
    samples = np.ascontiguousarray(samples, dtype=np.complex128)
    K = cfg.fractional_factor
    if n_symbols is None:
        n_symbols = len(samples) // K
    if n_symbols < 1:
        raise ConfigurationError("nothing to equalize: n_symbols < 1")
    training = np.ascontiguousarray(known_training, dtype=np.complex128)
    n_train = len(training)
    if n_train < 1:
        raise ConfigurationError("at least one training symbol is required")
    if n_train > n_symbols:
        raise ConfigurationError("more training symbols than packet symbols")
    if n_train < cfg.n_taps:
        raise ConfigurationError(
            f"{n_train} training symbols cannot identify {cfg.n_taps} taps"
        )
    # zero-pad so every feedforward window and the anticausal span exist
    pre = cfg.n_ff
    tail = pre + K * (n_symbols - 1) + cfg.n_ff + 1 - len(samples)
    rx2 = np.concatenate([
        np.zeros(pre, dtype=np.complex128),
        samples,
        np.zeros(max(tail, 0), dtype=np.complex128),
    ])
    track_phase = cfg.pll_k1 != 0.0 or (cfg.pll_k2 or 0.0) != 0.0
    theta0 = 0.0
    if track_phase:
        cursors = rx2[pre + K * np.arange(n_train)]
        theta0 = acquire_phase(cursors, training)
    # the loop holds the acquired phase until the RLS has roughly converged,
    # so integrator noise from the raw startup error does not walk theta off
    pll_start = min(n_train // 2, max(100, 2 * cfg.n_taps))
    m = cfg.n_taps
    w = np.zeros(m, dtype=np.complex128)
    w[cfg.n_ff // 2] = 1.0
    P = np.eye(m, dtype=np.complex128) / cfg.rls_delta
    active = np.ones(m, dtype=np.uint8)
    prune_at = cfg.prune_after_symbols if cfg.prune_after_symbols is not None else n_train - 1
    (
        soft, decided, mse, theta_trace, dhist, theta, integ, diverged_at, ratio
    ) = _dfe_loop(
        rx2, pre, n_symbols, n_train, training, constellation.points.astype(np.complex128),
        cfg.n_ff, cfg.n_fb, K, cfg.rls_lambda, cfg.pll_k1, float(cfg.pll_k2), theta0,
        pll_start, w, P, active,
        cfg.sparse_policy._code(), cfg.sparse_policy.n, cfg.sparse_policy.ratio,
        prune_at, float(cfg.divergence_factor),
    )
    if diverged_at >= 0:
        raise EqualizerDivergence(int(diverged_at), float(ratio))
    state = DfeState(
        ff_weights=w[:cfg.n_ff],
        fb_weights=w[cfg.n_ff:],
        inv_corr=P,
        carrier_phase=float(theta),
        phase_integrator=float(integ),
        decision_history=dhist[:cfg.n_fb],
        active_tap_mask=active.astype(bool),
    )
    snr = (
        output_snr_db(soft[n_train:], decided[n_train:])
        if n_train < n_symbols
        else math.nan
    )
    return EqualizerOutput(
        soft_symbols=soft,
        decided_symbols=decided,
        mse_trace=mse,
        output_snr_db=snr,
        theta_trace=theta_trace,
        n_training=n_train,
        state=state,
    )


def prune_taps(state: DfeState, policy: SparsePolicy) -> DfeState:
    """Apply a sparse policy to the feedback weights of a DfeState.

    Masked taps are zeroed and their rows/columns of the inverse-correlation
    matrix deflated, so subsequent RLS updates leave them untouched.  Meant
    to be called after the training segment.
    """
    n_ff = len(state.ff_weights)
    n_fb = len(state.fb_weights)
    if policy.kind == "off":
        return state
    if policy.kind == "keep_top_n" and policy.n > n_fb:
        raise ConfigurationError(f"keep_top_n({policy.n}) exceeds n_fb={n_fb}")
    mags = np.abs(state.fb_weights)
    mags[~state.active_tap_mask[n_ff:]] = -1.0
    keep = np.zeros(n_fb, dtype=bool)
    if policy.kind == "keep_top_n":
        order = np.lexsort((np.arange(n_fb), -mags))
        keep[order[: policy.n]] = True
    elif policy.kind == "magnitude_floor":
        keep = mags >= policy.ratio * mags.max()
    else:
        raise ConfigurationError(f"unknown sparse policy {policy.kind!r}")
    keep &= state.active_tap_mask[n_ff:]
    fb = state.fb_weights.copy()
    fb[~keep] = 0
    P = state.inv_corr.copy()
    dead = np.concatenate([np.zeros(n_ff, dtype=bool), ~keep])
    P[dead, :] = 0
    P[:, dead] = 0
    mask = state.active_tap_mask.copy()
    mask[n_ff:] = keep
    return DfeState(
        ff_weights=state.ff_weights.copy(),
        fb_weights=fb,
        inv_corr=P,
        carrier_phase=state.carrier_phase,
        phase_integrator=state.phase_integrator,
        decision_history=state.decision_history.copy(),
        active_tap_mask=mask,
    )


def theoretical_ber(order: int, eb_n0_db):
    """Gray-coded square M-QAM bit error rate over AWGN.

    BER ~ (4 / log2 M)(1 - 1/sqrt(M)) Q( sqrt(3 log2 M / (M - 1) * Eb/N0) ),
    with Q evaluated through the complementary error function.  Accepts a
    scalar or array of Eb/N0 values in dB.
    """
    if order not in (4, 16, 64, 256):
        raise ConfigurationError(f"unsupported order {order}")
    k = math.log2(order)
    gamma = 10.0 ** (np.asarray(eb_n0_db, dtype=float) / 10.0)
    q_arg = np.sqrt(3.0 * k / (order - 1) * gamma)
    ber = (4.0 / k) * (1.0 - 1.0 / math.sqrt(order)) * 0.5 * erfc(q_arg / math.sqrt(2.0))
    if np.isscalar(eb_n0_db):
        return float(ber)
    return ber

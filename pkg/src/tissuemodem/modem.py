"""Bits-to-waveform and waveform-to-bits primitives.

Square M-QAM constellations with Gray labeling, root-raised-cosine pulse
shaping, carrier up/down conversion and hard-decision demapping.  All
functions are pure; they are safe to call from concurrent trial workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal as _sig

from .exceptions import ConfigurationError, FramingError

SUPPORTED_ORDERS = (4, 16, 64, 256)

_DEMAP_CHUNK = 1 << 14


@dataclass(frozen=True)
class Constellation:
    """Unit-average-energy square QAM alphabet with Gray bit labels.

    ``points[v]`` is the symbol whose bit label is the ``bits_per_symbol``-bit
    big-endian expansion of ``v``; ``bit_labels[v]`` is the same label as a
    string of '0'/'1'.
    """

    order: int
    points: np.ndarray
    bit_labels: tuple[str, ...]

    @property
    def bits_per_symbol(self) -> int:
        return self.order.bit_length() - 1


@dataclass(frozen=True)
class PulseShape:
    """FIR pulse-shaping filter taps plus the parameters that produced them."""

    rolloff: float
    span_symbols: int
    samples_per_symbol: int
    taps: np.ndarray

    @property
    def group_delay(self) -> int:
        """Delay of the (odd, symmetric) filter in samples."""
        return (len(self.taps) - 1) // 2


@dataclass(frozen=True)
class BasebandSignal:
    """Complex samples at ``sample_rate`` Hz."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ConfigurationError("sample_rate must be positive")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def energy(self) -> float:
        """Continuous-time energy, sum(|x|^2)/fs."""
        s = self.samples
        return float(np.real(np.vdot(s, s)) / self.sample_rate)


@dataclass(frozen=True)
class PassbandSignal:
    """Real samples at ``sample_rate`` Hz."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ConfigurationError("sample_rate must be positive")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def energy(self) -> float:
        s = self.samples
        return float(np.dot(s, s) / self.sample_rate)


def _gray(n: np.ndarray) -> np.ndarray:
    return n ^ (n >> 1)


def _gray_decode(g: np.ndarray) -> np.ndarray:
    # binary = XOR of all right shifts of the Gray code
    i = g.copy()
    shift = 1
    while (g >> shift).any():
        i ^= g >> shift
        shift += 1
    return i


def build_constellation(order: int) -> Constellation:
    """Build the Gray-labeled, unit-average-energy square QAM alphabet.

    Parameters
    ----------
    order : int
        Constellation size M, one of 4, 16, 64, 256.

    Returns
    -------
    Constellation

    Raises
    ------
    ConfigurationError
        If ``order`` is unsupported.
    """
    if order not in SUPPORTED_ORDERS:
        raise ConfigurationError(
            f"unsupported QAM order {order!r}; expected one of {SUPPORTED_ORDERS}"
        )
    k = order.bit_length() - 1
    kh = k // 2
    side = 1 << kh
    v = np.arange(order)
    g_i = v >> kh
    g_q = v & (side - 1)
    # bit halves are Gray codes of the per-axis level index
    i_i = _gray_decode(g_i)
    i_q = _gray_decode(g_q)
    re = 2 * i_i - (side - 1)
    im = 2 * i_q - (side - 1)
    points = (re + 1j * im) / math.sqrt(2 * (order - 1) / 3)
    labels = tuple(format(val, f"0{k}b") for val in v)
    return Constellation(order=order, points=points, bit_labels=labels)


def map_bits(bits, constellation: Constellation) -> np.ndarray:
    """Map a 0/1 bit sequence onto constellation symbols (no padding).

    Raises ``FramingError`` when the bit count is not a multiple of
    log2(M); the caller is responsible for padding policy.
    """
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    k = constellation.bits_per_symbol
    if len(bits) % k:
        raise FramingError(
            f"bit count {len(bits)} is not divisible by log2(M)={k}"
        )
    if len(bits) == 0:
        return np.empty(0, dtype=complex)
    weights = 1 << np.arange(k - 1, -1, -1)
    values = bits.reshape(-1, k) @ weights
    return constellation.points[values]


def demap(symbols, constellation: Constellation) -> np.ndarray:
    """Hard-decide symbols to the nearest constellation point, return bits.

    Ties are broken toward the smaller point index, which makes the result
    deterministic for inputs equidistant from several points.
    """
    symbols = np.asarray(symbols, dtype=complex).ravel()
    k = constellation.bits_per_symbol
    points = constellation.points
    out = np.empty(len(symbols) * k, dtype=np.uint8)
    shifts = np.arange(k - 1, -1, -1)
    for start in range(0, len(symbols), _DEMAP_CHUNK):
        chunk = symbols[start : start + _DEMAP_CHUNK]
        d2 = np.abs(chunk[:, None] - points[None, :]) ** 2
        idx = d2.argmin(axis=1)
        out[start * k : (start + len(chunk)) * k] = (
            (idx[:, None] >> shifts) & 1
        ).astype(np.uint8).ravel()
    return out


def decide(symbols, constellation: Constellation) -> np.ndarray:
    """Nearest-point indices for soft symbols (same tie rule as demap)."""
    symbols = np.asarray(symbols, dtype=complex).ravel()
    points = constellation.points
    idx = np.empty(len(symbols), dtype=np.int64)
    for start in range(0, len(symbols), _DEMAP_CHUNK):
        chunk = symbols[start : start + _DEMAP_CHUNK]
        idx[start : start + len(chunk)] = np.abs(
            chunk[:, None] - points[None, :]
        ).argmin(axis=1)
    return idx


def design_rrc(rolloff: float, span_symbols: int, samples_per_symbol: int) -> PulseShape:
    """Design a unit-energy root-raised-cosine filter.

    The taps sample the closed-form impulse response; the singular points
    t = 0 and t = +/- T/(4 beta) are evaluated by their analytic limits.
    The filter has odd length ``span_symbols * samples_per_symbol + 1`` so
    its group delay is an integer number of samples.

    Parameters
    ----------
    rolloff : float
        Excess-bandwidth factor beta in (0, 1].
    span_symbols : int
        Even filter span in symbol periods, at least 4.
    samples_per_symbol : int
        Oversampling factor L, at least 2.
    """
    if not (0.0 < rolloff <= 1.0):
        raise ConfigurationError(f"rolloff must be in (0, 1], got {rolloff}")
    if span_symbols < 4 or span_symbols % 2:
        raise ConfigurationError(
            f"span_symbols must be an even integer >= 4, got {span_symbols}"
        )
    if samples_per_symbol < 2:
        raise ConfigurationError(
            f"samples_per_symbol must be >= 2, got {samples_per_symbol}"
        )
    L = int(samples_per_symbol)
    n = np.arange(span_symbols * L + 1)
    t = (n - span_symbols * L / 2) / L  # in symbol periods
    beta = float(rolloff)
    taps = np.empty(len(t))
    four_bt = 4 * beta * t
    at_zero = np.abs(t) < 1e-12
    at_sing = np.abs(np.abs(four_bt) - 1.0) < 1e-10
    regular = ~(at_zero | at_sing)
    taps[at_zero] = 1 - beta + 4 * beta / np.pi
    taps[at_sing] = (beta / math.sqrt(2)) * (
        (1 + 2 / np.pi) * math.sin(np.pi / (4 * beta))
        + (1 - 2 / np.pi) * math.cos(np.pi / (4 * beta))
    )
    tr = t[regular]
    taps[regular] = (
        np.sin(np.pi * tr * (1 - beta))
        + 4 * beta * tr * np.cos(np.pi * tr * (1 + beta))
    ) / (np.pi * tr * (1 - (4 * beta * tr) ** 2))
    taps /= math.sqrt(float(taps @ taps))
    return PulseShape(
        rolloff=beta,
        span_symbols=int(span_symbols),
        samples_per_symbol=L,
        taps=taps,
    )


def shape(
    symbols,
    pulse: PulseShape,
    samples_per_symbol: int | None = None,
    sample_rate: float | None = None,
) -> BasebandSignal:
    """Upsample symbols by zero insertion and filter with the pulse taps.

    Output length is ``(N - 1) * L + len(pulse.taps)`` for N symbols; an
    empty symbol sequence yields an empty signal.
    """
    L = pulse.samples_per_symbol if samples_per_symbol is None else int(samples_per_symbol)
    if L != pulse.samples_per_symbol:
        raise ConfigurationError(
            f"samples_per_symbol {L} does not match pulse ({pulse.samples_per_symbol})"
        )
    if sample_rate is None:
        sample_rate = float(L)
    symbols = np.asarray(symbols, dtype=complex).ravel()
    if len(symbols) == 0:
        return BasebandSignal(np.empty(0, dtype=complex), sample_rate)
    up = np.zeros((len(symbols) - 1) * L + 1, dtype=complex)
    up[::L] = symbols
    out = _sig.fftconvolve(up, pulse.taps, mode="full")
    return BasebandSignal(out, sample_rate)


def upconvert(
    baseband: BasebandSignal,
    carrier_hz: float,
    occupied_bandwidth_hz: float | None = None,
) -> PassbandSignal:
    """Mix complex baseband onto a real carrier: Re{b[n] e^{j 2 pi fc n / fs}}.

    ``occupied_bandwidth_hz`` (the two-sided signal bandwidth), when given,
    tightens the aliasing precondition to fs > 2(fc + bw/2).
    """
    fs = baseband.sample_rate
    half_bw = (occupied_bandwidth_hz or 0.0) / 2
    if fs <= 2 * (carrier_hz + half_bw):
        raise ConfigurationError(
            f"sample rate {fs:g} Hz cannot represent carrier {carrier_hz:g} Hz "
            f"with half-bandwidth {half_bw:g} Hz"
        )
    n = np.arange(len(baseband.samples))
    rotated = baseband.samples * np.exp(2j * np.pi * carrier_hz * n / fs)
    return PassbandSignal(rotated.real.copy(), fs)


def design_rx_lowpass(cutoff_hz: float, sample_rate: float) -> np.ndarray:
    """Anti-image lowpass for downconversion.

    Flat (unit-gain) out to ``cutoff_hz`` and at least ~50 dB down by
    ``2 * cutoff_hz``: the -6 dB point sits at 1.5x cutoff and the Hamming
    transition width is kept under 0.5x cutoff.  Odd length, so the group
    delay is the integer ``(len - 1) // 2``.
    """
    if 2 * cutoff_hz > sample_rate / 2:
        raise ConfigurationError(
            f"lowpass cutoff {cutoff_hz:g} Hz infeasible at fs={sample_rate:g} Hz"
        )
    numtaps = int(np.ceil(6.6 * sample_rate / cutoff_hz)) // 2 * 2 + 1
    return _sig.firwin(numtaps, 1.5 * cutoff_hz, fs=sample_rate)


def downconvert(
    passband: PassbandSignal,
    carrier_hz: float,
    lowpass_cutoff_hz: float,
) -> tuple[BasebandSignal, int]:
    """Mix a real passband signal to complex baseband and lowpass it.

    Returns the baseband signal together with the lowpass group delay in
    samples so callers can keep their alignment bookkeeping exact.
    """
    fs = passband.sample_rate
    if lowpass_cutoff_hz >= carrier_hz:
        raise ConfigurationError(
            f"lowpass cutoff {lowpass_cutoff_hz:g} Hz must be below the carrier "
            f"{carrier_hz:g} Hz"
        )
    taps = design_rx_lowpass(lowpass_cutoff_hz, fs)
    n = np.arange(len(passband.samples))
    mixed = passband.samples * (2.0 * np.exp(-2j * np.pi * carrier_hz * n / fs))
    out = _sig.fftconvolve(mixed, taps, mode="full")
    return BasebandSignal(out, fs), (len(taps) - 1) // 2


def matched_filter(baseband: BasebandSignal, pulse: PulseShape) -> BasebandSignal:
    """Filter with the pulse taps (receive matched filter)."""
    out = _sig.fftconvolve(baseband.samples, pulse.taps, mode="full")
    return BasebandSignal(out, baseband.sample_rate)


def data_rate(symbol_rate_hz: float, order: int) -> float:
    """Bit rate fb * log2(M) in bits per second."""
    if symbol_rate_hz <= 0:
        raise ConfigurationError(f"symbol rate must be positive, got {symbol_rate_hz}")
    k = order.bit_length() - 1
    if order < 2 or (1 << k) != order:
        raise ConfigurationError(f"order must be a power of two >= 2, got {order}")
    return symbol_rate_hz * k

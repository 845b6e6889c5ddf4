"""File transport: packetize opaque bytes onto modem frames and back.

Every packet carries a 16-byte header (packet index, packet count, payload
length, CRC-32 of the payload) followed by the payload, zero-padded to the
packet's byte capacity.  The training prefix of each packet is a fixed
pseudo-random symbol sequence derived from the run seed, so the receiver
can adapt without knowing the payload.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, EqualizerDivergence, SyncError
from .framing import generate_chirp
from .harness import (
    TrialConfig,
    decode_symbols,
    receive_aligned_baseband,
    resolve_channel,
    transmit_frame,
)
from .modem import PassbandSignal, build_constellation, demap, map_bits

HEADER_FORMAT = "<IIII"  # packet index, packet count, payload bytes, CRC-32
HEADER_BYTES = struct.calcsize(HEADER_FORMAT)

_TRAINING_STREAM = 2


@dataclass(frozen=True)
class PacketStatus:
    index: int
    ok: bool
    reason: str | None = None


@dataclass(frozen=True)
class TransportReport:
    """Reassembly outcome; ``data`` has zero-filled gaps where packets failed."""

    data: bytes
    n_packets: int
    packets: tuple[PacketStatus, ...]
    gaps: tuple[tuple[int, int], ...]  # byte ranges [start, end) lost

    @property
    def all_ok(self) -> bool:
        return all(p.ok for p in self.packets)


def training_symbols(cfg: TrialConfig):
    """Known training prefix shared by sender and receiver."""
    constellation = build_constellation(cfg.order)
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg.rng_seed, spawn_key=(0, _TRAINING_STREAM))
    )
    idx = rng.integers(0, cfg.order, cfg.frame.n_training)
    return constellation.points[idx]


def packet_capacity_bytes(cfg: TrialConfig) -> int:
    """Payload bytes one packet can carry after header and training overhead."""
    data_symbols = cfg.frame.n_symbols - cfg.frame.n_training
    k = cfg.order.bit_length() - 1
    capacity = (data_symbols * k) // 8 - HEADER_BYTES
    if capacity < 1:
        raise ConfigurationError(
            "packet too small: no payload capacity after header and training"
        )
    return capacity


def _payload_to_symbols(cfg: TrialConfig, block: bytes, constellation):
    k = constellation.bits_per_symbol
    data_symbols = cfg.frame.n_symbols - cfg.frame.n_training
    bits = np.unpackbits(np.frombuffer(block, dtype=np.uint8))
    pad = data_symbols * k - len(bits)
    if pad < 0:
        raise ConfigurationError("payload block exceeds packet capacity")
    bits = np.concatenate([bits, np.zeros(pad, dtype=np.uint8)])
    return map_bits(bits, constellation)


def encode_packet(cfg: TrialConfig, index: int, total: int, payload: bytes) -> PassbandSignal:
    """Frame one payload slice as a passband packet."""
    capacity = packet_capacity_bytes(cfg)
    if len(payload) > capacity:
        raise ConfigurationError("payload exceeds packet capacity")
    header = struct.pack(HEADER_FORMAT, index, total, len(payload), zlib.crc32(payload))
    block = header + payload + b"\x00" * (capacity - len(payload))
    constellation = build_constellation(cfg.order)
    data_syms = _payload_to_symbols(cfg, block, constellation)
    symbols = np.concatenate([training_symbols(cfg), data_syms])
    passband, _ = transmit_frame(cfg, symbols)
    return passband


def send_file(path, cfg: TrialConfig) -> list[PassbandSignal]:
    """Split a file into packets and modulate each onto its own frame."""
    with open(path, "rb") as fh:
        payload = fh.read()
    if not payload:
        raise ConfigurationError(f"{path}: refusing to send an empty file")
    capacity = packet_capacity_bytes(cfg)
    total = math.ceil(len(payload) / capacity)
    return [
        encode_packet(cfg, i, total, payload[i * capacity : (i + 1) * capacity])
        for i in range(total)
    ]


def decode_packet(cfg: TrialConfig, signal: PassbandSignal):
    """Demodulate one received packet; returns (index, total, payload).

    Raises SyncError / EqualizerDivergence / ConfigurationError on frames
    that cannot be decoded at all; CRC validation is the caller's job.
    """
    constellation = build_constellation(cfg.order)
    chan = resolve_channel(cfg)
    chirp = generate_chirp(cfg.frame)
    bb, data_start, _ = receive_aligned_baseband(cfg, signal, chirp, chan)
    train = training_symbols(cfg)
    decided, _ = decode_symbols(cfg, bb, data_start, train, constellation)
    bits = demap(decided[len(train) :], constellation)
    n_bytes = packet_capacity_bytes(cfg) + HEADER_BYTES
    block = np.packbits(bits[: n_bytes * 8]).tobytes()
    index, total, length, crc = struct.unpack(HEADER_FORMAT, block[:HEADER_BYTES])
    payload = block[HEADER_BYTES : HEADER_BYTES + length]
    if length > n_bytes - HEADER_BYTES:
        raise ConfigurationError("corrupt header: payload length exceeds capacity")
    if zlib.crc32(payload) != crc:
        raise ConfigurationError("CRC mismatch")
    return index, total, payload


def _split_recording(cfg: TrialConfig, signal: PassbandSignal) -> list[PassbandSignal]:
    chirp_n = cfg.frame.chirp_samples
    data_n = (cfg.frame.n_symbols - 1) * cfg.frame.samples_per_symbol + len(
        cfg.frame.pulse.taps
    )
    frame_len = chirp_n + cfg.frame.guard_samples + data_n
    if len(signal) % frame_len:
        raise ConfigurationError(
            f"recording length {len(signal)} is not a multiple of the clean "
            f"frame length {frame_len}; pass per-packet signals instead"
        )
    return [
        PassbandSignal(signal.samples[i : i + frame_len], signal.sample_rate)
        for i in range(0, len(signal), frame_len)
    ]


def recv_file(frames, cfg: TrialConfig, out_path=None) -> TransportReport:
    """Demodulate packets, validate CRCs, reassemble and optionally write.

    ``frames`` is a list of per-packet PassbandSignals (possibly channel
    impaired) or one clean concatenated recording.  Failed packets are
    flagged and zero-filled in the output; there is no silent corruption
    because every payload is CRC-checked.
    """
    if isinstance(frames, PassbandSignal):
        frames = _split_recording(cfg, frames)
    if not frames:
        raise ConfigurationError("no frames to decode")
    capacity = packet_capacity_bytes(cfg)
    received: dict[int, bytes] = {}
    statuses = []
    totals = set()
    for pos, frame in enumerate(frames):
        try:
            index, total, payload = decode_packet(cfg, frame)
        except (SyncError, EqualizerDivergence, ConfigurationError, struct.error) as exc:
            statuses.append(PacketStatus(index=pos, ok=False, reason=str(exc)))
            continue
        totals.add(total)
        received[index] = payload
        statuses.append(PacketStatus(index=index, ok=True))
    n_packets = max(totals) if totals else len(frames)
    chunks = []
    gaps = []
    cursor = 0
    for i in range(n_packets):
        if i in received:
            chunks.append(received[i])
            cursor += len(received[i])
        else:
            # last-packet length unknown when it is the one lost
            size = capacity
            chunks.append(b"\x00" * size)
            gaps.append((cursor, cursor + size))
            cursor += size
    data = b"".join(chunks)
    report = TransportReport(
        data=data,
        n_packets=n_packets,
        packets=tuple(statuses),
        gaps=tuple(gaps),
    )
    if out_path is not None:
        with open(out_path, "wb") as fh:
            fh.write(report.data)
    return report

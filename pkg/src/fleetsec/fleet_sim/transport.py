"""Fragmentation for constrained links and a lossy simulated link.

Frames carry a 4-byte header: message id (2 bytes), fragment index
(1 byte), and total-minus-one (1 byte), so every frame names the full
fragment count and a 12-byte MTU still moves 8 payload bytes. Payloads
are capped at 256 fragments.
"""

from __future__ import annotations

import random
from typing import Iterable

from ..errors import FleetsecError

HEADER_LEN = 4
MAX_FRAGMENTS = 256
MAX_MESSAGE_ID = 2**16 - 1


class MtuTooSmallError(FleetsecError):
    pass


class PayloadTooLargeError(FleetsecError):
    pass


class ReassemblyError(FleetsecError):
    """Frames are malformed or from mixed messages."""


class MissingFragmentError(ReassemblyError):
    def __init__(self, message_id: int, missing: list[int]):
        super().__init__(f"message {message_id} missing fragments {missing}")
        self.message_id = message_id
        self.missing = missing


def fragment(payload: bytes, mtu: int, message_id: int = 0) -> list[bytes]:
    if mtu <= HEADER_LEN:
        raise MtuTooSmallError(f"mtu {mtu} leaves no room after {HEADER_LEN}-byte header")
    if not 0 <= message_id <= MAX_MESSAGE_ID:
        raise ValueError(f"message_id out of range: {message_id}")
    chunk = mtu - HEADER_LEN
    total = max(1, -(-len(payload) // chunk))  # empty payload still sends one frame
    if total > MAX_FRAGMENTS:
        raise PayloadTooLargeError(
            f"{len(payload)} bytes need {total} fragments, cap is {MAX_FRAGMENTS}"
        )
    frames = []
    for index in range(total):
        header = message_id.to_bytes(2, "big") + bytes([index, total - 1])
        frames.append(header + payload[index * chunk : (index + 1) * chunk])
    return frames


def reassemble(frames: Iterable[bytes]) -> bytes:
    got: dict[int, bytes] = {}
    message_id: int | None = None
    total: int | None = None
    for frame in frames:
        if len(frame) < HEADER_LEN:
            raise ReassemblyError(f"frame shorter than {HEADER_LEN}-byte header")
        mid = int.from_bytes(frame[:2], "big")
        index, last = frame[2], frame[3]
        if message_id is None:
            message_id, total = mid, last + 1
        elif mid != message_id:
            raise ReassemblyError(f"mixed messages: {message_id} and {mid}")
        elif last + 1 != total:
            raise ReassemblyError(f"conflicting totals: {total} and {last + 1}")
        if index >= total:
            raise ReassemblyError(f"fragment index {index} beyond total {total}")
        if index in got and got[index] != frame[HEADER_LEN:]:
            raise ReassemblyError(f"conflicting duplicates of fragment {index}")
        got[index] = frame[HEADER_LEN:]
    if message_id is None:
        raise ReassemblyError("no frames")
    missing = sorted(set(range(total)) - set(got))
    if missing:
        raise MissingFragmentError(message_id, missing)
    return b"".join(got[i] for i in range(total))


class SimLink:
    """Lossy constrained link: fixed mtu/latency, seeded independent drops."""

    def __init__(self, mtu: int, latency: int, drop_rate: float, rng: random.Random):
        if mtu < 1:
            raise ValueError("mtu must be at least 1")
        if latency < 0:
            raise ValueError("latency must be non-negative")
        if not 0 <= drop_rate < 1:
            raise ValueError(f"drop_rate must be in [0, 1), got {drop_rate}")
        self.mtu = mtu
        self.latency = latency
        self.drop_rate = drop_rate
        self._rng = rng

    def deliver(self, frames: Iterable[bytes]) -> list[bytes]:
        """Frames surviving this hop; each is dropped independently."""
        if self.drop_rate == 0:
            return list(frames)
        return [f for f in frames if self._rng.random() >= self.drop_rate]

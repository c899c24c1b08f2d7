"""Counter-based Gaussian draws.

Every draw is a pure function of its key, so perturbing trajectories in any
order, or in parallel, gives the same numbers. The key is hashed with
BLAKE2b; the 128-bit digest supplies two 53-bit uniforms for a Box-Muller
transform (the sine branch is discarded so one key maps to one draw).
"""
from __future__ import annotations

import hashlib
import math
import struct

_MASK64 = (1 << 64) - 1
_TWO_POW_M53 = 2.0 ** -53


def key_bytes(seed: int, repetition: int, traj_id: str, record: int, axis: int) -> bytes:
    tid = traj_id.encode("utf-8")
    return struct.pack("<QQqBI", seed & _MASK64, repetition & _MASK64, record, axis, len(tid)) + tid


def uniforms(key: bytes):
    digest = hashlib.blake2b(key, digest_size=16, person=b"trajrisk-noise").digest()
    a, b = struct.unpack("<QQ", digest)
    u1 = ((a >> 11) + 1) * _TWO_POW_M53     # (0, 1]
    u2 = (b >> 11) * _TWO_POW_M53           # [0, 1)
    return u1, u2


def normal(seed: int, repetition: int, traj_id: str, record: int, axis: int) -> float:
    """Standard normal draw for one (seed, repetition, trajectory, record, axis) key."""
    u1, u2 = uniforms(key_bytes(seed, repetition, traj_id, record, axis))
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

"""Deterministic, snapshot/restore-able randomness for audited pipelines.

One generator family is fixed project-wide: numpy's Philox, a counter-based
PRNG whose full state (counter, key, output buffer) can be serialized to a
small fixed layout and restored bit-exactly. All draw primitives consume a
fixed number of uniforms per sample (inverse-CDF transforms only; rejection
samplers are forbidden), so a primitive call always advances the generator
by a shape-determined amount. That property is what lets a replay run
realign its randomness with the recorded run after every call.

Parallel sampling never shares a generator: independent child generators
are derived from (seed, call_index, replicate) by keying Philox on the
(seed, call_index) pair and placing the replicate index in the top counter
word, which gives disjoint counter ranges for every replicate.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.special import ndtri

__all__ = [
    "RngState",
    "RngStateError",
    "make_generator",
    "snapshot",
    "restore",
    "state_digest",
    "sample_uniform",
    "sample_laplace",
    "sample_gaussian",
    "sample_categorical",
    "laplace_unit",
    "gaussian_unit",
    "child_generator",
    "replicate_generators",
    "ZeroNoiseGenerator",
]

# Serialized Philox state, version 1:
#   magic "PHLX", version u8, counter 4*u64, key 2*u64, buffer 4*u64,
#   buffer_pos u8, has_uint32 u8, uinteger u32
_STATE_FORMAT = "<4sB4Q2Q4QBBI"
_STATE_MAGIC = b"PHLX"
_STATE_VERSION = 1
_STATE_SIZE = struct.calcsize(_STATE_FORMAT)

_TINY = np.finfo(float).tiny


class RngStateError(ValueError):
    """Raised when generator state bytes are malformed or foreign."""


@dataclass(frozen=True)
class RngState:
    """Opaque serialized generator state plus a 64-bit content digest."""

    data: bytes
    digest: str

    def hex(self) -> str:
        return self.data.hex()

    @classmethod
    def from_hex(cls, text: str) -> "RngState":
        data = bytes.fromhex(text)
        return cls(data=data, digest=state_digest(data))


def state_digest(data: bytes) -> str:
    """16-hex-digit content hash of serialized state bytes."""
    return hashlib.blake2b(data, digest_size=8).hexdigest()


def make_generator(seed: int) -> np.random.Generator:
    """Create the project-standard seeded generator."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def _pack_state(state: dict) -> bytes:
    inner = state["state"]
    return struct.pack(
        _STATE_FORMAT,
        _STATE_MAGIC,
        _STATE_VERSION,
        *(int(x) for x in inner["counter"]),
        *(int(x) for x in inner["key"]),
        *(int(x) for x in state["buffer"]),
        int(state["buffer_pos"]),
        int(state["has_uint32"]),
        int(state["uinteger"]),
    )


def snapshot(gen: np.random.Generator) -> RngState:
    """Capture the full generator state; restoring it reproduces all
    subsequent draws bit-exactly."""
    bg = gen.bit_generator
    if not isinstance(bg, np.random.Philox):
        raise RngStateError(
            f"snapshot requires the project Philox generator, got {type(bg).__name__}"
        )
    data = _pack_state(bg.state)
    return RngState(data=data, digest=state_digest(data))


def restore(gen: np.random.Generator, state: RngState) -> None:
    """Restore a previously snapshotted state into the generator."""
    if len(state.data) != _STATE_SIZE:
        raise RngStateError(
            f"state payload has {len(state.data)} bytes, expected {_STATE_SIZE}"
        )
    try:
        unpacked = struct.unpack(_STATE_FORMAT, state.data)
    except struct.error as exc:
        raise RngStateError(f"malformed state bytes: {exc}") from exc
    magic, version = unpacked[0], unpacked[1]
    if magic != _STATE_MAGIC:
        raise RngStateError("state bytes belong to a different generator family")
    if version != _STATE_VERSION:
        raise RngStateError(f"unsupported state version {version}")
    counter = np.array(unpacked[2:6], dtype=np.uint64)
    key = np.array(unpacked[6:8], dtype=np.uint64)
    buffer = np.array(unpacked[8:12], dtype=np.uint64)
    buffer_pos, has_uint32, uinteger = unpacked[12], unpacked[13], unpacked[14]
    if not 0 <= buffer_pos <= 4:
        raise RngStateError(f"buffer_pos {buffer_pos} out of range")
    bg = gen.bit_generator
    if not isinstance(bg, np.random.Philox):
        raise RngStateError("restore requires the project Philox generator")
    bg.state = {
        "bit_generator": "Philox",
        "state": {"counter": counter, "key": key},
        "buffer": buffer,
        "buffer_pos": int(buffer_pos),
        "has_uint32": int(has_uint32),
        "uinteger": int(uinteger),
    }


class ZeroNoiseGenerator:
    """Test hook: every uniform draw is 0.5, so inverse-CDF noise is exactly
    zero and categorical draws hit the median index deterministically."""

    def random(self) -> float:
        return 0.5


def sample_uniform(gen) -> float:
    """One uniform draw in [0, 1); consumes exactly one generator step."""
    return float(gen.random())


def laplace_unit(gen) -> float:
    """Standard Laplace draw via inverse CDF from a single uniform."""
    u = gen.random()
    centered = u - 0.5
    w = 1.0 - 2.0 * abs(centered)
    if w < _TINY:
        w = _TINY
    if centered > 0:
        return -float(np.log(w))
    if centered < 0:
        return float(np.log(w))
    return 0.0


def gaussian_unit(gen) -> float:
    """Standard normal draw via inverse CDF from a single uniform."""
    u = gen.random()
    if u < _TINY:
        u = _TINY
    return float(ndtri(u))


def sample_laplace(gen, scale: float) -> float:
    if not (scale > 0) or not np.isfinite(scale):
        raise ValueError(f"laplace scale must be positive and finite, got {scale}")
    return scale * laplace_unit(gen)


def sample_gaussian(gen, sigma: float) -> float:
    if not (sigma > 0) or not np.isfinite(sigma):
        raise ValueError(f"gaussian sigma must be positive and finite, got {sigma}")
    return sigma * gaussian_unit(gen)


def sample_categorical(gen, probs) -> int:
    """Draw an index from a probability vector using one uniform."""
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probability vector must be non-empty and 1-D")
    if np.any(p < -1e-12) or not np.all(np.isfinite(p)):
        raise ValueError("probabilities must be finite and nonnegative")
    if abs(float(p.sum()) - 1.0) > 1e-12:
        raise ValueError(f"probabilities sum to {float(p.sum())!r}, expected 1")
    u = gen.random()
    cum = np.cumsum(np.clip(p, 0.0, None))
    idx = int(np.searchsorted(cum, u, side="right"))
    return min(idx, p.size - 1)


def _child_key(seed: int, call_index: int) -> int:
    words = np.random.SeedSequence((int(seed), int(call_index))).generate_state(2, np.uint64)
    return int(words[0]) | (int(words[1]) << 64)


def child_generator(seed: int, call_index: int, replicate: int) -> np.random.Generator:
    """Independent generator for one sampling replicate.

    Streams for distinct (seed, call_index, replicate) triples never
    overlap: the replicate occupies the top Philox counter word.
    """
    if replicate < 0:
        raise ValueError("replicate index must be nonnegative")
    key = _child_key(seed, call_index)
    bg = np.random.Philox(counter=int(replicate) << 192, key=key)
    return np.random.Generator(bg)


def replicate_generators(seed: int, call_index: int, count: int) -> Iterator[np.random.Generator]:
    """Yield the generators for replicates 0..count-1.

    Produces draw streams identical to child_generator(seed, call_index, r)
    but resets one Philox in place instead of constructing count of them,
    which matters when count is 1e5.
    """
    key = _child_key(seed, call_index)
    bg = np.random.Philox(key=key)
    gen = np.random.Generator(bg)
    counter = np.zeros(4, dtype=np.uint64)
    key_words = bg.state["state"]["key"].copy()
    template = {
        "bit_generator": "Philox",
        "state": {"counter": counter, "key": key_words},
        "buffer": np.zeros(4, dtype=np.uint64),
        "buffer_pos": 4,
        "has_uint32": 0,
        "uinteger": 0,
    }
    for replicate in range(count):
        counter[3] = replicate
        bg.state = template
        yield gen

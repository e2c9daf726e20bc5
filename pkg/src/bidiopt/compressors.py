"""Sparsifying compressors (RandK, TopK, identity) and keyed RNG streams.

A compressor maps a vector to a cheaper-to-transmit vector.  Unbiased
compressors satisfy E[C(x)] = x with relative variance omega; biased
(contractive) compressors satisfy E||C(x) - x||^2 <= (1 - alpha)||x||^2.
The expected density K_C is the per-message coordinate charge used by the
communication ledger.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "CompressorSpec",
    "RngStream",
    "PURPOSE_Y",
    "PURPOSE_Z",
    "PURPOSE_COIN",
    "PURPOSE_PRIMAL",
    "rand_k",
    "top_k",
    "apply_compressor",
    "omega_of",
    "alpha_of",
    "expected_density",
    "is_unbiased",
    "scale_to_biased",
    "encode_pairs",
    "decode_pairs",
]

# Stream purpose tags: per-round worker gradient messages (y and z), the
# server coin, and the server-side model compressor.
PURPOSE_Y = 0
PURPOSE_Z = 1
PURPOSE_COIN = 2
PURPOSE_PRIMAL = 3


@dataclass(frozen=True)
class CompressorSpec:
    """Compressor kind plus parameters.

    kind is one of "rand_k", "top_k", "identity", "scaled"; k is the
    coordinate budget (equal to d for identity); "scaled" wraps an unbiased
    inner spec and multiplies its output by 1/(omega+1), turning it into a
    contraction.
    """

    kind: str
    d: int
    k: int
    inner: Optional["CompressorSpec"] = None

    def __post_init__(self):
        if self.kind not in ("rand_k", "top_k", "identity", "scaled"):
            raise ValueError(f"unknown compressor kind {self.kind!r}")
        if self.d < 1:
            raise ValueError("dimension must be positive")
        if not 1 <= self.k <= self.d:
            raise ValueError(f"k={self.k} out of range [1, {self.d}]")
        if self.kind == "scaled":
            if self.inner is None:
                raise ValueError("scaled spec needs an inner unbiased spec")
            if not is_unbiased(self.inner):
                raise ValueError("scaled spec requires an unbiased inner spec")

    @staticmethod
    def make_rand_k(d: int, k: int) -> "CompressorSpec":
        return CompressorSpec("rand_k", d, k)

    @staticmethod
    def make_top_k(d: int, k: int) -> "CompressorSpec":
        return CompressorSpec("top_k", d, k)

    @staticmethod
    def make_identity(d: int) -> "CompressorSpec":
        return CompressorSpec("identity", d, d)


def is_unbiased(spec: CompressorSpec) -> bool:
    return spec.kind in ("rand_k", "identity")


def omega_of(spec: CompressorSpec) -> float:
    """Unbiased variance parameter: d/k - 1 for RandK, 0 for identity."""
    if spec.kind == "rand_k":
        return spec.d / spec.k - 1.0
    if spec.kind == "identity":
        return 0.0
    raise ValueError(f"{spec.kind} compressor has no omega (not unbiased)")


def alpha_of(spec: CompressorSpec) -> float:
    """Contraction parameter: k/d for TopK, 1/(omega+1) for scaled, 1 for identity."""
    if spec.kind == "top_k":
        return spec.k / spec.d
    if spec.kind == "identity":
        return 1.0
    if spec.kind == "scaled":
        return 1.0 / (omega_of(spec.inner) + 1.0)
    raise ValueError(f"{spec.kind} compressor has no alpha (purely unbiased)")


def expected_density(spec: CompressorSpec) -> int:
    """Per-message coordinate charge K_C (sup of expected nonzero count)."""
    if spec.kind in ("rand_k", "top_k"):
        return spec.k
    if spec.kind == "identity":
        return spec.d
    return expected_density(spec.inner)


def scale_to_biased(spec: CompressorSpec) -> CompressorSpec:
    """Wrap an unbiased spec so its output is multiplied by 1/(omega+1).

    Identity is returned unchanged (omega = 0 so the scale is 1).
    """
    if not is_unbiased(spec):
        raise ValueError("scale_to_biased expects an unbiased spec")
    if spec.kind == "identity":
        return spec
    return CompressorSpec("scaled", spec.d, spec.k, inner=spec)


def rand_k(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Keep a uniform k-subset of coordinates (without replacement), scaled by d/k.

    Unbiased: averaging over all subsets recovers x.
    """
    d = x.shape[0]
    if not 1 <= k <= d:
        raise ValueError(f"k={k} out of range [1, {d}]")
    if k == d:
        return x.copy()
    idx = rng.choice(d, size=k, replace=False)
    out = np.zeros_like(x)
    out[idx] = x[idx] * (d / k)
    return out


def top_k(x: np.ndarray, k: int) -> np.ndarray:
    """Keep the k entries of largest magnitude, unscaled.

    Deterministic; magnitude ties are broken toward the smaller index
    (stable sort on descending |x|).
    """
    d = x.shape[0]
    if not 1 <= k <= d:
        raise ValueError(f"k={k} out of range [1, {d}]")
    if k == d:
        return x.copy()
    order = np.argsort(-np.abs(x), kind="stable")
    out = np.zeros_like(x)
    keep = order[:k]
    out[keep] = x[keep]
    return out


def apply_compressor(
    spec: CompressorSpec, x: np.ndarray, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """Apply the compressor described by spec to x."""
    if x.shape != (spec.d,):
        raise ValueError(f"vector shape {x.shape} does not match spec d={spec.d}")
    if spec.kind == "rand_k":
        if rng is None:
            raise ValueError("rand_k needs an RNG stream")
        return rand_k(x, spec.k, rng)
    if spec.kind == "top_k":
        return top_k(x, spec.k)
    if spec.kind == "identity":
        return x.copy()
    inner_out = apply_compressor(spec.inner, x, rng)
    inner_out *= 1.0 / (omega_of(spec.inner) + 1.0)
    return inner_out


class RngStream:
    """Counter-based random streams keyed by (seed, worker, round, purpose).

    Distinct label tuples address disjoint Philox counter blocks under one
    seed-derived key, so every message's randomness is independent and
    recomputable in isolation.  Worker ids 0..n-1 are the workers; pass
    worker=n (or any reserved id) for server-owned streams.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._key = np.random.SeedSequence(self.seed).generate_state(2, np.uint64)

    def generator(self, worker: int, round_index: int, purpose: int) -> np.random.Generator:
        if worker < 0 or round_index < 0 or purpose < 0:
            raise ValueError("stream labels must be non-negative")
        counter = np.array([0, worker, round_index, purpose], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(counter=counter, key=self._key))

    def coin(self, round_index: int, p: float, server_id: int) -> bool:
        """Server-owned Bernoulli(p) coin for the given round."""
        g = self.generator(server_id, round_index, PURPOSE_COIN)
        return bool(g.random() < p)


def encode_pairs(x: np.ndarray) -> bytes:
    """Serialize the nonzeros of x as little-endian (u32 index, f64 value) pairs."""
    idx = np.flatnonzero(x)
    parts = [struct.pack("<Id", int(i), float(x[i])) for i in idx]
    return b"".join(parts)


def decode_pairs(blob: bytes, d: int) -> np.ndarray:
    """Inverse of encode_pairs for a dimension-d vector."""
    if len(blob) % 12 != 0:
        raise ValueError("pair blob length must be a multiple of 12")
    out = np.zeros(d)
    for off in range(0, len(blob), 12):
        i, v = struct.unpack_from("<Id", blob, off)
        out[i] = v
    return out

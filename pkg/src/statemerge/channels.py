"""Kraus channels, quantum instruments, block instruments, one-way LOCC
composition, and seeded Haar-random sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .qcore import DensityOp, StateVector, Dims, kron, partial_trace, _mat

__all__ = [
    "CHANNEL_TOL",
    "KrausMap",
    "Instrument",
    "BlockInstrument",
    "OneWayLocc",
    "apply_map",
    "haar_unitary",
    "block_instrument",
    "max_entangled",
    "as_rng",
    "split_rngs",
    "random_pure",
    "random_density",
    "separable_channel_defect",
]

CHANNEL_TOL = 1e-9


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def split_rngs(seed, n: int) -> list[np.random.Generator]:
    """Independent child generators; child i is the same for any n >= i."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass(frozen=True)
class KrausMap:
    """Trace-non-increasing completely positive map given by Kraus operators."""

    kraus: tuple[np.ndarray, ...]

    def __post_init__(self):
        ops = tuple(np.asarray(k, dtype=complex) for k in self.kraus)
        if not ops:
            raise ValueError("need at least one Kraus operator")
        shape = ops[0].shape
        if any(k.shape != shape for k in ops):
            raise ValueError("Kraus operators must share one shape")
        object.__setattr__(self, "kraus", ops)
        w = np.linalg.eigvalsh(self.completeness())
        if w.max() > 1.0 + CHANNEL_TOL:
            raise ValueError(f"map increases trace: completeness eigenvalue {w.max():.12f}")
        is_channel = bool(
            np.max(np.abs(self.completeness() - np.eye(self.dim_in))) <= CHANNEL_TOL
        )
        object.__setattr__(self, "_is_channel", is_channel)

    @property
    def dim_in(self) -> int:
        return self.kraus[0].shape[1]

    @property
    def dim_out(self) -> int:
        return self.kraus[0].shape[0]

    @property
    def is_channel(self) -> bool:
        return self._is_channel

    def completeness(self) -> np.ndarray:
        h = sum(k.conj().T @ k for k in self.kraus)
        return (h + h.conj().T) / 2

    def apply(self, rho) -> np.ndarray:
        m = _mat(rho)
        if m.shape[0] != self.dim_in:
            raise ValueError(f"dimension mismatch: map expects {self.dim_in}, got {m.shape[0]}")
        return sum(k @ m @ k.conj().T for k in self.kraus)

    def then(self, other: "KrausMap") -> "KrausMap":
        """Composition: first self, then other."""
        if other.dim_in != self.dim_out:
            raise ValueError("composition dimension mismatch")
        return KrausMap(tuple(b @ a for a in self.kraus for b in other.kraus))

    @staticmethod
    def identity(d: int) -> "KrausMap":
        return KrausMap((np.eye(d, dtype=complex),))

    @staticmethod
    def from_isometry(v: np.ndarray) -> "KrausMap":
        return KrausMap((np.asarray(v, dtype=complex),))


@dataclass(frozen=True)
class Instrument:
    """Finite family of trace-non-increasing cp maps summing to a channel."""

    branches: tuple[KrausMap, ...]

    def __post_init__(self):
        branches = tuple(self.branches)
        if not branches:
            raise ValueError("instrument needs at least one branch")
        d = branches[0].dim_in
        if any(b.dim_in != d for b in branches):
            raise ValueError("instrument branches must share the input dimension")
        object.__setattr__(self, "branches", branches)
        total = sum(b.completeness() for b in branches)
        if np.max(np.abs(total - np.eye(d))) > CHANNEL_TOL:
            raise ValueError("instrument branches do not sum to a channel")

    @property
    def n_outcomes(self) -> int:
        return len(self.branches)

    @property
    def dim_in(self) -> int:
        return self.branches[0].dim_in

    def apply(self, rho) -> list[np.ndarray]:
        return [b.apply(rho) for b in self.branches]

    def probabilities(self, rho) -> np.ndarray:
        p = np.array([b.apply(rho).trace().real for b in self.branches])
        return np.clip(p, 0.0, None)

    @staticmethod
    def identity(d: int) -> "Instrument":
        return Instrument((KrausMap.identity(d),))

    @staticmethod
    def complete_measurement(d: int) -> "Instrument":
        eye = np.eye(d, dtype=complex)
        return Instrument(tuple(KrausMap((np.outer(eye[:, a], eye[:, a]),)) for a in range(d)))


@dataclass(frozen=True)
class BlockInstrument:
    """Measurement by rank-``rank`` partial isometries with pairwise
    orthogonal initial subspaces, all twisted by one unitary.

    Outcome 0 is the remainder block of rank ``dim - rank * n_blocks``
    (possibly zero); it is kept so outcome indices run 0..n_blocks.
    """

    dim: int
    rank: int
    v: np.ndarray
    isometries: tuple[np.ndarray, ...]

    def __post_init__(self):
        v = np.asarray(self.v, dtype=complex)
        object.__setattr__(self, "v", v)
        iso = tuple(np.asarray(a, dtype=complex) for a in self.isometries)
        object.__setattr__(self, "isometries", iso)
        d, L = self.dim, self.rank
        blocks = d // L
        if len(iso) != blocks + 1:
            raise ValueError("expected remainder isometry plus one per full block")
        ranks = [int(np.count_nonzero(np.linalg.svd(a, compute_uv=False) > 1e-10)) for a in iso]
        if ranks[0] != d - L * blocks:
            raise ValueError(f"remainder rank {ranks[0]} != {d - L * blocks}")
        if any(r != L for r in ranks[1:]):
            raise ValueError(f"full-block ranks {ranks[1:]} != {L}")
        for i in range(len(iso)):
            for j in range(i + 1, len(iso)):
                if np.max(np.abs(iso[i] @ iso[j].conj().T)) > CHANNEL_TOL:
                    raise ValueError("initial subspaces are not pairwise orthogonal")
        total = sum(a.conj().T @ a for a in iso)
        if np.max(np.abs(total - np.eye(d))) > CHANNEL_TOL:
            raise ValueError("block isometries do not resolve the identity")

    @property
    def n_blocks(self) -> int:
        return self.dim // self.rank

    @property
    def n_outcomes(self) -> int:
        return len(self.isometries)

    def probabilities(self, rho_a) -> np.ndarray:
        m = _mat(rho_a)
        p = np.array([np.trace(a @ m @ a.conj().T).real for a in self.isometries])
        return np.clip(p, 0.0, None)

    def as_instrument(self) -> Instrument:
        return Instrument(tuple(KrausMap((a,)) for a in self.isometries))

    def outcome_count_nonzero(self, tol: float = 1e-12) -> int:
        return sum(1 for a in self.isometries if np.max(np.abs(a)) > tol)


def block_instrument(dim: int, rank: int, v) -> BlockInstrument:
    """Partition the canonical basis of a ``dim``-dimensional space into
    ``dim // rank`` blocks of size ``rank`` plus a remainder, and compose the
    block selectors with the twisting unitary ``v``."""
    if not 1 <= rank <= dim:
        raise ValueError(f"rank must satisfy 1 <= rank <= {dim}, got {rank}")
    v = np.asarray(v, dtype=complex)
    if v.shape != (dim, dim) or np.max(np.abs(v.conj().T @ v - np.eye(dim))) > 1e-10:
        raise ValueError("v must be unitary on the measured space")
    blocks = dim // rank
    iso = []
    rem = dim - rank * blocks
    a0 = np.zeros((rank, dim), dtype=complex)
    a0[:rem, :] = v[rank * blocks :, :]
    iso.append(a0)
    for k in range(blocks):
        iso.append(v[k * rank : (k + 1) * rank, :].copy())
    return BlockInstrument(dim, rank, v, tuple(iso))


@dataclass(frozen=True)
class OneWayLocc:
    """Instrument on A whose classical outcome selects a channel on B."""

    instrument: Instrument
    b_channels: tuple[KrausMap, ...]

    def __post_init__(self):
        chans = tuple(self.b_channels)
        object.__setattr__(self, "b_channels", chans)
        if len(chans) != self.instrument.n_outcomes:
            raise ValueError("need one B-channel per instrument outcome")
        if any(not c.is_channel for c in chans):
            raise ValueError("B-side maps must be trace preserving")

    @property
    def dim_a(self) -> int:
        return self.instrument.dim_in

    @property
    def dim_b(self) -> int:
        return self.b_channels[0].dim_in

    def apply(self, rho) -> np.ndarray:
        m = _mat(rho)
        if m.shape[0] != self.dim_a * self.dim_b:
            raise ValueError("state dimension does not match the A (x) B split")
        out_dim = self.instrument.branches[0].dim_out * self.b_channels[0].dim_out
        out = np.zeros((out_dim, out_dim), dtype=complex)
        for branch, chan in zip(self.instrument.branches, self.b_channels):
            for a in branch.kraus:
                for b in chan.kraus:
                    op = np.kron(a, b)
                    out += op @ m @ op.conj().T
        return out


def apply_map(op, rho):
    """Uniform entry point: channels return a matrix, instruments a branch list."""
    if isinstance(op, Instrument):
        return op.apply(rho)
    if isinstance(op, BlockInstrument):
        return op.as_instrument().apply(rho)
    if isinstance(op, (KrausMap, OneWayLocc)):
        return op.apply(rho)
    raise TypeError(f"cannot apply object of type {type(op).__name__}")


def haar_unitary(dim: int, seed) -> np.ndarray:
    """Exact Haar sample: complex Ginibre, QR, phases fixed so the triangular
    factor has positive diagonal.  Deterministic per seed."""
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    rng = as_rng(seed)
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r).copy()
    d[np.abs(d) < 1e-300] = 1.0
    return q * (d / np.abs(d))


def max_entangled(L: int) -> StateVector:
    if L < 1:
        raise ValueError("Schmidt rank must be >= 1")
    v = np.eye(L, dtype=complex).reshape(-1) / math.sqrt(L)
    return StateVector(v, (L, L))


def random_pure(dims: Sequence[int] | int, seed) -> StateVector:
    rng = as_rng(seed)
    dims = (dims,) if isinstance(dims, int) else tuple(int(d) for d in dims)
    n = math.prod(dims)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return StateVector(v / np.linalg.norm(v), dims)


def random_density(dims: Sequence[int] | int, rank: int, seed) -> DensityOp:
    """Purify-and-trace sampler: Haar vector on H (x) C^rank, environment
    traced out (induced measure)."""
    dims = (dims,) if isinstance(dims, int) else tuple(int(d) for d in dims)
    d = math.prod(dims)
    psi = random_pure((d, rank), seed)
    mat = partial_trace(psi.density(), (d, rank), (0,))
    mat = (mat + mat.conj().T) / 2
    return DensityOp(mat / mat.trace().real, dims)


def separable_channel_defect(a_maps: Sequence[KrausMap], b_maps: Sequence[KrausMap]) -> float:
    """Validity check for the separable form sum_i A_i (x) B_i: both sides may
    be trace decreasing, the pairing must still be trace preserving overall.
    Returns the max-abs deviation of the total completeness from identity."""
    if len(a_maps) != len(b_maps):
        raise ValueError("need matching A and B families")
    total = None
    for a, b in zip(a_maps, b_maps):
        c = kron(a.completeness(), b.completeness())
        total = c if total is None else total + c
    d = a_maps[0].dim_in * b_maps[0].dim_in
    return float(np.max(np.abs(total - np.eye(d))))

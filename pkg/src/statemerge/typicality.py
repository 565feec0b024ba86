"""Frequency-typical projectors for tensor powers, typical reductions of
tripartite purifications, and the block-length rate schedule.

The typicality criterion groups degenerate eigenvalues into one symbol and
keeps an eigen-sequence when every symbol's empirical frequency is within
delta of that symbol's total spectral weight.  Projectors are represented
combinatorially by their typical symbol types, so rank and weight are exact
even when the d^l matrix cannot be materialized.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .qcore import (
    DensityOp,
    InfeasibleDimensionError,
    StateVector,
    _eigh_herm,
    _mat,
    cond_entropy,
    entropy,
    kron,
    numerical_rank,
    partial_trace,
    permute_systems,
)

__all__ = [
    "HOEFFDING_C",
    "TypicalProjector",
    "TypicalReduction",
    "phi_window",
    "h_block",
    "typical_projector",
    "typical_reduction",
    "rate_schedule",
    "gentle_measurement_transfer",
    "fidelity_drop_bound",
]

# Exponent constant in the weight tail, Hoeffding-style (base-two units).
HOEFFDING_C = 2.0 / math.log(2.0)

SYMBOL_TOL = 1e-9
MAX_TYPES = 2_000_000
MAX_DENSE_DIM = 4096


def phi_window(delta: float, dim: int) -> float:
    """Entropy slack of the delta-window: -delta log2(delta / d)."""
    return -delta * math.log2(delta / dim)


def h_block(block_length: int, dim: int) -> float:
    """Finite-block correction (d / l) log2(d + 1)."""
    return dim / block_length * math.log2(dim + 1)


def _group_spectrum(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Collapse degenerate eigenvalues (descending) into symbols, returning
    per-symbol eigenvalues and multiplicities."""
    vals: list[float] = []
    mult: list[int] = []
    for x in w:
        if vals and abs(vals[-1] - x) <= SYMBOL_TOL:
            mult[-1] += 1
        else:
            vals.append(float(x))
            mult.append(1)
    return np.array(vals), np.array(mult, dtype=int)


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    for cuts in itertools.combinations(range(total + parts - 1), parts - 1):
        prev = -1
        out = []
        for c in cuts:
            out.append(c - prev - 1)
            prev = c
        out.append(total + parts - 2 - prev)
        yield tuple(out)


def _multinomial(total: int, counts: Sequence[int]) -> int:
    out = 1
    rest = total
    for c in counts:
        out *= math.comb(rest, c)
        rest -= c
    return out


@dataclass(frozen=True)
class TypicalProjector:
    """Projector onto the delta-typical eigen-sequences of rho^(x)l.

    ``types`` lists the accepted symbol-count vectors; ``rank`` is exact and
    ``weight`` is tr(q rho^(x)l).  The dense matrix is only built on demand.
    """

    dim: int
    delta: float
    block_length: int
    sym_vals: np.ndarray  # per-symbol eigenvalue
    sym_mult: np.ndarray  # per-symbol multiplicity
    sym_weights: np.ndarray  # per-symbol total spectral weight
    eigvecs: np.ndarray  # d x d, columns sorted by descending eigenvalue
    types: tuple[tuple[int, ...], ...]
    rank: int
    weight: float

    @property
    def base_entropy(self) -> float:
        v = self.sym_vals[self.sym_vals > 0]
        m = self.sym_mult[self.sym_vals > 0]
        return float(-(m * v * np.log2(v)).sum()) if v.size else 0.0

    def max_typical_eigenvalue(self) -> float:
        """Largest probability of a typical eigen-sequence (zero if empty)."""
        best = 0.0
        logs = np.array([math.log(v) if v > 0 else -math.inf for v in self.sym_vals])
        for t in self.types:
            s = sum(n * lg for n, lg in zip(t, logs) if n)
            best = max(best, math.exp(s) if s > -math.inf else 0.0)
        return best

    def bounds(self) -> dict[str, float]:
        l, d, delta = self.block_length, self.dim, self.delta
        s = self.base_entropy
        return {
            "weight_lower": 1.0 - 2.0 ** (-l * (HOEFFDING_C * delta**2 - h_block(l, d))),
            "eig_upper": 2.0 ** (-l * (s - phi_window(delta, d))),
            "rank_lower": 2.0 ** (l * (s - phi_window(delta, d) - h_block(l, d))),
            "rank_upper": 2.0 ** (l * (s + phi_window(delta, d))),
        }

    def _symbol_of_index(self) -> np.ndarray:
        reps = np.repeat(np.arange(self.sym_vals.size), self.sym_mult)
        return reps

    def sequence_indicator(self) -> np.ndarray:
        """0/1 vector over the d^l product eigenbasis (dense budget only)."""
        d, l = self.dim, self.block_length
        if d**l > MAX_DENSE_DIM:
            raise InfeasibleDimensionError(f"d^l = {d**l} exceeds the dense budget")
        sym = self._symbol_of_index()
        accepted = set(self.types)
        ind = np.zeros(d**l)
        for i, seq in enumerate(itertools.product(range(d), repeat=l)):
            counts = [0] * self.sym_vals.size
            for j in seq:
                counts[sym[j]] += 1
            if tuple(counts) in accepted:
                ind[i] = 1.0
        return ind

    def matrix(self) -> np.ndarray:
        ind = self.sequence_indicator()
        basis = self.eigvecs
        w = basis
        for _ in range(self.block_length - 1):
            w = np.kron(w, basis)
        return (w * ind) @ w.conj().T


def typical_projector(rho, delta: float, block_length: int) -> TypicalProjector:
    """Frequency-typical projector of rho^(x)l at per-symbol tolerance delta."""
    if not 0.0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 1/2)")
    if block_length < 1:
        raise ValueError("block length must be >= 1")
    m = _mat(rho)
    w, v = _eigh_herm(m)
    w = np.clip(w, 0.0, None)
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    d = m.shape[0]
    sym_vals, sym_mult = _group_spectrum(w)
    sym_weights = sym_vals * sym_mult
    n_sym = sym_vals.size
    n_types = math.comb(block_length + n_sym - 1, n_sym - 1)
    if n_types > MAX_TYPES:
        raise InfeasibleDimensionError(f"{n_types} candidate types exceed the budget")
    types, rank, weight = [], 0, 0.0
    for counts in _compositions(block_length, n_sym):
        ok = all(
            abs(c / block_length - q) <= delta + 1e-12
            for c, q in zip(counts, sym_weights)
        )
        if not ok:
            continue
        if any(c > 0 and q <= 0 for c, q in zip(counts, sym_weights)):
            continue
        types.append(counts)
        coef = _multinomial(block_length, counts)
        rank += coef * math.prod(int(mu) ** c for mu, c in zip(sym_mult, counts))
        weight += coef * math.prod(q**c for q, c in zip(sym_weights, counts))
    return TypicalProjector(
        dim=d,
        delta=delta,
        block_length=block_length,
        sym_vals=sym_vals,
        sym_mult=sym_mult,
        sym_weights=sym_weights,
        eigvecs=v,
        types=tuple(types),
        rank=int(rank),
        weight=float(weight),
    )


@dataclass(frozen=True)
class TypicalReduction:
    """Tripartite purification cut down by the product of the marginal
    typical projectors and renormalized."""

    psi: StateVector  # reduced, dims (dA^l, dB^l, dE^l)
    weight: float
    delta: float
    block_length: int
    base_dims: tuple[int, int, int]
    rho_b: np.ndarray
    rho_e: np.ndarray
    s_b: float  # entropy of the one-copy B marginal
    s_ab: float  # entropy of the one-copy AB marginal

    @property
    def joint_dim(self) -> int:
        return math.prod(self.base_dims)

    def hs_norm_b(self) -> float:
        return float(np.linalg.norm(self.rho_b))

    def rank_e(self) -> int:
        return numerical_rank(self.rho_e)

    def bounds(self) -> dict[str, float]:
        l, delta = self.block_length, self.delta
        d = self.joint_dim
        tail = 2.0 ** (-l * (HOEFFDING_C * delta**2 - h_block(l, d)))
        return {
            "weight_lower": 1.0 - 4.0 * tail,
            "hs_b_upper": 2.0 ** (-l / 2 * (self.s_b - 3 * phi_window(delta, d) - h_block(l, d)))
            / self.weight,
            "rank_e_upper": 2.0 ** (l * (self.s_ab + phi_window(delta, d))),
        }


def typical_reduction(psi: StateVector, delta: float, block_length: int) -> TypicalReduction:
    """Apply q_A (x) q_B (x) q_E to psi^(x)l and renormalize."""
    if len(psi.dims) != 3:
        raise ValueError("expected a tripartite purification (A, B, E)")
    da, db, de = psi.dims
    l = block_length
    total = (da * db * de) ** l
    if total > 250_000:
        raise InfeasibleDimensionError(f"tensor power dimension {total} too large")
    rho = psi.density()
    marg_a = partial_trace(rho, psi.dims, (0,))
    marg_b = partial_trace(rho, psi.dims, (1,))
    marg_e = partial_trace(rho, psi.dims, (2,))
    q_a = typical_projector(marg_a, delta, l).matrix()
    q_b = typical_projector(marg_b, delta, l).matrix()
    q_e = typical_projector(marg_e, delta, l).matrix()
    power = psi.vec
    for _ in range(l - 1):
        power = np.kron(power, psi.vec)
    # regroup ((ABE))^l -> A^l B^l E^l
    order = [3 * i for i in range(l)] + [3 * i + 1 for i in range(l)] + [3 * i + 2 for i in range(l)]
    power = permute_systems(power, (da, db, de) * l, order)
    t = power.reshape(da**l, db**l, de**l)
    cut = np.einsum("ij,kl,mn,jln->ikm", q_a, q_b, q_e, t)
    w = float(np.linalg.norm(cut) ** 2)
    if w <= 0:
        raise ValueError("typical reduction annihilated the state")
    cut = cut / math.sqrt(w)
    rho_b = np.einsum("abe,ace->bc", cut, cut.conj())
    rho_e = np.einsum("abe,abf->ef", cut, cut.conj())
    return TypicalReduction(
        psi=StateVector(cut.reshape(-1), (da**l, db**l, de**l)),
        weight=w,
        delta=delta,
        block_length=l,
        base_dims=(da, db, de),
        rho_b=rho_b,
        rho_e=rho_e,
        s_b=entropy(marg_b),
        s_ab=entropy(partial_trace(rho, psi.dims, (0, 1))),
    )


def rate_schedule(ensemble, epsilon: float, block_length: int) -> tuple[int, int, int]:
    """Entanglement schedule (L_l, K, D_l) for the block protocol.

    The output rank grows as 2^(-l (s + eps)) with s the worst conditional
    entropy; when s >= 0 a per-copy maximally entangled pair of rank
    2^(ceil(s) + 1) is adjoined so the assisted states have negative
    conditional entropy.  D_l counts the instrument outcomes.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    states = getattr(ensemble, "states", ensemble)
    states = list(states)
    s = max(cond_entropy(st.mat, (0,), st.dims) for st in states)
    d_a = states[0].dims[0]
    l = block_length
    if s < 0:
        k_rank = 1
        exponent = -l * (s + epsilon)
    else:
        k_rank = 2 ** (math.ceil(s) + 1)
        exponent = -l * (s - math.ceil(s) - 1 + epsilon)
    l_l = max(1, math.floor(2.0**exponent))
    l_l = min(l_l, (k_rank * d_a) ** l)
    d_l = (k_rank * d_a) ** l // l_l
    return l_l, k_rank, d_l


def fidelity_drop_bound(block_length: int, n_states: int, delta: float, dim: int) -> float:
    """Closed-form fidelity loss for the typically-reduced ensemble."""
    l, n = block_length, n_states
    tail = 2.0 ** (-l * (HOEFFDING_C * delta**2 - h_block(l, dim)))
    denom = 1.0 - 4.0 * tail
    if denom <= 0:
        return float("inf")
    return 2.0 * n * (2.0 ** (-6 * l * phi_window(delta, dim)) + 2.0 * n * 2.0 ** (-l / 2 * phi_window(delta, dim)) / denom)


def gentle_measurement_transfer(
    f_tilde: float, block_length: int, n_states: int, delta: float, dim: int
) -> float:
    """Fidelity loss on the original states given loss ``f_tilde`` on the
    typically-reduced ones, plus the measurement-disturbance overhead.

    Both contributions are added; a loss transfer cannot shrink when the
    reduction itself disturbs the state.
    """
    if f_tilde < 0:
        raise ValueError("fidelity loss must be non-negative")
    l = block_length
    tail = 2.0 ** (-l * (HOEFFDING_C * delta**2 - h_block(l, dim)))
    return 2.0 * math.sqrt(f_tilde) + 2.0 * math.sqrt(32.0 * tail)

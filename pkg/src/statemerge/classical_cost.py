"""Classical-communication accounting: outcome counting, the universal
lower bound in terms of environment mutual information, the block-protocol
converse/achievability rates, and the orthogonal-support cost-gap example."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .qcore import DensityOp, entropy, fannes_eta, kron, partial_trace
from .channels import BlockInstrument, Instrument, OneWayLocc
from .merging import MergingProtocol, StateEnsemble, merging_cost

__all__ = [
    "CostReport",
    "GapExample",
    "count_outcomes",
    "environment_mutual_info",
    "classical_cost_lower_bound",
    "block_cost_lower_bound",
    "block_achievable_rate",
    "gap_example",
    "cost_report",
]


def count_outcomes(protocol) -> int:
    """Number of instrument branches with nonzero Kraus content."""
    if isinstance(protocol, MergingProtocol):
        return protocol.instrument.outcome_count_nonzero()
    if isinstance(protocol, BlockInstrument):
        return protocol.outcome_count_nonzero()
    if isinstance(protocol, OneWayLocc):
        inst = protocol.instrument
    elif isinstance(protocol, Instrument):
        inst = protocol
    else:
        raise TypeError(f"cannot count outcomes of {type(protocol).__name__}")
    return sum(
        1 for b in inst.branches if any(np.max(np.abs(k)) > 1e-12 for k in b.kraus)
    )


def environment_mutual_info(rho: DensityOp) -> float:
    """I(A;E) of the canonical purification, via complementary marginals:
    S(rho_A) + S(rho_AB) - S(rho_B)."""
    if len(rho.dims) != 2:
        raise ValueError("expected a bipartite state")
    s_a = entropy(rho.marginal((0,)).mat)
    s_b = entropy(rho.marginal((1,)).mat)
    return s_a + entropy(rho.mat) - s_b


def classical_cost_lower_bound(
    rho: DensityOp, epsilon: float, l: int, in_rank: int, out_rank: int
) -> float:
    """Universal floor on (1/l) log D for any one-way protocol merging
    rho^(x)l at fidelity 1 - epsilon with entanglement ranks (K, L)."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    d_ab = math.prod(rho.dims)
    slack = 6.0 * math.sqrt(epsilon) * (math.log2(in_rank * out_rank) / l + math.log2(d_ab))
    return (
        environment_mutual_info(rho)
        - slack
        - 3.0 * fannes_eta(min(2.0 * math.sqrt(epsilon), 1.0))
    )


def block_cost_lower_bound(
    ensemble, l: int, in_rank: int, out_rank: int, delta: float
) -> float:
    """Converse floor for protocols restricted to block mergings:
    max_i S(rho_A,i) + (1/l) log(K/L) - delta."""
    states = getattr(ensemble, "states", ensemble)
    s_a = max(entropy(partial_trace(s.mat, s.dims, (0,))) for s in states)
    return s_a + math.log2(in_rank / out_rank) / l - delta


def block_achievable_rate(ensemble, delta: float) -> float:
    """Classical rate the block protocol actually attains:
    max_i S(rho_A,i) + max_i S(A|B, rho_i) + delta."""
    states = getattr(ensemble, "states", ensemble)
    s_a = max(entropy(partial_trace(s.mat, s.dims, (0,))) for s in states)
    return s_a + merging_cost(states) + delta


@dataclass(frozen=True)
class GapExample:
    """Two-state set with orthogonal A-supports: a rank-``ent_rank``
    maximally entangled state next to pi_M (x) pi_M.  State identification
    followed by per-state merging beats any block protocol whenever
    M < ent_rank."""

    ent_rank: int
    mix_rank: int
    states: StateEnsemble
    optimal_cost: float  # max_i I(A;E)
    block_cost: float  # max_i S(rho_A,i) + max_i S(A|B)
    discrimination_probability: float

    @property
    def has_gap(self) -> bool:
        return self.optimal_cost < self.block_cost - 1e-12

    def closed_forms(self) -> tuple[float, float]:
        return 2.0 * math.log2(self.mix_rank), math.log2(self.ent_rank) + math.log2(self.mix_rank)

    def to_markdown(self) -> str:
        opt, blk = self.optimal_cost, self.block_cost
        lines = [
            "| quantity | value [bits/copy] |",
            "|---|---|",
            f"| identification-based cost | {opt:.12g} |",
            f"| block-protocol cost | {blk:.12g} |",
            f"| gap | {blk - opt:.12g} |",
            f"| single-copy discrimination probability | {self.discrimination_probability:.12g} |",
        ]
        return "\n".join(lines)


def gap_example(ent_rank: int, mix_rank: int) -> GapExample:
    """Construct the two-member set explicitly and evaluate both costs from
    the states (not from the closed forms)."""
    if not ent_rank > mix_rank >= 1:
        raise ValueError("need ent_rank > mix_rank >= 1")
    L, M = ent_rank, mix_rank
    d = L + M
    # member 1: maximally entangled on the first L basis vectors of both sides
    vec = np.zeros(d * d, dtype=complex)
    for i in range(L):
        vec[i * d + i] = 1.0 / math.sqrt(L)
    rho1 = np.outer(vec, vec.conj())
    # member 2: pi_M (x) pi_M on the last M basis vectors of both sides
    block = np.zeros((d, d), dtype=complex)
    block[L:, L:] = np.eye(M) / M
    rho2 = kron(block, block)
    ens = StateEnsemble.from_states([rho1, rho2], dims=(d, d))
    supports = []
    for rho in ens.states:
        a = rho.marginal((0,)).mat
        w, v = np.linalg.eigh((a + a.conj().T) / 2)
        supports.append(v[:, w > 1e-10])
    overlap = np.max(np.abs(supports[0].conj().T @ supports[1]))
    if overlap > 1e-10:
        raise AssertionError("A-side supports are not orthogonal")
    # single-copy identification: project onto the two supports
    p_ok = []
    for i, rho in enumerate(ens.states):
        proj = supports[i] @ supports[i].conj().T
        p_ok.append(np.trace(proj @ rho.marginal((0,)).mat).real)
    optimal = max(environment_mutual_info(s) for s in ens.states)
    block_rate = block_achievable_rate(ens, 0.0)
    return GapExample(
        ent_rank=L,
        mix_rank=M,
        states=ens,
        optimal_cost=float(optimal),
        block_cost=float(block_rate),
        discrimination_probability=float(min(p_ok)),
    )


@dataclass(frozen=True)
class CostReport:
    """Per-configuration classical-cost summary."""

    l: int
    outcomes: int
    in_rank: int
    out_rank: int
    epsilon: float
    delta: float
    prop_bound: float
    block_bound: float
    block_rate: float
    mutual_infos: tuple[float, ...]
    a_entropies: tuple[float, ...]

    CSV_COLUMNS = (
        "l[copies]",
        "D[outcomes]",
        "K[rank]",
        "L[rank]",
        "epsilon[1]",
        "delta[bits]",
        "prop_bound[bits/copy]",
        "block_bound[bits/copy]",
        "block_rate[bits/copy]",
        "max_I_AE[bits]",
        "max_S_A[bits]",
    )

    def csv_row(self) -> tuple:
        return (
            self.l,
            self.outcomes,
            self.in_rank,
            self.out_rank,
            self.epsilon,
            self.delta,
            self.prop_bound,
            self.block_bound,
            self.block_rate,
            max(self.mutual_infos),
            max(self.a_entropies),
        )


def cost_report(
    ensemble: StateEnsemble,
    epsilon: float,
    l: int,
    in_rank: int,
    out_rank: int,
    delta: float,
    outcomes: int | None = None,
) -> CostReport:
    infos = tuple(environment_mutual_info(s) for s in ensemble.states)
    s_as = tuple(entropy(s.marginal((0,)).mat) for s in ensemble.states)
    prop = max(
        classical_cost_lower_bound(s, epsilon, l, in_rank, out_rank) for s in ensemble.states
    )
    if outcomes is None:
        outcomes = (in_rank * ensemble.d_a) ** l // out_rank
    return CostReport(
        l=l,
        outcomes=outcomes,
        in_rank=in_rank,
        out_rank=out_rank,
        epsilon=epsilon,
        delta=delta,
        prop_bound=prop,
        block_bound=block_cost_lower_bound(ensemble, l, in_rank, out_rank, delta),
        block_rate=block_achievable_rate(ensemble, delta),
        mutual_infos=infos,
        a_entropies=s_as,
    )

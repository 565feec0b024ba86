"""Protocols derived from merging: one-way entanglement distillation, the
instrument-preprocessed hashing objective with its seeded search, and
entanglement-generation codes for finite channel sets."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .qcore import (
    DensityOp,
    StateVector,
    cond_entropy,
    fidelity,
    partial_trace,
    _mat,
)
from .channels import (
    Instrument,
    KrausMap,
    OneWayLocc,
    haar_unitary,
    max_entangled,
    split_rngs,
)
from .merging import MergingProtocol, StateEnsemble, merging_cost

__all__ = [
    "DistillationProtocol",
    "EntGenCode",
    "hashing_value",
    "distill_from_merging",
    "distillation_fidelity",
    "distillation_objective",
    "distillation_search",
    "induced_states",
    "entgen_from_distillation",
]

BRANCH_TOL = 1e-12


def hashing_value(ensemble) -> float:
    """Distillable-rate floor for one-way protocols: minus the worst
    conditional entropy."""
    return -merging_cost(ensemble)


@dataclass(frozen=True)
class DistillationProtocol:
    """One-way LOCC that turns copies of the source into near-maximal
    entanglement of rank ``out_rank``: the merging instrument on A plus
    recovery channels that decode and discard everything but K_B."""

    instrument_isometries: tuple[np.ndarray, ...]
    recoveries: tuple[KrausMap, ...]
    out_rank: int
    d_a: int
    d_b: int

    @property
    def n_outcomes(self) -> int:
        return len(self.instrument_isometries)

    def apply(self, rho) -> np.ndarray:
        m = _mat(rho)
        L = self.out_rank
        out = np.zeros((L * L, L * L), dtype=complex)
        for a, rec in zip(self.instrument_isometries, self.recoveries):
            for r in rec.kraus:
                op = np.kron(a, r)
                out += op @ m @ op.conj().T
        return out

    def as_one_way_locc(self) -> OneWayLocc:
        inst = Instrument(tuple(KrausMap((a,)) for a in self.instrument_isometries))
        return OneWayLocc(inst, self.recoveries)


def distill_from_merging(protocol: MergingProtocol) -> DistillationProtocol:
    """Drop the transferred share: each recovery is the decoder isometry
    followed by tracing out everything except K_B.  Discarding registers
    cannot decrease fidelity, so the distilled output is at least as close
    to phi_L as the merging output was to its target."""
    if protocol.in_rank != 1:
        raise ValueError("distillation expects a protocol built without input entanglement")
    L = protocol.out_rank
    da, db = protocol.d_a_full, protocol.d_b_full
    recoveries = []
    for u in protocol.decoders:
        kraus = []
        ut = u.reshape(L, da * db, db)
        for j in range(da * db):
            kraus.append(ut[:, j, :])
        recoveries.append(KrausMap(tuple(kraus)))
    return DistillationProtocol(
        instrument_isometries=protocol.instrument.isometries,
        recoveries=tuple(recoveries),
        out_rank=L,
        d_a=da,
        d_b=db,
    )


def distillation_fidelity(protocol: DistillationProtocol, rho) -> float:
    target = max_entangled(protocol.out_rank)
    return fidelity(protocol.apply(rho), target.density())


# ---------------------------------------------------------------------------
# Instrument-preprocessed hashing objective
# ---------------------------------------------------------------------------


def distillation_objective(ensemble, instrument: Instrument) -> float:
    """Negative worst-case branch-averaged conditional entropy after the
    sender-side instrument; zero-probability branches are skipped."""
    states = getattr(ensemble, "states", ensemble)
    worst = -math.inf
    for s in states:
        da, db = s.dims
        rho_a = partial_trace(s.mat, s.dims, (0,))
        total = 0.0
        for branch in instrument.branches:
            lam = float(np.clip(branch.apply(rho_a).trace().real, 0.0, None))
            if lam <= BRANCH_TOL:
                continue
            out = np.zeros(
                (branch.dim_out * db, branch.dim_out * db), dtype=complex
            )
            for k in branch.kraus:
                op = np.kron(k, np.eye(db))
                out += op @ s.mat @ op.conj().T
            total += lam * cond_entropy(out / lam, (0,), (branch.dim_out, db))
        worst = max(worst, total)
    return -worst


def _dilated_instrument(d: int, branches: int, unitary: np.ndarray) -> Instrument:
    """Read a J-branch instrument off an isometry H_A -> C^J (x) H_A given by
    the first d columns of a Haar unitary on the dilation space."""
    v = unitary[:, :d]
    kraus = [v[j * d : (j + 1) * d, :] for j in range(branches)]
    return Instrument(tuple(KrausMap((k,)) for k in kraus))


def distillation_search(ensemble, trials: int, seed: int):
    """Seeded random + local-perturbation search over instruments with at
    most d_A^2 branches; returns ``(instrument, value)``.

    The identity instrument and the canonical complete measurement are fixed
    baselines, so the result is always a certified lower bound at least as
    good as the plain hashing value, and it is monotone in ``trials``.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    states = getattr(ensemble, "states", ensemble)
    d = states[0].dims[0]
    max_branches = d * d
    best_inst = Instrument.identity(d)
    best_val = distillation_objective(ensemble, best_inst)
    for cand in (Instrument.complete_measurement(d),):
        val = distillation_objective(ensemble, cand)
        if val > best_val:
            best_val, best_inst = val, cand
    best_center = None  # dilation unitary of the best random candidate
    rngs = split_rngs(seed, trials)
    for i in range(trials):
        rng = rngs[i]
        explore = (i % 2 == 0) or best_center is None
        branches = int(rng.integers(2, max_branches + 1))
        if explore:
            u = haar_unitary(branches * d, rng)
        else:
            center, cb = best_center
            branches = cb
            eps = 0.3 * 0.97**i + 0.01
            g = rng.standard_normal((branches * d, branches * d)) + 1j * rng.standard_normal(
                (branches * d, branches * d)
            )
            q, r = np.linalg.qr(center + eps * g / math.sqrt(2 * branches * d))
            u = q * (np.diagonal(r) / np.abs(np.diagonal(r)))
        cand = _dilated_instrument(d, branches, u)
        val = distillation_objective(ensemble, cand)
        if val > best_val + 1e-15:
            best_val, best_inst = val, cand
            best_center = (u, branches)
    return best_inst, float(best_val)


# ---------------------------------------------------------------------------
# Entanglement generation over finite channel sets
# ---------------------------------------------------------------------------


def _symmetric_purification(rho: DensityOp) -> StateVector:
    """Purification on H (x) H whose partial trace over either factor is rho
    (eigenbasis on both sides)."""
    m = _mat(rho)
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    w = np.clip(w, 0.0, None)
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    d = m.shape[0]
    vec = np.zeros(d * d, dtype=complex)
    for lam, col in zip(w, v.T):
        if lam <= 0:
            continue
        vec += math.sqrt(lam) * np.kron(col, col)
    return StateVector(vec / np.linalg.norm(vec), (d, d))


def induced_states(channels: Sequence[KrausMap], rho_in: DensityOp) -> StateEnsemble:
    """Bipartite set generated by sending half of the symmetric purification
    of ``rho_in`` through each channel."""
    chans = list(channels)
    d = rho_in.dim
    if any(c.dim_in != d for c in chans):
        raise ValueError("channel input dimensions do not match the state")
    if any(c.dim_out != chans[0].dim_out for c in chans):
        raise ValueError("channels must share one output dimension")
    chi = _symmetric_purification(rho_in)
    chi_mat = chi.density()
    out = []
    for c in chans:
        m = np.zeros((d * c.dim_out, d * c.dim_out), dtype=complex)
        for k in c.kraus:
            op = np.kron(np.eye(d), k)
            m += op @ chi_mat @ op.conj().T
        out.append(DensityOp((m + m.conj().T) / 2, (d, c.dim_out)))
    return StateEnsemble.from_states(out)


@dataclass(frozen=True)
class EntGenCode:
    """Entanglement-generating code: input pure state on K^l (x) H_A^l plus
    a decoder channel on the receiver side."""

    recovery: KrausMap
    input_state: StateVector
    out_rank: int
    chosen_branch: int
    branch_probs: tuple[float, ...]
    min_fidelity: float
    weighted_min_fidelity: float  # sum_k p_k min_i F(code_k)
    per_channel: tuple[float, ...]


def entgen_from_distillation(
    protocol: DistillationProtocol,
    channels: Sequence[KrausMap],
    rho_in: DensityOp,
) -> EntGenCode:
    """Enumerate the candidate codes carried by the distillation branches
    and keep the one with the best worst-channel fidelity.

    Branch k proposes the pure state (a_k (x) 1) chi / sqrt(p_k) together
    with recovery R_k; the maximum over k dominates the p_k-weighted
    average, which is the selection argument."""
    chans = list(channels)
    chi = _symmetric_purification(rho_in)
    d = rho_in.dim
    L = protocol.out_rank
    target = max_entangled(L).density()
    chi_t = chi.vec.reshape(d, d)
    probs, cand_states, cand_fids = [], [], []
    for a, rec in zip(protocol.instrument_isometries, protocol.recoveries):
        branch_vec = np.einsum("ka,ab->kb", a, chi_t)  # instrument on the reference side
        p = float(np.linalg.norm(branch_vec) ** 2)
        probs.append(p)
        if p <= BRANCH_TOL:
            cand_states.append(None)
            cand_fids.append(tuple(0.0 for _ in chans))
            continue
        phi_k = branch_vec.reshape(-1) / math.sqrt(p)
        phi_mat = np.outer(phi_k, phi_k.conj())
        fids = []
        for c in chans:
            pipeline = c.then(rec)
            m = np.zeros((L * L, L * L), dtype=complex)
            for k in pipeline.kraus:
                op = np.kron(np.eye(L), k)
                m += op @ phi_mat @ op.conj().T
            fids.append(fidelity(m, target))
        cand_states.append(StateVector(phi_k, (L, d)))
        cand_fids.append(tuple(fids))
    if all(p <= BRANCH_TOL for p in probs):
        raise RuntimeError("all instrument branches have zero probability")
    mins = [min(f) for f in cand_fids]
    chosen = int(np.argmax(mins))  # ties resolve to the smaller index
    weighted = float(sum(p * m for p, m in zip(probs, mins)))
    return EntGenCode(
        recovery=protocol.recoveries[chosen],
        input_state=cand_states[chosen],
        out_rank=L,
        chosen_branch=chosen,
        branch_probs=tuple(probs),
        min_fidelity=float(mins[chosen]),
        weighted_min_fidelity=weighted,
        per_channel=cand_fids[chosen],
    )

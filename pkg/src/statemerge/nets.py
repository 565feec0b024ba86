"""Covering nets on the state simplex and the approximation transfer
formulas that lift finite-set merging results to arbitrary sets.

Nets are built constructively: greedy farthest-point insertion over a
seeded probe sample, with a fresh-probe covering certificate recomputed on
demand rather than trusted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .qcore import cond_entropy, trace_norm, _mat
from .channels import as_rng, random_density

__all__ = [
    "StateNet",
    "trace_distance",
    "cardinality_ceiling",
    "build_net",
    "verify_cover",
    "approx_subnet",
    "tensor_distance",
    "entropy_stability",
    "net_fidelity_transfer",
    "save_net",
    "load_net",
    "tau_schedule",
]

NET_FORMAT_VERSION = 1


def trace_distance(a, b) -> float:
    return trace_norm(_mat(a) - _mat(b))


def cardinality_ceiling(d: int, tau: float) -> float:
    return (3.0 / tau) ** (2 * d * d)


@dataclass(frozen=True)
class StateNet:
    """Finite covering of the state simplex at trace-norm radius tau."""

    d: int
    tau: float
    seed: int
    centers: tuple[np.ndarray, ...]
    certificate: float  # empirical max covering distance over fresh probes
    build_probes: int

    @property
    def size(self) -> int:
        return len(self.centers)


def _sample_states(d: int, count: int, rng) -> list[np.ndarray]:
    return [random_density(d, d, rng).mat for _ in range(count)]


def build_net(
    d: int,
    tau: float,
    probes: int = 10_000,
    seed: int = 0,
    slack: float = 0.9,
    max_centers: int | None = None,
) -> StateNet:
    """Greedy farthest-point net over a probe sample.

    New centers are inserted while some probe sits farther than
    ``slack * tau`` from every existing center, which leaves margin for the
    fresh-probe certificate.  Fails if coverage is not reached within the
    center budget (default: the covering-number ceiling).
    """
    if not 0.0 < tau <= 2.0:
        raise ValueError("tau must lie in (0, 2]")
    rng = as_rng(seed)
    sample = _sample_states(d, probes, rng)
    budget = max_centers if max_centers is not None else cardinality_ceiling(d, tau)
    centers = [np.eye(d, dtype=complex) / d]
    dists = np.array([trace_distance(s, centers[0]) for s in sample])
    threshold = slack * tau
    while dists.size and dists.max() > threshold:
        if len(centers) + 1 > budget:
            raise RuntimeError(
                f"probe budget exhausted without coverage; worst distance {dists.max():.6f}"
            )
        idx = int(np.argmax(dists))
        centers.append(sample[idx])
        new = np.array([trace_distance(s, centers[-1]) for s in sample])
        dists = np.minimum(dists, new)
    net = StateNet(
        d=d,
        tau=tau,
        seed=int(seed) if not isinstance(seed, np.random.Generator) else -1,
        centers=tuple(centers),
        certificate=float("nan"),
        build_probes=probes,
    )
    cert = verify_cover(net, probes, _derive_verify_seed(seed))
    return StateNet(net.d, net.tau, net.seed, net.centers, cert, probes)


def _derive_verify_seed(seed) -> int:
    if isinstance(seed, np.random.Generator):
        return 0x5EED
    return (int(seed) * 2654435761 + 0x5EED) % (2**63)


def verify_cover(net: StateNet, probes: int, seed) -> float:
    """Recompute the covering certificate on fresh probes: the maximum over
    probes of the distance to the nearest center."""
    rng = as_rng(seed)
    worst = 0.0
    for s in _sample_states(net.d, probes, rng):
        best = min(trace_distance(s, c) for c in net.centers)
        worst = max(worst, best)
    return float(worst)


def approx_subnet(states, net: StateNet, tau: float, sampler_count: int = 4096) -> list[np.ndarray]:
    """Centers of a tau/2 net that lie within tau/2 of some member of the
    given set (a sequence of states, a StateEnsemble, or a sampler callable
    mapping an index to a state)."""
    if callable(states):
        members = [_mat(states(i)) for i in range(sampler_count)]
    else:
        members = [_mat(s) for s in getattr(states, "states", states)]
    kept = []
    for c in net.centers:
        if any(trace_distance(c, m) < tau / 2 + 1e-12 for m in members):
            kept.append(c)
    return kept


def tensor_distance(rho, sigma, l: int) -> tuple[float, float]:
    """Exact trace distance of the l-fold tensor powers and the telescoping
    ceiling l * ||rho - sigma||_1."""
    a = _mat(rho)
    b = _mat(sigma)
    if a.shape[0] ** l > 4096:
        raise ValueError("tensor power too large for an exact trace norm")
    pa, pb = a.copy(), b.copy()
    for _ in range(l - 1):
        pa = np.kron(pa, a)
        pb = np.kron(pb, b)
    return trace_norm(pa - pb), l * trace_norm(a - b)


def entropy_stability(states, subnet, dims: Sequence[int], tau: float) -> tuple[float, float]:
    """Gap between the conditional-entropy suprema of a set and its subnet,
    with the continuity ceiling tau + 2 tau log2(d_AB / tau)."""
    def _vals(group):
        return [cond_entropy(_mat(s), (0,), getattr(s, "dims", dims)) for s in getattr(group, "states", group)]

    d_ab = math.prod(dims)
    gap = abs(max(_vals(states)) - max(_vals(subnet)))
    ceiling = tau + 2.0 * tau * math.log2(d_ab / tau)
    return gap, ceiling


def net_fidelity_transfer(epsilon: float, l: int, tau: float) -> float:
    """Fidelity floor on the whole set given min fidelity 1 - epsilon on the
    subnet: 1 - 2 sqrt(eps) - 4 sqrt(l tau)."""
    if epsilon < 0 or tau < 0:
        raise ValueError("epsilon and tau must be non-negative")
    return 1.0 - 2.0 * math.sqrt(epsilon) - 4.0 * math.sqrt(l * tau)


def tau_schedule(l: int) -> float:
    """Block-length radius schedule tau_l = l^-3, which drives
    sqrt(l * tau_l) -> 0 while the net cardinality grows polynomially."""
    return float(l) ** -3


def save_net(net: StateNet, path) -> None:
    np.savez(
        path,
        format_version=np.array([NET_FORMAT_VERSION]),
        d=np.array([net.d]),
        tau=np.array([net.tau]),
        seed=np.array([net.seed]),
        certificate=np.array([net.certificate]),
        build_probes=np.array([net.build_probes]),
        centers=np.stack(net.centers),
    )


def load_net(path) -> StateNet:
    data = np.load(path)
    if int(data["format_version"][0]) != NET_FORMAT_VERSION:
        raise ValueError("unsupported net file version")
    centers = tuple(c for c in data["centers"])
    return StateNet(
        d=int(data["d"][0]),
        tau=float(data["tau"][0]),
        seed=int(data["seed"][0]),
        centers=centers,
        certificate=float(data["certificate"][0]),
        build_probes=int(data["build_probes"][0]),
    )

"""Dense complex linear algebra and quantum-information primitives.

Operators are dense complex numpy arrays.  Composite systems carry a
dimension signature ``dims`` (tuple of subsystem dimensions whose product
equals the matrix dimension).  Subsystem order is fixed as A, B, E with
auxiliary registers appended on the right; every tensor reordering goes
through :func:`permute_systems` so there is exactly one place where index
arithmetic happens.

Numerical conventions:

* every eigendecomposition acts on the hermitized input ``(m + m†) / 2``,
* eigenvalue dust in ``[-1e-12, 0)`` is clipped to zero (trace-preserving
  rescale for fidelity inputs, renormalization for entropy inputs),
* logarithms are base two and ``0 * log 0 == 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Dims",
    "DensityOp",
    "StateVector",
    "InfeasibleDimensionError",
    "kron",
    "kron_all",
    "permute_systems",
    "partial_trace",
    "purify",
    "schmidt",
    "fidelity",
    "trace_norm",
    "hs_norm",
    "entropy",
    "cond_entropy",
    "mutual_info",
    "coherent_info",
    "fannes_eta",
    "maximally_mixed",
    "dm",
    "numerical_rank",
]

Dims = tuple[int, ...]

HERM_TOL = 1e-10
PSD_TOL = 1e-8  # inputs with eigenvalues below -PSD_TOL are rejected
DUST = 1e-12
RANK_TOL = 1e-10
LOG2E = math.log2(math.e)


class InfeasibleDimensionError(ValueError):
    """A requested construction exceeds the dense-matrix budget."""


def _mat(op) -> np.ndarray:
    m = np.asarray(getattr(op, "mat", op), dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def _vec(psi) -> np.ndarray:
    v = np.asarray(getattr(psi, "vec", psi), dtype=complex)
    if v.ndim != 1:
        raise ValueError(f"expected a vector, got shape {v.shape}")
    return v


def _dims_of(op, dims: Sequence[int] | None) -> Dims:
    if dims is None:
        dims = getattr(op, "dims", None)
    if dims is None:
        raise ValueError("dims required for a bare array")
    out = tuple(int(d) for d in dims)
    if any(d < 1 for d in out):
        raise ValueError(f"subsystem dimensions must be >= 1, got {out}")
    return out


@dataclass(frozen=True)
class DensityOp:
    """Hermitian PSD trace-one matrix with a subsystem-dimension signature."""

    mat: np.ndarray
    dims: Dims

    def __post_init__(self):
        m = _mat(self.mat)
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "mat", m)
        object.__setattr__(self, "dims", dims)
        if math.prod(dims) != m.shape[0]:
            raise ValueError(f"dims {dims} do not match matrix dimension {m.shape[0]}")
        if np.max(np.abs(m - m.conj().T)) > HERM_TOL:
            raise ValueError("matrix is not Hermitian within 1e-10")
        w = np.linalg.eigvalsh((m + m.conj().T) / 2)
        if w.min() < -1e-10:
            raise ValueError(f"matrix has negative eigenvalue {w.min():.3e}")
        if abs(m.trace().real - 1.0) > 1e-10:
            raise ValueError(f"trace {m.trace().real!r} is not 1 within 1e-10")

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    def marginal(self, keep: Iterable[int]) -> "DensityOp":
        keep = tuple(sorted(keep))
        out = partial_trace(self.mat, self.dims, keep)
        return DensityOp(out, tuple(self.dims[i] for i in keep))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh((self.mat + self.mat.conj().T) / 2)

    def rank(self) -> int:
        return numerical_rank(self.mat)


@dataclass(frozen=True)
class StateVector:
    """Complex column vector with dims; norm may be <= 1 (instrument branches)."""

    vec: np.ndarray
    dims: Dims

    def __post_init__(self):
        v = _vec(self.vec)
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "vec", v)
        object.__setattr__(self, "dims", dims)
        if math.prod(dims) != v.size:
            raise ValueError(f"dims {dims} do not match vector length {v.size}")
        n = np.linalg.norm(v)
        if n > 1.0 + 1e-10:
            raise ValueError(f"vector norm {n!r} exceeds 1 + 1e-10")

    @property
    def dim(self) -> int:
        return self.vec.size

    def norm(self) -> float:
        return float(np.linalg.norm(self.vec))

    def density(self) -> np.ndarray:
        return np.outer(self.vec, self.vec.conj())

    def tensor(self) -> np.ndarray:
        return self.vec.reshape(self.dims)

    def marginal(self, keep: Iterable[int]) -> np.ndarray:
        return partial_trace(self.density(), self.dims, tuple(sorted(keep)))


def kron(a, b) -> np.ndarray:
    return np.kron(np.asarray(getattr(a, "mat", a)), np.asarray(getattr(b, "mat", b)))


def kron_all(*ops) -> np.ndarray:
    out = np.asarray(getattr(ops[0], "mat", ops[0]))
    for op in ops[1:]:
        out = np.kron(out, np.asarray(getattr(op, "mat", op)))
    return out


def permute_systems(op, dims: Sequence[int], order: Sequence[int]) -> np.ndarray:
    """Reorder tensor factors of a vector or square operator.

    ``order[j]`` is the input subsystem that ends up at output slot ``j``;
    the permuted object has dims ``tuple(dims[i] for i in order)``.
    """
    dims = tuple(int(d) for d in dims)
    order = tuple(int(i) for i in order)
    if sorted(order) != list(range(len(dims))):
        raise ValueError(f"order {order} is not a permutation of {len(dims)} systems")
    a = np.asarray(getattr(op, "vec", getattr(op, "mat", op)), dtype=complex)
    n = len(dims)
    if a.ndim == 1:
        return a.reshape(dims).transpose(order).reshape(-1)
    if a.ndim == 2 and a.shape[0] == a.shape[1]:
        full = a.reshape(dims + dims)
        axes = order + tuple(i + n for i in order)
        d = math.prod(dims)
        return full.transpose(axes).reshape(d, d)
    raise ValueError(f"cannot permute object of shape {a.shape}")


def partial_trace(op, dims: Sequence[int], keep: Iterable[int]) -> np.ndarray:
    """Trace out every subsystem not listed in ``keep`` (order preserved)."""
    m = _mat(op)
    dims = _dims_of(op, dims)
    n = len(dims)
    keep = tuple(sorted(set(int(i) for i in keep)))
    if keep and (keep[0] < 0 or keep[-1] >= n):
        raise IndexError(f"keep indices {keep} out of range for {n} subsystems")
    if math.prod(dims) != m.shape[0]:
        raise ValueError(f"dims {dims} inconsistent with matrix dimension {m.shape[0]}")
    if len(keep) == n:
        return m.copy()
    work = m.reshape(dims + dims)
    cur = list(dims)
    for idx in sorted(set(range(n)) - set(keep), reverse=True):
        work = np.trace(work, axis1=idx, axis2=idx + len(cur))
        del cur[idx]
    d = math.prod(cur) if cur else 1
    return work.reshape(d, d)


def _eigh_herm(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h = (m + m.conj().T) / 2
    return np.linalg.eigh(h)


def _psd_spectrum(m: np.ndarray, *, rescale: bool) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecompose, reject genuinely negative input, clip dust.

    With ``rescale`` the clipped spectrum is scaled back to the original
    trace, so sub-normalized inputs keep their trace (fidelity stays
    homogeneous).
    """
    w, v = _eigh_herm(m)
    if w.min() < -PSD_TOL:
        raise ValueError(f"matrix is not PSD within tolerance (min eigenvalue {w.min():.3e})")
    before = w.sum()
    w = np.clip(w, 0.0, None)
    after = w.sum()
    if rescale and after > 0 and before > 0:
        w = w * (before / after)
    return w, v


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    w, v = _psd_spectrum(m, rescale=True)
    return (v * np.sqrt(w)) @ v.conj().T


def purify(rho, *, truncate: bool = False) -> StateVector:
    """Canonical purification on H (x) H_env.

    Eigenvalues are sorted non-increasing so the Schmidt coefficients of the
    output are the eigenvalue square roots in canonical order, and the
    environment basis is the canonical one (coefficients sit entirely in the
    system factor).  With ``truncate`` the environment is cut to the
    numerical rank, otherwise it is a full copy of H.
    """
    m = _mat(rho)
    dims = _dims_of(rho, getattr(rho, "dims", (m.shape[0],)))
    w, v = _psd_spectrum(m, rescale=True)
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    if truncate:
        r = max(1, int(np.count_nonzero(w > RANK_TOL)))
        w, v = w[:r], v[:, :r]
    env = w.size
    psi = (v * np.sqrt(w)).reshape(-1)  # index (system, env), row-major
    return StateVector(psi, dims + (env,))


def schmidt(psi, left: Sequence[int], dims: Sequence[int] | None = None):
    """Schmidt decomposition across the bipartition (left, complement).

    Returns ``(coeffs, lbasis, rbasis)`` with non-increasing non-negative
    coefficients and ``vec == sum_i coeffs[i] * kron(lbasis[:, i], rbasis[:, i])``.
    """
    v = _vec(psi)
    dims = _dims_of(psi, dims)
    left = tuple(int(i) for i in left)
    right = tuple(i for i in range(len(dims)) if i not in left)
    if not left or not right:
        raise ValueError("bipartition must leave systems on both sides")
    arranged = permute_systems(v, dims, left + right)
    dl = math.prod(dims[i] for i in left)
    dr = math.prod(dims[i] for i in right)
    u, s, vh = np.linalg.svd(arranged.reshape(dl, dr), full_matrices=False)
    return s, u, vh.T


def fidelity(rho, sigma) -> float:
    """Squared trace-norm overlap, computed as (sum of singular values of
    sqrt(rho) sqrt(sigma))^2 and clamped to [0, 1 + 1e-9].

    Accepts sub-normalized PSD inputs and is homogeneous of degree one in
    each argument.
    """
    a = _mat(rho)
    b = _mat(sigma)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    s = np.linalg.svd(_sqrt_psd(a) @ _sqrt_psd(b), compute_uv=False)
    return float(np.clip(s.sum() ** 2, 0.0, 1.0 + 1e-9))


def trace_norm(a) -> float:
    m = np.asarray(getattr(a, "mat", a), dtype=complex)
    return float(np.linalg.svd(m, compute_uv=False).sum())


def hs_norm(a) -> float:
    m = np.asarray(getattr(a, "mat", a), dtype=complex)
    return float(np.linalg.norm(m))


def numerical_rank(a, tol: float = RANK_TOL) -> int:
    m = np.asarray(getattr(a, "mat", a), dtype=complex)
    s = np.linalg.svd(m, compute_uv=False)
    return int(np.count_nonzero(s > tol))


def _spectrum_as_probabilities(rho) -> np.ndarray:
    w, _ = _eigh_herm(_mat(rho))
    if w.min() < -PSD_TOL:
        raise ValueError(f"not a state: eigenvalue {w.min():.3e}")
    w = np.clip(w, 0.0, None)
    s = w.sum()
    if abs(s - 1.0) > 1e-6:
        raise ValueError(f"not a state: trace {s!r}")
    return w / s


def entropy(rho) -> float:
    """Von Neumann entropy in bits."""
    w = _spectrum_as_probabilities(rho)
    w = w[w > 0]
    return float(-(w * np.log2(w)).sum())


def cond_entropy(rho, a_systems: Sequence[int], dims: Sequence[int] | None = None) -> float:
    """S(A|B) = S(rho_AB) - S(rho_B) with A the listed subsystems."""
    m = _mat(rho)
    dims = _dims_of(rho, dims)
    a = tuple(int(i) for i in a_systems)
    b = tuple(i for i in range(len(dims)) if i not in a)
    if not b:
        return entropy(m)
    return entropy(m) - entropy(partial_trace(m, dims, b))


def mutual_info(rho, x_systems: Sequence[int], dims: Sequence[int] | None = None) -> float:
    """I(X;Y) = S(X) + S(Y) - S(XY) with X the listed subsystems."""
    m = _mat(rho)
    dims = _dims_of(rho, dims)
    x = tuple(int(i) for i in x_systems)
    y = tuple(i for i in range(len(dims)) if i not in x)
    if not x or not y:
        raise ValueError("mutual information needs systems on both sides")
    sx = entropy(partial_trace(m, dims, x))
    sy = entropy(partial_trace(m, dims, y))
    return sx + sy - entropy(m)


def coherent_info(rho, channel) -> float:
    """S(N(rho)) - S((id (x) N)(phi)) with phi a purification of rho.

    ``channel`` is a sequence of Kraus operators (or an object exposing
    ``.kraus``).  The joint output is assembled directly from the spectral
    purification, reference factor first.
    """
    kraus = [np.asarray(k, dtype=complex) for k in getattr(channel, "kraus", channel)]
    m = _mat(rho)
    if kraus[0].shape[1] != m.shape[0]:
        raise ValueError("channel input dimension does not match the state")
    out = sum(k @ m @ k.conj().T for k in kraus)
    w, v = _psd_spectrum(m, rescale=True)
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    r = max(1, int(np.count_nonzero(w > RANK_TOL)))
    w, v = w[:r], v[:, :r]
    dout = kraus[0].shape[0]
    joint = np.zeros((r * dout, r * dout), dtype=complex)
    for k in kraus:
        block = (k @ (v * np.sqrt(w))).T  # (r, dout): reference index first
        t = block.reshape(-1)
        joint += np.outer(t, t.conj())
    return entropy(out) - entropy(joint)


def fannes_eta(x: float) -> float:
    """Continuity helper: -x log2 x on (0, 1/e], constant log2(e)/e above."""
    if x < -DUST or x > 1.0 + DUST:
        raise ValueError(f"argument {x!r} outside [0, 1]")
    x = min(max(x, 0.0), 1.0)
    if x == 0.0:
        return 0.0
    if x <= 1.0 / math.e:
        return -x * math.log2(x)
    return LOG2E / math.e


def maximally_mixed(d: int) -> np.ndarray:
    return np.eye(d, dtype=complex) / d


def dm(vec) -> np.ndarray:
    v = _vec(vec)
    return np.outer(v, v.conj())

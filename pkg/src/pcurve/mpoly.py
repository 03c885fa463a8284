"""The p-fold sum operator and its first derivatives.

For a spectrum lam in R^n and 1 <= p <= n the operator is the product, over
every p-element index subset S, of the subset sum lam_S.  Everything here
works on the normalized form

    M_p(lam) = (prod_S lam_S) ** (1 / C(n, p)),

which is degree-1 homogeneous and concave on the cone where every subset
sum is positive.  Evaluation is done in the log domain: for n = 12, p = 6
the raw product has 924 factors.

All functions accept a single spectrum of shape (n,) or a batch (..., n).
"""

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from math import comb

import numpy as np

from . import _accel
from .errors import ConeError, ParameterError

DEFAULT_MARGIN = 1e-10


def _check_np(n, p):
    if not (isinstance(n, (int, np.integer)) and isinstance(p, (int, np.integer))):
        raise ParameterError(f"n and p must be integers, got {n!r}, {p!r}")
    if n < 1 or not 1 <= p <= n:
        raise ParameterError(f"need 1 <= p <= n, got n={n}, p={p}")


@lru_cache(maxsize=None)
def subset_table(n, p):
    """(C(n,p), p) read-only array of 0-based subset members, lexicographic."""
    _check_np(n, p)
    table = np.array(list(combinations(range(n), p)), dtype=np.int64).reshape(-1, p)
    table.setflags(write=False)
    return table


def enumerate_subsets(n, p):
    """All p-subsets of {0, ..., n-1} as sorted tuples, in lexicographic order."""
    return [tuple(int(i) for i in row) for row in subset_table(n, p)]


def cone_contains(lam, p, margin=0.0):
    """Membership of ``lam`` in the p-convex cone.

    Returns ``(inside, worst_sum)`` where ``worst_sum`` is the smallest p-subset
    sum (the sum of the p smallest entries) and ``inside`` is
    ``worst_sum > margin``.  Scalars for a single spectrum, arrays for a batch.
    """
    lam = np.asarray(lam, dtype=np.float64)
    n = lam.shape[-1]
    _check_np(n, p)
    if margin < 0:
        raise ParameterError("margin must be non-negative")
    worst = np.sort(lam, axis=-1)[..., :p].sum(axis=-1)
    inside = worst > margin
    if lam.ndim == 1:
        return bool(inside), float(worst)
    return inside, worst


@dataclass(frozen=True)
class OperatorValue:
    raw_log: np.ndarray | float
    normalized: np.ndarray | float


def _terms(lam, p):
    lam = np.asarray(lam, dtype=np.float64)
    n = lam.shape[-1]
    _check_np(n, p)
    if not np.all(np.isfinite(lam)):
        raise ParameterError("spectrum contains non-finite entries")
    flat = lam.reshape(-1, n)
    raw_log, inv_sum, min_sum = _accel.subset_terms(flat, subset_table(n, p))
    if not np.all(min_sum > 0.0):
        k = int(np.argmin(min_sum))
        raise ConeError(
            f"spectrum outside the P_{p} cone (worst subset sum {min_sum[k]:.3e})",
            worst_sum=min_sum[k],
            location=np.unravel_index(k, lam.shape[:-1]) if lam.ndim > 1 else None,
        )
    return lam.shape[:-1], raw_log, inv_sum


def _shaped(x, lead):
    return float(x[0]) if lead == () else x.reshape(lead + x.shape[1:])


def mp_eval(lam, p):
    """Evaluate the operator on a spectrum (or batch) inside the cone."""
    lead, raw_log, _ = _terms(lam, p)
    n = np.shape(lam)[-1]
    normalized = np.exp(raw_log / comb(n, p))
    if lead == ():
        return OperatorValue(float(raw_log[0]), float(normalized[0]))
    return OperatorValue(raw_log.reshape(lead), normalized.reshape(lead))


def mp_eval_grad(lam, p):
    """Normalized value and eigenvalue gradient in one pass."""
    lead, raw_log, inv_sum = _terms(lam, p)
    n = np.shape(lam)[-1]
    binom = comb(n, p)
    value = np.exp(raw_log / binom)
    grad = (value / binom)[:, None] * inv_sum
    if lead == ():
        return float(value[0]), grad[0]
    return value.reshape(lead), grad.reshape(lead + (n,))


def mp_grad_eigen(lam, p):
    """Partial derivatives dM_p/dlam_a = (M_p / C(n,p)) * sum_{S containing a} 1/lam_S."""
    return mp_eval_grad(lam, p)[1]


def _orient(vecs):
    # Fix eigenvector signs: the largest-magnitude entry of each column is
    # positive (first such entry on ties).
    idx = np.argmax(np.abs(vecs), axis=-2)
    pick = np.take_along_axis(vecs, idx[..., None, :], axis=-2)
    sign = np.where(pick < 0, -1.0, 1.0)
    return vecs * sign


def cholesky(metric):
    metric = np.asarray(metric, dtype=np.float64)
    try:
        return np.linalg.cholesky(metric)
    except np.linalg.LinAlgError as exc:
        raise ParameterError("metric is not positive definite") from exc


def generalized_eigh(V, metric=None):
    """Spectrum of V relative to ``metric``: V q = lam metric q.

    Uses the Cholesky reduction metric = L L^T and the symmetric problem for
    L^{-1} V L^{-T}.  Returns ascending eigenvalues (..., n) and eigenvectors
    (..., n, n) as columns, normalized so that q^T metric q = 1.
    """
    V = np.asarray(V, dtype=np.float64)
    V = 0.5 * (V + np.swapaxes(V, -1, -2))
    if metric is None:
        lam, vecs = np.linalg.eigh(V)
        return lam, _orient(vecs)
    L = cholesky(metric)
    Linv = np.linalg.inv(L)
    C = Linv @ V @ np.swapaxes(Linv, -1, -2)
    C = 0.5 * (C + np.swapaxes(C, -1, -2))
    lam, Y = np.linalg.eigh(C)
    Q = np.swapaxes(Linv, -1, -2) @ _orient(Y)
    return lam, Q


def grad_from_spectrum(dlam, Q):
    """Assemble sum_a dlam_a q_a q_a^T."""
    return np.einsum("...ia,...a,...ja->...ij", Q, dlam, Q)


def mp_grad_matrix(V, metric=None, p=1):
    """Matrix gradient {dM_p/dV_ij} of V -> M_p(lam(V) relative to metric).

    The formula sum_a (dM_p/dlam_a) q_a q_a^T is used for every spectrum,
    including repeated eigenvalues.
    """
    lam, Q = generalized_eigh(V, metric)
    _, dlam = mp_eval_grad(lam, p)
    return grad_from_spectrum(dlam, Q)


def _inverse(metric, n):
    if metric is None:
        return np.eye(n)
    return np.linalg.inv(metric)


def mbar_from_grad(G, metric, t):
    """G + ((1-t)/(n-2)) tr_metric(G) metric^{-1}."""
    n = G.shape[-1]
    if n < 3:
        raise ParameterError("dimension must be at least 3")
    if metric is None:
        trace = np.trace(G, axis1=-2, axis2=-1)
    else:
        trace = np.einsum("...kl,...kl->...", G, metric)
    ginv = _inverse(metric, n)
    return G + ((1.0 - t) / (n - 2)) * trace[..., None, None] * ginv


def mbar_matrix(V, metric=None, p=1, t=0.0):
    """Second-order coefficient matrix of the linearized equation."""
    if t > 1:
        raise ParameterError("t must not exceed 1")
    return mbar_from_grad(mp_grad_matrix(V, metric, p), metric, t)


def contravariant_eigvals(T, metric=None):
    """Eigenvalues of a (2,0)-tensor T as a bilinear form, i.e. of T lowered by metric."""
    T = np.asarray(T, dtype=np.float64)
    if metric is None:
        return np.linalg.eigvalsh(0.5 * (T + np.swapaxes(T, -1, -2)))
    L = cholesky(metric)
    S = np.swapaxes(L, -1, -2) @ T @ L
    return np.linalg.eigvalsh(0.5 * (S + np.swapaxes(S, -1, -2)))

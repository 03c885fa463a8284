"""Hot pointwise kernels, with numba and pure-numpy implementations.

The numba path is used when numba imports and neither ``PCURVE_DISABLE_NUMBA``
nor ``NUMBA_DISABLE_JIT`` is set to a truthy value.  Both paths are always
importable so tests and ``benchmarks/bench_kernels.py`` can compare them.
"""

import os

import numpy as np


def _truthy(name):
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


try:
    if _truthy("NUMBA_DISABLE_JIT"):
        raise ImportError("jit disabled")
    import numba
    from numba import njit, prange

    if "NUMBA_THREADING_LAYER" not in os.environ:
        # The TBB layer warns on older TBB installs; workqueue is always present.
        numba.config.THREADING_LAYER = "workqueue"

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _truthy("PCURVE_DISABLE_NUMBA")


def backend():
    return "numba" if USE_NUMBA else "numpy"


def set_threads(k):
    """Bound numba's worker pool; no-op on the numpy path."""
    if HAVE_NUMBA and k:
        numba.set_num_threads(max(1, min(int(k), numba.config.NUMBA_NUM_THREADS)))


# ---------------------------------------------------------------- subset sums


def subset_terms_numpy(lam, members):
    """Per-point log-product, reciprocal sums and worst subset sum.

    lam: (N, n) spectra.  members: (B, p) index table of the p-subsets.
    Returns ``raw_log`` (N,), ``inv_sum`` (N, n) with
    inv_sum[k, a] = sum over subsets S containing a of 1/lam_S, and
    ``min_sum`` (N,).  ``raw_log`` is NaN wherever some subset sum is <= 0.
    """
    lam = np.ascontiguousarray(lam, dtype=np.float64)
    npts, n = lam.shape
    sums = lam[:, members].sum(axis=-1)
    min_sum = sums.min(axis=1)
    ok = min_sum > 0.0
    safe = np.where(sums > 0.0, sums, 1.0)
    raw_log = np.log(safe).sum(axis=1)
    raw_log[~ok] = np.nan
    recip = np.where(sums > 0.0, 1.0 / safe, 0.0)
    inv_sum = np.zeros((npts, n))
    for j in range(members.shape[1]):
        np.add.at(inv_sum.T, members[:, j], recip.T)
    return raw_log, inv_sum, min_sum


# ------------------------------------------------------------ stencil values


def stencil_values_numpy(a, b, c, h, offsets):
    """Matrix entries of v -> a^{ij} D_ij v + b^k D_k v + c v, one row per point.

    a: (N, n, n) symmetric second-order coefficients, b: (N, n), c: (N,),
    h: (n,) spacings, offsets: (K, n) integer stencil offsets in the fixed
    order produced by ``pde.stencil_offsets``.  Returns (N, K).
    """
    npts = a.shape[0]
    out = np.empty((npts, offsets.shape[0]))
    for k, off in enumerate(offsets):
        nz = np.flatnonzero(off)
        if nz.size == 0:
            diag = np.diagonal(a, axis1=1, axis2=2)
            out[:, k] = (-2.0 * diag / h**2).sum(axis=1) + c
        elif nz.size == 1:
            i = nz[0]
            s = off[i]
            out[:, k] = a[:, i, i] / h[i] ** 2 + s * b[:, i] / (2.0 * h[i])
        else:
            i, j = nz
            out[:, k] = a[:, i, j] * (off[i] * off[j]) / (2.0 * h[i] * h[j])
    return out


if HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _subset_terms_nb(lam, members):
        npts, n = lam.shape
        nsub, p = members.shape
        raw_log = np.empty(npts)
        inv_sum = np.zeros((npts, n))
        min_sum = np.empty(npts)
        for k in prange(npts):
            acc = 0.0
            mn = np.inf
            for s in range(nsub):
                tot = 0.0
                for j in range(p):
                    tot += lam[k, members[s, j]]
                if tot < mn:
                    mn = tot
                if tot > 0.0:
                    acc += np.log(tot)
                    r = 1.0 / tot
                    for j in range(p):
                        inv_sum[k, members[s, j]] += r
            min_sum[k] = mn
            raw_log[k] = acc if mn > 0.0 else np.nan
        return raw_log, inv_sum, min_sum

    @njit(cache=True, parallel=True)
    def _stencil_values_nb(a, b, c, h, offsets):
        npts = a.shape[0]
        nk, n = offsets.shape
        out = np.empty((npts, nk))
        for x in prange(npts):
            for k in range(nk):
                i = -1
                j = -1
                for d in range(n):
                    if offsets[k, d] != 0:
                        if i < 0:
                            i = d
                        else:
                            j = d
                if i < 0:
                    acc = c[x]
                    for d in range(n):
                        acc += -2.0 * a[x, d, d] / (h[d] * h[d])
                    out[x, k] = acc
                elif j < 0:
                    s = offsets[k, i]
                    out[x, k] = a[x, i, i] / (h[i] * h[i]) + s * b[x, i] / (2.0 * h[i])
                else:
                    sgn = offsets[k, i] * offsets[k, j]
                    out[x, k] = a[x, i, j] * sgn / (2.0 * h[i] * h[j])
        return out

    def subset_terms_numba(lam, members):
        return _subset_terms_nb(
            np.ascontiguousarray(lam, dtype=np.float64),
            np.ascontiguousarray(members, dtype=np.int64),
        )

    def stencil_values_numba(a, b, c, h, offsets):
        return _stencil_values_nb(
            np.ascontiguousarray(a, dtype=np.float64),
            np.ascontiguousarray(b, dtype=np.float64),
            np.ascontiguousarray(c, dtype=np.float64),
            np.ascontiguousarray(h, dtype=np.float64),
            np.ascontiguousarray(offsets, dtype=np.int64),
        )

else:  # pragma: no cover
    subset_terms_numba = None
    stencil_values_numba = None


def subset_terms(lam, members):
    if USE_NUMBA:
        return subset_terms_numba(lam, members)
    return subset_terms_numpy(lam, members)


def stencil_values(a, b, c, h, offsets):
    if USE_NUMBA:
        return stencil_values_numba(a, b, c, h, offsets)
    return stencil_values_numpy(a, b, c, h, offsets)

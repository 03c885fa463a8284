"""Discrete residual and exact Jacobian of the prescribed p-curvature equation.

On the background (g, A) the unknown u solves

    M_p( lambda_g(Hbar u) ) = f e^{2u},
    Hbar u = nabla^2 u + ((1-t)/(n-2)) (Lap u) g + ((2-t)/2) |du|^2 g - du (x) du - A.

The Jacobian assembled by :func:`linearize` is the exact derivative of the
discrete residual, so it agrees with directional differences of
:func:`residual` up to the finite-difference error of the check itself.
"""

from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np
import scipy.sparse as sp

from . import _accel, mpoly
from .errors import ConeError, ParameterError
from .geometry import covariant_hessian, gradient, grad_norm_sq


@dataclass(frozen=True)
class Problem:
    """Background geometry, prescribed tensor A, right-hand side f and (p, t)."""

    geometry: object
    A: np.ndarray
    f: np.ndarray
    p: int
    t: float

    def __post_init__(self):
        n = self.geometry.dim
        if not 1 <= self.p <= n:
            raise ParameterError(f"need 1 <= p <= n, got p={self.p}, n={n}")
        if not self.t < 1:
            raise ParameterError("t must satisfy t < 1")
        shape = self.geometry.grid.shape
        if np.shape(self.f) != shape or np.shape(self.A) != shape + (n, n):
            raise ParameterError("f or A does not match the grid")

    @property
    def grid(self):
        return self.geometry.grid

    def with_data(self, A=None, f=None):
        return Problem(self.geometry, self.A if A is None else A, self.f if f is None else f,
                       self.p, self.t)


def isotropic_A(geometry, c=1.0, p=1):
    """A = -(c/p) g, so that lambda(-A) = (c/p, ..., c/p) and M_p(-A) = c."""
    return -(c / p) * np.asarray(geometry.metric)


@dataclass
class AugmentedHessianField:
    tensor: np.ndarray
    spectrum: np.ndarray
    eigvecs: np.ndarray
    cone_margin: float
    worst_point: tuple
    gradient: np.ndarray
    margins: np.ndarray


@dataclass
class ResidualField:
    values: np.ndarray
    sup_norm: float
    mp_values: np.ndarray


@dataclass
class SparseLinearSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    stencil_width: int
    shape: tuple = None
    spacing: np.ndarray = None
    mean_second: np.ndarray = None
    mean_first: np.ndarray = None
    mean_zeroth: float = None


def _coeffs(n, t):
    return (1.0 - t) / (n - 2), (2.0 - t) / 2.0


def augmented_hessian(u, geometry, A, p, t):
    """Hbar u at every grid point, its metric spectrum and the global cone margin."""
    n = geometry.dim
    c_lap, c_grad = _coeffs(n, t)
    g = geometry.metric
    du = gradient(u, geometry.grid)
    hess = covariant_hessian(u, geometry, du)
    lap = np.einsum("...ij,...ij->...", geometry.inverse_metric, hess)
    tensor = (
        hess
        + (c_lap * lap + c_grad * grad_norm_sq(du, geometry))[..., None, None] * g
        - du[..., :, None] * du[..., None, :]
        - A
    )
    tensor = 0.5 * (tensor + np.swapaxes(tensor, -1, -2))
    lam, Q = mpoly.generalized_eigh(tensor, g)
    margins = np.sort(lam, axis=-1)[..., :p].sum(axis=-1)
    k = int(np.argmin(margins))
    loc = tuple(int(i) for i in np.unravel_index(k, margins.shape))
    return AugmentedHessianField(tensor, lam, Q, float(margins.flat[k]), loc, du, margins)


def _residual_from(aug, u, f, p):
    if not aug.cone_margin > 0:
        raise ConeError(
            f"augmented Hessian left P_{p} (margin {aug.cone_margin:.3e} at {aug.worst_point})",
            worst_sum=aug.cone_margin,
            location=aug.worst_point,
        )
    value = mpoly.mp_eval(aug.spectrum, p).normalized
    vals = value - f * np.exp(2.0 * u)
    return ResidualField(vals, float(np.abs(vals).max()), value)


def residual(u, f, geometry, A, p, t, aug=None):
    """F[u] = M_p(Hbar u) - f e^{2u}; ConeError if Hbar u leaves the cone."""
    u = np.asarray(u, dtype=np.float64)
    if aug is None:
        aug = augmented_hessian(u, geometry, A, p, t)
    return _residual_from(aug, u, f, p)


@lru_cache(maxsize=None)
def stencil_offsets(n):
    """Center, axis neighbours, then diagonal pairs; 2n^2 + 1 offsets."""
    offs = [np.zeros(n, dtype=np.int64)]
    for i in range(n):
        for s in (1, -1):
            o = np.zeros(n, dtype=np.int64)
            o[i] = s
            offs.append(o)
    for i in range(n):
        for j in range(i + 1, n):
            for si, sj in product((1, -1), repeat=2):
                o = np.zeros(n, dtype=np.int64)
                o[i], o[j] = si, sj
                offs.append(o)
    table = np.array(offs)
    table.setflags(write=False)
    return table


@lru_cache(maxsize=8)
def _stencil_columns(shape):
    n = len(shape)
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    cols = np.stack(
        [np.roll(idx, tuple(-int(s) for s in off), axis=tuple(range(n))).ravel()
         for off in stencil_offsets(n)],
        axis=1,
    )
    cols.setflags(write=False)
    return cols


def _coefficients(u, f, geometry, A, p, t, aug=None):
    """Second-, first- and zeroth-order coefficients of the linearized operator."""
    n = geometry.dim
    c_lap, c_grad = _coeffs(n, t)
    if aug is None:
        aug = augmented_hessian(u, geometry, A, p, t)
    res = _residual_from(aug, u, f, p)
    _, dlam = mpoly.mp_eval_grad(aug.spectrum, p)
    G = mpoly.grad_from_spectrum(dlam, aug.eigvecs)  # M_p^{ij}
    trace = dlam.sum(axis=-1)  # = M_p^{kl} g_kl
    ginv = geometry.inverse_metric
    mbar = G + (c_lap * trace)[..., None, None] * ginv
    du = aug.gradient
    first = (
        -np.einsum("...ij,...kij->...k", mbar, geometry.christoffel)
        + (2.0 - t) * trace[..., None] * np.einsum("...kl,...l->...k", ginv, du)
        - 2.0 * np.einsum("...kl,...l->...k", G, du)
    )
    zeroth = -2.0 * f * np.exp(2.0 * u)
    return mbar, first, zeroth, res, aug


def linearize(u, f, geometry, A, p, t, aug=None):
    """Sparse Jacobian of the discrete residual at u, with rhs = -F[u].

    L v = Mbar^{ij} nabla_i nabla_j v + M_p^{ij} W_ij(dv) - 2 f e^{2u} v,
    W(dv) = (2-t) <du, dv> g - (du (x) dv + dv (x) du).
    """
    u = np.asarray(u, dtype=np.float64)
    grid = geometry.grid
    n = grid.dim
    mbar, first, zeroth, res, _ = _coefficients(u, f, geometry, A, p, t, aug)
    N = grid.size
    offsets = stencil_offsets(n)
    vals = _accel.stencil_values(
        mbar.reshape(N, n, n), first.reshape(N, n), zeroth.reshape(N), grid.spacing, offsets
    )
    K = offsets.shape[0]
    cols = _stencil_columns(grid.shape)
    indptr = np.arange(N + 1, dtype=np.int64) * K
    matrix = sp.csr_matrix((vals.ravel(), cols.ravel(), indptr), shape=(N, N))
    return SparseLinearSystem(
        matrix=matrix,
        rhs=-res.values.ravel(),
        stencil_width=K,
        shape=grid.shape,
        spacing=grid.spacing,
        mean_second=mbar.reshape(N, n, n).mean(axis=0),
        mean_first=first.reshape(N, n).mean(axis=0),
        mean_zeroth=float(zeroth.mean()),
    )


@dataclass
class EllipticityReport:
    min_eigenvalue: float
    worst_point: tuple
    field: np.ndarray

    @property
    def elliptic(self):
        return self.min_eigenvalue > 0


def ellipticity_certificate(u, geometry, A, p, t):
    """Smallest eigenvalue of Mbar^{ij} (as a bilinear form against g) over the grid."""
    u = np.asarray(u, dtype=np.float64)
    aug = augmented_hessian(u, geometry, A, p, t)
    if not aug.cone_margin > 0:
        raise ConeError("augmented Hessian outside the cone", aug.cone_margin, aug.worst_point)
    n = geometry.dim
    c_lap, _ = _coeffs(n, t)
    _, dlam = mpoly.mp_eval_grad(aug.spectrum, p)
    G = mpoly.grad_from_spectrum(dlam, aug.eigvecs)
    mbar = G + (c_lap * dlam.sum(axis=-1))[..., None, None] * geometry.inverse_metric
    ev = mpoly.contravariant_eigvals(mbar, geometry.metric)[..., 0]
    k = int(np.argmin(ev))
    loc = tuple(int(i) for i in np.unravel_index(k, ev.shape))
    return EllipticityReport(float(ev.flat[k]), loc, ev)


def dump_coo(system, path):
    """Write the matrix as ``row col value`` lines (0-based, row-major order)."""
    coo = system.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {v:.17g}\n")


def load_coo(path):
    with open(path) as fh:
        header = fh.readline().lstrip("#").split()
        nr, nc, _ = (int(x) for x in header)
        data = np.loadtxt(fh, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix((nr, nc))
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))),
                         shape=(nr, nc))

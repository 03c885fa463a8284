"""Tensor calculus on the periodic grid [0, 2pi)^n.

Fields are plain numpy arrays: a scalar field has shape ``grid.shape``, a
covector field ``grid.shape + (n,)`` and a symmetric tensor field
``grid.shape + (n, n)`` (kept exactly symmetric).  Every derivative is a
second-order central difference with periodic wrap.

Curvature convention: R^l_{ijk} = d_j Gamma^l_{ik} - d_k Gamma^l_{ij} + ...,
Ric_{ij} = R^k_{ikj}; the round sphere has positive scalar curvature.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import mpoly
from .errors import ConeError, GeometryError, ParameterError


@dataclass(frozen=True)
class Grid:
    shape: tuple

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        object.__setattr__(self, "shape", shape)
        if len(shape) < 3:
            raise ParameterError(f"grid dimension must be >= 3, got {len(shape)}")
        if min(shape) < 8:
            raise ParameterError(f"need at least 8 points per axis, got {shape}")

    @classmethod
    def cube(cls, n, points):
        return cls((points,) * n)

    @property
    def dim(self):
        return len(self.shape)

    @property
    def spacing(self):
        return 2.0 * np.pi / np.array(self.shape, dtype=np.float64)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def hmax(self):
        return float(self.spacing.max())

    def coords(self):
        """Coordinate arrays x_1, ..., x_n (each of shape ``self.shape``)."""
        axes = [np.arange(m) * h for m, h in zip(self.shape, self.spacing)]
        return np.meshgrid(*axes, indexing="ij")


# ----------------------------------------------------------------- stencils


def shift(a, axis, s):
    """Periodic shift: shift(a, i, +1)[x] == a[x + e_i]."""
    return np.roll(a, -s, axis=axis)


def partial(a, grid, axis):
    h = grid.spacing[axis]
    return (shift(a, axis, 1) - shift(a, axis, -1)) / (2.0 * h)


def gradient(a, grid):
    """Central-difference gradient; a new trailing axis indexes the direction."""
    return np.stack([partial(a, grid, i) for i in range(grid.dim)], axis=-1)


def second_partials(u, grid):
    """Matrix of central second differences D_ij u (4-point cross for i != j)."""
    n = grid.dim
    h = grid.spacing
    out = np.empty(u.shape + (n, n))
    for i in range(n):
        out[..., i, i] = (shift(u, i, 1) - 2.0 * u + shift(u, i, -1)) / h[i] ** 2
        up = shift(u, i, 1)
        dn = shift(u, i, -1)
        for j in range(i + 1, n):
            d = (shift(up, j, 1) - shift(up, j, -1) - shift(dn, j, 1) + shift(dn, j, -1))
            out[..., i, j] = out[..., j, i] = d / (4.0 * h[i] * h[j])
    return out


def symmetrize(T):
    return 0.5 * (T + np.swapaxes(T, -1, -2))


# ------------------------------------------------------------ geometry data


def christoffel_fd(metric, grid, inverse_metric=None):
    """Gamma^k_{ij} = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij), indexed [..., k, i, j]."""
    if inverse_metric is None:
        inverse_metric = np.linalg.inv(metric)
    dg = gradient(metric, grid)  # [..., i, j, l] = d_l g_ij
    # first-kind symbols Gamma_{lij}
    first = 0.5 * (
        np.einsum("...jli->...lij", dg)
        + np.einsum("...ilj->...lij", dg)
        - np.einsum("...ijl->...lij", dg)
    )
    gam = np.einsum("...kl,...lij->...kij", inverse_metric, first)
    return 0.5 * (gam + np.swapaxes(gam, -1, -2))


def christoffel_conformal(christoffel, metric, inverse_metric, du):
    """Christoffel symbols of e^{2u} g from those of g, given the gradient du.

    Exact identity Gamma~^k_ij = Gamma^k_ij + delta^k_i u_j + delta^k_j u_i - g_ij u^k,
    evaluated with whatever discrete gradient is supplied.
    """
    n = metric.shape[-1]
    eye = np.eye(n)
    up = np.einsum("...kl,...l->...k", inverse_metric, du)
    return (
        christoffel
        + np.einsum("ki,...j->...kij", eye, du)
        + np.einsum("kj,...i->...kij", eye, du)
        - np.einsum("...ij,...k->...kij", metric, up)
    )


def curvature_fd(christoffel, inverse_metric, grid):
    """Ricci tensor and scalar curvature from Christoffel symbols.

    Ric_ij = d_k G^k_ij - d_j G^k_ik + G^k_km G^m_ij - G^k_jm G^m_ik.
    """
    n = grid.dim
    dgam = gradient(christoffel, grid)  # [..., k, i, j, l] = d_l Gamma^k_ij
    div = np.einsum("...kijk->...ij", dgam)
    trace_d = np.einsum("...kikj->...ij", dgam)
    contracted = np.einsum("...kkm->...m", christoffel)
    quad1 = np.einsum("...m,...mij->...ij", contracted, christoffel)
    quad2 = np.einsum("...kjm,...mik->...ij", christoffel, christoffel)
    ricci = symmetrize(div - trace_d + quad1 - quad2)
    scalar = np.einsum("...ij,...ij->...", inverse_metric, ricci)
    assert ricci.shape[-1] == n
    return ricci, scalar


def _frozen(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GeometrySetup:
    grid: Grid
    metric: np.ndarray
    inverse_metric: np.ndarray
    christoffel: np.ndarray
    ricci: np.ndarray
    scalar_curv: np.ndarray
    t_param: float = 0.0
    label: str = field(default="custom", compare=False)

    def __post_init__(self):
        for name in ("metric", "inverse_metric", "christoffel", "ricci", "scalar_curv"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def dim(self):
        return self.grid.dim

    @cached_property
    def cholesky(self):
        return check_metric(self.metric)

    @cached_property
    def sqrt_det(self):
        return np.prod(np.diagonal(self.cholesky, axis1=-2, axis2=-1), axis=-1)


def check_metric(metric):
    """Cholesky factor of the metric field; GeometryError at the first bad point."""
    try:
        return np.linalg.cholesky(metric)
    except np.linalg.LinAlgError:
        ev = np.linalg.eigvalsh(symmetrize(metric))[..., 0]
        bad = np.argwhere(~(ev > 0))
        loc = tuple(int(i) for i in bad[0]) if bad.size else None
        raise GeometryError(f"metric not positive definite at grid point {loc}", location=loc)


def build_from_metric(grid, metric, t=0.0, christoffel=None, label="custom"):
    """Geometry with all derived fields regenerated from ``metric``."""
    metric = symmetrize(np.asarray(metric, dtype=np.float64))
    if metric.shape != grid.shape + (grid.dim, grid.dim):
        raise ParameterError(f"metric field has shape {metric.shape}, grid is {grid.shape}")
    if not np.all(np.isfinite(metric)):
        raise GeometryError("metric field has non-finite entries")
    check_metric(metric)
    ginv = symmetrize(np.linalg.inv(metric))
    if christoffel is None:
        christoffel = christoffel_fd(metric, grid, ginv)
    ricci, scalar = curvature_fd(christoffel, ginv, grid)
    return GeometrySetup(grid, metric, ginv, christoffel, ricci, scalar, float(t), label)


def build_flat(grid, t=0.0):
    n = grid.dim
    metric = np.broadcast_to(np.eye(n), grid.shape + (n, n)).copy()
    zeros3 = np.zeros(grid.shape + (n, n, n))
    zeros2 = np.zeros(grid.shape + (n, n))
    return GeometrySetup(grid, metric, metric.copy(), zeros3, zeros2,
                         np.zeros(grid.shape), float(t), "flat")


def build_conformal_flat(grid, phi, t=0.0):
    """Background e^{2 phi} delta with curvature from the finite-difference stencils."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != grid.shape:
        raise ParameterError("phi must be a scalar field on the grid")
    if not np.any(phi):
        flat = build_flat(grid, t)
        return flat
    n = grid.dim
    metric = np.exp(2.0 * phi)[..., None, None] * np.eye(n)
    return build_from_metric(grid, metric, t, label="conformal_flat")


def conformal_change(geometry, u):
    """Geometry of e^{2u} g.

    Christoffel symbols come from the exact conformal identity applied with
    the discrete gradient of u, so the discrete transformation law of the
    modified Schouten tensor composes exactly (cocycle property).  Ricci and
    scalar curvature are regenerated from those symbols.
    """
    grid = geometry.grid
    w = np.exp(2.0 * np.asarray(u, dtype=np.float64))
    metric = w[..., None, None] * geometry.metric
    ginv = geometry.inverse_metric / w[..., None, None]
    du = gradient(u, grid)
    gam = christoffel_conformal(geometry.christoffel, geometry.metric, geometry.inverse_metric, du)
    ricci, scalar = curvature_fd(gam, ginv, grid)
    return GeometrySetup(grid, metric, ginv, gam, ricci, scalar, geometry.t_param, "conformal_change")


# ------------------------------------------------------ curvature operators


def covariant_hessian(u, geometry, du=None):
    """nabla^2 u = D_ij u - Gamma^k_ij D_k u."""
    if du is None:
        du = gradient(u, geometry.grid)
    H = second_partials(u, geometry.grid)
    return H - np.einsum("...kij,...k->...ij", geometry.christoffel, du)


def laplacian(u, geometry):
    return np.einsum("...ij,...ij->...", geometry.inverse_metric, covariant_hessian(u, geometry))


def grad_norm_sq(du, geometry):
    return np.einsum("...ij,...i,...j->...", geometry.inverse_metric, du, du)


def modified_schouten(geometry, t=None):
    """A^t = (Ric - t R g / (2(n-1))) / (n-2)."""
    n = geometry.dim
    if n < 3:
        raise ParameterError("modified Schouten tensor needs n >= 3")
    t = geometry.t_param if t is None else float(t)
    R = geometry.scalar_curv[..., None, None]
    return (geometry.ricci - (t / (2.0 * (n - 1))) * R * geometry.metric) / (n - 2)


def schouten(geometry):
    return modified_schouten(geometry, t=1.0)


def conformal_schouten(A, u, geometry, t=None):
    """A^t of e^{2u} g written on the background g.

    A - nabla^2 u - ((1-t)/(n-2)) (Lap u) g + du (x) du - ((2-t)/2) |du|^2 g.
    """
    n = geometry.dim
    t = geometry.t_param if t is None else float(t)
    u = np.asarray(u, dtype=np.float64)
    du = gradient(u, geometry.grid)
    hess = covariant_hessian(u, geometry, du)
    lap = np.einsum("...ij,...ij->...", geometry.inverse_metric, hess)
    g = geometry.metric
    out = (
        A
        - hess
        - ((1.0 - t) / (n - 2)) * lap[..., None, None] * g
        + du[..., :, None] * du[..., None, :]
        - ((2.0 - t) / 2.0) * grad_norm_sq(du, geometry)[..., None, None] * g
    )
    return symmetrize(out)


def metric_eigenvalues(V, geometry, vectors=False):
    """Ascending spectrum of V relative to the metric at every grid point."""
    check_metric(geometry.metric)
    lam, Q = mpoly.generalized_eigh(V, geometry.metric)
    return (lam, Q) if vectors else lam


# ------------------------------------------------------------ certification


@dataclass(frozen=True)
class CertificationReport:
    passed: bool
    worst_margin: float
    worst_point: tuple
    p: int
    t: float
    margin: float

    def to_dict(self):
        return {
            "passed": self.passed,
            "worst_margin": self.worst_margin,
            "worst_point": list(self.worst_point),
            "p": self.p,
            "t": self.t,
            "margin": self.margin,
        }


def certify_background(geometry, p, t=None, margin=0.0, A=None):
    """Check lambda(-A^t) in P_p at every grid point.

    ``A`` overrides the geometric A^t (prescribed-tensor mode).
    """
    t = geometry.t_param if t is None else float(t)
    if A is None:
        A = modified_schouten(geometry, t)
    lam = metric_eigenvalues(-np.asarray(A), geometry)
    _, worst = mpoly.cone_contains(lam, p, 0.0)
    k = int(np.argmin(worst))
    loc = tuple(int(i) for i in np.unravel_index(k, worst.shape))
    wm = float(worst.flat[k])
    return CertificationReport(bool(wm > margin), wm, loc, int(p), float(t), float(margin))


def require_certified(geometry, p, t=None, margin=0.0, A=None):
    rep = certify_background(geometry, p, t, margin, A)
    if not rep.passed:
        raise ConeError(
            f"-A^t not in P_{p}: worst subset sum {rep.worst_margin:.3e} at {rep.worst_point}",
            worst_sum=rep.worst_margin,
            location=rep.worst_point,
        )
    return rep


def search_conformal_amplitude(grid, phi_shape, p, t, amplitudes, margin=0.0):
    """Scale a candidate conformal factor until the background certifies.

    Returns ``(amplitude, geometry, report)`` for the first passing amplitude,
    or ``(None, None, last_report)``.  Note that no conformally flat metric on
    the torus can pass: the cone condition forces R < 0 everywhere, which the
    flat conformal class does not allow.
    """
    report = None
    for amp in amplitudes:
        geom = build_conformal_flat(grid, amp * np.asarray(phi_shape), t)
        report = certify_background(geom, p, t, margin)
        if report.passed:
            return amp, geom, report
    return None, None, report

"""Executable checks of the analytic claims: C0 bounds, measured C1/C2
quantities, concavity, the trace bound, ellipticity and the determinantal
majorization inequality prod_a dM_p/dlam_a >= (p/n)^n.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import mpoly, pde
from .errors import ConeError
from .geometry import covariant_hessian, gradient, grad_norm_sq, metric_eigenvalues


@dataclass(frozen=True)
class C0Bounds:
    lower: float
    upper: float


def c0_bounds(A, f, geometry, p):
    """Half the min / max over the grid of log(M_p(lambda(-A)) / f)."""
    f = np.asarray(f, dtype=np.float64)
    if not np.all(f > 0):
        raise ConeError("f must be positive", worst_sum=float(f.min()))
    lam = metric_eigenvalues(-np.asarray(A), geometry)
    q = np.log(mpoly.mp_eval(lam, p).normalized / f)
    return C0Bounds(0.5 * float(q.min()), 0.5 * float(q.max()))


@dataclass
class EstimateReport:
    sup_u: float
    inf_u: float
    sup_grad: float
    sup_hess: float
    bounds: C0Bounds
    bound_satisfied: bool
    cone_margin: float
    slack: float

    def to_dict(self):
        d = asdict(self)
        d["bounds"] = asdict(self.bounds)
        return d


def check_solution(u, problem, slack_factor=10.0):
    """Measure sup/inf u, sup |du|_g, sup |nabla^2 u|_g and test the C0 bounds.

    The bound check allows slack = slack_factor * h^2 * max(1, sup |nabla^2 u|_g),
    the size of the discrete maximum-principle defect of the central stencils.
    """
    geom = problem.geometry
    u = np.asarray(u, dtype=np.float64)
    du = gradient(u, geom.grid)
    hess = covariant_hessian(u, geom, du)
    ginv = geom.inverse_metric
    hess_norm = np.sqrt(np.einsum("...ik,...jl,...ij,...kl->...", ginv, ginv, hess, hess))
    sup_grad = float(np.sqrt(grad_norm_sq(du, geom).max()))
    sup_hess = float(hess_norm.max())
    bounds = c0_bounds(problem.A, problem.f, geom, problem.p)
    slack = slack_factor * geom.grid.hmax ** 2 * max(1.0, sup_hess)
    ok = bool(u.min() >= bounds.lower - slack and u.max() <= bounds.upper + slack)
    aug = pde.augmented_hessian(u, geom, problem.A, problem.p, problem.t)
    return EstimateReport(float(u.max()), float(u.min()), sup_grad, sup_hess, bounds, ok,
                          aug.cone_margin, slack)


def appendix_inequality(lam, p):
    """(prod_a dM_p/dlam_a, (p/n)^n, product >= bound - 1e-12)."""
    lam = np.asarray(lam, dtype=np.float64)
    n = lam.shape[-1]
    prod = np.prod(mpoly.mp_grad_eigen(lam, p), axis=-1)
    bound = (p / n) ** n
    ok = prod >= bound - 1e-12
    if lam.ndim == 1:
        return float(prod), bound, bool(ok)
    return prod, bound, ok


# ------------------------------------------------------------------ sampling


def sample_cone(rng, size, n, p):
    """Standard normal spectra shifted so the worst p-sum is uniform on (0.1, 2)."""
    lam = rng.standard_normal((size, n))
    _, worst = mpoly.cone_contains(lam, p)
    delta = rng.uniform(0.1, 2.0, size)
    return lam + ((delta - worst) / p)[:, None]


def random_orthogonal(rng, size, n):
    Z = rng.standard_normal((size, n, n))
    Q, R = np.linalg.qr(Z)
    return Q * np.sign(np.diagonal(R, axis1=-2, axis2=-1))[:, None, :]


def random_spd(rng, size, n):
    B = rng.standard_normal((size, n, n))
    return B @ np.swapaxes(B, -1, -2) / n + 0.5 * np.eye(n)


def sample_cone_matrices(rng, size, n, p):
    """(V, metric) pairs whose generalized spectrum is a cone sample."""
    lam = sample_cone(rng, size, n, p)
    Q = random_orthogonal(rng, size, n)
    metric = random_spd(rng, size, n)
    L = np.linalg.cholesky(metric)
    D = Q @ (lam[:, :, None] * np.swapaxes(Q, -1, -2))
    V = L @ D @ np.swapaxes(L, -1, -2)
    return 0.5 * (V + np.swapaxes(V, -1, -2)), metric, lam


@dataclass
class SweepReport:
    n: int
    p: int
    t: float
    samples: int
    seed: int
    violations: dict = field(default_factory=dict)
    worst: dict = field(default_factory=dict)
    offending: dict = field(default_factory=dict)

    @property
    def total_violations(self):
        return int(sum(self.violations.values()))

    def to_dict(self):
        return {"n": self.n, "p": self.p, "t": self.t, "samples": self.samples, "seed": self.seed,
                "violations": dict(self.violations), "worst": dict(self.worst),
                "offending": dict(self.offending)}


def property_sweep(n, p, t, samples, seed, grad_fn=None):
    """Random-sample check of concavity, trace bound, gradient positivity,
    positive definiteness of Mbar and the majorization inequality.

    ``grad_fn(lam, p)`` replaces the eigenvalue gradient (fault injection).
    Worst margins are reported so that 0 violations can be judged against
    how close the samples came.
    """
    grad_fn = grad_fn or mpoly.mp_grad_eigen
    rng = np.random.default_rng(seed)
    rep = SweepReport(n, p, float(t), int(samples), int(seed))

    def record(name, margins, data):
        margins = np.asarray(margins)
        bad = np.flatnonzero(~(margins >= 0))
        rep.violations[name] = int(bad.size)
        rep.worst[name] = float(margins.min())
        if bad.size:
            rep.offending[name] = np.asarray(data)[bad[0]].tolist()

    lam = sample_cone(rng, samples, n, p)
    mu = sample_cone(rng, samples, n, p)
    m_l = mpoly.mp_eval(lam, p).normalized
    m_m = mpoly.mp_eval(mu, p).normalized
    m_mid = mpoly.mp_eval(0.5 * (lam + mu), p).normalized
    scale = np.maximum(1.0, np.abs(m_l) + np.abs(m_m))
    record("concavity", m_mid - 0.5 * (m_l + m_m) + 1e-12 * scale,
           np.concatenate([lam, mu], axis=1))

    grad = grad_fn(lam, p)
    record("trace_bound", grad.sum(axis=1) - p + 1e-10, lam)
    record("gradient_positive", grad.min(axis=1), lam)
    euler = np.abs((grad * lam).sum(axis=1) - m_l) / m_l
    record("euler_identity", 1e-12 - euler, lam)
    prod = np.prod(grad, axis=1)
    record("appendix_inequality", prod - (p / n) ** n + 1e-12, lam)

    m_samples = max(1, min(samples, 1000))
    V, metric, lamV = sample_cone_matrices(rng, m_samples, n, p)
    if grad_fn is mpoly.mp_grad_eigen:
        mbar = mpoly.mbar_matrix(V, metric, p, t)
    else:
        l2, Q = mpoly.generalized_eigh(V, metric)
        mbar = mpoly.mbar_from_grad(mpoly.grad_from_spectrum(grad_fn(l2, p), Q), metric, t)
    ev = mpoly.contravariant_eigvals(mbar, metric)[:, 0]
    record("mbar_positive_definite", np.where(ev > 0, ev, -1.0), lamV)
    return rep


# ------------------------------------------------------------- ricci demo


@dataclass
class ConstancyReport:
    values: np.ndarray
    mean: float
    max_relative_deviation: float
    det_root_deviation: float | None
    tolerance: float
    passed: bool

    def to_dict(self):
        return {"mean": self.mean, "max_relative_deviation": self.max_relative_deviation,
                "det_root_deviation": self.det_root_deviation, "tolerance": self.tolerance,
                "passed": self.passed}


def _rel_dev(x):
    m = float(np.mean(x))
    return float(np.abs(x - m).max() / abs(m)), m


def ricci_constancy(u, problem):
    """M_p of -Ric of e^{2u} g relative to e^{2u} g, reconstructed through the
    transformation law (t = 0, so Ric = (n-2) A^0).  Returns (values, det-root or None).
    """
    geom = problem.geometry
    n = geom.dim
    aug = pde.augmented_hessian(u, geom, problem.A, problem.p, 0.0)
    neg_ric = (n - 2) * aug.tensor  # -Ric_tilde on the background frame
    w = np.exp(2.0 * u)[..., None, None]
    lam = metric_eigenvalues(neg_ric / w, geom)  # spectrum relative to e^{2u} g
    vals = mpoly.mp_eval(lam, problem.p).normalized
    det_root = None
    if problem.p == 1:
        gt = w * geom.metric
        det_root = np.linalg.det(np.linalg.solve(gt, neg_ric)) ** (1.0 / n)
    return vals, det_root


def theorem13_demo(problem, opts=None, tolerance=None):
    """Solve with t = 0 and constant f, then measure how constant M_p(-Ric) is."""
    from .solver import continuation_solve

    if problem.t != 0.0:
        raise ValueError("the Ricci demo runs at t = 0")
    if not np.all(problem.f == problem.f.flat[0]):
        raise ValueError("the Ricci demo needs constant f")
    u, trace, reports = continuation_solve(problem, opts)
    vals, det_root = ricci_constancy(u, problem)
    dev, mean = _rel_dev(vals)
    det_dev = None if det_root is None else _rel_dev(det_root)[0]
    tol = 10.0 * problem.grid.hmax ** 2 if tolerance is None else tolerance
    passed = dev <= tol and (det_dev is None or det_dev <= tol)
    return u, ConstancyReport(vals, mean, dev, det_dev, tol, bool(passed))

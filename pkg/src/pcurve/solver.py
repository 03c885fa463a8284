"""Damped Newton inside the cone and the continuity-method homotopy.

The family solved by :func:`continuation_solve` is

    f_s = s f + (1 - s),    A_s = s A - (1 - s) g / p,

whose s = 0 member has the exact solution u = 0 (since M_p(I/p) = 1).
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import pde
from .errors import ConeError, ContinuationFailure, ParameterError, SolverError, StepFailure
from .geometry import require_certified

log = logging.getLogger(__name__)

DIRECT_LIMIT = 3000


@dataclass(frozen=True)
class NewtonOptions:
    max_iters: int = 50
    residual_tol: float = 1e-10
    min_damping: float = 1e-6
    cone_margin_floor: float = 1e-10

    def __post_init__(self):
        if not (self.max_iters > 0 and self.residual_tol > 0 and self.min_damping > 0
                and self.cone_margin_floor > 0):
            raise ParameterError("Newton options must be positive")
        if not self.residual_tol < 1:
            raise ParameterError("residual_tol must be < 1")


@dataclass(frozen=True)
class ContinuationOptions:
    initial_step: float = 0.1
    min_step: float = 1e-4
    max_step: float = 0.25

    def __post_init__(self):
        if not 0 < self.min_step <= self.initial_step <= self.max_step <= 1:
            raise ParameterError("need 0 < min_step <= initial_step <= max_step <= 1")


@dataclass
class NewtonReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    damping_used: list = field(default_factory=list)
    cone_margins: list = field(default_factory=list)
    final_cone_margin: float = float("nan")
    converged: bool = False

    @property
    def one_shot(self):
        return self.converged and all(a == 1.0 for a in self.damping_used)

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "residual_history": list(self.residual_history),
            "damping_used": list(self.damping_used),
            "cone_margins": list(self.cone_margins),
            "final_cone_margin": self.final_cone_margin,
            "converged": self.converged,
        }


@dataclass
class ContinuationState:
    s: float
    u: np.ndarray
    f_s: np.ndarray
    A_s: np.ndarray
    step: float
    newton_iterations: int = 0
    residual: float = float("nan")
    cone_margin: float = float("nan")
    converged: bool = False

    def summary(self):
        return {
            "s": self.s,
            "step": self.step,
            "newton_iterations": self.newton_iterations,
            "residual": self.residual,
            "cone_margin": self.cone_margin,
            "converged": self.converged,
        }


class JsonLinesLog:
    """One JSON object per Newton iteration, written to an open text stream."""

    def __init__(self, stream):
        self.stream = stream

    def __call__(self, record):
        self.stream.write(json.dumps(record, sort_keys=True) + "\n")


# ----------------------------------------------------------- linear algebra


def _symbol(system):
    """Fourier symbol of the constant-coefficient stencil with mean coefficients."""
    shape, h = system.shape, system.spacing
    n = len(shape)
    theta = np.meshgrid(*[2.0 * np.pi * np.fft.fftfreq(m) for m in shape], indexing="ij")
    a, b, c = system.mean_second, system.mean_first, system.mean_zeroth
    sym = np.full(shape, c, dtype=np.complex128)
    for i in range(n):
        sym += a[i, i] * (2.0 * np.cos(theta[i]) - 2.0) / h[i] ** 2
        sym += 1j * b[i] * np.sin(theta[i]) / h[i]
        for j in range(n):
            if j != i:
                sym -= a[i, j] * np.sin(theta[i]) * np.sin(theta[j]) / (h[i] * h[j])
    return sym


def spectral_solve(system, rhs=None):
    """Exact solve of the mean-coefficient stencil operator by discrete Fourier transform."""
    rhs = system.rhs if rhs is None else rhs
    sym = _symbol(system)
    r = np.asarray(rhs).reshape(system.shape)
    return np.fft.ifftn(np.fft.fftn(r) / sym).real.ravel()


def linear_solve(system, rtol=1e-12):
    """Solve the (nonsymmetric) sparse system to relative residual <= rtol.

    Small systems use a sparse LU factorization.  Larger ones use GMRES
    preconditioned by the exact inverse of the mean-coefficient operator,
    falling back to LU if GMRES stalls.
    """
    A = system.matrix
    b = np.asarray(system.rhs, dtype=np.float64)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    if not np.all(np.isfinite(A.data)):
        raise SolverError("matrix has non-finite entries")

    def _check(x):
        rel = np.linalg.norm(A @ x - b) / bnorm
        return np.all(np.isfinite(x)) and rel <= rtol, rel

    if A.shape[0] > DIRECT_LIMIT and system.shape is not None:
        sym = _symbol(system)
        if np.all(np.abs(sym) > 0):
            shape = system.shape
            M = spla.LinearOperator(
                A.shape, matvec=lambda r: np.fft.ifftn(np.fft.fftn(r.reshape(shape)) / sym).real.ravel()
            )
            x, info = spla.gmres(A, b, M=M, rtol=0.1 * rtol, atol=0.0, restart=60, maxiter=20)
            ok, rel = _check(x)
            if ok:
                return x
            log.debug("gmres stalled (info=%s, rel=%.2e); falling back to LU", info, rel)
    try:
        x = spla.splu(A.tocsc()).solve(b)
    except RuntimeError as exc:
        raise SolverError(f"sparse factorization failed: {exc}") from exc
    ok, rel = _check(x)
    if not ok:
        # one step of iterative refinement
        x = x + spla.spsolve(A.tocsc(), b - A @ x)
        ok, rel = _check(x)
        if not ok:
            raise SolverError(f"linear solve residual {rel:.2e} exceeds {rtol:.1e}")
    return x


# ----------------------------------------------------------------- Newton


def newton_solve(problem, u0, opts=None, *, on_iter=None, s=None):
    """Damped Newton iteration u <- u + alpha delta with L delta = -F[u].

    alpha is halved from 1 until the trial state keeps the cone margin above
    ``opts.cone_margin_floor`` at every point and strictly lowers the
    residual sup-norm.
    """
    opts = opts or NewtonOptions()
    geom, A, f, p, t = problem.geometry, problem.A, problem.f, problem.p, problem.t
    u = np.array(u0, dtype=np.float64, copy=True)
    aug = pde.augmented_hessian(u, geom, A, p, t)
    if not aug.cone_margin > opts.cone_margin_floor:
        raise ConeError(
            f"initial guess outside the cone (margin {aug.cone_margin:.3e})",
            worst_sum=aug.cone_margin, location=aug.worst_point,
        )
    res = pde.residual(u, f, geom, A, p, t, aug=aug)
    report = NewtonReport(residual_history=[res.sup_norm], cone_margins=[aug.cone_margin])

    def emit(alpha):
        if on_iter is not None:
            on_iter({"s": s, "iter": report.iterations, "residual": report.residual_history[-1],
                     "damping": alpha, "cone_margin": report.cone_margins[-1]})

    emit(None)
    while res.sup_norm > opts.residual_tol:
        if report.iterations >= opts.max_iters:
            report.final_cone_margin = aug.cone_margin
            raise StepFailure(f"no convergence in {opts.max_iters} iterations", report)
        system = pde.linearize(u, f, geom, A, p, t, aug=aug)
        delta = linear_solve(system).reshape(u.shape)
        alpha = 1.0
        while True:
            trial = u + alpha * delta
            aug_t = pde.augmented_hessian(trial, geom, A, p, t)
            if aug_t.cone_margin > opts.cone_margin_floor:
                res_t = pde.residual(trial, f, geom, A, p, t, aug=aug_t)
                if res_t.sup_norm < res.sup_norm:
                    break
            alpha *= 0.5
            if alpha < opts.min_damping:
                report.final_cone_margin = aug.cone_margin
                raise StepFailure(f"damping underflow at iteration {report.iterations}", report)
        u, aug, res = trial, aug_t, res_t
        report.iterations += 1
        report.residual_history.append(res.sup_norm)
        report.damping_used.append(alpha)
        report.cone_margins.append(aug.cone_margin)
        emit(alpha)
    report.converged = True
    report.final_cone_margin = aug.cone_margin
    return u, report


# ----------------------------------------------------------- continuation


def family_member(problem, s):
    """(f_s, A_s); at s = 1 these are the problem's own arrays."""
    if s == 1.0:
        return problem.f, problem.A
    g = np.asarray(problem.geometry.metric)
    f_s = s * problem.f + (1.0 - s)
    A_s = s * problem.A - (1.0 - s) * (1.0 / problem.p) * g
    return f_s, A_s


def family_is_constant(problem):
    """True when every member of the family equals the target problem."""
    g = np.asarray(problem.geometry.metric)
    return bool(np.all(problem.f == 1.0) and np.array_equal(problem.A, -(1.0 / problem.p) * g))


def continuation_solve(problem, opts=None, cont=None, *, on_iter=None, certify=True):
    """Carry u = 0 at s = 0 to the solution at s = 1.

    Returns ``(u, trace, reports)`` where ``trace`` lists the accepted
    :class:`ContinuationState` values (starting with s = 0) and ``reports``
    the Newton reports of every attempted step.
    """
    opts = opts or NewtonOptions()
    cont = cont or ContinuationOptions()
    if not np.all(problem.f > 0):
        raise ConeError("f must be positive everywhere", worst_sum=float(np.min(problem.f)))
    if certify:
        require_certified(problem.geometry, problem.p, problem.t, 0.0, A=problem.A)

    u = np.zeros(problem.grid.shape)
    f0, A0 = family_member(problem, 0.0)
    sub = problem.with_data(A=A0, f=f0)
    u, rep0 = newton_solve(sub, u, opts, on_iter=on_iter, s=0.0)
    trace = [ContinuationState(0.0, u.copy(), f0, A0, 0.0, rep0.iterations,
                               rep0.residual_history[-1], rep0.final_cone_margin, True)]
    reports = [rep0]

    s = 0.0
    constant = family_is_constant(problem)
    step = 1.0 if constant else cont.initial_step
    streak = 0
    while s < 1.0:
        s_try = min(1.0, s + step)
        f_s, A_s = family_member(problem, s_try)
        sub = problem.with_data(A=A_s, f=f_s)
        try:
            u_new, rep = newton_solve(sub, u, opts, on_iter=on_iter, s=s_try)
        except (StepFailure, ConeError, SolverError) as exc:
            reports.append(getattr(exc, "report", None))
            log.info("s-step %.4g -> %.4g failed (%s); halving", s, s_try, exc)
            step *= 0.5
            streak = 0
            if step < cont.min_step:
                raise ContinuationFailure(f"s-step underflow at s={s:.6g}", trace[-1], trace)
            continue
        reports.append(rep)
        trace.append(ContinuationState(s_try, u_new.copy(), f_s, A_s, s_try - s, rep.iterations,
                                       rep.residual_history[-1], rep.final_cone_margin, True))
        log.info("s=%.4f accepted after %d Newton iterations", s_try, rep.iterations)
        u, s = u_new, s_try
        streak = streak + 1 if rep.one_shot else 0
        if streak >= 2:
            step *= 2.0
            streak = 0
        if not constant:
            step = min(max(step, cont.min_step), cont.max_step)
    return u, trace, reports


@dataclass
class UniquenessReport:
    trials: int
    max_pairwise_distance: float
    solutions: list
    initial_guesses: list
    reports: list

    def to_dict(self):
        return {"trials": self.trials, "max_pairwise_distance": self.max_pairwise_distance}


def _smooth_guess(grid, rng, amplitude):
    x = grid.coords()
    out = np.zeros(grid.shape)
    for _ in range(3):
        k = rng.integers(-1, 2, size=grid.dim)
        if not np.any(k):
            k[0] = 1
        phase = rng.uniform(0, 2 * np.pi)
        out += amplitude * rng.uniform(-1, 1) * np.cos(sum(ki * xi for ki, xi in zip(k, x)) + phase)
    return out


def uniqueness_probe(problem, opts=None, trials=3, seed=0, reference=None):
    """Solve from several initial guesses; report the max pairwise sup-distance.

    Guesses are constants and random smooth perturbations, each shrunk until
    it lies inside the cone.  A guess whose Newton run fails falls back to
    the continuation path.
    """
    opts = opts or NewtonOptions()
    rng = np.random.default_rng(seed)
    grid = problem.grid
    consts = [0.0, 0.3, -0.3, 0.6, -0.6]
    guesses, sols, reps = [], [], []
    for k in range(trials):
        base = np.full(grid.shape, consts[k % len(consts)])
        guess = base
        if k > 0:
            amp = 0.05
            for _ in range(20):
                guess = base + _smooth_guess(grid, rng, amp)
                aug = pde.augmented_hessian(guess, problem.geometry, problem.A, problem.p, problem.t)
                if aug.cone_margin > opts.cone_margin_floor:
                    break
                amp *= 0.5
            else:
                guess = base
        guesses.append(guess)
        try:
            u, rep = newton_solve(problem, guess, opts)
        except (StepFailure, ConeError, SolverError):
            u, _, rr = continuation_solve(problem, opts)
            rep = rr[-1]
        sols.append(u)
        reps.append(rep)
    dist = 0.0
    for i in range(len(sols)):
        for j in range(i + 1, len(sols)):
            dist = max(dist, float(np.abs(sols[i] - sols[j]).max()))
    if reference is not None:
        for u in sols:
            dist = max(dist, float(np.abs(u - reference).max()))
    return UniquenessReport(trials, dist, sols, guesses, reps)

"""TOML problem configuration.

A config is a versioned document (``schema = "pcurve/1"``); unknown keys are
rejected.  :func:`parse` produces a :class:`ProblemSpec`, :func:`dumps` writes
it back, and ``parse(dumps(spec)) == spec``.
"""

import os
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import geometry, manufactured, pde
from .errors import ParameterError
from .fieldio import read_field
from .solver import ContinuationOptions, NewtonOptions
from .trig import TrigPoly

SCHEMA = "pcurve/1"


class ConfigError(ParameterError):
    """Config does not parse or does not validate (CLI exit code 2)."""


def _take(d, cls, where):
    d = dict(d or {})
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    return d


def _trig(d, where):
    if d is None:
        return None
    if isinstance(d, TrigPoly):
        return d
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a table with 'constant' and 'terms'")
    extra = set(d) - {"constant", "terms"}
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(extra))}")
    for term in d.get("terms", ()):
        bad = set(term) - {"amp", "k", "kind"}
        if bad:
            raise ConfigError(f"unknown key(s) in a {where} term: {', '.join(sorted(bad))}")
    try:
        return TrigPoly.from_dict(d)
    except (TypeError, ParameterError) as exc:
        raise ConfigError(f"bad trigonometric polynomial in {where}: {exc}") from exc


@dataclass(frozen=True)
class Background:
    kind: str = "flat"  # flat | conformal_flat | prescribed
    phi: TrigPoly = None
    file: str = None


@dataclass(frozen=True)
class Curvature:
    mode: str = "isotropic"  # geometric | isotropic | file
    c: float = 1.0
    file: str = None


@dataclass(frozen=True)
class RHS:
    kind: str = "constant"  # constant | trig | file | manufactured
    value: float = 1.0
    poly: TrigPoly = None
    file: str = None
    u_star: TrigPoly = None
    mode: str = "discrete"  # manufactured: discrete | continuum


@dataclass(frozen=True)
class SolverSection:
    max_iters: int = 50
    residual_tol: float = 1e-10
    min_damping: float = 1e-6
    cone_margin_floor: float = 1e-10
    initial_step: float = 0.1
    min_step: float = 1e-4
    max_step: float = 0.25
    uniqueness_trials: int = 0

    def newton(self):
        return NewtonOptions(self.max_iters, self.residual_tol, self.min_damping,
                             self.cone_margin_floor)

    def continuation(self):
        return ContinuationOptions(self.initial_step, self.min_step, self.max_step)


@dataclass(frozen=True)
class Convergence:
    resolutions: tuple = ()


@dataclass(frozen=True)
class Verify:
    dims: tuple = (3, 4, 5)
    t_values: tuple = (-1.0, 0.0, 0.5, 0.99)
    samples: int = 10000
    seed: int = 0
    # test hook: "corrupt_gradient" halves the eigenvalue gradient
    fault_injection: str = "none"


@dataclass(frozen=True)
class Output:
    dir: str = None


@dataclass(frozen=True)
class ProblemSpec:
    n: int
    p: int
    t: float
    grid: tuple
    background: Background = field(default_factory=Background)
    curvature: Curvature = field(default_factory=Curvature)
    f: RHS = field(default_factory=RHS)
    solver: SolverSection = field(default_factory=SolverSection)
    convergence: Convergence = field(default_factory=Convergence)
    verify: Verify = field(default_factory=Verify)
    output: Output = field(default_factory=Output)
    base_dir: str = field(default=".", compare=False)

    def resolve(self, path):
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)


_TOP = {"schema", "n", "p", "t", "grid", "background", "curvature", "f", "solver",
        "convergence", "verify", "output"}


def from_dict(doc, base_dir="."):
    doc = dict(doc)
    unknown = sorted(set(doc) - _TOP)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    if doc.get("schema") != SCHEMA:
        raise ConfigError(f"schema must be {SCHEMA!r}, got {doc.get('schema')!r}")
    for key in ("n", "p", "t", "grid"):
        if key not in doc:
            raise ConfigError(f"missing required key {key!r}")
    bg = _take(doc.get("background"), Background, "background")
    bg["phi"] = _trig(bg.get("phi"), "background.phi")
    cv = _take(doc.get("curvature"), Curvature, "curvature")
    fd = _take(doc.get("f"), RHS, "f")
    fd["poly"] = _trig(fd.get("poly"), "f.poly")
    fd["u_star"] = _trig(fd.get("u_star"), "f.u_star")
    sv = _take(doc.get("solver"), SolverSection, "solver")
    cg = _take(doc.get("convergence"), Convergence, "convergence")
    if "resolutions" in cg:
        cg["resolutions"] = tuple(int(r) for r in cg["resolutions"])
    vf = _take(doc.get("verify"), Verify, "verify")
    for key in ("dims", "t_values"):
        if key in vf:
            vf[key] = tuple(vf[key])
    out = _take(doc.get("output"), Output, "output")
    try:
        spec = ProblemSpec(
            n=doc["n"], p=doc["p"], t=float(doc["t"]), grid=tuple(int(g) for g in doc["grid"]),
            background=Background(**bg), curvature=Curvature(**cv), f=RHS(**fd),
            solver=SolverSection(**sv), convergence=Convergence(**cg), verify=Verify(**vf),
            output=Output(**out), base_dir=base_dir,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    validate(spec)
    return spec


def parse(text, base_dir="."):
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error: {exc}") from exc
    return from_dict(doc, base_dir)


def load(path):
    with open(path) as fh:
        return parse(fh.read(), base_dir=os.path.dirname(os.path.abspath(path)))


def _clean(obj):
    if isinstance(obj, TrigPoly):
        return obj.to_dict()
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def to_dict(spec):
    d = {"schema": SCHEMA, "n": spec.n, "p": spec.p, "t": spec.t, "grid": list(spec.grid)}
    for name in ("background", "curvature", "f", "solver", "convergence", "verify", "output"):
        section = getattr(spec, name)
        d[name] = _clean({f.name: getattr(section, f.name) for f in fields(section)})
    return d


def dumps(spec):
    return tomli_w.dumps(to_dict(spec))


# ---------------------------------------------------------------- validation


def validate(spec):
    if not isinstance(spec.n, int) or not 3 <= spec.n <= 6:
        raise ConfigError(f"n must be an integer in [3, 6], got {spec.n!r}")
    if not isinstance(spec.p, int) or not 1 <= spec.p <= spec.n:
        raise ConfigError(f"p must be an integer in [1, n], got {spec.p!r}")
    if not spec.t < 1:
        raise ConfigError(f"t = {spec.t} violates the hypothesis t < 1 of the existence theorem")
    if len(spec.grid) != spec.n:
        raise ConfigError(f"grid has {len(spec.grid)} axes, n = {spec.n}")
    if min(spec.grid) < 8:
        raise ConfigError("grid needs at least 8 points per axis")
    if spec.background.kind not in ("flat", "conformal_flat", "prescribed"):
        raise ConfigError(f"unknown background kind {spec.background.kind!r}")
    if spec.background.kind == "conformal_flat" and spec.background.phi is None:
        raise ConfigError("conformal_flat background needs background.phi")
    if spec.background.kind == "prescribed" and not spec.background.file:
        raise ConfigError("prescribed background needs background.file")
    if spec.curvature.mode not in ("geometric", "isotropic", "file"):
        raise ConfigError(f"unknown curvature mode {spec.curvature.mode!r}")
    if spec.curvature.mode == "file" and not spec.curvature.file:
        raise ConfigError("curvature mode 'file' needs curvature.file")
    f = spec.f
    if f.kind not in ("constant", "trig", "file", "manufactured"):
        raise ConfigError(f"unknown f kind {f.kind!r}")
    if f.kind == "constant" and not f.value > 0:
        raise ConfigError("f must be strictly positive")
    if f.kind == "trig" and f.poly is None:
        raise ConfigError("f kind 'trig' needs f.poly")
    if f.kind == "file" and not f.file:
        raise ConfigError("f kind 'file' needs f.file")
    if f.kind == "manufactured":
        if f.u_star is None:
            raise ConfigError("manufactured f needs f.u_star")
        if f.mode not in ("discrete", "continuum"):
            raise ConfigError("manufactured mode must be 'discrete' or 'continuum'")
        if f.mode == "continuum" and (spec.curvature.mode != "isotropic"
                                      or spec.background.kind == "prescribed"):
            raise ConfigError("continuum manufactured mode needs an analytic background "
                              "(flat or conformal_flat) and isotropic curvature")
    for poly, where in ((f.poly, "f.poly"), (f.u_star, "f.u_star"), (spec.background.phi, "phi")):
        if poly is not None and any(len(tm.k) != spec.n for tm in poly.terms):
            raise ConfigError(f"{where}: wave vectors must have {spec.n} components")
    if spec.verify.fault_injection not in ("none", "corrupt_gradient"):
        raise ConfigError(f"unknown fault_injection {spec.verify.fault_injection!r}")
    try:
        spec.solver.newton()
        spec.solver.continuation()
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc
    return spec


# ------------------------------------------------------------- construction


@dataclass
class BuiltProblem:
    problem: pde.Problem
    u_star: np.ndarray = None


def build_geometry(spec, grid):
    bg = spec.background
    if bg.kind == "flat":
        return geometry.build_flat(grid, spec.t)
    if bg.kind == "conformal_flat":
        return geometry.build_conformal_flat(grid, bg.phi.values(grid), spec.t)
    metric = read_field(spec.resolve(bg.file))
    return geometry.build_from_metric(grid, metric, spec.t, label="prescribed")


def build_problem(spec, grid_shape=None):
    """Materialize the discrete problem (optionally on another resolution)."""
    grid = geometry.Grid(grid_shape or spec.grid)
    geom = build_geometry(spec, grid)
    cv = spec.curvature
    if cv.mode == "geometric":
        A = geometry.modified_schouten(geom, spec.t)
    elif cv.mode == "isotropic":
        A = pde.isotropic_A(geom, cv.c, spec.p)
    else:
        A = read_field(spec.resolve(cv.file))
    f = spec.f
    u_star = None
    if f.kind == "constant":
        fv = np.full(grid.shape, float(f.value))
    elif f.kind == "trig":
        fv = f.poly.values(grid)
    elif f.kind == "file":
        fv = read_field(spec.resolve(f.file))
    else:
        u_star = f.u_star.values(grid)
        if f.mode == "discrete":
            fv = manufactured.discrete_f(u_star, geom, A, spec.p, spec.t)
        else:
            phi = spec.background.phi if spec.background.kind == "conformal_flat" else None
            fv = manufactured.continuum_f(f.u_star, grid, spec.p, spec.t, phi, cv.c)
    fv = np.asarray(fv, dtype=np.float64)
    if fv.shape != grid.shape:
        raise ConfigError(f"f has shape {fv.shape}, grid is {grid.shape}")
    if not np.all(fv > 0):
        raise ConfigError(f"f must be strictly positive (min {fv.min():.3e} on the grid)")
    try:
        problem = pde.Problem(geom, np.asarray(A, dtype=np.float64), fv, spec.p, spec.t)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc
    return BuiltProblem(problem, u_star)


def spec_summary(spec):
    return {k: v for k, v in asdict(spec).items() if k in ("n", "p", "t", "grid")}

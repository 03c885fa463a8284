"""Numerical solver for conformal metrics with prescribed p-fold sum curvature
on flat tori, with executable checks of the supporting inequalities."""

from ._accel import backend
from .errors import (ConeError, ContinuationFailure, GeometryError, ParameterError, PCurveError,
                     SolverError, StepFailure)
from .geometry import (Grid, GeometrySetup, build_conformal_flat, build_flat, build_from_metric,
                       certify_background, conformal_change, conformal_schouten, modified_schouten)
from .mpoly import cone_contains, mbar_matrix, mp_eval, mp_grad_eigen, mp_grad_matrix
from .pde import Problem, augmented_hessian, isotropic_A, linearize, residual
from .solver import (ContinuationOptions, NewtonOptions, continuation_solve, linear_solve,
                     newton_solve, uniqueness_probe)
from .estimates import appendix_inequality, c0_bounds, check_solution, property_sweep
from .trig import TrigPoly, TrigTerm

__version__ = "0.1.0"

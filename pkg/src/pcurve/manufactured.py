"""Right-hand sides with a known solution u*.

``discrete_f`` makes u* an exact root of the discrete equation.
``continuum_f`` evaluates the continuous operator on analytic derivatives
of u*, so the discrete solution differs from u* by the truncation error.
"""

import numpy as np

from . import mpoly, pde
from .errors import ConeError, ParameterError


def discrete_f(u_star, geometry, A, p, t):
    aug = pde.augmented_hessian(u_star, geometry, A, p, t)
    if not aug.cone_margin > 0:
        raise ConeError("manufactured u* is not admissible", aug.cone_margin, aug.worst_point)
    return mpoly.mp_eval(aug.spectrum, p).normalized * np.exp(-2.0 * u_star)


def continuum_f(u_star, grid, p, t, phi=None, c=1.0):
    """f = M_p(Hbar u*) e^{-2u*} on g = e^{2 phi} delta with A = -(c/p) g, all analytic.

    ``u_star`` and ``phi`` are :class:`~pcurve.trig.TrigPoly` instances;
    ``phi=None`` means the flat metric.
    """
    n = grid.dim
    if n < 3:
        raise ParameterError("dimension must be at least 3")
    u = u_star.values(grid)
    du = u_star.gradient(grid)
    d2u = u_star.hessian(grid)
    if phi is None:
        ph = np.zeros(grid.shape)
        dph = np.zeros(grid.shape + (n,))
    else:
        ph = phi.values(grid)
        dph = phi.gradient(grid)
    eye = np.eye(n)
    w = np.exp(2.0 * ph)
    g = w[..., None, None] * eye
    # Gamma^k_ij = delta_ik phi_j + delta_jk phi_i - delta_ij phi_k
    dot = np.einsum("...k,...k->...", dph, du)
    hess = (d2u - dph[..., None, :] * du[..., :, None] - dph[..., :, None] * du[..., None, :]
            + dot[..., None, None] * eye)
    lap = np.trace(hess, axis1=-2, axis2=-1) / w
    gn2 = np.einsum("...k,...k->...", du, du) / w
    A = -(c / p) * g
    Hbar = (hess + (((1 - t) / (n - 2)) * lap + ((2 - t) / 2) * gn2)[..., None, None] * g
            - du[..., :, None] * du[..., None, :] - A)
    lam = np.linalg.eigvalsh(Hbar / w[..., None, None])
    return mpoly.mp_eval(lam, p).normalized * np.exp(-2.0 * u)

import numpy as np
import pytest

from pcurve import geometry as geo
from pcurve import pde
from pcurve.errors import ConeError, ParameterError


def smooth_field(grid, rng, amp, modes=3):
    x = grid.coords()
    out = np.zeros(grid.shape)
    for _ in range(modes):
        k = rng.integers(-1, 2, size=grid.dim)
        out += amp * rng.uniform(-1, 1) * np.cos(sum(ki * xi for ki, xi in zip(k, x))
                                                  + rng.uniform(0, 2 * np.pi))
    return out


def curved_setup(shape, p, t, rng):
    grid = geo.Grid(shape)
    x = grid.coords()
    geom = geo.build_conformal_flat(grid, 0.15 * np.sin(x[0]) + 0.1 * np.cos(x[1]), t)
    A = pde.isotropic_A(geom, 1.0, p)
    # a nonisotropic perturbation, kept small enough to stay certified
    B = rng.standard_normal(grid.shape + (grid.dim, grid.dim)) * 0.03
    A = A + 0.5 * (B + np.swapaxes(B, -1, -2))
    f = 1.0 + 0.2 * np.sin(x[0])
    return geom, A, f


@pytest.mark.parametrize("shape,p,t", [
    ((8, 9, 10), 1, 0.0),
    ((8, 9, 10), 2, 0.5),
    ((10, 8, 8), 3, -1.0),
    ((8, 8, 8, 8), 2, 0.0),
])
def test_jacobian_matches_directional_differences(shape, p, t, rng):
    geom, A, f = curved_setup(shape, p, t, rng)
    eps = 1e-5
    worst = 0.0
    for _ in range(20):
        u = smooth_field(geom.grid, rng, 0.02)
        v = smooth_field(geom.grid, rng, 1.0)
        sysm = pde.linearize(u, f, geom, A, p, t)
        Lv = sysm.matrix @ v.ravel()
        Fp = pde.residual(u + eps * v, f, geom, A, p, t).values.ravel()
        Fm = pde.residual(u - eps * v, f, geom, A, p, t).values.ravel()
        fd = (Fp - Fm) / (2 * eps)
        worst = max(worst, np.linalg.norm(Lv - fd) / np.linalg.norm(fd))
    assert worst <= 1e-6


def test_augmented_hessian_base_point():
    grid = geo.Grid.cube(3, 8)
    flat = geo.build_flat(grid)
    for p in (1, 2, 3):
        A = pde.isotropic_A(flat, 1.0, p)
        aug = pde.augmented_hessian(np.zeros(grid.shape), flat, A, p, 0.0)
        np.testing.assert_allclose(aug.tensor, np.asarray(flat.metric) / p, atol=0)
        assert aug.cone_margin == pytest.approx(1.0, abs=1e-15)
        aug_c = pde.augmented_hessian(np.full(grid.shape, 0.4), flat, A, p, 0.0)
        np.testing.assert_array_equal(aug_c.tensor, aug.tensor)


def test_t_one_drops_trace_term(rng):
    grid = geo.Grid.cube(3, 8)
    flat = geo.build_flat(grid)
    u = smooth_field(grid, rng, 0.1)
    A = pde.isotropic_A(flat, 1.0, 2)
    aug = pde.augmented_hessian(u, flat, A, 2, 1.0)
    du = geo.gradient(u, grid)
    want = (geo.second_partials(u, grid) + 0.5 * (du ** 2).sum(-1)[..., None, None] * np.eye(3)
            - du[..., :, None] * du[..., None, :] - A)
    np.testing.assert_allclose(aug.tensor, want, atol=1e-13)


def test_residual_examples():
    grid = geo.Grid.cube(3, 8)
    flat = geo.build_flat(grid)
    f = np.ones(grid.shape)
    for p in (1, 2, 3):
        A = pde.isotropic_A(flat, 1.0, p)
        r = pde.residual(np.zeros(grid.shape), f, flat, A, p, 0.0)
        assert r.sup_norm <= 1e-13
        c = 0.3
        r = pde.residual(np.full(grid.shape, c), f, flat, A, p, 0.0)
        np.testing.assert_allclose(r.values, 1 - np.exp(2 * c), rtol=1e-13)


def test_residual_outside_cone_raises():
    grid = geo.Grid.cube(3, 8)
    flat = geo.build_flat(grid)
    with pytest.raises(ConeError) as exc:
        pde.residual(np.zeros(grid.shape), np.ones(grid.shape), flat, np.zeros(grid.shape + (3, 3)), 2, 0.0)
    assert exc.value.location is not None


def test_translation_equivariance(rng):
    grid = geo.Grid((8, 10, 12))
    flat = geo.build_flat(grid)
    A = pde.isotropic_A(flat, 1.3, 2)
    f = np.full(grid.shape, 0.8)
    u = smooth_field(grid, rng, 0.05)
    r = pde.residual(u, f, flat, A, 2, 0.3).values
    for axis, s in [(0, 3), (1, -2), (2, 5)]:
        rs = pde.residual(np.roll(u, s, axis), f, flat, A, 2, 0.3).values
        np.testing.assert_allclose(rs, np.roll(r, s, axis), atol=1e-14)


def test_linearization_at_base_point():
    grid = geo.Grid.cube(3, 8)
    flat = geo.build_flat(grid)
    n, p = 3, 2
    A = pde.isotropic_A(flat, 1.0, p)
    sysm = pde.linearize(np.zeros(grid.shape), np.ones(grid.shape), flat, A, p, 0.0)
    assert sysm.stencil_width == 2 * n * n + 1
    np.testing.assert_allclose(sysm.mean_second, (p / n) * (1 + n / (n - 2)) * np.eye(n), atol=1e-14)
    np.testing.assert_allclose(sysm.mean_first, 0.0, atol=0)
    assert sysm.mean_zeroth == pytest.approx(-2.0)
    # row sums: the derivative stencils annihilate constants, leaving -2
    np.testing.assert_allclose(np.asarray(sysm.matrix.sum(axis=1)).ravel(), -2.0, atol=1e-11)
    np.testing.assert_array_equal(sysm.rhs, 0.0)


def test_zeroth_order_sign_negative(rng):
    geom, A, f = curved_setup((8, 8, 8), 2, 0.0, rng)
    u = smooth_field(geom.grid, rng, 0.02)
    sysm = pde.linearize(u, f, geom, A, 2, 0.0)
    ones = np.ones(geom.grid.size)
    np.testing.assert_allclose(sysm.matrix @ ones, -2 * f.ravel() * np.exp(2 * u.ravel()), rtol=1e-9)


def test_ellipticity_examples():
    grid = geo.Grid.cube(3, 8)
    flat = geo.build_flat(grid)
    A = pde.isotropic_A(flat, 1.0, 2)
    rep = pde.ellipticity_certificate(np.zeros(grid.shape), flat, A, 2, 0.0)
    assert rep.min_eigenvalue == pytest.approx(8 / 3, rel=1e-14) and rep.elliptic
    rep = pde.ellipticity_certificate(np.zeros(grid.shape), flat, A, 2, 0.999)
    assert rep.min_eigenvalue == pytest.approx(2 / 3 * (1 + 0.001 * 3), rel=1e-12)


def test_ellipticity_positive_on_random_states(rng):
    for p, t in [(1, -1.0), (2, 0.5), (3, 0.99)]:
        geom, A, f = curved_setup((8, 8, 8), p, t, rng)
        u = smooth_field(geom.grid, rng, 0.02)
        assert pde.ellipticity_certificate(u, geom, A, p, t).min_eigenvalue > 0


def test_problem_validation():
    grid = geo.Grid.cube(3, 8)
    flat = geo.build_flat(grid)
    A = pde.isotropic_A(flat, 1.0, 2)
    f = np.ones(grid.shape)
    with pytest.raises(ParameterError):
        pde.Problem(flat, A, f, 4, 0.0)
    with pytest.raises(ParameterError):
        pde.Problem(flat, A, f, 2, 1.0)
    with pytest.raises(ParameterError):
        pde.Problem(flat, A, f[:4], 2, 0.0)


def test_coo_roundtrip(tmp_path, rng):
    geom, A, f = curved_setup((8, 8, 8), 2, 0.0, rng)
    sysm = pde.linearize(np.zeros(geom.grid.shape), f, geom, A, 2, 0.0)
    path = tmp_path / "jac.coo"
    pde.dump_coo(sysm, path)
    back = pde.load_coo(path)
    assert abs(back - sysm.matrix).max() == 0.0
    with open(path) as fh:
        assert fh.readline().split()[1:] == [str(geom.grid.size)] * 2 + [str(sysm.matrix.nnz)]

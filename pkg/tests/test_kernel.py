"""Hartree potential, its gradient companion, backends and the probes."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import dblquad

from hartree_bvp.errors import ConfigError
from hartree_bvp.grid import build_grid, norm
from hartree_bvp.kernel import (COULOMB, DIRECT, FAST, SOFTENED, KernelSpec, _self_cell_coulomb,
                                apply_nonlinearity, convolution_matrix, gradient_kernel_convolution,
                                hardy_quotient, hartree_potential, lipschitz_probe, offset_box_grid,
                                potential_linfty_bound_check, random_hardy_field,
                                random_smooth_field)

SOFT = KernelSpec(SOFTENED, 0.1, FAST)


def brute_force_potential(u, g, k):
    """Double loop over node pairs, the quadrature sum written out."""
    p = g.points
    w = g.quad_w.ravel()
    rho = np.abs(u.ravel()) ** 2
    out = np.zeros(g.size)
    for i in range(g.size):
        acc = 0.0
        for j in range(g.size):
            r = math.dist(p[i], p[j])
            if k.family == SOFTENED:
                kv = 1.0 / math.sqrt(r * r + k.soften_a**2)
            else:
                kv = _self_cell_coulomb(*g.h) if r == 0 else 1.0 / r
            acc += w[j] * kv * rho[j]
        out[i] = acc
    return out.reshape(g.shape)


def test_spec_validation():
    with pytest.raises(ConfigError):
        KernelSpec(SOFTENED, 0.0)
    with pytest.raises(ConfigError):
        KernelSpec("yukawa", 0.1)
    with pytest.raises(ConfigError):
        KernelSpec(SOFTENED, 0.1, "gpu")
    with pytest.raises(ConfigError, match="coulomb requires dim=2"):
        hartree_potential(np.ones(16), build_grid(1, (0, 1), 16), KernelSpec(COULOMB, 0.0))


def test_zero_field():
    g = build_grid(1, (0, 1), 32)
    z = np.zeros(g.shape, dtype=complex)
    assert np.all(hartree_potential(z, g, SOFT) == 0)
    assert np.all(apply_nonlinearity(z, g, SOFT) == 0)
    assert np.all(gradient_kernel_convolution(z, g, SOFT) == 0)


@pytest.mark.parametrize("backend", [DIRECT, FAST])
def test_single_node_density(backend):
    g = build_grid(1, (0, 1), 33)
    k = KernelSpec(SOFTENED, 0.1, backend)
    j0 = 7
    u = np.zeros(g.shape, dtype=complex)
    u[j0] = 1.0
    x = g.coords[0]
    y0 = x[j0]
    w0 = g.quad_w[j0]
    expect = w0 / np.sqrt((x - y0) ** 2 + 0.01)
    assert np.allclose(hartree_potential(u, g, k), expect, rtol=1e-13, atol=0)
    expect_grad = -w0 * (x - y0) / ((x - y0) ** 2 + 0.01) ** 1.5
    assert np.allclose(gradient_kernel_convolution(u, g, k)[0], expect_grad, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("dim,family,n", [(1, SOFTENED, 32), (2, SOFTENED, 8), (2, COULOMB, 8)])
def test_backends_match_brute_force(dim, family, n):
    g = build_grid(dim, [(0, 1), (0, 1.5)][:dim], n)
    u = random_smooth_field(g, np.random.default_rng(11))
    oracle = brute_force_potential(u, g, KernelSpec(family, 0.1))
    for backend in (DIRECT, FAST):
        f = hartree_potential(u, g, KernelSpec(family, 0.1, backend))
        assert np.max(np.abs(f - oracle)) <= 1e-12 * np.max(np.abs(oracle))


def test_self_cell_average():
    """Closed-form mean of 1/|x| over a cell against adaptive quadrature on one quadrant."""
    for hx, hy in [(0.1, 0.1), (0.05, 0.2), (1.0, 0.3)]:
        val, _ = dblquad(lambda y, x: 1.0 / math.hypot(x, y), 0, hx / 2, 0, hy / 2,
                         epsabs=1e-13, epsrel=1e-11)
        assert _self_cell_coulomb(hx, hy) == pytest.approx(val / (hx * hy / 4), rel=1e-8)


def test_convolution_matrix_symmetry():
    for g, k in [(build_grid(1, (0, 1), 12), SOFT), (build_grid(2, [(0, 1), (0, 2)], [5, 7]),
                                                    KernelSpec(COULOMB, 0.0))]:
        K = convolution_matrix(g, k)
        w = g.quad_w.ravel()
        sym = K / w[None, :]
        assert np.array_equal(sym, sym.T)


def test_gradient_kernel_matches_finite_differences():
    """Centred differences of f(u) converge to (grad k) * |u|^2 at second order."""
    errs = []
    for n in (33, 65, 129, 257):
        g = build_grid(1, (0, 1), n)
        x = g.coords[0]
        u = np.exp(-((x - 0.4) ** 2) / 0.02) * (1 + 0.5j * x)
        f = hartree_potential(u, g, SOFT)
        fd = (f[2:] - f[:-2]) / (2 * g.h[0])
        gk = gradient_kernel_convolution(u, g, SOFT)[0, 1:-1]
        errs.append(np.max(np.abs(fd - gk)))
    orders = [math.log2(a / b) for a, b in zip(errs[:-1], errs[1:])]
    assert all(abs(o - 2.0) <= 0.3 for o in orders), orders


def test_gradient_kernel_sign_2d():
    g = build_grid(2, [(0, 1), (0, 1)], 65)
    x, y = g.coords
    u = np.exp(-((x - 0.5) ** 2 + (y - 0.45) ** 2) / 0.02) + 0j
    f = hartree_potential(u, g, SOFT)
    gk = gradient_kernel_convolution(u, g, SOFT)
    fd = (f[2:, 1:-1] - f[:-2, 1:-1]) / (2 * g.h[0])
    assert np.max(np.abs(fd - gk[0, 1:-1, 1:-1])) <= 1e-2 * np.max(np.abs(gk[0]))


fields_1d = st.integers(0, 2**32 - 1).map(
    lambda s: random_smooth_field(build_grid(1, (0, 1), 48), np.random.default_rng(s)))


@settings(max_examples=30, deadline=None)
@given(u=fields_1d, theta=st.floats(0, 2 * np.pi), scale=st.floats(0.01, 100))
def test_nonlinearity_properties(u, theta, scale):
    g = build_grid(1, (0, 1), 48)
    f = hartree_potential(scale * u, g, SOFT)
    assert np.all(f >= 0)
    rot = np.exp(1j * theta)
    a = apply_nonlinearity(rot * u, g, SOFT)
    b = rot * apply_nonlinearity(u, g, SOFT)
    assert np.max(np.abs(a - b)) <= 1e-14 * max(1.0, np.max(np.abs(b)))
    assert np.all(np.imag(apply_nonlinearity(np.real(u) + 0j, g, SOFT)) == 0)


def test_lipschitz_probe_reductions():
    g = build_grid(1, (0, 1), 64)
    rng = np.random.default_rng(5)
    v = random_smooth_field(g, rng)
    same = lipschitz_probe(v, v, g, SOFT)
    assert same.numerator == 0 and same.ratio == 0
    zero = lipschitz_probe(v, np.zeros_like(v), g, SOFT)
    assert zero.numerator == pytest.approx(norm(apply_nonlinearity(v, g, SOFT), g, "H1"), rel=1e-14)
    assert zero.bound_factor == pytest.approx(norm(v, g, "H1") ** 3, rel=1e-14)


def test_linfty_bound_record():
    g = build_grid(1, (0, 1), 64)
    z = potential_linfty_bound_check(np.zeros(g.shape, dtype=complex), g, SOFT)
    assert z.lhs == 0 and z.rhs == 0
    u = random_smooth_field(g, np.random.default_rng(2))
    a = potential_linfty_bound_check(u, g, SOFT)
    b = potential_linfty_bound_check(3 * u, g, SOFT)
    assert b.lhs == pytest.approx(9 * a.lhs, rel=1e-12)
    assert b.rhs == pytest.approx(9 * a.rhs, rel=1e-12)


def test_hardy_quotient_basics():
    g = offset_box_grid(17)
    assert hardy_quotient(np.zeros(g.shape, dtype=complex), g) == 0.0
    u = random_hardy_field(g, np.random.default_rng(1))
    q = hardy_quotient(u, g)
    assert q > 0
    for c in (-3.0, 0.01, 2j):
        assert hardy_quotient(c * u, g) == pytest.approx(q, rel=1e-14)


def test_hardy_quotient_errors():
    centred = build_grid(3, [(-1, 1)] * 3, 9)  # origin is a node
    with pytest.raises(ValueError, match="origin"):
        hardy_quotient(np.zeros(centred.shape, dtype=complex), centred)
    g = offset_box_grid(9)
    with pytest.raises(ValueError, match="vanish"):
        hardy_quotient(np.ones(g.shape, dtype=complex), g)
    away = build_grid(3, [(1, 2)] * 3, 9)
    with pytest.raises(ValueError, match="contain the origin"):
        hardy_quotient(np.zeros(away.shape, dtype=complex), away)


def test_hardy_quotient_radial_oracle():
    """A smooth radial profile: discrete quotient approaches the continuum value.

    For u = cos^2(pi r / 2) on r < 1 (zero outside) the continuum quotient is
    int u^2 dr / int r^2 u'^2 dr, evaluated here by 1D quadrature.
    """
    from scipy.integrate import quad

    num, _ = quad(lambda r: math.cos(math.pi * r / 2) ** 4, 0, 1)
    den, _ = quad(lambda r: r**2 * (math.pi * math.cos(math.pi * r / 2) * math.sin(math.pi * r / 2)) ** 2,
                  0, 1)
    exact = num / den
    errs = []
    for n in (17, 33, 65):
        g = offset_box_grid(n, half_width=1.2)
        r = np.sqrt(np.sum(g.coords**2, axis=0))
        u = np.where(r < 1, np.cos(np.pi * r / 2) ** 2, 0.0) + 0j
        u.reshape(-1)[g.boundary_idx] = 0
        errs.append(abs(hardy_quotient(u, g) - exact))
    orders = [math.log2(a / b) for a, b in zip(errs[:-1], errs[1:])]
    assert all(o >= 0.5 for o in orders), orders
    assert errs[-1] <= 0.05 * exact

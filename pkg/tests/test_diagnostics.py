"""Observables, identity residuals, J and the a priori machinery."""

import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hartree_bvp.config import (BoundarySpec, GridSpec, InitialSpec, RunConfig, StepperSpec,
                                acceptance_template)
from hartree_bvp.diagnostics import (VIRIAL_TERMS, apriori_inequality_check, boundary_flux_J,
                                     calibrate_apriori, energy, energy_identity_residual,
                                     fit_gronwall, gronwall_check, mass, mass_identity_residual,
                                     time_derivative, virial_identity_residual)
from hartree_bvp.grid import build_grid, build_xi_field, gradient
from hartree_bvp.kernel import KernelSpec, hartree_potential, random_smooth_field
from hartree_bvp.lifting import make_boundary_data
from hartree_bvp.stepper import solve

SOFT = KernelSpec("softened", 0.1, "fast")


def test_zero_field_observables():
    g = build_grid(1, (0, 1), 32)
    z = np.zeros(g.shape, dtype=complex)
    assert mass(z, g) == 0 and energy(z, g, SOFT) == 0


def test_energy_homogeneity():
    g = build_grid(1, (0, 1), 64)
    u = random_smooth_field(g, np.random.default_rng(0))
    grad_part = 0.5 * np.sum(g.quad_w * np.sum(np.abs(gradient(u, g)) ** 2, axis=0))
    hartree_part = energy(u, g, SOFT) - grad_part
    assert energy(2 * u, g, SOFT) == pytest.approx(4 * grad_part + 16 * hartree_part, rel=1e-12)


def test_energy_of_constant_double_sum():
    g = build_grid(1, (0, 1), 40)
    x, w = g.coords[0], g.quad_w
    oracle = 0.0
    for i in range(g.size):
        for j in range(g.size):
            oracle += w[i] * w[j] / math.sqrt((x[i] - x[j]) ** 2 + 0.01)
    oracle *= 0.25
    assert energy(np.ones(g.shape, dtype=complex), g, SOFT) == pytest.approx(oracle, rel=1e-13)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), scale=st.floats(1e-3, 1e3))
def test_energy_and_mass_nonnegative(seed, scale):
    g = build_grid(2, [(0, 1), (0, 1)], 12)
    u = scale * random_smooth_field(g, np.random.default_rng(seed))
    assert mass(u, g) >= 0
    assert energy(u, g, KernelSpec("coulomb", 0.0)) >= 0


def test_time_derivative_exact_on_quadratics():
    t = np.linspace(0, 1, 11)
    d = time_derivative(3 * t**2 - t + 2, t[1] - t[0])
    assert np.allclose(d, 6 * t - 1, atol=1e-12)


def _states(g, n=3, dt=1e-3, u=None):
    u = np.zeros(g.shape, dtype=complex) if u is None else u
    return [u] * n, [i * dt for i in range(n)]


def test_zero_window_identities():
    g = build_grid(1, (0, 1), 32)
    bd = make_boundary_data(g, 0.0)
    xi = build_xi_field(g)
    states, times = _states(g)
    for rec in (mass_identity_residual(states, times, bd, g, SOFT, xi),
                energy_identity_residual(states, times, bd, g, SOFT, xi)):
        assert rec.lhs == rec.rhs == rec.res == 0
    vir = virial_identity_residual(states, times, bd, g, SOFT, xi)
    assert vir.res == 0
    assert set(vir.terms) == set(VIRIAL_TERMS)
    assert all(v == 0 for v in vir.terms.values())


def test_nonuniform_spacing_rejected():
    g = build_grid(1, (0, 1), 32)
    bd = make_boundary_data(g, 0.0)
    states, _ = _states(g)
    with pytest.raises(ValueError, match="nonuniform"):
        mass_identity_residual(states, [0.0, 1e-3, 3e-3], bd, g)
    other = build_xi_field(build_grid(1, (0, 1), 33))
    with pytest.raises(ValueError):
        virial_identity_residual(states, [0.0, 1e-3, 2e-3], bd, g, SOFT, other)


def test_strain_and_eta_terms_1d():
    g = build_grid(1, (0, 1), 64)
    bd = make_boundary_data(g, 0.0)
    xi = build_xi_field(g)
    u = random_smooth_field(g, np.random.default_rng(1))
    rec = virial_identity_residual([u] * 3, [0, 1e-3, 2e-3], bd, g, SOFT, xi)
    du = gradient(u, g)[0]
    assert rec.terms["strain"] == pytest.approx(2j * np.sum(2 * np.abs(du) ** 2 * g.quad_w), rel=1e-13)
    assert rec.terms["grad_eta"] == 0


def test_homogeneous_window_residuals():
    cfg = acceptance_template(**{"boundary.amplitude": 0.0, "stepper.T": 0.01})
    res = solve(cfg)
    from hartree_bvp.stepper import setup
    g, k, bd, xi = setup(cfg)
    dt = cfg.stepper.dt
    for m in range(1, len(res.states) - 1):
        win = res.states[m - 1:m + 2]
        rec = mass_identity_residual([s.u for s in win], [s.t for s in win], bd, g, k, xi)
        assert rec.rhs == 0
        assert abs(rec.lhs) <= 10 * cfg.stepper.picard_tol / dt
        assert energy_identity_residual([s.u for s in win], [s.t for s in win], bd, g, k, xi).rhs == 0


def test_rows_match_window_evaluators():
    cfg = acceptance_template(**{"stepper.T": 0.02})
    res = solve(cfg)
    from hartree_bvp.stepper import setup
    g, k, bd, xi = setup(cfg)
    m = 7
    win = res.states[m - 1:m + 2]
    us, ts = [s.u for s in win], [s.t for s in win]
    row = res.rows[m]
    assert mass_identity_residual(us, ts, bd, g, k, xi).res == pytest.approx(row.mass_res, rel=1e-9)
    assert energy_identity_residual(us, ts, bd, g, k, xi).res == pytest.approx(row.energy_res, rel=1e-9)
    vir = virial_identity_residual(us, ts, bd, g, k, xi)
    assert vir.res == pytest.approx(row.virial_res, rel=1e-9)
    assert vir.terms == row.virial_terms


def test_j_of_zero_run():
    cfg = acceptance_template(**{"boundary.amplitude": 0.0, "initial.kind": "zero", "stepper.T": 0.02})
    res = solve(cfg, keep_states=False)
    assert np.all(boundary_flux_J(res.snapshots, cfg.stepper.dt) == 0)
    rep = apriori_inequality_check(res.snapshots, cfg.stepper.dt, np.zeros(5))
    assert rep.passed and np.all(rep.lhs == 0) and np.all(rep.rhs >= 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1e6), min_size=2, max_size=50), st.floats(1e-6, 1.0))
def test_j_monotone(fluxes, dt):
    snaps = [SimpleNamespace(flux=f) for f in fluxes]
    J = boundary_flux_J(snaps, dt)
    assert J[0] == 0
    assert np.all(np.diff(J) >= 0)


def test_apriori_calibration_covers_its_run():
    cfg = acceptance_template()
    res = solve(cfg, keep_states=False)
    dt = cfg.stepper.dt
    c = calibrate_apriori(res.snapshots, dt)
    assert np.all(c >= 0)
    rep = apriori_inequality_check(res.snapshots, dt, c)
    assert rep.passed and rep.margin >= 0
    J = boundary_flux_J(res.snapshots, dt)
    gc = fit_gronwall(J, dt)
    assert gronwall_check(J, dt, gc).passed


def test_virial_residual_2d_with_tangential_correction():
    """On the square the xi field is tangential on faces; the corrected residual converges."""
    base = RunConfig(
        grid=GridSpec(2, ((0.0, 1.0), (0.0, 1.0)), (17,)),
        kernel=SOFT,
        boundary=BoundarySpec(amplitude=0.3, window=(0.0, 0.2), profile="gaussian",
                              center=(0.0, 0.5), sigma=0.15),
        initial=InitialSpec("lift_plus_bump", None, 0.08, 1.0),
        stepper=StepperSpec(dt=4e-3, T=0.1),
    )
    errs = []
    for level in range(3):
        cfg = base.replace(**{"grid.n": (16 * 2**level + 1,), "stepper.dt": 4e-3 / 2**level})
        res = solve(cfg, keep_states=False)
        errs.append(max(abs(r.virial_res - s.xi_tangential)
                        for r, s in zip(res.rows[1:-1], res.snapshots[1:-1])))
    orders = [math.log2(a / b) for a, b in zip(errs[:-1], errs[1:])]
    assert all(o >= 0.9 for o in orders), orders


def test_hartree_potential_in_energy_matches_helper():
    g = build_grid(1, (0, 1), 48)
    u = random_smooth_field(g, np.random.default_rng(6))
    f = hartree_potential(u, g, SOFT)
    grad2 = np.sum(np.abs(gradient(u, g)) ** 2, axis=0)
    expected = 0.5 * np.sum(g.quad_w * grad2) + 0.25 * np.sum(g.quad_w * f * np.abs(u) ** 2)
    assert energy(u, g, SOFT) == pytest.approx(expected, rel=1e-14)

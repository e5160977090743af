"""Crank-Nicolson/Picard stepping, full runs and the contraction probe."""

import numpy as np
import pytest

from hartree_bvp.cli import RetryingAdvance, homogenized_datum
from hartree_bvp.config import acceptance_template
from hartree_bvp.diagnostics import mass
from hartree_bvp.errors import BallEscape, CompatibilityError, PicardDivergence
from hartree_bvp.grid import build_grid, norm
from hartree_bvp.kernel import KernelSpec, random_smooth_field
from hartree_bvp.lifting import make_boundary_data
from hartree_bvp.stepper import (CrankNicolson, SolverState, StepperConfig, contraction_probe,
                                 geometric_tail_ok, solve, step)

SOFT = KernelSpec("softened", 0.1, "fast")
LINEAR = KernelSpec("softened", 0.1, "fast", strength=0.0)


def gaussian(g, center=0.5, width=0.07):
    return np.exp(-((g.coords[0] - center) ** 2) / (2 * width**2)) + 0j


def test_config_validation():
    for bad in (dict(dt=0.0), dict(picard_tol=0.0), dict(max_iters=1), dict(theta=1.0)):
        with pytest.raises(ValueError):
            StepperConfig(**bad)


def test_zero_is_a_fixed_point():
    g = build_grid(1, (0, 1), 64)
    bd = make_boundary_data(g, 0.0)
    out = step(SolverState(0.0, np.zeros(g.shape, dtype=complex)), StepperConfig(), bd, g, SOFT)
    assert np.all(out.u == 0) and out.picard_iters == 1


@pytest.mark.parametrize("dim", [1, 2])
def test_linear_step_conserves_l2(dim):
    g = build_grid(dim, [(0, 1), (0, 1)][:dim], [128, 32][:dim] if dim == 1 else 32)
    bd = make_boundary_data(g, 0.0)
    u = random_smooth_field(g, np.random.default_rng(1), vanishing=True)
    state = SolverState(0.0, u)
    cfg = StepperConfig(1e-3)
    for _ in range(5):
        state = step(state, cfg, bd, g, LINEAR)
    assert norm(state.u, g, "L2") == pytest.approx(norm(u, g, "L2"), rel=1e-12)


def test_linear_time_reversal():
    g = build_grid(1, (0, 1), 128)
    u = random_smooth_field(g, np.random.default_rng(4), vanishing=True)
    zero_b = np.zeros(2, dtype=complex)
    fwd, bwd = CrankNicolson(g, 1e-3), CrankNicolson(g, -1e-3)
    v = u
    for _ in range(20):
        v = fwd.linear_step(v, zero_b)
    for _ in range(20):
        v = bwd.linear_step(v, zero_b)
    assert np.max(np.abs(v - u)) <= 1e-10


def test_gaussian_step_converges_fast():
    g = build_grid(1, (0, 1), 128)
    bd = make_boundary_data(g, 0.0)
    out = step(SolverState(0.0, gaussian(g)), StepperConfig(1e-3), bd, g, SOFT)
    assert out.picard_iters <= 8
    assert out.contraction_est < 0.5
    assert geometric_tail_ok(out.picard_diffs)


def test_boundary_rows_hold_data():
    cfg = acceptance_template(**{"stepper.T": 0.05})
    res = solve(cfg)
    from hartree_bvp.stepper import setup
    g, _, bd, _ = setup(cfg)
    for s in res.states:
        assert np.max(np.abs(g.boundary(s.u) - bd.q(s.t))) <= 1e-12
        assert s.picard_iters <= cfg.stepper.max_iters


def test_zero_run_is_zero():
    cfg = acceptance_template(**{"boundary.amplitude": 0.0, "initial.kind": "zero", "stepper.T": 0.1})
    res = solve(cfg)
    assert len(res.states) == 101
    assert all(np.all(s.u == 0) for s in res.states)
    for r in res.rows:
        vals = r.csv_values()
        # everything but step, t and the Picard count is zero
        assert all(v == 0 for i, v in enumerate(vals) if i not in (0, 1, 15))
        assert r.mass == r.energy == r.J_cum == 0
        assert r.mass_res == r.energy_res == 0 and r.virial_res == 0


def test_homogeneous_mass_conservation():
    cfg = acceptance_template(**{"boundary.amplitude": 0.0, "stepper.T": 0.1})
    res = solve(cfg, keep_states=False)
    m0 = res.rows[0].mass
    drift = max(abs(r.mass - m0) for r in res.rows) / m0
    assert drift <= 10 * cfg.stepper.picard_tol
    assert drift <= 1e-8


def test_forced_run_to_t1():
    cfg = acceptance_template(**{"stepper.T": 1.0})
    res = solve(cfg, keep_states=False)
    assert len(res.rows) == 1001
    assert np.isfinite(max(r.h1_norm for r in res.rows))
    assert np.isfinite(res.rows[-1].J_cum)
    assert all(geometric_tail_ok(d) for d in res.picard_diffs)


def test_solve_is_deterministic():
    cfg = acceptance_template(**{"stepper.T": 0.05})
    a, b = solve(cfg), solve(cfg)
    assert all(np.array_equal(x.u, y.u) for x, y in zip(a.states, b.states))
    assert [r.csv_values() for r in a.rows] == [r.csv_values() for r in b.rows]


def test_incompatible_initial_datum():
    cfg = acceptance_template(**{"initial.width": 0.2})
    with pytest.raises(CompatibilityError):
        solve(cfg)


def test_picard_divergence_reports_step():
    cfg = acceptance_template(**{"stepper.dt": 0.04, "stepper.T": 0.2, "stepper.max_iters": 4})
    with pytest.raises(PicardDivergence) as info:
        solve(cfg)
    exc = info.value
    assert exc.step_index >= 1
    assert exc.t == pytest.approx((exc.step_index - 1) * 0.04)
    assert len(exc.partial.snapshots) == exc.step_index
    assert np.isfinite(exc.last_ratio)


def test_retry_recovers_with_halved_steps():
    cfg = acceptance_template(**{"stepper.dt": 0.02, "stepper.T": 0.2, "stepper.max_iters": 4})
    with pytest.raises(PicardDivergence):
        solve(cfg, keep_states=False)
    adv = RetryingAdvance(3)
    res = solve(cfg, advance=adv, keep_states=False)
    assert adv.retries > 0
    assert len(res.rows) == 11
    # budget exhausted: same failure surfaces
    cfg = cfg.replace(**{"stepper.dt": 0.04})
    with pytest.raises(PicardDivergence):
        solve(cfg, advance=RetryingAdvance(3), keep_states=False)


def test_contraction_probe_zero():
    g = build_grid(1, (0, 1), 64)
    bd = make_boundary_data(g, 0.0)
    rep = contraction_probe(np.zeros(g.shape, dtype=complex), bd, g, SOFT, 0.02, 10.0, 5)
    assert rep.factor_est == 0.0
    assert all(d == 0 for d in rep.distances)


def test_contraction_probe_geometric_and_linear_in_t0():
    g, k, bd, psi = homogenized_datum(acceptance_template())
    full = contraction_probe(psi, bd, g, k, 0.05, 100.0, 8)
    half = contraction_probe(psi, bd, g, k, 0.025, 100.0, 8)
    assert full.factor_est < 0.5
    d = full.distances
    assert all(b <= 0.6 * a for a, b in zip(d[:-1], d[1:]))
    assert 0.75 * 0.5 <= half.factor_est / full.factor_est <= 1.25 * 0.5


def test_contraction_probe_ball_escape():
    g, k, bd, psi = homogenized_datum(acceptance_template())
    with pytest.raises(BallEscape):
        contraction_probe(psi, bd, g, k, 0.05, 0.5 * norm(psi, g, "H1"), 5)
    with pytest.raises(ValueError):
        contraction_probe(psi + 1.0, bd, g, k, 0.05, 100.0, 5)


def test_geometric_tail_rule():
    assert geometric_tail_ok([1.0, 0.5, 0.1, 0.01])
    assert geometric_tail_ok([1.0, 1.2, 0.5, 0.4])
    assert not geometric_tail_ok([1.0, 0.5, 0.6])


def test_mass_of_solution_matches_helper():
    cfg = acceptance_template(**{"stepper.T": 0.01})
    res = solve(cfg)
    assert res.rows[-1].mass == mass(res.states[-1].u, res.grid)

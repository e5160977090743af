"""Crank-Nicolson time stepping with an inner Picard loop.

One step solves, at interior nodes,

    i (u1 - u0) / dt = Lap (u1 + u0) / 2 - V (u1 + u0) / 2,
    V = (f(u1) + f(u0)) / 2,

with ``u1 = Q(t + dt)`` imposed on the boundary rows. The Picard sweep
freezes ``V`` at the previous iterate and solves the resulting linear CN
system; because ``V`` is real every sweep conserves the discrete mass
exactly when the boundary data vanish.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import BallEscape, CompatibilityError, PicardDivergence
from .grid import Grid, build_xi_field, laplacian_blocks, norm
from .kernel import KernelSpec, hartree_potential
from .lifting import (BoundaryData, Lift, harmonic_lift, homogenized_source, lifter,
                      validate_compatibility)


@dataclass(frozen=True)
class StepperConfig:
    dt: float = 1e-3
    picard_tol: float = 1e-10
    max_iters: int = 50
    theta: float = 0.5

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")
        if self.max_iters < 2:
            raise ValueError("max_iters must be at least 2")
        if self.theta != 0.5:
            raise ValueError("only theta = 1/2 (Crank-Nicolson) is supported")


@dataclass(frozen=True, eq=False)
class SolverState:
    t: float
    u: np.ndarray
    picard_iters: int = 0
    contraction_est: float = 0.0
    picard_diffs: tuple = ()


@lru_cache(maxsize=16)
def _blocks(g: Grid):
    l_ii, l_ib = laplacian_blocks(g)
    return l_ii, l_ib, l_ii.diagonal().copy()


class CrankNicolson:
    """Linear CN solves ``(i/dt - L/2 + diag(V)/2) x = b`` on interior nodes.

    ``dt`` may be negative, which runs the linear flow backwards.
    """

    def __init__(self, g: Grid, dt: float):
        self.grid = g
        self.dt = dt
        self.l_ii, self.l_ib, self._diag = _blocks(g)
        if g.dim == 1:
            off = 0.5 / g.h[0] ** 2
            m = g.interior_idx.size
            self._band = np.zeros((3, m), dtype=complex)
            self._band[0, 1:] = -off
            self._band[2, :-1] = -off

    def apply_laplacian(self, u: np.ndarray) -> np.ndarray:
        """Interior values of ``Lap u`` using the boundary rows of ``u``."""
        flat = u.reshape(-1)
        g = self.grid
        return self.l_ii @ flat[g.interior_idx] + self.l_ib @ flat[g.boundary_idx]

    def solve(self, rhs: np.ndarray, potential: np.ndarray | None = None) -> np.ndarray:
        shift = 1j / self.dt
        if self.grid.dim == 1:
            band = self._band.copy()
            band[1] = shift - 0.5 * self._diag
            if potential is not None:
                band[1] += 0.5 * potential
            return sla.solve_banded((1, 1), band, rhs, check_finite=False)
        diag = shift * np.ones(self.l_ii.shape[0], dtype=complex)
        if potential is not None:
            diag = diag + 0.5 * potential
        mat = (sp.diags(diag) - 0.5 * self.l_ii).tocsc()
        return spla.spsolve(mat, rhs)

    def linear_step(self, u: np.ndarray, boundary_new: np.ndarray, potential=None,
                    source=None) -> np.ndarray:
        """One CN step of ``i u_t = Lap u - V u + source`` (``source`` already time-averaged)."""
        g = self.grid
        flat = u.reshape(-1)
        ui = flat[g.interior_idx]
        rhs = (1j / self.dt) * ui + 0.5 * self.apply_laplacian(u) + 0.5 * (self.l_ib @ boundary_new)
        if potential is not None:
            rhs = rhs - 0.5 * potential * ui
        if source is not None:
            rhs = rhs + source
        out = np.empty(g.size, dtype=complex)
        out[g.boundary_idx] = boundary_new
        out[g.interior_idx] = self.solve(rhs, potential)
        return out.reshape(g.shape)


def _picard(g, cfg, advance, u_guess, f_old):
    """Generic frozen-potential Picard loop.

    ``advance(potential)`` returns the next iterate for a frozen interior
    potential ``(f(u_k) + f_old) / 2``.
    """
    u_k = u_guess
    diffs = []
    ratio = 0.0
    for it in range(1, cfg.max_iters + 1):
        pot = 0.5 * g.interior(hartree_potential(u_k, g, advance.kernel) + f_old)
        u_next = advance(pot)
        d = norm(u_next - u_k, g, "H1")
        scale = norm(u_next, g, "H1")
        diffs.append(d)
        if len(diffs) > 1 and diffs[-2] > 0:
            ratio = diffs[-1] / diffs[-2]
        u_k = u_next
        if d <= cfg.picard_tol * scale or d == 0.0:
            return u_k, it, ratio, tuple(diffs)
    raise PicardDivergence(
        f"Picard loop did not converge in {cfg.max_iters} iterations (last ratio {ratio:.3g})",
        last_ratio=ratio)


class _Advance:
    def __init__(self, fn, kernel):
        self.fn = fn
        self.kernel = kernel

    def __call__(self, pot):
        return self.fn(pot)


def step(state: SolverState, cfg: StepperConfig, bd: BoundaryData, g: Grid,
         k: KernelSpec, propagator: CrankNicolson | None = None) -> SolverState:
    """Advance ``state`` by ``cfg.dt``; raises :class:`PicardDivergence`."""
    cn = propagator if propagator is not None and propagator.dt == cfg.dt else CrankNicolson(g, cfg.dt)
    t_new = state.t + cfg.dt
    q_new = bd.q(t_new)
    u0 = state.u
    f0 = hartree_potential(u0, g, k)
    guess = np.array(u0, dtype=complex)
    guess.reshape(-1)[g.boundary_idx] = q_new

    adv = _Advance(lambda pot: cn.linear_step(u0, q_new, pot), k)
    u1, iters, ratio, diffs = _picard(g, cfg, adv, guess, f0)
    return SolverState(t_new, u1, iters, ratio, diffs)


def homogenized_step(v: np.ndarray, t: float, cfg: StepperConfig, bd: BoundaryData, g: Grid,
                     k: KernelSpec, propagator: CrankNicolson | None = None):
    """Advance the shifted unknown ``v = u - Qt`` (harmonic lift ``Qt``) by one step.

    Uses the same discrete nonlinearity as :func:`step`; the lift enters
    through ``Lap Qt`` and its exact increment over the step.
    Returns ``(v_new, picard_iters)``.
    """
    cn = propagator if propagator is not None and propagator.dt == cfg.dt else CrankNicolson(g, cfg.dt)
    lift = lifter(g)
    q0, q1 = lift(bd.q(t)), lift(bd.q(t + cfg.dt))
    zero_b = np.zeros(g.boundary_idx.size, dtype=complex)
    lap_lift = 0.5 * (cn.apply_laplacian(q0) + cn.apply_laplacian(q1))
    incr = g.interior(q1 - q0) / cfg.dt
    f0 = hartree_potential(v + q0, g, k)
    lift_mid = 0.5 * g.interior(q0 + q1)

    def advance(pot):
        src = lap_lift - 1j * incr - pot * lift_mid
        return cn.linear_step(v, zero_b, pot, src) + q1

    # iterate on u = v + Qt so the frozen potential sees the full field
    u1, iters, _, _ = _picard(g, cfg, _Advance(advance, k), v + q1, f0)
    return u1 - q1, iters


# --- contraction probe ------------------------------------------------------

@dataclass(frozen=True)
class ContractionReport:
    distances: tuple
    factors: tuple
    factor_est: float
    sup_norms: tuple
    T0: float
    substeps: int


def duhamel_map(v_traj: np.ndarray, psi: np.ndarray, lifts: list[Lift], g: Grid, k: KernelSpec,
                cn: CrankNicolson) -> np.ndarray:
    """Discrete ``H(v)``: CN propagation of ``psi`` plus trapezoid Duhamel source with ``v`` frozen."""
    zero_b = np.zeros(g.boundary_idx.size, dtype=complex)
    out = np.empty_like(v_traj)
    out[0] = psi
    src_prev = g.interior(homogenized_source(v_traj[0], lifts[0], g, k))
    for m in range(len(lifts) - 1):
        src_next = g.interior(homogenized_source(v_traj[m + 1], lifts[m + 1], g, k))
        out[m + 1] = cn.linear_step(out[m], zero_b, None, 0.5 * (src_prev + src_next))
        src_prev = src_next
    return out


def contraction_probe(psi: np.ndarray, bd: BoundaryData, g: Grid, k: KernelSpec, T0: float,
                      M: float, n_iter: int, dt: float = 1e-3, t_start: float = 0.0,
                      floor: float = 1e-12) -> ContractionReport:
    """Iterate ``v -> H(v)`` on ``[t_start, t_start + T0]`` from ``v = 0``.

    Distances use the sup-in-time H1 metric. ``factor_est`` is the largest
    ratio of successive distances, recorded while distances stay above
    ``floor`` times the iterate size.
    """
    g.check(psi)
    if np.max(np.abs(g.boundary(psi)), initial=0.0) > 1e-12:
        raise ValueError("psi must vanish on the boundary")
    if norm(psi, g, "H1") > M:
        raise BallEscape("initial datum lies outside the ball", iteration=0, radius=M)
    substeps = max(1, int(round(T0 / dt)))
    h = T0 / substeps
    cn = CrankNicolson(g, h)
    times = t_start + h * np.arange(substeps + 1)
    lifts = [harmonic_lift(bd, t, g) for t in times]

    def sup_h1(traj):
        return max(norm(x, g, "H1") for x in traj)

    v = np.zeros((substeps + 1, *g.shape), dtype=complex)
    distances, sups = [], []
    for it in range(1, n_iter + 1):
        v_next = duhamel_map(v, psi, lifts, g, k, cn)
        s = sup_h1(v_next)
        if s > M:
            raise BallEscape(f"iterate {it} has sup H1 norm {s:.4g} > M = {M}", iteration=it, radius=M)
        d = sup_h1(v_next - v)
        distances.append(d)
        sups.append(s)
        v = v_next
        if d <= floor * max(s, 1e-300):
            break
    factors = []
    for a, b, s in zip(distances[:-1], distances[1:], sups[1:]):
        if a == 0 or b <= floor * max(s, 1e-300):
            break
        factors.append(b / a)
    return ContractionReport(tuple(distances), tuple(factors), max(factors, default=0.0),
                             tuple(sups), T0, substeps)


# --- full runs --------------------------------------------------------------

def initial_field(cfg, bd: BoundaryData, g: Grid) -> np.ndarray:
    """Initial datum selected by ``cfg.initial``."""
    ini = cfg.initial
    if ini.kind == "zero":
        return np.zeros(g.shape, dtype=complex)
    center = ini.center if ini.center is not None else [0.5 * (a + b) for a, b in g.extents]
    r2 = sum((g.coords[ax] - c) ** 2 for ax, c in enumerate(center))
    bump = ini.amplitude * np.exp(-r2 / (2 * ini.width**2)) + 0j
    if ini.kind == "gaussian":
        return bump
    lift = lifter(g)
    return lift(bd.q(0.0)) + bump - lift(g.boundary(bump))


@dataclass
class SolveResult:
    config: object
    grid: Grid
    snapshots: list
    rows: list
    states: list = field(default_factory=list)
    picard_iters: list = field(default_factory=list)
    contraction: list = field(default_factory=list)
    picard_diffs: list = field(default_factory=list)
    retries: int = 0
    calibration: tuple | None = None

    @property
    def dt(self) -> float:
        return self.config.stepper.dt


def setup(cfg):
    """Grid, kernel, boundary data and xi field for a run config."""
    g = cfg.grid.build()
    cfg.kernel.check(g)
    bd = cfg.boundary.build(g)
    return g, cfg.kernel, bd, build_xi_field(g)


def solve(cfg, advance=None, keep_states: bool = True, apriori_constants=None) -> SolveResult:
    """Run ``cfg`` from ``t = 0`` to ``T``; diagnostics are gathered every step.

    ``advance(state, stepper_cfg, bd, g, k, propagator)`` defaults to :func:`step`;
    the command-line driver substitutes a retrying variant. A
    :class:`PicardDivergence` propagates with ``step_index`` set and the
    partial result attached as ``exc.partial``.
    """
    from .diagnostics import build_rows, snapshot

    g, k, bd, xi = setup(cfg)
    s = cfg.stepper
    scfg = StepperConfig(s.dt, s.picard_tol, s.max_iters)
    phi = initial_field(cfg, bd, g)
    rep = validate_compatibility(phi, bd, g, cfg.compat_tol)
    if not rep.passed:
        raise CompatibilityError(
            f"initial datum does not match Q(., 0) on the boundary (mismatch {rep.max_mismatch:.3g})")
    phi.reshape(-1)[g.boundary_idx] = bd.q(0.0)
    state = SolverState(0.0, phi)
    cn = CrankNicolson(g, s.dt)
    advance = advance or step

    result = SolveResult(cfg, g, [snapshot(phi, 0.0, bd, g, k, xi)], [],
                         [state] if keep_states else [], [0], [0.0], [()])
    for n in range(1, cfg.n_steps + 1):
        try:
            state = advance(state, scfg, bd, g, k, cn)
        except PicardDivergence as exc:
            exc.step_index = n
            exc.t = state.t
            result.rows = build_rows(result.snapshots, s.dt, result.picard_iters,
                                     result.contraction, cfg.cadence)
            exc.partial = result
            raise
        # pin the clock to the grid of step times
        state = replace(state, t=n * s.dt)
        result.snapshots.append(snapshot(state.u, state.t, bd, g, k, xi))
        result.picard_iters.append(state.picard_iters)
        result.contraction.append(state.contraction_est)
        result.picard_diffs.append(state.picard_diffs)
        if keep_states:
            result.states.append(state)
    result.rows = build_rows(result.snapshots, s.dt, result.picard_iters, result.contraction,
                             cfg.cadence, apriori_constants)
    result.calibration = None if apriori_constants is None else tuple(apriori_constants)
    return result


def geometric_tail_ok(diffs, threshold: float = 0.9) -> bool:
    """Once a successive-difference ratio drops below ``threshold`` no later ratio exceeds 1."""
    below = False
    for a, b in zip(diffs[:-1], diffs[1:]):
        if a == 0:
            break
        r = b / a
        if below and r > 1:
            return False
        below = below or r < threshold
    return True


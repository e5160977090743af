"""Balance laws of the forced Hartree flow, evaluated on discrete trajectories.

For a solution of ``i u_t = Lap u - f(u) u`` with ``u = Q`` on the boundary:

* mass:   d/dt ||u||^2 = 2 Im  int_bdry conj(Q) dn(u)
* energy: d/dt E(u)    =   Re  int_bdry dn(u) conj(Q_t),
          E(u) = 1/2 ||grad u||^2 + 1/4 int f(u) |u|^2
* virial: d/dt int u (xi . grad conj(u)) = sum of the eight terms in
          :data:`VIRIAL_TERMS`, where ``xi`` equals the outward normal on
          the boundary.

Every single-time quantity is gathered in a :class:`Snapshot`; left-hand
sides are second-order finite differences of snapshot series, right-hand
sides come from one snapshot each.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .grid import Grid, XiField, boundary_integral, gradient
from .kernel import KernelSpec, gradient_kernel_convolution, hartree_potential
from .lifting import BoundaryData

VIRIAL_TERMS = (
    "strain",            # 2i Re sum_jk int d_k xi_j d_j conj(u) d_k u
    "grad_eta",          # i int grad(eta) . grad(conj u) u
    "kernel_gradient",   # -i int xi . ((grad k) * |u|^2) |u|^2
    "boundary_hartree",  # i int_bdry f(u) |Q|^2
    "grad_trace",        # i int_bdry |P|^2
    "normal_trace",      # -2i int_bdry |P.n|^2
    "q_qt",              # int_bdry Q conj(Q_t)
    "eta_flux",          # -i int_bdry conj(P.n) eta Q
)

CSV_COLUMNS = (
    "step", "t", "mass", "energy",
    "mass_lhs", "mass_rhs", "mass_res",
    "energy_lhs", "energy_rhs", "energy_res",
    "virial_lhs", "virial_rhs", "virial_res",
    "J_cum", "h1_norm", "picard_iters", "contraction_est",
)


def mass(u: np.ndarray, g: Grid) -> float:
    g.check(u)
    return float(np.sum(g.quad_w * np.abs(u) ** 2))


def energy(u: np.ndarray, g: Grid, k: KernelSpec) -> float:
    grad2 = np.sum(np.abs(gradient(u, g)) ** 2, axis=0)
    f = hartree_potential(u, g, k)
    return float(0.5 * np.sum(g.quad_w * grad2) + 0.25 * np.sum(g.quad_w * f * np.abs(u) ** 2))


@dataclass
class Snapshot:
    """Single-time quantities of one state."""

    t: float
    mass: float
    energy: float
    virial: complex
    mass_rhs: float
    energy_rhs: float
    virial_terms: dict
    flux: float           # int_bdry |P.n|^2
    grad2: float          # ||grad u||^2
    h1: float
    grad_u_u: float       # int |grad u| |u|
    tangential: float     # int_bdry |tangential derivative of Q|^2
    q_qt_sq: float        # int_bdry |Q conj(Q_t)|^2
    pn_q: float           # int_bdry |conj(P.n) Q|
    xi_tangential: complex = 0j

    @property
    def virial_rhs(self) -> complex:
        return complex(sum(self.virial_terms.values()))


def snapshot(u: np.ndarray, t: float, bd: BoundaryData, g: Grid, k: KernelSpec,
             xi: XiField) -> Snapshot:
    g.check(u)
    w = g.quad_w
    grad = gradient(u, g)
    grad_b = grad.reshape(g.dim, -1)[:, g.boundary_idx]
    nrm = g.outward_normal
    pn = np.einsum("bd,db->b", nrm, grad_b)
    q = bd.q(t)
    qt = bd.q_t(t)
    rho = np.abs(u) ** 2
    f = hartree_potential(u, g, k)
    gk = gradient_kernel_convolution(u, g, k)
    grad2_field = np.sum(np.abs(grad) ** 2, axis=0)
    grad2 = float(np.sum(w * grad2_field))
    m = float(np.sum(w * rho))
    e = 0.5 * grad2 + 0.25 * float(np.sum(w * f * rho))

    cg = np.conj(grad)
    strain = 2j * np.sum(w * np.real(np.einsum("jk...,j...,k...->...", xi.jacobian, cg, grad)))
    terms = {
        "strain": complex(strain),
        "grad_eta": complex(1j * np.sum(w * np.sum(xi.grad_eta * cg, axis=0) * u)),
        "kernel_gradient": complex(-1j * np.sum(w * np.sum(xi.xi * gk, axis=0) * rho)),
        "boundary_hartree": complex(1j * boundary_integral(g.boundary(f) * np.abs(q) ** 2, g)),
        "grad_trace": complex(1j * boundary_integral(np.sum(np.abs(grad_b) ** 2, axis=0), g)),
        "normal_trace": complex(-2j * boundary_integral(np.abs(pn) ** 2, g)),
        "q_qt": complex(boundary_integral(q * np.conj(qt), g)),
        "eta_flux": complex(-1j * boundary_integral(np.conj(pn) * g.boundary(xi.eta) * q, g)),
    }
    xi_tan = 0j
    if g.dim == 2:
        # the rectangle's xi has a tangential part on the faces; this is the
        # boundary term the normal-agreement assumption drops
        tangent = np.stack([-nrm[:, 1], nrm[:, 0]], axis=1)
        xi_b = xi.xi.reshape(g.dim, -1)[:, g.boundary_idx].T
        d_tau = np.einsum("bd,db->b", tangent, grad_b)
        xi_tan = complex(-2j * np.real(boundary_integral(
            pn * np.sum(xi_b * tangent, axis=1) * np.conj(d_tau), g)))
    return Snapshot(
        t=float(t),
        mass=m,
        energy=e,
        virial=complex(np.sum(w * u * np.sum(xi.xi * cg, axis=0))),
        mass_rhs=float(2 * np.imag(boundary_integral(np.conj(q) * pn, g))),
        energy_rhs=float(np.real(boundary_integral(pn * np.conj(qt), g))),
        virial_terms=terms,
        flux=float(boundary_integral(np.abs(pn) ** 2, g)),
        grad2=grad2,
        h1=math.sqrt(m + grad2),
        grad_u_u=float(np.sum(w * np.sqrt(grad2_field) * np.abs(u))),
        tangential=float(boundary_integral(np.abs(bd.q_tangential(t)) ** 2, g)) if g.dim > 1 else 0.0,
        q_qt_sq=float(boundary_integral(np.abs(q * np.conj(qt)) ** 2, g)),
        pn_q=float(boundary_integral(np.abs(np.conj(pn) * q), g)),
        xi_tangential=xi_tan,
    )


def time_derivative(values, dt: float) -> np.ndarray:
    """Second-order differences: centred inside, one-sided three-point at the ends."""
    x = np.asarray(values)
    if len(x) < 3:
        raise ValueError("need at least three states for a time derivative")
    d = np.empty_like(x)
    d[1:-1] = (x[2:] - x[:-2]) / (2 * dt)
    d[0] = (-3 * x[0] + 4 * x[1] - x[2]) / (2 * dt)
    d[-1] = (3 * x[-1] - 4 * x[-2] + x[-3]) / (2 * dt)
    return d


@dataclass(frozen=True)
class IdentityResidual:
    lhs: complex
    rhs: complex
    res: complex
    terms: dict = field(default_factory=dict)


def _window(states, times, bd, g, k, xi):
    times = np.asarray(times, dtype=float)
    if len(states) != 3 or len(times) != 3:
        raise ValueError("need exactly three states")
    d1, d2 = times[1] - times[0], times[2] - times[1]
    if not d1 > 0 or abs(d1 - d2) > 1e-9 * d1:
        raise ValueError(f"nonuniform spacing {d1} vs {d2}")
    if xi is not None and xi.grid_id != g.grid_id:
        raise ValueError("xi field was built for a different grid")
    snaps = [snapshot(u, t, bd, g, k, xi) for u, t in zip(states, times)]
    return snaps, d1


def _default_xi(g, xi):
    from .grid import build_xi_field

    return xi if xi is not None else build_xi_field(g)


def mass_identity_residual(states, times, bd, g, k=None, xi=None) -> IdentityResidual:
    snaps, dt = _window(states, times, bd, g, k or KernelSpec(), _default_xi(g, xi))
    lhs = (snaps[2].mass - snaps[0].mass) / (2 * dt)
    rhs = snaps[1].mass_rhs
    return IdentityResidual(lhs, rhs, lhs - rhs)


def energy_identity_residual(states, times, bd, g, k, xi=None) -> IdentityResidual:
    snaps, dt = _window(states, times, bd, g, k, _default_xi(g, xi))
    lhs = (snaps[2].energy - snaps[0].energy) / (2 * dt)
    rhs = snaps[1].energy_rhs
    return IdentityResidual(lhs, rhs, lhs - rhs)


def virial_identity_residual(states, times, bd, g, k, xi) -> IdentityResidual:
    snaps, dt = _window(states, times, bd, g, k, xi)
    lhs = (snaps[2].virial - snaps[0].virial) / (2 * dt)
    rhs = snaps[1].virial_rhs
    return IdentityResidual(lhs, rhs, lhs - rhs, dict(snaps[1].virial_terms))


def boundary_flux_J(snaps, dt: float) -> np.ndarray:
    """``J(t_m) = sqrt(sum_{k=1..m} dt * int_bdry |P.n|^2 (t_k))``."""
    flux = np.array([s.flux for s in snaps])
    acc = np.concatenate([[0.0], np.cumsum(dt * flux[1:])])
    return np.sqrt(acc)


def _history(snaps, dt, values) -> np.ndarray:
    vals = np.asarray(values, dtype=float)
    return np.concatenate([[0.0], np.cumsum(dt * vals[1:])])


# Solution-dependent histories multiplied by fitted constants in the a priori
# bound, in the order of the constants vector.
APRIORI_TERMS = ("grad2", "h1_sq", "grad_u_u", "h1_quartic", "pn_q")


@dataclass(frozen=True)
class AprioriParts:
    t: np.ndarray
    lhs: np.ndarray          # J(t)^2
    base: np.ndarray         # terms with unit coefficients
    scaled: np.ndarray       # (5, nt) histories multiplied by the constants


def apriori_parts(snaps, dt: float) -> AprioriParts:
    J = boundary_flux_J(snaps, dt)
    v = np.array([abs(s.virial) for s in snaps])
    base = (v + v[0]
            + _history(snaps, dt, [s.tangential for s in snaps])
            + _history(snaps, dt, [s.q_qt_sq for s in snaps]))
    scaled = np.stack([
        _history(snaps, dt, [s.grad2 for s in snaps]),
        _history(snaps, dt, [s.h1**2 for s in snaps]),
        _history(snaps, dt, [s.grad_u_u for s in snaps]),
        _history(snaps, dt, [s.h1**4 for s in snaps]),
        _history(snaps, dt, [s.pn_q for s in snaps]),
    ])
    return AprioriParts(np.array([s.t for s in snaps]), J**2, base, scaled)


@dataclass(frozen=True)
class AprioriReport:
    t: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    margin: float
    passed: bool


def apriori_inequality_check(snaps, dt: float, constants) -> AprioriReport:
    """Integrated boundary-flux bound with frozen constants for the unnamed ``C``s."""
    parts = apriori_parts(snaps, dt)
    rhs = parts.base + np.asarray(constants, dtype=float) @ parts.scaled
    margin = float(np.min(rhs - parts.lhs))
    return AprioriReport(parts.t, parts.lhs, rhs, margin, bool(np.all(parts.lhs <= rhs)))


def _fit_nonnegative_cover(target, base, columns, headroom):
    """Cheapest ``c >= 0`` with ``base + c @ columns >= headroom * target`` everywhere."""
    columns = np.atleast_2d(columns)
    scale = np.max(np.abs(columns), axis=1)
    scale[scale == 0] = 1.0
    need = headroom * np.asarray(target) - np.asarray(base)
    res = linprog(scale, A_ub=-columns.T, b_ub=-need, bounds=[(0, None)] * len(scale),
                  method="highs")
    if not res.success:
        raise RuntimeError(f"calibration fit failed: {res.message}")
    return res.x


CALIBRATION_HEADROOM = 1.25


def calibrate_apriori(snaps, dt: float, headroom: float = CALIBRATION_HEADROOM) -> np.ndarray:
    """Fit the five constants of the a priori bound on a calibration run."""
    parts = apriori_parts(snaps, dt)
    return _fit_nonnegative_cover(parts.lhs, parts.base, parts.scaled, headroom)


@dataclass(frozen=True)
class GronwallReport:
    constants: tuple
    lhs: np.ndarray
    rhs: np.ndarray
    passed: bool


def _gronwall_columns(J, dt):
    J2 = J**2
    integral = np.concatenate([[0.0], np.cumsum(dt * J2[1:])])
    return np.stack([np.ones_like(J), J, integral])


def fit_gronwall(J: np.ndarray, dt: float, headroom: float = CALIBRATION_HEADROOM) -> np.ndarray:
    """Constants ``(c1, c2, c3)`` with ``J^2 <= c1 + c2 J + c3 int_0^t J^2``."""
    return _fit_nonnegative_cover(J**2, np.zeros_like(J), _gronwall_columns(J, dt), headroom)


def gronwall_check(J: np.ndarray, dt: float, constants) -> GronwallReport:
    rhs = np.asarray(constants) @ _gronwall_columns(J, dt)
    return GronwallReport(tuple(float(c) for c in constants), J**2, rhs, bool(np.all(J**2 <= rhs)))


@dataclass
class DiagnosticsRow:
    step: int
    t: float
    mass: float
    energy: float
    mass_lhs: float
    mass_rhs: float
    mass_res: float
    energy_lhs: float
    energy_rhs: float
    energy_res: float
    virial_lhs: complex
    virial_rhs: complex
    virial_res: complex
    J_cum: float
    h1_norm: float
    picard_iters: int
    contraction_est: float
    apriori_lhs: float = float("nan")
    apriori_rhs: float = float("nan")
    virial_terms: dict = field(default_factory=dict)

    def csv_values(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


def build_rows(snaps, dt: float, picard_iters, contraction, cadence: int = 1,
               apriori_constants=None) -> list[DiagnosticsRow]:
    """Assemble rows for every ``cadence``-th step of a stored snapshot series."""
    if len(snaps) < 3:
        return []
    mass_l = time_derivative([s.mass for s in snaps], dt)
    energy_l = time_derivative([s.energy for s in snaps], dt)
    virial_l = time_derivative([s.virial for s in snaps], dt)
    J = boundary_flux_J(snaps, dt)
    if apriori_constants is not None:
        rep = apriori_inequality_check(snaps, dt, apriori_constants)
        a_lhs, a_rhs = rep.lhs, rep.rhs
    else:
        a_lhs = J**2
        a_rhs = np.full(len(snaps), np.nan)
    rows = []
    for m in range(0, len(snaps), cadence):
        s = snaps[m]
        vr = s.virial_rhs
        rows.append(DiagnosticsRow(
            step=m, t=s.t, mass=s.mass, energy=s.energy,
            mass_lhs=float(mass_l[m]), mass_rhs=s.mass_rhs, mass_res=float(mass_l[m] - s.mass_rhs),
            energy_lhs=float(energy_l[m]), energy_rhs=s.energy_rhs,
            energy_res=float(energy_l[m] - s.energy_rhs),
            virial_lhs=complex(virial_l[m]), virial_rhs=vr, virial_res=complex(virial_l[m] - vr),
            J_cum=float(J[m]), h1_norm=s.h1, picard_iters=int(picard_iters[m]),
            contraction_est=float(contraction[m]),
            apriori_lhs=float(a_lhs[m]), apriori_rhs=float(a_rhs[m]),
            virial_terms=dict(s.virial_terms),
        ))
    return rows


def max_residuals(rows, skip_ends: int = 0) -> dict:
    """Max absolute identity residuals over rows (optionally dropping end rows)."""
    sel = rows[skip_ends:len(rows) - skip_ends] if skip_ends else rows
    return {
        "mass": max((abs(r.mass_res) for r in sel), default=0.0),
        "energy": max((abs(r.energy_res) for r in sel), default=0.0),
        "virial": max((abs(r.virial_res) for r in sel), default=0.0),
    }

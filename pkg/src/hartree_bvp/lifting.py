"""Dirichlet boundary data, its harmonic extension, and the shifted problem.

The boundary data are parameterised as

    Q(x, t) = A * w(t) * exp(-i omega t) * g(x),   x on the boundary,

with ``w`` a C^3 bump supported on ``[t0, t1]`` and ``g`` a spatial profile.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse.linalg as spla

from .errors import GridMismatchError
from .grid import Grid, laplacian, laplacian_blocks
from .kernel import KernelSpec, apply_nonlinearity

PROFILES = ("uniform", "face", "gaussian")


def smoothstep7(s):
    """``35 s^4 - 84 s^5 + 70 s^6 - 20 s^7`` clipped to [0, 1]; first three derivatives vanish at both ends."""
    s = np.clip(s, 0.0, 1.0)
    return s**4 * (35 + s * (-84 + s * (70 - 20 * s)))


def smoothstep7_prime(s):
    s = np.clip(s, 0.0, 1.0)
    return 140 * s**3 * (1 - s) ** 3


def window(t, t0: float, t1: float):
    """C^3 bump: rises on the first half of ``[t0, t1]``, falls on the second, peak 1."""
    s = (np.asarray(t, dtype=float) - t0) / (t1 - t0)
    return np.where(s <= 0.5, smoothstep7(2 * s), smoothstep7(2 - 2 * s))


def window_prime(t, t0: float, t1: float):
    s = (np.asarray(t, dtype=float) - t0) / (t1 - t0)
    scale = 2.0 / (t1 - t0)
    return np.where(s <= 0.5, scale * smoothstep7_prime(2 * s), -scale * smoothstep7_prime(2 - 2 * s))


@dataclass(frozen=True, eq=False)
class BoundaryData:
    """Time-dependent Dirichlet data on the boundary nodes of one grid.

    ``profile`` and ``profile_tangential`` are arrays over ``grid.boundary_idx``;
    the latter is the derivative of the profile along the boundary (zero in 1D).
    """

    amplitude: float
    t_support: tuple[float, float]
    profile: np.ndarray
    profile_tangential: np.ndarray
    omega: float = 0.0
    grid_id: str = ""

    def _carrier(self, t):
        return np.exp(-1j * self.omega * t)

    def q(self, t: float) -> np.ndarray:
        t0, t1 = self.t_support
        return self.amplitude * float(window(t, t0, t1)) * self._carrier(t) * self.profile

    def q_t(self, t: float) -> np.ndarray:
        t0, t1 = self.t_support
        w = float(window(t, t0, t1))
        dw = float(window_prime(t, t0, t1))
        return self.amplitude * (dw - 1j * self.omega * w) * self._carrier(t) * self.profile

    def q_tangential(self, t: float) -> np.ndarray:
        t0, t1 = self.t_support
        return self.amplitude * float(window(t, t0, t1)) * self._carrier(t) * self.profile_tangential

    def scaled(self, factor: float) -> "BoundaryData":
        return BoundaryData(self.amplitude * factor, self.t_support, self.profile,
                            self.profile_tangential, self.omega, self.grid_id)


def boundary_profile(g: Grid, kind: str = "uniform", face: int = 0,
                     center=None, sigma: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Spatial profile values and tangential derivatives at the boundary nodes.

    ``face`` numbers faces as ``2 * axis + side`` (side 0 at ``a``, 1 at ``b``).
    """
    pts = g.points[g.boundary_idx]
    zeros = np.zeros(len(pts))
    if kind == "uniform":
        return np.ones(len(pts)), zeros
    if kind == "face":
        axis, side = divmod(int(face), 2)
        if axis >= g.dim:
            raise ValueError(f"face {face} does not exist in {g.dim}D")
        target = g.extents[axis][side]
        return np.where(pts[:, axis] == target, 1.0, 0.0), zeros
    if kind == "gaussian":
        c = np.zeros(g.dim) if center is None else np.asarray(center, dtype=float)
        d = pts - c
        prof = np.exp(-np.sum(d**2, axis=1) / (2 * sigma**2))
        if g.dim == 1:
            return prof, zeros
        nrm = g.outward_normal
        tangent = np.stack([-nrm[:, 1], nrm[:, 0]], axis=1)
        grad = -d / sigma**2 * prof[:, None]
        return prof, np.sum(grad * tangent, axis=1)
    raise ValueError(f"unknown boundary profile {kind!r}")


def make_boundary_data(g: Grid, amplitude: float, t_support=(0.0, 1.0), profile: str = "uniform",
                       omega: float = 0.0, **profile_args) -> BoundaryData:
    prof, dprof = boundary_profile(g, profile, **profile_args)
    t0, t1 = t_support
    return BoundaryData(float(amplitude), (float(t0), float(t1)), prof, dprof, float(omega), g.grid_id)


class _Lifter:
    """Discrete harmonic extension with a cached sparse factorisation."""

    def __init__(self, g: Grid):
        self.grid = g
        l_ii, self.l_ib = laplacian_blocks(g)
        self.lu = spla.splu(l_ii.tocsc().astype(complex))

    def __call__(self, boundary_values: np.ndarray) -> np.ndarray:
        g = self.grid
        out = np.zeros(g.size, dtype=complex)
        out[g.boundary_idx] = boundary_values
        out[g.interior_idx] = self.lu.solve(-(self.l_ib @ np.asarray(boundary_values, dtype=complex)))
        return out.reshape(g.shape)


@lru_cache(maxsize=16)
def lifter(g: Grid) -> _Lifter:
    return _Lifter(g)


@dataclass(frozen=True, eq=False)
class Lift:
    qtilde: np.ndarray
    qtilde_t: np.ndarray


def harmonic_lift(bd: BoundaryData, t: float, g: Grid) -> Lift:
    """Discrete-harmonic extensions of ``Q(., t)`` and ``Q_t(., t)``."""
    if bd.grid_id and bd.grid_id != g.grid_id:
        raise GridMismatchError("boundary data were built for a different grid")
    lift = lifter(g)
    return Lift(lift(bd.q(t)), lift(bd.q_t(t)))


@dataclass(frozen=True)
class CompatibilityReport:
    max_mismatch: float
    passed: bool


def validate_compatibility(phi: np.ndarray, bd: BoundaryData, g: Grid,
                           tol: float = 1e-10) -> CompatibilityReport:
    g.check(phi)
    mismatch = float(np.max(np.abs(g.boundary(phi) - bd.q(0.0))))
    return CompatibilityReport(mismatch, mismatch <= tol)


def homogenized_source(v: np.ndarray, lift: Lift, g: Grid, k: KernelSpec) -> np.ndarray:
    """``Lap(Qt) - i dQt/dt - f(v + Qt)(v + Qt)`` at interior nodes, zero on the boundary."""
    g.check(v)
    if np.max(np.abs(g.boundary(v)), initial=0.0) > 1e-12:
        raise ValueError("shifted unknown must vanish on the boundary")
    u = v + lift.qtilde
    src = laplacian(lift.qtilde, g) - 1j * lift.qtilde_t - apply_nonlinearity(u, g, k)
    src = np.asarray(src, dtype=complex)
    src.reshape(-1)[g.boundary_idx] = 0.0
    return src

"""Tensor-product grids on boxes and second-order discrete calculus.

Fields are plain complex ``ndarray`` objects of shape ``grid.shape``.
Boundary traces are 1D arrays ordered like ``grid.boundary_idx``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, GridMismatchError


@dataclass(frozen=True)
class Grid:
    """Uniform node-centred grid on ``[a0, b0] x ... x [a_{d-1}, b_{d-1}]``.

    Attributes:
        dim: number of axes (1 or 2 for the solver, 3 for the Hardy probe).
        extents: per-axis ``(a, b)``.
        n: per-axis node count, endpoints included.
    """

    dim: int
    extents: tuple[tuple[float, float], ...]
    n: tuple[int, ...]

    @property
    def grid_id(self) -> str:
        ext = ";".join(f"{a!r},{b!r}" for a, b in self.extents)
        return f"d{self.dim}|{ext}|{'x'.join(map(str, self.n))}"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @cached_property
    def h(self) -> np.ndarray:
        return np.array([(b - a) / (m - 1) for (a, b), m in zip(self.extents, self.n)])

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.array([b - a for a, b in self.extents])

    @property
    def measure(self) -> float:
        return float(np.prod(self.lengths))

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(np.linspace(a, b, m) for (a, b), m in zip(self.extents, self.n))

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(dim, *shape)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates flattened to ``(size, dim)``."""
        return self.coords.reshape(self.dim, -1).T.copy()

    @cached_property
    def quad_w(self) -> np.ndarray:
        w = np.ones(self.shape)
        for ax, (m, hh) in enumerate(zip(self.n, self.h)):
            w1 = np.full(m, hh)
            w1[[0, -1]] = hh / 2
            w = w * w1.reshape([-1 if k == ax else 1 for k in range(self.dim)])
        return w

    @cached_property
    def _face_count(self) -> np.ndarray:
        count = np.zeros(self.shape, dtype=int)
        for ax in range(self.dim):
            sl = [slice(None)] * self.dim
            for end in (0, -1):
                sl[ax] = end
                count[tuple(sl)] += 1
        return count

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        return self._face_count > 0

    @cached_property
    def boundary_idx(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask)

    @cached_property
    def interior_idx(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    @cached_property
    def outward_normal(self) -> np.ndarray:
        """Unit outward normal per boundary node, ``(n_boundary, dim)``.

        Edge and corner nodes get the normalised sum of the adjacent face
        normals; they carry zero surface weight.
        """
        idx = np.unravel_index(self.boundary_idx, self.shape)
        nrm = np.zeros((self.boundary_idx.size, self.dim))
        for ax in range(self.dim):
            nrm[idx[ax] == 0, ax] = -1.0
            nrm[idx[ax] == self.n[ax] - 1, ax] = 1.0
        return nrm / np.linalg.norm(nrm, axis=1, keepdims=True)

    @cached_property
    def boundary_quad_w(self) -> np.ndarray:
        if self.dim == 1:
            return np.ones(2)
        idx = np.unravel_index(self.boundary_idx, self.shape)
        on_face = self._face_count.ravel()[self.boundary_idx] == 1
        w = np.where(on_face, 1.0, 0.0)
        for ax in range(self.dim):
            m, hh = self.n[ax], self.h[ax]
            # along a face: edges excluded, their half-cells folded into the neighbours
            wt = np.full(m, hh)
            wt[[0, -1]] = 0.0
            wt[[1, -2]] = 1.5 * hh
            at_end = (idx[ax] == 0) | (idx[ax] == m - 1)
            w = w * np.where(at_end, 1.0, wt[idx[ax]])
        return w

    def interior(self, u: np.ndarray) -> np.ndarray:
        return u.reshape(-1)[self.interior_idx]

    def boundary(self, u: np.ndarray) -> np.ndarray:
        return u.reshape(-1)[self.boundary_idx]

    def check(self, u: np.ndarray) -> None:
        if np.shape(u) != self.shape:
            raise GridMismatchError(f"field of shape {np.shape(u)} does not live on grid {self.grid_id}")


def build_grid(dim: int, extents, n) -> Grid:
    """Build a :class:`Grid`; scalars for ``n`` are broadcast to every axis."""
    if dim not in (1, 2, 3):
        raise ConfigError(f"grid dim must be 1 or 2 (3 only for probes), got {dim}")
    extents = [tuple(extents)] if dim == 1 and np.ndim(extents) == 1 else list(extents)
    if np.ndim(n) == 0:
        n = [int(n)] * dim
    if len(extents) != dim or len(n) != dim:
        raise ConfigError(f"need {dim} extents and node counts, got {len(extents)} and {len(n)}")
    for (a, b), m in zip(extents, n):
        if not a < b:
            raise ConfigError(f"empty interval [{a}, {b}]")
        if m < 4:
            raise ConfigError(f"need at least 4 nodes per axis, got {m}")
    return Grid(dim, tuple((float(a), float(b)) for a, b in extents), tuple(int(m) for m in n))


def gradient(u: np.ndarray, g: Grid) -> np.ndarray:
    """Centred differences inside, second-order one-sided at the ends.

    Returns shape ``(dim, *shape)``.
    """
    g.check(u)
    if g.dim == 1:
        return np.gradient(u, g.h[0], edge_order=2)[None]
    return np.stack(np.gradient(u, *g.h, edge_order=2))


def laplacian(u: np.ndarray, g: Grid) -> np.ndarray:
    """3/5/7-point Laplacian at interior nodes; boundary entries return ``u``."""
    g.check(u)
    out = np.array(u, dtype=np.result_type(u, float), copy=True)
    inner = (slice(1, -1),) * g.dim
    acc = np.zeros_like(out[inner])
    for ax, hh in enumerate(g.h):
        lo = list(inner)
        hi = list(inner)
        lo[ax] = slice(0, -2)
        hi[ax] = slice(2, None)
        acc += (u[tuple(lo)] - 2 * u[inner] + u[tuple(hi)]) / hh**2
    out[inner] = acc
    return out


def normal_trace(u: np.ndarray, g: Grid) -> np.ndarray:
    """Outward normal derivative at boundary nodes (the ``P.n`` trace)."""
    grad = gradient(u, g).reshape(g.dim, -1)[:, g.boundary_idx]
    return np.einsum("bd,db->b", g.outward_normal, grad)


def norm(u: np.ndarray, g: Grid, kind: str = "L2") -> float:
    """Discrete ``L2``, ``GRAD`` (L2 of the gradient) or ``H1`` norm."""
    kind = kind.upper()
    g.check(u)
    if kind == "L2":
        return float(np.sqrt(np.sum(g.quad_w * np.abs(u) ** 2)))
    grad2 = float(np.sum(g.quad_w * np.sum(np.abs(gradient(u, g)) ** 2, axis=0)))
    if kind == "GRAD":
        return float(np.sqrt(grad2))
    if kind == "H1":
        return float(np.sqrt(np.sum(g.quad_w * np.abs(u) ** 2) + grad2))
    raise ValueError(f"unknown norm kind {kind!r}")


def integrate(values: np.ndarray, g: Grid):
    """Trapezoid volume integral."""
    return np.sum(g.quad_w * values)


def boundary_integral(trace: np.ndarray, g: Grid):
    """Surface integral of a boundary trace (counting measure in 1D)."""
    trace = np.asarray(trace)
    if trace.shape != g.boundary_idx.shape:
        raise GridMismatchError(
            f"trace of length {trace.shape} does not match {g.boundary_idx.size} boundary nodes"
        )
    return np.sum(g.boundary_quad_w * trace)


@dataclass(frozen=True)
class XiField:
    """Vector field agreeing with the outward normal on the faces of a box.

    ``jacobian[j, k]`` holds ``d xi_j / d x_k``.
    """

    xi: np.ndarray
    eta: np.ndarray
    grad_eta: np.ndarray
    jacobian: np.ndarray
    grid_id: str


def build_xi_field(g: Grid) -> XiField:
    xi = np.empty((g.dim, *g.shape))
    jac = np.zeros((g.dim, g.dim, *g.shape))
    for ax, (a, b) in enumerate(g.extents):
        xi[ax] = (2 * g.coords[ax] - a - b) / (b - a)
        jac[ax, ax] = 2.0 / (b - a)
    eta = np.full(g.shape, float(np.sum(2.0 / g.lengths)))
    return XiField(xi, eta, np.zeros((g.dim, *g.shape)), jac, g.grid_id)


def laplacian_blocks(g: Grid) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Sparse Laplacian split into interior-interior and interior-boundary blocks."""
    ops = []
    for m, hh in zip(g.n, g.h):
        d2 = sp.diags([np.ones(m - 1), -2 * np.ones(m), np.ones(m - 1)], [-1, 0, 1], format="lil")
        d2[0, :] = 0
        d2[m - 1, :] = 0
        ops.append(d2.tocsr() / hh**2)
    full = sp.csr_matrix((g.size, g.size))
    for ax in range(g.dim):
        term = sp.identity(1, format="csr")
        for k in range(g.dim):
            term = sp.kron(term, ops[k] if k == ax else sp.identity(g.n[k]), format="csr")
        full = full + term
    full = full.tocsr()
    rows = full[g.interior_idx]
    return rows[:, g.interior_idx].tocsr(), rows[:, g.boundary_idx].tocsr()

"""Hartree potential ``f(u) = k * |u|^2`` on a grid and the probes built on it.

The convolution is a trapezoid-weighted sum over grid nodes,

    f(x_i) = sum_j w_j k(x_i - x_j) |u(x_j)|^2,

evaluated either by direct summation or by a zero-padded FFT (Toeplitz
embedding on the doubled grid). Both backends use the same node kernel
values, including the Coulomb self-cell term, so they agree to roundoff.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, GridMismatchError
from .grid import Grid, norm

SOFTENED = "softened"
COULOMB = "coulomb"
DIRECT = "direct"
FAST = "fast"

_DIRECT_BLOCK = 512


@dataclass(frozen=True)
class KernelSpec:
    """Interaction kernel.

    ``strength`` scales the whole nonlinearity; it is 1 for the physical
    problem and 0 switches the equation to the linear Schrodinger flow.
    """

    family: str = SOFTENED
    soften_a: float = 0.1
    backend: str = FAST
    strength: float = 1.0

    def __post_init__(self):
        problems = []
        if self.family not in (SOFTENED, COULOMB):
            problems.append(f"kernel.family must be softened or coulomb, got {self.family!r}")
        if self.backend not in (DIRECT, FAST):
            problems.append(f"kernel.backend must be direct or fast, got {self.backend!r}")
        if self.family == SOFTENED and not self.soften_a > 0:
            problems.append("softened kernel requires kernel.soften_a > 0")
        if self.soften_a < 0:
            problems.append("kernel.soften_a must be >= 0")
        if not self.strength >= 0:
            problems.append("kernel.strength must be >= 0")
        if problems:
            raise ConfigError("; ".join(problems), problems)

    def check(self, g: Grid) -> None:
        if self.family == COULOMB and g.dim != 2:
            raise ConfigError("coulomb requires dim=2")


def _self_cell_coulomb(hx: float, hy: float) -> float:
    """Mean of 1/|x| over the ``hx x hy`` cell centred at the origin."""
    a, b = hx / 2, hy / 2
    quadrant = a * np.arcsinh(b / a) + b * np.arcsinh(a / b)
    return 4 * quadrant / (hx * hy)


def kernel_values(offsets: np.ndarray, k: KernelSpec, h=None) -> np.ndarray:
    """``k`` at offset vectors ``offsets[..., dim]``.

    For Coulomb, zero offsets take the self-cell average (needs ``h``).
    """
    r2 = np.sum(offsets**2, axis=-1)
    if k.family == SOFTENED:
        return 1.0 / np.sqrt(r2 + k.soften_a**2)
    out = np.empty_like(r2)
    zero = r2 == 0
    out[~zero] = 1.0 / np.sqrt(r2[~zero])
    out[zero] = _self_cell_coulomb(*h)
    return out


def kernel_gradient_values(offsets: np.ndarray, k: KernelSpec) -> np.ndarray:
    """Analytic ``grad k`` at offsets, shape ``(dim, ...)``; zero at the Coulomb origin."""
    r2 = np.sum(offsets**2, axis=-1)
    if k.family == SOFTENED:
        scale = -((r2 + k.soften_a**2) ** -1.5)
    else:
        scale = np.zeros_like(r2)
        nz = r2 > 0
        scale[nz] = -(r2[nz] ** -1.5)
    return np.moveaxis(offsets, -1, 0) * scale


def convolution_matrix(g: Grid, k: KernelSpec) -> np.ndarray:
    """Dense ``K[i, j] = w_j k(x_i - x_j)`` over flattened nodes (small grids only)."""
    k.check(g)
    p = g.points
    kij = kernel_values(p[:, None, :] - p[None, :, :], k, g.h)
    return kij * g.quad_w.ravel()[None, :]


def _direct(source: np.ndarray, g: Grid, values_fn) -> np.ndarray:
    """Blocked direct sum ``sum_j values(x_i - x_j) * source_j`` over all nodes."""
    p = g.points
    s = source.ravel()
    chunks = []
    for start in range(0, g.size, _DIRECT_BLOCK):
        block = p[start:start + _DIRECT_BLOCK]
        chunks.append(values_fn(block[:, None, :] - p[None, :, :]) @ s)
    out = np.concatenate(chunks, axis=-1)
    return out.reshape(out.shape[:-1] + g.shape)


def _offset_lattice(g: Grid) -> np.ndarray:
    """Offsets on the doubled periodic lattice, shape ``(*padded, dim)``."""
    per_axis = []
    for m, hh in zip(g.n, g.h):
        idx = np.arange(2 * m)
        signed = np.where(idx < m, idx, idx - 2 * m)
        per_axis.append(signed * hh)
    return np.stack(np.meshgrid(*per_axis, indexing="ij"), axis=-1)


@lru_cache(maxsize=32)
def _kernel_spectrum(g: Grid, k: KernelSpec, which: str) -> np.ndarray:
    off = _offset_lattice(g)
    if which == "k":
        vals = kernel_values(off, k, g.h)[None]
    else:
        vals = kernel_gradient_values(off, k)
    # the unused wrap-around slot (index m) never meets a nonzero source entry
    return np.fft.rfftn(vals, axes=tuple(range(1, g.dim + 1)))


def _fast(source: np.ndarray, g: Grid, k: KernelSpec, which: str) -> np.ndarray:
    spec = _kernel_spectrum(g, k, which)
    axes = tuple(range(1, g.dim + 1))
    padded = tuple(2 * m for m in g.n)
    src_hat = np.fft.rfftn(source, s=padded, axes=tuple(range(g.dim)))
    out = np.fft.irfftn(spec * src_hat[None], s=padded, axes=axes)
    return out[(slice(None),) + tuple(slice(0, m) for m in g.n)]


def _density_source(u: np.ndarray, g: Grid, k: KernelSpec) -> np.ndarray:
    if np.shape(u) != g.shape:
        raise GridMismatchError(f"field of shape {np.shape(u)} does not live on grid {g.grid_id}")
    k.check(g)
    return g.quad_w * np.abs(u) ** 2


def hartree_potential(u: np.ndarray, g: Grid, k: KernelSpec) -> np.ndarray:
    """The real potential ``f(u)`` at every node, scaled by ``k.strength``."""
    s = _density_source(u, g, k)
    if k.backend == DIRECT:
        f = _direct(s, g, lambda d: kernel_values(d, k, g.h))
    else:
        f = _fast(s, g, k, "k")[0]
    return k.strength * f


def apply_nonlinearity(u: np.ndarray, g: Grid, k: KernelSpec) -> np.ndarray:
    return hartree_potential(u, g, k) * u


def gradient_kernel_convolution(u: np.ndarray, g: Grid, k: KernelSpec) -> np.ndarray:
    """``(grad k) * |u|^2`` at every node, shape ``(dim, *shape)``.

    This is the analytic gradient of :func:`hartree_potential` before
    discretisation; for Coulomb it is ``-(x / |x|^3) * |u|^2``.
    """
    s = _density_source(u, g, k)
    if k.backend == DIRECT:
        out = _direct(s, g, lambda d: kernel_gradient_values(d, k))
    else:
        out = _fast(s, g, k, "grad")
    return k.strength * out


@dataclass(frozen=True)
class LipschitzSample:
    numerator: float
    bound_factor: float
    ratio: float


def lipschitz_probe(v: np.ndarray, w: np.ndarray, g: Grid, k: KernelSpec) -> LipschitzSample:
    """Compare ``||f(v)v - f(w)w||_H1`` with ``(||v||^2 + ||w||^2) ||v - w||`` in H1."""
    num = norm(apply_nonlinearity(v, g, k) - apply_nonlinearity(w, g, k), g, "H1")
    bound = (norm(v, g, "H1") ** 2 + norm(w, g, "H1") ** 2) * norm(v - w, g, "H1")
    return LipschitzSample(num, bound, num / bound if bound > 0 else 0.0)


@dataclass(frozen=True)
class LinftyBound:
    lhs: float
    rhs: float


def potential_linfty_bound_check(u: np.ndarray, g: Grid, k: KernelSpec) -> LinftyBound:
    return LinftyBound(float(np.max(hartree_potential(u, g, k))), norm(u, g, "H1") ** 2)


def hardy_quotient(u: np.ndarray, g: Grid, dim_embed: int = 3) -> float:
    """``sum w |u|^2 / |x|^2`` divided by ``||grad u||^2`` on a box around the origin.

    ``u`` must vanish on the box boundary so that its zero extension lies in
    H1 of the whole space.
    """
    g.check(u)
    if dim_embed != g.dim:
        raise ValueError(f"dim_embed={dim_embed} does not match grid dim {g.dim}")
    r2 = np.sum(g.coords**2, axis=0)
    if np.min(r2) <= (1e-9 * np.min(g.h)) ** 2:
        raise ValueError("the origin coincides with a grid node; use an offset grid")
    if any(not a < 0 < b for a, b in g.extents):
        raise ValueError("box must contain the origin")
    scale = np.max(np.abs(u))
    if scale == 0:
        return 0.0
    if np.max(np.abs(g.boundary(u))) > 1e-12 * scale:
        raise ValueError("field does not vanish on the box boundary")
    weighted = np.sum(g.quad_w * np.abs(u) ** 2 / r2)
    return float(weighted / norm(u, g, "GRAD") ** 2)


def probe_threads() -> int:
    try:
        return max(1, int(os.environ.get("HARTREE_BVP_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Ordered map, threaded up to ``HARTREE_BVP_THREADS`` workers."""
    items = list(items)
    threads = probe_threads()
    if threads == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def random_smooth_field(g: Grid, rng: np.random.Generator, modes: int = 6,
                        vanishing: bool = False) -> np.ndarray:
    """Random complex field from a few low Fourier modes.

    The draw depends on ``rng`` and ``modes`` only, so the same seed gives the
    same continuous function on every resolution. Coefficients decay like
    ``1/m`` so that the field stays in H1 uniformly.
    """
    shape = (modes,) * g.dim
    m = np.indices(shape) + (1 if vanishing else 0)
    decay = 1.0 / (1.0 + np.sum(m**2, axis=0))
    coef = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * decay
    phase = rng.uniform(0, 2 * np.pi, size=(g.dim, modes)) if not vanishing else None
    basis = []
    for ax, ((a, b), x) in enumerate(zip(g.extents, g.axes)):
        s = (x - a) / (b - a)
        mm = np.arange(modes)
        if vanishing:
            basis.append(np.sin(np.pi * np.outer(mm + 1, s)))
        else:
            basis.append(np.cos(np.pi * np.outer(mm, s) + phase[ax][:, None]))
    out = coef
    for b_ax in basis:
        out = np.tensordot(out, b_ax, axes=([0], [0]))
    return out


def random_pair(g: Grid, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """A random ``(v, w)`` pair: independent, rescaled, or a small perturbation."""
    v = random_smooth_field(g, rng)
    kind = rng.integers(3)
    other = random_smooth_field(g, rng)
    if kind == 0:
        return v, other
    if kind == 1:
        return v, 10 ** rng.uniform(-2, 1) * other
    return v, v + 10 ** rng.uniform(-4, 0) * other


def lipschitz_sweep(g: Grid, k: KernelSpec, samples: int, seed: int) -> np.ndarray:
    """Ratios of :func:`lipschitz_probe` over seeded random pairs."""
    seeds = np.random.SeedSequence(seed).spawn(samples)

    def one(ss):
        v, w = random_pair(g, np.random.default_rng(ss))
        return lipschitz_probe(v, w, g, k).ratio

    return np.array(parallel_map(one, seeds))


def linfty_sweep(g: Grid, k: KernelSpec, samples: int, seed: int) -> np.ndarray:
    """``lhs / rhs`` of :func:`potential_linfty_bound_check` over seeded random fields."""
    seeds = np.random.SeedSequence(seed).spawn(samples)

    def one(ss):
        rec = potential_linfty_bound_check(random_smooth_field(g, np.random.default_rng(ss)), g, k)
        return rec.lhs / rec.rhs

    return np.array(parallel_map(one, seeds))


def offset_box_grid(n: int = 33, half_width: float = 1.0, dim: int = 3) -> Grid:
    """Box ``[-L, L]^dim`` shifted by half a cell so no node sits on the origin."""
    from .grid import build_grid

    shift = half_width / (n - 1)
    return build_grid(dim, [(-half_width + shift, half_width + shift)] * dim, n)


def random_hardy_field(g: Grid, rng: np.random.Generator) -> np.ndarray:
    """Boundary-vanishing test field: smooth modes, an origin bump, or a power-law spike."""
    cutoff = np.ones(g.shape)
    for ax, (a, b) in enumerate(g.extents):
        cutoff = cutoff * np.sin(np.pi * (g.coords[ax] - a) / (b - a))
    kind = rng.integers(3)
    if kind == 0:
        u = random_smooth_field(g, rng, modes=4, vanishing=True)
    else:
        r2 = np.sum(g.coords**2, axis=0)
        width = 10 ** rng.uniform(np.log10(2 * g.h.max()), np.log10(0.5))
        if kind == 1:
            u = np.exp(-r2 / (2 * width**2)) * cutoff
        else:
            beta = rng.uniform(0.05, 0.25)
            u = (r2 + width**2) ** (-beta) * cutoff
    u = np.asarray(u, dtype=complex)
    u.reshape(-1)[g.boundary_idx] = 0.0
    return u


def hardy_sweep(g: Grid, samples: int, seed: int) -> np.ndarray:
    seeds = np.random.SeedSequence(seed).spawn(samples)

    def one(ss):
        return hardy_quotient(random_hardy_field(g, np.random.default_rng(ss)), g, g.dim)

    return np.array(parallel_map(one, seeds))

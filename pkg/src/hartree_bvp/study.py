"""Refinement studies: observed convergence orders of the identity residuals."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .diagnostics import VIRIAL_TERMS, max_residuals

QUANTITIES = ("mass", "energy", "virial")


@dataclass(frozen=True)
class LevelResult:
    level: int
    n: tuple
    dt: float
    residuals: dict        # quantity -> max |residual|
    J_final: float
    energy_drift: float    # max_t |E(t) - E(0)|
    mass_drift: float      # max_t |M(t) - M(0)| / M(0), 0 when M(0) = 0
    max_h1: float
    picard_max: int
    virial_term_max: dict  # term name -> max modulus over the run


@dataclass(frozen=True)
class StudyReport:
    levels: tuple
    orders: dict           # quantity -> tuple of log2 ratios between consecutive levels

    def table(self) -> str:
        head = f"{'level':>5} {'n':>12} {'dt':>10} " + " ".join(f"{q + '_res':>12}" for q in QUANTITIES)
        lines = [head]
        for lv in self.levels:
            n = "x".join(map(str, lv.n))
            lines.append(f"{lv.level:>5} {n:>12} {lv.dt:>10.3g} "
                         + " ".join(f"{lv.residuals[q]:>12.4e}" for q in QUANTITIES))
        for q in QUANTITIES + ("energy_drift",):
            lines.append(f"order {q:<13} " + " ".join(format_order(o) for o in self.orders[q]))
        return "\n".join(lines)


class LevelFailure(RuntimeError):
    """A refinement level failed; ``level`` and ``cause`` identify it."""

    def __init__(self, level: int, cause: BaseException):
        super().__init__(f"refinement level {level} failed: {type(cause).__name__}: {cause}")
        self.level = level
        self.cause = cause


def observed_order(coarse: float, fine: float) -> float:
    """``log2(coarse / fine)``; ``inf`` when the fine residual is exactly zero."""
    if fine == 0.0:
        return math.inf
    if coarse == 0.0:
        return -math.inf
    return math.log2(coarse / fine)


def format_order(o: float) -> str:
    return "exact" if o == math.inf else f"{o:.3f}"


def refine(cfg, level: int):
    """``cfg`` with every grid spacing and ``dt`` divided by ``2**level``."""
    n = tuple((m - 1) * 2**level + 1 for m in cfg.grid.n)
    return cfg.replace(**{"grid.n": n, "stepper.dt": cfg.stepper.dt / 2**level})


def run_level(cfg, level: int, solver=None) -> LevelResult:
    from .stepper import solve

    solver = solver or (lambda c: solve(c, keep_states=False))
    c = refine(cfg, level)
    try:
        res = solver(c)
    except Exception as exc:  # noqa: BLE001 - re-raised with the level attached
        raise LevelFailure(level, exc) from exc
    rows = res.rows
    m0 = rows[0].mass if rows else 0.0
    e0 = rows[0].energy if rows else 0.0
    return LevelResult(
        level=level, n=tuple(c.grid.n), dt=c.stepper.dt,
        residuals=max_residuals(rows),
        J_final=rows[-1].J_cum if rows else 0.0,
        energy_drift=max((abs(r.energy - e0) for r in rows), default=0.0),
        mass_drift=max((abs(r.mass - m0) for r in rows), default=0.0) / m0 if m0 > 0 else 0.0,
        max_h1=max((r.h1_norm for r in rows), default=0.0),
        picard_max=max((r.picard_iters for r in rows), default=0),
        virial_term_max={name: max((abs(r.virial_terms.get(name, 0j)) for r in rows), default=0.0)
                         for name in VIRIAL_TERMS},
    )


def refinement_study(template, levels: int = 3, workers: int = 1, solver=None) -> StudyReport:
    """Run ``template`` at ``levels`` successive halvings of (dx, dt) and report orders.

    Levels are independent; ``workers > 1`` runs them on a thread pool.
    """
    if levels < 3:
        raise ValueError("a refinement study needs at least 3 levels")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda l: run_level(template, l, solver), range(levels)))
    else:
        results = [run_level(template, l, solver) for l in range(levels)]
    orders = {}
    for q in QUANTITIES:
        seq = [r.residuals[q] for r in results]
        orders[q] = tuple(observed_order(a, b) for a, b in zip(seq[:-1], seq[1:]))
    drift = [r.energy_drift for r in results]
    orders["energy_drift"] = tuple(observed_order(a, b) for a, b in zip(drift[:-1], drift[1:]))
    return StudyReport(tuple(results), orders)

"""Command-line driver: ``hartree-bvp <command> --config <path> [options]``.

Exit codes: 0 success, 1 configuration error, 2 solver error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import GridSpec, parse_config
from .diagnostics import apriori_inequality_check, calibrate_apriori, max_residuals
from .errors import BallEscape, CompatibilityError, ConfigError, PicardDivergence
from .kernel import (DIRECT, FAST, KernelSpec, hardy_sweep, hartree_potential, linfty_sweep,
                     lipschitz_sweep, offset_box_grid, random_smooth_field)
from .lifting import lifter
from .output import (EmitError, config_echo, emit, virial_breakdown, write_json)
from .stepper import (CrankNicolson, SolverState, contraction_probe,
                      geometric_tail_ok, initial_field, setup, solve, step)
from .study import LevelFailure, format_order, refinement_study

log = logging.getLogger("hartree_bvp")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3
COMMANDS = ("solve", "verify", "probe-lipschitz", "probe-contraction", "probe-hardy",
            "bench-convolution")


class RetryingAdvance:
    """Step function that halves ``dt`` on Picard failure, up to ``max_halvings`` times.

    A failed step of size ``h`` is re-run as two steps of size ``h/2``, each
    of which may itself be split again while the halving budget allows.
    """

    def __init__(self, max_halvings: int):
        self.max_halvings = max_halvings
        self.retries = 0
        self._props = {}

    def _cn(self, g, dt):
        if dt not in self._props:
            self._props[dt] = CrankNicolson(g, dt)
        return self._props[dt]

    def _run(self, state, scfg, bd, g, k, depth):
        try:
            return step(state, scfg, bd, g, k, self._cn(g, scfg.dt))
        except PicardDivergence:
            if depth >= self.max_halvings:
                raise
            self.retries += 1
            half = replace(scfg, dt=scfg.dt / 2)
            log.info("Picard failure at t=%.6g, retrying with dt=%.3g", state.t, half.dt)
            mid = self._run(state, half, bd, g, k, depth + 1)
            end = self._run(mid, half, bd, g, k, depth + 1)
            return SolverState(end.t, end.u, mid.picard_iters + end.picard_iters,
                               max(mid.contraction_est, end.contraction_est), end.picard_diffs)

    def __call__(self, state, scfg, bd, g, k, cn):
        self._props.setdefault(scfg.dt, cn)
        return self._run(state, scfg, bd, g, k, 0)


def _out_dir(cfg, args) -> Path:
    return Path(args.out if args.out is not None else cfg.out_dir)


def _fmt(cfg, args) -> str:
    return args.format or cfg.out_format


def cmd_solve(cfg, args) -> int:
    out = _out_dir(cfg, args)
    fmt = _fmt(cfg, args)
    adv = RetryingAdvance(cfg.max_halvings)
    t0 = time.perf_counter()
    summary = {"command": "solve", "config": config_echo(cfg)}
    try:
        res = solve(cfg, advance=adv, keep_states=False, apriori_constants=cfg.apriori_constants)
    except PicardDivergence as exc:
        partial = exc.partial
        emit(partial.rows, fmt, out / f"diagnostics.{fmt}", truncated_at=exc.t, reason=str(exc))
        summary.update(status="failed", error=str(exc), failed_step=exc.step_index, failed_t=exc.t,
                       retries=adv.retries, wall_time=time.perf_counter() - t0)
        write_json(summary, out / "summary.json")
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    if cfg.apriori_constants is None and len(res.snapshots) >= 3:
        constants, source = calibrate_apriori(res.snapshots, res.dt), "calibrated on this run"
    else:
        constants, source = cfg.apriori_constants, "configured"
    rows = res.rows
    apriori = None
    if constants is not None:
        rep = apriori_inequality_check(res.snapshots, res.dt, constants)
        apriori = {"passed": rep.passed, "worst_margin": rep.margin}
    emit(rows, fmt, out / f"diagnostics.{fmt}")
    summary.update(
        status="ok",
        retries=adv.retries,
        wall_time=time.perf_counter() - t0,
        steps=len(res.snapshots) - 1,
        calibration={"constants": None if constants is None else list(constants), "source": source},
        apriori=apriori,
        max_residuals=max_residuals(rows),
        J_final=rows[-1].J_cum if rows else 0.0,
        max_h1=max((r.h1_norm for r in rows), default=0.0),
        max_picard_iters=max((r.picard_iters for r in rows), default=0),
        picard_geometric_tail=all(geometric_tail_ok(d) for d in res.picard_diffs),
        virial_terms=virial_breakdown(rows),
    )
    write_json(summary, out / "summary.json")
    print(f"solve: {summary['steps']} steps, retries {adv.retries}, J(T) = {summary['J_final']:.6g}, "
          f"max H1 = {summary['max_h1']:.6g}; wrote {out}")
    return EXIT_OK


def cmd_verify(cfg, args) -> int:
    levels = args.levels if args.levels is not None else cfg.levels
    t0 = time.perf_counter()
    try:
        rep = refinement_study(cfg, levels)
    except LevelFailure as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        if isinstance(exc.cause, (ConfigError, CompatibilityError)):
            return EXIT_CONFIG
        return EXIT_SOLVER
    out = _out_dir(cfg, args)
    doc = {
        "command": "verify",
        "config": config_echo(cfg),
        "levels": [
            {"level": lv.level, "n": list(lv.n), "dt": lv.dt, "max_residuals": lv.residuals,
             "J_final": lv.J_final, "energy_drift": lv.energy_drift, "mass_drift": lv.mass_drift,
             "max_h1": lv.max_h1, "virial_terms": lv.virial_term_max}
            for lv in rep.levels
        ],
        "orders": {q: [format_order(o) for o in v] for q, v in rep.orders.items()},
        "wall_time": time.perf_counter() - t0,
    }
    write_json(doc, out / "verify.json")
    print(rep.table())
    return EXIT_OK


def cmd_probe_lipschitz(cfg, args) -> int:
    seed = args.seed if args.seed is not None else cfg.seed
    g = cfg.grid.build()
    cfg.kernel.check(g)
    fine = GridSpec(g.dim, g.extents, tuple(2 * m for m in g.n)).build()
    t0 = time.perf_counter()
    coarse = lipschitz_sweep(g, cfg.kernel, cfg.probe.samples, seed)
    refined = lipschitz_sweep(fine, cfg.kernel, cfg.probe.samples, seed)
    linf = linfty_sweep(g, cfg.kernel, min(cfg.probe.samples, 200), seed)
    mc, mf = float(np.max(coarse)), float(np.max(refined))
    doc = {
        "command": "probe-lipschitz", "seed": seed, "samples": cfg.probe.samples,
        "n": list(g.n), "n_refined": list(fine.n),
        "max_ratio": mc, "max_ratio_refined": mf,
        "relative_shift": abs(mf - mc) / mc if mc > 0 else 0.0,
        "finite": bool(np.all(np.isfinite(coarse)) and np.all(np.isfinite(refined))),
        "linfty_max_ratio": float(np.max(linf)),
        "wall_time": time.perf_counter() - t0,
    }
    write_json(doc, _out_dir(cfg, args) / "probe_lipschitz.json")
    print(f"lipschitz: max ratio {mc:.6g} (n={g.n}) vs {mf:.6g} (n={fine.n}), "
          f"shift {doc['relative_shift']:.3%}")
    return EXIT_OK


def homogenized_datum(cfg):
    """Grid, kernel, boundary data and ``v(0) = phi - lift(Q(0))`` for a config."""
    g, k, bd, _ = setup(cfg)
    phi = initial_field(cfg, bd, g)
    psi = phi - lifter(g)(bd.q(0.0))
    psi.reshape(-1)[g.boundary_idx] = 0.0
    return g, k, bd, psi


def cmd_probe_contraction(cfg, args) -> int:
    g, k, bd, psi = homogenized_datum(cfg)
    p = cfg.probe
    t0 = time.perf_counter()
    reports = {}
    for label, T0 in (("T0", p.T0), ("T0_half", p.T0 / 2)):
        try:
            r = contraction_probe(psi, bd, g, k, T0, p.M, p.n_iter, dt=cfg.stepper.dt)
        except BallEscape as exc:
            print(f"solver error: {exc}", file=sys.stderr)
            return EXIT_SOLVER
        reports[label] = {"T0": r.T0, "substeps": r.substeps, "factor_est": r.factor_est,
                          "factors": list(r.factors), "distances": list(r.distances)}
    f1, f2 = reports["T0"]["factor_est"], reports["T0_half"]["factor_est"]
    doc = {"command": "probe-contraction", "M": p.M, "n_iter": p.n_iter, **reports,
           "halving_ratio": f2 / f1 if f1 > 0 else float("nan"),
           "wall_time": time.perf_counter() - t0}
    write_json(doc, _out_dir(cfg, args) / "probe_contraction.json")
    print(f"contraction: factor {f1:.4g} at T0={p.T0}, {f2:.4g} at T0/2 (ratio {doc['halving_ratio']:.3f})")
    return EXIT_OK


def cmd_probe_hardy(cfg, args) -> int:
    seed = args.seed if args.seed is not None else cfg.seed
    g = offset_box_grid(cfg.probe.hardy_n)
    t0 = time.perf_counter()
    q = hardy_sweep(g, cfg.probe.hardy_samples, seed)
    doc = {"command": "probe-hardy", "seed": seed, "samples": cfg.probe.hardy_samples,
           "n": cfg.probe.hardy_n, "max_quotient": float(np.max(q)),
           "mean_quotient": float(np.mean(q)), "wall_time": time.perf_counter() - t0}
    write_json(doc, _out_dir(cfg, args) / "probe_hardy.json")
    print(f"hardy: max quotient {doc['max_quotient']:.4f} over {len(q)} fields")
    return EXIT_OK


def bench_convolution(g, kernel: KernelSpec, seed: int = 0, repeats: int = 3) -> dict:
    """Time and compare the DIRECT and FAST Hartree potentials on one random field."""
    u = random_smooth_field(g, np.random.default_rng(seed))
    kd, kf = replace(kernel, backend=DIRECT), replace(kernel, backend=FAST)
    hartree_potential(u, g, kf)  # warm the spectrum cache

    def best(k):
        times = []
        for _ in range(repeats):
            t = time.perf_counter()
            out = hartree_potential(u, g, k)
            times.append(time.perf_counter() - t)
        return out, min(times)

    fd, td = best(kd)
    ff, tf = best(kf)
    rel = float(np.max(np.abs(fd - ff)) / np.max(np.abs(fd)))
    return {"n": list(g.n), "family": kernel.family, "relative_difference": rel,
            "time_direct": td, "time_fast": tf, "speedup": td / tf if tf > 0 else float("inf")}


def cmd_bench_convolution(cfg, args) -> int:
    seed = args.seed if args.seed is not None else cfg.seed
    g = cfg.grid.build()
    cfg.kernel.check(g)
    rec = bench_convolution(g, cfg.kernel, seed)
    write_json({"command": "bench-convolution", **rec}, _out_dir(cfg, args) / "bench_convolution.json")
    print(f"bench: n={rec['n']} relative difference {rec['relative_difference']:.3e}, "
          f"direct {rec['time_direct']:.4g}s, fast {rec['time_fast']:.4g}s, "
          f"speedup {rec['speedup']:.1f}x")
    return EXIT_OK


HANDLERS = {
    "solve": cmd_solve,
    "verify": cmd_verify,
    "probe-lipschitz": cmd_probe_lipschitz,
    "probe-contraction": cmd_probe_contraction,
    "probe-hardy": cmd_probe_hardy,
    "bench-convolution": cmd_bench_convolution,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hartree-bvp",
                                description="Forced Hartree equation solver and verification harness.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="flat key = value configuration file")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--format", choices=("csv", "json"), help="diagnostics format (overrides output.format)")
    p.add_argument("--levels", type=int, help="refinement levels for verify (overrides verify.levels)")
    p.add_argument("--seed", type=int, help="probe seed (overrides seed)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
        if args.levels is not None and args.levels < 3:
            raise ConfigError("--levels must be at least 3")
        return HANDLERS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"configuration error: {exc.message}", file=sys.stderr)
        for p in exc.problems:
            if p != exc.message:
                print(f"  {p}", file=sys.stderr)
        return EXIT_CONFIG
    except CompatibilityError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EmitError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (PicardDivergence, BallEscape, FloatingPointError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())

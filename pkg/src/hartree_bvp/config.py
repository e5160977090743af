"""Run configuration: a flat ``key = value`` text format with dotted keys.

Lines are ``key = value``; ``#`` starts a comment. Unknown keys are errors.
Vector values are comma separated; 2D extents separate axes with ``;``
(``grid.extents = 0,1; 0,2``). Required keys: ``grid.dim``, ``grid.extents``,
``grid.n``, ``stepper.dt``, ``stepper.T``. See :data:`SCHEMA` for defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .grid import Grid, build_grid
from .kernel import COULOMB, KernelSpec
from .lifting import PROFILES, BoundaryData, make_boundary_data

INITIAL_KINDS = ("zero", "gaussian", "lift_plus_bump")


@dataclass(frozen=True)
class GridSpec:
    dim: int = 1
    extents: tuple[tuple[float, float], ...] = ((0.0, 1.0),)
    n: tuple[int, ...] = (128,)

    def build(self) -> Grid:
        n = self.n * self.dim if len(self.n) == 1 else self.n
        return build_grid(self.dim, self.extents, n)


@dataclass(frozen=True)
class BoundarySpec:
    amplitude: float = 0.0
    window: tuple[float, float] = (0.0, 1.0)
    profile: str = "uniform"
    face: int = 0
    center: tuple[float, ...] | None = None
    sigma: float = 0.1
    omega: float = 0.0

    def build(self, g: Grid) -> BoundaryData:
        args = {}
        if self.profile == "face":
            args["face"] = self.face
        elif self.profile == "gaussian":
            args["center"] = self.center
            args["sigma"] = self.sigma
        return make_boundary_data(g, self.amplitude, self.window, self.profile, self.omega, **args)


@dataclass(frozen=True)
class InitialSpec:
    kind: str = "zero"
    center: tuple[float, ...] | None = None
    width: float = 0.07
    amplitude: float = 1.0


@dataclass(frozen=True)
class StepperSpec:
    dt: float = 1e-3
    T: float = 0.5
    picard_tol: float = 1e-10
    max_iters: int = 50


@dataclass(frozen=True)
class ProbeSpec:
    T0: float = 0.05
    M: float = 100.0
    n_iter: int = 10
    samples: int = 1000
    hardy_n: int = 33
    hardy_samples: int = 500


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    boundary: BoundarySpec = field(default_factory=BoundarySpec)
    initial: InitialSpec = field(default_factory=InitialSpec)
    stepper: StepperSpec = field(default_factory=StepperSpec)
    probe: ProbeSpec = field(default_factory=ProbeSpec)
    cadence: int = 1
    out_dir: str = "."
    out_format: str = "csv"
    seed: int = 0
    max_halvings: int = 3
    levels: int = 3
    compat_tol: float = 1e-10
    apriori_constants: tuple[float, ...] | None = None

    @property
    def n_steps(self) -> int:
        return int(round(self.stepper.T / self.stepper.dt))

    def replace(self, **changes) -> "RunConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"stepper.dt": 5e-4})``."""
        cfg = self
        for key, value in changes.items():
            section, _, name = key.partition(".")
            if name:
                inner = dataclasses.replace(getattr(cfg, section), **{name: value})
                cfg = dataclasses.replace(cfg, **{section: inner})
            else:
                cfg = dataclasses.replace(cfg, **{key: value})
        return cfg


# --- value codecs -----------------------------------------------------------

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _extents(text: str) -> tuple[tuple[float, float], ...]:
    out = []
    for axis in text.split(";"):
        vals = _floats(axis)
        if len(vals) != 2:
            raise ValueError(f"extent {axis.strip()!r} needs two numbers")
        out.append(vals)
    return tuple(out)


def _optional_floats(text: str):
    return None if text.strip().lower() in ("", "none") else _floats(text)


def _fmt_floats(v) -> str:
    return ",".join(repr(float(x)) for x in v)


def _fmt_optional(v) -> str:
    return "none" if v is None else _fmt_floats(v)


# key -> (attribute path, parser, formatter)
SCHEMA = {
    "grid.dim": ("grid.dim", int, str),
    "grid.extents": ("grid.extents", _extents, lambda v: "; ".join(_fmt_floats(e) for e in v)),
    "grid.n": ("grid.n", _ints, lambda v: ",".join(map(str, v))),
    "kernel.family": ("kernel.family", str.lower, str),
    "kernel.soften_a": ("kernel.soften_a", float, repr),
    "kernel.backend": ("kernel.backend", str.lower, str),
    "kernel.strength": ("kernel.strength", float, repr),
    "boundary.amplitude": ("boundary.amplitude", float, repr),
    "boundary.window": ("boundary.window", _floats, _fmt_floats),
    "boundary.profile": ("boundary.profile", str.lower, str),
    "boundary.face": ("boundary.face", int, str),
    "boundary.center": ("boundary.center", _optional_floats, _fmt_optional),
    "boundary.sigma": ("boundary.sigma", float, repr),
    "boundary.omega": ("boundary.omega", float, repr),
    "initial.kind": ("initial.kind", str.lower, str),
    "initial.center": ("initial.center", _optional_floats, _fmt_optional),
    "initial.width": ("initial.width", float, repr),
    "initial.amplitude": ("initial.amplitude", float, repr),
    "stepper.dt": ("stepper.dt", float, repr),
    "stepper.T": ("stepper.T", float, repr),
    "stepper.picard_tol": ("stepper.picard_tol", float, repr),
    "stepper.max_iters": ("stepper.max_iters", int, str),
    "probe.T0": ("probe.T0", float, repr),
    "probe.M": ("probe.M", float, repr),
    "probe.n_iter": ("probe.n_iter", int, str),
    "probe.samples": ("probe.samples", int, str),
    "probe.hardy_n": ("probe.hardy_n", int, str),
    "probe.hardy_samples": ("probe.hardy_samples", int, str),
    "diagnostics.cadence": ("cadence", int, str),
    "output.dir": ("out_dir", str, str),
    "output.format": ("out_format", str.lower, str),
    "seed": ("seed", int, str),
    "retry.max_halvings": ("max_halvings", int, str),
    "verify.levels": ("levels", int, str),
    "compat.tol": ("compat_tol", float, repr),
    "apriori.constants": ("apriori_constants", _optional_floats, _fmt_optional),
}

REQUIRED = ("grid.dim", "grid.extents", "grid.n", "stepper.dt", "stepper.T")


def parse_text(text: str, source: str = "<string>") -> RunConfig:
    problems = []
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            problems.append(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        if key not in SCHEMA:
            problems.append(f"{source}:{lineno}: unknown key {key!r}")
            continue
        if key in values:
            problems.append(f"{source}:{lineno}: duplicate key {key!r}")
            continue
        try:
            values[key] = SCHEMA[key][1](value.strip())
        except ValueError as exc:
            problems.append(f"{source}:{lineno}: bad value for {key!r}: {exc}")
    for key in REQUIRED:
        if key not in values and not any(p.endswith(f"{key!r}") for p in problems):
            problems.append(f"{source}: missing required key {key!r}")
    if problems:
        raise ConfigError(f"invalid configuration ({len(problems)} problem(s))", problems)
    return from_flat(values)


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_text(text, str(path))


def from_flat(values: dict) -> RunConfig:
    """Build and validate a :class:`RunConfig` from parsed flat keys."""
    sections = {}
    top = {}
    for key, value in values.items():
        attr = SCHEMA[key][0]
        section, _, name = attr.partition(".")
        if name:
            sections.setdefault(section, {})[name] = value
        else:
            top[section] = value
    problems = []
    kernel_args = sections.pop("kernel", {})
    try:
        kernel = KernelSpec(**kernel_args)
    except ConfigError as exc:
        problems.extend(exc.problems)
        kernel = KernelSpec()
    built = {
        "grid": GridSpec(**sections.get("grid", {})),
        "boundary": BoundarySpec(**sections.get("boundary", {})),
        "initial": InitialSpec(**sections.get("initial", {})),
        "stepper": StepperSpec(**sections.get("stepper", {})),
        "probe": ProbeSpec(**sections.get("probe", {})),
    }
    cfg = RunConfig(kernel=kernel, **built, **top)
    problems.extend(validate(cfg, kernel_args))
    if problems:
        raise ConfigError(f"invalid configuration ({len(problems)} problem(s))", problems)
    return cfg


def validate(cfg: RunConfig, kernel_args=None) -> list[str]:
    p = []
    gs = cfg.grid
    if gs.dim not in (1, 2):
        p.append("grid.dim must be 1 or 2")
    else:
        if len(gs.extents) != gs.dim:
            p.append(f"grid.extents needs {gs.dim} interval(s)")
        if len(gs.n) not in (1, gs.dim):
            p.append(f"grid.n needs 1 or {gs.dim} counts")
        if any(a >= b for a, b in gs.extents):
            p.append("grid.extents: each interval needs a < b")
        if any(m < 4 for m in gs.n):
            p.append("grid.n must be >= 4 per axis")
        family = (kernel_args or {}).get("family", cfg.kernel.family)
        if family == COULOMB and gs.dim != 2:
            p.append("coulomb requires dim=2")
    b = cfg.boundary
    if b.profile not in PROFILES:
        p.append(f"boundary.profile must be one of {PROFILES}")
    if len(b.window) != 2 or not b.window[0] < b.window[1]:
        p.append("boundary.window needs t0 < t1")
    if b.sigma <= 0:
        p.append("boundary.sigma must be > 0")
    if b.profile == "face" and not 0 <= b.face < 2 * gs.dim:
        p.append(f"boundary.face must be in [0, {2 * gs.dim - 1}]")
    if b.center is not None and len(b.center) != gs.dim:
        p.append("boundary.center needs one coordinate per axis")
    ini = cfg.initial
    if ini.kind not in INITIAL_KINDS:
        p.append(f"initial.kind must be one of {INITIAL_KINDS}")
    if ini.width <= 0:
        p.append("initial.width must be > 0")
    if ini.center is not None and len(ini.center) != gs.dim:
        p.append("initial.center needs one coordinate per axis")
    s = cfg.stepper
    if not s.dt > 0:
        p.append("stepper.dt must be > 0")
    if not s.T > 0:
        p.append("stepper.T must be > 0")
    elif s.dt > 0 and abs(s.T / s.dt - round(s.T / s.dt)) > 1e-9 * (s.T / s.dt):
        p.append("stepper.T must be an integer multiple of stepper.dt")
    if not s.picard_tol > 0:
        p.append("stepper.picard_tol must be > 0")
    if s.max_iters < 2:
        p.append("stepper.max_iters must be >= 2")
    pr = cfg.probe
    if pr.T0 <= 0 or pr.M <= 0:
        p.append("probe.T0 and probe.M must be > 0")
    if pr.n_iter < 2 or pr.samples < 1 or pr.hardy_samples < 1 or pr.hardy_n < 4:
        p.append("probe counts must be positive (n_iter >= 2, hardy_n >= 4)")
    if cfg.cadence < 1:
        p.append("diagnostics.cadence must be >= 1")
    if cfg.out_format not in ("csv", "json"):
        p.append("output.format must be csv or json")
    if cfg.max_halvings < 0:
        p.append("retry.max_halvings must be >= 0")
    if cfg.levels < 3:
        p.append("verify.levels must be >= 3")
    if cfg.compat_tol < 0:
        p.append("compat.tol must be >= 0")
    if cfg.apriori_constants is not None and len(cfg.apriori_constants) != 5:
        p.append("apriori.constants needs 5 values")
    return p


def format_config(cfg: RunConfig) -> str:
    """Serialise every key; ``parse_text(format_config(c)) == c``."""
    lines = []
    for key, (attr, _, fmt) in SCHEMA.items():
        obj = cfg
        for part in attr.split("."):
            obj = getattr(obj, part)
        lines.append(f"{key} = {fmt(obj)}")
    return "\n".join(lines) + "\n"


def acceptance_template(**overrides) -> RunConfig:
    """The fixed 1D verification setup: forced left end, Gaussian start."""
    cfg = RunConfig(
        grid=GridSpec(1, ((0.0, 1.0),), (128,)),
        kernel=KernelSpec("softened", 0.1, "fast"),
        boundary=BoundarySpec(amplitude=0.5, window=(0.0, 0.5), profile="face", face=0),
        initial=InitialSpec("gaussian", (0.5,), 0.07, 1.0),
        stepper=StepperSpec(dt=1e-3, T=0.5),
    )
    return cfg.replace(**overrides)

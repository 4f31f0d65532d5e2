"""Plain-text run configuration.

Format: one ``key = value`` per line, optional ``[section]`` headers, ``#``
comments.  Every key name is unique across sections, so a key may also appear
before any header or under its own section.  Unknown keys are errors.

    experiment = sweep
    [model]
    delta = 0.4
    [sweep]
    parameter = delta
    min = -2
    max = 2
    count = 81
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .chaos import LyapunovOptions
from .experiments import Preset
from .integrator import IntegratorOptions
from .state import ModelParams

__all__ = [
    "ConfigError",
    "InitialConditions",
    "SweepOptions",
    "RunConfig",
    "EXPERIMENTS",
    "parse_config",
    "emit_config",
    "PRESETS",
    "preset_config",
    "list_presets",
    "format_presets",
]

EXPERIMENTS = (
    "simulate",
    "lyapunov",
    "sweep",
    "scatter",
    "fidelity",
    "inversion-map",
    "zero-detuning-check",
)
SWEEP_PARAMETERS = ("delta", "p0", "z_in")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class InitialConditions:
    x0: float = 0.0
    p0: float = 25.0
    nbar: float = 10.0
    z0: float = 1.0
    phase: float = 0.0
    field: str = "coherent"


@dataclass(frozen=True)
class SweepOptions:
    """Grid and analysis settings shared by the batch experiments.

    ``values``, when non-empty, overrides the ``min``/``max``/``count`` grid.
    """

    parameter: str = "delta"
    min: float = -2.0
    max: float = 2.0
    count: int = 81
    values: tuple = ()
    window_start: float = 50.0
    window_end: float = 500.0
    tau_snap: float = 250.0
    tau_max: float = 2e4
    ddelta: float = 1e-4
    z0_list: tuple = (1.0, -1.0, 0.0)
    fit_start: float = 20.0
    fit_end: float = 250.0

    def grid(self) -> tuple:
        if self.values:
            return tuple(self.values)
        return tuple(np.linspace(self.min, self.max, self.count).tolist())


@dataclass(frozen=True)
class RunConfig:
    experiment: str = "simulate"
    model: ModelParams = ModelParams()
    initial: InitialConditions = InitialConditions()
    integrator: IntegratorOptions = IntegratorOptions()
    chaos: LyapunovOptions = LyapunovOptions()
    sweep: SweepOptions = SweepOptions()
    tau_end: float = 500.0
    out: str = "."
    workers: int = 0

    @property
    def preset(self) -> Preset:
        m, i = self.model, self.initial
        return Preset(m.kappa, m.delta, m.truncation, i.x0, i.p0, i.nbar, i.z0, i.phase, i.field)

    def with_experiment(self, experiment: str) -> "RunConfig":
        if experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment: unknown value {experiment!r}", key="experiment")
        return replace(self, experiment=experiment)


# key -> (section, kind, check); check returns an error text or None
def _gt(b):
    return lambda v: None if v > b else f"must be > {b}"


def _ge(b):
    return lambda v: None if v >= b else f"must be >= {b}"


def _between(a, b):
    return lambda v: None if a <= v <= b else f"must be in [{a}, {b}]"


def _one_of(*choices):
    return lambda v: None if v in choices else f"must be one of {', '.join(choices)}"


def _each(check):
    def f(vs):
        for v in vs:
            err = check(v)
            if err:
                return f"every entry {err} (got {v})"
        return None

    return f


def _any(v):
    return None


SCHEMA = {
    "experiment": ("run", "str", _one_of(*EXPERIMENTS)),
    "tau_end": ("run", "float", _gt(0)),
    "out": ("run", "str", _any),
    "workers": ("run", "int", _ge(0)),
    "kappa": ("model", "float", _gt(0)),
    "delta": ("model", "float", _any),
    "truncation": ("model", "int", _ge(1)),
    "x0": ("initial", "float", _any),
    "p0": ("initial", "float", _any),
    "nbar": ("initial", "float", _ge(0)),
    "z0": ("initial", "float", _between(-1, 1)),
    "phase": ("initial", "float", _any),
    "field": ("initial", "str", _one_of("coherent", "fock")),
    "dt": ("integrator", "float", _gt(0)),
    "mode": ("integrator", "str", _one_of("fixed", "adaptive")),
    "rel_tol": ("integrator", "float", _gt(0)),
    "abs_tol": ("integrator", "float", _gt(0)),
    "sample_every": ("integrator", "float", _gt(0)),
    "conservation_alarm": ("integrator", "float", _gt(0)),
    "d0": ("chaos", "float", _gt(0)),
    "renorm_interval": ("chaos", "float", _gt(0)),
    "transient": ("chaos", "float", _ge(0)),
    "total_time": ("chaos", "float", _gt(0)),
    "perturbation_target": ("chaos", "str", _one_of("x", "p", "all")),
    "metric": ("chaos", "str", _one_of("full", "position")),
    "parameter": ("sweep", "str", _one_of(*SWEEP_PARAMETERS)),
    "min": ("sweep", "float", _any),
    "max": ("sweep", "float", _any),
    "count": ("sweep", "int", _ge(1)),
    "values": ("sweep", "floats", _any),
    "window_start": ("sweep", "float", _ge(0)),
    "window_end": ("sweep", "float", _gt(0)),
    "tau_snap": ("sweep", "float", _gt(0)),
    "tau_max": ("sweep", "float", _gt(0)),
    "ddelta": ("sweep", "float", _any),
    "z0_list": ("sweep", "floats", _each(_between(-1, 1))),
    "fit_start": ("sweep", "float", _ge(0)),
    "fit_end": ("sweep", "float", _gt(0)),
}
SECTIONS = ("run", "model", "initial", "integrator", "chaos", "sweep")

# grid used when a config names a sweep parameter but no grid of its own
GRID_DEFAULTS = {
    "delta": (-2.0, 2.0, 81),
    "p0": (0.0, 45.0, 901),
    "z_in": (-1.0, 1.0, 201),
}
# sweep parameter implied by each batch experiment
EXPERIMENT_PARAMETER = {"scatter": "p0", "inversion-map": "z_in"}


def _convert(key: str, kind: str, raw: str, line: int):
    try:
        if kind == "str":
            if not raw:
                raise ValueError("empty value")
            return raw
        if kind == "int":
            f = float(raw)
            if not f.is_integer():
                raise ValueError(raw)
            return int(f)
        if kind == "float":
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError(raw)
            return v
        if kind == "floats":
            parts = [s.strip() for s in raw.split(",") if s.strip()]
            vals = tuple(float(s) for s in parts)
            if not all(math.isfinite(v) for v in vals):
                raise ValueError(raw)
            return vals
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind}", line, key) from None
    raise AssertionError(kind)


def parse_config(text: str) -> RunConfig:
    """Parse and fully validate a configuration; all defaults end up explicit in the result."""
    section = None
    values: dict[str, tuple[object, int]] = {}
    for lineno, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw_line.strip()!r}", lineno)
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {raw_line.strip()!r}", lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", lineno, key)
        home, kind, check = SCHEMA[key]
        if section is not None and section != home:
            raise ConfigError(f"key {key!r} belongs in [{home}], found in [{section}]", lineno, key)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {values[key][1]})", lineno, key)
        v = _convert(key, kind, raw, lineno)
        err = check(v)
        if err:
            raise ConfigError(f"{key} {err} (got {raw})", lineno, key)
        values[key] = (v, lineno)
    return _build({k: v for k, (v, _) in values.items()}, {k: ln for k, (_, ln) in values.items()})


def _build(v: dict, lines: dict | None = None) -> RunConfig:
    lines = lines or {}

    def fail(msg, *keys):
        ln = max((lines.get(k, 0) for k in keys), default=0) or None
        raise ConfigError(msg, ln, keys[0] if keys else None)

    experiment = v.get("experiment", "simulate")
    sweep_kw = {k: v[k] for k in (f.name for f in fields(SweepOptions)) if k in v}
    parameter = sweep_kw.setdefault("parameter", EXPERIMENT_PARAMETER.get(experiment, "delta"))
    if experiment in EXPERIMENT_PARAMETER and parameter != EXPERIMENT_PARAMETER[experiment]:
        fail(f"parameter must be {EXPERIMENT_PARAMETER[experiment]} for experiment {experiment}", "parameter")
    gmin, gmax, gcount = GRID_DEFAULTS[parameter]
    sweep_kw.setdefault("min", gmin)
    sweep_kw.setdefault("max", gmax)
    sweep_kw.setdefault("count", gcount)
    sweep = SweepOptions(**sweep_kw)
    if sweep.min > sweep.max:
        fail(f"min ({sweep.min}) must not exceed max ({sweep.max})", "min", "max")
    if sweep.window_start >= sweep.window_end:
        fail("window_start must be < window_end", "window_start", "window_end")
    if sweep.fit_start >= sweep.fit_end:
        fail("fit_start must be < fit_end", "fit_start", "fit_end")
    if parameter == "z_in" and not all(-1 <= g <= 1 for g in (sweep.min, sweep.max, *sweep.values)):
        fail("z_in grid must lie in [-1, 1]", "min", "max", "values")

    def build(cls, names, *keys):
        kw = {n: v[k] for n, k in names if k in v}
        try:
            return cls(**kw)
        except ValueError as exc:
            fail(f"{', '.join(k for _, k in names if k in v) or cls.__name__}: {exc}", *[k for _, k in names if k in v])

    model = build(ModelParams, [("kappa", "kappa"), ("delta", "delta"), ("truncation", "truncation")])
    initial = build(InitialConditions, [(k, k) for k in ("x0", "p0", "nbar", "z0", "phase", "field")])
    if initial.field == "fock" and (initial.nbar != int(initial.nbar) or initial.nbar > model.truncation):
        fail("nbar must be an integer Fock index <= truncation for field=fock", "nbar")
    integ = build(
        IntegratorOptions, [(k, k) for k in ("dt", "mode", "rel_tol", "abs_tol", "sample_every", "conservation_alarm")]
    )
    chaos = build(
        LyapunovOptions,
        [(k, k) for k in ("d0", "renorm_interval", "transient", "total_time", "perturbation_target", "metric")],
    )
    return RunConfig(
        experiment=experiment,
        model=model,
        initial=initial,
        integrator=integ,
        chaos=chaos,
        sweep=sweep,
        tau_end=v.get("tau_end", 500.0),
        out=v.get("out", "."),
        workers=v.get("workers", 0),
    )


def _values_of(cfg: RunConfig) -> dict:
    out = {"experiment": cfg.experiment, "tau_end": cfg.tau_end, "out": cfg.out, "workers": cfg.workers}
    for sub in (cfg.model, cfg.initial, cfg.integrator, cfg.chaos, cfg.sweep):
        for f in fields(sub):
            if f.name in SCHEMA:
                out[f.name] = getattr(sub, f.name)
    return out


def _render(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_config(cfg: RunConfig, *, include_run_io: bool = True) -> str:
    """Canonical text of ``cfg``; parsing it gives back an equal RunConfig.

    Without ``include_run_io`` the output directory and worker count are left
    out; that text identifies the numerical content of a run.
    """
    vals = _values_of(cfg)
    lines = []
    for sec in SECTIONS:
        keys = [k for k, (home, _, _) in SCHEMA.items() if home == sec]
        if not include_run_io:
            keys = [k for k in keys if k not in ("out", "workers")]
        if sec == "sweep" and not cfg.sweep.values:
            keys = [k for k in keys if k != "values"]
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {_render(vals[k])}" for k in keys)
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------- presets

PRESETS = {
    "fig1": (
        "Lyapunov exponent and purity fluctuations versus detuning",
        "experiment = sweep\nparameter = delta\nmin = -2\nmax = 2\ncount = 81\n",
    ),
    "fig2a": (
        "Escape time and turn count versus launch momentum",
        "experiment = scatter\ndelta = 0.4\nkappa = 0.001\nmin = 0\nmax = 45\ncount = 2000\ntau_max = 20000\n",
    ),
    "fig2b": (
        "Position at tau_snap versus launch momentum",
        "experiment = sweep\nparameter = p0\ndelta = 0.4\nkappa = 0.001\nmin = 0\nmax = 45\ncount = 901\ntau_snap = 250\n",
    ),
    "fig2c": (
        "Output inversion at tau_snap versus input inversion",
        "experiment = inversion-map\ndelta = 0.4\nkappa = 0.001\nmin = -1\nmax = 1\ncount = 201\ntau_snap = 250\n",
    ),
    "fig3": (
        "Fidelity of copies with detunings delta and delta + ddelta",
        "experiment = fidelity\ndelta = 0.4\nddelta = 1e-4\nz0_list = 1, -1, 0\ntau_end = 300\n"
        "fit_start = 20\nfit_end = 250\n",
    ),
    "zero-detuning-check": (
        "Numerical versus closed-form evolution at delta = 0",
        "experiment = zero-detuning-check\ndelta = 0\ntau_end = 251.32741228718345\nsample_every = 0.5\n",
    ),
}


def preset_config(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return parse_config(PRESETS[name][1])


def list_presets() -> list[dict]:
    """One record per preset: name, description and the key parameters."""
    table = []
    for name, (desc, _) in PRESETS.items():
        c = preset_config(name)
        row = {
            "name": name,
            "experiment": c.experiment,
            "description": desc,
            "kappa": c.model.kappa,
            "delta": c.model.delta,
            "N": c.model.truncation,
            "x0": c.initial.x0,
            "p0": c.initial.p0,
            "nbar": c.initial.nbar,
            "z0": c.initial.z0,
        }
        if c.experiment in ("sweep", "scatter", "inversion-map"):
            row["grid"] = f"{c.sweep.parameter} in [{c.sweep.min:g}, {c.sweep.max:g}] x {c.sweep.count}"
        if c.experiment == "fidelity":
            row["grid"] = f"z0 in {{{', '.join(f'{z:g}' for z in c.sweep.z0_list)}}}, ddelta={c.sweep.ddelta:g}"
        if c.experiment in ("zero-detuning-check", "simulate"):
            row["grid"] = f"tau in [0, {c.tau_end:g}]"
        table.append(row)
    return table


def format_presets() -> str:
    lines = []
    for r in list_presets():
        lines.append(f"{r['name']}: {r['description']}")
        lines.append(
            f"    experiment={r['experiment']} kappa={r['kappa']:g} delta={r['delta']:g} N={r['N']} "
            f"x0={r['x0']:g} p0={r['p0']:g} nbar={r['nbar']:g} z0={r['z0']:g}"
        )
        lines.append(f"    grid: {r['grid']}")
    return "\n".join(lines) + "\n"

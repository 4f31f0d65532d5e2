"""Experiment drivers: detuning sweeps, scattering scans, sensitivity maps and
fidelity decay.

Grid points are independent; ``workers > 1`` farms them out to a process pool
and the results come back in grid order, so the output never depends on the
worker count.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .chaos import LyapunovOptions, fit_decay_rate, fit_separation_rate, max_lyapunov
from .dynamics import analytic_zero_detuning
from .integrator import (
    IntegratorOptions,
    Timeout,
    _Advancer,
    integrate,
    integrate_until,
    node_crossing,
    turning_point,
)
from .observables import ObservableSeries, entropy, fidelity, inversion, purity, series_variance
from .state import AtomPrep, ModelParams, SystemState, init_state

__all__ = [
    "Preset",
    "SweepSpec",
    "ScatterRecord",
    "FidelityRun",
    "run_pool",
    "sweep_lyapunov_vs_delta",
    "sweep_purity_variance_vs_delta",
    "fig1_sweep",
    "scattering_scan",
    "escape_intervals",
    "refine_escape_endpoint",
    "position_sensitivity_scan",
    "inversion_map",
    "fidelity_decay_experiment",
    "zero_detuning_check",
    "write_dataset",
    "LEFT_NODE",
    "RIGHT_NODE",
]

LEFT_NODE = -math.pi / 2
RIGHT_NODE = 3 * math.pi / 2
MANIFEST_SCHEMA = "cavity_chaos.manifest/1"


@dataclass(frozen=True)
class Preset:
    """Shared physical setup; defaults are the chaotic-walking configuration."""

    kappa: float = 0.001
    delta: float = 0.4
    truncation: int = 100
    x0: float = 0.0
    p0: float = 25.0
    nbar: float = 10.0
    z0: float = 1.0
    phase: float = 0.0
    field: str = "coherent"

    def params(self, delta: float | None = None) -> ModelParams:
        return ModelParams(self.kappa, self.delta if delta is None else delta, self.truncation)

    def state(self, params: ModelParams | None = None, *, p0=None, z0=None, x0=None) -> SystemState:
        params = params or self.params()
        prep = AtomPrep(self.z0 if z0 is None else z0, self.phase)
        return init_state(
            self.x0 if x0 is None else x0, self.p0 if p0 is None else p0, self.nbar, prep, params, field=self.field
        )


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple
    preset: Preset = Preset()

    def __post_init__(self):
        if self.parameter not in ("delta", "p0", "z_in"):
            raise ValueError(f"sweep parameter must be delta, p0 or z_in, got {self.parameter!r}")
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("sweep grid is empty")
        object.__setattr__(self, "values", vals)

    @classmethod
    def grid(cls, parameter: str, vmin: float, vmax: float, count: int, preset: Preset = Preset()):
        if count < 1 or vmin > vmax:
            raise ValueError("need count >= 1 and min <= max")
        vals = np.linspace(vmin, vmax, count) if count > 1 else np.array([vmin])
        return cls(parameter, tuple(vals.tolist()), preset)


def run_pool(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Map ``fn`` over ``items``; ordered results, process pool when workers > 1."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


def _guarded(fn, key, value, **kw):
    try:
        rec = fn(value, **kw)
        rec.setdefault("error", "")
        return rec
    except Exception as exc:  # per-point failures are data, not crashes
        return {key: value, "error": f"{type(exc).__name__}: {exc}"}


# ---------------------------------------------------------------- Fig. 1


def _lyapunov_point(delta, preset, lyap, integ):
    p = preset.params(delta)
    est = max_lyapunov(preset.state(p), p, lyap, integ)
    return {
        "delta": delta,
        "lambda": est.exponent,
        "stderr": est.stderr,
        "converged": est.converged,
    }


def _variance_point(delta, preset, window, integ):
    p = preset.params(delta)
    P, S = [], []

    def obs(s):
        if window[0] <= s.tau <= window[1]:
            P.append(purity(s))
            S.append(entropy(s))

    o = replace(integ, store_states=False)
    integrate(preset.state(p), p, o, window[1], obs)
    return {"delta": delta, "sigma_P": float(np.std(P)), "sigma_S": float(np.std(S)), "samples": len(P)}


def _fig1_point(delta, preset, lyap, integ, window):
    rec = _lyapunov_point(delta, preset, lyap, integ)
    rec.update(_variance_point(delta, preset, window, integ))
    return rec


def sweep_lyapunov_vs_delta(
    spec: SweepSpec,
    opts: LyapunovOptions = LyapunovOptions(),
    integ: IntegratorOptions = IntegratorOptions(),
    workers: int = 1,
) -> list[dict]:
    _need(spec, "delta")
    fn = partial(_guarded, _lyapunov_point, "delta", preset=spec.preset, lyap=opts, integ=integ)
    return run_pool(fn, spec.values, workers)


def sweep_purity_variance_vs_delta(
    spec: SweepSpec,
    window: tuple[float, float] = (50.0, 500.0),
    integ: IntegratorOptions = IntegratorOptions(),
    workers: int = 1,
) -> list[dict]:
    """sigma_P (and sigma_S) of purity (entropy) samples inside ``window`` per detuning."""
    _need(spec, "delta")
    fn = partial(_guarded, _variance_point, "delta", preset=spec.preset, window=tuple(window), integ=integ)
    return run_pool(fn, spec.values, workers)


def fig1_sweep(
    spec: SweepSpec,
    opts: LyapunovOptions = LyapunovOptions(),
    window: tuple[float, float] = (50.0, 500.0),
    integ: IntegratorOptions = IntegratorOptions(),
    workers: int = 1,
) -> list[dict]:
    """Both lambda(delta) and sigma_P(delta) on one grid."""
    _need(spec, "delta")
    fn = partial(_guarded, _fig1_point, "delta", preset=spec.preset, lyap=opts, integ=integ, window=tuple(window))
    return run_pool(fn, spec.values, workers)


def _need(spec, name):
    if spec.parameter != name:
        raise ValueError(f"this sweep varies {name}, spec varies {spec.parameter}")


# ---------------------------------------------------------------- Fig. 2a


@dataclass(frozen=True)
class ScatterRecord:
    p0: float
    T: float
    m: int
    side: str
    error: str = ""

    @property
    def escaped(self) -> bool:
        return self.side in ("left", "right")

    def as_row(self) -> dict:
        return asdict(self)


def _scatter_point(p0, preset, tau_max, integ):
    p = preset.params()
    events = [
        node_crossing(LEFT_NODE, "left", direction=-1),
        node_crossing(RIGHT_NODE, "right", direction=+1),
        turning_point(terminal=False),
    ]
    o = replace(integ, store_states=False, mode="fixed")
    outcome, traj = integrate_until(preset.state(p, p0=p0), p, o, events, tau_max)
    m = sum(1 for e in traj.events if e.kind == "turning_point")
    if isinstance(outcome, Timeout):
        return ScatterRecord(p0, math.nan, m, "trapped")
    return ScatterRecord(p0, outcome.tau_event, m, outcome.name)


def _scatter_guarded(p0, **kw):
    try:
        return _scatter_point(p0, **kw)
    except Exception as exc:
        return ScatterRecord(p0, math.nan, -1, "failed", f"{type(exc).__name__}: {exc}")


def scattering_scan(
    p0_grid: Iterable[float],
    preset: Preset = Preset(),
    tau_max: float = 2e4,
    integ: IntegratorOptions = IntegratorOptions(),
    workers: int = 1,
) -> list[ScatterRecord]:
    """Escape time T, turn count m and exit side for atoms launched from x0 with momentum p0.

    The cavity is the wavelength between the nodes x = -pi/2 and x = 3pi/2.
    Atoms still inside at ``tau_max`` are labelled trapped.
    """
    fn = partial(_scatter_guarded, preset=preset, tau_max=tau_max, integ=integ)
    return run_pool(fn, [float(v) for v in p0_grid], workers)


def escape_intervals(records: Sequence[ScatterRecord]) -> list[tuple[int, int, int, str]]:
    """Maximal runs (first, last, m, side) of consecutive escaped grid points sharing m and side."""
    runs = []
    i = 0
    while i < len(records):
        r = records[i]
        j = i
        if r.escaped:
            while j + 1 < len(records) and records[j + 1].escaped and (records[j + 1].m, records[j + 1].side) == (
                r.m,
                r.side,
            ):
                j += 1
            runs.append((i, j, r.m, r.side))
        i = j + 1
    return runs


def refine_escape_endpoint(
    inside: ScatterRecord,
    outside: ScatterRecord,
    preset: Preset = Preset(),
    levels: int = 10,
    tau_max: float = 2e4,
    integ: IntegratorOptions = IntegratorOptions(),
) -> list[ScatterRecord]:
    """Bisect toward the edge of the escape interval containing ``inside``.

    Returns the records that stayed in the interval's class (same m and side),
    ordered by approach to the edge; escape times grow along it near a
    separatrix-like trajectory.
    """
    lo, hi = inside, outside
    seq = [inside]
    for _ in range(levels):
        mid = _scatter_point(0.5 * (lo.p0 + hi.p0), preset, tau_max, integ)
        if mid.escaped and (mid.m, mid.side) == (inside.m, inside.side):
            lo = mid
            seq.append(mid)
        else:
            hi = mid
    return seq


# ---------------------------------------------------------------- Fig. 2b / 2c


def _snapshot(state, params, tau_snap, integ):
    o = replace(integ, store_states=False, sample_every=tau_snap)
    return integrate(state, params, o, state.tau + tau_snap).final


def _position_point(p0, preset, tau_snap, integ):
    p = preset.params()
    s = _snapshot(preset.state(p, p0=p0), p, tau_snap, integ)
    return {"p0": p0, "x": s.x, "p": s.p, "z": inversion(s)}


def _inversion_point(z_in, preset, tau_snap, integ):
    p = preset.params()
    s = _snapshot(preset.state(p, z0=z_in), p, tau_snap, integ)
    return {"z_in": z_in, "z_out": inversion(s), "x": s.x, "p": s.p}


def position_sensitivity_scan(
    p0_grid: Iterable[float],
    tau_snap: float = 250.0,
    preset: Preset = Preset(),
    integ: IntegratorOptions = IntegratorOptions(),
    workers: int = 1,
) -> list[dict]:
    """Atomic position x(tau_snap) as a function of launch momentum."""
    fn = partial(_guarded, _position_point, "p0", preset=preset, tau_snap=tau_snap, integ=integ)
    return run_pool(fn, [float(v) for v in p0_grid], workers)


def inversion_map(
    z_in_grid: Iterable[float],
    tau_snap: float = 250.0,
    preset: Preset = Preset(),
    integ: IntegratorOptions = IntegratorOptions(),
    workers: int = 1,
) -> list[dict]:
    """Output inversion z(tau_snap) as a function of the prepared inversion."""
    fn = partial(_guarded, _inversion_point, "z_in", preset=preset, tau_snap=tau_snap, integ=integ)
    return run_pool(fn, [float(v) for v in z_in_grid], workers)


# ---------------------------------------------------------------- Fig. 3


@dataclass
class FidelityRun:
    z0: float
    ddelta: float
    fidelity: ObservableSeries
    log10_infidelity: ObservableSeries
    separation: ObservableSeries
    decay_rate: float
    decay_r2: float
    separation_rate: float
    separation_r2: float
    fit_window: tuple = (20.0, 250.0)

    def summary(self) -> dict:
        return {
            "z0": self.z0,
            "ddelta": self.ddelta,
            "decay_rate": self.decay_rate,
            "decay_r2": self.decay_r2,
            "separation_rate": self.separation_rate,
            "separation_r2": self.separation_r2,
        }

    def rows(self) -> list[dict]:
        return [
            {"tau": t, "f": f, "log10_1mf": g, "dx": d}
            for t, f, g, d in zip(
                self.fidelity.taus.tolist(),
                self.fidelity.values.tolist(),
                self.log10_infidelity.values.tolist(),
                self.separation.values.tolist(),
            )
        ]


def _fidelity_run(z0, preset, ddelta, tau_end, integ, fit_window):
    p1 = preset.params()
    p2 = preset.params(preset.delta + ddelta)
    s0 = preset.state(p1, z0=z0)
    a1, a2 = _Advancer(p1, integ), _Advancer(p2, integ)
    n = int(round(tau_end / integ.sample_every))
    taus = np.arange(n + 1) * integ.sample_every
    y1 = s0.as_vector().copy()
    y2 = y1.copy()
    f = np.empty(n + 1)
    dx = np.empty(n + 1)
    for i in range(n + 1):
        if i:
            y1 = a1(y1, integ.sample_every, taus[i - 1])
            y2 = a2(y2, integ.sample_every, taus[i - 1])
        st1 = SystemState.from_vector(y1, taus[i])
        st2 = SystemState.from_vector(y2, taus[i])
        f[i] = fidelity(st1, st2)
        dx[i] = st2.x - st1.x
    fser = ObservableSeries("fidelity", taus, f)
    with np.errstate(divide="ignore"):
        lser = ObservableSeries("log10_1mf", taus, np.log10(np.clip(1.0 - f, 0.0, None)))
    xser = ObservableSeries("dx", taus, dx)
    try:
        rate, r2 = fit_decay_rate(fser, fit_window)
    except ValueError:
        rate, r2 = math.nan, math.nan
    try:
        srate, sr2 = fit_separation_rate(fser, (fit_window[0], math.inf))
    except ValueError:
        srate, sr2 = math.nan, math.nan
    return FidelityRun(z0, ddelta, fser, lser, xser, rate, r2, srate, sr2, tuple(fit_window))


def fidelity_decay_experiment(
    preset: Preset = Preset(),
    ddelta: float = 1e-4,
    z0_list: Sequence[float] = (1.0, -1.0, 0.0),
    tau_end: float = 300.0,
    integ: IntegratorOptions = IntegratorOptions(),
    fit_window: tuple[float, float] = (20.0, 250.0),
    workers: int = 1,
) -> dict[float, FidelityRun]:
    """Overlap of two copies evolved with detunings delta and delta + ddelta.

    Both copies start from the same state; per initial inversion the result
    holds f(tau), log10(1 - f), the classical position offset, the -ln f slope
    over ``fit_window`` and the growth rate of the state-space angle.
    """
    fn = partial(_fidelity_run, preset=preset, ddelta=ddelta, tau_end=tau_end, integ=integ, fit_window=fit_window)
    runs = run_pool(fn, [float(z) for z in z0_list], workers)
    return {r.z0: r for r in runs}


# ---------------------------------------------------------------- zero detuning


def zero_detuning_check(preset: Preset = Preset(delta=0.0), periods: float = 2.0, integ: IntegratorOptions = IntegratorOptions()) -> dict:
    """Integrate at delta = 0 and compare with the closed form.

    Runs over ``periods`` quantum periods pi/(kappa p0); reports the maximal
    inversion error and the per-component mismatch after one period.
    """
    p = preset.params(0.0)
    s0 = preset.state(p)
    period = math.pi / (p.kappa * s0.p)
    rows = []

    def obs(s):
        ref = analytic_zero_detuning(s0, p, s.tau)
        rows.append({"tau": s.tau, "z": inversion(s), "z_exact": inversion(ref)})

    integrate(s0, p, replace(integ, store_states=False), periods * period, obs)
    one = integrate(s0, p, replace(integ, store_states=False, sample_every=period), period).final
    amp_err = float(np.max(np.abs(one.as_vector()[2:] - s0.as_vector()[2:])))
    z_err = max(abs(r["z"] - r["z_exact"]) for r in rows)
    return {"period": period, "max_inversion_error": z_err, "period_amplitude_error": amp_err, "rows": rows}


# ---------------------------------------------------------------- output


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def table_text(columns: Sequence[str], rows: Iterable[dict]) -> str:
    """CSV with header; floats as shortest round-trip decimal."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def spec_hash(spec_text: str) -> str:
    return hashlib.sha256(spec_text.encode()).hexdigest()[:12]


def _atomic_write(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_dataset(
    outdir,
    experiment: str,
    spec_text: str,
    tables: dict[str, tuple[Sequence[str], Iterable[dict]]],
    manifest: dict,
) -> list[Path]:
    """Write ``<experiment>[-<part>]-<hash>.csv`` tables plus ``<experiment>-<hash>.json``.

    Every table is rendered before anything touches the disk, so a failure
    leaves no partial dataset behind.
    """
    outdir = Path(outdir)
    if not outdir.is_dir():
        raise FileNotFoundError(f"output directory {outdir} does not exist")
    h = spec_hash(spec_text)
    rendered = {}
    for part, (cols, rows) in tables.items():
        name = f"{experiment}-{part}-{h}.csv" if part else f"{experiment}-{h}.csv"
        rendered[outdir / name] = table_text(cols, rows)
    man = {
        "schema": MANIFEST_SCHEMA,
        "experiment": experiment,
        "spec_hash": h,
        "spec": spec_text,
        "data_files": sorted(p.name for p in rendered),
    }
    man.update(manifest)
    rendered[outdir / f"{experiment}-{h}.json"] = json.dumps(man, indent=2, sort_keys=True, default=_json_default) + "\n"
    written = []
    try:
        for path, text in rendered.items():
            _atomic_write(path, text)
            written.append(path)
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    return written


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0

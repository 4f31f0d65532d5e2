"""Command-line front end.

    cavity-chaos presets
    cavity-chaos sweep --preset fig1 --out data/ --workers 4
    cavity-chaos simulate --config run.cfg --set delta=0.8

Each run writes CSV tables plus a JSON manifest named after a hash of the
canonical configuration (worker count and output directory excluded).
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .chaos import max_lyapunov
from .config import (
    ConfigError,
    RunConfig,
    emit_config,
    format_presets,
    parse_config,
)
from .experiments import (
    SweepSpec,
    fidelity_decay_experiment,
    fig1_sweep,
    inversion_map,
    position_sensitivity_scan,
    scattering_scan,
    write_dataset,
    zero_detuning_check,
)
from .integrator import TRAJECTORY_COLUMNS, integrate

__all__ = ["main", "run", "resolve_workers", "WORKERS_ENV"]

WORKERS_ENV = "CAVITY_CHAOS_WORKERS"
SUBCOMMANDS = ("simulate", "lyapunov", "sweep", "scatter", "fidelity", "inversion-map", "run")


def resolve_workers(flag: int | None, config_value: int = 0) -> int:
    """Flag beats environment beats config; 0 means all available CPUs."""
    n = flag
    if n is None and os.environ.get(WORKERS_ENV):
        try:
            n = int(os.environ[WORKERS_ENV])
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {os.environ[WORKERS_ENV]!r}") from None
    if n is None:
        n = config_value
    if n < 0:
        raise ConfigError(f"workers must be >= 0, got {n}")
    if n == 0:
        n = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
    return n


# ---------------------------------------------------------------- drivers
# each returns {part: (columns, rows)} and extra manifest entries


def _simulate(cfg: RunConfig, workers: int):
    p = cfg.model
    s0 = cfg.preset.state(p)
    traj = integrate(s0, p, cfg.integrator, cfg.tau_end)
    rows = [dict(zip(TRAJECTORY_COLUMNS, r)) for r in traj.table().tolist()]
    return {"": (TRAJECTORY_COLUMNS, rows)}, {"final_state": traj.final.to_dict(), "steps": traj.steps}


def _lyapunov(cfg: RunConfig, workers: int):
    p, i = cfg.model, cfg.initial
    est = max_lyapunov(cfg.preset.state(p), p, cfg.chaos, cfg.integrator)
    rec = {"delta": p.delta, "kappa": p.kappa, "p0": i.p0, "nbar": i.nbar, "z0": i.z0}
    rec.update(est.to_record())
    cols = ("delta", "kappa", "p0", "nbar", "z0", "lambda", "stderr", "converged")
    stretch = [{"k": k, "ln_stretch": v} for k, v in enumerate(est.stretches.tolist())]
    return {"": (cols, [rec]), "stretches": (("k", "ln_stretch"), stretch)}, {"estimate": rec}


def _sweep(cfg: RunConfig, workers: int):
    sw = cfg.sweep
    spec = SweepSpec(sw.parameter, sw.grid(), cfg.preset)
    if sw.parameter == "delta":
        rows = fig1_sweep(spec, cfg.chaos, (sw.window_start, sw.window_end), cfg.integrator, workers)
        cols = ("delta", "lambda", "stderr", "converged", "sigma_P", "sigma_S", "samples", "error")
        extra = {"correlation": _rank_correlation(rows)}
        return {"": (cols, rows)}, extra
    if sw.parameter == "p0":
        rows = position_sensitivity_scan(spec.values, sw.tau_snap, cfg.preset, cfg.integrator, workers)
        return {"": (("p0", "x", "p", "z", "error"), rows)}, {}
    return _inversion(cfg, workers)


def _rank_correlation(rows) -> dict:
    from scipy.stats import spearmanr

    ok = [r for r in rows if not r["error"] and math.isfinite(r["lambda"]) and math.isfinite(r["sigma_P"])]
    if len(ok) < 3:
        return {"spearman": None, "points": len(ok)}
    rho = spearmanr([r["sigma_P"] for r in ok], [r["lambda"] for r in ok]).statistic
    return {"spearman": float(rho), "points": len(ok)}


def _scatter(cfg: RunConfig, workers: int):
    sw = cfg.sweep
    recs = scattering_scan(sw.grid(), cfg.preset, sw.tau_max, cfg.integrator, workers)
    rows = [r.as_row() for r in recs]
    return {"": (("p0", "T", "m", "side", "error"), rows)}, {}


def _inversion(cfg: RunConfig, workers: int):
    sw = cfg.sweep
    rows = inversion_map(sw.grid(), sw.tau_snap, cfg.preset, cfg.integrator, workers)
    return {"": (("z_in", "z_out", "x", "p", "error"), rows)}, {}


def _fidelity(cfg: RunConfig, workers: int):
    sw = cfg.sweep
    runs = fidelity_decay_experiment(
        cfg.preset, sw.ddelta, sw.z0_list, cfg.tau_end, cfg.integrator, (sw.fit_start, sw.fit_end), workers
    )
    tables = {}
    for z0, r in runs.items():
        tables[f"z{z0:+g}"] = (("tau", "f", "log10_1mf", "dx"), r.rows())
    return tables, {"rates": [r.summary() for r in runs.values()]}


def _zero_detuning(cfg: RunConfig, workers: int):
    pre = replace(cfg.preset, delta=0.0)
    period = math.pi / (pre.kappa * pre.p0)
    res = zero_detuning_check(pre, cfg.tau_end / period, cfg.integrator)
    extra = {k: res[k] for k in ("period", "max_inversion_error", "period_amplitude_error")}
    return {"": (("tau", "z", "z_exact"), res["rows"])}, extra


DRIVERS = {
    "simulate": _simulate,
    "lyapunov": _lyapunov,
    "sweep": _sweep,
    "scatter": _scatter,
    "fidelity": _fidelity,
    "inversion-map": _inversion,
    "zero-detuning-check": _zero_detuning,
}


def run(config: RunConfig, workers: int | None = None, out: str | os.PathLike | None = None, log=None) -> int:
    """Run one configured experiment and write its dataset; returns an exit status."""
    log = log or sys.stderr
    outdir = Path(out if out is not None else config.out)
    try:
        nw = resolve_workers(workers, config.workers)
    except ConfigError as exc:
        print(f"error: {exc}", file=log)
        return 2
    if not outdir.is_dir():
        print(f"error: output directory {outdir} does not exist", file=log)
        return 2
    spec_text = emit_config(config, include_run_io=False)
    t0 = time.perf_counter()
    try:
        tables, extra = DRIVERS[config.experiment](config, nw)
    except Exception as exc:
        print(f"error: {config.experiment} failed: {type(exc).__name__}: {exc}", file=log)
        return 1
    wall = time.perf_counter() - t0
    manifest = {
        "code_version": __version__,
        "numpy_version": np.__version__,
        "config": _config_record(config),
        "workers": nw,
        "wall_time_s": wall,
    }
    manifest.update(extra)
    try:
        paths = write_dataset(outdir, config.experiment, spec_text, tables, manifest)
    except OSError as exc:
        print(f"error: writing dataset failed: {exc}", file=log)
        return 1
    failed = sum(1 for _, rows in tables.values() for r in rows if isinstance(r, dict) and r.get("error"))
    for pth in paths:
        print(pth, file=log)
    if failed:
        print(f"note: {failed} grid point(s) failed; see the error column", file=log)
    return 0


def _config_record(cfg: RunConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d.pop("out", None)
    d.pop("workers", None)
    d["integrator"].pop("store_states", None)
    return d


# ---------------------------------------------------------------- argparse


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cavity-chaos", description="Atom-cavity chaos experiments")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("presets", help="list the built-in presets")
    for name in SUBCOMMANDS:
        help_text = "run the experiment named in the configuration" if name == "run" else f"run a {name} experiment"
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", type=Path, help="configuration file (key = value)")
        sp.add_argument("--preset", help="start from a built-in preset")
        sp.add_argument("--out", help="output directory (must exist)")
        sp.add_argument("--workers", type=int, help=f"worker processes, 0 = all CPUs (env {WORKERS_ENV})")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key")
        sp.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")
    return ap


def load_config(config_path=None, preset=None, overrides=(), experiment=None) -> RunConfig:
    """Preset text, then the config file, then --set overrides; later keys win."""
    from .config import PRESETS

    chunks = []
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; available: {', '.join(PRESETS)}")
        chunks.append(PRESETS[preset][1])
    if config_path is not None:
        chunks.append(Path(config_path).read_text())
    merged = _merge_texts(chunks + ["\n".join(overrides)])
    if experiment is not None and experiment != "run":
        merged = _merge_texts([merged, f"experiment = {experiment}"])
    return parse_config(merged)


def _merge_texts(texts) -> str:
    """Overlay configuration texts key by key; each layer is parsed on its own for errors."""
    merged: dict[str, str] = {}
    for t in texts:
        parse_config(t)  # surface errors with the right line numbers
        for line in t.splitlines():
            body = line.split("#", 1)[0].strip()
            if not body or body.startswith("[") or "=" not in body:
                continue
            k, v = (s.strip() for s in body.split("=", 1))
            merged[k] = v
    return "\n".join(f"{k} = {v}" for k, v in merged.items()) + "\n"


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "presets":
        sys.stdout.write(format_presets())
        return 0
    try:
        cfg = load_config(args.config, args.preset, args.set, args.command)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.print_config:
        sys.stdout.write(emit_config(cfg))
        return 0
    return run(cfg, args.workers, args.out)


if __name__ == "__main__":
    sys.exit(main())

"""Lyapunov exponent, predictability horizon and fidelity-decay rates."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .integrator import IntegrationError, IntegratorOptions
from .observables import ObservableSeries
from .state import ModelParams, SystemState, validate

__all__ = [
    "LyapunovOptions",
    "LyapunovEstimate",
    "max_lyapunov",
    "predictability_horizon",
    "fit_decay_rate",
    "fit_separation_rate",
    "HorizonUndefined",
]

BOOTSTRAP_SEED = 20030
BOOTSTRAP_DRAWS = 400


@dataclass(frozen=True)
class LyapunovOptions:
    """Benettin two-trajectory settings (times in units of 1/Omega_0).

    perturbation_target picks the coordinates receiving the initial offset d0:
    'x', 'p', or 'all' (equal share along every coordinate).  metric 'full'
    measures separation over the whole state vector, 'position' over x only.
    """

    d0: float = 1e-8
    renorm_interval: float = 1.0
    transient: float = 50.0
    total_time: float = 20000.0
    perturbation_target: str = "x"
    metric: str = "full"

    def __post_init__(self):
        if not self.d0 > 0:
            raise ValueError(f"d0 must be > 0, got {self.d0}")
        if not self.renorm_interval > 0:
            raise ValueError(f"renorm_interval must be > 0, got {self.renorm_interval}")
        if not self.transient >= 0:
            raise ValueError(f"transient must be >= 0, got {self.transient}")
        if not self.total_time > self.transient:
            raise ValueError("total_time must exceed transient")
        if self.total_time < self.renorm_interval:
            raise ValueError("total_time must cover at least one renormalization interval")
        if self.perturbation_target not in ("x", "p", "all"):
            raise ValueError(f"unknown perturbation_target {self.perturbation_target!r}")
        if self.metric not in ("full", "position"):
            raise ValueError(f"unknown metric {self.metric!r}")


@dataclass(frozen=True)
class LyapunovEstimate:
    exponent: float
    stderr: float
    converged: bool
    first_half: float
    second_half: float
    stretches: np.ndarray

    def to_record(self) -> dict:
        return {
            "lambda": self.exponent,
            "stderr": self.stderr,
            "converged": self.converged,
            "lambda_first_half": self.first_half,
            "lambda_second_half": self.second_half,
        }


def _block_bootstrap_stderr(samples: np.ndarray) -> float:
    k = samples.size
    if k < 4:
        return float("nan")
    L = max(1, int(math.ceil(math.sqrt(k))))
    nb = k // L
    if nb < 2:
        return float(np.std(samples) / math.sqrt(k))
    means = samples[: nb * L].reshape(nb, L).mean(axis=1)
    rng = np.random.default_rng(BOOTSTRAP_SEED)
    draws = rng.integers(0, nb, size=(BOOTSTRAP_DRAWS, nb))
    return float(np.std(means[draws].mean(axis=1)))


def max_lyapunov(
    initial: SystemState,
    params: ModelParams,
    opts: LyapunovOptions = LyapunovOptions(),
    integ: IntegratorOptions = IntegratorOptions(),
) -> LyapunovEstimate:
    """Maximal Lyapunov exponent by co-integrating a companion trajectory.

    Both trajectories use identical fixed RK4 steps.  Every ``renorm_interval``
    the separation d_k is measured, ln(d_k/d0) recorded and the companion
    pulled back to distance d0 along the current difference direction.  The
    first ``transient`` time only aligns the separation vector; its stretches
    are discarded.  lambda = sum ln(d_k/d0) / total_time.
    """
    validate(initial, params, norm_tol=1e-6)
    spr = max(1, int(round(opts.renorm_interval / integ.dt)))
    dt = opts.renorm_interval / spr
    n_skip = int(round(opts.transient / opts.renorm_interval))
    n_keep = int(round(opts.total_time / opts.renorm_interval))

    y0 = initial.as_vector().copy()
    mask = np.ones_like(y0)
    if opts.metric == "position":
        mask[:] = 0.0
        mask[0] = 1.0
    direction = np.zeros_like(y0)
    if opts.perturbation_target == "x":
        direction[0] = 1.0
    elif opts.perturbation_target == "p":
        direction[1] = 1.0
    else:
        direction[:] = 1.0
    d_metric = math.sqrt(float(np.sum((direction * mask) ** 2)))
    if d_metric == 0:
        raise ValueError("perturbation has no component in the chosen metric")
    w0 = y0 + direction * (opts.d0 / d_metric)

    stretches, _, status = _kernels.benettin(
        y0, w0, params.kappa, params.delta, dt, spr, n_skip, n_keep, opts.d0, mask
    )
    if status != 0:
        raise IntegrationError("Lyapunov co-integration lost the trajectory pair", initial)
    kept = stretches[n_skip:]
    lam = float(kept.sum() / (n_keep * opts.renorm_interval))
    stderr = _block_bootstrap_stderr(kept) / opts.renorm_interval
    h = kept.size // 2
    l1 = float(kept[:h].mean() / opts.renorm_interval) if h else lam
    l2 = float(kept[h:].mean() / opts.renorm_interval) if h else lam
    converged = abs(l1 - l2) <= max(6.0 * stderr, 1e-3)
    return LyapunovEstimate(lam, stderr, bool(converged), l1, l2, kept)


class HorizonUndefined(ValueError):
    """No finite predictability horizon for a non-positive exponent."""


def predictability_horizon(lam: float, dx_confidence: float, dx0: float) -> float:
    """Time for an initial uncertainty dx0 to reach dx_confidence: ln(dx/dx0)/lambda."""
    if not lam > 0:
        raise HorizonUndefined(f"horizon undefined for lambda={lam}")
    if not dx_confidence > dx0 > 0:
        raise ValueError("need dx_confidence > dx0 > 0")
    return math.log(dx_confidence / dx0) / lam


def _linfit(t: np.ndarray, v: np.ndarray) -> tuple[float, float]:
    if t.size < 2 or np.ptp(t) == 0:
        raise ValueError("degenerate fit window")
    A = np.vstack([t, np.ones_like(t)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, v, rcond=None)
    resid = v - (slope * t + icpt)
    ss_tot = float(np.sum((v - v.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), r2


def fit_decay_rate(series: ObservableSeries, fit_window: tuple[float, float] = (20.0, 250.0)) -> tuple[float, float]:
    """Least-squares slope of -ln f against tau; returns (rate, R^2)."""
    s = series.window(*fit_window)
    if np.any(s.values <= 0):
        raise ValueError("fidelity samples must be > 0")
    return _linfit(s.taus, -np.log(s.values))


def fit_separation_rate(
    series: ObservableSeries,
    fit_window: tuple[float, float] = (20.0, float("inf")),
    ceiling: float = 0.1,
    floor: float = 1e-13,
) -> tuple[float, float]:
    """Exponential growth rate of the angle between two state vectors.

    With 1 - f = sin^2(theta), theta measures the distance between the two
    normalized states.  The fit of ln(theta) against tau uses samples inside
    ``fit_window`` up to the first time 1 - f exceeds ``ceiling`` (before the
    overlap saturates); samples with 1 - f below ``floor`` sit at round-off
    and are skipped.  Returns (rate, R^2).
    """
    s = series.window(*fit_window)
    g = 1.0 - s.values
    over = np.nonzero(g > ceiling)[0]
    stop = over[0] if over.size else g.size
    t, g = s.taus[:stop], g[:stop]
    keep = g > floor
    t, g = t[keep], g[keep]
    theta = np.arcsin(np.sqrt(np.clip(g, 0.0, 1.0)))
    return _linfit(t, np.log(theta))


def options_record(opts: LyapunovOptions) -> dict:
    return asdict(opts)

"""Runge-Kutta propagation of the Hamilton-Schroedinger system.

Fixed-step classical RK4 is the default; an embedded Dormand-Prince 5(4)
pair is available for long ballistic stretches.  Integration is sampled on a
regular grid, observers are called at every sample and the norm and energy
are checked against ``conservation_alarm`` as the run proceeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

import numpy as np
from scipy.optimize import brentq

from . import _kernels
from .dynamics import energy_W, interaction_sum
from .observables import ObservableSeries, entropy, inversion, purity
from .state import ModelParams, SystemState, norm2, validate

__all__ = [
    "IntegratorOptions",
    "IntegrationError",
    "ConservationAlarm",
    "Event",
    "Timeout",
    "CoordinateEvent",
    "node_crossing",
    "turning_point",
    "Trajectory",
    "step",
    "integrate",
    "integrate_until",
    "TRAJECTORY_COLUMNS",
]

TRAJECTORY_COLUMNS = ("tau", "x", "p", "z", "P", "S", "W", "norm")
EVENT_XTOL = 1e-11


@dataclass(frozen=True)
class IntegratorOptions:
    dt: float = 0.005
    mode: str = "fixed"
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    sample_every: float = 0.25
    conservation_alarm: float = 1e-6
    store_states: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.mode not in ("fixed", "adaptive"):
            raise ValueError(f"mode must be 'fixed' or 'adaptive', got {self.mode!r}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be > 0")
        if not self.sample_every > 0:
            raise ValueError(f"sample_every must be > 0, got {self.sample_every}")
        if not self.conservation_alarm > 0:
            raise ValueError(f"conservation_alarm must be > 0, got {self.conservation_alarm}")


class IntegrationError(RuntimeError):
    """Propagation produced a non-finite state; ``last_state`` is the last finite one."""

    def __init__(self, message: str, last_state: SystemState, steps: int = 0):
        super().__init__(message)
        self.last_state = last_state
        self.steps = steps


class ConservationAlarm(IntegrationError):
    def __init__(self, norm_drift: float, energy_drift: float, steps: int, state: SystemState, threshold: float):
        super().__init__(
            f"conservation alarm at tau={state.tau:.6g} after {steps} steps: "
            f"norm drift {norm_drift:.3e}, energy drift {energy_drift:.3e} (threshold {threshold:.1e})",
            state,
            steps,
        )
        self.norm_drift = norm_drift
        self.energy_drift = energy_drift
        self.threshold = threshold


@dataclass(frozen=True)
class Event:
    kind: str
    tau_event: float
    state_at_event: SystemState
    residual: float = 0.0
    name: str = ""


@dataclass(frozen=True)
class Timeout:
    tau_max: float
    state: SystemState
    kind: str = "timeout"


@dataclass(frozen=True)
class CoordinateEvent:
    """Zero of ``coord - level`` for the classical coordinate ``coord`` ('x' or 'p').

    ``direction`` > 0 only fires on upward crossings, < 0 on downward ones.
    Integrations whose events are all of this type run entirely in compiled code.
    """

    coord: str
    level: float = 0.0
    kind: str = "custom"
    terminal: bool = True
    direction: int = 0
    name: str = ""

    def __post_init__(self):
        if self.coord not in ("x", "p"):
            raise ValueError(f"coord must be 'x' or 'p', got {self.coord!r}")

    @property
    def index(self) -> int:
        return 0 if self.coord == "x" else 1

    def __call__(self, state: SystemState) -> float:
        return getattr(state, self.coord) - self.level


def node_crossing(level: float, name: str = "", direction: int = 0) -> CoordinateEvent:
    return CoordinateEvent("x", level, "node_crossing", True, direction, name)


def turning_point(terminal: bool = True) -> CoordinateEvent:
    return CoordinateEvent("p", 0.0, "turning_point", terminal, 0, "turning_point")


class Trajectory:
    """Sampled solution.  Without ``store_states`` only times and the final state are kept."""

    def __init__(self, params, options, taus, vectors, final, steps, events=()):
        self.params = params
        self.options = options
        self.taus = np.asarray(taus, dtype=np.float64)
        self.vectors = vectors
        self.final = final
        self.steps = steps
        self.events = list(events)

    def __len__(self):
        return self.taus.size

    @property
    def sample_interval(self) -> float:
        return self.options.sample_every

    def state(self, i: int) -> SystemState:
        if self.vectors is None:
            raise ValueError("trajectory was run with store_states=False")
        return SystemState.from_vector(self.vectors[i], self.taus[i])

    def __iter__(self) -> Iterator[SystemState]:
        for i in range(len(self)):
            yield self.state(i)

    def series(self, fn: Callable[[SystemState], float], name: str) -> ObservableSeries:
        return ObservableSeries(name, self.taus, np.array([fn(s) for s in self]))

    def table(self) -> np.ndarray:
        rows = []
        for s in self:
            rows.append((s.tau, s.x, s.p, inversion(s), purity(s), entropy(s), energy_W(s, self.params), norm2(s)))
        return np.array(rows, dtype=np.float64).reshape(-1, len(TRAJECTORY_COLUMNS))

    def to_csv(self, path) -> Path:
        path = Path(path)
        lines = [",".join(TRAJECTORY_COLUMNS)]
        for row in self.table().tolist():
            lines.append(",".join(repr(v) for v in row))
        path.write_text("\n".join(lines) + "\n")
        return path


def _energy_scale(state: SystemState, params: ModelParams) -> float:
    return (
        0.5 * params.kappa * state.p ** 2
        + 0.5 * abs(params.delta) * norm2(state)
        + 2.0 * abs(interaction_sum(state))
        + 1e-300
    )


class _Monitor:
    def __init__(self, state, params, threshold):
        self.params = params
        self.threshold = threshold
        self.n0 = norm2(state)
        self.w0 = energy_W(state, params)
        self.wscale = _energy_scale(state, params)

    def check(self, state: SystemState, steps: int):
        try:
            dn = abs(norm2(state) - self.n0) / max(self.n0, 1e-300)
            dw = abs(energy_W(state, self.params) - self.w0) / self.wscale
        except OverflowError:
            dn = dw = math.inf
        if dn > self.threshold or dw > self.threshold:
            raise ConservationAlarm(dn, dw, steps, state, self.threshold)


def _fixed_advance(y, params, h, nsteps, tau, steps_before):
    y1, done = _kernels.rk4_advance(y, params.kappa, params.delta, h, nsteps)
    if done < nsteps:
        raise IntegrationError(
            f"non-finite state after {steps_before + done} steps", SystemState.from_vector(y1, tau + done * h),
            steps_before + done,
        )
    return y1


def step(state: SystemState, params: ModelParams, dt: float) -> SystemState:
    """One classical RK4 step of size ``dt`` (negative ``dt`` steps backwards)."""
    if dt == 0 or not math.isfinite(dt):
        raise ValueError(f"dt must be finite and nonzero, got {dt}")
    validate(state, params, norm_tol=1e-6)
    y = _fixed_advance(state.as_vector(), params, dt, 1, state.tau, 0)
    return SystemState.from_vector(y, state.tau + dt)


def _sample_plan(span: float, sample_every: float) -> np.ndarray:
    """Sample offsets 0, s, 2s, ..., span (magnitudes)."""
    n_full = int(math.floor(span / sample_every * (1 + 1e-12)))
    offs = np.arange(n_full + 1) * sample_every
    if span - offs[-1] > 1e-9 * max(1.0, span):
        offs = np.append(offs, span)
    else:
        offs[-1] = span if n_full > 0 else offs[-1]
    return offs


class _Advancer:
    """Moves a flat vector forward by an arbitrary interval with the chosen scheme."""

    def __init__(self, params: ModelParams, opts: IntegratorOptions):
        self.params = params
        self.opts = opts
        self.steps = 0
        self.h_adapt = opts.dt

    def __call__(self, y, interval, tau):
        # interval is signed
        o = self.opts
        if interval == 0:
            return y
        if o.mode == "fixed":
            n = max(1, int(math.ceil(abs(interval) / o.dt * (1 - 1e-12))))
            y1 = _fixed_advance(y, self.params, interval / n, n, tau, self.steps)
            self.steps += n
            return y1
        y1, h, acc, rej, status = _kernels.dp45_advance(
            y, self.params.kappa, self.params.delta, interval, self.h_adapt, o.rel_tol, o.abs_tol, 1e3
        )
        self.steps += acc
        if status != 0:
            raise IntegrationError(
                f"adaptive step failed near tau={tau:.6g}", SystemState.from_vector(y1, tau), self.steps
            )
        self.h_adapt = h
        return y1


def integrate(
    state: SystemState,
    params: ModelParams,
    opts: IntegratorOptions,
    tau_end: float,
    *observers: Callable[[SystemState], None],
) -> Trajectory:
    """Propagate ``state`` to ``tau_end`` (forwards or backwards) and sample it.

    Observers receive every sampled ``SystemState``, the initial one included.
    Raises ``ConservationAlarm`` as soon as norm or energy drift exceeds the
    configured threshold.
    """
    validate(state, params, norm_tol=1e-6)
    span = float(tau_end) - state.tau
    if span == 0:
        raise ValueError("tau_end equals the initial time")
    sign = 1.0 if span > 0 else -1.0
    offs = _sample_plan(abs(span), opts.sample_every)
    monitor = _Monitor(state, params, opts.conservation_alarm)
    adv = _Advancer(params, opts)

    taus = state.tau + sign * offs
    vectors = np.empty((offs.size, state.as_vector().size)) if opts.store_states else None
    y = state.as_vector().copy()
    cur = state
    for i in range(offs.size):
        if i > 0:
            y = adv(y, sign * (offs[i] - offs[i - 1]), taus[i - 1])
            cur = SystemState.from_vector(y, taus[i])
            monitor.check(cur, adv.steps)
        if vectors is not None:
            vectors[i] = y
        for obs in observers:
            obs(cur)
    return Trajectory(params, opts, taus, vectors, cur, adv.steps)


def _polish(advance, y_prev, tau_prev, h, fn):
    """Locate the zero of ``fn`` inside one step of size ``h`` from ``y_prev``."""

    def g(s):
        return fn(SystemState.from_vector(advance(y_prev, s), tau_prev + s))

    g0, g1 = g(0.0), g(h)
    if g1 == 0.0:
        s = h
    elif g0 == 0.0:
        s = 0.0
    else:
        lo, hi = (0.0, h) if h > 0 else (h, 0.0)
        s = brentq(g, lo, hi, xtol=EVENT_XTOL, rtol=4 * np.finfo(float).eps, maxiter=200)
    st = SystemState.from_vector(advance(y_prev, s), tau_prev + s)
    return st, fn(st)


def _direction_ok(ev, g0, g1) -> bool:
    d = getattr(ev, "direction", 0)
    if d > 0:
        return g0 < g1
    if d < 0:
        return g0 > g1
    return True


def integrate_until(
    state: SystemState,
    params: ModelParams,
    opts: IntegratorOptions,
    event_fn,
    tau_max: float,
) -> tuple[Event | Timeout, Trajectory]:
    """Integrate forward until a terminal event fires or ``tau_max`` elapses.

    ``event_fn`` is a callable of the state or a sequence of them.  A callable
    may carry ``terminal``/``direction``/``kind`` attributes; non-terminal
    events are recorded in ``Trajectory.events`` and integration continues.
    Crossing times are polished to ~1e-11 in tau.  Reaching ``tau_max`` returns
    a ``Timeout`` rather than raising.
    """
    validate(state, params, norm_tol=1e-6)
    if not tau_max > 0:
        raise ValueError(f"tau_max must be > 0, got {tau_max}")
    events = list(event_fn) if isinstance(event_fn, (list, tuple)) else [event_fn]
    if not events:
        raise ValueError("need at least one event function")
    fast = opts.mode == "fixed" and all(isinstance(e, CoordinateEvent) for e in events)
    if fast:
        return _until_compiled(state, params, opts, events, tau_max)
    return _until_python(state, params, opts, events, tau_max)


def _finish(params, opts, taus, vecs, final, steps, recorded, outcome):
    vectors = np.array(vecs) if opts.store_states else None
    if not opts.store_states:
        taus = taus[-1:]
    traj = Trajectory(params, opts, np.array(taus), vectors, final, steps, recorded)
    return outcome, traj


def _until_compiled(state, params, opts, events, tau_max):
    k_stride = max(1, int(round(opts.sample_every / opts.dt)))
    h = opts.dt
    n_total = int(math.ceil(tau_max / h - 1e-9))
    idx = np.array([e.index for e in events], dtype=np.int64)
    levels = np.array([e.level for e in events], dtype=np.float64)
    monitor = _Monitor(state, params, opts.conservation_alarm)

    def advance(y, s):
        return _fixed_advance(y, params, s, 1, 0.0, 0) if s != 0 else y

    y = state.as_vector().copy()
    tau0 = state.tau
    done = 0
    taus, vecs, recorded = [tau0], [y.copy()], []
    while done < n_total:
        chunk = min(k_stride - done % k_stride, n_total - done)
        y_before, y_after, n_done, k_hit, status = _kernels.rk4_until(
            y, params.kappa, params.delta, h, chunk, idx, levels
        )
        if status < 0:
            raise IntegrationError(
                "non-finite state", SystemState.from_vector(y_before, tau0 + (done + n_done) * h), done + n_done
            )
        if status == 0:
            done += n_done
            y = y_before
        else:
            tau_prev = tau0 + (done + n_done - 1) * h
            done += n_done
            y = y_after
            # several events may straddle the same step; take the earliest valid one
            hits = []
            for k, ev in enumerate(events):
                g0 = y_before[ev.index] - ev.level
                g1 = y_after[ev.index] - ev.level
                crossed = (g0 < 0.0 <= g1) or (g0 > 0.0 >= g1)
                if crossed and _direction_ok(ev, g0, g1):
                    st, res = _polish(advance, y_before, tau_prev, h, ev)
                    hits.append((st.tau, k, st, res))
            hits.sort(key=lambda t: (t[0], t[1]))
            for tau_e, k, st, res in hits:
                ev = events[k]
                e = Event(ev.kind, tau_e, st, float(res), ev.name)
                recorded.append(e)
                if ev.terminal:
                    monitor.check(st, done)
                    taus.append(tau_e)
                    if opts.store_states:
                        vecs.append(st.as_vector().copy())
                    return _finish(params, opts, taus, vecs, st, done, recorded, e)
        if done % k_stride == 0 or done == n_total:
            cur = SystemState.from_vector(y, tau0 + done * h)
            monitor.check(cur, done)
            taus.append(cur.tau)
            if opts.store_states:
                vecs.append(y.copy())
    final = SystemState.from_vector(y, tau0 + done * h)
    return _finish(params, opts, taus, vecs, final, done, recorded, Timeout(tau_max, final))


def _until_python(state, params, opts, events, tau_max):
    adv = _Advancer(params, opts)
    polisher = _Advancer(params, opts)

    def advance(y, s):
        return polisher(y, s, 0.0) if s != 0 else y

    k_stride = max(1, int(round(opts.sample_every / opts.dt)))
    h = opts.dt
    n_total = int(math.ceil(tau_max / h - 1e-9))
    monitor = _Monitor(state, params, opts.conservation_alarm)
    y = state.as_vector().copy()
    tau0 = state.tau
    cur = state
    g_prev = [float(ev(cur)) for ev in events]
    taus, vecs, recorded = [tau0], [y.copy()], []
    for i in range(1, n_total + 1):
        y_prev, tau_prev = y, cur.tau
        y = advance(y, h)
        cur = SystemState.from_vector(y, tau0 + i * h)
        g_now = [float(ev(cur)) for ev in events]
        hits = []
        for k, ev in enumerate(events):
            g0, g1 = g_prev[k], g_now[k]
            if ((g0 < 0.0 <= g1) or (g0 > 0.0 >= g1)) and _direction_ok(ev, g0, g1):
                st, res = _polish(advance, y_prev, tau_prev, h, ev)
                hits.append((st.tau, k, st, res))
        g_prev = g_now
        hits.sort(key=lambda t: (t[0], t[1]))
        for tau_e, k, st, res in hits:
            ev = events[k]
            e = Event(getattr(ev, "kind", "custom"), tau_e, st, float(res), getattr(ev, "name", ""))
            recorded.append(e)
            if getattr(ev, "terminal", True):
                monitor.check(st, adv.steps)
                taus.append(tau_e)
                if opts.store_states:
                    vecs.append(st.as_vector().copy())
                return _finish(params, opts, taus, vecs, st, adv.steps, recorded, e)
        if i % k_stride == 0 or i == n_total:
            monitor.check(cur, adv.steps)
            taus.append(cur.tau)
            if opts.store_states:
                vecs.append(y.copy())
    return _finish(params, opts, taus, vecs, cur, adv.steps, recorded, Timeout(tau_max, cur))

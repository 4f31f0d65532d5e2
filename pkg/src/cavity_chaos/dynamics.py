"""Hamilton-Schroedinger equations of motion, their first integrals and the
closed-form solution at zero detuning."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .state import ModelParams, SystemState

__all__ = [
    "Derivative",
    "rhs",
    "rhs_vector",
    "integrals_Rn",
    "energy_W",
    "interaction_sum",
    "zero_detuning_phase",
    "analytic_zero_detuning",
]


@dataclass(frozen=True)
class Derivative:
    dx: float
    dp: float
    dalpha: np.ndarray
    dbeta: np.ndarray
    drho: np.ndarray
    deta: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.dx, self.dp], self.dalpha, self.dbeta, self.drho, self.deta])


def _check(state: SystemState, params: ModelParams):
    if state.truncation != params.truncation:
        raise ValueError(
            f"state has truncation N={state.truncation} but params.truncation={params.truncation}"
        )


def rhs_vector(y: np.ndarray, params: ModelParams) -> np.ndarray:
    out = np.empty_like(y, dtype=np.float64)
    _kernels.rhs_into(np.ascontiguousarray(y, dtype=np.float64), params.kappa, params.delta, out)
    return out


def rhs(state: SystemState, params: ModelParams) -> Derivative:
    """Time derivative of every state coordinate.

    Manifold n couples (alpha_n, beta_n) with (rho_{n+1}, eta_{n+1}); couplings
    that would reach Fock index N+1 are dropped, and b_0 rotates freely.
    """
    _check(state, params)
    d = rhs_vector(state.as_vector(), params)
    m = state.truncation + 1
    return Derivative(
        float(d[0]), float(d[1]), d[2:2 + m], d[2 + m:2 + 2 * m], d[2 + 2 * m:2 + 3 * m], d[2 + 3 * m:]
    )


def interaction_sum(state: SystemState) -> float:
    """sum_n sqrt(n+1) (alpha_n rho_{n+1} + beta_n eta_{n+1}) = sum_n sqrt(n+1) Re(a_n b_{n+1}^*)."""
    g = np.sqrt(np.arange(1, state.truncation + 1))
    return float(np.dot(g, state.alpha[:-1] * state.rho[1:] + state.beta[:-1] * state.eta[1:]))


def integrals_Rn(state: SystemState) -> np.ndarray:
    """R_n = |a_n|^2 + |b_{n+1}|^2 for n = 0..N-1."""
    return state.alpha[:-1] ** 2 + state.beta[:-1] ** 2 + state.rho[1:] ** 2 + state.eta[1:] ** 2


def energy_W(state: SystemState, params: ModelParams) -> float:
    """Conserved energy of the coupled system.

    The detuning term is -delta/2 times the full inversion, so it also covers
    the free-rotating a_N and b_0 amplitudes (each separately conserved).
    """
    pa = float(np.dot(state.alpha, state.alpha) + np.dot(state.beta, state.beta))
    pb = float(np.dot(state.rho, state.rho) + np.dot(state.eta, state.eta))
    return (
        0.5 * params.kappa * state.p ** 2
        - 0.5 * params.delta * (pa - pb)
        - 2.0 * math.cos(state.x) * interaction_sum(state)
    )


def zero_detuning_phase(x0: float, kappa: float, p0: float, tau) -> np.ndarray | float:
    """Accumulated coupling phase int_0^tau cos(x0 + kappa p0 s) ds."""
    v = kappa * p0
    return (np.sin(x0 + v * np.asarray(tau)) - math.sin(x0)) / v


def analytic_zero_detuning(initial: SystemState, params: ModelParams, tau: float) -> SystemState:
    """Exact state at time ``initial.tau + tau`` for delta = 0.

    Valid when only one atomic level family is populated (all a_n, or all
    b_{n>=1}); then the force vanishes, the atom flies at constant speed and
    every manifold rotates by the angle sqrt(n+1) * Theta(tau).
    """
    if params.delta != 0:
        raise ValueError(f"closed form requires delta == 0, got {params.delta}")
    _check(initial, params)
    if initial.p == 0:
        raise ValueError("closed form requires p0 != 0")
    a0 = initial.a
    b0 = initial.b
    upper = np.any(a0 != 0)
    lower = np.any(b0[1:] != 0)
    if upper and lower:
        raise ValueError("closed form requires a single populated atomic level family")
    N = initial.truncation
    theta = float(zero_detuning_phase(initial.x, params.kappa, initial.p, tau))
    w = np.sqrt(np.arange(1, N + 1)) * theta
    cos, sin = np.cos(w), np.sin(w)
    a = a0.copy()
    b = b0.copy()
    # (a_n, b_{n+1}) -> (a cos + i b sin, b cos + i a sin); a_N and b_0 are frozen at delta = 0
    a[:-1] = a0[:-1] * cos + 1j * b0[1:] * sin
    b[1:] = b0[1:] * cos + 1j * a0[:-1] * sin
    return SystemState.from_amplitudes(
        initial.tau + tau, initial.x + params.kappa * initial.p * tau, initial.p, a, b
    )

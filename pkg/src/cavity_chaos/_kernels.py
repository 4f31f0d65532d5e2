"""Compiled inner loops.

Everything here works on the flat vector ``[x, p, alpha, beta, rho, eta]``
(each amplitude block has length M = N + 1).  Manifold n couples a_n with
b_{n+1}; b_0 and a_N only rotate with the detuning.
"""

import math

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def rhs_into(y, kappa, delta, out):
    M = (y.size - 2) // 4
    N = M - 1
    al = y[2:2 + M]
    be = y[2 + M:2 + 2 * M]
    rh = y[2 + 2 * M:2 + 3 * M]
    et = y[2 + 3 * M:2 + 4 * M]
    dal = out[2:2 + M]
    dbe = out[2 + M:2 + 2 * M]
    drh = out[2 + 2 * M:2 + 3 * M]
    det = out[2 + 3 * M:2 + 4 * M]
    x = y[0]
    c = math.cos(x)
    h = 0.5 * delta
    force = 0.0
    for n in range(N):
        # pair (a_n, b_{n+1})
        g = math.sqrt(n + 1.0)
        force += g * (al[n] * rh[n + 1] + be[n] * et[n + 1])
        gc = g * c
        dal[n] = -h * be[n] - gc * et[n + 1]
        dbe[n] = h * al[n] + gc * rh[n + 1]
        drh[n + 1] = h * et[n + 1] - gc * be[n]
        det[n + 1] = -h * rh[n + 1] + gc * al[n]
    # truncation edge a_N and decoupled b_0: free detuning rotation
    dal[N] = -h * be[N]
    dbe[N] = h * al[N]
    drh[0] = h * et[0]
    det[0] = -h * rh[0]
    out[0] = kappa * y[1]
    out[1] = -2.0 * math.sin(x) * force


@njit(**_JIT)
def _all_finite(y):
    for j in range(y.size):
        if not math.isfinite(y[j]):
            return False
    return True


@njit(**_JIT)
def rk4_step_into(y, kappa, delta, dt, out, k1, k2, k3, k4, tmp):
    n = y.size
    rhs_into(y, kappa, delta, k1)
    for j in range(n):
        tmp[j] = y[j] + 0.5 * dt * k1[j]
    rhs_into(tmp, kappa, delta, k2)
    for j in range(n):
        tmp[j] = y[j] + 0.5 * dt * k2[j]
    rhs_into(tmp, kappa, delta, k3)
    for j in range(n):
        tmp[j] = y[j] + dt * k3[j]
    rhs_into(tmp, kappa, delta, k4)
    s = dt / 6.0
    for j in range(n):
        out[j] = y[j] + s * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])


@njit(**_JIT)
def rk4_advance(y0, kappa, delta, dt, nsteps):
    """Take ``nsteps`` RK4 steps.  Returns (y, steps_done); stops early on non-finite."""
    n = y0.size
    y = y0.copy()
    nxt = np.empty(n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    for i in range(nsteps):
        rk4_step_into(y, kappa, delta, dt, nxt, k1, k2, k3, k4, tmp)
        if not _all_finite(nxt):
            return y, i
        y[:] = nxt
    return y, nsteps


@njit(**_JIT)
def rk4_until(y0, kappa, delta, dt, nmax, idx, levels):
    """Step until some ``y[idx[k]] - levels[k]`` changes sign.

    Returns (y_before, y_after, steps_done, k_hit, status) with status 1 for a
    crossing, 0 for exhaustion of ``nmax`` steps and -1 for a non-finite state.
    A crossing means strictly opposite signs or landing exactly on zero.
    """
    n = y0.size
    y = y0.copy()
    nxt = np.empty(n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    ne = idx.size
    for i in range(nmax):
        rk4_step_into(y, kappa, delta, dt, nxt, k1, k2, k3, k4, tmp)
        if not _all_finite(nxt):
            return y, y, i, -1, -1
        for k in range(ne):
            g0 = y[idx[k]] - levels[k]
            g1 = nxt[idx[k]] - levels[k]
            if (g0 < 0.0 and g1 >= 0.0) or (g0 > 0.0 and g1 <= 0.0):
                return y, nxt, i + 1, k, 1
        y[:] = nxt
    return y, y, nmax, -1, 0


# Dormand-Prince 5(4) tableau
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
_A61, _A62, _A63, _A64, _A65 = 9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0
_B1, _B3, _B4, _B5, _B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71.0 / 57600.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
)


@njit(**_JIT)
def dp45_advance(y0, kappa, delta, span, h0, rtol, atol, hmax):
    """Adaptive Dormand-Prince from 0 to ``span`` (either sign).

    Returns (y, h_next, accepted, rejected, status); status 0 ok, -1 non-finite
    or step-size underflow.
    """
    n = y0.size
    y = y0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    k7 = np.empty(n)
    tmp = np.empty(n)
    ynew = np.empty(n)
    sgn = 1.0 if span >= 0 else -1.0
    total = abs(span)
    t = 0.0
    h = min(abs(h0), hmax)
    acc = 0
    rej = 0
    h_keep = h
    rhs_into(y, kappa, delta, k1)
    while t < total:
        if total - t <= h * (1.0 + 1e-12):
            h_keep = h
            h = total - t
            last = True
        else:
            last = False
        hs = sgn * h
        for j in range(n):
            tmp[j] = y[j] + hs * _A21 * k1[j]
        rhs_into(tmp, kappa, delta, k2)
        for j in range(n):
            tmp[j] = y[j] + hs * (_A31 * k1[j] + _A32 * k2[j])
        rhs_into(tmp, kappa, delta, k3)
        for j in range(n):
            tmp[j] = y[j] + hs * (_A41 * k1[j] + _A42 * k2[j] + _A43 * k3[j])
        rhs_into(tmp, kappa, delta, k4)
        for j in range(n):
            tmp[j] = y[j] + hs * (_A51 * k1[j] + _A52 * k2[j] + _A53 * k3[j] + _A54 * k4[j])
        rhs_into(tmp, kappa, delta, k5)
        for j in range(n):
            tmp[j] = y[j] + hs * (_A61 * k1[j] + _A62 * k2[j] + _A63 * k3[j] + _A64 * k4[j] + _A65 * k5[j])
        rhs_into(tmp, kappa, delta, k6)
        for j in range(n):
            ynew[j] = y[j] + hs * (_B1 * k1[j] + _B3 * k3[j] + _B4 * k4[j] + _B5 * k5[j] + _B6 * k6[j])
        rhs_into(ynew, kappa, delta, k7)
        err = 0.0
        for j in range(n):
            e = hs * (_E1 * k1[j] + _E3 * k3[j] + _E4 * k4[j] + _E5 * k5[j] + _E6 * k6[j] + _E7 * k7[j])
            sc = atol + rtol * max(abs(y[j]), abs(ynew[j]))
            err += (e / sc) ** 2
        err = math.sqrt(err / n)
        if not math.isfinite(err):
            return y, h, acc, rej, -1
        if err <= 1.0:
            t = total if last else t + h
            y[:] = ynew
            k1[:] = k7
            acc += 1
            fac = 0.9 * err ** -0.2 if err > 0 else 5.0
            h = min(hmax, h * min(5.0, max(0.2, fac)))
            if last:
                # the clipped final step says little about the natural step size
                h = max(h, h_keep)
        else:
            rej += 1
            h = h * max(0.2, 0.9 * err ** -0.2)
            if h < 1e-14 * max(1.0, total):
                return y, h, acc, rej, -1
    return y, h, acc, rej, 0


@njit(**_JIT)
def benettin(y0, w0, kappa, delta, dt, steps_per_renorm, n_skip, n_keep, d0, mask):
    """Two-trajectory Lyapunov scheme.

    ``w0`` is the companion, already offset from ``y0`` by a separation d0 in
    the masked metric.  Distances use only coordinates where ``mask`` is
    nonzero; the companion is pulled back along the full difference vector.
    Returns the ln-stretch after each renormalization (``n_skip`` transient
    ones first), the final reference state and a status flag.
    """
    n = y0.size
    y = y0.copy()
    w = w0.copy()
    out = np.empty(n_skip + n_keep)
    nxt = np.empty(n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    for r in range(n_skip + n_keep):
        for _ in range(steps_per_renorm):
            rk4_step_into(y, kappa, delta, dt, nxt, k1, k2, k3, k4, tmp)
            y[:] = nxt
            rk4_step_into(w, kappa, delta, dt, nxt, k1, k2, k3, k4, tmp)
            w[:] = nxt
        d = 0.0
        for j in range(n):
            if mask[j] != 0:
                d += (w[j] - y[j]) ** 2
        d = math.sqrt(d)
        if not (math.isfinite(d) and d > 0.0):
            return out[:r], y, -1
        out[r] = math.log(d / d0)
        s = d0 / d
        for j in range(n):
            w[j] = y[j] + (w[j] - y[j]) * s
    return out, y, 0

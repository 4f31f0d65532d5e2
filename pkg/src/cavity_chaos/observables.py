"""Quantum diagnostics of the atom-field state."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .state import SystemState

__all__ = [
    "ReducedDensity",
    "ObservableSeries",
    "inversion",
    "reduced_density",
    "purity",
    "purity_trace",
    "entropy",
    "entropy_from_purity",
    "overlap",
    "fidelity",
    "series_variance",
]

EIG_FLOOR = 1e-15


@dataclass(frozen=True)
class ReducedDensity:
    """Atomic density matrix in the {|2>, |1>} basis, [[p22, c], [c*, p11]]."""

    p22: float
    p11: float
    coherence: complex

    @property
    def trace(self) -> float:
        return self.p22 + self.p11

    def matrix(self, normalized: bool = False) -> np.ndarray:
        m = np.array([[self.p22, self.coherence], [np.conj(self.coherence), self.p11]], dtype=complex)
        return m / self.trace if normalized else m

    def eigenvalues(self, normalized: bool = True) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix(normalized))

    def purity(self, normalized: bool = True) -> float:
        raw = self.p22 ** 2 + self.p11 ** 2 + 2.0 * abs(self.coherence) ** 2
        return raw / self.trace ** 2 if normalized else raw


def inversion(state: SystemState) -> float:
    """z = sum |a_n|^2 - sum |b_n|^2 (b_0 included)."""
    pa = np.dot(state.alpha, state.alpha) + np.dot(state.beta, state.beta)
    pb = np.dot(state.rho, state.rho) + np.dot(state.eta, state.eta)
    return float(pa - pb)


def reduced_density(state: SystemState) -> ReducedDensity:
    """Trace over the field: rho_a = sum_n <n|Psi><Psi|n>."""
    al, be, rh, et = state.alpha, state.beta, state.rho, state.eta
    p22 = float(np.dot(al, al) + np.dot(be, be))
    p11 = float(np.dot(rh, rh) + np.dot(et, et))
    # sum_n a_n b_n^*
    re = float(np.dot(al, rh) + np.dot(be, et))
    im = float(np.dot(be, rh) - np.dot(al, et))
    return ReducedDensity(p22, p11, complex(re, im))


def purity(state: SystemState, normalized: bool = True) -> float:
    """Purity of the atomic state from amplitude sums.

    P = (sum|a|^2)^2 + (sum|b|^2)^2 + 2 (sum(alpha rho + beta eta))^2
        + 2 (sum(beta rho - alpha eta))^2

    With ``normalized`` the result is divided by the squared trace, so a state
    that lost a truncation tail still reads P = 1 when it is a product state.
    """
    al, be, rh, et = state.alpha, state.beta, state.rho, state.eta
    s2 = np.dot(al, al) + np.dot(be, be)
    s1 = np.dot(rh, rh) + np.dot(et, et)
    re = np.dot(al, rh) + np.dot(be, et)
    im = np.dot(be, rh) - np.dot(al, et)
    p = s2 * s2 + s1 * s1 + 2.0 * re * re + 2.0 * im * im
    if normalized:
        p = p / (s1 + s2) ** 2
    return float(p)


def purity_trace(state: SystemState, normalized: bool = True) -> float:
    """Tr(rho_a^2) by explicit matrix product."""
    m = reduced_density(state).matrix(normalized)
    return float(np.trace(m @ m).real)


def entropy(state: SystemState) -> float:
    """von Neumann entropy -Tr(rho ln rho) of the trace-normalized atomic state."""
    lam = reduced_density(state).eigenvalues(normalized=True)
    lam = lam[lam > EIG_FLOOR]
    return float(-np.sum(lam * np.log(lam)))


def entropy_from_purity(P: float) -> float:
    """Entropy of a 2x2 density matrix with purity P."""
    r = math.sqrt(max(0.0, 2.0 * P - 1.0))
    s = 0.0
    for lam in ((1 + r) / 2, (1 - r) / 2):
        if lam > EIG_FLOOR:
            s -= lam * math.log(lam)
    return s


def overlap(state1: SystemState, state2: SystemState) -> complex:
    """<Psi_1|Psi_2> over the quantum amplitudes only."""
    if state1.truncation != state2.truncation:
        raise ValueError(f"truncation mismatch: {state1.truncation} vs {state2.truncation}")
    a1, b1, r1, e1 = state1.alpha, state1.beta, state1.rho, state1.eta
    a2, b2, r2, e2 = state2.alpha, state2.beta, state2.rho, state2.eta
    re = np.dot(a1, a2) + np.dot(b1, b2) + np.dot(r1, r2) + np.dot(e1, e2)
    im = np.dot(a1, b2) - np.dot(b1, a2) + np.dot(r1, e2) - np.dot(e1, r2)
    return complex(re, im)


def fidelity(state1: SystemState, state2: SystemState) -> float:
    """f = |<Psi_1|Psi_2>|^2; the classical (x, p) pair does not enter."""
    o = overlap(state1, state2)
    return o.real ** 2 + o.imag ** 2


@dataclass(frozen=True)
class ObservableSeries:
    name: str
    taus: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if taus.shape != values.shape or taus.ndim != 1:
            raise ValueError("taus and values must be 1-d arrays of equal length")
        if taus.size > 1 and np.any(np.diff(taus) <= 0):
            raise ValueError("taus must be strictly increasing")
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.taus.size

    def window(self, tau_a: float, tau_b: float) -> "ObservableSeries":
        m = (self.taus >= tau_a) & (self.taus <= tau_b)
        return ObservableSeries(self.name, self.taus[m], self.values[m])

    def map(self, fn, name: str | None = None) -> "ObservableSeries":
        return ObservableSeries(name or self.name, self.taus, fn(self.values))

    def to_csv(self, path, metadata: dict | None = None) -> Path:
        """Write ``tau,value`` rows plus a ``<path>.meta.json`` sidecar."""
        path = Path(path)
        lines = ["tau,value"] + [f"{t!r},{v!r}" for t, v in zip(self.taus.tolist(), self.values.tolist())]
        path.write_text("\n".join(lines) + "\n")
        meta = {"observable": self.name, "samples": len(self)}
        meta.update(metadata or {})
        path.with_suffix(path.suffix + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        return path

    @classmethod
    def from_csv(cls, path, name: str | None = None) -> "ObservableSeries":
        path = Path(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if name is None:
            meta = path.with_suffix(path.suffix + ".meta.json")
            name = json.loads(meta.read_text())["observable"] if meta.exists() else path.stem
        return cls(name, data[:, 0], data[:, 1])


def series_variance(series: ObservableSeries, window: tuple[float, float] | None = (50.0, 500.0)) -> float:
    """Root-mean-square deviation sqrt(<v^2> - <v>^2) of the samples in ``window``."""
    s = series.window(*window) if window is not None else series
    if len(s) < 2:
        raise ValueError(f"window {window} holds {len(s)} samples, need at least 2")
    # two-pass form avoids the cancellation in <v^2> - <v>^2
    return float(np.std(s.values))

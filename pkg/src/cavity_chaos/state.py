"""State representation for a two-level atom in a single-mode standing wave.

The quantum part is stored as four real arrays indexed by the photon number n:

    a_n = alpha_n + i beta_n    amplitude of |2, n>  (upper level)
    b_n = rho_n   + i eta_n     amplitude of |1, n>  (lower level)

The centre of mass is classical: position ``x`` in units of 1/k_f and momentum
``p`` in units of hbar k_f.  Time ``tau`` is measured in units of 1/Omega_0.

Flat vector layout used by the integrators::

    y = [x, p, alpha[0..N], beta[0..N], rho[0..N], eta[0..N]]
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

__all__ = [
    "ModelParams",
    "AtomPrep",
    "SystemState",
    "TruncationWarning",
    "coherent_poisson_weights",
    "fock_weights",
    "init_state",
    "norm2",
    "validate",
    "state_dim",
]

STATE_SCHEMA = "cavity_chaos.state/1"
_BINARY_MAGIC = b"CQS1"

TAIL_WARN = 1e-6


class TruncationWarning(UserWarning):
    """Fock truncation leaves a non-negligible tail of the photon distribution."""


@dataclass(frozen=True)
class ModelParams:
    """Dimensionless control parameters.

    kappa is the normalized recoil frequency, delta the atom-field detuning in
    units of the coupling constant, truncation the highest kept Fock index N.
    """

    kappa: float = 0.001
    delta: float = 0.4
    truncation: int = 100

    def __post_init__(self):
        if not (math.isfinite(self.kappa) and self.kappa > 0):
            raise ValueError(f"kappa must be > 0, got {self.kappa}")
        if not math.isfinite(self.delta):
            raise ValueError(f"delta must be finite, got {self.delta}")
        if int(self.truncation) != self.truncation or self.truncation < 1:
            raise ValueError(f"truncation must be an integer >= 1, got {self.truncation}")
        object.__setattr__(self, "truncation", int(self.truncation))
        if self.kappa >= 0.1:
            warnings.warn(
                f"kappa={self.kappa} is not small; the classical treatment of "
                "the centre of mass assumes kappa << 1",
                stacklevel=3,
            )

    def with_delta(self, delta: float) -> "ModelParams":
        return ModelParams(self.kappa, delta, self.truncation)


@dataclass(frozen=True)
class AtomPrep:
    """Initial atomic superposition sqrt((1+z0)/2)|2> + e^{i phase} sqrt((1-z0)/2)|1>."""

    z0: float = 1.0
    relative_phase: float = 0.0

    def __post_init__(self):
        if not abs(self.z0) <= 1.0:
            raise ValueError(f"|z0| must be <= 1, got {self.z0}")


def state_dim(truncation: int) -> int:
    return 2 + 4 * (truncation + 1)


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SystemState:
    """Immutable snapshot of the atom-field system at time ``tau``."""

    tau: float
    x: float
    p: float
    alpha: np.ndarray
    beta: np.ndarray
    rho: np.ndarray
    eta: np.ndarray
    _vec: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        arrays = [np.asarray(getattr(self, k), dtype=np.float64) for k in ("alpha", "beta", "rho", "eta")]
        n = arrays[0].shape
        if len(n) != 1 or n[0] < 2 or any(a.shape != n for a in arrays):
            raise ValueError("amplitude arrays must be 1-d, of equal length >= 2")
        vec = np.concatenate([[float(self.x), float(self.p)], *arrays])
        vec.setflags(write=False)
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "_vec", vec)
        m = n[0]
        for i, k in enumerate(("alpha", "beta", "rho", "eta")):
            object.__setattr__(self, k, vec[2 + i * m: 2 + (i + 1) * m])

    @property
    def truncation(self) -> int:
        return self.alpha.shape[0] - 1

    @property
    def a(self) -> np.ndarray:
        return self.alpha + 1j * self.beta

    @property
    def b(self) -> np.ndarray:
        return self.rho + 1j * self.eta

    def as_vector(self) -> np.ndarray:
        """Read-only flat view ``[x, p, alpha, beta, rho, eta]``."""
        return self._vec

    @classmethod
    def from_vector(cls, y, tau: float = 0.0) -> "SystemState":
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 1 or (y.size - 2) % 4 or y.size < 10:
            raise ValueError(f"flat state vector has invalid length {y.size}")
        m = (y.size - 2) // 4
        return cls(tau, y[0], y[1], y[2:2 + m], y[2 + m:2 + 2 * m], y[2 + 2 * m:2 + 3 * m], y[2 + 3 * m:])

    @classmethod
    def from_amplitudes(cls, tau, x, p, a, b) -> "SystemState":
        a = np.asarray(a, dtype=complex)
        b = np.asarray(b, dtype=complex)
        return cls(tau, x, p, a.real, a.imag, b.real, b.imag)

    def replace(self, **changes) -> "SystemState":
        kw = {k: getattr(self, k) for k in ("tau", "x", "p", "alpha", "beta", "rho", "eta")}
        kw.update(changes)
        return SystemState(**kw)

    def __eq__(self, other):
        if not isinstance(other, SystemState):
            return NotImplemented
        return self.tau == other.tau and np.array_equal(self._vec, other._vec)

    __hash__ = None

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": STATE_SCHEMA,
            "tau": self.tau,
            "x": self.x,
            "p": self.p,
            "N": self.truncation,
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "rho": self.rho.tolist(),
            "eta": self.eta.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemState":
        if d.get("schema", STATE_SCHEMA) != STATE_SCHEMA:
            raise ValueError(f"unsupported state schema {d.get('schema')!r}")
        st = cls(d["tau"], d["x"], d["p"], d["alpha"], d["beta"], d["rho"], d["eta"])
        if "N" in d and d["N"] != st.truncation:
            raise ValueError(f"N={d['N']} does not match amplitude length {st.truncation + 1}")
        return st

    def to_json(self) -> str:
        # float repr is shortest round-trip, so doubles survive exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SystemState":
        return cls.from_dict(json.loads(text))

    def to_bytes(self) -> bytes:
        """Little-endian binary snapshot: magic, N, tau, then the flat vector."""
        head = _BINARY_MAGIC + struct.pack("<qd", self.truncation, self.tau)
        return head + self._vec.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SystemState":
        if blob[:4] != _BINARY_MAGIC:
            raise ValueError("not a cavity_chaos binary state")
        n, tau = struct.unpack_from("<qd", blob, 4)
        y = np.frombuffer(blob, dtype="<f8", offset=20)
        if y.size != state_dim(n):
            raise ValueError("binary state is truncated or corrupt")
        return cls.from_vector(y.astype(np.float64), tau)


def coherent_poisson_weights(nbar: float, N: int) -> tuple[np.ndarray, float]:
    """Fock amplitudes c_n of a coherent state with mean photon number ``nbar``.

    Returns ``(c, eps)`` where ``c[n] = exp(-nbar/2) nbar^(n/2) / sqrt(n!)`` for
    n = 0..N and ``eps`` is the Poisson tail mass beyond N, i.e. 1 - sum(c**2).
    """
    if not nbar >= 0:
        raise ValueError(f"nbar must be >= 0, got {nbar}")
    if int(N) != N or N < 1:
        raise ValueError(f"truncation must be an integer >= 1, got {N}")
    N = int(N)
    n = np.arange(N + 1)
    if nbar == 0:
        c = (n == 0).astype(np.float64)
        return c, 0.0
    logc = 0.5 * (-nbar + n * math.log(nbar) - special.gammaln(n + 1))
    c = np.exp(logc)
    # survival function stays accurate far below machine epsilon
    eps = float(stats.poisson.sf(N, nbar))
    if eps > TAIL_WARN:
        warnings.warn(
            f"truncation N={N} drops Poisson tail mass {eps:.3g} for nbar={nbar}",
            TruncationWarning,
            stacklevel=2,
        )
    return c, eps


def fock_weights(n_photons: int, N: int) -> tuple[np.ndarray, float]:
    if int(n_photons) != n_photons or not 0 <= n_photons <= N:
        raise ValueError(f"Fock index must be an integer in [0, {N}], got {n_photons}")
    c = np.zeros(int(N) + 1)
    c[int(n_photons)] = 1.0
    return c, 0.0


def init_state(
    x0: float,
    p0: float,
    nbar: float,
    prep: AtomPrep,
    params: ModelParams,
    *,
    field: str = "coherent",
) -> SystemState:
    """Product state (atomic superposition) x (coherent or Fock field) at tau = 0."""
    if not isinstance(prep, AtomPrep):
        prep = AtomPrep(*prep)
    if field == "coherent":
        c, _ = coherent_poisson_weights(nbar, params.truncation)
    elif field == "fock":
        c, _ = fock_weights(nbar, params.truncation)
    else:
        raise ValueError(f"unknown field preparation {field!r}")
    ca = math.sqrt((1.0 + prep.z0) / 2.0)
    cb = math.sqrt((1.0 - prep.z0) / 2.0)
    phi = prep.relative_phase
    zeros = np.zeros_like(c)
    return SystemState(
        0.0,
        x0,
        p0,
        ca * c,
        zeros,
        cb * math.cos(phi) * c,
        cb * math.sin(phi) * c,
    )


def norm2(state: SystemState) -> float:
    """Total probability sum_n |a_n|^2 + |b_n|^2."""
    q = state.as_vector()[2:]
    return float(np.dot(q, q))


def validate(state: SystemState, params: ModelParams | None = None, *, norm_tol: float = 1e-12) -> SystemState:
    """Raise ValueError unless the state is finite, sub-normalized and sized for ``params``."""
    if not np.all(np.isfinite(state.as_vector())) or not math.isfinite(state.tau):
        raise ValueError("state has non-finite entries")
    nrm = norm2(state)
    if nrm > 1.0 + norm_tol:
        raise ValueError(f"state norm {nrm!r} exceeds 1")
    if params is not None and state.truncation != params.truncation:
        raise ValueError(
            f"state truncation {state.truncation} does not match params.truncation {params.truncation}"
        )
    return state

"""Semiclassical cavity QED: a two-level atom walking in a quantized standing wave.

The centre of mass is classical, the internal and field degrees of freedom are
quantum.  The package integrates the coupled equations, measures purity,
entropy and fidelity of the quantum state and the maximal Lyapunov exponent
of the combined motion, and drives the scattering, sensitivity and
fidelity-decay experiments.
"""

from .state import AtomPrep, ModelParams, SystemState, coherent_poisson_weights, init_state, norm2
from .dynamics import analytic_zero_detuning, energy_W, integrals_Rn, rhs
from .integrator import IntegratorOptions, integrate, integrate_until, step
from .observables import entropy, fidelity, inversion, purity, reduced_density, series_variance
from .chaos import LyapunovOptions, fit_decay_rate, fit_separation_rate, max_lyapunov, predictability_horizon

__version__ = "0.1.0"

__all__ = [
    "AtomPrep",
    "ModelParams",
    "SystemState",
    "coherent_poisson_weights",
    "init_state",
    "norm2",
    "rhs",
    "integrals_Rn",
    "energy_W",
    "analytic_zero_detuning",
    "IntegratorOptions",
    "step",
    "integrate",
    "integrate_until",
    "inversion",
    "reduced_density",
    "purity",
    "entropy",
    "fidelity",
    "series_variance",
    "LyapunovOptions",
    "max_lyapunov",
    "predictability_horizon",
    "fit_decay_rate",
    "fit_separation_rate",
]

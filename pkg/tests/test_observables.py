import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavity_chaos.observables import (
    ObservableSeries,
    entropy,
    entropy_from_purity,
    fidelity,
    inversion,
    overlap,
    purity,
    purity_trace,
    reduced_density,
    series_variance,
)
from cavity_chaos.state import AtomPrep, ModelParams, SystemState, init_state

from conftest import random_state

seeds = st.integers(0, 2 ** 32 - 1)


def _explicit_rho(state):
    """Partial trace of |Psi><Psi| built as a (2, N+1) amplitude matrix."""
    psi = np.vstack([state.a, state.b])
    return psi @ psi.conj().T


@settings(max_examples=100, deadline=None)
@given(seed=seeds, N=st.integers(1, 12))
def test_reduced_density_matches_explicit_partial_trace(seed, N):
    s = random_state(np.random.default_rng(seed), N=N)
    assert np.allclose(reduced_density(s).matrix(), _explicit_rho(s), atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(seed=seeds, N=st.integers(1, 12))
def test_purity_identities(seed, N):
    s = random_state(np.random.default_rng(seed), N=N)
    P = purity(s)
    assert abs(P - purity_trace(s)) < 1e-12
    assert 0.5 - 1e-12 <= P <= 1 + 1e-12
    assert abs(entropy(s) - entropy_from_purity(P)) < 1e-10
    assert -1e-15 <= entropy(s) <= math.log(2) + 1e-12


def test_purity_with_imaginary_coherence():
    # a_0 = 1/sqrt2 (real), b_0 = i/sqrt2: a pure product state
    r = 1 / math.sqrt(2)
    s = SystemState(0, 0, 0, [r, 0], [0, 0], [0, 0], [r, 0])
    assert purity(s) == pytest.approx(1.0, abs=1e-15)
    assert entropy(s) == pytest.approx(0.0, abs=1e-12)


def test_product_and_maximally_mixed_cases():
    p = ModelParams(truncation=100)
    for z0 in (1.0, -1.0, 0.0, 0.7):
        s = init_state(0, 25, 10, AtomPrep(z0, 0.4), p)
        assert purity(s) == pytest.approx(1.0, abs=1e-14)
    r = 1 / math.sqrt(2)
    bell = SystemState(0, 0, 0, [r, 0], [0, 0], [0, r], [0, 0])
    assert purity(bell) == pytest.approx(0.5, abs=1e-15)
    assert entropy(bell) == pytest.approx(math.log(2), abs=1e-15)


def test_unnormalized_purity():
    s = random_state(np.random.default_rng(3), N=4, scale=0.9)
    assert purity(s, normalized=False) == pytest.approx(purity(s) * 0.81 ** 2, rel=1e-12)
    assert purity_trace(s, normalized=False) == pytest.approx(purity(s, normalized=False), rel=1e-12)


def test_inversion_range():
    s = random_state(np.random.default_rng(5), N=6)
    assert -1 <= inversion(s) <= 1
    rd = reduced_density(s)
    assert inversion(s) == pytest.approx(rd.p22 - rd.p11)


@settings(max_examples=100, deadline=None)
@given(seed=seeds, N=st.integers(1, 10))
def test_fidelity_symmetry_and_bounds(seed, N):
    rng = np.random.default_rng(seed)
    a, b = random_state(rng, N=N), random_state(rng, N=N)
    assert fidelity(a, b) == pytest.approx(fidelity(b, a), abs=1e-15)
    assert overlap(a, b) == pytest.approx(overlap(b, a).conjugate(), abs=1e-15)
    assert 0 <= fidelity(a, b) <= 1 + 1e-12
    assert fidelity(a, a) == pytest.approx(1.0, abs=1e-12)
    ref = np.vdot(np.concatenate([a.a, a.b]), np.concatenate([b.a, b.b]))
    assert overlap(a, b) == pytest.approx(ref, abs=1e-14)


def test_fidelity_ignores_classical_coordinates():
    s = random_state(np.random.default_rng(9), N=5)
    assert fidelity(s, s.replace(x=3.0, p=-7.0)) == pytest.approx(1.0, abs=1e-14)


def test_fidelity_truncation_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError, match="truncation"):
        fidelity(random_state(rng, N=3), random_state(rng, N=4))


def test_series_window_and_variance():
    t = np.linspace(0, 600, 2401)
    s = ObservableSeries("P", t, np.sin(t))
    w = s.window(50, 500)
    assert w.taus[0] >= 50 and w.taus[-1] <= 500
    assert series_variance(s) == pytest.approx(1 / math.sqrt(2), rel=1e-2)
    const = ObservableSeries("P", t, np.full_like(t, 0.7))
    assert series_variance(const) < 1e-15
    with pytest.raises(ValueError):
        series_variance(s, (1000, 2000))


def test_series_validation_and_csv(tmp_path):
    with pytest.raises(ValueError):
        ObservableSeries("x", [0, 0], [1, 2])
    with pytest.raises(ValueError):
        ObservableSeries("x", [0, 1], [1])
    s = ObservableSeries("S", np.linspace(0, 1, 11), np.random.default_rng(1).random(11))
    path = s.to_csv(tmp_path / "s.csv", {"delta": 0.4})
    back = ObservableSeries.from_csv(path)
    assert back.name == "S"
    assert np.array_equal(back.values, s.values) and np.array_equal(back.taus, s.taus)
    assert np.array_equal(s.map(np.log, "lnS").values, np.log(s.values))

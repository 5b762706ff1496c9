import math

import numpy as np
import pytest
from scipy.integrate import quad

from resetctl.harmonics import (NonPeriodicError, PsiProfile, StiffModelError,
                                describing_function, find_linear_frequencies, linear_frf,
                                psi_profile, steady_state_harmonics, sweep_harmonics)
from resetctl.linsys import RationalTF, freq_response, make_lag, make_lead
from resetctl.resetsim import ControlSystem, ResetCondition, ResetElement

CLEGG = ControlSystem((ResetElement.clegg(),))


def clegg_h1_by_quadrature(omega):
    # first Fourier coefficient of the analytic steady state, half period at a time
    T = 2 * np.pi / omega
    pieces = [(0.0, T / 2, 1.0), (T / 2, T, -1.0)]
    c = 0j
    for a, b, s in pieces:
        y = lambda t, s=s: (s - np.cos(omega * t)) / omega
        re = quad(lambda t: y(t) * np.cos(omega * t), a, b, epsabs=1e-13)[0]
        im = quad(lambda t: -y(t) * np.sin(omega * t), a, b, epsabs=1e-13)[0]
        c += re + 1j * im
    return (2 / T) * c / (-1j)


@pytest.mark.parametrize("omega", [0.5, 1.0, 2.0])
def test_clegg_df_closed_form(omega):
    closed = (1 + 4j / np.pi) / (1j * omega)
    assert clegg_h1_by_quadrature(omega) == pytest.approx(closed, rel=1e-9)
    h = steady_state_harmonics(CLEGG, omega, n_max=5)
    assert h.first == pytest.approx(closed, rel=1e-4)
    assert abs(h.first) * omega == pytest.approx(1.619, abs=1e-3)
    assert math.degrees(np.angle(h.first)) == pytest.approx(-38.15, abs=0.01)
    # odd harmonics of the sawtooth-like output are present, even ones vanish
    assert abs(h.harmonic(3)) > 0.1 * abs(h.first)
    assert abs(h.harmonic(2)) < 1e-6 * abs(h.first)


@pytest.mark.parametrize("omega", [0.3, 2.0, 15.0])
def test_linear_block_first_harmonic_is_frf(omega):
    sys = ControlSystem((make_lag(2.0), make_lead(1, 10)))
    h = steady_state_harmonics(sys, omega)
    assert h.first == pytest.approx(complex(freq_response(make_lag(2.0), omega)
                                            * freq_response(make_lead(1, 10), omega)), rel=1e-6)
    assert np.max(np.abs(h.h[1:])) < 1e-8


def test_gamma_one_spectrum_equals_bls():
    tf = RationalTF([1, 0.2], [1, 1.5, 0.7])
    el = ResetElement.from_tf(tf, 1.0)
    for w in (0.2, 1.0, 4.0):
        a = steady_state_harmonics(ControlSystem((el,)), w)
        assert a.first == pytest.approx(complex(freq_response(tf, w)), rel=1e-6)
        assert a.higher_sum < 1e-6 * abs(a.first)


@pytest.mark.parametrize("k", [0.5, 2.0])
def test_amplitude_independence(k):
    sys = ControlSystem((ResetElement.fore(1.0, 0.3), make_lead(1, 20)))
    base = steady_state_harmonics(sys, 2.0, amplitude=1.0)
    scaled = steady_state_harmonics(sys, 2.0, amplitude=k)
    np.testing.assert_allclose(scaled.h, base.h, rtol=1e-6, atol=1e-12)


@pytest.mark.parametrize("el", [ResetElement.fore(1.0, 0.0),
                                ResetElement.from_tf(RationalTF([1], [1, 0.4, 0.5]), [0.0, 0.5]),
                                ResetElement.fore(2.0, 0.0, ResetCondition.shaped(make_lag(1.0)))])
def test_even_harmonics_vanish(el):
    h = steady_state_harmonics(ControlSystem((el,)), 1.3)
    assert np.max(np.abs(h.h[1::2])) < 1e-6 * abs(h.first)


def test_near_linear_gamma_approaches_bls():
    el = ResetElement.fore(1.0, 0.99)
    for w in (0.5, 1.0, 5.0):
        h1 = steady_state_harmonics(ControlSystem((el,)), w, n_max=1).first
        bls = complex(freq_response(el.bls_tf(), w))
        assert abs(h1 - bls) < 0.02 * abs(bls)


def test_fore_high_frequency_approaches_clegg_phase():
    h1 = steady_state_harmonics(ControlSystem((ResetElement.fore(1.0),)), 100.0, n_max=1).first
    assert math.degrees(np.angle(h1)) == pytest.approx(-38.15, abs=0.5)


def test_psi_zero_gives_linear_response():
    # F equal to the resetting state's own path makes resets no-ops
    el = ResetElement.fore(1.0, 0.0, ResetCondition.shaped(make_lag(1.0)))
    prof = psi_profile(el, [0.3, 1.0, 3.0])
    assert np.max(np.abs(prof.psi)) < 1e-12
    h = steady_state_harmonics(ControlSystem((el,)), 1.0)
    assert h.higher_sum < 1e-3 * abs(h.first)


def test_sweep_records_failures_and_continues():
    stiff = ControlSystem((ResetElement.fore(1.0), make_lag(1e7)))
    out = sweep_harmonics(stiff, [1.0], n_max=3)
    assert out[0][1] is None and "StiffModelError" in out[0][2]
    with pytest.warns(RuntimeWarning):
        df = describing_function(stiff, [1.0, 2.0])
    assert all(math.isnan(h.real) for _, h in df)


def test_describing_function_grid_validation():
    with pytest.raises(ValueError):
        describing_function(CLEGG, [2.0, 1.0])
    with pytest.raises(ValueError):
        steady_state_harmonics(CLEGG, -1.0)
    with pytest.raises(ValueError):
        steady_state_harmonics(CLEGG, 1.0, amplitude=0.0)


def test_stiff_model_raises():
    with pytest.raises(StiffModelError):
        steady_state_harmonics(ControlSystem((make_lag(1e7),)), 1.0)


def test_non_periodic_detected():
    # slow mode, no shooting and too short a transient: windows disagree
    sys = ControlSystem((ResetElement.fore(1.0), make_lag(0.01)))
    with pytest.raises(NonPeriodicError):
        steady_state_harmonics(sys, 1.0, shooting=False, transient_periods=8)


def test_linear_frf_uses_bls():
    sys = ControlSystem((ResetElement.fore(2.0), make_lead(2, 20)))
    w = np.array([0.5, 5.0])
    np.testing.assert_allclose(linear_frf(sys, w), freq_response(make_lag(2.0), w)
                               * freq_response(make_lead(2, 20), w))


def test_spectrum_accessors():
    h = steady_state_harmonics(CLEGG, 1.0, n_max=3)
    assert h.n_max == 3
    assert h.higher_ratio == pytest.approx(h.higher_sum / abs(h.first))
    doc = h.to_json()
    assert len(doc["re"]) == 3 and doc["omega"] == 1.0


# -- psi -----------------------------------------------------------------------

def test_psi_fore_at_corner():
    prof = psi_profile(ResetElement.fore(3.0), [3.0])
    assert math.degrees(prof.psi[0]) == pytest.approx(-45.0)


def test_psi_lead_filter_adds_lag():
    F = make_lead(3.0, 3e7)
    prof = psi_profile(ResetElement.fore(3.0, 0.0, ResetCondition.shaped(F)), [3.0])
    assert math.degrees(prof.psi[0]) == pytest.approx(-90.0, abs=1e-4)


def test_psi_range_and_validation():
    el = ResetElement.from_tf(RationalTF([1], [1, 0.1, 1]), 0.0,
                              ResetCondition.shaped(make_lead(0.1, 1000)))
    prof = psi_profile(el, np.logspace(-2, 3, 200))
    assert np.all(prof.psi > -np.pi) and np.all(prof.psi <= np.pi)
    with pytest.raises(IndexError):
        psi_profile(el, [1.0], state_index=5)
    with pytest.raises(ValueError):
        psi_profile(el, [0.0])


def test_find_linear_frequencies_synthetic_root():
    w = np.logspace(-1, 1, 21)
    root = 1.7
    f = lambda x: np.radians(30.0) * np.tanh(-np.log(np.atleast_1d(x) / root))
    prof = PsiProfile(w, f(w), f)
    found = find_linear_frequencies(prof)
    assert len(found) == 1
    assert found.points[0] == pytest.approx(root, rel=1e-6)


def test_find_linear_frequencies_interval_and_wrap():
    w = np.logspace(-1, 1, 11)
    assert find_linear_frequencies(PsiProfile(w, np.zeros(11))).intervals == [(w[0], w[-1])]
    wrapped = np.where(w < 1, 3.1, -3.1)
    assert len(find_linear_frequencies(PsiProfile(w, wrapped))) == 0
    assert len(find_linear_frequencies(PsiProfile(w, np.full(11, 0.2)))) == 0

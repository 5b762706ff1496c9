import math

import numpy as np
import pytest

from resetctl.architect import (ARCHITECTURES, BandPass, CgLpDesign, PhaseSlope, TEMPLATES,
                                df_phase_lead, fit_design, fit_shaping_filter, make_cglp,
                                make_cglp_pid, make_crcglp, make_parallel_cr, make_pid,
                                make_shaped_cglp, parallel_cr_branch, system_from_design,
                                template_filter, tune_corner_factor)
from resetctl.harmonics import describing_function, steady_state_harmonics
from resetctl.linsys import (RationalTF, coefficients_close, freq_response, make_lag, make_lead,
                             normalize, series)
from resetctl.resetsim import ControlSystem, ResetElement, linear_equivalent, simulate

GRID = np.logspace(-2, 3, 50)


def lin(sys, w=GRID):
    return freq_response(linear_equivalent(sys), w)


# -- CgLp ----------------------------------------------------------------------

def test_design_validation():
    with pytest.raises(ValueError):
        CgLpDesign(10, 10)
    with pytest.raises(ValueError):
        CgLpDesign(1, 10, gamma=1.5)
    with pytest.raises(ValueError):
        CgLpDesign(1, 10, corner_factor=0)


def test_cglp_structure_and_linear_limit():
    d = CgLpDesign(2.0, 200.0, 1.0)
    sys = make_cglp(d)
    assert len(sys.blocks) == 2 and sys.reset_index == 0
    # lag cancels the lead zero: only the high corner is left
    np.testing.assert_allclose(lin(sys), freq_response(make_lag(200.0), GRID), rtol=1e-8)


def test_cglp_flat_gain_with_phase_lead():
    # untuned (k = 1) the DF gain bulges about 3.1 dB; the tuned corner flattens it
    d = CgLpDesign(100.0, 1e4, 0.0)
    tuned = tune_corner_factor(d)
    grid = np.logspace(2, 4, 9)

    def response(design):
        return np.array([h for _, h in describing_function(make_cglp(design), grid)])

    h1 = response(tuned)
    mags = 20 * np.log10(np.abs(h1))
    untuned = 20 * np.log10(np.abs(response(d)))
    assert tuned.corner_factor < 1.0
    assert np.all(np.angle(h1) > 0)
    assert mags.max() - mags.min() < 3.0
    assert mags.max() - mags.min() < untuned.max() - untuned.min()


def test_shaped_cglp_keeps_linear_equivalent():
    d = CgLpDesign(1.0, 50.0, 0.0)
    a = make_shaped_cglp(d, make_lag(3.0))
    assert a.reset_element.condition.variant == "shaped"
    np.testing.assert_allclose(lin(a), lin(make_cglp(d)), rtol=1e-10)


def test_df_phase_lead_positive_for_cglp():
    lead = df_phase_lead(make_cglp(CgLpDesign(1.0, 100.0)), 10.0)
    assert math.degrees(lead) > 30.0
    assert df_phase_lead(make_cglp(CgLpDesign(1.0, 100.0, 1.0)), 10.0) == pytest.approx(0, abs=1e-6)


# -- CR CgLp -------------------------------------------------------------------

def test_crcglp_linear_equivalent():
    d = CgLpDesign(10.0, 100.0, 1.0)
    wl, wh = 10.0, 1e5
    cr = make_crcglp(d, wl, wh)
    LR = freq_response(make_lead(wl, wh), GRID) * freq_response(make_lag(wl), GRID)
    np.testing.assert_allclose(lin(cr), lin(make_cglp(d)) * LR, rtol=1e-8)
    low = GRID < wh / 10
    assert np.max(np.abs(np.abs(LR[low]) - 1)) < 0.01


def test_crcglp_rejects_bad_corners():
    with pytest.raises(ValueError):
        make_crcglp(CgLpDesign(1, 10), 100.0, 10.0)


def _max_reset_jump(sys, omega, dt):
    tr = simulate(sys, lambda t: np.sin(omega * t), dt, 10 * 2 * np.pi / omega)
    idx = np.nonzero(tr.reset_flags())[0]
    idx = idx[idx > 0]
    return np.max(np.abs(tr.y[idx] - tr.y[idx - 1]))


def test_cr_output_is_continuous():
    d = CgLpDesign(10.0, 100.0, 0.0)
    conv, cr = make_cglp(d), make_crcglp(d, 10.0, 1000.0)
    w = math.sqrt(10.0 * 100.0)
    jc, jr = _max_reset_jump(conv, w, 1e-4), _max_reset_jump(cr, w, 1e-4)
    assert jr / jc < 0.1
    assert _max_reset_jump(cr, w, 2.5e-5) < jr / 3


# -- parallel CR ---------------------------------------------------------------

def test_parallel_cr_worked_case():
    B = RationalTF([1], [1, 1])
    el = ResetElement.from_tf(B, 0.0)
    lpar = parallel_cr_branch(el, make_lead(1, 10))
    want = normalize(RationalTF([0, 0.9], np.polynomial.polynomial.polymul([1, 0.1], [1, 1])))
    assert coefficients_close(lpar, want)


def test_parallel_cr_unit_lead_is_bare_element():
    el = ResetElement.fore(2.0)
    sys = make_parallel_cr(el, RationalTF([1], [1]))
    assert sys.parallel is None and len(sys.blocks) == 1


def test_parallel_cr_linear_identity():
    B = RationalTF([1, 0.5], [2, 3, 1])
    L = make_lead(0.5, 20)
    el = ResetElement.from_tf(B, 1.0)
    sys = make_parallel_cr(el, L, make_lag(1.0))
    np.testing.assert_allclose(lin(sys), freq_response(series(L, B), GRID), rtol=1e-8)
    assert sys.reset_element.condition.variant == "shaped"


def test_builders_linear_limit_matches_advertised():
    d = CgLpDesign(3.0, 300.0, 1.0)
    lead = freq_response(d.lead(), GRID)
    lag = freq_response(make_lag(3.0), GRID)
    np.testing.assert_allclose(lin(make_cglp(d)), lag * lead, rtol=1e-8)
    np.testing.assert_allclose(lin(make_shaped_cglp(d, make_lag(1))), lag * lead, rtol=1e-8)
    LR = freq_response(make_lead(2, 2000), GRID) * freq_response(make_lag(2), GRID)
    np.testing.assert_allclose(lin(make_crcglp(d, 2, 2000)), lag * lead * LR, rtol=1e-8)


# -- shaping-filter fitting ----------------------------------------------------

def test_objective_validation():
    with pytest.raises(ValueError):
        BandPass(10, 1)
    with pytest.raises(ValueError):
        BandPass(1, 10, retain=0)
    with pytest.raises(ValueError):
        PhaseSlope(0.3, 5, 5)
    assert PhaseSlope(1.0, 1, 10).target_slope == pytest.approx(math.log(10))
    with pytest.raises(TypeError):
        fit_shaping_filter(ResetElement.fore(1), object())


def test_template_filters_are_proper_and_unit_dc():
    for name, sections in TEMPLATES.items():
        n = sum(1 if s == "lag" else 2 for s in sections)
        F = template_filter(name, np.linspace(-0.5, 0.5, n))
        assert F.num.size <= F.den.size
        assert freq_response(F, 1e-9) == pytest.approx(1.0)


def test_band_pass_fit_confines_psi():
    el = ResetElement.fore(1.0)
    shaped = fit_shaping_filter(el, BandPass(1.0, 10.0))
    assert shaped.converged
    assert shaped.template in TEMPLATES
    assert shaped.report["psi_in_kept"] >= shaped.report["psi_in_required"]
    assert shaped.report["psi_out_relative"] < 0.1
    assert shaped.element.condition.shaping_filter is shaped.shaping_filter


def test_fit_is_deterministic():
    kw = dict(templates=("lag", "lag*lag"), seeds_per_param=5, starts=2)
    a = fit_shaping_filter(ResetElement.fore(1.0), BandPass(1, 10), **kw)
    b = fit_shaping_filter(ResetElement.fore(1.0), BandPass(1, 10), **kw)
    assert a.template == b.template
    assert a.log_corners == b.log_corners
    assert a.residual == b.residual


def test_zero_phase_slope_recovers_linear_element():
    # a slow FORE has flat linear phase on [1, 10], so slope 0 means psi near 0
    shaped = fit_shaping_filter(ResetElement.fore(0.01), PhaseSlope(0.0, 1.0, 10.0),
                                templates=("lag",))
    assert shaped.converged
    assert shaped.report["psi_rms"] < 0.01
    assert abs(shaped.report["slope"]) < 0.02


def test_positive_phase_slope_fit():
    obj = PhaseSlope(0.3, 3.0, 30.0)
    shaped = fit_shaping_filter(CgLpDesign(1.0, 100.0), obj, templates=("lag*leadlag",))
    assert shaped.converged
    assert shaped.design is not None and shaped.lead is not None
    # re-measure at full accuracy
    w = np.logspace(math.log10(3.0), math.log10(30.0), 5)
    ph = np.unwrap(np.angle([h for _, h in describing_function(shaped.system(), w)]))
    slope = np.polyfit(np.log10(w), ph, 1)[0]
    assert slope > 0
    assert abs(slope - obj.target_slope) < 0.2 * obj.target_slope


# -- PID -----------------------------------------------------------------------

def _margin(controller_frf, plant, w):
    loop = controller_frf * freq_response(plant, w)
    return abs(loop), 180.0 + math.degrees(np.angle(loop))


def test_pid_on_double_integrator():
    wc = 2 * math.pi * 100
    C = make_pid(wc, 45.0)
    plant = RationalTF([1], [0, 0, 1])
    gain, pm = _margin(freq_response(C, wc), plant, wc)
    assert gain == pytest.approx(1.0, abs=1e-6)
    assert pm == pytest.approx(45.0, abs=0.5)
    # unity crossing is unique near omega_c
    w = np.logspace(math.log10(wc) - 2, math.log10(wc) + 2, 2001)
    mag = np.abs(freq_response(C, w) * freq_response(plant, w))
    assert np.count_nonzero(np.diff(np.sign(mag - 1))) == 1


def test_pid_lead_ratio_ten():
    # the integral part costs atan(0.1) at omega_c; a ratio-10 lead adds asin(9/11)
    wc = 5.0
    pm = math.degrees(math.asin(9 / 11) - math.atan(0.1))
    C = make_pid(wc, pm)
    zeros = np.sort(-np.roots(C.num[::-1]).real)
    poles = np.sort(-np.roots(C.den[::-1]).real)
    wd, wt = zeros[-1], poles[-1]
    assert wt / wd == pytest.approx(10.0, rel=1e-9)
    assert math.sqrt(wd * wt) == pytest.approx(wc)


@pytest.mark.parametrize("pm", [95.0, -20.0])
def test_pid_unattainable_margin(pm):
    with pytest.raises(ValueError, match="unattainable"):
        make_pid(10.0, pm)


def test_pid_custom_plant():
    plant = RationalTF([1], [10, 1, 1])
    C = make_pid(10.0, 40.0, plant)
    gain, pm = _margin(freq_response(C, 10.0), plant, 10.0)
    assert gain == pytest.approx(1.0, abs=1e-9)
    assert pm == pytest.approx(40.0, abs=1e-6)


@pytest.mark.parametrize("variant", ["conventional", "cr"])
def test_cglp_pid_matches_df_crossover(variant):
    plant = RationalTF([1], [10, 1, 1])
    sys = make_cglp_pid(10.0, 45.0, CgLpDesign(5.0, 100.0, 0.5), plant, variant,
                        omega_l=10.0, omega_h=1000.0)
    h1 = steady_state_harmonics(sys, 10.0, n_max=1).first
    gain, pm = _margin(h1, plant, 10.0)
    assert gain == pytest.approx(1.0, rel=1e-4)
    assert pm == pytest.approx(45.0, abs=0.5)


def test_cglp_pid_validation():
    plant = RationalTF([1], [0, 0, 1])
    with pytest.raises(ValueError):
        make_cglp_pid(10.0, 45.0, CgLpDesign(5, 100), plant, "cr")
    with pytest.raises(ValueError):
        make_cglp_pid(10.0, 45.0, CgLpDesign(5, 100), plant, "sideways")


# -- design documents ----------------------------------------------------------

DOCS = {
    "cglp": {"omega_r": 1.0, "omega_f": 100.0, "gamma": 0.2},
    "crcglp": {"omega_r": 1.0, "omega_f": 100.0, "omega_l": 1.0, "omega_h": 100.0},
    "parallel_cr": {"reset": ResetElement.fore(1.0).to_json(),
                    "lead": make_lead(1, 10).to_json()},
    "pid": {"omega_c": 10.0, "phase_margin": 45.0, "plant": {"kind": "mass", "m": 2.0}},
    "cglp_pid": {"omega_c": 10.0, "phase_margin": 45.0,
                 "cglp": {"omega_r": 5.0, "omega_f": 100.0},
                 "plant": {"kind": "msd", "m": 1.0, "c": 1.0, "k": 10.0}},
}


@pytest.mark.parametrize("arch", sorted(ARCHITECTURES))
def test_system_from_design(arch):
    sys = system_from_design({"architecture": arch, "params": DOCS[arch]})
    assert isinstance(sys, ControlSystem)
    again = ControlSystem.from_json(sys.to_json())
    np.testing.assert_allclose(lin(again), lin(sys), rtol=1e-12)


def test_design_document_errors():
    with pytest.raises(ValueError, match="unknown architecture"):
        system_from_design({"architecture": "pd", "params": {}})
    with pytest.raises(ValueError, match="unknown parameters"):
        system_from_design({"architecture": "cglp", "params": {**DOCS["cglp"], "x": 1}})
    with pytest.raises(ValueError, match="missing"):
        system_from_design({"architecture": "cglp", "params": {"omega_r": 1.0}})
    with pytest.raises(ValueError, match="unknown design keys"):
        system_from_design({"architecture": "cglp", "params": DOCS["cglp"], "extra": 0})


def test_fit_design_resolves_filter():
    doc = {"architecture": "cglp", "params": {"omega_r": 1.0, "omega_f": 100.0},
           "fit": {"objective": "band_pass", "band": [1.0, 10.0]}}
    resolved = fit_design(doc)
    assert "fit" not in resolved
    sys = system_from_design(resolved)
    assert sys.reset_element.condition.variant == "shaped"
    assert fit_design(resolved) == resolved
    with pytest.raises(ValueError):
        fit_design({**doc, "architecture": "pid"})
    with pytest.raises(ValueError):
        fit_design({**doc, "fit": {"objective": "cheap", "band": [1, 10]}})

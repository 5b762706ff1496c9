"""Builders for reset controller architectures.

* CgLp: first-order reset lag followed by a linear lead.
* Shaped CgLp: CgLp whose reset line is filtered by ``F(s)``.  This covers
  both phase-slope (complex-order) and band-passed variants.
* CR CgLp: ``L(s) -> reset element -> R(s)`` with ``L*R = 1`` in the linear domain.
* Parallel CR: reset element in parallel with ``L_par = L*B - B``.
* PID baselines, plus CgLp-PID combinations for closed-loop comparisons.

Designs serialize as ``{"architecture": tag, "params": {...}}``, see
:func:`system_from_design`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .harmonics import psi_profile, steady_state_harmonics
from .linsys import (RationalTF, freq_response, make_lag, make_lead, normalize, series,
                     subtract)
from .resetsim import ControlSystem, ResetCondition, ResetElement

__all__ = [
    "CgLpDesign", "BandPass", "PhaseSlope", "ShapedDesign", "make_cglp",
    "make_shaped_cglp", "make_crcglp", "make_parallel_cr", "parallel_cr_branch",
    "fit_shaping_filter", "make_pid", "make_cglp_pid", "tune_corner_factor",
    "df_phase_lead", "system_from_design", "ARCHITECTURES",
]


@dataclass(frozen=True)
class CgLpDesign:
    """Corners and reset coefficient of a CgLp element.

    ``corner_factor`` multiplies the reset-lag corner, ``1/(s/(k*omega_r) + 1)``,
    while the lead keeps its zero at ``omega_r``.
    """

    omega_r: float
    omega_f: float
    gamma: float = 0.0
    corner_factor: float = 1.0

    def __post_init__(self):
        if not (0 < self.omega_r < self.omega_f):
            raise ValueError("CgLp needs 0 < omega_r < omega_f")
        if not -1.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [-1, 1]")
        if not self.corner_factor > 0:
            raise ValueError("corner_factor must be positive")

    def reset_element(self, condition: ResetCondition | None = None) -> ResetElement:
        return ResetElement.fore(self.corner_factor * self.omega_r, self.gamma, condition)

    def lead(self) -> RationalTF:
        return make_lead(self.omega_r, self.omega_f)

    def to_json(self) -> dict:
        return {"omega_r": self.omega_r, "omega_f": self.omega_f,
                "gamma": self.gamma, "corner_factor": self.corner_factor}


def make_cglp(design: CgLpDesign, condition: ResetCondition | None = None) -> ControlSystem:
    """Reset lag followed by the linear lead ``(s/omega_r + 1)/(s/omega_f + 1)``."""
    return ControlSystem((design.reset_element(condition), design.lead()))


def make_shaped_cglp(design: CgLpDesign, shaping_filter: RationalTF) -> ControlSystem:
    return make_cglp(design, ResetCondition.shaped(shaping_filter))


def make_crcglp(design: CgLpDesign, omega_l: float, omega_h: float) -> ControlSystem:
    """Continuous-reset CgLp: ``L -> reset lag -> R -> lead``.

    ``L = make_lead(omega_l, omega_h)`` and ``R = make_lag(omega_l)``.  The
    reset element resets on its own input, which is the lead-filtered error.
    """
    L, R = make_lead(omega_l, omega_h), make_lag(omega_l)
    return ControlSystem((L, design.reset_element(), R, design.lead()))


def parallel_cr_branch(base_reset: ResetElement, L: RationalTF) -> RationalTF:
    """``L_par = L*B - B`` for the base linear transfer function ``B``."""
    B = base_reset.bls_tf()
    # (L - 1)*B avoids the doubled denominator that L*B - B would need to cancel
    lpar = normalize(series(subtract(L, RationalTF([1.0], [1.0])), B))
    if lpar.num.size > lpar.den.size:
        raise ValueError("L*B - B is improper")
    return lpar


def make_parallel_cr(base_reset: ResetElement, L: RationalTF,
                     F: RationalTF | None = None) -> ControlSystem:
    """Reset element (reset line shaped by ``F``) in parallel with ``L*B - B``.

    With ``gamma = 1`` the sum is exactly ``L*B``.
    """
    cond = ResetCondition() if F is None else ResetCondition.shaped(F)
    element = base_reset.with_condition(cond)
    lpar = parallel_cr_branch(base_reset, L)
    return ControlSystem((element,), None if lpar.is_zero else lpar)


# -- shaping-filter fitting --------------------------------------------------

@dataclass(frozen=True)
class BandPass:
    """Confine nonlinearity to ``[omega_1, omega_2]``.

    ``|psi|`` is penalized from ``transition`` decades beyond each band edge
    outwards (two decades wide), relative to the unshaped element's.
    ``retain`` is the fraction of the unshaped in-band ``|psi|`` that must be
    kept.
    """

    omega_1: float
    omega_2: float
    retain: float = 0.5
    transition: float = 1.0

    def __post_init__(self):
        if not 0 < self.omega_1 < self.omega_2:
            raise ValueError("band needs 0 < omega_1 < omega_2")
        if not 0 < self.retain <= 1:
            raise ValueError("retain must lie in (0, 1]")
        if self.transition < 0:
            raise ValueError("transition must be non-negative")

    @property
    def span(self):
        return self.omega_1, self.omega_2

    def to_json(self):
        return {"objective": "band_pass", "band": [self.omega_1, self.omega_2],
                "retain": self.retain, "transition": self.transition}


@dataclass(frozen=True)
class PhaseSlope:
    """Describing-function phase slope of ``beta*ln(10)`` rad/decade on ``[omega_a, omega_b]``."""

    beta: float
    omega_a: float
    omega_b: float
    regularization: float = 1e-3

    def __post_init__(self):
        if not 0 < self.omega_a < self.omega_b:
            raise ValueError("band needs 0 < omega_a < omega_b")

    @property
    def span(self):
        return self.omega_a, self.omega_b

    @property
    def target_slope(self) -> float:
        return self.beta * math.log(10.0)

    def to_json(self):
        return {"objective": "phase_slope", "beta": self.beta,
                "band": [self.omega_a, self.omega_b]}


def _section_tf(kind, corners):
    if kind == "lag":
        (p,) = corners
        return RationalTF([1.0], [1.0, 1.0 / p])
    z, p = corners
    return RationalTF([1.0, 1.0 / z], [1.0, 1.0 / p])


TEMPLATES = {
    "lag": ("lag",),
    "leadlag": ("leadlag",),
    "lag*lag": ("lag", "lag"),
    "lag*leadlag": ("lag", "leadlag"),
    "leadlag*leadlag": ("leadlag", "leadlag"),
}
_N_PARAMS = {"lag": 1, "leadlag": 2}


def template_filter(template: str, log_corners) -> RationalTF:
    """Shaping filter of a template from log10 corner frequencies."""
    corners = 10.0 ** np.asarray(log_corners, dtype=float)
    tf, pos = None, 0
    for kind in TEMPLATES[template]:
        k = _N_PARAMS[kind]
        sec = _section_tf(kind, corners[pos:pos + k])
        pos += k
        tf = sec if tf is None else series(tf, sec)
    return tf


@dataclass(frozen=True, eq=False)
class ShapedDesign:
    """Result of :func:`fit_shaping_filter`."""

    element: ResetElement
    shaping_filter: RationalTF
    objective: object
    template: str
    log_corners: tuple
    residual: float
    converged: bool
    report: dict = field(default_factory=dict)
    design: CgLpDesign | None = None
    lead: RationalTF | None = None

    def system(self) -> ControlSystem:
        blocks = (self.element,) if self.lead is None else (self.element, self.lead)
        return ControlSystem(blocks)


_LIGHT = {"transient_periods": 4, "window_periods": 2, "samples_per_period": 128}


def _band_grids(lo, hi, transition, n_out=40, n_in=30):
    a, b = math.log10(lo) - transition, math.log10(hi) + transition
    out = np.concatenate([np.logspace(a - 2, a, n_out), np.logspace(b, b + 2, n_out)])
    inside = np.logspace(math.log10(lo), math.log10(hi), n_in)
    return out, inside


def _band_cost(element, objective):
    out, inside = _band_grids(*objective.span, objective.transition)
    ref_in = psi_profile(element, inside, ResetCondition()).psi
    ref_out = np.maximum(np.abs(np.sin(psi_profile(element, out, ResetCondition()).psi)), 1e-9)
    half = out.size // 2
    sign = -1.0 if np.mean(ref_in) < 0 else 1.0
    need = objective.retain * np.mean(np.abs(ref_in))

    def cost(F):
        cond = ResetCondition.shaped(F)
        p_out = psi_profile(element, out, cond).psi
        p_in = psi_profile(element, inside, cond).psi
        kept = np.mean(np.maximum(0.0, sign * p_in))
        shortfall = max(0.0, need - kept)
        ratio = np.abs(np.sin(p_out)) / ref_out
        # worse of the two sides, so neither edge is traded for the other
        rel = float(max(np.mean(ratio[:half]), np.mean(ratio[half:])))
        return rel + 10.0 * shortfall / need, {
            "psi_out_relative": rel,
            "psi_in_kept": float(kept), "psi_in_required": float(need)}

    return cost


def _phase_slope(system, omegas):
    phases = []
    for w in omegas:
        phases.append(np.angle(steady_state_harmonics(system, w, n_max=1, **_LIGHT).first))
    phases = np.unwrap(phases)
    return float(np.polyfit(np.log10(omegas), phases, 1)[0])


def _slope_cost(element, objective, lead):
    omegas = np.logspace(math.log10(objective.omega_a), math.log10(objective.omega_b), 5)

    def cost(F):
        el = element.with_condition(ResetCondition.shaped(F))
        sys = ControlSystem((el,) if lead is None else (el, lead))
        try:
            slope = _phase_slope(sys, omegas)
        except (RuntimeError, ArithmeticError):
            return math.inf, {"error": "simulation failed"}
        psi = psi_profile(el, omegas).psi
        c = (slope - objective.target_slope) ** 2 + objective.regularization * float(np.mean(psi ** 2))
        return float(c), {"slope": slope, "target_slope": objective.target_slope,
                          "psi_rms": float(np.sqrt(np.mean(psi ** 2)))}

    return cost


def _coordinate_descent(cost, x0, c0, bounds, step=0.5, min_step=1e-3, max_evals=400):
    x, best = np.array(x0, dtype=float), c0
    evals = 0
    while step >= min_step and evals < max_evals:
        improved = False
        for i in range(x.size):
            for direction in (1.0, -1.0):
                cand = x.copy()
                cand[i] = np.clip(cand[i] + direction * step, *bounds)
                c = cost(cand)
                evals += 1
                if c < best:
                    x, best, improved = cand, c, True
                    break
        if not improved:
            step /= 2.0
    return x, best


def fit_shaping_filter(element, objective, lead: RationalTF | None = None,
                       templates=None, seeds_per_param: int | None = None,
                       starts: int | None = None) -> ShapedDesign:
    """Numerically tune a reset-line shaping filter ``F(s)``.

    Parameters
    ----------
    element : ResetElement or CgLpDesign
        Element to shape.  A ``CgLpDesign`` contributes its reset lag and its
        lead (the lead enters the describing-function measurement).
    objective : BandPass or PhaseSlope
        ``BandPass`` minimizes the mean ``|psi|`` over two decades either side
        of the band while keeping ``retain`` of the in-band ``|psi|``.
        ``PhaseSlope`` matches the measured DF phase slope plus a small
        ``psi**2`` regularizer that prefers the most linear solution.
    templates : sequence of str, optional
        Names from ``TEMPLATES``; cascades of at most two lag/lead-lag sections.

    Each template is seeded on a coarse log-corner grid and the ``starts``
    best seeds are refined by coordinate descent.  The whole search is deterministic; ties go to the
    lexicographically smaller parameter vector.
    """
    design = None
    if isinstance(element, CgLpDesign):
        design = element
        lead = design.lead() if lead is None else lead
        element = design.reset_element()
    if isinstance(objective, BandPass):
        base_cost = _band_cost(element, objective)
        templates = templates or ("lag", "lag*lag", "lag*leadlag", "leadlag*leadlag")
        seeds_per_param = seeds_per_param or 7
        starts = starts or 6
        descent = {}
    elif isinstance(objective, PhaseSlope):
        base_cost = _slope_cost(element, objective, lead)
        templates = templates or ("lag", "lag*leadlag")
        seeds_per_param = seeds_per_param or 3
        starts = starts or 1
        descent = {"min_step": 1e-2, "max_evals": 60}
    else:
        raise TypeError(f"unsupported objective {objective!r}")

    lo, hi = objective.span
    seeds = np.linspace(math.log10(lo) - 1.5, math.log10(hi) + 1.5, seeds_per_param)
    bounds = (math.log10(lo) - 3.0, math.log10(hi) + 3.0)
    cache = {}

    def cost_of(template, x):
        key = (template, tuple(np.round(x, 12)))
        if key not in cache:
            cache[key] = base_cost(template_filter(template, x))
        return cache[key][0]

    best = None
    for template in templates:
        n = sum(_N_PARAMS[k] for k in TEMPLATES[template])
        seeded = sorted((cost_of(template, np.array(p)), p)
                        for p in itertools.product(seeds, repeat=n))
        for c0, p0 in seeded[:starts]:
            x, c = _coordinate_descent(lambda v: cost_of(template, v), p0, c0, bounds,
                                       **descent)
            cand = (c, tuple(np.round(x, 12)), template)
            if best is None or cand[:2] < best[:2]:
                best = cand
    cost, x, template = best
    F = template_filter(template, x)
    _, report = base_cost(F)
    if isinstance(objective, BandPass):
        converged = report["psi_in_kept"] >= report["psi_in_required"] - 1e-12
    else:
        tol = max(0.2 * abs(objective.target_slope), 0.02)
        converged = abs(report.get("slope", math.inf) - objective.target_slope) <= tol
    return ShapedDesign(element.with_condition(ResetCondition.shaped(F)), F, objective,
                        template, tuple(float(v) for v in x), float(cost), bool(converged),
                        report, design, lead)


def df_phase_lead(system: ControlSystem, omega: float, **settings) -> float:
    """DF phase minus base-linear phase (rad) at ``omega``."""
    from .resetsim import linear_equivalent
    h1 = steady_state_harmonics(system, omega, n_max=1, **settings).first
    lin = freq_response(linear_equivalent(system), omega)
    return float(np.angle(h1 / lin))


def tune_corner_factor(design: CgLpDesign, band=None, n_points: int = 9) -> CgLpDesign:
    """Pick ``corner_factor`` so the CgLp's ``|H_1|`` is flattest over ``band``.

    Flatness is the peak-to-peak of ``|H_1|`` in dB on a log grid; ``band``
    defaults to ``[omega_r, omega_f]``.
    """
    from scipy.optimize import minimize_scalar

    lo, hi = band or (design.omega_r, design.omega_f)
    grid = np.logspace(math.log10(lo), math.log10(hi), n_points)

    def ripple(logk):
        d = CgLpDesign(design.omega_r, design.omega_f, design.gamma, 10.0 ** logk)
        sys = make_cglp(d)
        mags = [20 * math.log10(abs(steady_state_harmonics(sys, w, n_max=1, **_LIGHT).first))
                for w in grid]
        return max(mags) - min(mags)

    res = minimize_scalar(ripple, bounds=(-1.0, 1.0), method="bounded",
                          options={"xatol": 1e-3})
    return CgLpDesign(design.omega_r, design.omega_f, design.gamma, float(10.0 ** res.x))


# -- PID baselines -----------------------------------------------------------

def _loop_phase(z):
    # phase in (-2*pi, 0] so a double integrator reads -pi
    a = float(np.angle(z))
    return a - 2 * math.pi if a > 0 else a


def _lead_for(phi, omega_c):
    s = math.sin(phi)
    r = (1 + s) / (1 - s)
    return make_lead(omega_c / math.sqrt(r), omega_c * math.sqrt(r))


def make_pid(omega_c: float, phase_margin_target: float,
             plant: RationalTF | None = None) -> RationalTF:
    """Series PID ``kp*(1 + w_i/s)*(s/w_d + 1)/(s/w_t + 1)`` tuned at ``omega_c``.

    ``w_i = omega_c/10`` and the lead corners sit symmetrically about
    ``omega_c`` so the loop with ``plant`` (default ``1/s**2``) has the
    requested phase margin in degrees; ``kp`` gives unity loop gain at
    ``omega_c``.

    Raises
    ------
    ValueError
        If a single lead cannot supply the required phase; the message
        reports the largest achievable margin.
    """
    if not omega_c > 0:
        raise ValueError("omega_c must be positive")
    plant = plant or RationalTF([1.0], [0.0, 0.0, 1.0])
    wi = omega_c / 10.0
    pi_part = RationalTF([wi, 1.0], [0.0, 1.0])
    base = freq_response(plant, omega_c) * freq_response(pi_part, omega_c)
    phi = math.radians(phase_margin_target) - (math.pi + _loop_phase(base))
    if not 0 < phi < math.pi / 2:
        best = math.degrees(math.pi / 2 + math.pi + _loop_phase(base))
        raise ValueError(
            f"phase margin {phase_margin_target} deg unattainable with one lead; "
            f"achievable range is below {best:.3f} deg")
    lead = _lead_for(phi, omega_c)
    c = series(pi_part, lead)
    kp = 1.0 / abs(freq_response(plant, omega_c) * freq_response(c, omega_c))
    return RationalTF(kp * c.num, c.den)


def make_cglp_pid(omega_c: float, phase_margin: float, cglp: CgLpDesign,
                  plant: RationalTF, variant: str = "conventional",
                  omega_l: float | None = None, omega_h: float | None = None,
                  gain_tf: RationalTF | None = None) -> ControlSystem:
    """CgLp (or CR CgLp) followed by a PID tuned on the describing function.

    The reset part is measured at ``omega_c`` first; the linear lead then
    supplies whatever phase is still missing for ``phase_margin`` (degrees),
    and ``kp`` normalizes the DF loop gain to one at ``omega_c``.
    """
    if variant == "conventional":
        reset_part = make_cglp(cglp)
    elif variant == "cr":
        if omega_l is None or omega_h is None:
            raise ValueError("CR variant needs omega_l and omega_h")
        reset_part = make_crcglp(cglp, omega_l, omega_h)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    df = steady_state_harmonics(reset_part, omega_c, n_max=1).first
    wi = omega_c / 10.0
    pi_part = RationalTF([wi, 1.0], [0.0, 1.0])
    base = freq_response(plant, omega_c) * freq_response(pi_part, omega_c) * df
    phi = math.radians(phase_margin) - (math.pi + _loop_phase(base))
    if phi >= math.pi / 2:
        raise ValueError("required linear lead exceeds 90 degrees")
    if phi > 1e-9:
        linear = series(pi_part, _lead_for(phi, omega_c))
    elif phi > -1e-9:
        linear = pi_part
    else:
        raise ValueError(
            f"reset part already gives {-math.degrees(phi):.3f} deg more than the target")
    kp = 1.0 / abs(base / freq_response(pi_part, omega_c) * freq_response(linear, omega_c))
    linear = RationalTF(kp * linear.num, linear.den)
    return ControlSystem(reset_part.blocks + (linear,))


# -- design documents --------------------------------------------------------

def _check_keys(params, required, optional=()):
    missing = [k for k in required if k not in params]
    unknown = sorted(set(params) - set(required) - set(optional))
    if missing:
        raise ValueError(f"missing parameters: {missing}")
    if unknown:
        raise ValueError(f"unknown parameters: {unknown}")


def _cglp_from(params):
    return CgLpDesign(float(params["omega_r"]), float(params["omega_f"]),
                      float(params.get("gamma", 0.0)),
                      float(params.get("corner_factor", 1.0)))


_CGLP_KEYS = ("omega_r", "omega_f")
_CGLP_OPT = ("gamma", "corner_factor")


def _plant_tf(doc):
    if doc is None:
        return RationalTF([1.0], [0.0, 0.0, 1.0])
    from .closedloop import Plant
    return Plant.from_json(doc).tf


def _build_cglp(p):
    _check_keys(p, _CGLP_KEYS, _CGLP_OPT + ("shaping_filter",))
    d = _cglp_from(p)
    if "shaping_filter" in p:
        return make_shaped_cglp(d, RationalTF.from_json(p["shaping_filter"]))
    return make_cglp(d)


def _build_crcglp(p):
    _check_keys(p, _CGLP_KEYS + ("omega_l", "omega_h"), _CGLP_OPT)
    return make_crcglp(_cglp_from(p), float(p["omega_l"]), float(p["omega_h"]))


def _build_parallel_cr(p):
    _check_keys(p, ("reset", "lead"), ("shaping_filter",))
    F = p.get("shaping_filter")
    return make_parallel_cr(ResetElement.from_json(p["reset"]), RationalTF.from_json(p["lead"]),
                            None if F is None else RationalTF.from_json(F))


def _build_pid(p):
    _check_keys(p, ("omega_c", "phase_margin"), ("plant",))
    return ControlSystem((make_pid(float(p["omega_c"]), float(p["phase_margin"]),
                                   _plant_tf(p.get("plant"))),))


def _build_cglp_pid(p):
    _check_keys(p, ("omega_c", "phase_margin", "cglp"),
                ("plant", "variant", "omega_l", "omega_h"))
    c = dict(p["cglp"])
    _check_keys(c, _CGLP_KEYS, _CGLP_OPT)
    return make_cglp_pid(float(p["omega_c"]), float(p["phase_margin"]), _cglp_from(c),
                         _plant_tf(p.get("plant")), p.get("variant", "conventional"),
                         p.get("omega_l"), p.get("omega_h"))


ARCHITECTURES = {
    "cglp": _build_cglp,
    "crcglp": _build_crcglp,
    "parallel_cr": _build_parallel_cr,
    "pid": _build_pid,
    "cglp_pid": _build_cglp_pid,
}


def system_from_design(doc: dict) -> ControlSystem:
    """Build a :class:`ControlSystem` from ``{"architecture": ..., "params": {...}}``."""
    unknown = sorted(set(doc) - {"architecture", "params", "fit"})
    if unknown:
        raise ValueError(f"unknown design keys: {unknown}")
    arch = doc.get("architecture")
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {sorted(ARCHITECTURES)}")
    return ARCHITECTURES[arch](dict(doc.get("params", {})))


def fit_design(doc: dict) -> dict:
    """Resolve a design document's ``fit`` block into a concrete shaping filter."""
    if "fit" not in doc:
        return {"architecture": doc["architecture"], "params": dict(doc.get("params", {}))}
    if doc.get("architecture") != "cglp":
        raise ValueError("only cglp designs support fitting")
    fit = dict(doc["fit"])
    kind = fit.pop("objective", None)
    band = fit.pop("band", None)
    if band is None or len(band) != 2:
        raise ValueError("fit needs a two-element band")
    if kind == "band_pass":
        _check_keys(fit, (), ("retain",))
        objective = BandPass(float(band[0]), float(band[1]), float(fit.get("retain", 0.5)))
    elif kind == "phase_slope":
        _check_keys(fit, ("beta",))
        objective = PhaseSlope(float(fit["beta"]), float(band[0]), float(band[1]))
    else:
        raise ValueError(f"unknown fit objective {kind!r}")
    params = dict(doc.get("params", {}))
    _check_keys(params, _CGLP_KEYS, _CGLP_OPT)
    shaped = fit_shaping_filter(_cglp_from(params), objective)
    params["shaping_filter"] = shaped.shaping_filter.to_json()
    return {"architecture": "cglp", "params": params}


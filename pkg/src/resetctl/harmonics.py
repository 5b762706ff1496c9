"""Describing functions and higher-order harmonics of reset systems.

Harmonics are measured, not derived: the system is driven by ``a*sin(wt)``,
simulated to its periodic steady state and the output is projected onto
``exp(-j*n*w*t)``.  ``H_n`` is the output's n-th harmonic phasor divided by
the input's first-harmonic phasor, so ``H_1`` is the describing function.

The reset-condition phase ``psi(w)`` is computed from the base linear system
directly: the angle between the resetting state's response and the
condition signal's response to the same input.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .linsys import freq_response
from .resetsim import (ControlSystem, HybridModel, ResetCondition, ResetElement,
                       assemble, integrate, linear_equivalent)

__all__ = [
    "NonPeriodicError", "StiffModelError", "HarmonicSpectrum", "PsiProfile", "LinearFrequencies",
    "steady_state_harmonics", "model_harmonics", "sweep_harmonics",
    "describing_function", "psi_profile", "find_linear_frequencies", "linear_frf",
]

TRANSIENT_PERIODS = 20
WINDOW_PERIODS = 8
SAMPLES_PER_PERIOD = 256
N_MAX = 9
PERIODICITY_TOL = 1e-4
# keep spectral_radius(A)*dt at or below this so fixed-step RK4 stays accurate
STIFF_LIMIT = 0.2
MAX_SAMPLES_PER_PERIOD = 2 ** 17


class NonPeriodicError(RuntimeError):
    """The response did not settle to a periodic steady state."""


class StiffModelError(ArithmeticError):
    """Stable fixed-step integration would need too many samples per period."""


@dataclass(frozen=True, eq=False)
class HarmonicSpectrum:
    """Complex gains ``h[n-1] = H_n`` at one excitation frequency."""

    omega: float
    amplitude: float
    h: np.ndarray

    @property
    def n_max(self) -> int:
        return self.h.size

    @property
    def first(self) -> complex:
        return complex(self.h[0])

    def harmonic(self, n: int) -> complex:
        return complex(self.h[n - 1])

    @property
    def higher_sum(self) -> float:
        """``sum_{n>=2} |H_n|``."""
        return float(np.sum(np.abs(self.h[1:])))

    @property
    def higher_ratio(self) -> float:
        return self.higher_sum / abs(self.h[0]) if self.h[0] != 0 else math.inf

    def to_json(self) -> dict:
        return {"omega": self.omega, "amplitude": self.amplitude,
                "re": self.h.real.tolist(), "im": self.h.imag.tolist()}


def _stepping(model: HybridModel, omega: float, samples_per_period: int):
    period = 2 * np.pi / omega
    m = samples_per_period
    if model.n_states:
        rho = float(np.max(np.abs(np.linalg.eigvals(model.A))))
        m = max(m, int(math.ceil(period * rho / STIFF_LIMIT)))
    m += m % 2
    if m > MAX_SAMPLES_PER_PERIOD:
        raise StiffModelError(f"stiff model needs {m} samples per period "
                         f"(limit {MAX_SAMPLES_PER_PERIOD})")
    return period, m, period / m


def _linear_guess(model, drive, omega, amplitude):
    n = model.n_states
    if not n:
        return np.zeros(0)
    try:
        X = np.linalg.solve(1j * omega * np.eye(n) - model.A, model.B[:, drive] * amplitude)
    except np.linalg.LinAlgError:
        return np.zeros(n)
    x0 = X.imag
    return x0 if np.all(np.isfinite(x0)) else np.zeros(n)


def _shoot(model, inputs, dt, m, x0, max_newton=6):
    """Newton iteration on the one-period map ``x0 -> x(T)``."""
    n = x0.size
    if not n:
        return x0

    def period_map(x):
        return integrate(model, inputs, dt, m, x0=x).X[-1]

    best_r = math.inf
    for it in range(max_newton + 1):
        p0 = period_map(x0)
        r = p0 - x0
        rn = float(np.max(np.abs(r)))
        if rn >= best_r:
            # a step that does not shrink the residual is undone
            x0 = x_prev
            break
        best_r, x_prev = rn, x0
        scale = max(float(np.max(np.abs(p0))), float(np.max(np.abs(x0))), 1e-300)
        if rn <= 1e-11 * scale or it == max_newton:
            break
        J = np.empty((n, n))
        for i in range(n):
            d = 1e-7 * max(abs(x0[i]), scale)
            xp = x0.copy()
            xp[i] += d
            J[:, i] = (period_map(xp) - p0) / d
        step = np.linalg.lstsq(J - np.eye(n), -r, rcond=1e-12)[0]
        x0 = x0 + step
    return x0


def _event_outputs(model, run, inputs, dinputs, output):
    c, d = model.outputs[output]
    out = []
    for te, pre, post in zip(run.event_t, run.event_pre, run.event_post):
        tt = np.array([te])
        w = np.array([float(f(tt)[0]) for f in inputs])
        wd = np.array([float(f(tt)[0]) for f in dinputs])
        ym, yp = float(c @ pre + d @ w), float(c @ post + d @ w)
        dm = float(c @ (model.A @ pre + model.B @ w) + d @ wd)
        dp = float(c @ (model.A @ post + model.B @ w) + d @ wd)
        out.append((te, ym, yp, dm, dp))
    return out


def _output_rate(model, run, dinputs, output):
    c, d = model.outputs[output]
    Wd = np.column_stack([f(run.t) for f in dinputs]) if dinputs else np.zeros((run.t.size, 0))
    return (run.X @ model.A.T + run.W @ model.B.T) @ c + Wd @ d


def _hermite(ts, ys, ds, n, omega):
    """Corrected trapezoid on each interval: exact for cubics, O(h**4) overall."""
    e = np.exp(-1j * n * omega * ts[None, :])
    f = ys[None, :] * e
    fd = (ds[None, :] - 1j * n * omega * ys[None, :]) * e
    h = np.diff(ts)[None, :]
    return (h * (f[:, :-1] + f[:, 1:]) / 2 + h ** 2 * (fd[:, :-1] - fd[:, 1:]) / 12).sum(axis=1)


def _fourier(t, y, yd, events, i0, i1, omega, n_max):
    """``(2/T_w) * int y exp(-j n w t) dt`` with each interval split at output jumps."""
    n = np.arange(1, n_max + 1)[:, None]
    tw = t[i0:i1 + 1]
    total = _hermite(tw, y[i0:i1 + 1], yd[i0:i1 + 1], n, omega)
    scale = max(float(np.max(np.abs(y[i0:i1 + 1]))), 1e-300)
    by_interval = {}
    for ev in events:
        te, ym, yp, dm, dp = ev
        if abs(yp - ym) <= 1e-12 * scale and abs(dp - dm) <= 1e-12 * max(abs(dm), 1e-300):
            continue
        k = int(np.searchsorted(t, te, side="left")) - 1
        if i0 <= k < i1:
            by_interval.setdefault(k, []).append(ev)
    for k, evs in by_interval.items():
        ts, ys, ds = [t[k]], [y[k]], [yd[k]]
        for te, ym, yp, dm, dp in sorted(evs):
            ts += [te, te]
            ys += [ym, yp]
            ds += [dm, dp]
        ts.append(t[k + 1])
        ys.append(y[k + 1])
        ds.append(yd[k + 1])
        piece = _hermite(np.array(ts), np.array(ys), np.array(ds), n, omega)
        plain = _hermite(t[k:k + 2], y[k:k + 2], yd[k:k + 2], n, omega)
        total += piece - plain
    return 2.0 * total / (tw[-1] - tw[0])


def model_harmonics(model: HybridModel, drive: str, output: str, omega: float,
                    amplitude: float = 1.0, n_max: int = N_MAX,
                    transient_periods: int = TRANSIENT_PERIODS,
                    window_periods: int = WINDOW_PERIODS,
                    samples_per_period: int = SAMPLES_PER_PERIOD,
                    shooting: bool = True,
                    periodicity_tol: float = PERIODICITY_TOL) -> np.ndarray:
    """Harmonic gains of ``output`` for a sinusoid on input ``drive``.

    The simulation starts from the periodic steady state found by shooting
    (seeded with the linear steady state), then runs ``transient_periods`` +
    ``window_periods`` periods.  The last window is analysed; the window
    before it must agree to ``periodicity_tol`` (relative RMS of the
    harmonic vector) or :class:`NonPeriodicError` is raised.
    """
    if not omega > 0:
        raise ValueError("omega must be positive")
    if not amplitude > 0:
        raise ValueError("amplitude must be positive")
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    idx = model.input_names.index(drive)
    period, m, dt = _stepping(model, omega, samples_per_period)
    amp = float(amplitude)
    inputs: list[Callable] = [
        (lambda t, a=amp: a * np.sin(omega * np.asarray(t)))
        if i == idx else (lambda t: np.zeros(np.shape(t)))
        for i in range(len(model.input_names))]
    dinputs: list[Callable] = [
        (lambda t, a=amp: a * omega * np.cos(omega * np.asarray(t)))
        if i == idx else (lambda t: np.zeros(np.shape(t)))
        for i in range(len(model.input_names))]
    x0 = _linear_guess(model, idx, omega, amp)
    if shooting:
        x0 = _shoot(model, inputs, dt, m, x0)
    total = transient_periods + window_periods
    run = integrate(model, inputs, dt, total * m, x0=x0)
    y = model.output(output, run.X, run.W)
    yd = _output_rate(model, run, dinputs, output)
    events = _event_outputs(model, run, inputs, dinputs, output)
    i1 = total * m
    i0 = i1 - window_periods * m
    Y = _fourier(run.t, y, yd, events, i0, i1, omega, n_max)
    if transient_periods >= window_periods:
        Yp = _fourier(run.t, y, yd, events, i0 - window_periods * m, i0, omega, n_max)
        ref = np.linalg.norm(Y)
        if ref > 0 and np.linalg.norm(Y - Yp) > periodicity_tol * ref:
            raise NonPeriodicError(
                f"response at omega={omega:.6g} not periodic: windows differ by "
                f"{np.linalg.norm(Y - Yp) / ref:.3g} relative")
    return Y / (-1j * amp)


def steady_state_harmonics(sys: ControlSystem, omega: float, amplitude: float = 1.0,
                           n_max: int = N_MAX, **settings) -> HarmonicSpectrum:
    """Steady-state harmonic spectrum of an open-loop system at ``omega``.

    Parameters
    ----------
    sys : ControlSystem
    omega : float
        Excitation frequency (rad/s).
    amplitude : float
        Input amplitude.
    n_max : int
        Highest harmonic reported; even harmonics are included and should
        vanish for odd-symmetric responses.
    **settings
        ``transient_periods``, ``window_periods``, ``samples_per_period``,
        ``shooting``, ``periodicity_tol``; see :func:`model_harmonics`.
    """
    h = model_harmonics(assemble(sys), "u", "y", omega, amplitude, n_max, **settings)
    return HarmonicSpectrum(float(omega), float(amplitude), h)


def sweep_harmonics(sys: ControlSystem, omega_grid: Sequence[float], amplitude: float = 1.0,
                    n_max: int = N_MAX, **settings) -> list:
    """Spectra over a grid as ``(omega, spectrum or None, error message or None)``.

    Numerical failures at one frequency are recorded and the sweep continues.
    """
    out = []
    model = assemble(sys)
    for w in omega_grid:
        try:
            h = model_harmonics(model, "u", "y", float(w), amplitude, n_max, **settings)
            out.append((float(w), HarmonicSpectrum(float(w), float(amplitude), h), None))
        except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
            out.append((float(w), None, f"{type(exc).__name__}: {exc}"))
    return out


def describing_function(sys: ControlSystem, omega_grid: Sequence[float],
                        amplitude: float = 1.0, **settings) -> list:
    """First-harmonic gain over an ascending grid, as ``(omega, H_1)`` pairs.

    Failed points carry ``nan`` and raise a ``RuntimeWarning``.
    """
    grid = np.asarray(omega_grid, dtype=float)
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be positive and ascending")
    out = []
    for w, spec, err in sweep_harmonics(sys, grid, amplitude, 1, **settings):
        if err is not None:
            warnings.warn(f"describing function failed at omega={w}: {err}", RuntimeWarning)
            out.append((w, complex(math.nan, math.nan)))
        else:
            out.append((w, spec.first))
    return out


# -- reset-condition phase ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class PsiProfile:
    omega: np.ndarray
    psi: np.ndarray
    evaluator: Callable | None = field(default=None, repr=False)


def _wrap(angle):
    a = np.angle(np.exp(1j * np.asarray(angle)))
    return np.where(a <= -np.pi, a + 2 * np.pi, a)


def _default_state(element: ResetElement) -> int:
    idx = np.flatnonzero(element.a_rho != 1.0)
    return int(idx[0]) if idx.size else 0


def psi_profile(element: ResetElement, omega_grid: Sequence[float],
                condition: ResetCondition | None = None,
                state_index: int | None = None) -> PsiProfile:
    """Angle of ``X_r(jw) / X_rl(jw)`` wrapped to ``(-pi, pi]``.

    ``X_r`` is the resetting state's response (one row of the resolvent of
    the base system) and ``X_rl`` is the shaping filter's response, or the
    input itself for an input-crossing condition.
    """
    cond = element.condition if condition is None else condition
    idx = _default_state(element) if state_index is None else int(state_index)
    if not 0 <= idx < element.base.n_states:
        raise IndexError(f"state_index {idx} out of range")
    F = cond.shaping_filter

    def evaluate(w):
        w = np.atleast_1d(np.asarray(w, dtype=float))
        xr = element.base.state_response(w)[:, idx]
        xrl = freq_response(F, w) if F is not None else np.ones_like(xr)
        return _wrap(np.angle(xr) - np.angle(xrl))

    grid = np.asarray(omega_grid, dtype=float)
    if np.any(grid <= 0):
        raise ValueError("omega grid must be positive")
    return PsiProfile(grid, evaluate(grid), evaluate)


@dataclass(frozen=True)
class LinearFrequencies:
    """Zeros of ``psi``: isolated roots and grid intervals where ``psi`` is zero."""

    points: list
    intervals: list

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)


def find_linear_frequencies(profile: PsiProfile, rtol: float = 1e-6,
                            atol: float = 1e-12) -> LinearFrequencies:
    """Frequencies where ``psi`` crosses zero, refined by bisection in ``omega``.

    Sign changes caused by wrapping at ``+-pi`` are ignored.  Runs of grid
    points with ``|psi| <= atol`` are reported as intervals instead.
    """
    w, psi = np.asarray(profile.omega, dtype=float), np.asarray(profile.psi, dtype=float)
    if np.any(np.diff(w) <= 0):
        raise ValueError("profile grid must be ascending")
    zero = np.abs(psi) <= atol

    if profile.evaluator is not None:
        def f(x):
            return float(profile.evaluator(x)[0])
    else:
        lw = np.log(w)

        def f(x):
            return float(np.interp(np.log(x), lw, psi))

    points, intervals = [], []
    k = 0
    while k < w.size:
        if zero[k]:
            j = k
            while j + 1 < w.size and zero[j + 1]:
                j += 1
            if j > k:
                intervals.append((float(w[k]), float(w[j])))
            else:
                points.append(float(w[k]))
            k = j + 1
            continue
        if (k + 1 < w.size and not zero[k + 1] and psi[k] * psi[k + 1] < 0
                and abs(psi[k] - psi[k + 1]) < np.pi):
            lo, hi = w[k], w[k + 1]
            flo = psi[k]
            while hi - lo > rtol * lo:
                mid = math.sqrt(lo * hi)
                fm = f(mid)
                if fm == 0.0:
                    lo = hi = mid
                    break
                if (fm > 0) == (flo > 0):
                    lo, flo = mid, fm
                else:
                    hi = mid
            points.append(float(math.sqrt(lo * hi)))
        k += 1
    return LinearFrequencies(points, intervals)


def linear_frf(sys: ControlSystem, omega) -> np.ndarray:
    """FRF of the base-linear equivalent, for comparisons against ``H_1``."""
    return freq_response(linear_equivalent(sys), omega)

"""Closed-loop experiments with reset controllers.

The loop is ``e = r - (y + n)``, ``u = C(e)``, ``y = P(u + d)``.  Plants must
be strictly proper, which rules out algebraic loops.  Optionally a Kalman
filter estimates the plant state and the reset condition is computed from
the estimated error while the controller flow still sees the raw error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import expm
from scipy.signal import lfilter

from .harmonics import SAMPLES_PER_PERIOD, _stepping, model_harmonics
from .linsys import RationalTF, StateSpaceLTI, as_ss, freq_response
from .resetsim import (ControlSystem, SimTrace, _add, _Builder, _chain, _reserve_chain,
                       _steps, as_signal, integrate, linear_equivalent)

__all__ = [
    "Plant", "NoiseSpec", "KalmanConfig", "LoopConfig", "StepMetrics", "KalmanResult",
    "build_loop", "simulate_loop", "step_metrics", "pseudo_sensitivity",
    "linear_sensitivity", "kalman_estimate", "kalman_gains", "excess_reset_count",
    "error_rms",
]


@dataclass(frozen=True)
class Plant:
    """SISO plant: ``mass`` (1/(m s^2)), ``msd`` (1/(m s^2 + c s + k)) or ``custom``."""

    kind: str
    m: float = 1.0
    c: float = 0.0
    k: float = 0.0
    custom_tf: RationalTF | None = None

    def __post_init__(self):
        if self.kind not in ("mass", "msd", "custom"):
            raise ValueError(f"unknown plant kind {self.kind!r}")
        if self.kind == "custom":
            if self.custom_tf is None:
                raise ValueError("custom plant needs a transfer function")
        else:
            if not self.m > 0:
                raise ValueError("mass must be positive")
            if self.c < 0 or self.k < 0:
                raise ValueError("damping and stiffness must be non-negative")
        if not self.tf.strictly_proper:
            raise ValueError("plant must be strictly proper (no algebraic loop)")

    @classmethod
    def mass(cls, m: float = 1.0) -> "Plant":
        return cls("mass", m)

    @classmethod
    def msd(cls, m: float, c: float, k: float) -> "Plant":
        return cls("msd", m, c, k)

    @classmethod
    def custom(cls, tf: RationalTF) -> "Plant":
        return cls("custom", custom_tf=tf)

    @property
    def tf(self) -> RationalTF:
        if self.kind == "custom":
            return self.custom_tf
        if self.kind == "mass":
            return RationalTF([1.0], [0.0, 0.0, self.m])
        return RationalTF([1.0], [self.k, self.c, self.m])

    def to_json(self) -> dict:
        if self.kind == "custom":
            return {"kind": "custom", "tf": self.custom_tf.to_json()}
        if self.kind == "mass":
            return {"kind": "mass", "m": self.m}
        return {"kind": "msd", "m": self.m, "c": self.c, "k": self.k}

    @classmethod
    def from_json(cls, doc: dict) -> "Plant":
        kind = doc.get("kind")
        allowed = {"mass": {"kind", "m"}, "msd": {"kind", "m", "c", "k"},
                   "custom": {"kind", "tf"}}.get(kind)
        if allowed is None:
            raise ValueError(f"unknown plant kind {kind!r}")
        unknown = sorted(set(doc) - allowed)
        if unknown:
            raise ValueError(f"unknown plant keys: {unknown}")
        if kind == "custom":
            return cls.custom(RationalTF.from_json(doc["tf"]))
        if kind == "mass":
            return cls.mass(float(doc.get("m", 1.0)))
        return cls.msd(float(doc["m"]), float(doc.get("c", 0.0)), float(doc.get("k", 0.0)))


@dataclass(frozen=True)
class NoiseSpec:
    """Seeded Gaussian measurement noise, band-limited by a first-order filter.

    The generated samples are rescaled to have exactly the requested RMS.
    ``bandwidth`` (rad/s) of ``None`` leaves the noise white at the sample rate.
    """

    rms: float
    bandwidth: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.rms < 0:
            raise ValueError("noise rms must be non-negative")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("noise bandwidth must be positive")

    def samples(self, n: int, dt: float) -> np.ndarray:
        if self.rms == 0:
            return np.zeros(n)
        w = np.random.default_rng(self.seed).standard_normal(n)
        if self.bandwidth is not None:
            a = math.exp(-self.bandwidth * dt)
            w = lfilter([1.0 - a], [1.0, -a], w)
        w = w - w.mean()
        return w * (self.rms / np.sqrt(np.mean(w ** 2)))

    def scaled(self, rms: float) -> "NoiseSpec":
        return NoiseSpec(rms, self.bandwidth, self.seed)


@dataclass(frozen=True)
class KalmanConfig:
    """Kalman filter settings for the reset line.

    ``Q`` is the covariance of the discrete process noise per sample.  A
    scalar ``q`` means force noise at the plant input, ``q * Gd Gd^T`` with
    ``Gd`` the zero-order-hold input matrix.  ``R`` is the measurement noise
    variance, ``P0`` the initial covariance (default zero, i.e. a known
    initial state).
    """

    Q: object = 1e-6
    R: float = 1e-6
    P0: object = None

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("R must be positive")
        q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if q.size == 1:
            if q[0, 0] < 0:
                raise ValueError("Q must be non-negative")
        elif np.min(np.linalg.eigvalsh(0.5 * (q + q.T))) < -1e-12 * max(1.0, np.abs(q).max()):
            raise ValueError("Q must be positive semidefinite")


Signal = object


@dataclass(frozen=True, eq=False)
class LoopConfig:
    """Feedback experiment definition.

    ``reference`` and ``disturbance`` accept anything :func:`as_signal`
    accepts (scalars are steps at ``t = 0``).
    """

    controller: ControlSystem
    plant: Plant
    reference: Signal = 1.0
    disturbance: Signal = None
    noise: NoiseSpec | None = None
    kalman: KalmanConfig | None = None

    def __post_init__(self):
        if not isinstance(self.controller, ControlSystem):
            raise TypeError("controller must be a ControlSystem")
        if not self.plant.tf.strictly_proper:
            raise ValueError("plant must be strictly proper")


@dataclass(eq=False)
class _KalmanHook:
    """Measurement update of the in-loop estimator at each sample."""

    gains: np.ndarray
    plant: slice
    est: slice
    c: np.ndarray
    noise_index: int

    def apply(self, k, x, w):
        K = self.gains[min(k, len(self.gains) - 1)]
        innov = self.c @ x[self.plant] + w[self.noise_index] - self.c @ x[self.est]
        if innov != 0.0:
            x = x.copy()
            x[self.est] = x[self.est] + K * innov
        return x


def _discretize(ss: StateSpaceLTI, dt: float):
    n, m = ss.n_states, ss.n_inputs
    M = np.zeros((n + m, n + m))
    M[:n, :n] = ss.A
    M[:n, n:] = ss.B
    E = expm(M * dt)
    return E[:n, :n], E[:n, n:]


def _process_cov(Q, Gd):
    q = np.atleast_2d(np.asarray(Q, dtype=float))
    if q.size == 1:
        return q[0, 0] * (Gd @ Gd.T)
    if q.shape != (Gd.shape[0],) * 2:
        raise ValueError(f"Q must be scalar or {Gd.shape[0]}x{Gd.shape[0]}")
    return 0.5 * (q + q.T)


def _check_detectable(A, C):
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real >= -1e-12:
            pbh = np.vstack([lam * np.eye(n) - A, C])
            if np.linalg.matrix_rank(pbh, tol=1e-9 * max(1.0, np.abs(pbh).max())) < n:
                raise ValueError(f"(A, C) not detectable: unobservable mode at {lam:.6g}")


def _update(P, C, R):
    S = float((C @ P @ C.T).item()) + R
    K = (P @ C.T).ravel() / S
    IKC = np.eye(P.shape[0]) - np.outer(K, C)
    # Joseph form keeps P symmetric positive semidefinite
    Pp = IKC @ P @ IKC.T + R * np.outer(K, K)
    return K, 0.5 * (Pp + Pp.T), S


def _check_psd(P, k):
    lo = np.min(np.linalg.eigvalsh(P)) if P.size else 0.0
    if lo < -1e-9 * max(1.0, np.abs(P).max()):
        raise ArithmeticError(f"Kalman covariance lost positive semidefiniteness at step {k} "
                              f"(min eigenvalue {lo:.3g})")


def kalman_gains(model: StateSpaceLTI, Q, R: float, dt: float, n_steps: int, P0=None,
                 steady_tol: float = 1e-13) -> np.ndarray:
    """Measurement-update gains ``K_k`` for ``k = 0..n_steps``.

    The recursion stops once the gain stops changing; later steps reuse the
    last gain.
    """
    Ad, Bd = _discretize(model, dt)
    C = model.C[:1]
    _check_detectable(model.A, C)
    Qd = _process_cov(Q, Bd)
    n = model.n_states
    P = np.zeros((n, n)) if P0 is None else np.array(np.atleast_2d(P0), dtype=float)
    gains = []
    for k in range(n_steps + 1):
        K, Pp, _ = _update(P, C, R)
        gains.append(K)
        if k > 2 and np.max(np.abs(K - gains[-2])) <= steady_tol * max(1.0, np.abs(K).max()):
            break
        P = Ad @ Pp @ Ad.T + Qd
        P = 0.5 * (P + P.T)
        _check_psd(P, k)
    return np.array(gains)


@dataclass(eq=False)
class KalmanResult:
    states: np.ndarray
    innovations: np.ndarray
    innovation_variance: np.ndarray
    gains: np.ndarray


def kalman_estimate(model, Q, R: float, measurements, dt: float, inputs=None,
                    x0=None, P0=None) -> KalmanResult:
    """Discrete predict/update Kalman filter on the ZOH model.

    Parameters
    ----------
    model : StateSpaceLTI or RationalTF
        SISO model; ``(A, C)`` must be detectable.
    Q : float or array
        Discrete process-noise covariance (see :class:`KalmanConfig`).
    R : float
        Measurement-noise variance, ``R > 0``.
    measurements : array_like
        ``y_k`` sampled every ``dt``.
    inputs : array_like, optional
        ``u_k`` held constant over each interval (zero if omitted).

    Returns
    -------
    KalmanResult
        ``states[k]`` is the filtered estimate after ``y_k``;
        ``innovations[k] = y_k - C x_k|k-1``.
    """
    ss = as_ss(model)
    if not R > 0:
        raise ValueError("R must be positive")
    y = np.asarray(measurements, dtype=float).ravel()
    u = np.zeros_like(y) if inputs is None else np.asarray(inputs, dtype=float).ravel()
    if u.shape != y.shape:
        raise ValueError("inputs and measurements must have the same length")
    _check_detectable(ss.A, ss.C[:1])
    Ad, Bd = _discretize(ss, dt)
    C, D = ss.C[0], float(ss.D[0, 0])
    Qd = _process_cov(Q, Bd)
    n = ss.n_states
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    P = np.zeros((n, n)) if P0 is None else np.array(np.atleast_2d(P0), dtype=float)
    states = np.empty((y.size, n))
    innov = np.empty(y.size)
    svar = np.empty(y.size)
    gains = np.empty((y.size, n))
    Cr = C.reshape(1, -1)
    for k in range(y.size):
        K, P, S = _update(P, Cr, R)
        nu = y[k] - C @ x - D * u[k]
        x = x + K * nu
        states[k], innov[k], svar[k], gains[k] = x, nu, S, K
        x = Ad @ x + Bd[:, 0] * u[k]
        P = Ad @ P @ Ad.T + Qd
        P = 0.5 * (P + P.T)
        _check_psd(P, k)
    return KalmanResult(states, innov, svar, gains)


def build_loop(cfg: LoopConfig, dt: float | None = None, n_steps: int = 0,
               steady_kalman: bool = False):
    """Assemble the closed loop as a hybrid model with inputs ``r, d, n``.

    Outputs are ``y`` (plant), ``u`` (controller), ``e`` (raw error) and,
    with a Kalman filter, ``e_hat`` (estimated noise-free error).  The
    estimator's measurement update needs ``dt``; without it the model has
    the estimator states but no update hook.
    """
    ctrl = cfg.controller
    el = ctrl.reset_element
    shaped = el is not None and el.condition.shaping_filter is not None
    kal = cfg.kalman is not None and el is not None
    b = _Builder(("r", "d", "n"))
    b.reserve("plant", cfg.plant.tf)
    _reserve_chain(b, ctrl, "c")
    if ctrl.parallel is not None:
        b.reserve("parallel", ctrl.parallel)
    ridx = ctrl.reset_index
    if kal:
        b.reserve("kf", cfg.plant.tf)
        for i in range(ridx):
            b.reserve(f"kb{i}", ctrl.blocks[i])
    if shaped:
        b.reserve("shaping", el.condition.shaping_filter)
    b.finalize()

    r, d, n = b.input("r"), b.input("d"), b.input("n")
    y = b.state_output("plant")
    e = _add(_add(r, y, -1.0), n, -1.0)
    u, v, rlabel = _chain(b, ctrl, e, "c")
    if ctrl.parallel is not None:
        u = _add(u, b.wire("parallel", e))
    b.wire("plant", _add(u, d))
    outputs = {"y": y, "u": u, "e": e}
    jump = np.ones(b.nx)
    cond = None
    if el is not None:
        jump[b.slices[rlabel]] = el.a_rho
        if kal:
            yhat = b.wire("kf", u)
            ehat = _add(r, yhat, -1.0)
            outputs["e_hat"] = ehat
            for i in range(ridx):
                ehat = b.wire(f"kb{i}", ehat)
            v = ehat
        cond = b.wire("shaping", v) if shaped else v
    model = b.model(jump, cond, outputs)
    if kal and dt is not None:
        model.sample_hook = _kalman_hook(model, cfg, dt, n_steps, steady_kalman)
    return model


def _kalman_hook(model, cfg, dt, n_steps, steady):
    pss = as_ss(cfg.plant.tf)
    gains = kalman_gains(pss, cfg.kalman.Q, cfg.kalman.R, dt, n_steps, cfg.kalman.P0)
    if steady:
        gains = gains[-1:]
    return _KalmanHook(gains, model.slices["plant"], model.slices["kf"], pss.C[0],
                       model.input_names.index("n"))


def _signal(spec, dt):
    return as_signal(0.0 if spec is None else spec, dt)


def simulate_loop(cfg: LoopConfig, dt: float, t_end: float, x0=None) -> SimTrace:
    """Simulate the closed loop.

    The returned trace has ``u`` = controller output and ``y`` = plant
    output; ``signals`` holds ``r``, ``d``, ``n``, ``e``, ``condition`` and,
    with a Kalman filter, ``e_hat``.
    """
    steps = _steps(dt, t_end)
    model = build_loop(cfg, dt, steps)
    noise = np.zeros(steps + 1) if cfg.noise is None else cfg.noise.samples(steps + 1, dt)
    inputs = [_signal(cfg.reference, dt), _signal(cfg.disturbance, dt), as_signal(noise, dt)]
    run = integrate(model, inputs, dt, steps, x0=x0)
    signals = {name: run.W[:, i].copy() for i, name in enumerate(model.input_names)}
    for name in model.outputs:
        if name not in ("y", "u"):
            signals[name] = model.output(name, run.X, run.W)
    if model.cond is not None:
        cc, cd = model.cond
        signals["condition"] = run.X @ cc + run.W @ cd
    return SimTrace(dt, run.t, model.output("u", run.X, run.W), run.X,
                    model.output("y", run.X, run.W), np.asarray(run.event_t, dtype=float),
                    tuple(model.labels), signals)


@dataclass(frozen=True)
class StepMetrics:
    overshoot: float
    settling_time: float
    rise_time: float
    steady_state_error: float
    final_value: float
    settled: bool

    def to_json(self) -> dict:
        def num(v):
            return None if not math.isfinite(v) else float(v)
        return {"overshoot": num(self.overshoot), "settling_time": num(self.settling_time),
                "rise_time": num(self.rise_time),
                "steady_state_error": num(self.steady_state_error),
                "final_value": num(self.final_value), "settled": bool(self.settled)}


def _first_crossing(t, y, level):
    idx = np.nonzero(y >= level)[0]
    if not idx.size:
        return math.nan
    k = int(idx[0])
    if k == 0:
        return float(t[0])
    return float(t[k - 1] + (level - y[k - 1]) * (t[k] - t[k - 1]) / (y[k] - y[k - 1]))


def step_metrics(trace: SimTrace, reference: float | None = None,
                 band: float = 0.02) -> StepMetrics:
    """Overshoot (%), 2% settling time, 10-90% rise time and steady-state error.

    The final value is the mean of the last 5% of the horizon.  The loop
    counts as settled when it enters the band for good before that averaging
    window and its final value is within the band of the reference.
    Unsettled responses report ``settling_time = nan``.
    """
    t, y = trace.t, trace.y
    if reference is None:
        reference = float(trace.signals["r"][-1]) if "r" in trace.signals else 1.0
    tail = t >= t[0] + 0.95 * (t[-1] - t[0])
    final = float(np.mean(y[tail]))
    if final == 0.0:
        raise ValueError("step response has zero final value")
    sgn = 1.0 if final > 0 else -1.0
    ys = sgn * y / abs(final)
    overshoot = max(0.0, float(np.max(ys)) - 1.0) * 100.0
    t10, t90 = _first_crossing(t, ys, 0.1), _first_crossing(t, ys, 0.9)
    rise = t90 - t10 if math.isfinite(t10) and math.isfinite(t90) else math.nan
    outside = np.nonzero(np.abs(y - final) > band * abs(final))[0]
    if not outside.size:
        ts = float(t[0])
    elif outside[-1] + 1 < t.size:
        ts = float(t[outside[-1] + 1] - t[0])
    else:
        ts = math.nan
    sse = abs(reference - final)
    settled = (math.isfinite(ts) and ts <= 0.95 * (t[-1] - t[0])
               and sse <= band * max(abs(reference), 1e-300))
    return StepMetrics(overshoot, ts if settled else math.nan, rise, sse, final, bool(settled))


def linear_sensitivity(controller: ControlSystem, plant: Plant, omega) -> np.ndarray:
    """``1/(1 + P C)`` with ``C`` the controller's base linear system."""
    w = np.asarray(omega, dtype=float)
    L = freq_response(plant.tf, w) * freq_response(linear_equivalent(controller), w)
    return 1.0 / (1.0 + L)


def pseudo_sensitivity(cfg: LoopConfig, omega_grid: Sequence[float], amplitude: float = 1.0,
                       **settings) -> list:
    """First-harmonic error/reference ratio over a grid.

    Returns ``(omega, |S|, S, error)`` per point.  Failed points carry ``nan``
    and the error message; the sweep continues.  Disturbance and noise are
    not applied.
    """
    model = build_loop(LoopConfig(cfg.controller, cfg.plant, 0.0, None, None, cfg.kalman))
    spp = settings.get("samples_per_period", SAMPLES_PER_PERIOD)
    out = []
    for w in omega_grid:
        w = float(w)
        try:
            if cfg.kalman is not None and model.cond is not None:
                _, _, dt = _stepping(model, w, spp)
                model.sample_hook = _kalman_hook(model, cfg, dt, 0, True)
            h = model_harmonics(model, "r", "e", w, amplitude, 1, **settings)
            out.append((w, float(abs(h[0])), complex(h[0]), None))
        except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
            out.append((w, math.nan, complex(math.nan, math.nan),
                        f"{type(exc).__name__}: {exc}"))
    return out


def error_rms(cfg: LoopConfig, dt: float, t_end: float) -> float:
    """RMS of the noise-free error signal."""
    clean = LoopConfig(cfg.controller, cfg.plant, cfg.reference, cfg.disturbance)
    e = simulate_loop(clean, dt, t_end).signals["e"]
    return float(np.sqrt(np.mean(e ** 2)))


def excess_reset_count(cfg: LoopConfig, dt: float, t_end: float,
                       noise: NoiseSpec | None = None,
                       kalman: KalmanConfig | None = None) -> tuple:
    """Reset counts ``(raw, filtered)`` for the same seeded noise.

    ``noise`` defaults to ``cfg.noise``; ``kalman`` defaults to
    ``cfg.kalman`` or, failing that, a filter with ``R`` set to the noise
    variance.
    """
    noise = cfg.noise if noise is None else noise
    if kalman is None:
        kalman = cfg.kalman
    if kalman is None:
        var = 0.0 if noise is None else noise.rms ** 2
        kalman = KalmanConfig(Q=1e-6, R=max(var, 1e-12))
    raw = LoopConfig(cfg.controller, cfg.plant, cfg.reference, cfg.disturbance, noise, None)
    filt = LoopConfig(cfg.controller, cfg.plant, cfg.reference, cfg.disturbance, noise, kalman)
    n_raw = simulate_loop(raw, dt, t_end).reset_times.size
    n_filt = simulate_loop(filt, dt, t_end).reset_times.size
    return int(n_raw), int(n_filt)


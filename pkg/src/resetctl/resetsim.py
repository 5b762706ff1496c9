"""Hybrid simulation of reset control systems.

Between reset instants every block is linear, so an interconnection is
assembled into one global LTI model ``x' = A x + B w``.  It is integrated
with fixed-step classical RK4; the reset-condition signal is watched for sign
changes and every crossing is refined by bisection on RK4 sub-steps before
the jump ``x_r <- A_rho x_r`` is applied.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .linsys import RationalTF, StateSpaceLTI, as_ss, ss_to_tf

__all__ = [
    "DivergenceError", "ChatteringError", "ResetCondition", "ResetElement",
    "ControlSystem", "SimTrace", "HybridModel", "simulate",
    "reset_condition_signal", "linear_equivalent", "assemble", "integrate",
    "as_signal",
]

MAX_EVENTS = 10**6
REFINE_TOL = 1e-6     # bisection tolerance, fraction of dt
MERGE_TOL = 1e-3      # crossings closer than this fraction of dt are merged


class DivergenceError(RuntimeError):
    """State became non-finite during integration."""

    def __init__(self, time):
        super().__init__(f"simulation diverged: non-finite state at t={time:.9g}")
        self.time = time


class ChatteringError(RuntimeError):
    """Too many reset events."""

    def __init__(self, count, time):
        super().__init__(f"more than {count} reset events (chattering) by t={time:.9g}")
        self.count = count
        self.time = time


@dataclass(frozen=True, eq=False)
class ResetCondition:
    """Source of the reset-condition signal.

    With no shaping filter the element resets at zero crossings of its own
    input.  With a shaping filter ``F`` it resets at zero crossings of ``F``
    driven by the element input.
    """

    shaping_filter: RationalTF | None = None

    @property
    def variant(self) -> str:
        return "input-crossing" if self.shaping_filter is None else "shaped"

    @classmethod
    def shaped(cls, shaping_filter: RationalTF) -> "ResetCondition":
        if not isinstance(shaping_filter, RationalTF):
            raise TypeError("shaping filter must be a RationalTF")
        return cls(shaping_filter)

    def to_json(self) -> dict:
        doc = {"variant": self.variant}
        if self.shaping_filter is not None:
            doc["shaping_filter"] = self.shaping_filter.to_json()
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "ResetCondition":
        extra = set(doc) - {"variant", "shaping_filter"}
        if extra:
            raise ValueError(f"unknown reset-condition keys: {sorted(extra)}")
        variant = doc.get("variant", "input-crossing")
        if variant == "input-crossing":
            if "shaping_filter" in doc:
                raise ValueError("input-crossing condition takes no shaping filter")
            return cls()
        if variant == "shaped":
            return cls(RationalTF.from_json(doc["shaping_filter"]))
        raise ValueError(f"unknown reset-condition variant {variant!r}")


@dataclass(frozen=True, eq=False)
class ResetElement:
    """SISO base linear system plus diagonal reset matrix.

    ``a_rho`` holds one reset coefficient per state.  Coefficients outside
    ``[-1, 1]`` are rejected unless ``allow_out_of_range`` is set, in which
    case a warning is emitted and kept in ``notes``.
    """

    base: StateSpaceLTI
    a_rho: np.ndarray
    condition: ResetCondition = field(default_factory=ResetCondition)
    allow_out_of_range: bool = False
    notes: tuple = field(default=(), init=False)

    def __post_init__(self):
        base = as_ss(self.base)
        if not base.is_siso:
            raise ValueError("reset elements must be SISO")
        a_rho = np.atleast_1d(np.asarray(self.a_rho, dtype=float)).copy()
        if a_rho.size == 1 and base.n_states > 1:
            a_rho = np.full(base.n_states, a_rho[0])
        if a_rho.shape != (base.n_states,):
            raise ValueError(
                f"a_rho has {a_rho.size} entries, base has {base.n_states} states")
        if not np.all(np.isfinite(a_rho)):
            raise ValueError("reset coefficients must be finite")
        notes = []
        if np.any(np.abs(a_rho) > 1):
            msg = f"reset coefficients {a_rho.tolist()} outside [-1, 1]"
            if not self.allow_out_of_range:
                raise ValueError(msg + " (pass allow_out_of_range=True to permit)")
            warnings.warn(msg, RuntimeWarning, stacklevel=3)
            notes.append(msg)
        a_rho.setflags(write=False)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "a_rho", a_rho)
        object.__setattr__(self, "notes", tuple(notes))

    @property
    def is_linear(self) -> bool:
        return bool(np.all(self.a_rho == 1.0))

    @property
    def reset_matrix(self) -> np.ndarray:
        return np.diag(self.a_rho)

    def bls_tf(self) -> RationalTF:
        return ss_to_tf(self.base)

    def with_condition(self, condition: ResetCondition) -> "ResetElement":
        return ResetElement(self.base, self.a_rho, condition, self.allow_out_of_range)

    def with_gamma(self, gamma) -> "ResetElement":
        return ResetElement(self.base, gamma, self.condition, self.allow_out_of_range)

    @classmethod
    def from_tf(cls, tf: RationalTF, gamma, condition=None, **kw) -> "ResetElement":
        return cls(as_ss(tf), gamma, condition or ResetCondition(), **kw)

    @classmethod
    def clegg(cls, gamma: float = 0.0) -> "ResetElement":
        return cls(StateSpaceLTI([[0.0]], [[1.0]], [[1.0]], [[0.0]]), [gamma])

    @classmethod
    def fore(cls, omega_r: float, gamma: float = 0.0, condition=None) -> "ResetElement":
        """First-order reset element with base ``1/(s/omega_r + 1)``."""
        if omega_r <= 0:
            raise ValueError("omega_r must be positive")
        return cls.from_tf(RationalTF([1.0], [1.0, 1.0 / omega_r]), [gamma], condition)

    def to_json(self) -> dict:
        doc = {"base": self.base.to_json(), "a_rho": self.a_rho.tolist(),
               "condition": self.condition.to_json()}
        if self.allow_out_of_range:
            doc["allow_out_of_range"] = True
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "ResetElement":
        extra = set(doc) - {"base", "a_rho", "condition", "allow_out_of_range", "type"}
        if extra:
            raise ValueError(f"unknown reset-element keys: {sorted(extra)}")
        cond = ResetCondition.from_json(doc.get("condition", {}))
        return cls(StateSpaceLTI.from_json(doc["base"]), doc["a_rho"], cond,
                   bool(doc.get("allow_out_of_range", False)))


Block = StateSpaceLTI | RationalTF | ResetElement


@dataclass(frozen=True, eq=False)
class ControlSystem:
    """Series chain of SISO blocks with an optional parallel branch.

    At most one block is a :class:`ResetElement`.  The parallel branch is
    driven by the chain input and its output is added to the chain output.
    """

    blocks: tuple
    parallel: StateSpaceLTI | RationalTF | None = None

    def __post_init__(self):
        blocks = tuple(self.blocks) if isinstance(self.blocks, (list, tuple)) else (self.blocks,)
        if not blocks:
            raise ValueError("a control system needs at least one block")
        n_reset = 0
        for b in blocks:
            if isinstance(b, ResetElement):
                n_reset += 1
            elif isinstance(b, (StateSpaceLTI, RationalTF)):
                if not as_ss(b).is_siso:
                    raise ValueError("all blocks must be SISO")
            else:
                raise TypeError(f"unsupported block type {type(b).__name__}")
        if n_reset > 1:
            raise ValueError("at most one reset element per chain")
        if self.parallel is not None and not as_ss(self.parallel).is_siso:
            raise ValueError("parallel branch must be SISO")
        object.__setattr__(self, "blocks", blocks)

    @property
    def reset_index(self) -> int | None:
        for i, b in enumerate(self.blocks):
            if isinstance(b, ResetElement):
                return i
        return None

    @property
    def reset_element(self) -> ResetElement | None:
        i = self.reset_index
        return None if i is None else self.blocks[i]

    def replace_reset(self, element: ResetElement) -> "ControlSystem":
        i = self.reset_index
        if i is None:
            raise ValueError("system has no reset element")
        blocks = list(self.blocks)
        blocks[i] = element
        return ControlSystem(tuple(blocks), self.parallel)

    def with_gamma(self, gamma) -> "ControlSystem":
        return self.replace_reset(self.reset_element.with_gamma(gamma))

    def to_json(self) -> dict:
        doc = {"blocks": [_block_to_json(b) for b in self.blocks]}
        if self.parallel is not None:
            doc["parallel"] = _block_to_json(self.parallel)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "ControlSystem":
        extra = set(doc) - {"blocks", "parallel"}
        if extra:
            raise ValueError(f"unknown system keys: {sorted(extra)}")
        blocks = tuple(_block_from_json(b) for b in doc["blocks"])
        par = doc.get("parallel")
        return cls(blocks, None if par is None else _block_from_json(par))


def _block_to_json(block) -> dict:
    if isinstance(block, ResetElement):
        return {"type": "reset", **block.to_json()}
    if isinstance(block, RationalTF):
        return {"type": "tf", **block.to_json()}
    return {"type": "lti", **block.to_json()}


def _block_from_json(doc: dict):
    kind = doc.get("type")
    body = {k: v for k, v in doc.items() if k != "type"}
    if kind == "reset":
        return ResetElement.from_json(body)
    if kind == "tf":
        return RationalTF.from_json(body)
    if kind == "lti":
        return StateSpaceLTI.from_json(body)
    raise ValueError(f"unknown block type {kind!r}")


# -- input signals -----------------------------------------------------------

def as_signal(obj, dt: float | None = None) -> Callable[[np.ndarray], np.ndarray]:
    """Normalize an input description into a vectorized function of time.

    Accepts ``None`` (zero), a scalar (constant), a callable ``f(t)`` or an
    array of samples on the grid ``k*dt`` (linearly interpolated, held
    constant past the ends).
    """
    if obj is None:
        return lambda t: np.zeros(np.shape(t))
    if callable(obj):
        probe = np.array([0.0, 1.0])
        try:
            ok = np.shape(obj(probe)) == (2,)
        except Exception:
            ok = False
        if ok:
            return lambda t: np.asarray(obj(np.asarray(t, dtype=float)), dtype=float)
        vec = np.vectorize(lambda tt: float(obj(tt)), otypes=[float])
        return lambda t: vec(np.asarray(t, dtype=float))
    if np.isscalar(obj):
        val = float(obj)
        return lambda t: np.full(np.shape(t), val)
    samples = np.asarray(obj, dtype=float)
    if samples.ndim != 1:
        raise ValueError("sampled input must be one-dimensional")
    if dt is None:
        raise ValueError("sampled input needs dt")
    grid = np.arange(samples.size) * dt
    return lambda t: np.interp(t, grid, samples)


class _Inputs:
    def __init__(self, signals: Sequence[Callable]):
        self.signals = list(signals)

    def sample(self, times: np.ndarray) -> np.ndarray:
        return np.column_stack([np.broadcast_to(f(times), times.shape) for f in self.signals])

    def at(self, t: float) -> np.ndarray:
        return np.array([float(f(np.array([t]))[0]) for f in self.signals])


# -- global model ------------------------------------------------------------

@dataclass(eq=False)
class HybridModel:
    """Global linear flow with a diagonal reset jump and one condition signal."""

    A: np.ndarray
    B: np.ndarray
    jump: np.ndarray
    cond: tuple | None
    outputs: dict
    labels: list
    slices: dict
    input_names: tuple
    sample_hook: object = None

    @property
    def n_states(self):
        return self.A.shape[0]

    def output(self, name, X, W):
        c, d = self.outputs[name]
        return X @ c + W @ d


class _Builder:
    """Allocates state slots for SISO blocks and wires them with linear expressions.

    An expression is a pair ``(cx, dw)`` giving a signal as ``cx @ x + dw @ w``.
    """

    def __init__(self, input_names):
        self.input_names = tuple(input_names)
        self.nw = len(self.input_names)
        self._order = []
        self.ss = {}
        self.slices = {}
        self.nx = 0
        self.A = self.B = None

    def reserve(self, label, block):
        ss = as_ss(block)
        self.ss[label] = ss
        self.slices[label] = slice(self.nx, self.nx + ss.n_states)
        self.nx += ss.n_states
        self._order.append(label)

    def finalize(self):
        self.A = np.zeros((self.nx, self.nx))
        self.B = np.zeros((self.nx, self.nw))

    def zero(self):
        return np.zeros(self.nx), np.zeros(self.nw)

    def input(self, name):
        cx, dw = self.zero()
        dw[self.input_names.index(name)] = 1.0
        return cx, dw

    def state_output(self, label):
        ss, sl = self.ss[label], self.slices[label]
        if ss.D[0, 0] != 0.0:
            raise ValueError(f"block {label} is not strictly proper")
        cx, dw = self.zero()
        cx[sl] = ss.C[0]
        return cx, dw

    def wire(self, label, expr):
        ss, sl = self.ss[label], self.slices[label]
        cx, dw = expr
        b = ss.B[:, 0]
        self.A[sl, sl] += ss.A
        self.A[sl, :] += np.outer(b, cx)
        self.B[sl, :] += np.outer(b, dw)
        ocx, odw = self.zero()
        ocx[sl] = ss.C[0]
        d = ss.D[0, 0]
        return ocx + d * cx, odw + d * dw

    def labels(self):
        out = []
        for label in self._order:
            out += [f"{label}.x{i}" for i in range(self.ss[label].n_states)]
        return out

    def model(self, jump, cond, outputs, sample_hook=None):
        return HybridModel(self.A, self.B, jump, cond, outputs, self.labels(),
                           dict(self.slices), self.input_names, sample_hook)


def _add(e1, e2, sign=1.0):
    return e1[0] + sign * e2[0], e1[1] + sign * e2[1]


def _chain(builder, sys: ControlSystem, expr, prefix=""):
    """Wire a chain; return output, reset-element input, reset label."""
    v_expr = reset_label = None
    for i, block in enumerate(sys.blocks):
        label = f"{prefix}b{i}"
        if isinstance(block, ResetElement):
            v_expr, reset_label = expr, label
        expr = builder.wire(label, expr)
    return expr, v_expr, reset_label


def _reserve_chain(builder, sys: ControlSystem, prefix=""):
    for i, block in enumerate(sys.blocks):
        builder.reserve(f"{prefix}b{i}",
                        block.base if isinstance(block, ResetElement) else block)


def assemble(sys: ControlSystem) -> HybridModel:
    """Assemble an open-loop :class:`ControlSystem` with input ``u``."""
    b = _Builder(("u",))
    _reserve_chain(b, sys)
    el = sys.reset_element
    shaped = el is not None and el.condition.shaping_filter is not None
    if shaped:
        b.reserve("shaping", el.condition.shaping_filter)
    if sys.parallel is not None:
        b.reserve("parallel", sys.parallel)
    b.finalize()
    u = b.input("u")
    y, v, rlabel = _chain(b, sys, u)
    if sys.parallel is not None:
        y = _add(y, b.wire("parallel", u))
    jump = np.ones(b.nx)
    cond = None
    if el is not None:
        jump[b.slices[rlabel]] = el.a_rho
        cond = b.wire("shaping", v) if shaped else v
    return b.model(jump, cond, {"y": y})


# -- integrator --------------------------------------------------------------

def _rk4(A, B, x, w0, wm, w1, h):
    k1 = A @ x + B @ w0
    k2 = A @ (x + 0.5 * h * k1) + B @ wm
    k3 = A @ (x + 0.5 * h * k2) + B @ wm
    k4 = A @ (x + h * k3) + B @ w1
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_matrices(A, B, h):
    nx, nw = B.shape
    I, Z = np.eye(nx), np.zeros((nw, nx))
    Iw, Zx, Zw = np.eye(nw), np.zeros((nx, nw)), np.zeros((nw, nw))
    phi = _rk4(A, B, I, Z, Z, Z, h)
    g0 = _rk4(A, B, Zx, Iw, Zw, Zw, h)
    gm = _rk4(A, B, Zx, Zw, Iw, Zw, h)
    g1 = _rk4(A, B, Zx, Zw, Zw, Iw, h)
    return phi, g0, gm, g1


def _crossed(c0, c1):
    return c0 != 0.0 and (c1 == 0.0 or (c0 > 0.0) != (c1 > 0.0))


@dataclass(eq=False)
class _Run:
    t: np.ndarray
    X: np.ndarray
    W: np.ndarray
    event_t: list
    event_pre: list
    event_post: list


def integrate(model: HybridModel, inputs, dt: float, n_steps: int, x0=None,
              t0: float = 0.0, max_events: int = MAX_EVENTS) -> _Run:
    """Integrate ``model`` over ``n_steps`` of size ``dt`` starting at ``t0``.

    ``inputs`` is a sequence of vectorized time functions, one per model
    input.  Returns sampled states plus every reset event (time, state just
    before and just after the jump).
    """
    # blow-ups surface as DivergenceError, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _integrate(model, inputs, dt, n_steps, x0, t0, max_events)


def _integrate(model, inputs, dt, n_steps, x0, t0, max_events):
    A, B = model.A, model.B
    nx = A.shape[0]
    src = _Inputs(inputs)
    half = t0 + 0.5 * dt * np.arange(2 * n_steps + 1)
    Wh = src.sample(half)
    W = Wh[::2]
    t = t0 + dt * np.arange(n_steps + 1)
    phi, g0, gm, g1 = _rk4_matrices(A, B, dt)
    G = Wh[0:-1:2] @ g0.T + Wh[1::2] @ gm.T + Wh[2::2] @ g1.T
    X = np.empty((n_steps + 1, nx))
    x = np.zeros(nx) if x0 is None else np.array(x0, dtype=float)
    if x.shape != (nx,):
        raise ValueError(f"initial state must have {nx} entries")
    hook = model.sample_hook
    jump = model.jump
    ev_t, ev_pre, ev_post = [], [], []
    if hook is not None:
        x = hook.apply(0, x, W[0])
    X[0] = x

    if model.cond is None:
        for k in range(n_steps):
            x = phi @ x + G[k]
            if hook is not None:
                x = hook.apply(k + 1, x, W[k + 1])
            X[k + 1] = x
        if not np.all(np.isfinite(X)):
            bad = int(np.argmax(~np.all(np.isfinite(X), axis=1)))
            raise DivergenceError(t[bad])
        return _Run(t, X, W, ev_t, ev_pre, ev_post)

    cc, cd = model.cond
    cW = W @ cd
    tol = REFINE_TOL * dt
    merge = MERGE_TOL * dt
    last_event = -math.inf

    def cond_at(xs, ts):
        return float(cc @ xs + cd @ src.at(ts))

    def sub(xs, ts, h):
        return _rk4(A, B, xs, src.at(ts), src.at(ts + 0.5 * h), src.at(ts + h), h)

    def fire(te, xe):
        nonlocal last_event
        if te - last_event < merge:
            return xe
        last_event = te
        post = jump * xe
        ev_t.append(te)
        ev_pre.append(xe)
        ev_post.append(post)
        if len(ev_t) > max_events:
            raise ChatteringError(max_events, te)
        return post

    c0 = float(cc @ x + cW[0])
    for k in range(n_steps):
        t1 = t[k + 1]
        x1 = phi @ x + G[k]
        c1 = float(cc @ x1 + cW[k + 1])
        if _crossed(c0, c1):
            ts, xs, cs = t[k], x, c0
            while True:
                h = t1 - ts
                if c1 == 0.0:
                    te, xe = t1, x1
                else:
                    lo, hi = 0.0, h
                    positive = cs > 0.0
                    while hi - lo > tol:
                        mid = 0.5 * (lo + hi)
                        cm = cond_at(sub(xs, ts, mid), ts + mid)
                        if cm != 0.0 and (cm > 0.0) == positive:
                            lo = mid
                        else:
                            hi = mid
                    te, xe = ts + hi, sub(xs, ts, hi)
                xe = fire(te, xe)
                if te >= t1:
                    x1 = xe
                    break
                ts, xs = te, xe
                cs = cond_at(xs, ts)
                x1 = sub(xs, ts, t1 - ts)
                c1 = float(cc @ x1 + cW[k + 1])
                if not _crossed(cs, c1):
                    break
        if hook is not None:
            c_pre = float(cc @ x1 + cW[k + 1])
            x1 = hook.apply(k + 1, x1, W[k + 1])
            c1 = float(cc @ x1 + cW[k + 1])
            if _crossed(c_pre, c1):
                x1 = fire(t1, x1)
        if not np.isfinite(x1).all():
            raise DivergenceError(t1)
        X[k + 1] = x1
        x = x1
        c0 = c1
    return _Run(t, X, W, ev_t, ev_pre, ev_post)


# -- public simulation API ---------------------------------------------------

@dataclass(eq=False)
class SimTrace:
    """Uniformly sampled simulation result.

    ``x`` holds every state of the assembled model (columns named by
    ``state_labels``); ``signals`` holds derived signals such as the reset
    condition.  ``reset_times`` are the refined event instants.
    """

    dt: float
    t: np.ndarray
    u: np.ndarray
    x: np.ndarray
    y: np.ndarray
    reset_times: np.ndarray
    state_labels: tuple
    signals: dict = field(default_factory=dict)

    def reset_flags(self) -> np.ndarray:
        """1 at samples ``k`` with a reset in ``(t[k-1], t[k]]``, else 0."""
        flags = np.zeros(self.t.size, dtype=int)
        if self.reset_times.size:
            idx = np.searchsorted(self.t, self.reset_times - 1e-12 * self.dt, side="left")
            np.add.at(flags, np.clip(idx, 0, self.t.size - 1), 1)
        return np.minimum(flags, 1)

    def to_csv(self, path) -> None:
        flags = self.reset_flags()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            extra = sorted(self.signals)
            w.writerow(["t", "u", "y", *self.state_labels, *extra, "reset"])
            for k in range(self.t.size):
                w.writerow([repr(float(self.t[k])), repr(float(self.u[k])),
                            repr(float(self.y[k])),
                            *(repr(float(v)) for v in self.x[k]),
                            *(repr(float(self.signals[s][k])) for s in extra),
                            int(flags[k])])

    def summary(self) -> dict:
        return {
            "dt": self.dt,
            "t_end": float(self.t[-1]),
            "n_samples": int(self.t.size),
            "reset_times": [float(v) for v in self.reset_times],
            "n_resets": int(self.reset_times.size),
            "extrema": {
                "y_min": float(np.min(self.y)), "y_max": float(np.max(self.y)),
                "u_min": float(np.min(self.u)), "u_max": float(np.max(self.u)),
            },
        }


def _steps(dt, t_end):
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = int(round(t_end / dt))
    if abs(n * dt - t_end) > 1e-9 * max(1.0, t_end):
        n = int(math.ceil(t_end / dt))
    if n < 10:
        raise ValueError("t_end must be at least 10*dt")
    return n


def simulate(sys: ControlSystem, input, dt: float, t_end: float, x0=None,
             max_events: int = MAX_EVENTS) -> SimTrace:
    """Simulate an open-loop control system driven by ``input``.

    Parameters
    ----------
    sys : ControlSystem
    input : callable, array or scalar
        Chain input ``u(t)``; arrays are samples on the ``k*dt`` grid.
    dt, t_end : float
        Fixed step and horizon in seconds (``t_end >= 10*dt``).
    x0 : array_like, optional
        Initial global state (defaults to zero everywhere).

    Raises
    ------
    DivergenceError, ChatteringError
    """
    n = _steps(dt, t_end)
    model = assemble(sys)
    run = integrate(model, [as_signal(input, dt)], dt, n, x0=x0, max_events=max_events)
    return _trace(model, run, dt, "u", "y")


def _trace(model, run, dt, u_name, y_name, extra=()):
    signals = {}
    if model.cond is not None:
        cc, cd = model.cond
        signals["condition"] = run.X @ cc + run.W @ cd
    for name in extra:
        signals[name] = model.output(name, run.X, run.W)
    u = run.W[:, model.input_names.index(u_name)]
    return SimTrace(dt, run.t, u.copy(), run.X, model.output(y_name, run.X, run.W),
                    np.asarray(run.event_t, dtype=float), tuple(model.labels), signals)


def reset_condition_signal(sys: ControlSystem, trace: SimTrace) -> np.ndarray:
    """Recompute the reset-condition signal of ``sys`` from a trace's states."""
    model = assemble(sys)
    if model.cond is None:
        raise ValueError("system has no reset element")
    cc, cd = model.cond
    return trace.x @ cc + trace.u * cd[0]


def linear_equivalent(sys: ControlSystem) -> StateSpaceLTI:
    """Interconnection with every reset element replaced by its base linear system.

    The shaping filter does not affect the output and is left out.
    """
    plain = sys
    el = sys.reset_element
    if el is not None and el.condition.shaping_filter is not None:
        plain = sys.replace_reset(el.with_condition(ResetCondition()))
    m = assemble(plain)
    c, d = m.outputs["y"]
    return StateSpaceLTI(m.A, m.B, c.reshape(1, -1), d.reshape(1, -1))

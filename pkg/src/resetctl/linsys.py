"""Rational transfer functions, state-space realizations and frequency response.

Coefficients are stored in ascending powers of ``s``: ``num=[b0, b1]`` means
``b0 + b1*s``.  This matches the JSON wire format ``{"num": [...], "den": [...]}``.

Pole-zero cancellation never happens implicitly.  Use :func:`cancel` or
:func:`normalize` when a reduced form is wanted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.signal

__all__ = [
    "PoleOnAxisError", "RationalTF", "StateSpaceLTI", "ComplexOrderSpec",
    "make_lead", "make_lag", "freq_response", "eval_complex_order",
    "series", "parallel_sum", "subtract", "negate", "cancel", "normalize",
    "tf_to_ss", "ss_to_tf", "ss_series", "ss_parallel", "static_gain",
    "as_ss", "lead_max_phase", "coefficients_close",
]

CANCEL_TOL = 1e-9


class PoleOnAxisError(ZeroDivisionError):
    """Raised when a frequency response is evaluated on a pole."""


def _coeffs(values, name):
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a nonempty 1-D coefficient list")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} coefficients must be finite")
    return arr


def _trim(arr):
    # drop exact zeros in the highest powers, keep at least one coefficient
    nz = np.flatnonzero(arr)
    if nz.size == 0:
        return arr[:1] * 0.0
    return arr[: nz[-1] + 1]


@dataclass(frozen=True, eq=False)
class RationalTF:
    """Proper real-coefficient rational transfer function ``num(s)/den(s)``."""

    num: np.ndarray
    den: np.ndarray

    def __post_init__(self):
        num = _trim(_coeffs(self.num, "num"))
        den = _coeffs(self.den, "den")
        if den[-1] == 0.0:
            raise ValueError("leading denominator coefficient must be nonzero")
        if num.size > den.size:
            raise ValueError(
                f"improper transfer function: deg(num)={num.size - 1} > "
                f"deg(den)={den.size - 1}")
        num.setflags(write=False)
        den.setflags(write=False)
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    @property
    def order(self) -> int:
        return self.den.size - 1

    @property
    def is_zero(self) -> bool:
        return not np.any(self.num)

    @property
    def strictly_proper(self) -> bool:
        return self.is_zero or self.num.size < self.den.size

    def __call__(self, s):
        s = np.asarray(s, dtype=complex)
        return (np.polynomial.polynomial.polyval(s, self.num)
                / np.polynomial.polynomial.polyval(s, self.den))

    def freq_response(self, omega):
        return freq_response(self, omega)

    def poles(self) -> np.ndarray:
        return np.roots(self.den[::-1])

    def zeros(self) -> np.ndarray:
        return np.roots(self.num[::-1]) if not self.is_zero else np.array([])

    def dc_gain(self) -> float:
        return float(self.num[0] / self.den[0]) if self.den[0] else math.inf

    def __mul__(self, other):
        return series(self, _as_tf(other))

    __rmul__ = __mul__

    def __add__(self, other):
        return parallel_sum(self, _as_tf(other))

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, _as_tf(other))

    def __rsub__(self, other):
        return subtract(_as_tf(other), self)

    def __neg__(self):
        return negate(self)

    def __repr__(self):
        return f"RationalTF(num={self.num.tolist()}, den={self.den.tolist()})"

    def to_json(self) -> dict:
        return {"num": [float(c) for c in self.num],
                "den": [float(c) for c in self.den]}

    @classmethod
    def from_json(cls, doc: dict) -> "RationalTF":
        extra = set(doc) - {"num", "den"}
        if extra:
            raise ValueError(f"unknown transfer function keys: {sorted(extra)}")
        return cls(doc["num"], doc["den"])


def static_gain(k: float) -> RationalTF:
    return RationalTF([k], [1.0])


def _as_tf(obj) -> RationalTF:
    if isinstance(obj, RationalTF):
        return obj
    if np.isscalar(obj):
        return static_gain(float(obj))
    raise TypeError(f"cannot interpret {obj!r} as a transfer function")


@dataclass(frozen=True, eq=False)
class StateSpaceLTI:
    """Continuous-time state-space model ``x' = Ax + Bu, y = Cx + Du``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        A = np.asarray(self.A, dtype=float)
        n = A.shape[0] if A.size else 0
        A = A.reshape(n, n)
        B = np.asarray(self.B, dtype=float).reshape(n, D.shape[1])
        C = np.asarray(self.C, dtype=float).reshape(D.shape[0], n)
        for name, mat in (("A", A), ("B", B), ("C", C), ("D", D)):
            if not np.all(np.isfinite(mat)):
                raise ValueError(f"{name} must be finite")
            mat.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.D.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.D.shape[0]

    @property
    def is_siso(self) -> bool:
        return self.D.shape == (1, 1)

    def freq_response(self, omega):
        return freq_response(self, omega)

    def state_response(self, omega) -> np.ndarray:
        """Return ``(jwI - A)^-1 B`` for a SISO model, shape ``(len(omega), n)``."""
        w = np.atleast_1d(np.asarray(omega, dtype=float))
        n = self.n_states
        out = np.empty((w.size, n), dtype=complex)
        eye = np.eye(n)
        for i, wi in enumerate(w):
            M = 1j * wi * eye - self.A
            if n and abs(np.linalg.det(M)) <= 1e-300:
                raise PoleOnAxisError(f"pole on the imaginary axis at omega={wi}")
            try:
                out[i] = np.linalg.solve(M, self.B[:, 0]) if n else []
            except np.linalg.LinAlgError as exc:
                raise PoleOnAxisError(
                    f"pole on the imaginary axis at omega={wi}") from exc
        return out

    def to_json(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist(),
                "C": self.C.tolist(), "D": self.D.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "StateSpaceLTI":
        extra = set(doc) - {"A", "B", "C", "D"}
        if extra:
            raise ValueError(f"unknown state-space keys: {sorted(extra)}")
        D = np.atleast_2d(np.asarray(doc["D"], dtype=float))
        n = len(doc["A"])
        A = np.asarray(doc["A"], dtype=float).reshape(n, n)
        B = np.asarray(doc["B"], dtype=float).reshape(n, D.shape[1])
        C = np.asarray(doc["C"], dtype=float).reshape(D.shape[0], n)
        return cls(A, B, C, D)


@dataclass(frozen=True)
class ComplexOrderSpec:
    """Order ``alpha + j*beta`` of the operator ``s**(alpha + j*beta)``."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise ValueError("alpha and beta must be finite")


def make_lead(omega_l: float, omega_h: float) -> RationalTF:
    """Return the lead filter ``(s/omega_l + 1) / (s/omega_h + 1)``."""
    if not (0 < omega_l < omega_h) or not math.isfinite(omega_h):
        raise ValueError(
            f"lead filter needs 0 < omega_l < omega_h, got {omega_l}, {omega_h}")
    return RationalTF([1.0, 1.0 / omega_l], [1.0, 1.0 / omega_h])


def make_lag(omega_l: float) -> RationalTF:
    """Return the first-order lag ``1 / (s/omega_l + 1)``."""
    if not (omega_l > 0) or not math.isfinite(omega_l):
        raise ValueError(f"lag corner must be positive, got {omega_l}")
    return RationalTF([1.0], [1.0, 1.0 / omega_l])


def freq_response(sys, omega):
    """Evaluate a SISO system at ``s = j*omega``.

    Parameters
    ----------
    sys : RationalTF or StateSpaceLTI
    omega : float or array_like
        Nonnegative frequencies in rad/s.

    Returns
    -------
    complex or ndarray of complex

    Raises
    ------
    PoleOnAxisError
        If a pole lies on the imaginary axis at one of the frequencies.
    """
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise ValueError("frequencies must be nonnegative")
    if isinstance(sys, RationalTF):
        s = 1j * w
        num = np.polynomial.polynomial.polyval(s, sys.num)
        den = np.polynomial.polynomial.polyval(s, sys.den)
        scale = np.polynomial.polynomial.polyval(np.abs(s), np.abs(sys.den))
        if np.any(np.abs(den) <= 1e-14 * scale):
            raise PoleOnAxisError("pole on the imaginary axis")
        out = num / den
    elif isinstance(sys, StateSpaceLTI):
        if not sys.is_siso:
            raise ValueError("freq_response supports SISO systems only")
        flat = np.atleast_1d(w)
        out = sys.D[0, 0] + sys.state_response(flat) @ sys.C[0]
        out = out.reshape(w.shape)
    else:
        raise TypeError(f"unsupported system type {type(sys).__name__}")
    return complex(out) if np.ndim(out) == 0 else out


def eval_complex_order(spec: ComplexOrderSpec, omega):
    """Closed-form gain (dB) and phase (rad) of ``s**(alpha + j*beta)`` at ``j*omega``.

    Gain is ``20*alpha*log10(w) + 20*log10(exp(-beta*pi/2))`` and phase is
    ``alpha*pi/2 + beta*ln(10)*log10(w)``.  No time-domain realization exists.
    """
    w = np.asarray(omega, dtype=float)
    if np.any(w <= 0):
        raise ValueError("omega must be positive")
    lw = np.log10(w)
    gain_db = 20.0 * spec.alpha * lw + 20.0 * np.log10(np.exp(-spec.beta * np.pi / 2))
    phase = spec.alpha * np.pi / 2 + spec.beta * np.log(10.0) * lw
    if np.ndim(w) == 0:
        return float(gain_db), float(phase)
    return gain_db, phase


_P = np.polynomial.polynomial


def series(a: RationalTF, b: RationalTF) -> RationalTF:
    return RationalTF(_P.polymul(a.num, b.num), _P.polymul(a.den, b.den))


def _padd(p, q):
    return _P.polyadd(p, q)


def parallel_sum(a: RationalTF, b: RationalTF) -> RationalTF:
    if np.array_equal(a.den, b.den):
        return RationalTF(_padd(a.num, b.num), a.den)
    num = _padd(_P.polymul(a.num, b.den), _P.polymul(b.num, a.den))
    return RationalTF(num, _P.polymul(a.den, b.den))


def negate(a: RationalTF) -> RationalTF:
    return RationalTF(-a.num, a.den)


def subtract(a: RationalTF, b: RationalTF) -> RationalTF:
    return parallel_sum(a, negate(b))


def _divides(poly_desc, factor_desc, tol):
    q, r = np.polydiv(poly_desc, factor_desc)
    scale = np.max(np.abs(poly_desc))
    if r.size and np.max(np.abs(r)) > tol * scale:
        return None
    return q


def _factor_for(root):
    if abs(root.imag) <= 1e-9 * max(1.0, abs(root)):
        return np.array([1.0, -root.real])
    return np.array([1.0, -2.0 * root.real, abs(root) ** 2])


def cancel(tf: RationalTF, tol: float = CANCEL_TOL) -> RationalTF:
    """Remove common factors of numerator and denominator.

    A root ``z`` of one polynomial is cancelled when dividing the other by
    the real factor through ``z`` leaves a remainder below ``tol`` relative to
    the largest coefficient.  Roots are taken from whichever polynomial gives
    a clean division, so simple roots cancel against repeated ones.
    """
    if tf.is_zero:
        return RationalTF([0.0], [1.0])
    num = tf.num[::-1].copy()
    den = tf.den[::-1].copy()
    changed = True
    while changed and num.size > 1 and den.size > 1:
        changed = False
        for src, dst in ((num, den), (den, num)):
            for r in np.roots(src):
                fac = _factor_for(r)
                if fac.size > dst.size or fac.size > src.size:
                    continue
                q_dst = _divides(dst, fac, tol)
                if q_dst is None:
                    continue
                q_src = _divides(src, fac, max(tol, 1e-6))
                if q_src is None:
                    continue
                if src is num:
                    num, den = q_src, q_dst
                else:
                    den, num = q_src, q_dst
                changed = True
                break
            if changed:
                break
    return RationalTF(num[::-1], den[::-1])


def normalize(tf: RationalTF, tol: float = CANCEL_TOL) -> RationalTF:
    """Cancel common factors and scale to a monic denominator."""
    red = cancel(tf, tol)
    lead = red.den[-1]
    num = red.num / lead
    num[np.abs(num) <= tol * max(1.0, np.max(np.abs(num)))] = 0.0
    return RationalTF(num, red.den / lead)


def tf_to_ss(tf: RationalTF) -> StateSpaceLTI:
    """Controllable canonical realization of a proper transfer function."""
    den = tf.den / tf.den[-1]
    n = den.size - 1
    num = np.zeros(n + 1)
    num[: tf.num.size] = tf.num / tf.den[-1]
    d = num[n]
    c = num[:n] - d * den[:n]
    A = np.zeros((n, n))
    if n:
        A[:-1, 1:] = np.eye(n - 1)
        A[-1, :] = -den[:n]
    B = np.zeros((n, 1))
    if n:
        B[-1, 0] = 1.0
    return StateSpaceLTI(A, B, c.reshape(1, n), [[d]])


def ss_to_tf(ss: StateSpaceLTI) -> RationalTF:
    if not ss.is_siso:
        raise ValueError("ss_to_tf supports SISO systems only")
    if ss.n_states == 0:
        return static_gain(ss.D[0, 0])
    num, den = scipy.signal.ss2tf(ss.A, ss.B, ss.C, ss.D)
    return RationalTF(np.asarray(num[0])[::-1], np.asarray(den)[::-1])


def ss_series(first: StateSpaceLTI, second: StateSpaceLTI) -> StateSpaceLTI:
    """Return ``second`` driven by the output of ``first``."""
    n1, n2 = first.n_states, second.n_states
    A = np.zeros((n1 + n2, n1 + n2))
    A[:n1, :n1] = first.A
    A[n1:, :n1] = second.B @ first.C
    A[n1:, n1:] = second.A
    B = np.vstack([first.B, second.B @ first.D])
    C = np.hstack([second.D @ first.C, second.C])
    return StateSpaceLTI(A, B, C, second.D @ first.D)


def ss_parallel(a: StateSpaceLTI, b: StateSpaceLTI) -> StateSpaceLTI:
    n1, n2 = a.n_states, b.n_states
    A = np.zeros((n1 + n2, n1 + n2))
    A[:n1, :n1] = a.A
    A[n1:, n1:] = b.A
    return StateSpaceLTI(A, np.vstack([a.B, b.B]), np.hstack([a.C, b.C]), a.D + b.D)


def as_ss(block) -> StateSpaceLTI:
    if isinstance(block, StateSpaceLTI):
        return block
    if isinstance(block, RationalTF):
        return tf_to_ss(block)
    if np.isscalar(block):
        return tf_to_ss(static_gain(float(block)))
    raise TypeError(f"cannot realize {block!r}")


def lead_max_phase(omega_l: float, omega_h: float) -> tuple[float, float]:
    """Peak phase (rad) and its frequency for :func:`make_lead`."""
    r = omega_h / omega_l
    return math.asin((r - 1) / (r + 1)), math.sqrt(omega_l * omega_h)


def coefficients_close(a: RationalTF, b: RationalTF, rtol: float = 1e-9) -> bool:
    """Coefficient-level equality of two transfer functions after :func:`normalize`."""
    na, nb = normalize(a), normalize(b)
    if na.num.size != nb.num.size or na.den.size != nb.den.size:
        return False
    scale = max(np.max(np.abs(na.den)), np.max(np.abs(na.num)), 1.0)
    return (np.allclose(na.num, nb.num, rtol=rtol, atol=rtol * scale)
            and np.allclose(na.den, nb.den, rtol=rtol, atol=rtol * scale))

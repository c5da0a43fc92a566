"""SISO linear time-invariant systems with a pure transport delay.

Polynomials are stored with ascending powers of ``s``: ``coeffs[k]``
multiplies ``s**k``.  Every object here is an immutable value and every
operation is pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial
from typing import NamedTuple

import numpy as np
from scipy.linalg import matrix_balance

from .errors import (
    DegenerateLoop,
    DelayMismatch,
    DelayedFeedbackUnsupported,
    DelayedSystem,
    ImproperSystem,
    PoleOnAxis,
)

__all__ = [
    "Polynomial",
    "TransferFunction",
    "FrequencyResponse",
    "StateSpace",
    "poly_mul",
    "tf_series",
    "tf_parallel",
    "tf_feedback",
    "tf_eval",
    "tf_poles",
    "tf_zeros",
    "is_hurwitz",
    "to_state_space",
    "pade",
    "polyroots",
]


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class Polynomial:
    """Real polynomial in ``s`` with ascending coefficients.

    Trailing (highest-power) exact zeros are trimmed on construction, so the
    leading coefficient is nonzero except for the canonical zero polynomial
    ``Polynomial([0.0])``.
    """

    __slots__ = ("_c",)

    def __init__(self, coeffs):
        c = np.atleast_1d(np.asarray(coeffs, dtype=float))
        if c.ndim != 1:
            raise ValueError("coefficients must be one-dimensional")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        nz = np.flatnonzero(c)
        c = c[: nz[-1] + 1] if nz.size else np.zeros(1)
        object.__setattr__(self, "_c", _readonly(c))

    def __setattr__(self, name, value):
        raise AttributeError("Polynomial is immutable")

    @property
    def coeffs(self) -> np.ndarray:
        return self._c

    @property
    def degree(self) -> int:
        return len(self._c) - 1

    @property
    def is_zero(self) -> bool:
        return self.degree == 0 and self._c[0] == 0.0

    @property
    def leading(self) -> float:
        return float(self._c[-1])

    def __call__(self, s):
        return np.polynomial.polynomial.polyval(s, self._c)

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial(other)
        return poly_mul(self, other)

    __rmul__ = __mul__

    def __add__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial(other)
        return Polynomial(np.polynomial.polynomial.polyadd(self._c, other._c))

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(-self._c)

    def __sub__(self, other):
        return self + (-(other if isinstance(other, Polynomial) else Polynomial(other)))

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return np.array_equal(self._c, other._c)

    def __hash__(self):
        return hash(self._c.tobytes())

    def __reduce__(self):
        return (Polynomial, (self._c.tolist(),))

    def allclose(self, other: "Polynomial", rtol=1e-12, atol=0.0) -> bool:
        n = max(len(self._c), len(other._c))
        a = np.pad(self._c, (0, n - len(self._c)))
        b = np.pad(other._c, (0, n - len(other._c)))
        scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300)
        return bool(np.all(np.abs(a - b) <= atol + rtol * scale))

    def roots(self) -> np.ndarray:
        return polyroots(self._c)

    def __repr__(self):
        return f"Polynomial({self._c.tolist()})"


def poly_mul(a: Polynomial, b: Polynomial) -> Polynomial:
    """Exact coefficient convolution."""
    return Polynomial(np.convolve(a.coeffs, b.coeffs))


def _pair_conjugates(roots: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    # snap numerically-real roots, then emit each conjugate pair adjacently
    roots = np.asarray(roots, dtype=complex)
    tiny = rtol * np.maximum(np.abs(roots), 1.0)
    real = roots[np.abs(roots.imag) <= tiny].real.astype(complex)
    upper = list(roots[roots.imag > tiny])
    lower = list(roots[roots.imag < -tiny])
    out = [(r.real, 0.0, r) for r in real]
    for u in sorted(upper, key=lambda z: (z.real, z.imag)):
        if lower:
            j = int(np.argmin([abs(np.conj(u) - v) for v in lower]))
            v = lower.pop(j)
            re = 0.5 * (u.real + v.real)
            im = 0.5 * (u.imag - v.imag)
            out.append((re, im, complex(re, im)))
            out.append((re, im, complex(re, -im)))
        else:
            out.append((u.real, u.imag, u))
    for v in lower:
        out.append((v.real, -v.imag, v))
    out.sort(key=lambda item: (item[0], item[1]))
    return np.array([item[2] for item in out], dtype=complex)


def polyroots(coeffs) -> np.ndarray:
    """Roots of an ascending-coefficient polynomial.

    Uses eigenvalues of the balanced companion matrix, followed by two Newton
    polishing steps per root.  Conjugate pairs are returned adjacently.
    """
    c = Polynomial(coeffs).coeffs
    n = len(c) - 1
    if n < 1:
        return np.zeros(0, dtype=complex)
    # exact roots at the origin
    nzero = int(np.flatnonzero(c)[0])
    c = c[nzero:]
    m = len(c) - 1
    roots = [np.zeros(nzero, dtype=complex)]
    if m >= 1:
        comp = np.zeros((m, m))
        comp[1:, :-1] = np.eye(m - 1)
        comp[:, -1] = -c[:-1] / c[-1]
        bal, _ = matrix_balance(comp, permute=False)
        r = np.linalg.eigvals(bal).astype(complex)
        dc = np.polynomial.polynomial.polyder(c)
        for _ in range(2):
            f = np.polynomial.polynomial.polyval(r, c)
            fp = np.polynomial.polynomial.polyval(r, dc)
            ok = np.abs(fp) > 0
            step = np.zeros_like(r)
            step[ok] = f[ok] / fp[ok]
            cand = r - step
            better = np.abs(np.polynomial.polynomial.polyval(cand, c)) < np.abs(f)
            r = np.where(better, cand, r)
        roots.append(r)
    return _pair_conjugates(np.concatenate(roots))


def root_residuals(coeffs, roots) -> np.ndarray:
    """Scaled residuals ``|p(r)| / (max|c| * max(1,|r|)**deg)`` for diagnostics."""
    c = Polynomial(coeffs).coeffs
    r = np.asarray(roots, dtype=complex)
    scale = np.max(np.abs(c)) * np.maximum(1.0, np.abs(r)) ** (len(c) - 1)
    return np.abs(np.polynomial.polynomial.polyval(r, c)) / scale


def pade(delay: float, order: int = 2) -> tuple[Polynomial, Polynomial]:
    """Diagonal Padé approximant of ``exp(-s*delay)`` as (num, den)."""
    if delay < 0:
        raise ValueError("delay must be nonnegative")
    if order < 1:
        raise ValueError("order must be >= 1")
    if delay == 0:
        return Polynomial([1.0]), Polynomial([1.0])
    n = order
    k = np.arange(n + 1)
    base = np.array(
        [factorial(2 * n - i) * factorial(n) / (factorial(2 * n) * factorial(i) * factorial(n - i)) for i in k]
    )
    num = base * (-delay) ** k
    den = base * delay**k
    return Polynomial(num), Polynomial(den)


@dataclass(frozen=True)
class TransferFunction:
    """Rational transfer function ``num(s)/den(s) * exp(-s*delay_s)``.

    Improper functions (impedances such as ``m s + b + k/s``) are allowed;
    operations that need properness check for it.
    """

    num: Polynomial
    den: Polynomial
    delay_s: float = 0.0

    def __post_init__(self):
        if not isinstance(self.num, Polynomial):
            object.__setattr__(self, "num", Polynomial(self.num))
        if not isinstance(self.den, Polynomial):
            object.__setattr__(self, "den", Polynomial(self.den))
        if self.den.is_zero:
            raise ValueError("denominator is the zero polynomial")
        if not (self.delay_s >= 0 and np.isfinite(self.delay_s)):
            raise ValueError("delay_s must be a finite nonnegative number")
        object.__setattr__(self, "delay_s", float(self.delay_s))

    @classmethod
    def constant(cls, k: float) -> "TransferFunction":
        return cls(Polynomial([k]), Polynomial([1.0]))

    @classmethod
    def s(cls) -> "TransferFunction":
        return cls(Polynomial([0.0, 1.0]), Polynomial([1.0]))

    @property
    def is_proper(self) -> bool:
        return self.num.degree <= self.den.degree or self.num.is_zero

    @property
    def relative_degree(self) -> int:
        return self.den.degree - self.num.degree

    def with_delay(self, delay_s: float) -> "TransferFunction":
        return TransferFunction(self.num, self.den, delay_s)

    def __mul__(self, other):
        return tf_series(self, _as_tf(other))

    __rmul__ = __mul__

    def __add__(self, other):
        return tf_parallel(self, _as_tf(other))

    __radd__ = __add__

    def __neg__(self):
        return TransferFunction(-self.num, self.den, self.delay_s)

    def __sub__(self, other):
        return self + (-_as_tf(other))

    def __rsub__(self, other):
        return _as_tf(other) + (-self)

    def __call__(self, s):
        """Evaluate at complex ``s`` including the delay factor."""
        s = np.asarray(s, dtype=complex)
        return self.num(s) / self.den(s) * np.exp(-s * self.delay_s)

    def dcgain(self) -> float:
        d0 = self.den.coeffs[0]
        if d0 == 0:
            return np.inf
        return float(self.num.coeffs[0] / d0)

    def freqresp(self, omegas) -> np.ndarray:
        """Vectorised ``G(j w)``; raises :class:`PoleOnAxis` on a singular point."""
        w = np.asarray(omegas, dtype=float)
        s = 1j * w
        den = self.den(s)
        scale = np.polynomial.polynomial.polyval(np.abs(w), np.abs(self.den.coeffs))
        if np.any(np.abs(den) <= 1e-13 * scale):
            bad = w[np.abs(den) <= 1e-13 * scale]
            raise PoleOnAxis(f"denominator vanishes at omega={bad[0]!r} rad/s")
        return self.num(s) / den * np.exp(-s * self.delay_s)

    def frequency_response(self, omegas) -> "FrequencyResponse":
        w = np.asarray(omegas, dtype=float)
        return FrequencyResponse(w, self.freqresp(w))

    def poles(self) -> np.ndarray:
        return tf_poles(self)

    def zeros(self) -> np.ndarray:
        return tf_zeros(self)

    def equivalent(self, other: "TransferFunction", rtol: float = 1e-9) -> bool:
        """Value equality by cross multiplication, ignoring common factors."""
        if not np.isclose(self.delay_s, other.delay_s, rtol=0, atol=1e-15):
            return False
        return (self.num * other.den).allclose(other.num * self.den, rtol=rtol)

    def __repr__(self):
        d = f", delay_s={self.delay_s!r}" if self.delay_s else ""
        return f"TransferFunction({self.num.coeffs.tolist()}, {self.den.coeffs.tolist()}{d})"


def _as_tf(x) -> TransferFunction:
    if isinstance(x, TransferFunction):
        return x
    return TransferFunction.constant(float(x))


def tf_series(g: TransferFunction, h: TransferFunction) -> TransferFunction:
    """Cascade ``g*h``; delays add, no pole/zero cancellation."""
    return TransferFunction(g.num * h.num, g.den * h.den, g.delay_s + h.delay_s)


def tf_parallel(g: TransferFunction, h: TransferFunction) -> TransferFunction:
    """Sum ``g+h`` over a common denominator.  Delays must match."""
    if g.delay_s != h.delay_s:
        raise DelayMismatch(f"cannot add delays {g.delay_s} and {h.delay_s}")
    if g.den == h.den:
        return TransferFunction(g.num + h.num, g.den, g.delay_s)
    return TransferFunction(g.num * h.den + h.num * g.den, g.den * h.den, g.delay_s)


def tf_feedback(
    g: TransferFunction,
    h: TransferFunction | float = 1.0,
    pade_order: int | None = None,
) -> TransferFunction:
    """Negative-feedback closure ``g / (1 + g h)``.

    A delayed loop has no exact rational closed form; pass ``pade_order`` to
    replace the loop delay by a diagonal Padé approximant, otherwise
    :class:`DelayedFeedbackUnsupported` is raised.
    """
    h = _as_tf(h)
    total = g.delay_s + h.delay_s
    gnum, gden = g.num, g.den
    if total > 0:
        if pade_order is None:
            raise DelayedFeedbackUnsupported(
                "loop contains a transport delay; evaluate in frequency domain or pass pade_order"
            )
        pn, pd = pade(total, pade_order)
        gnum, gden = gnum * pn, gden * pd
    den = gden * h.den + gnum * h.num
    if den.is_zero:
        raise DegenerateLoop("1 + g*h is identically zero")
    return TransferFunction(gnum * h.den, den)


def tf_eval(g: TransferFunction, omega: float) -> complex:
    """``g(j omega)`` with the delay applied exactly."""
    return complex(g.freqresp(np.array([omega]))[0])


def tf_poles(g: TransferFunction) -> np.ndarray:
    return g.den.roots()


def tf_zeros(g: TransferFunction) -> np.ndarray:
    return g.num.roots()


class HurwitzResult(NamedTuple):
    stable: bool
    margin: float


def is_hurwitz(g: TransferFunction) -> HurwitzResult:
    """Pole-location stability verdict; ``margin`` is the largest real part."""
    if g.delay_s > 0:
        raise DelayedSystem("judge delayed systems with frequency-domain margins")
    p = tf_poles(g)
    if p.size == 0:
        return HurwitzResult(True, -np.inf)
    m = float(np.max(p.real))
    return HurwitzResult(m < 0, m)


@dataclass(frozen=True)
class FrequencyResponse:
    omegas: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        w = _readonly(self.omegas)
        v = np.array(self.values, dtype=complex)
        v.setflags(write=False)
        if w.shape != v.shape or w.ndim != 1:
            raise ValueError("omegas and values must be 1-D and equally long")
        if w.size and (np.any(w <= 0) or np.any(np.diff(w) <= 0)):
            raise ValueError("omegas must be positive and strictly increasing")
        object.__setattr__(self, "omegas", w)
        object.__setattr__(self, "values", v)

    @property
    def mag_db(self) -> np.ndarray:
        return 20.0 * np.log10(np.abs(self.values))

    @property
    def phase_deg(self) -> np.ndarray:
        return np.degrees(np.unwrap(np.angle(self.values)))


@dataclass(frozen=True)
class StateSpace:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: float
    delay_s: float = 0.0

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float)) if np.size(self.A) else np.zeros((0, 0))
        n = A.shape[0]
        B = np.array(self.B, dtype=float).reshape(n, 1)
        C = np.array(self.C, dtype=float).reshape(1, n)
        if A.shape != (n, n):
            raise ValueError("A must be square")
        for name, arr in (("A", A), ("B", B), ("C", C)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "D", float(self.D))
        if self.delay_s < 0:
            raise ValueError("delay_s must be nonnegative")

    @property
    def order(self) -> int:
        return self.A.shape[0]

    def freqresp(self, omegas) -> np.ndarray:
        w = np.atleast_1d(np.asarray(omegas, dtype=float))
        n = self.order
        out = np.empty(w.shape, dtype=complex)
        eye = np.eye(n)
        for i, wi in enumerate(w):
            if n:
                x = np.linalg.solve(1j * wi * eye - self.A, self.B[:, 0])
                out[i] = self.C[0] @ x + self.D
            else:
                out[i] = self.D
        return out * np.exp(-1j * w * self.delay_s)


def to_state_space(g: TransferFunction) -> StateSpace:
    """Controllable-canonical realisation of a proper transfer function."""
    if not g.is_proper:
        raise ImproperSystem(f"numerator degree {g.num.degree} exceeds denominator degree {g.den.degree}")
    a = g.den.coeffs / g.den.leading
    n = g.den.degree
    b = np.zeros(n + 1)
    b[: g.num.degree + 1] = g.num.coeffs / g.den.leading
    D = b[n] if n >= 0 else 0.0
    bp = b[:n] - D * a[:n]
    A = np.zeros((n, n))
    if n:
        A[:-1, 1:] = np.eye(n - 1)
        A[-1, :] = -a[:n]
    B = np.zeros(n)
    if n:
        B[-1] = 1.0
    return StateSpace(A, B, bp, D, g.delay_s)

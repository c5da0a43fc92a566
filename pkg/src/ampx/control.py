"""Amplification-loop compensator, stability margins and ensemble sweeps."""

from __future__ import annotations

import cmath
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import DegenerateLoop, PoleOnAxis
from .lti import Polynomial, TransferFunction, tf_poles, tf_series
from .plant import (
    ActuatorParams,
    ExoParams,
    HumanParams,
    SpringLoopConfig,
    amplification_plant,
    force_plant_dob,
    human_damping_from_zeta,
    reflect_to_linear,
)

__all__ = [
    "AmplifierConfig",
    "EnsembleSpec",
    "Crossover",
    "MarginReport",
    "EnsembleMember",
    "default_grid",
    "make_amplification_controller",
    "open_loop",
    "margins",
    "nyquist_rhp_count",
    "ensemble_sweep",
    "ensemble_plants",
    "expected_amplification",
    "spring_force_plant",
    "AGGRESSIVE",
    "ROBUST",
]


@dataclass(frozen=True)
class AmplifierConfig:
    """PI amplification controller ``k_p (s+z)/(s+p)`` for amplification ``alpha``."""

    alpha: float = 10.0
    k_p: float = 0.1
    z: float = 10.0
    p: float = 0.0

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError(f"alpha must be >= 1, got {self.alpha}")
        if not (self.k_p > 0 and self.z > 0 and 0 <= self.p < self.z):
            raise ValueError(f"need k_p > 0, z > 0 and 0 <= p < z, got {self}")


AGGRESSIVE = AmplifierConfig(alpha=10.0, k_p=0.1, z=30.0, p=0.01)
ROBUST = AmplifierConfig(alpha=10.0, k_p=0.1, z=10.0, p=0.01)


def _linspace(lo: float, hi: float, count: int) -> np.ndarray:
    if count == 1:
        return np.array([lo])
    return np.linspace(lo, hi, count)


@dataclass(frozen=True)
class EnsembleSpec:
    """Cartesian grid over human stiffness, loaded inertia and transmission ratio.

    Each range is ``(lo, hi, count)``; a count of one pins the value at ``lo``.
    Human damping follows from ``zeta``.
    """

    K_h: tuple = (7.44, 70.11, 20)
    M_e: tuple = (1.05, 1.05, 1)
    r: tuple = (0.005, 0.025, 5)
    zeta: float = 0.23
    delay_s: float = 0.006
    M_h: float = 0.09
    M_e_bar: float = 0.1

    def __post_init__(self):
        for name in ("K_h", "M_e", "r"):
            lo, hi, count = getattr(self, name)
            if lo > hi or int(count) != count or count < 1:
                raise ValueError(f"bad {name} range {getattr(self, name)}")
            object.__setattr__(self, name, (float(lo), float(hi), int(count)))
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")
        if self.delay_s < 0:
            raise ValueError("delay_s must be nonnegative")

    @property
    def size(self) -> int:
        return self.K_h[2] * self.M_e[2] * self.r[2]

    def points(self):
        """Grid points ordered K_h outer, M_e middle, r inner."""
        return itertools.product(_linspace(*self.K_h), _linspace(*self.M_e), _linspace(*self.r))


@dataclass(frozen=True)
class Crossover:
    omega: float
    phase_margin: float


@dataclass(frozen=True)
class MarginReport:
    crossovers: tuple
    gain_margin_db: float | None
    stable: bool
    worst_pm: float | None
    closed_loop_rhp: int = 0
    open_loop_rhp: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["crossovers"] = [asdict(c) for c in self.crossovers]
        return d


@dataclass(frozen=True)
class EnsembleMember:
    index: int
    K_h: float
    B_h: float
    M_e: float
    r: float
    report: MarginReport = field(repr=False)


def default_grid(points_per_decade: int = 200) -> np.ndarray:
    return np.logspace(-3, 5, 8 * points_per_decade + 1)


def make_amplification_controller(cfg: AmplifierConfig) -> TransferFunction:
    """``C_alpha(s) = k_p (s + z)/(s + p)``; ``p = 0`` is the ideal integrator."""
    return TransferFunction(Polynomial([cfg.k_p * cfg.z, cfg.k_p]), Polynomial([cfg.p, 1.0]))


def open_loop(plant: TransferFunction, controller: TransferFunction) -> TransferFunction:
    return tf_series(controller, plant)


def _check_grid(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or np.any(np.diff(w) <= 0) or w[0] <= 0:
        raise ValueError("omega grid must be positive and strictly increasing")
    if w[0] > 1e-2 or w[-1] < 1e4 or w.size < 200:
        raise ValueError("omega grid must span [1e-2, 1e4] rad/s with at least 200 points")
    return w


def _refine(loop: TransferFunction, w: np.ndarray, L: np.ndarray, max_step=np.pi / 4, rounds=8):
    # insert midpoints wherever the Nyquist curve of 1+L turns too fast
    for _ in range(rounds):
        d = np.abs(np.diff(np.unwrap(np.angle(1.0 + L))))
        bad = np.flatnonzero(d > max_step)
        if bad.size == 0:
            break
        mids = np.sqrt(w[bad] * w[bad + 1])
        w = np.insert(w, bad + 1, mids)
        L = np.insert(L, bad + 1, loop.freqresp(mids))
    return w, L


def _origin_poles(poles: np.ndarray) -> int:
    scale = max(1.0, float(np.max(np.abs(poles)))) if poles.size else 1.0
    return int(np.sum(np.abs(poles) <= 1e-12 * scale))


def nyquist_rhp_count(loop: TransferFunction, omega_grid=None) -> tuple[int, float]:
    """Closed-loop right-half-plane pole count of ``1/(1+L)`` by winding number.

    The contour runs up the imaginary axis, indents to the right around
    integrator poles at the origin and closes through the right half plane.
    The delay is included exactly.  Returns the rounded count and the raw
    (ideally integral) value.
    """
    w = default_grid() if omega_grid is None else np.asarray(omega_grid, dtype=float)
    poles = tf_poles(loop)
    m0 = _origin_poles(poles)
    nonzero = poles[np.abs(poles) > 1e-12 * max(1.0, float(np.max(np.abs(poles)) if poles.size else 1.0))]
    on_axis = np.abs(nonzero.real) <= 1e-10 * np.maximum(1.0, np.abs(nonzero))
    if np.any(on_axis):
        raise PoleOnAxis("open loop has imaginary-axis poles away from the origin")
    p_rhp = int(np.sum(nonzero.real > 0))
    L = loop.freqresp(w)
    w, L = _refine(loop, w, L)
    if abs(L[-1]) >= 1.0:
        raise ValueError("loop gain has not rolled off below unity at the top of the grid")
    one = 1.0 + L
    d_pos = float(np.unwrap(np.angle(one))[-1] - np.angle(one[0]))
    w0 = one[0]
    # small indentation around the origin: clockwise turn of m0 half-circles
    arc = float(np.angle(w0 / np.conj(w0)))
    arc += 2 * np.pi * round((-m0 * np.pi - arc) / (2 * np.pi))
    total = 2.0 * d_pos + arc
    raw = p_rhp - total / (2.0 * np.pi)
    return int(round(raw)), raw


def _scalar_eval(loop: TransferFunction):
    num = loop.num.coeffs[::-1].tolist()
    den = loop.den.coeffs[::-1].tolist()
    T = loop.delay_s

    def ev(x: float) -> complex:
        s = 1j * x
        n = 0j
        for c in num:
            n = n * s + c
        d = 0j
        for c in den:
            d = d * s + c
        return n / d * cmath.exp(-s * T)

    return ev


def margins(loop: TransferFunction, omega_grid=None) -> MarginReport:
    """Gain crossovers, phase margins, gain margin and Nyquist verdict.

    Every unity-gain crossing on the grid is refined by bisection to 1e-6
    relative in frequency.  A loop that never reaches unity gain gets an
    empty crossover list and ``worst_pm=None``.
    """
    w = default_grid() if omega_grid is None else _check_grid(omega_grid)
    L = loop.freqresp(w)
    ev = _scalar_eval(loop)
    logm = np.log(np.abs(L))
    crossings = []
    for i in np.flatnonzero(np.sign(logm[:-1]) != np.sign(logm[1:])):
        if logm[i] == 0.0:
            wc = w[i]
        else:
            wc = brentq(lambda x: math.log(abs(ev(x))), w[i], w[i + 1], xtol=1e-14, rtol=1e-10)
        pm = 180.0 + math.degrees(cmath.phase(ev(wc)))
        pm = pm - 360.0 if pm > 180.0 else pm
        crossings.append(Crossover(float(wc), float(pm)))

    # gain margin from the phase crossing with the largest loop gain
    gm = None
    im = L.imag
    cand = np.flatnonzero((np.sign(im[:-1]) != np.sign(im[1:])) & (L.real[:-1] < 0))
    if cand.size:
        mag = np.maximum(np.abs(L[cand]), np.abs(L[cand + 1]))
        for i in cand[mag >= 0.5 * mag.max()]:
            wp = brentq(lambda x: ev(x).imag, w[i], w[i + 1], xtol=1e-14, rtol=1e-10)
            val = ev(wp)
            if val.real < 0:
                g = -20.0 * math.log10(abs(val))
                gm = g if gm is None else min(gm, g)

    z, _ = nyquist_rhp_count(loop, w)
    poles = tf_poles(loop)
    worst = min((c.phase_margin for c in crossings), default=None)
    return MarginReport(
        crossovers=tuple(crossings),
        gain_margin_db=None if gm is None else float(gm),
        stable=z == 0,
        worst_pm=worst,
        closed_loop_rhp=z,
        open_loop_rhp=int(np.sum(poles.real > 1e-12 * max(1.0, float(np.max(np.abs(poles))) if poles.size else 1.0))),
    )


def ensemble_plants(
    spec: EnsembleSpec,
    actuator: ActuatorParams,
    springloop: SpringLoopConfig,
    alpha: float,
):
    """Yield ``(index, K_h, B_h, M_e, r, P_alpha)`` over the grid in sweep order."""
    for i, (K_h, M_e, r) in enumerate(spec.points()):
        B_h = human_damping_from_zeta(K_h, spec.M_h, M_e, spec.zeta)
        lin = reflect_to_linear(HumanParams(K_h, B_h, spec.M_h), ExoParams.loaded(M_e, r, spec.M_e_bar))
        yield i, float(K_h), B_h, float(M_e), float(r), amplification_plant(lin, actuator, springloop, alpha, spec.delay_s)


def _member(args):
    i, K_h, B_h, M_e, r, plant, controller, grid = args
    return EnsembleMember(i, K_h, B_h, M_e, r, margins(open_loop(plant, controller), grid))


def ensemble_sweep(
    spec: EnsembleSpec,
    actuator: ActuatorParams,
    springloop: SpringLoopConfig,
    ampcfg: AmplifierConfig,
    omega_grid=None,
    workers: int = 1,
) -> list[EnsembleMember]:
    """Margins of ``C_alpha P_alpha`` at every grid point, in grid order."""
    controller = make_amplification_controller(ampcfg)
    grid = default_grid() if omega_grid is None else _check_grid(omega_grid)
    jobs = [(*item, controller, grid) for item in ensemble_plants(spec, actuator, springloop, ampcfg.alpha)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_member, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [_member(job) for job in jobs]


def expected_amplification(
    ampcfg: AmplifierConfig,
    P_s: TransferFunction,
    omega: float,
) -> complex:
    """Model prediction of ``-f_s/f_c``: ``(alpha-1) L/(1+L)`` with ``L = C_alpha P_s``.

    ``omega = 0`` returns the static value; the ideal integrator then gives
    exactly ``alpha - 1``.
    """
    C = make_amplification_controller(ampcfg)
    if omega == 0.0:
        if ampcfg.p == 0.0:
            return complex(ampcfg.alpha - 1.0)
        L = C.dcgain() * P_s.dcgain()
    else:
        L = complex(C.freqresp([omega])[0] * P_s.freqresp([omega])[0])
    if abs(1.0 + L) < 1e-12 * max(1.0, abs(L)):
        raise DegenerateLoop(f"1 + C_alpha P_s vanishes at omega={omega}")
    return complex((ampcfg.alpha - 1.0) * L / (1.0 + L))


def spring_force_plant(
    human: HumanParams,
    exo: ExoParams,
    actuator: ActuatorParams,
    springloop: SpringLoopConfig,
    delay_s: float = 0.0,
) -> TransferFunction:
    """``P_s`` for one operating point with the loop delay attached."""
    lin = reflect_to_linear(human, exo)
    return force_plant_dob(lin, actuator, springloop).with_delay(delay_s)

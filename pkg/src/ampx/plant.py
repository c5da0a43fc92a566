"""Physical impedances and designed plants of the human-exoskeleton-SEA system.

Human and exoskeleton parameters are given in rotary joint space and
reflected into the linear actuator space through a transmission ratio
``r`` (metres per radian at the operating point).  All plant constructors
clear denominators by hand so the returned transfer functions carry no
spurious common factors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import NonPositiveRatio, ZeroStiffness
from .lti import Polynomial, TransferFunction

__all__ = [
    "HumanParams",
    "ExoParams",
    "ActuatorParams",
    "SpringLoopConfig",
    "LinearParams",
    "CharacteristicFrequencies",
    "TESTBED_ACTUATOR",
    "reflect_to_linear",
    "impedance_human",
    "impedance_exo",
    "impedance_spring",
    "impedance_motor",
    "virtual_spring",
    "spring_controller",
    "force_plant_open",
    "dob_q_filter",
    "force_plant_dob",
    "amplification_plant",
    "amplification_plant_approx",
    "characteristic_frequencies",
    "human_damping_from_zeta",
]


@dataclass(frozen=True)
class HumanParams:
    """Elbow stiffness (Nm/rad), damping (Nms/rad) and forearm inertia (kg m^2)."""

    K_h: float
    B_h: float
    M_h: float

    def __post_init__(self):
        if min(self.K_h, self.B_h) < 0 or not self.M_h > 0:
            raise ValueError(f"human parameters must be nonnegative with M_h > 0, got {self}")

    @classmethod
    def from_zeta(cls, K_h: float, M_h: float, M_e: float, zeta: float) -> "HumanParams":
        return cls(K_h, human_damping_from_zeta(K_h, M_h, M_e, zeta), M_h)


@dataclass(frozen=True)
class ExoParams:
    """Exoskeleton and load inertias (kg m^2) and transmission ratio ``r`` (m)."""

    M_e_bar: float
    M_e_tilde: float = 0.0
    r: float = 0.015

    def __post_init__(self):
        if not self.M_e_bar > 0 or self.M_e_tilde < 0:
            raise ValueError(f"need M_e_bar > 0 and M_e_tilde >= 0, got {self}")
        if not self.r > 0:
            raise NonPositiveRatio(f"transmission ratio must be positive, got r={self.r}")

    @property
    def M_e(self) -> float:
        return self.M_e_bar + self.M_e_tilde

    @classmethod
    def loaded(cls, M_e: float, r: float, M_e_bar: float = 0.1) -> "ExoParams":
        """Split a total loaded inertia into exoskeleton and load parts."""
        M_e_bar = min(M_e_bar, M_e)
        return cls(M_e_bar, M_e - M_e_bar, r)


@dataclass(frozen=True)
class ActuatorParams:
    """Series spring stiffness (N/m), reflected motor mass (kg) and damping (Ns/m)."""

    k_s: float
    m_a: float
    b_a: float

    def __post_init__(self):
        if not (self.k_s > 0 and self.m_a > 0 and self.b_a > 0):
            raise ValueError(f"actuator parameters must be positive, got {self}")


TESTBED_ACTUATOR = ActuatorParams(k_s=796958.0, m_a=250.0, b_a=4500.0)


@dataclass(frozen=True)
class SpringLoopConfig:
    """Virtual spring stiffness/damping and disturbance-observer filter.

    ``q_order`` is the Butterworth order of the observer low-pass Q.
    """

    k_ss: float
    b_ss: float
    q_cutoff_hz: float = 40.0
    q_order: int = 2

    def __post_init__(self):
        if not (self.k_ss > 0 and self.b_ss > 0 and self.q_cutoff_hz > 0):
            raise ValueError(f"spring loop gains and Q cutoff must be positive, got {self}")
        if self.q_order not in (2, 3, 4):
            raise ValueError(f"q_order must be 2, 3 or 4, got {self.q_order}")

    @classmethod
    def from_actuator(
        cls,
        a: ActuatorParams,
        stiffness_scale: float = 2.0,
        damping_scale: float = 0.039,
        q_cutoff_hz: float = 40.0,
        q_order: int = 2,
    ) -> "SpringLoopConfig":
        """``k_ss = stiffness_scale*k_s`` and ``b_ss = damping_scale*k_s`` (seconds)."""
        return cls(stiffness_scale * a.k_s, damping_scale * a.k_s, q_cutoff_hz, q_order)


@dataclass(frozen=True)
class LinearParams:
    m_h: float
    b_h: float
    k_h: float
    m_e_bar: float
    m_e_tilde: float
    m_e: float

    @property
    def m_total(self) -> float:
        return self.m_h + self.m_e


@dataclass(frozen=True)
class CharacteristicFrequencies:
    omega_h: float
    omega_he: float
    omega_ahe: float
    omega_ssa: float
    zeta_he: float


def reflect_to_linear(h: HumanParams, e: ExoParams) -> LinearParams:
    """Divide every rotary inertia, damping and stiffness by ``r**2``."""
    if not e.r > 0:
        raise NonPositiveRatio(f"transmission ratio must be positive, got r={e.r}")
    r2 = e.r**2
    m_e_bar = e.M_e_bar / r2
    m_e_tilde = e.M_e_tilde / r2
    return LinearParams(
        m_h=h.M_h / r2,
        b_h=h.B_h / r2,
        k_h=h.K_h / r2,
        m_e_bar=m_e_bar,
        m_e_tilde=m_e_tilde,
        m_e=m_e_bar + m_e_tilde,
    )


def _tf(num, den, delay_s=0.0) -> TransferFunction:
    return TransferFunction(Polynomial(num), Polynomial(den), delay_s)


def impedance_human(p: LinearParams) -> TransferFunction:
    """``Z_h = m_h s + b_h + k_h/s`` (improper)."""
    return _tf([p.k_h, p.b_h, p.m_h], [0.0, 1.0])


def impedance_exo(p: LinearParams) -> tuple[TransferFunction, TransferFunction, TransferFunction]:
    """Unloaded exoskeleton, load and loaded exoskeleton impedances (pure masses)."""
    return (
        _tf([0.0, p.m_e_bar], [1.0]),
        _tf([0.0, p.m_e_tilde], [1.0]),
        _tf([0.0, p.m_e], [1.0]),
    )


def impedance_spring(a: ActuatorParams) -> TransferFunction:
    return _tf([a.k_s], [0.0, 1.0])


def impedance_motor(a: ActuatorParams) -> TransferFunction:
    return _tf([a.b_a, a.m_a], [1.0])


def virtual_spring(cfg: SpringLoopConfig) -> TransferFunction:
    """``Z_ss = b_ss + k_ss/s``, the spring as reshaped by the PD spring loop."""
    return _tf([cfg.k_ss, cfg.b_ss], [0.0, 1.0])


def spring_controller(a: ActuatorParams, cfg: SpringLoopConfig) -> TransferFunction:
    """PD spring-force controller ``C_s`` satisfying ``Z_s (1 + C_s) = Z_ss``."""
    return _tf([(cfg.k_ss - a.k_s) / a.k_s, cfg.b_ss / a.k_s], [1.0])


def _human_exo_poly(p: LinearParams, alpha: float = 1.0) -> Polynomial:
    # s * (alpha Z_h + Z_e)
    return Polynomial([alpha * p.k_h, alpha * p.b_h, alpha * p.m_h + p.m_e])


def force_plant_open(p: LinearParams, a: ActuatorParams) -> TransferFunction:
    """Spring force over motor force with the human-exoskeleton load attached."""
    n_he = _human_exo_poly(p)
    motor = Polynomial([0.0, a.b_a, a.m_a])  # s * Z_a
    num = n_he * a.k_s
    den = n_he * a.k_s + (n_he + Polynomial([a.k_s])) * motor
    return TransferFunction(num, den)


def dob_q_filter(cfg: SpringLoopConfig) -> TransferFunction:
    """Unity-DC analog Butterworth low-pass of the configured order and cutoff."""
    wc = 2.0 * np.pi * cfg.q_cutoff_hz
    b, a = signal.butter(cfg.q_order, wc, btype="low", analog=True)
    # scipy returns descending powers
    num = np.asarray(b, dtype=float)[::-1]
    den = np.asarray(a, dtype=float)[::-1]
    num = num * (den[0] / num[0])
    return TransferFunction(Polynomial(num), Polynomial(den))


def _dob_denominator(p: LinearParams, a: ActuatorParams, cfg: SpringLoopConfig, q: TransferFunction):
    """Common denominator of P_s and P_alpha, multiplied through by ``s**2 * den(Q)``."""
    n_he = _human_exo_poly(p)
    zss = Polynomial([cfg.k_ss, cfg.b_ss])
    motor = Polynomial([0.0, a.b_a, a.m_a])
    dq, nq = q.den, q.num
    return n_he * (zss + motor) * dq + (dq - nq) * motor * a.k_s


def force_plant_dob(
    p: LinearParams,
    a: ActuatorParams,
    cfg: SpringLoopConfig,
    q: TransferFunction | None = None,
) -> TransferFunction:
    """Spring force over the observer command, ``P_s = f_s/f_d``.

    ``q`` overrides the observer filter; ``TransferFunction.constant(0)``
    switches the observer off and yields the bare closed spring loop.
    """
    q = dob_q_filter(cfg) if q is None else q
    zss = Polynomial([cfg.k_ss, cfg.b_ss])
    num = _human_exo_poly(p) * zss * q.den
    return TransferFunction(num, _dob_denominator(p, a, cfg, q))


def amplification_plant(
    p: LinearParams,
    a: ActuatorParams,
    cfg: SpringLoopConfig,
    alpha: float,
    delay_s: float = 0.0,
    q: TransferFunction | None = None,
) -> TransferFunction:
    """Amplification error over the observer command, ``P_alpha = f_alpha/f_d``.

    The single lumped loop delay is attached here.  DC gain is exactly
    ``alpha``.
    """
    if alpha < 1:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    q = dob_q_filter(cfg) if q is None else q
    zss = Polynomial([cfg.k_ss, cfg.b_ss])
    num = _human_exo_poly(p, alpha) * zss * q.den
    return TransferFunction(num, _dob_denominator(p, a, cfg, q), delay_s)


def amplification_plant_approx(
    p: LinearParams,
    a: ActuatorParams,
    cfg: SpringLoopConfig,
    alpha: float,
    delay_s: float = 0.0,
) -> TransferFunction:
    """``P_alpha`` with the observer assumed ideal: ``Z_ahe Z_ss / (Z_he Z_ssa)``."""
    if alpha < 1:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    zss = Polynomial([cfg.k_ss, cfg.b_ss])
    zssa = Polynomial([cfg.k_ss, cfg.b_ss + a.b_a, a.m_a])
    return TransferFunction(_human_exo_poly(p, alpha) * zss, _human_exo_poly(p) * zssa, delay_s)


def characteristic_frequencies(
    p: LinearParams, a: ActuatorParams, cfg: SpringLoopConfig, alpha: float
) -> CharacteristicFrequencies:
    if p.k_h <= 0:
        raise ZeroStiffness("natural frequencies are undefined without human stiffness")
    return CharacteristicFrequencies(
        omega_h=float(np.sqrt(p.k_h / p.m_h)),
        omega_he=float(np.sqrt(p.k_h / (p.m_e + p.m_h))),
        omega_ahe=float(np.sqrt(p.k_h / (p.m_e / alpha + p.m_h))),
        omega_ssa=float(np.sqrt(cfg.k_ss / a.m_a)),
        zeta_he=float(p.b_h / (2.0 * np.sqrt(p.k_h * (p.m_h + p.m_e)))),
    )


def human_damping_from_zeta(K_h: float, M_h: float, M_e: float, zeta: float) -> float:
    """Rotary damping that gives the human + loaded exoskeleton damping ratio ``zeta``."""
    return float(2.0 * zeta * np.sqrt(K_h * (M_h + M_e)))

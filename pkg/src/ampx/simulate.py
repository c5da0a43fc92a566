"""Time-domain simulation of the amplification loop.

The plant (human + exoskeleton, SEA, PD spring-force loop and disturbance
observer) is a linear state-space block assembled numerically from its
interconnection equations.  The amplification controller and the lumped
loop delay live in a compiled fixed-step RK4 kernel: the delayed
amplification error is read from a ring buffer with first-order-hold
interpolation between samples, which also provides the derivative the
PD spring loop needs.

Sign conventions (linear actuator space)::

    f_s = k_s (x_a - x_e)                      spring force on the exoskeleton
    (m_h + m_e) a_e = f_s - b_h v_e - k_h x_e + u_h + f_ext
    f_c = m_h a_e + b_h v_e + k_h x_e - u_h    contact force
    f_alpha = (alpha - 1) f_c + f_s
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .control import AmplifierConfig
from .errors import ConfigInconsistent, InsufficientData, NoFlatRegion, NumericalBlowup, RankDeficient
from .lti import Polynomial, TransferFunction, to_state_space
from .plant import (
    TESTBED_ACTUATOR,
    ActuatorParams,
    ExoParams,
    HumanParams,
    SpringLoopConfig,
    dob_q_filter,
    reflect_to_linear,
)

__all__ = [
    "ClosedLoopSystem",
    "ExperimentSpec",
    "SimTrace",
    "AmplificationMetrics",
    "StepMetrics",
    "HumanFit",
    "assemble",
    "run",
    "equilibrium",
    "amplification_metrics",
    "step_metrics",
    "fit_human_from_trace",
    "with_human",
    "exogenous",
    "chirp_phase",
    "INPUT_NAMES",
    "OUTPUT_NAMES",
]

INPUT_NAMES = ("f_d", "df_d", "u_h", "f_ext", "f_delta")
OUTPUT_NAMES = ("x_e", "v_e", "a_e", "x_a", "v_a", "f_s", "f_c", "f_r", "f_a", "f_alpha")


@dataclass(frozen=True)
class ClosedLoopSystem:
    """Plant matrices plus controller and delay settings.

    The plant block maps ``u = [f_d, df_d/dt, u_h, f_ext, f_delta]`` to
    ``OUTPUT_NAMES``.  ``state_names`` lists the plant states; the kernel
    appends the controller state ``xi`` after them.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    state_names: tuple
    human: HumanParams
    exo: ExoParams
    actuator: ActuatorParams
    springloop: SpringLoopConfig
    amplifier: AmplifierConfig
    delay_s: float
    dob: bool = True
    env_stiffness: float = 0.0
    spring_loop: bool = True

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def q_order(self) -> int:
        return self.springloop.q_order

    @property
    def r(self) -> float:
        return self.exo.r

    def delay_samples(self, dt: float) -> int:
        """Ring-buffer length for step ``dt``; at least one sample of latency."""
        return max(1, int(round(self.delay_s / dt)))

    def output_index(self, name: str) -> int:
        return OUTPUT_NAMES.index(name)

    def freqresp(self, omegas, output: str = "f_s", input: str = "f_d") -> np.ndarray:
        """Delay-free plant response from one input to one output.

        For ``input="f_d"`` the derivative channel is tied to it
        (``df_d = s f_d``), which is how the spring loop sees the command.
        """
        w = np.atleast_1d(np.asarray(omegas, dtype=float))
        j = INPUT_NAMES.index(input)
        i = self.output_index(output)
        eye = np.eye(self.n_states)
        out = np.empty(w.shape, dtype=complex)
        for k, wk in enumerate(w):
            s = 1j * wk
            b = self.B[:, j].astype(complex)
            d = complex(self.D[i, j])
            if input == "f_d":
                b = b + s * self.B[:, 1]
                d = d + s * self.D[i, 1]
            out[k] = self.C[i] @ np.linalg.solve(s * eye - self.A, b) + d
        return out


def _dob_filters(act: ActuatorParams, cfg: SpringLoopConfig):
    q = dob_q_filter(cfg)
    zssa = Polynomial([cfg.k_ss, cfg.b_ss + act.b_a, act.m_a])
    zss = Polynomial([cfg.k_ss, cfg.b_ss])
    qz = TransferFunction(q.num * zssa, q.den * zss)
    return to_state_space(q), to_state_space(qz)


def assemble(
    human: HumanParams,
    exo: ExoParams,
    actuator: ActuatorParams = TESTBED_ACTUATOR,
    springloop: SpringLoopConfig | None = None,
    amplifier: AmplifierConfig | None = None,
    delay_s: float = 0.006,
    *,
    dob: bool = True,
    env_stiffness: float = 0.0,
    spring_loop: bool = True,
) -> ClosedLoopSystem:
    """Build the plant block of the amplification loop.

    Parameters
    ----------
    human, exo : joint-space parameters, reflected through ``exo.r``.
    actuator, springloop : SEA and inner-loop settings.
    amplifier : PI amplification controller; ``None`` uses the defaults.
    delay_s : lumped loop delay in front of the controller.
    dob : switch the disturbance observer off to get the bare spring loop.
    env_stiffness : optional linear environment spring on the joint (Nm/rad).
    spring_loop : with ``False`` the motor force equals ``f_r`` and the
        actuator is a passive mass-damper; requires ``dob=False``.
    """
    springloop = SpringLoopConfig.from_actuator(actuator) if springloop is None else springloop
    amplifier = AmplifierConfig() if amplifier is None else amplifier
    if not (np.isfinite(delay_s) and delay_s >= 0):
        raise ConfigInconsistent(f"delay must be finite and nonnegative, got {delay_s}")
    if not (np.isfinite(env_stiffness) and env_stiffness >= 0):
        raise ConfigInconsistent(f"environment stiffness must be nonnegative, got {env_stiffness}")
    for obj, kind in (
        (human, HumanParams),
        (exo, ExoParams),
        (actuator, ActuatorParams),
        (springloop, SpringLoopConfig),
        (amplifier, AmplifierConfig),
    ):
        if not isinstance(obj, kind):
            raise ConfigInconsistent(f"expected {kind.__name__}, got {type(obj).__name__}")
    if dob and not spring_loop:
        raise ConfigInconsistent("the disturbance observer needs the spring loop")

    lin = reflect_to_linear(human, exo)
    ssq, ssqz = _dob_filters(actuator, springloop)
    if ssq.D != 0.0 or ssqz.D != 0.0:
        raise ConfigInconsistent("observer filters must be strictly proper")
    n1, n2 = ssq.order, ssqz.order
    k_env = env_stiffness / exo.r**2
    ks, ma, ba = actuator.k_s, actuator.m_a, actuator.b_a
    c0 = (springloop.k_ss - ks) / ks
    c1 = springloop.b_ss / ks
    mt = lin.m_total
    alpha = amplifier.alpha
    use_dob = 1.0 if dob else 0.0
    use_pd = 1.0 if spring_loop else 0.0

    def step(x, u):
        xe, ve, xa, va = x[:4]
        q1 = x[4 : 4 + n1]
        qz = x[4 + n1 :]
        fd, dfd, uh, fext, fdel = u
        fs = ks * (xa - xe)
        ae = (fs - lin.b_h * ve - (lin.k_h + k_env) * xe + uh + fext) / mt
        fc = lin.m_h * ae + lin.b_h * ve + lin.k_h * xe - uh
        w = use_dob * (ssq.C[0] @ q1 - ssqz.C[0] @ qz)
        fr = fd + w
        dq1 = ssq.A @ q1 + ssq.B[:, 0] * fr
        dqz = ssqz.A @ qz + ssqz.B[:, 0] * fs
        dw = use_dob * (ssq.C[0] @ dq1 - ssqz.C[0] @ dqz)
        e = fr - fs
        de = dfd + dw - ks * (va - ve)
        fa = fr + use_pd * (c0 * e + c1 * de)
        aa = (fa + fdel - fs - ba * va) / ma
        xdot = np.concatenate([[ve, ae, va, aa], dq1, dqz])
        y = np.array([xe, ve, ae, xa, va, fs, fc, fr, fa, (alpha - 1.0) * fc + fs])
        return xdot, y

    n = 4 + n1 + n2
    m = len(INPUT_NAMES)
    A = np.empty((n, n))
    C = np.empty((len(OUTPUT_NAMES), n))
    B = np.empty((n, m))
    D = np.empty((len(OUTPUT_NAMES), m))
    zu, zx = np.zeros(m), np.zeros(n)
    for i in range(n):
        A[:, i], C[:, i] = step(np.eye(n)[i], zu)
    for j in range(m):
        B[:, j], D[:, j] = step(zx, np.eye(m)[j])
    names = ("x_e", "v_e", "x_a", "v_a") + tuple(f"q{i}" for i in range(n1)) + tuple(f"qz{i}" for i in range(n2))
    return ClosedLoopSystem(
        A, B, C, D, names, human, exo, actuator, springloop, amplifier, float(delay_s), dob, float(env_stiffness),
        spring_loop,
    )


@dataclass(frozen=True)
class ExperimentSpec:
    """One simulated experiment.

    Torques are joint-space (Nm), angles in rad, and the external and
    environmental forces are converted through ``r`` at run time.

    kind
        ``step_release``: an external spring pre-tensioned to
        ``step_torque`` is released at ``release_time``.
        ``tracking``: the human equilibrium follows a ``trapezoid`` or
        ``sinusoid`` waveform of ``amplitude`` rad at ``frequency`` Hz
        against a constant ``bias_torque`` (load weight).
        ``chirp``: exponential chirp torque command of ``amplitude`` Nm
        from ``chirp_f0`` to ``chirp_f1`` Hz with the amplification
        controller bypassed.
        ``idle``: no excitation.
    """

    kind: str = "step_release"
    duration: float = 5.0
    dt: float = 1e-4
    sample_rate: float = 1000.0
    step_torque: float = 5.0
    release_time: float = 0.5
    waveform: str = "trapezoid"
    amplitude: float = 0.5
    frequency: float | None = None
    bias_torque: float = 0.0
    chirp_f0: float = 0.1
    chirp_f1: float = 20.0
    disturbance_amplitude: float = 0.0
    disturbance_frequency: float = 0.5
    saturation: float | None = None
    controller: bool = True
    state_bound: float = 1e6

    def __post_init__(self):
        if self.kind not in ("step_release", "tracking", "chirp", "idle"):
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.waveform not in ("trapezoid", "sinusoid"):
            raise ValueError(f"unknown waveform {self.waveform!r}")
        if not self.duration > 0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        if not 0 < self.dt <= 1e-3:
            raise ValueError(f"dt must lie in (0, 1e-3], got {self.dt}")
        decim = 1.0 / (self.sample_rate * self.dt)
        if not (decim >= 1 and abs(decim - round(decim)) < 1e-9):
            raise ValueError("sample_rate must divide 1/dt into an integer decimation")
        if self.saturation is not None and not self.saturation > 0:
            raise ValueError("saturation must be positive when given")
        if not 0 < self.chirp_f0 < self.chirp_f1 < self.sample_rate / 2:
            raise ValueError("chirp needs 0 < f0 < f1 < sample_rate/2")
        if self.frequency is not None and not self.frequency > 0:
            raise ValueError("frequency must be positive")

    @property
    def waveform_frequency(self) -> float:
        if self.frequency is not None:
            return self.frequency
        return 0.1 if self.waveform == "trapezoid" else 1.0

    @property
    def decimation(self) -> int:
        return int(round(1.0 / (self.sample_rate * self.dt)))


def _trapezoid(t, f):
    """Unit trapezoid with raised-cosine ramps: rise 20%, high 30%, fall 20%, low 30%."""
    ph = np.mod(t * f, 1.0)
    y = np.zeros_like(ph)
    rise = ph < 0.2
    y[rise] = 0.5 * (1.0 - np.cos(np.pi * ph[rise] / 0.2))
    y[(ph >= 0.2) & (ph < 0.5)] = 1.0
    fall = (ph >= 0.5) & (ph < 0.7)
    y[fall] = 0.5 * (1.0 + np.cos(np.pi * (ph[fall] - 0.5) / 0.2))
    return y


def _sinusoid(t, f):
    # amplitude ramps in over the first period so the run starts at rest
    env = np.where(t < 1.0 / f, 0.5 * (1.0 - np.cos(np.pi * t * f)), 1.0)
    return env * np.sin(2.0 * np.pi * f * t)


def chirp_phase(t, f0: float, f1: float, T: float):
    """Phase of an exponential sweep with instantaneous frequency ``f0 (f1/f0)**(t/T)``."""
    k = math.log(f1 / f0)
    return 2.0 * np.pi * f0 * T / k * (np.exp(k * np.asarray(t) / T) - 1.0)


def _human_target(exp: ExperimentSpec, t):
    if exp.kind != "tracking":
        return np.zeros_like(t)
    f = exp.waveform_frequency
    shape = _trapezoid(t, f) if exp.waveform == "trapezoid" else _sinusoid(t, f)
    return exp.amplitude * shape


def _torque_command(exp: ExperimentSpec, t):
    if exp.kind != "chirp":
        return np.zeros_like(t)
    return exp.amplitude * np.sin(chirp_phase(t, exp.chirp_f0, exp.chirp_f1, exp.duration))


def exogenous(sys: ClosedLoopSystem, exp: ExperimentSpec, t) -> np.ndarray:
    """Columns ``[f_ff, df_ff, u_h, f_ext, f_delta]`` in linear space at times ``t``."""
    t = np.asarray(t, dtype=float)
    r = sys.r
    lin = reflect_to_linear(sys.human, sys.exo)
    out = np.zeros((t.size, 5))
    h1, h2 = 1e-5, 1e-4
    if exp.kind == "chirp":
        out[:, 0] = _torque_command(exp, t) / r
        out[:, 1] = (_torque_command(exp, t + h1) - _torque_command(exp, t - h1)) / (2 * h1 * r)
    if exp.kind == "tracking":
        xh = _human_target(exp, t) * r
        xp = _human_target(exp, t + h2) * r
        xm = _human_target(exp, t - h2) * r
        out[:, 2] = lin.m_h * (xp - 2 * xh + xm) / h2**2 + lin.b_h * (xp - xm) / (2 * h2) + lin.k_h * xh
    f_ext = np.full(t.size, exp.bias_torque / r)
    if exp.kind == "step_release":
        f_ext += np.where(t < exp.release_time, exp.step_torque / r, 0.0)
    out[:, 3] = f_ext
    if exp.disturbance_amplitude:
        out[:, 4] = exp.disturbance_amplitude * np.sign(np.sin(2 * np.pi * exp.disturbance_frequency * t))
    return out


def _controller_gains(sys: ClosedLoopSystem, enabled: bool):
    a = sys.amplifier
    return np.array([a.k_p, a.z, a.p, 1.0 if enabled else 0.0])


def equilibrium(sys: ClosedLoopSystem, ex0, controller: bool = True):
    """Rest state ``(x, xi, f_d)`` under constant exogenous values ``ex0``.

    ``ex0`` follows the exogenous channel order; its derivative entry is
    ignored.
    """
    ff, _, uh, fext, fdel = (float(v) for v in ex0)
    n = sys.n_states
    a = sys.amplifier
    ia = sys.output_index("f_alpha")
    Ca, Da = sys.C[ia], sys.D[ia]
    uo = np.array([0.0, 0.0, uh, fext, fdel])
    # unknowns: x (n), xi, f_d
    M = np.zeros((n + 2, n + 2))
    rhs = np.zeros(n + 2)
    M[:n, :n] = sys.A
    M[:n, n + 1] = sys.B[:, 0]
    rhs[:n] = -sys.B @ uo
    if controller:
        # -p xi + k_p (z - p) e = 0 with e = -f_alpha
        g = a.k_p * (a.z - a.p)
        M[n, :n] = -g * Ca
        M[n, n] = -a.p
        M[n, n + 1] = -g * Da[0]
        rhs[n] = g * (Da @ uo)
        # f_d - xi - k_p e = f_ff
        M[n + 1, :n] = a.k_p * Ca
        M[n + 1, n] = -1.0
        M[n + 1, n + 1] = 1.0 + a.k_p * Da[0]
        rhs[n + 1] = ff - a.k_p * (Da @ uo)
    else:
        M[n, n] = 1.0
        M[n + 1, n + 1] = 1.0
        rhs[n + 1] = ff
    sol = np.linalg.solve(M, rhs)
    return sol[:n], float(sol[n]), float(sol[n + 1])


@numba.njit(cache=True)
def _deriv(A, B, x, xi, ex, ea, eb, th, dt, ctrl, sat, ma, va_idx, fa_row_c, fa_row_d, xdot):
    kp, zc, pc, on = ctrl[0], ctrl[1], ctrl[2], ctrl[3]
    eps = -(ea + th * (eb - ea))
    deps = -(eb - ea) / dt
    if on > 0.0:
        dxi = -pc * xi + kp * (zc - pc) * eps
        fd = xi + kp * eps + ex[0]
        dfd = dxi + kp * deps + ex[1]
    else:
        dxi = 0.0
        fd = ex[0]
        dfd = ex[1]
    n = A.shape[0]
    for i in range(n):
        acc = B[i, 0] * fd + B[i, 1] * dfd + B[i, 2] * ex[2] + B[i, 3] * ex[3] + B[i, 4] * ex[4]
        for j in range(n):
            acc += A[i, j] * x[j]
        xdot[i] = acc
    if sat > 0.0:
        fa = fa_row_d[0] * fd + fa_row_d[1] * dfd + fa_row_d[2] * ex[2] + fa_row_d[3] * ex[3] + fa_row_d[4] * ex[4]
        for j in range(n):
            fa += fa_row_c[j] * x[j]
        if fa > sat:
            xdot[va_idx] += (sat - fa) / ma
        elif fa < -sat:
            xdot[va_idx] += (-sat - fa) / ma
    return dxi, fd, dfd


@numba.njit(cache=True)
def _outputs(C, D, x, fd, dfd, ex, y):
    for i in range(C.shape[0]):
        acc = D[i, 0] * fd + D[i, 1] * dfd + D[i, 2] * ex[2] + D[i, 3] * ex[3] + D[i, 4] * ex[4]
        for j in range(C.shape[1]):
            acc += C[i, j] * x[j]
        y[i] = acc


@numba.njit(cache=True)
def _rk4_chunk(A, B, C, D, x, xi, ring, k0, nd, ex, n_steps, dt, decim, ctrl, sat, ma, va_idx, ia, rec, rec_pos, bound):
    """Advance ``n_steps`` RK4 steps starting at global step ``k0``.

    ``ex`` holds exogenous values on the half-step grid of this chunk.
    Returns ``(xi, rec_pos, steps_done, blown)``; ``x`` and ``ring`` are
    updated in place.
    """
    n = A.shape[0]
    L = nd + 1
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    xt = np.empty(n)
    y = np.empty(C.shape[0])
    fa_c = C[ia]
    fa_d = D[ia]
    fa_rc = C[C.shape[0] - 2]  # f_a row sits just before f_alpha
    fa_rd = D[D.shape[0] - 2]
    for s in range(n_steps):
        k = k0 + s
        ea = ring[(k - nd) % L]
        eb = ring[(k - nd + 1) % L]
        e0 = ex[2 * s]
        e1 = ex[2 * s + 1]
        e2 = ex[2 * s + 2]
        d1, fd0, dfd0 = _deriv(A, B, x, xi, e0, ea, eb, 0.0, dt, ctrl, sat, ma, va_idx, fa_rc, fa_rd, k1)
        if k % decim == 0 and rec_pos < rec.shape[0]:
            _outputs(C, D, x, fd0, dfd0, e0, y)
            rec[rec_pos, 0] = k * dt
            for i in range(y.shape[0]):
                rec[rec_pos, 1 + i] = y[i]
            rec[rec_pos, 1 + y.shape[0]] = fd0
            rec[rec_pos, 2 + y.shape[0]] = xi
            for i in range(5):
                rec[rec_pos, 3 + y.shape[0] + i] = e0[i]
            rec_pos += 1
        for i in range(n):
            xt[i] = x[i] + 0.5 * dt * k1[i]
        d2, _, _ = _deriv(A, B, xt, xi + 0.5 * dt * d1, e1, ea, eb, 0.5, dt, ctrl, sat, ma, va_idx, fa_rc, fa_rd, k2)
        for i in range(n):
            xt[i] = x[i] + 0.5 * dt * k2[i]
        d3, _, _ = _deriv(A, B, xt, xi + 0.5 * dt * d2, e1, ea, eb, 0.5, dt, ctrl, sat, ma, va_idx, fa_rc, fa_rd, k3)
        for i in range(n):
            xt[i] = x[i] + dt * k3[i]
        d4, _, _ = _deriv(A, B, xt, xi + dt * d3, e2, ea, eb, 1.0, dt, ctrl, sat, ma, va_idx, fa_rc, fa_rd, k4)
        blown = False
        for i in range(n):
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if not (abs(x[i]) <= bound):
                blown = True
        xi += dt / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
        if not (abs(xi) <= bound):
            blown = True
        # amplification error at the new step, pushed into the delay line
        ea1 = eb
        eb1 = ring[(k + 2 - nd) % L] if nd > 1 else eb
        _, fd1, dfd1 = _deriv(A, B, x, xi, e2, ea1, eb1, 0.0, dt, ctrl, 0.0, ma, va_idx, fa_rc, fa_rd, xt)
        acc = fa_d[0] * fd1 + fa_d[1] * dfd1 + fa_d[2] * e2[2] + fa_d[3] * e2[3] + fa_d[4] * e2[4]
        for j in range(n):
            acc += fa_c[j] * x[j]
        ring[(k + 1) % L] = acc
        if blown:
            return xi, rec_pos, s + 1, True
    return xi, rec_pos, n_steps, False


@dataclass
class SimTrace:
    """Sampled simulation record.

    ``theta_e``, ``tau_s``, ``tau_c`` and ``tau_d`` are joint-space views of
    the linear signals in ``linear`` (``tau = f * r``, ``theta = x / r``).
    """

    t: np.ndarray
    theta_e: np.ndarray
    tau_s: np.ndarray
    tau_c: np.ndarray
    tau_d: np.ndarray
    f_d: np.ndarray
    linear: dict
    r: float
    verdict: str = "ok"
    meta: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else float("nan")

    @property
    def theta_e_dot(self) -> np.ndarray:
        if "v_e" in self.linear:
            return self.linear["v_e"] / self.r
        return np.gradient(self.theta_e, self.t)

    def columns(self) -> tuple[list[str], np.ndarray]:
        names = ["t_s", "theta_e_rad", "tau_s_Nm", "tau_c_Nm", "tau_d_Nm", "f_d_N"]
        cols = [self.t, self.theta_e, self.tau_s, self.tau_c, self.tau_d, self.f_d]
        for key, arr in self.linear.items():
            names.append(f"{key}_{_LINEAR_UNITS.get(key, '1')}")
            cols.append(arr)
        return names, np.column_stack(cols) if cols[0].size else np.zeros((0, len(cols)))

    def to_csv(self, path, header_comment: str | None = None) -> None:
        names, table = self.columns()
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for row in table:
                w.writerow(["%.17g" % v for v in row])


_LINEAR_UNITS = {
    "x_e": "m",
    "v_e": "m_s",
    "a_e": "m_s2",
    "x_a": "m",
    "v_a": "m_s",
    "f_s": "N",
    "f_c": "N",
    "f_r": "N",
    "f_a": "N",
    "f_alpha": "N",
    "xi": "N",
    "u_h": "N",
    "f_ext": "N",
    "f_delta": "N",
}


def run(sys: ClosedLoopSystem, exp: ExperimentSpec, x0=None, chunk_steps: int = 50_000, raise_on_blowup=False) -> SimTrace:
    """Integrate one experiment with fixed-step RK4.

    The run starts from the equilibrium of the initial exogenous values
    unless ``x0`` (plant state) is given.  When a state exceeds
    ``exp.state_bound`` the partial trace is returned with
    ``verdict="unstable"``; pass ``raise_on_blowup=True`` to get
    :class:`NumericalBlowup` instead.
    """
    dt = exp.dt
    n_total = int(round(exp.duration / dt))
    nd = sys.delay_samples(dt)
    decim = exp.decimation
    ctrl = _controller_gains(sys, exp.controller and exp.kind != "chirp")
    ex_start = exogenous(sys, exp, np.array([0.0]))[0]
    ex_start[1] = 0.0
    if x0 is None:
        x, xi, fd0 = equilibrium(sys, ex_start, ctrl[3] > 0)
        x = x.copy()
    else:
        x = np.array(x0, dtype=float)
        xi, fd0 = 0.0, ex_start[0]
    ia = sys.output_index("f_alpha")
    # the delay line starts filled with the initial amplification error
    y0 = np.empty(len(OUTPUT_NAMES))
    _outputs(sys.C, sys.D, x, fd0, 0.0, ex_start, y0)
    ring = np.full(nd + 1, y0[ia] if ctrl[3] > 0 else 0.0)
    n_rec = n_total // decim + 1
    rec = np.full((n_rec, 3 + len(OUTPUT_NAMES) + 5), np.nan)
    rec_pos = 0
    k = 0
    blown = False
    A = np.ascontiguousarray(sys.A)
    B = np.ascontiguousarray(sys.B)
    C = np.ascontiguousarray(sys.C)
    D = np.ascontiguousarray(sys.D)
    sat = float(exp.saturation) if exp.saturation is not None else 0.0
    va_idx = sys.state_names.index("v_a")
    while k < n_total + 1 and not blown:
        m = min(chunk_steps, n_total + 1 - k)
        th = (k + 0.5 * np.arange(2 * m + 1)) * dt
        ex = np.ascontiguousarray(exogenous(sys, exp, th))
        xi, rec_pos, done, blown = _rk4_chunk(
            A, B, C, D, x, xi, ring, k, nd, ex, m, dt, decim, ctrl, sat, sys.actuator.m_a, va_idx, ia, rec, rec_pos,
            exp.state_bound,
        )
        k += done
    rec = rec[:rec_pos]
    if blown and raise_on_blowup:
        raise NumericalBlowup(f"state left the bound {exp.state_bound:g} at t={k * dt:.4f} s")
    ex_end = exogenous(sys, exp, np.array([exp.duration]))[0]
    ex_end[1] = 0.0
    x_end, _, _ = equilibrium(sys, ex_end, ctrl[3] > 0)
    y_end = sys.C @ x_end + sys.D @ np.array([0.0, 0.0, *ex_end[2:]])
    return _trace_from_record(sys, exp, rec, "unstable" if blown else "ok", y_end)


def _trace_from_record(sys, exp, rec, verdict, y_end) -> SimTrace:
    r = sys.r
    no = len(OUTPUT_NAMES)
    lin = {name: rec[:, 1 + i].copy() for i, name in enumerate(OUTPUT_NAMES)}
    f_d = rec[:, 1 + no].copy()
    lin["xi"] = rec[:, 2 + no].copy()
    lin["u_h"] = rec[:, 5 + no].copy()
    lin["f_ext"] = rec[:, 6 + no].copy()
    lin["f_delta"] = rec[:, 7 + no].copy()
    meta = {
        "kind": exp.kind,
        "r": r,
        "M_e": sys.exo.M_e,
        "M_h": sys.human.M_h,
        "K_h": sys.human.K_h,
        "B_h": sys.human.B_h,
        "alpha": sys.amplifier.alpha,
        "dt": exp.dt,
        "delay_samples": sys.delay_samples(exp.dt),
        "tau_c_final": float(y_end[sys.output_index("f_c")] * r),
        "tau_s_final": float(y_end[sys.output_index("f_s")] * r),
        "theta_e_final": float(y_end[sys.output_index("x_e")] / r),
    }
    if exp.kind == "step_release":
        meta["release_time"] = exp.release_time
    if exp.kind == "tracking":
        meta["frequency"] = exp.waveform_frequency
        meta["waveform"] = exp.waveform
    return SimTrace(
        t=rec[:, 0].copy(),
        theta_e=lin["x_e"] / r,
        tau_s=lin["f_s"] * r,
        tau_c=lin["f_c"] * r,
        tau_d=f_d * r,
        f_d=f_d,
        linear=lin,
        r=r,
        verdict=verdict,
        meta=meta,
    )


@dataclass(frozen=True)
class AmplificationMetrics:
    """Observed ``-tau_s/tau_c``: static ratio or complex ratio at one frequency."""

    kind: str
    gain: float
    phase_deg: float | None
    n_samples: int
    frequency_hz: float | None = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "gain": self.gain,
            "phase_deg": self.phase_deg,
            "n_samples": self.n_samples,
            "frequency_hz": self.frequency_hz,
        }


def amplification_metrics(
    trace: SimTrace,
    kind: str = "static",
    frequency: float | None = None,
    transient_s: float | None = None,
    flat_threshold: float = 0.02,
) -> AmplificationMetrics:
    """Observed amplification of a tracking trace.

    ``kind="static"`` averages ``-tau_s/tau_c`` (least squares through the
    origin) over flat-top samples where ``|dtheta_e/dt|`` is below
    ``flat_threshold`` times its peak.  ``kind="dynamic"`` fits
    ``c + a cos(wt) + b sin(wt)`` to both torques over whole periods after
    the transient and returns the complex ratio.
    """
    t = trace.t
    if kind not in ("static", "dynamic"):
        raise ValueError(f"kind must be 'static' or 'dynamic', got {kind!r}")
    f = frequency if frequency is not None else trace.meta.get("frequency")
    if kind == "static":
        t0 = 2.0 if transient_s is None else transient_s
        keep = t >= t0
        if keep.sum() < 10:
            raise InsufficientData(f"only {keep.sum()} samples after the {t0} s transient")
        rate = np.abs(trace.theta_e_dot[keep])
        peak = rate.max()
        flat = rate < flat_threshold * peak if peak > 0 else np.ones_like(rate, dtype=bool)
        tc = trace.tau_c[keep][flat]
        ts = trace.tau_s[keep][flat]
        den = float(tc @ tc)
        if tc.size < 10 or den == 0.0:
            raise NoFlatRegion("no settled flat-top samples with nonzero contact torque")
        return AmplificationMetrics("static", float(-(ts @ tc) / den), None, int(tc.size))
    if f is None:
        raise ValueError("dynamic metrics need the excitation frequency")
    period = 1.0 / f
    t0 = 2.0 * period if transient_s is None else transient_s
    n_per = int(math.floor((t[-1] - t0) / period + 1e-9))
    if n_per < 3:
        raise InsufficientData(f"need 3 periods after the transient, trace holds {max(n_per, 0)}")
    sel = (t >= t[-1] - n_per * period - 1e-12)
    tt = t[sel]
    w = 2.0 * np.pi * f
    X = np.column_stack([np.ones_like(tt), np.cos(w * tt), np.sin(w * tt)])
    cs, *_ = np.linalg.lstsq(X, trace.tau_s[sel], rcond=None)
    cc, *_ = np.linalg.lstsq(X, trace.tau_c[sel], rcond=None)
    ph_s = cs[1] - 1j * cs[2]
    ph_c = cc[1] - 1j * cc[2]
    if abs(ph_c) == 0.0:
        raise InsufficientData("contact torque carries no component at the excitation frequency")
    ratio = -ph_s / ph_c
    return AmplificationMetrics("dynamic", float(abs(ratio)), float(np.degrees(np.angle(ratio))), int(tt.size), float(f))


@dataclass(frozen=True)
class StepMetrics:
    """Envelope growth and settling of ``tau_c`` after a step release."""

    verdict: str
    growth_ratio: float
    settling_time: float | None
    initial_deviation: float

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "growth_ratio": self.growth_ratio,
            "settling_time": self.settling_time,
            "initial_deviation": self.initial_deviation,
        }


def step_metrics(trace: SimTrace, window_s: float = 4.0, band: float = 0.05) -> StepMetrics:
    """Classify a step-release response.

    The envelope growth ratio compares the peak deviation of ``tau_c``
    from its final value over the last second of ``window_s`` with the
    second second after release; above 1 means a growing oscillation.
    Settling time is when the deviation last leaves ``band`` times the
    pre-release deviation.
    """
    t0 = trace.meta.get("release_time", 0.0)
    final = trace.meta.get("tau_c_final", 0.0)
    dev = trace.tau_c - final
    pre = trace.t < t0
    initial = float(abs(dev[pre][-1])) if pre.any() else float(np.max(np.abs(dev)))
    if trace.verdict == "unstable":
        return StepMetrics("unstable", float("inf"), None, initial)
    if trace.t[-1] < t0 + window_s - 1e-9:
        raise InsufficientData(f"trace ends before release + {window_s} s")

    def peak(a, b):
        sel = (trace.t >= t0 + a) & (trace.t <= t0 + b)
        return float(np.max(np.abs(dev[sel])))

    growth = peak(window_s - 1.0, window_s) / max(peak(1.0, 2.0), 1e-300)
    post = trace.t >= t0
    outside = np.flatnonzero(np.abs(dev[post]) > band * initial)
    settle = None
    if outside.size == 0:
        settle = 0.0
    elif outside[-1] < post.sum() - 1:
        settle = float(trace.t[post][outside[-1] + 1] - t0)
    verdict = "unstable" if growth > 1.0 else "stable"
    return StepMetrics(verdict, float(growth), settle, initial)


@dataclass(frozen=True)
class HumanFit:
    """Spring-damper human fit; iterates as ``(K_hat, B_hat, zeta_hat)``.

    ``zeta_hat`` uses ``M_e`` alone in the denominator; ``zeta_total``
    uses ``M_h + M_e``.
    """

    K_hat: float
    B_hat: float
    zeta_hat: float
    zeta_total: float
    r_squared: float

    def __iter__(self):
        return iter((self.K_hat, self.B_hat, self.zeta_hat))

    def to_dict(self) -> dict:
        return {
            "K_hat": self.K_hat,
            "B_hat": self.B_hat,
            "zeta_hat": self.zeta_hat,
            "zeta_total": self.zeta_total,
            "r_squared": self.r_squared,
        }


def fit_human_from_trace(
    trace: SimTrace,
    t_start: float | None = None,
    t_end: float | None = None,
    M_e: float | None = None,
    M_h: float | None = None,
) -> HumanFit:
    """Least-squares fit ``tau_c ~ B theta_e' + K theta_e`` over a window.

    The window defaults to everything after the release (step traces) or
    the whole trace.
    """
    t0 = trace.meta.get("release_time", trace.t[0]) if t_start is None else t_start
    t1 = trace.t[-1] if t_end is None else t_end
    sel = (trace.t >= t0) & (trace.t <= t1)
    th = trace.theta_e[sel]
    om = trace.theta_e_dot[sel]
    tc = trace.tau_c[sel]
    X = np.column_stack([om, th])
    norms = np.linalg.norm(X, axis=0)
    if th.size < 3 or np.any(norms == 0.0) or np.linalg.cond(X / norms) > 1e8:
        raise RankDeficient("angle and rate are quiescent or collinear in the fit window")
    (B, K), *_ = np.linalg.lstsq(X, tc, rcond=None)
    res = tc - X @ np.array([B, K])
    ss = float(np.sum((tc - tc.mean()) ** 2))
    r2 = 1.0 - float(res @ res) / ss if ss > 0 else float("nan")
    M_e = trace.meta.get("M_e") if M_e is None else M_e
    M_h = trace.meta.get("M_h", 0.0) if M_h is None else M_h

    def zeta(m):
        return float(B / (2.0 * math.sqrt(K * m))) if (m and K > 0) else float("nan")

    return HumanFit(float(K), float(B), zeta(M_e), zeta(M_e + M_h if M_e else None), r2)


def with_human(sys: ClosedLoopSystem, human: HumanParams) -> ClosedLoopSystem:
    """Reassemble ``sys`` for a different human."""
    return assemble(
        human, sys.exo, sys.actuator, sys.springloop, sys.amplifier, sys.delay_s,
        dob=sys.dob, env_stiffness=sys.env_stiffness, spring_loop=sys.spring_loop,
    )

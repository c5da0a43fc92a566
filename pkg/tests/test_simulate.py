import numpy as np
import pytest

from ampx.control import AGGRESSIVE, ROBUST, make_amplification_controller, margins, open_loop
from ampx.errors import ConfigInconsistent, InsufficientData, NoFlatRegion, RankDeficient
from ampx.plant import (
    TESTBED_ACTUATOR,
    ExoParams,
    HumanParams,
    SpringLoopConfig,
    amplification_plant,
    force_plant_dob,
    reflect_to_linear,
)
from ampx.simulate import (
    OUTPUT_NAMES,
    ExperimentSpec,
    SimTrace,
    amplification_metrics,
    assemble,
    fit_human_from_trace,
    run,
    step_metrics,
)
from ampx.sysid import estimate_frf

ACT = TESTBED_ACTUATOR
CFG = SpringLoopConfig.from_actuator(ACT)
OPEN_HAND = HumanParams(27.12, 2.34, 0.09)
HEAVY = ExoParams.loaded(1.05, 0.015)


def test_linearisation_matches_force_plant():
    for human, exo in ((OPEN_HAND, HEAVY), (HumanParams(7.44, 0.56, 0.09), ExoParams.loaded(0.1, 0.025))):
        sys = assemble(human, exo)
        w = np.logspace(-1, 3, 40)
        ref = force_plant_dob(reflect_to_linear(human, exo), ACT, CFG).freqresp(w)
        np.testing.assert_allclose(sys.freqresp(w), ref, rtol=1e-6)


def test_stiff_human_approaches_virtual_spring_band():
    sys = assemble(HumanParams(1e6, 10.0, 0.09), HEAVY)
    w = np.array([1.0, 10.0, 50.0])
    ref = (CFG.b_ss * 1j * w + CFG.k_ss) / (ACT.m_a * (1j * w) ** 2 + (CFG.b_ss + ACT.b_a) * 1j * w + CFG.k_ss)
    np.testing.assert_allclose(sys.freqresp(w), ref, rtol=0.05)


def test_assemble_rejects_inconsistent_settings():
    with pytest.raises(ConfigInconsistent):
        assemble(OPEN_HAND, HEAVY, delay_s=-0.001)
    with pytest.raises(ConfigInconsistent):
        assemble(OPEN_HAND, HEAVY, spring_loop=False)
    with pytest.raises(ConfigInconsistent):
        assemble(OPEN_HAND, "heavy")


def test_zero_input_gives_flat_trace():
    tr = run(assemble(OPEN_HAND, HEAVY), ExperimentSpec(kind="idle", duration=1.0))
    assert tr.verdict == "ok"
    for name in OUTPUT_NAMES:
        assert np.all(tr.linear[name] == 0.0)
    assert np.all(tr.tau_c == 0.0) and np.all(tr.f_d == 0.0)


def test_trace_sampling_and_joint_views():
    tr = run(assemble(OPEN_HAND, HEAVY), ExperimentSpec(duration=1.0))
    assert np.allclose(np.diff(tr.t), 1e-3)
    np.testing.assert_allclose(tr.tau_s, tr.linear["f_s"] * 0.015)
    np.testing.assert_allclose(tr.theta_e, tr.linear["x_e"] / 0.015)


@pytest.mark.parametrize("c", [2.0, 10.0])
def test_linearity(c):
    sys = assemble(OPEN_HAND, HEAVY, amplifier=ROBUST)
    base = dict(kind="step_release", duration=2.0, disturbance_frequency=1.5)
    a = run(sys, ExperimentSpec(step_torque=1.0, disturbance_amplitude=3.0, **base))
    b = run(sys, ExperimentSpec(step_torque=c, disturbance_amplitude=3.0 * c, **base))
    for name in OUTPUT_NAMES:
        scale = np.max(np.abs(a.linear[name])) + 1e-300
        assert np.max(np.abs(b.linear[name] - c * a.linear[name])) <= 1e-9 * c * scale


def test_tracking_linearity():
    sys = assemble(OPEN_HAND, ExoParams.loaded(0.1, 0.015), amplifier=ROBUST)
    base = dict(kind="tracking", waveform="sinusoid", duration=3.0)
    a = run(sys, ExperimentSpec(amplitude=0.1, bias_torque=1.0, **base))
    b = run(sys, ExperimentSpec(amplitude=1.0, bias_torque=10.0, **base))
    np.testing.assert_allclose(b.tau_s, 10 * a.tau_s, rtol=1e-9, atol=1e-9 * np.abs(b.tau_s).max())


def test_energy_is_non_increasing_for_passive_plant():
    sys = assemble(OPEN_HAND, HEAVY, dob=False, spring_loop=False)
    x0 = np.zeros(sys.n_states)
    x0[sys.state_names.index("x_e")] = 2e-3
    x0[sys.state_names.index("v_a")] = 0.05
    tr = run(sys, ExperimentSpec(kind="idle", duration=2.0, controller=False), x0=x0)
    L = tr.linear
    p = reflect_to_linear(OPEN_HAND, HEAVY)
    E = (
        0.5 * ACT.m_a * L["v_a"] ** 2
        + 0.5 * p.m_total * L["v_e"] ** 2
        + 0.5 * ACT.k_s * (L["x_a"] - L["x_e"]) ** 2
        + 0.5 * p.k_h * L["x_e"] ** 2
    )
    rise_per_s = np.diff(E) / np.diff(tr.t)
    assert np.max(rise_per_s) < 1e-6 * E.max()
    assert E[-1] < 0.01 * E[0]


def _settled_rms(tr, f):
    # last half of every half period of the square wave, after the first second
    ph = np.mod(tr.t * 2 * f, 1.0)
    sel = (ph > 0.5) & (tr.t > 1.0)
    return np.sqrt(np.mean(tr.linear["f_s"][sel] ** 2))


def test_observer_rejects_low_frequency_disturbance():
    exp = ExperimentSpec(kind="idle", duration=6.0, controller=False, disturbance_amplitude=50.0, disturbance_frequency=0.5)
    on = _settled_rms(run(assemble(OPEN_HAND, HEAVY, dob=True), exp), 0.5)
    off = _settled_rms(run(assemble(OPEN_HAND, HEAVY, dob=False), exp), 0.5)
    assert off > 10 * on


def test_halving_dt_barely_moves_terminal_state():
    sys = assemble(OPEN_HAND, HEAVY, amplifier=ROBUST)
    a = run(sys, ExperimentSpec(duration=2.0, dt=1e-4))
    b = run(sys, ExperimentSpec(duration=2.0, dt=5e-5))
    for name in ("x_e", "v_e", "x_a", "v_a", "f_s"):
        scale = np.max(np.abs(a.linear[name]))
        assert abs(a.linear[name][-1] - b.linear[name][-1]) < 1e-4 * scale


def test_run_is_deterministic():
    sys = assemble(OPEN_HAND, HEAVY, amplifier=AGGRESSIVE)
    a = run(sys, ExperimentSpec(duration=1.0))
    b = run(sys, ExperimentSpec(duration=1.0), chunk_steps=777)
    np.testing.assert_array_equal(a.tau_c, b.tau_c)


def test_runaway_is_reported_as_verdict():
    # an absurd gain drives the loop unstable; the run must not raise
    from ampx.control import AmplifierConfig

    sys = assemble(OPEN_HAND, HEAVY, amplifier=AmplifierConfig(10.0, 50.0, 30.0, 0.0))
    tr = run(sys, ExperimentSpec(duration=3.0, state_bound=10.0))
    assert tr.verdict == "unstable"
    assert step_metrics(tr).verdict == "unstable"


def test_small_signal_chirp_matches_force_plant():
    sys = assemble(OPEN_HAND, HEAVY)
    tr = run(sys, ExperimentSpec(kind="chirp", duration=120.0, dt=2e-4, amplitude=0.5, chirp_f0=0.5, chirp_f1=25.0))
    frf = estimate_frf(tr.f_d, tr.linear["f_s"], 1000.0, window_s=4.0)
    sel = (frf.omegas >= 2 * np.pi) & (frf.omegas <= 2 * np.pi * 20.0)
    ratio = frf.values[sel] / force_plant_dob(reflect_to_linear(OPEN_HAND, HEAVY), ACT, CFG).freqresp(frf.omegas[sel])
    assert np.max(np.abs(20 * np.log10(np.abs(ratio)))) < 1.0
    assert np.max(np.abs(np.degrees(np.angle(ratio)))) < 5.0


@pytest.mark.parametrize("K_h", [7.44, 70.11])
@pytest.mark.parametrize("r", [0.005, 0.025])
def test_corner_verdicts_agree_with_nyquist(K_h, r):
    human = HumanParams.from_zeta(K_h, 0.09, 1.05, 0.23)
    exo = ExoParams.loaded(1.05, r)
    P = amplification_plant(reflect_to_linear(human, exo), ACT, CFG, 10.0, 0.006)
    nyquist = margins(open_loop(P, make_amplification_controller(AGGRESSIVE))).stable
    tr = run(assemble(human, exo, amplifier=AGGRESSIVE), ExperimentSpec(duration=5.5))
    assert (step_metrics(tr).verdict == "stable") == nyquist


def _synthetic(theta, tau_c, tau_s, t, r=0.015, **meta):
    dtheta = np.gradient(theta, t)
    return SimTrace(
        t=t, theta_e=theta, tau_s=tau_s, tau_c=tau_c, tau_d=np.zeros_like(t), f_d=np.zeros_like(t),
        linear={"v_e": dtheta * r}, r=r, meta=meta,
    )


def test_fit_recovers_synthetic_human():
    t = np.arange(0, 5, 1e-3)
    theta = 0.1 * np.exp(-0.8 * t) * np.cos(6.0 * t)
    dtheta = np.gradient(theta, t)
    tau_c = 3.99 * dtheta + 59.34 * theta
    tr = _synthetic(theta, tau_c, -9 * tau_c, t, M_e=1.05, M_h=0.09)
    fit = fit_human_from_trace(tr)
    K, B, zeta = fit
    assert K == pytest.approx(59.34, rel=0.01)
    assert B == pytest.approx(3.99, rel=0.01)
    assert zeta == pytest.approx(3.99 / (2 * np.sqrt(59.34 * 1.05)), rel=0.01)
    assert fit.zeta_total == pytest.approx(3.99 / (2 * np.sqrt(59.34 * 1.14)), rel=0.01)


def test_pure_stiffness_gives_no_damping():
    t = np.arange(0, 5, 1e-3)
    theta = 0.1 * np.sin(3.0 * t)
    tr = _synthetic(theta, 40.0 * theta, -9 * 40.0 * theta, t)
    K, B, _ = fit_human_from_trace(tr)
    assert K == pytest.approx(40.0, rel=1e-6)
    assert abs(B) < 1e-6


def test_quiescent_fit_is_rank_deficient():
    t = np.arange(0, 2, 1e-3)
    z = np.zeros_like(t)
    with pytest.raises(RankDeficient):
        fit_human_from_trace(_synthetic(z, z, z, t))


def test_synthetic_ratio_of_nine():
    t = np.arange(0, 8, 1e-3)
    theta = 0.3 * np.sin(2 * np.pi * t)
    tau_c = np.sin(2 * np.pi * t) + 0.2
    m = amplification_metrics(_synthetic(theta, tau_c, -9 * tau_c, t), "dynamic", frequency=1.0)
    assert m.gain == pytest.approx(9.0, rel=1e-9)
    assert m.phase_deg == pytest.approx(0.0, abs=1e-6)
    # static: plateaus of a slow trapezoid
    theta = np.clip(np.sin(2 * np.pi * 0.1 * t) * 2, -1, 1)
    tau_c = 1.0 + theta
    m = amplification_metrics(_synthetic(theta, tau_c, -9 * tau_c, t), "static")
    assert m.gain == pytest.approx(9.0, rel=1e-12)


def test_too_short_for_dynamic_metrics():
    t = np.arange(0, 4, 1e-3)
    s = np.sin(2 * np.pi * t)
    with pytest.raises(InsufficientData):
        amplification_metrics(_synthetic(s, s, -9 * s, t), "dynamic", frequency=1.0)


def test_no_flat_region():
    t = np.arange(0, 6, 1e-3)
    s = np.sin(2 * np.pi * t)
    with pytest.raises(NoFlatRegion):
        amplification_metrics(_synthetic(s, np.zeros_like(t), -9 * s, t), "static")


def test_experiment_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec(dt=2e-3)
    with pytest.raises(ValueError):
        ExperimentSpec(duration=0.0)
    with pytest.raises(ValueError):
        ExperimentSpec(kind="jump")
    assert ExperimentSpec(waveform="sinusoid").waveform_frequency == 1.0
    assert ExperimentSpec().waveform_frequency == 0.1


def test_csv_export(tmp_path):
    tr = run(assemble(OPEN_HAND, HEAVY), ExperimentSpec(duration=0.5))
    path = tmp_path / "trace.csv"
    tr.to_csv(path, header_comment="test")
    lines = path.read_text().splitlines()
    assert lines[0] == "# test"
    assert lines[1].startswith("t_s,theta_e_rad,tau_s_Nm,tau_c_Nm")
    data = np.loadtxt(path, delimiter=",", skiprows=2)
    np.testing.assert_array_equal(data[:, 2], tr.tau_s)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ampx.errors import NonPositiveRatio, ZeroStiffness
from ampx.lti import TransferFunction, tf_eval
from ampx.plant import (
    TESTBED_ACTUATOR,
    ExoParams,
    HumanParams,
    SpringLoopConfig,
    amplification_plant,
    amplification_plant_approx,
    characteristic_frequencies,
    dob_q_filter,
    force_plant_dob,
    force_plant_open,
    human_damping_from_zeta,
    impedance_exo,
    impedance_human,
    reflect_to_linear,
    virtual_spring,
)

ACT = TESTBED_ACTUATOR
CFG = SpringLoopConfig.from_actuator(ACT)
# heavy-load identification row: K_h, B_h, M_h and loaded exoskeleton inertia
HEAVY_HUMAN = HumanParams(50.18, 4.21, 0.09)


def lin(human=HEAVY_HUMAN, M_e=1.05, r=0.025):
    return reflect_to_linear(human, ExoParams.loaded(M_e, r))


def test_reflected_human_mass():
    p = lin(r=0.025)
    assert p.m_h == pytest.approx(144.0)
    assert p.m_e == pytest.approx(1680.0)


def test_unit_ratio_is_identity():
    p = reflect_to_linear(HEAVY_HUMAN, ExoParams(0.1, 0.95, r=1.0))
    assert (p.k_h, p.b_h, p.m_h, p.m_e) == pytest.approx((50.18, 4.21, 0.09, 1.05))


def test_inertia_split_is_additive():
    p = lin(M_e=1.05, r=0.02)
    assert p.m_e_bar + p.m_e_tilde == pytest.approx(p.m_e)
    assert p.m_e_bar == pytest.approx(0.1 / 0.02**2)


def test_nonpositive_ratio_rejected():
    with pytest.raises(NonPositiveRatio):
        ExoParams(0.1, 0.0, r=0.0)


def test_exo_impedance_at_one_rad():
    _, _, Ze = impedance_exo(lin())
    assert abs(tf_eval(Ze, 1.0)) == pytest.approx(1680.0)


def test_unloaded_exo_impedance_equals_bare():
    p = reflect_to_linear(HEAVY_HUMAN, ExoParams(0.1, 0.0, 0.02))
    Zbar, _, Ze = impedance_exo(p)
    assert Zbar.equivalent(Ze)


def test_undamped_human_vanishes_at_natural_frequency():
    p = reflect_to_linear(HumanParams(1.0, 0.0, 1.0), ExoParams(0.1, 0.0, 1.0))
    assert abs(tf_eval(impedance_human(p), 1.0)) < 1e-12


def test_open_force_plant_dc_and_rolloff():
    P = force_plant_open(lin(), ACT)
    assert P.dcgain() == pytest.approx(1.0)
    m1, m2 = np.abs(P.freqresp([1e5, 1e6]))
    assert 20 * np.log10(m2 / m1) == pytest.approx(-40.0, abs=0.5)


def test_q_filter_cutoff():
    Q = dob_q_filter(CFG)
    assert Q.dcgain() == pytest.approx(1.0)
    assert abs(tf_eval(Q, 2 * np.pi * 40.0)) == pytest.approx(1 / np.sqrt(2), rel=1e-9)


@pytest.mark.parametrize("order", [2, 3, 4])
def test_q_filter_asymptote(order):
    Q = dob_q_filter(SpringLoopConfig(CFG.k_ss, CFG.b_ss, 40.0, order))
    m1, m2 = np.abs(Q.freqresp([1e5, 1e6]))
    assert 20 * np.log10(m2 / m1) == pytest.approx(-20.0 * order, abs=0.1)


def test_dob_plant_unity_dc():
    assert force_plant_dob(lin(), ACT, CFG).dcgain() == pytest.approx(1.0)


def test_dob_plant_without_observer_is_closed_spring_loop():
    p = lin()
    P0 = force_plant_dob(p, ACT, CFG, q=TransferFunction.constant(0.0))
    # Z_he Z_ss / (Z_he Z_ss + (Z_he + Z_s) Z_a), written with impedances times s
    Zss = virtual_spring(CFG)
    w = np.logspace(-1, 3, 25)
    s = 1j * w
    Zhe = p.m_total * s + p.b_h + p.k_h / s
    Za = ACT.m_a * s + ACT.b_a
    Zs = ACT.k_s / s
    ref = Zhe * Zss.freqresp(w) / (Zhe * Zss.freqresp(w) + (Zhe + Zs) * Za)
    np.testing.assert_allclose(P0.freqresp(w), ref, rtol=1e-9)


def test_ideal_observer_limit():
    # with Q = 1 the plant collapses to Z_ss / Z_ssa
    p = lin()
    P1 = force_plant_dob(p, ACT, CFG, q=TransferFunction.constant(1.0))
    w = np.logspace(-1, 3, 25)
    ref = (CFG.b_ss * 1j * w + CFG.k_ss) / (ACT.m_a * (1j * w) ** 2 + (CFG.b_ss + ACT.b_a) * 1j * w + CFG.k_ss)
    np.testing.assert_allclose(P1.freqresp(w), ref, rtol=1e-9)


def test_amplification_plant_dc_is_alpha():
    P = amplification_plant(lin(), ACT, CFG, 10.0, 0.006)
    assert abs(tf_eval(P, 1e-4)) == pytest.approx(10.0, rel=1e-6)
    assert P.delay_s == 0.006


def test_unit_alpha_gives_force_plant():
    p = lin()
    assert amplification_plant(p, ACT, CFG, 1.0).equivalent(force_plant_dob(p, ACT, CFG))


def test_zero_and_pole_placement():
    p = lin(r=0.015)
    P = amplification_plant(p, ACT, CFG, 10.0)
    cf = characteristic_frequencies(p, ACT, CFG, 10.0)
    zeros = np.abs(P.zeros())
    poles = np.abs(P.poles())
    assert np.min(np.abs(zeros / cf.omega_ahe - 1)) < 0.01
    assert np.min(np.abs(poles / cf.omega_he - 1)) < 0.01
    assert np.min(np.abs(poles / cf.omega_ssa - 1)) < 0.01


def test_approximate_plant_close_below_cutoff():
    p = lin(r=0.015)
    full = amplification_plant(p, ACT, CFG, 10.0)
    approx = amplification_plant_approx(p, ACT, CFG, 10.0)
    w = np.logspace(-2, np.log10(0.2 * 2 * np.pi * 40.0), 200)
    ratio = approx.freqresp(w) / full.freqresp(w)
    assert np.max(np.abs(20 * np.log10(np.abs(ratio)))) < 1.0
    assert np.max(np.abs(np.degrees(np.angle(ratio)))) < 5.0
    assert approx.dcgain() == pytest.approx(10.0)
    human_zeros = np.roots([p.m_e + 10 * p.m_h, 10 * p.b_h, 10 * p.k_h])
    for z in human_zeros:
        assert np.min(np.abs(approx.zeros() - z)) < 1e-9 * abs(z)
        assert np.min(np.abs(full.zeros() - z)) < 1e-9 * abs(z)


def test_characteristic_frequencies_heavy_load():
    cf = characteristic_frequencies(lin(r=0.015), ACT, CFG, 10.0)
    assert cf.omega_he == pytest.approx(np.sqrt(50.18 / 1.14), rel=1e-12)
    assert cf.omega_he < cf.omega_ahe
    assert cf.zeta_he == pytest.approx(0.28, abs=0.005)


def test_zero_stiffness():
    p = reflect_to_linear(HumanParams(0.0, 1.0, 0.09), ExoParams(0.1))
    with pytest.raises(ZeroStiffness):
        characteristic_frequencies(p, ACT, CFG, 10.0)


def test_damping_from_zeta():
    assert human_damping_from_zeta(50.18, 0.09, 1.05, 0.28) == pytest.approx(4.23, abs=0.01)
    assert human_damping_from_zeta(7.44, 0.09, 0.10, 0.23) == pytest.approx(0.547, abs=0.001)
    assert human_damping_from_zeta(7.44, 0.09, 0.10, 0.0) == 0.0


@settings(max_examples=50, deadline=None)
@given(
    st.floats(1.0, 100.0),
    st.floats(0.1, 5.0),
    st.floats(0.1, 2.0),
    st.floats(0.005, 0.05),
    st.floats(0.1, 100.0),
)
def test_linear_impedance_is_rotary_over_r_squared(K, B, M_e, r, w):
    h = HumanParams(K, B, 0.09)
    e = ExoParams.loaded(M_e, r)
    Zl = tf_eval(impedance_human(reflect_to_linear(h, e)), w)
    Zr = 0.09 * 1j * w + B + K / (1j * w)
    assert Zl == pytest.approx(Zr / r**2, rel=1e-12)

import numpy as np
import pytest
from scipy import signal

from ampx.errors import BandTooNoisy, IdentificationError, TooShort
from ampx.sysid import (
    ChirpSpec,
    FrfEstimate,
    estimate_frf,
    exponential_chirp,
    fit_impedance,
    instantaneous_frequency,
    read_log_csv,
    zeta_statistics,
)

FS = 1000.0


def test_chirp_endpoints_and_envelope():
    spec = ChirpSpec(duration=60.0)
    t, u = exponential_chirp(spec)
    assert t[0] == 0.0 and t[-1] == pytest.approx(60.0)
    assert u[0] == 0.0
    assert np.max(np.abs(u)) <= spec.amplitude + 1e-12
    assert np.max(np.abs(u)) > 0.99 * spec.amplitude
    assert instantaneous_frequency(spec, 0.0) == pytest.approx(0.1)
    assert instantaneous_frequency(spec, 60.0) == pytest.approx(20.0)


def test_chirp_zero_crossings_get_denser():
    t, u = exponential_chirp(ChirpSpec(duration=60.0))
    crossings = np.flatnonzero(np.diff(np.signbit(u)))
    per_window = np.histogram(t[crossings], bins=6, range=(0, 60))[0]
    assert np.all(np.diff(per_window) > 0)


def test_chirp_rejects_bad_band():
    with pytest.raises(ValueError):
        ChirpSpec(f0=5.0, f1=1.0)


def _white(n, seed=0):
    return np.random.default_rng(seed).standard_normal(n)


def test_frf_of_pure_gain():
    u = _white(200_000)
    frf = estimate_frf(u, 2 * u, FS, window_s=10.0)
    np.testing.assert_allclose(frf.values, 2.0, rtol=1e-9)
    assert np.all(frf.coherence > 0.999)


def test_frf_of_second_order_filter():
    wn, zeta = 2 * np.pi * 5.0, 0.3
    sysc = signal.lti([wn**2], [1, 2 * zeta * wn, wn**2])
    b, a = signal.cont2discrete((sysc.num, sysc.den), 1 / FS, method="bilinear")[:2]
    u = _white(300_000, seed=1)
    y = signal.lfilter(np.ravel(b), a, u)
    frf = estimate_frf(u, y, FS, window_s=10.0)
    band = (frf.omegas > 2 * np.pi * 0.5) & (frf.omegas < 2 * np.pi * 20)
    # compare with the discretised filter to isolate estimator error
    _, h = signal.freqz(np.ravel(b), a, worN=frf.omegas[band] / FS)
    err_db = 20 * np.log10(np.abs(frf.values[band] / h))
    assert np.max(np.abs(err_db)) < 0.5


def test_noise_lowers_coherence():
    u = _white(200_000, seed=2)
    clean = estimate_frf(u, u, FS, 10.0)
    noisy = estimate_frf(u, u + 2.0 * _white(200_000, seed=3), FS, 10.0)
    assert np.mean(noisy.coherence) < np.mean(clean.coherence) - 0.5


def test_short_record_raises():
    with pytest.raises(TooShort):
        estimate_frf(np.ones(1000), np.ones(1000), FS, window_s=20.0)
    assert issubclass(TooShort, IdentificationError)


def _impedance_frf(K, B, M, w=None, coherence=1.0):
    w = np.logspace(-1, 2.1, 600) if w is None else w
    return FrfEstimate(w, K - M * w**2 + 1j * B * w, np.full(w.shape, coherence))


@pytest.mark.parametrize("K, B, M", [(7.44, 0.56, 0.19), (70.11, 1.60, 0.19), (31.91, 1.84, 0.66), (50.18, 4.21, 1.14)])
def test_fit_exact_impedance(K, B, M):
    fit = fit_impedance(_impedance_frf(K, B, M))
    assert fit.K_h == pytest.approx(K, rel=1e-6)
    assert fit.B_h == pytest.approx(B, rel=1e-6)
    assert fit.M_total == pytest.approx(M, rel=1e-6)
    assert fit.zeta == pytest.approx(B / (2 * np.sqrt(K * M)), rel=1e-6)
    lo, hi = fit.fit_band
    assert lo == pytest.approx(np.sqrt(K / M) / 3, rel=0.02)
    assert hi == pytest.approx(3 * np.sqrt(K / M), rel=0.02)


def test_fit_with_noise_within_two_percent():
    rng = np.random.default_rng(4)
    frf = _impedance_frf(7.44, 0.56, 0.19)
    noisy = frf.values * (1 + 0.01 * (rng.standard_normal(frf.values.size) + 1j * rng.standard_normal(frf.values.size)))
    fit = fit_impedance(FrfEstimate(frf.omegas, noisy, frf.coherence))
    assert fit.K_h == pytest.approx(7.44, rel=0.02)
    assert fit.M_total == pytest.approx(0.19, rel=0.02)
    assert fit.zeta == pytest.approx(0.56 / (2 * np.sqrt(7.44 * 0.19)), rel=0.05)


def test_fit_with_known_mass():
    fit = fit_impedance(_impedance_frf(70.11, 1.60, 0.19), M_known=0.19)
    assert fit.K_h == pytest.approx(70.11, rel=1e-9)


def test_zero_stiffness_fit_has_no_natural_frequency():
    fit = fit_impedance(_impedance_frf(0.0, 0.5, 0.2), band=(1.0, 50.0))
    assert fit.omega_n is None
    assert np.isnan(fit.zeta)


def test_incoherent_band_raises():
    with pytest.raises(BandTooNoisy):
        fit_impedance(_impedance_frf(7.44, 0.56, 0.19, coherence=0.5))


def test_zeta_statistics():
    stats = zeta_statistics([0.2355, 0.219, 0.2005, 0.278])
    mean, spread = stats
    assert mean == pytest.approx(0.233, abs=0.001)
    assert spread == pytest.approx(0.278 - 0.2005)
    assert tuple(zeta_statistics([0.23, 0.23])) == (0.23, 0.0)
    with pytest.raises(ValueError):
        zeta_statistics([0.23])


def test_read_log_round_trip(tmp_path):
    p = tmp_path / "log.csv"
    p.write_text("# comment\nt_s,tau_d_Nm,tau_s_Nm,theta_e_rad\n0,1,2,3\n0.001,4,5,6\n")
    log = read_log_csv(p)
    np.testing.assert_array_equal(log["t"], [0.0, 0.001])
    np.testing.assert_array_equal(log["theta_e"], [3.0, 6.0])


def test_truncated_log(tmp_path):
    p = tmp_path / "log.csv"
    p.write_text("t,tau_d,tau_s,theta_e\n0,1,2,3\n0.001,4,5\n")
    with pytest.raises(TooShort, match="truncated"):
        read_log_csv(p)

"""Chirp excitation, H1 frequency-response estimation and impedance fitting.

The identified quantity is the joint-space impedance seen by the spring,
``tau_s/theta_e (jw) = K - M w**2 + j B w`` with ``M = M_h + M_e``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import BandTooNoisy, NoInertialAsymptote, TooShort
from .simulate import chirp_phase

__all__ = [
    "ChirpSpec",
    "FrfEstimate",
    "ImpedanceFit",
    "ZetaStatistics",
    "exponential_chirp",
    "instantaneous_frequency",
    "estimate_frf",
    "fit_impedance",
    "zeta_statistics",
    "read_log_csv",
]


@dataclass(frozen=True)
class ChirpSpec:
    """Exponential sweep from ``f0`` to ``f1`` Hz over ``duration`` s, ``amplitude`` Nm."""

    f0: float = 0.1
    f1: float = 20.0
    duration: float = 300.0
    amplitude: float = 2.0
    sample_rate: float = 1000.0

    def __post_init__(self):
        if not 0 < self.f0 < self.f1 < self.sample_rate / 2:
            raise ValueError(f"need 0 < f0 < f1 < sample_rate/2, got {self}")
        if not self.duration > 0:
            raise ValueError(f"duration must be positive, got {self.duration}")


def exponential_chirp(spec: ChirpSpec) -> tuple[np.ndarray, np.ndarray]:
    """Sampled ``(t, u)`` with ``u = A sin(phi(t))`` and ``phi(0) = 0``."""
    n = int(round(spec.duration * spec.sample_rate)) + 1
    t = np.arange(n) / spec.sample_rate
    return t, spec.amplitude * np.sin(chirp_phase(t, spec.f0, spec.f1, spec.duration))


def instantaneous_frequency(spec: ChirpSpec, t) -> np.ndarray:
    return spec.f0 * (spec.f1 / spec.f0) ** (np.asarray(t) / spec.duration)


@dataclass(frozen=True)
class FrfEstimate:
    omegas: np.ndarray
    values: np.ndarray
    coherence: np.ndarray

    def __post_init__(self):
        if not (len(self.omegas) == len(self.values) == len(self.coherence)):
            raise ValueError("omegas, values and coherence must have equal lengths")

    def trusted(self, threshold: float = 0.9) -> np.ndarray:
        return self.coherence >= threshold


def estimate_frf(u, y, sample_rate: float, window_s: float = 20.0) -> FrfEstimate:
    """H1 estimate ``S_uy / S_uu`` with Hann windows and 50% overlap.

    Raises
    ------
    TooShort
        When the records hold fewer than four window lengths.
    """
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if u.shape != y.shape:
        raise ValueError(f"u and y lengths differ: {u.shape} vs {y.shape}")
    nper = int(round(window_s * sample_rate))
    if nper < 8 or u.size < 4 * nper:
        raise TooShort(f"{u.size} samples is shorter than four {window_s} s windows")
    kw = dict(fs=sample_rate, window="hann", nperseg=nper, noverlap=nper // 2, detrend="constant")
    f, Suu = signal.welch(u, **kw)
    _, Suy = signal.csd(u, y, **kw)
    _, Cuy = signal.coherence(u, y, **kw)
    keep = (f > 0) & (Suu > 0)
    H = Suy[keep] / Suu[keep]
    coh = np.clip(np.nan_to_num(Cuy[keep]), 0.0, 1.0)
    return FrfEstimate(2.0 * np.pi * f[keep], H, coh)


@dataclass(frozen=True)
class ImpedanceFit:
    """Second-order impedance ``K + B s + M s**2`` in joint space.

    ``omega_n`` is ``None`` when the fitted stiffness is not positive.
    """

    K_h: float
    B_h: float
    M_total: float
    zeta: float
    fit_band: tuple
    omega_n: float | None = None
    n_bins: int = 0

    def response(self, omegas) -> np.ndarray:
        w = np.asarray(omegas, dtype=float)
        return self.K_h - self.M_total * w**2 + 1j * self.B_h * w

    def to_dict(self) -> dict:
        return {
            "K_h": self.K_h,
            "B_h": self.B_h,
            "M_total": self.M_total,
            "zeta": self.zeta,
            "fit_band": list(self.fit_band),
            "omega_n": self.omega_n,
            "n_bins": self.n_bins,
        }


def _natural_frequency_guess(w, H):
    """First sign change of Re H from stiffness- to mass-dominated."""
    re = H.real
    idx = np.flatnonzero((re[:-1] > 0) & (re[1:] <= 0))
    if idx.size == 0:
        return None
    i = idx[0]
    # interpolate in log-frequency
    a, b = re[i], re[i + 1]
    return float(np.exp(np.log(w[i]) + (np.log(w[i + 1]) - np.log(w[i])) * a / (a - b)))


def fit_impedance(
    frf: FrfEstimate,
    band=None,
    M_known: float | None = None,
    coherence_min: float = 0.9,
    inertia_decades: float = 0.5,
    min_bins: int = 10,
) -> ImpedanceFit:
    """Fit ``K``, ``B`` and ``M`` to an impedance FRF.

    Without ``band`` the fit uses ``[w_n/3, 3 w_n]`` around the zero
    crossing of ``Re H``, intersected with bins whose coherence reaches
    ``coherence_min``; without a crossing it uses every trusted bin.
    ``M`` comes from the top ``inertia_decades`` of the band, where
    ``-Re H = M w**2 - K`` is regressed with an intercept.  ``K`` and
    ``B`` then follow from ``Re H + M w**2 = K`` and ``Im H = B w``.
    """
    w, H = frf.omegas, frf.values
    good = frf.coherence >= coherence_min
    if band is None:
        wn = _natural_frequency_guess(w[good], H[good]) if good.sum() > 1 else None
        if wn is not None:
            band = (wn / 3.0, 3.0 * wn)
        elif good.any():
            band = (float(w[good].min()), float(w[good].max()))
        else:
            raise BandTooNoisy(f"no bin reaches coherence {coherence_min}")
    lo, hi = float(band[0]), float(band[1])
    if not 0 < lo < hi:
        raise ValueError(f"invalid band {band}")
    sel = good & (w >= lo) & (w <= hi)
    if sel.sum() < min_bins:
        raise BandTooNoisy(f"{sel.sum()} trusted bins in [{lo:.3g}, {hi:.3g}] rad/s, need {min_bins}")
    ws, Hs = w[sel], H[sel]
    if M_known is None:
        top = ws >= ws.max() / 10.0**inertia_decades
        if top.sum() < 3:
            raise NoInertialAsymptote("fewer than three bins in the inertial region")
        X = np.column_stack([ws[top] ** 2, -np.ones(top.sum())])
        (M, _), *_ = np.linalg.lstsq(X, -Hs[top].real, rcond=None)
        if not M > 0:
            raise NoInertialAsymptote(f"high-frequency magnitude does not rise with w**2 (M={M:.3g})")
    else:
        M = float(M_known)
    K = float(np.mean(Hs.real + M * ws**2))
    B = float((ws @ Hs.imag) / (ws @ ws))
    if K > 0:
        zeta = B / (2.0 * math.sqrt(K * M))
        wn = math.sqrt(K / M)
    else:
        zeta, wn = float("nan"), None
    return ImpedanceFit(K, B, float(M), float(zeta), (lo, hi), wn, int(sel.sum()))


@dataclass(frozen=True)
class ZetaStatistics:
    """Mean and spread (max - min) of damping ratios; iterates as ``(mean, spread)``."""

    mean: float
    spread: float
    min: float
    max: float

    def __iter__(self):
        return iter((self.mean, self.spread))

    def to_dict(self) -> dict:
        return {"mean": self.mean, "spread": self.spread, "min": self.min, "max": self.max}


def zeta_statistics(fits) -> ZetaStatistics:
    z = np.array([f.zeta if isinstance(f, ImpedanceFit) else float(f) for f in fits])
    if z.size < 2:
        raise ValueError("zeta statistics need at least two fits")
    return ZetaStatistics(float(z.mean()), float(z.max() - z.min()), float(z.min()), float(z.max()))


_ALIASES = {
    "t": ("t", "t_s"),
    "tau_d": ("tau_d", "tau_d_Nm"),
    "tau_s": ("tau_s", "tau_s_Nm"),
    "theta_e": ("theta_e", "theta_e_rad"),
}


def read_log_csv(path) -> dict:
    """Read a ``t, tau_d, tau_s, theta_e`` log; ``#`` lines are comments.

    Column names may carry unit suffixes as written by the simulator.
    """
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(line for line in fh if not line.startswith("#")) if row]
    if not rows:
        raise TooShort(f"{path} holds no data")
    header = [h.strip() for h in rows[0]]
    cols = {}
    for key, names in _ALIASES.items():
        for name in names:
            if name in header:
                cols[key] = header.index(name)
                break
        else:
            if key != "tau_d":
                raise ValueError(f"{path}: missing column {key!r}")
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise TooShort(f"{path}: data row {i} has {len(row)} fields, header has {len(header)} (truncated file?)")
    try:
        data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)
    except ValueError as exc:
        raise TooShort(f"{path}: unreadable value ({exc})") from None
    if data.ndim != 2 or data.shape[0] < 2:
        raise TooShort(f"{path} holds fewer than two samples")
    return {key: data[:, i] for key, i in cols.items()}

"""Static figures written next to the CLI's CSV/JSON output.

Everything renders through the Agg backend into PNG files; nothing opens a
window.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["bode_figure", "margins_figure", "trace_figure", "frf_figure"]

_STYLE = {
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def bode_figure(blocks, path, title=None):
    """Magnitude and phase of one or more responses.

    ``blocks`` is a sequence of ``(omega, mag_db, phase_deg)``; large
    ensembles are drawn as thin translucent lines.
    """
    with plt.rc_context(_STYLE):
        fig, (am, ap) = plt.subplots(2, 1, sharex=True, figsize=(6.0, 5.0))
        lw, al = (0.6, 0.25) if len(blocks) > 10 else (1.2, 1.0)
        for w, mag, ph in blocks:
            am.semilogx(w, mag, color="C0", lw=lw, alpha=al)
            ap.semilogx(w, ph, color="C0", lw=lw, alpha=al)
        am.set_ylabel("magnitude (dB)")
        ap.set_ylabel("phase (deg)")
        ap.set_xlabel(r"$\omega$ (rad/s)")
        if title:
            am.set_title(title)
        return _save(fig, path)


def margins_figure(rows, path):
    """Worst phase margin against human stiffness, one marker series per ``r``.

    ``rows`` holds ``(K_h, M_e, r, worst_pm, stable)`` tuples.
    """
    rows = np.array([(k, m, r, np.nan if pm is None else pm, s) for k, m, r, pm, s in rows], dtype=float)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.6))
        for i, r in enumerate(np.unique(rows[:, 2])):
            sel = rows[:, 2] == r
            ax.plot(rows[sel, 0], rows[sel, 3], "o", ms=3, color=f"C{i}", alpha=0.6, label=f"r = {r:g} m")
        bad = rows[:, 4] == 0
        if bad.any():
            ax.plot(rows[bad, 0], rows[bad, 3], "x", color="k", label="unstable")
        ax.set_xlabel(r"$K_h$ (Nm/rad)")
        ax.set_ylabel("phase margin (deg)")
        ax.legend(fontsize=7, frameon=False)
        return _save(fig, path)


def trace_figure(trace, path, title=None):
    """Joint angle and the spring/contact torques of a simulated run."""
    with plt.rc_context(_STYLE):
        fig, (a1, a2) = plt.subplots(2, 1, sharex=True, figsize=(6.0, 4.5))
        a1.plot(trace.t, trace.theta_e, color="C0", lw=0.9)
        a1.set_ylabel(r"$\theta_e$ (rad)")
        a2.plot(trace.t, trace.tau_s, color="C1", lw=0.9, label=r"$\tau_s$")
        a2.plot(trace.t, trace.tau_c, color="C2", lw=0.9, label=r"$\tau_c$")
        a2.set_ylabel("torque (Nm)")
        a2.set_xlabel("t (s)")
        a2.legend(fontsize=7, frameon=False)
        if title:
            a1.set_title(title)
        return _save(fig, path)


def frf_figure(frf, fit, path, coherence_min=0.9):
    """Estimated impedance with the fitted model and the fit band shaded."""
    w = frf.omegas
    good = frf.coherence >= coherence_min
    with plt.rc_context(_STYLE):
        fig, (am, ap) = plt.subplots(2, 1, sharex=True, figsize=(6.0, 5.0))
        am.semilogx(w[good], 20 * np.log10(np.abs(frf.values[good])), ".", ms=2, color="C0", label="data")
        am.semilogx(w[~good], 20 * np.log10(np.abs(frf.values[~good])), ".", ms=2, color="0.7")
        model = fit.response(w)
        am.semilogx(w, 20 * np.log10(np.abs(model)), color="C3", lw=1.0, label="fit")
        ap.semilogx(w[good], np.degrees(np.angle(frf.values[good])), ".", ms=2, color="C0")
        ap.semilogx(w, np.degrees(np.angle(model)), color="C3", lw=1.0)
        for ax in (am, ap):
            ax.axvspan(*fit.fit_band, color="C2", alpha=0.12)
        am.set_ylabel(r"$|\tau_s/\theta_e|$ (dB)")
        ap.set_ylabel("phase (deg)")
        ap.set_xlabel(r"$\omega$ (rad/s)")
        am.legend(fontsize=7, frameon=False)
        return _save(fig, path)

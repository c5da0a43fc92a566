"""``ampx`` command line: bode, margins, simulate, identify.

Exit codes: 0 ok, 2 configuration error, 3 an ensemble member is unstable,
4 identification failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .control import (
    ensemble_plants,
    ensemble_sweep,
    expected_amplification,
    make_amplification_controller,
    margins,
    open_loop,
)
from .csvio import HEADER, dump_json, fmt, write_table
from .errors import ConfigError, IdentificationError, InsufficientData, NoFlatRegion, RankDeficient
from .lti import FrequencyResponse, TransferFunction
from .plant import amplification_plant, force_plant_dob, reflect_to_linear

EXIT_OK, EXIT_CONFIG, EXIT_UNSTABLE, EXIT_IDENT = 0, 2, 3, 4


def _nominal_member(cfg: RunConfig):
    lin = reflect_to_linear(cfg.human, cfg.exo)
    return (0, cfg.human.K_h, cfg.human.B_h, cfg.exo.M_e, cfg.exo.r, lin)


def _bode_plants(cfg: RunConfig):
    """Yield ``(index, K_h, B_h, M_e, r, tf)`` for the requested response."""
    opts = cfg.bode
    ctrl = make_amplification_controller(cfg.amplifier) if opts.controller == "amplifier" else TransferFunction.constant(1.0)
    if opts.sweep:
        if cfg.ensemble is None:
            raise ConfigError("bode.sweep needs an ensemble section")
        members = ensemble_plants(cfg.ensemble, cfg.actuator, cfg.spring_loop, cfg.amplifier.alpha)
    else:
        i, K, B, M, r, lin = _nominal_member(cfg)
        members = [(i, K, B, M, r, amplification_plant(lin, cfg.actuator, cfg.spring_loop, cfg.amplifier.alpha, cfg.delay_s))]
    for i, K, B, M, r, P_alpha in members:
        if opts.which == "P_alpha":
            tf = P_alpha
        elif opts.which == "open_loop":
            tf = open_loop(P_alpha, ctrl)
        else:
            lin = reflect_to_linear(*_human_exo(cfg, K, B, M, r))
            tf = force_plant_dob(lin, cfg.actuator, cfg.spring_loop).with_delay(cfg.delay_s)
        yield i, K, B, M, r, tf


def _human_exo(cfg, K, B, M, r):
    from .plant import ExoParams, HumanParams

    M_h = cfg.ensemble.M_h if cfg.bode.sweep and cfg.ensemble else cfg.human.M_h
    bar = cfg.ensemble.M_e_bar if cfg.bode.sweep and cfg.ensemble else cfg.exo.M_e_bar
    return HumanParams(K, B, M_h), ExoParams.loaded(M, r, bar)


def _out_dir(args):
    if args.out is None:
        return None
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_bode(cfg: RunConfig, args) -> int:
    opts = cfg.bode
    w = np.logspace(np.log10(opts.omega_min), np.log10(opts.omega_max), opts.points)
    out = _out_dir(args)
    fh = open(out / "bode.csv", "w") if out else sys.stdout
    blocks = []
    try:
        fh.write(HEADER + "\n")
        fh.write(f"# which={opts.which} controller={opts.controller}\n")
        fh.write("omega_rad_s,mag_db,phase_deg\n")
        for i, K, B, M, r, tf in _bode_plants(cfg):
            fr = FrequencyResponse(w, tf.freqresp(w))
            fh.write(f"# member={i} K_h={fmt(K)} B_h={fmt(B)} M_e={fmt(M)} r={fmt(r)}\n")
            mag, ph = fr.mag_db, fr.phase_deg
            for row in zip(w, mag, ph):
                fh.write(",".join(fmt(v) for v in row) + "\n")
            if out and not args.no_plots:
                blocks.append((w, mag, ph))
    finally:
        if out:
            fh.close()
    if blocks:
        from .plotting import bode_figure

        bode_figure(blocks, out / "bode.png", title=opts.which)
    return EXIT_OK


def _margin_members(cfg: RunConfig):
    if cfg.ensemble is not None:
        return ensemble_sweep(cfg.ensemble, cfg.actuator, cfg.spring_loop, cfg.amplifier, workers=cfg.workers)
    from .control import EnsembleMember

    i, K, B, M, r, lin = _nominal_member(cfg)
    P = amplification_plant(lin, cfg.actuator, cfg.spring_loop, cfg.amplifier.alpha, cfg.delay_s)
    rep = margins(open_loop(P, make_amplification_controller(cfg.amplifier)))
    return [EnsembleMember(i, K, B, M, r, rep)]


def _first_two(rep):
    cs = list(rep.crossovers) + [None, None]
    out = []
    for c in cs[:2]:
        out += [c.omega, c.phase_margin] if c else [None, None]
    return out


def cmd_margins(cfg: RunConfig, args) -> int:
    members = _margin_members(cfg)
    n_bad = sum(not m.report.stable for m in members)
    pms = [(m.report.worst_pm, m) for m in members if m.report.worst_pm is not None]
    worst = min(pms, key=lambda x: x[0]) if pms else (None, None)
    if len(members) == 1:
        m = members[0]
        rep = m.report
        wc = ", ".join(f"{c.omega:.4g} rad/s pm {c.phase_margin:.2f} deg" for c in rep.crossovers) or "no crossover"
        gm = "inf" if rep.gain_margin_db is None else f"{rep.gain_margin_db:.2f} dB"
        print(
            f"K_h={m.K_h:g} M_e={m.M_e:g} r={m.r:g}: {wc}; gm {gm}; "
            f"{'stable' if rep.stable else 'UNSTABLE'}"
        )
    else:
        pm_txt = "n/a" if worst[0] is None else f"{worst[0]:.3f} deg at K_h={worst[1].K_h:.4g} M_e={worst[1].M_e:.4g} r={worst[1].r:.4g}"
        print(f"members {len(members)}, unstable {n_bad}, min phase margin {pm_txt}")
    out = _out_dir(args)
    if out:
        with open(out / "margins.csv", "w") as fh:
            names = ["K_h", "M_e", "r", "omega_c1", "pm1", "omega_c2", "pm2", "stable"]
            rows = [[m.K_h, m.M_e, m.r, *_first_two(m.report), bool(m.report.stable)] for m in members]
            write_table(fh, names, rows)
        doc = {
            "version": __version__,
            "amplifier": asdict(cfg.amplifier),
            "summary": {
                "members": len(members),
                "unstable": n_bad,
                "min_phase_margin_deg": worst[0],
                "worst_member": None if worst[1] is None else worst[1].index,
            },
            "members": [
                {"index": m.index, "K_h": m.K_h, "B_h": m.B_h, "M_e": m.M_e, "r": m.r, **m.report.to_dict()}
                for m in members
            ],
        }
        with open(out / "margins.json", "w") as fh:
            dump_json(doc, fh)
        if not args.no_plots:
            from .plotting import margins_figure

            margins_figure([(m.K_h, m.M_e, m.r, m.report.worst_pm, m.report.stable) for m in members], out / "margins.png")
    return EXIT_UNSTABLE if n_bad else EXIT_OK


def _simulate_one(cfg: RunConfig, ne):
    from .simulate import amplification_metrics, assemble, fit_human_from_trace, run, step_metrics

    sys_ = assemble(
        ne.human, ne.exo, cfg.actuator, cfg.spring_loop, cfg.amplifier, cfg.delay_s,
        dob=ne.dob, env_stiffness=ne.env_stiffness,
    )
    spec = ne.spec
    trace = run(sys_, spec)
    m = {"name": ne.name, "kind": spec.kind, "verdict": trace.verdict, "K_h": ne.human.K_h, "B_h": ne.human.B_h,
         "M_e": ne.exo.M_e, "r": ne.exo.r}
    try:
        if spec.kind == "step_release":
            st = step_metrics(trace)
            m["step"] = st.to_dict()
            m["verdict"] = st.verdict
            if trace.verdict == "ok":
                m["human_fit"] = fit_human_from_trace(trace).to_dict()
        elif spec.kind == "tracking" and trace.verdict == "ok":
            kind = "static" if spec.waveform == "trapezoid" else "dynamic"
            m["amplification"] = amplification_metrics(trace, kind).to_dict()
            from .plant import force_plant_dob

            P_s = force_plant_dob(reflect_to_linear(ne.human, ne.exo), cfg.actuator, cfg.spring_loop).with_delay(cfg.delay_s)
            om = 0.0 if kind == "static" else 2 * np.pi * spec.waveform_frequency
            pred = expected_amplification(cfg.amplifier, P_s, om)
            m["expected"] = {"gain": abs(pred), "phase_deg": None if kind == "static" else float(np.degrees(np.angle(pred)))}
    except (InsufficientData, NoFlatRegion, RankDeficient) as exc:
        m["metric_error"] = f"{type(exc).__name__}: {exc}"
    return trace, m


def _simulate_job(payload):
    cfg, ne = payload
    return _simulate_one(cfg, ne)


def cmd_simulate(cfg: RunConfig, args) -> int:
    if not cfg.experiments:
        raise ConfigError("no experiment configured (add an experiment or experiments section)")
    jobs = [(cfg, ne) for ne in cfg.experiments]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_simulate_job, jobs))
    else:
        results = [_simulate_job(j) for j in jobs]
    out = _out_dir(args)
    doc = {"version": __version__, "experiments": [m for _, m in results]}
    for trace, m in results:
        line = f"{m['name']}: {m['kind']} {m['verdict']}"
        if "amplification" in m:
            a = m["amplification"]
            line += f" gain {a['gain']:.4f}" + (f" phase {a['phase_deg']:.2f} deg" if a["phase_deg"] is not None else "")
        if "step" in m and m["step"]["settling_time"] is not None:
            line += f" settling {m['step']['settling_time']:.3f} s"
        print(line, file=sys.stderr if out is None else sys.stdout)
    if out:
        for trace, m in results:
            trace.to_csv(out / f"{m['name']}.csv", header_comment=f"ampx {__version__}")
            if not args.no_plots:
                from .plotting import trace_figure

                trace_figure(trace, out / f"{m['name']}.png", title=m["name"])
        with open(out / "metrics.json", "w") as fh:
            dump_json(doc, fh)
    else:
        dump_json(doc, sys.stdout)
    return EXIT_OK


def _resolve_inputs(cfg: RunConfig, args):
    if args.input:
        return [Path(p) for p in args.input]
    base = Path(args.config).resolve().parent
    return [p if p.is_absolute() else base / p for p in map(Path, cfg.identify.inputs)]


def cmd_identify(cfg: RunConfig, args) -> int:
    from .sysid import estimate_frf, fit_impedance, read_log_csv, zeta_statistics

    opts = cfg.identify
    band = tuple(args.band) if args.band else opts.band
    paths = _resolve_inputs(cfg, args)
    if not paths:
        raise ConfigError("no identification inputs (identify.inputs or --input)")
    out = _out_dir(args)
    fits = []
    entries = []
    for p in paths:
        if not p.exists():
            raise ConfigError(f"input log {p} does not exist")
        log = read_log_csv(p)
        t = log["t"]
        if t.size < 2:
            from .errors import TooShort

            raise TooShort(f"{p} holds fewer than two samples")
        fs = 1.0 / float(np.median(np.diff(t)))
        frf = estimate_frf(log["theta_e"], log["tau_s"], fs, opts.window_s)
        fit = fit_impedance(frf, band, opts.M_known, opts.coherence_min, opts.inertia_decades)
        fits.append(fit)
        entries.append({"input": str(p), **fit.to_dict()})
        print(
            f"{p.name}: K_h={fit.K_h:.4g} B_h={fit.B_h:.4g} M_total={fit.M_total:.4g} zeta={fit.zeta:.4f}",
            file=sys.stderr if out is None else sys.stdout,
        )
        if out:
            with open(out / f"frf_{p.stem}.csv", "w") as fh:
                write_table(
                    fh,
                    ["omega_rad_s", "re", "im", "coherence"],
                    zip(frf.omegas, frf.values.real, frf.values.imag, frf.coherence),
                )
            if not args.no_plots:
                from .plotting import frf_figure

                frf_figure(frf, fit, out / f"frf_{p.stem}.png", opts.coherence_min)
    doc = {"version": __version__, "fits": entries}
    if len(fits) >= 2:
        doc["zeta_statistics"] = zeta_statistics(fits).to_dict()
    if out:
        with open(out / "identify.json", "w") as fh:
            dump_json(doc, fh)
    else:
        dump_json(doc, sys.stdout)
    return EXIT_OK


_COMMANDS = {"bode": cmd_bode, "margins": cmd_margins, "simulate": cmd_simulate, "identify": cmd_identify}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ampx", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"ampx {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (stdout when omitted)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config entry")
        p.add_argument("--no-plots", action="store_true", help="skip PNG figures in --out")
        if name == "bode":
            p.add_argument("--which", choices=["P_s", "P_alpha", "open_loop"])
        if name == "identify":
            p.add_argument("--input", action="append", help="time-series CSV (repeatable)")
            p.add_argument("--band", nargs=2, type=float, metavar=("LO", "HI"), help="fit band in rad/s")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.set)
    if getattr(args, "which", None):
        overrides.append(f"bode.which={args.which}")
    try:
        cfg = load_config(args.config, overrides)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"ampx: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IdentificationError as exc:
        print(f"ampx: identification failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IDENT
    except BrokenPipeError:
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

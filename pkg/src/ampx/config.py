"""JSON run configuration with line-aware validation.

A configuration document has these top-level sections (all optional)::

    human        K_h, B_h or zeta, M_h                 (Nm/rad, Nms/rad, kg m^2)
    exo          M_e or M_e_tilde, M_e_bar, r          (kg m^2, m)
    actuator     k_s, m_a, b_a                         (N/m, kg, Ns/m)
    spring_loop  k_ss/b_ss or stiffness_scale/damping_scale, q_cutoff_hz, q_order
    amplifier    preset ("robust"|"aggressive"), alpha, k_p, z, p
    delay_s      lumped loop delay (s)
    ensemble     K_h/M_e/r as [lo, hi, count], zeta, M_h, M_e_bar
    bode         which, omega_min, omega_max, points, sweep, controller
    experiment   one experiment (ExperimentSpec fields plus name/human/exo)
    experiments  list of experiments
    identify     inputs, band, coherence_min, window_s, M_known, inertia_decades
    workers      process count for ensemble sweeps and experiment batches

Unknown keys are rejected and every error names the line of the offending
key in the source file.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, fields

from .control import AGGRESSIVE, ROBUST, AmplifierConfig, EnsembleSpec
from .errors import ConfigError
from .plant import TESTBED_ACTUATOR, ActuatorParams, ExoParams, HumanParams, SpringLoopConfig
from .simulate import ExperimentSpec

__all__ = ["RunConfig", "BodeOptions", "IdentifyOptions", "NamedExperiment", "load_config", "parse_config", "apply_set"]

_TOP = {
    "human",
    "exo",
    "actuator",
    "spring_loop",
    "amplifier",
    "delay_s",
    "ensemble",
    "bode",
    "experiment",
    "experiments",
    "identify",
    "workers",
}
_HUMAN = {"K_h", "B_h", "M_h", "zeta"}
_EXO = {"M_e", "M_e_bar", "M_e_tilde", "r"}
_ACT = {"k_s", "m_a", "b_a"}
_SPRING = {"k_ss", "b_ss", "stiffness_scale", "damping_scale", "q_cutoff_hz", "q_order"}
_AMP = {"preset", "alpha", "k_p", "z", "p"}
_ENS = {"K_h", "M_e", "r", "zeta", "M_h", "M_e_bar"}
_BODE = {"which", "omega_min", "omega_max", "points", "sweep", "controller"}
_EXP = {f.name for f in fields(ExperimentSpec)} | {"name", "human", "exo", "env_stiffness", "dob"}
_IDENT = {"inputs", "band", "coherence_min", "window_s", "M_known", "inertia_decades"}


@dataclass(frozen=True)
class BodeOptions:
    which: str = "P_alpha"
    omega_min: float = 1e-2
    omega_max: float = 1e4
    points: int = 400
    sweep: bool = False
    controller: str = "amplifier"

    def __post_init__(self):
        if self.controller not in ("amplifier", "unity"):
            raise ValueError(f"controller must be amplifier or unity, got {self.controller!r}")
        if self.which not in ("P_s", "P_alpha", "open_loop"):
            raise ValueError(f"which must be P_s, P_alpha or open_loop, got {self.which!r}")
        if not 0 < self.omega_min < self.omega_max or self.points < 2:
            raise ValueError("need 0 < omega_min < omega_max and points >= 2")


@dataclass(frozen=True)
class IdentifyOptions:
    inputs: tuple = ()
    band: tuple | None = None
    coherence_min: float = 0.9
    window_s: float = 20.0
    M_known: float | None = None
    inertia_decades: float = 0.5

    def __post_init__(self):
        if self.band is not None and (len(self.band) != 2 or not 0 < self.band[0] < self.band[1]):
            raise ValueError(f"band must be [lo, hi] with 0 < lo < hi, got {self.band}")
        if not 0 <= self.coherence_min <= 1:
            raise ValueError("coherence_min must lie in [0, 1]")
        if not self.window_s > 0:
            raise ValueError("window_s must be positive")


@dataclass(frozen=True)
class NamedExperiment:
    name: str
    human: HumanParams
    exo: ExoParams
    spec: ExperimentSpec
    env_stiffness: float = 0.0
    dob: bool = True


@dataclass(frozen=True)
class RunConfig:
    human: HumanParams
    exo: ExoParams
    actuator: ActuatorParams
    spring_loop: SpringLoopConfig
    amplifier: AmplifierConfig
    delay_s: float = 0.006
    ensemble: EnsembleSpec | None = None
    bode: BodeOptions = field(default_factory=BodeOptions)
    experiments: tuple = ()
    identify: IdentifyOptions = field(default_factory=IdentifyOptions)
    workers: int = 1
    raw: dict = field(default_factory=dict, repr=False, compare=False)


class _Locator:
    """Map a key path to the line where it appears in the source text."""

    def __init__(self, text: str):
        self.text = text

    def line(self, path) -> int | None:
        pos = 0
        for part in path:
            if isinstance(part, int):
                continue
            m = re.compile(r'"%s"\s*:' % re.escape(part)).search(self.text, pos)
            if m is None:
                return None
            pos = m.start()
        if not path:
            return 1
        return self.text.count("\n", 0, pos) + 1


def _fail(loc: _Locator, path, message):
    where = ".".join(str(p) for p in path) if path else "<root>"
    raise ConfigError(f"{where}: {message}", loc.line(path))


def _section(data, key, allowed, loc, path):
    sec = data.get(key, {})
    if not isinstance(sec, dict):
        _fail(loc, path + [key], "expected an object")
    for k in sec:
        if k not in allowed:
            _fail(loc, path + [key, k], f"unknown key (allowed: {', '.join(sorted(allowed))})")
    return sec


def _number(sec, key, loc, path, default=None, kind=float):
    if key not in sec:
        return default
    v = sec[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (kind is int and int(v) != v):
        _fail(loc, path + [key], f"expected a {'integer' if kind is int else 'number'}, got {v!r}")
    return kind(v)


def _build(loc, path, ctor, **kw):
    try:
        return ctor(**kw)
    except (ValueError, TypeError) as exc:
        _fail(loc, path, str(exc))


def _human(sec, exo: ExoParams, loc, path) -> HumanParams:
    K = _number(sec, "K_h", loc, path, 27.12)
    M_h = _number(sec, "M_h", loc, path, 0.09)
    if "B_h" in sec and "zeta" in sec:
        _fail(loc, path + ["zeta"], "give either B_h or zeta, not both")
    if "B_h" in sec:
        return _build(loc, path, HumanParams, K_h=K, B_h=_number(sec, "B_h", loc, path), M_h=M_h)
    zeta = _number(sec, "zeta", loc, path, 0.23)
    return _build(loc, path, HumanParams.from_zeta, K_h=K, M_h=M_h, M_e=exo.M_e, zeta=zeta)


def _exo(sec, loc, path) -> ExoParams:
    r = _number(sec, "r", loc, path, 0.015)
    bar = _number(sec, "M_e_bar", loc, path, 0.1)
    if "M_e" in sec and "M_e_tilde" in sec:
        _fail(loc, path + ["M_e_tilde"], "give either M_e or M_e_tilde, not both")
    if "M_e" in sec:
        return _build(loc, path, ExoParams.loaded, M_e=_number(sec, "M_e", loc, path), r=r, M_e_bar=bar)
    return _build(loc, path, ExoParams, M_e_bar=bar, M_e_tilde=_number(sec, "M_e_tilde", loc, path, 0.0), r=r)


def _experiment(sec, base_human, base_exo, index, loc, path, human_sec=None) -> NamedExperiment:
    for k in sec:
        if k not in _EXP:
            _fail(loc, path + [k], f"unknown key (allowed: {', '.join(sorted(_EXP))})")
    exo = _exo(_section(sec, "exo", _EXO, loc, path), loc, path + ["exo"]) if "exo" in sec else base_exo
    human = base_human
    if "human" in sec:
        human = _human(_section(sec, "human", _HUMAN, loc, path), exo, loc, path + ["human"])
    elif "exo" in sec and human_sec is not None:
        # a zeta-based human depends on the loaded inertia
        human = _human(human_sec, exo, loc, ["human"])
    kw = {k: v for k, v in sec.items() if k not in ("name", "human", "exo", "env_stiffness", "dob")}
    spec = _build(loc, path, ExperimentSpec, **kw)
    name = sec.get("name", f"exp{index}")
    if not isinstance(name, str) or not re.fullmatch(r"[A-Za-z0-9_.-]+", name):
        _fail(loc, path + ["name"], "name must be a simple file-name token")
    env = _number(sec, "env_stiffness", loc, path, 0.0)
    dob = sec.get("dob", True)
    if not isinstance(dob, bool):
        _fail(loc, path + ["dob"], "expected true or false")
    return NamedExperiment(name, human, exo, spec, env, dob)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse and validate a configuration document."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: invalid JSON: {exc.msg}", exc.lineno) from None
    return build_config(data, text)


def build_config(data: dict, text: str = "") -> RunConfig:
    loc = _Locator(text)
    if not isinstance(data, dict):
        _fail(loc, [], "top level must be an object")
    for k in data:
        if k not in _TOP:
            _fail(loc, [k], f"unknown section (allowed: {', '.join(sorted(_TOP))})")

    exo = _exo(_section(data, "exo", _EXO, loc, []), loc, ["exo"])
    human = _human(_section(data, "human", _HUMAN, loc, []), exo, loc, ["human"])

    a = _section(data, "actuator", _ACT, loc, [])
    actuator = _build(
        loc,
        ["actuator"],
        ActuatorParams,
        k_s=_number(a, "k_s", loc, ["actuator"], TESTBED_ACTUATOR.k_s),
        m_a=_number(a, "m_a", loc, ["actuator"], TESTBED_ACTUATOR.m_a),
        b_a=_number(a, "b_a", loc, ["actuator"], TESTBED_ACTUATOR.b_a),
    )

    s = _section(data, "spring_loop", _SPRING, loc, [])
    sp = ["spring_loop"]
    if ("k_ss" in s or "b_ss" in s) and ("stiffness_scale" in s or "damping_scale" in s):
        _fail(loc, sp, "give k_ss/b_ss or stiffness_scale/damping_scale, not both")
    qc = _number(s, "q_cutoff_hz", loc, sp, 40.0)
    qo = _number(s, "q_order", loc, sp, 2, int)
    if "k_ss" in s or "b_ss" in s:
        spring = _build(
            loc, sp, SpringLoopConfig,
            k_ss=_number(s, "k_ss", loc, sp, 2.0 * actuator.k_s),
            b_ss=_number(s, "b_ss", loc, sp, 0.039 * actuator.k_s),
            q_cutoff_hz=qc, q_order=qo,
        )
    else:
        spring = _build(
            loc, sp, SpringLoopConfig.from_actuator,
            a=actuator,
            stiffness_scale=_number(s, "stiffness_scale", loc, sp, 2.0),
            damping_scale=_number(s, "damping_scale", loc, sp, 0.039),
            q_cutoff_hz=qc, q_order=qo,
        )

    m = _section(data, "amplifier", _AMP, loc, [])
    base = ROBUST
    if "preset" in m:
        presets = {"robust": ROBUST, "aggressive": AGGRESSIVE}
        if m["preset"] not in presets:
            _fail(loc, ["amplifier", "preset"], f"preset must be one of {sorted(presets)}")
        base = presets[m["preset"]]
    amplifier = _build(
        loc, ["amplifier"], AmplifierConfig,
        **{k: _number(m, k, loc, ["amplifier"], getattr(base, k)) for k in ("alpha", "k_p", "z", "p")},
    )

    delay = _number(data, "delay_s", loc, [], 0.006)
    if delay < 0:
        _fail(loc, ["delay_s"], "delay must be nonnegative")

    ensemble = None
    if "ensemble" in data:
        e = _section(data, "ensemble", _ENS, loc, [])
        kw = {}
        for key in ("K_h", "M_e", "r"):
            if key in e:
                v = e[key]
                if not (isinstance(v, list) and len(v) == 3 and all(isinstance(x, (int, float)) for x in v)):
                    _fail(loc, ["ensemble", key], "expected [lo, hi, count]")
                kw[key] = tuple(v)
        for key in ("zeta", "M_h", "M_e_bar"):
            if key in e:
                kw[key] = _number(e, key, loc, ["ensemble"])
        ensemble = _build(loc, ["ensemble"], EnsembleSpec, delay_s=delay, **kw)

    b = _section(data, "bode", _BODE, loc, [])
    bode = _build(loc, ["bode"], BodeOptions, **b)

    experiments = []
    if "experiment" in data and "experiments" in data:
        _fail(loc, ["experiments"], "give either experiment or experiments")
    if "experiment" in data:
        sec = _section(data, "experiment", _EXP, loc, [])
        experiments.append(_experiment(sec, human, exo, 0, loc, ["experiment"], data.get("human", {})))
    if "experiments" in data:
        if not isinstance(data["experiments"], list):
            _fail(loc, ["experiments"], "expected a list")
        for i, sec in enumerate(data["experiments"]):
            if not isinstance(sec, dict):
                _fail(loc, ["experiments", i], "expected an object")
            experiments.append(_experiment(sec, human, exo, i, loc, ["experiments", i], data.get("human", {})))
        names = [e.name for e in experiments]
        if len(set(names)) != len(names):
            _fail(loc, ["experiments"], "experiment names must be unique")

    idn = _section(data, "identify", _IDENT, loc, [])
    kw = dict(idn)
    if "inputs" in kw:
        if not (isinstance(kw["inputs"], list) and all(isinstance(p, str) for p in kw["inputs"])):
            _fail(loc, ["identify", "inputs"], "expected a list of file paths")
        kw["inputs"] = tuple(kw["inputs"])
    if kw.get("band") is not None:
        kw["band"] = tuple(kw["band"])
    identify = _build(loc, ["identify"], IdentifyOptions, **kw)

    workers = _number(data, "workers", loc, [], 1, int)
    if workers < 1:
        _fail(loc, ["workers"], "workers must be at least 1")

    return RunConfig(
        human, exo, actuator, spring, amplifier, delay, ensemble, bode, tuple(experiments), identify, workers, data
    )


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_set(data: dict, assignment: str) -> dict:
    """Apply one ``dotted.key=value`` override; the value is read as JSON when it parses."""
    if "=" not in assignment:
        raise ConfigError(f"--set {assignment!r}: expected key=value")
    key, value = assignment.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"--set {assignment!r}: empty key")
    node = data
    for p in parts[:-1]:
        if isinstance(node, list):
            try:
                node = node[int(p)]
            except (ValueError, IndexError):
                raise ConfigError(f"--set {key}: no list element {p!r}") from None
        else:
            node = node.setdefault(p, {})
        if not isinstance(node, (dict, list)):
            raise ConfigError(f"--set {key}: {p!r} is not a section")
    last = parts[-1]
    if isinstance(node, list):
        try:
            node[int(last)] = _parse_value(value)
        except (ValueError, IndexError):
            raise ConfigError(f"--set {key}: no list element {last!r}") from None
    else:
        node[last] = _parse_value(value)
    return data


def load_config(path, overrides=()) -> RunConfig:
    """Read, override and validate a configuration file."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc.msg}", exc.lineno) from None
    for a in overrides:
        apply_set(data, a)
    return build_config(data, text)

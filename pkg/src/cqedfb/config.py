"""Experiment configuration: JSON documents, validation and presets.

A configuration is a JSON object with a ``scenario`` key and optional
sections ``system``, ``feedback``, ``sde``, ``set_device``, ``phase_shift``,
``set_mixer``, ``ensemble`` and ``output``. Unknown keys anywhere are
rejected; missing keys take the defaults below (the feedback-simulation
defaults are the reference parameter set). ``ExperimentConfig.to_dict()``
emits the fully resolved document, which parses back to an equal config.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

SCENARIOS = ("phase-shift", "set-mixer", "lindblad", "trajectory", "feedback-ensemble")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SystemSection:
    kappa: float = 100.0
    chi: float = 25.0
    epsilon: float = 100.0
    g: float = 0.0
    Delta: float | None = None
    omega_r: float = 0.0
    omega_a: float = 0.0

    def validate(self):
        if not self.kappa > 0:
            raise ConfigError("system.kappa must be > 0")
        if self.Delta == 0:
            raise ConfigError("system.Delta must be nonzero when given")


@dataclass(frozen=True)
class FeedbackSection:
    lam: float = 100.0
    power: int = 3
    t_window: float = 0.2
    gamma: float = 0.003
    norm: float | None = None
    clamp: bool = True

    def validate(self):
        if self.lam < 0:
            raise ConfigError("feedback.lam must be >= 0")
        if int(self.power) != self.power or self.power < 1 or self.power % 2 == 0:
            raise ConfigError("feedback.power must be an odd positive integer")
        if not self.t_window > 0:
            raise ConfigError("feedback.t_window must be > 0")
        if self.gamma < 0:
            raise ConfigError("feedback.gamma must be >= 0")
        if self.norm is not None and not self.norm > 0:
            raise ConfigError("feedback.norm must be > 0")


@dataclass(frozen=True)
class SdeSection:
    dt: float = 1e-4
    t_final: float = 10.0
    fock_dim: int = 15
    sample_every: int = 100

    def validate(self):
        if not self.dt > 0:
            raise ConfigError("sde.dt must be > 0")
        if not self.t_final > 0:
            raise ConfigError("sde.t_final must be > 0")
        ratio = self.t_final / self.dt
        if abs(ratio - round(ratio)) > 1e-6 * max(1.0, ratio):
            raise ConfigError("sde.t_final must be an integer multiple of sde.dt")
        if self.fock_dim < 2:
            raise ConfigError("sde.fock_dim must be >= 2")
        if self.sample_every < 1:
            raise ConfigError("sde.sample_every must be >= 1")


@dataclass(frozen=True)
class SetDeviceSection:
    i0: float = 1.0
    delta_i0: float = 0.5
    c_g: float = 1.0
    v_dc: float = 0.0
    operating_point: str = "A"

    def validate(self):
        if not self.delta_i0 > 0:
            raise ConfigError("set_device.delta_i0 must be > 0")
        if not self.c_g > 0:
            raise ConfigError("set_device.c_g must be > 0")
        if self.operating_point not in ("A", "B"):
            raise ConfigError("set_device.operating_point must be 'A' or 'B'")


@dataclass(frozen=True)
class PhaseShiftSection:
    span: float = 5.0  # sweep half-width in units of kappa
    points: int = 201
    steady_state: bool = False

    def validate(self):
        if not self.span > 0 or self.points < 2:
            raise ConfigError("phase_shift.span must be > 0 and points >= 2")


@dataclass(frozen=True)
class SetMixerSection:
    signal: tuple = (0.005, 0.0025)
    lo: tuple = (0.0035, -0.0015)
    omega_signal: float = 11.0
    omega_lo: float = 10.0
    lo_phase: float = 0.0
    periods: int = 2
    samples_per_period: int = 1024
    amplitudes: tuple = (0.0003, 0.001, 0.003, 0.01, 0.03, 0.1)

    def validate(self):
        if len(self.signal) != 2 or len(self.lo) != 2:
            raise ConfigError("set_mixer.signal and set_mixer.lo are [x, y] pairs")
        if not (self.omega_signal > 0 and self.omega_lo > 0) or self.omega_signal == self.omega_lo:
            raise ConfigError("set_mixer frequencies must be positive and distinct")
        if self.periods < 1 or self.samples_per_period < 8:
            raise ConfigError("set_mixer.periods >= 1 and samples_per_period >= 8 required")
        if any(not a > 0 for a in self.amplitudes):
            raise ConfigError("set_mixer.amplitudes must be positive")


@dataclass(frozen=True)
class EnsembleSection:
    n_traj: int = 100
    master_seed: int = 0
    initial: str = "product"
    alpha: float = 3.0
    threshold: float = 0.99

    def validate(self):
        if self.n_traj < 1:
            raise ConfigError("ensemble.n_traj must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("ensemble.master_seed must be a 64-bit unsigned integer")
        if self.initial not in ("product", "phi_plus"):
            raise ConfigError("ensemble.initial must be 'product' or 'phi_plus'")
        if not 0 < self.threshold < 1:
            raise ConfigError("ensemble.threshold must lie in (0, 1)")


@dataclass(frozen=True)
class OutputSection:
    out_dir: str = "out"
    svg: bool = False
    trajectories: int = 0

    def validate(self):
        if self.trajectories < 0:
            raise ConfigError("output.trajectories must be >= 0")


_SECTIONS = {
    "system": SystemSection,
    "feedback": FeedbackSection,
    "sde": SdeSection,
    "set_device": SetDeviceSection,
    "phase_shift": PhaseShiftSection,
    "set_mixer": SetMixerSection,
    "ensemble": EnsembleSection,
    "output": OutputSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    system: SystemSection = field(default_factory=SystemSection)
    feedback: FeedbackSection = field(default_factory=FeedbackSection)
    sde: SdeSection = field(default_factory=SdeSection)
    set_device: SetDeviceSection = field(default_factory=SetDeviceSection)
    phase_shift: PhaseShiftSection = field(default_factory=PhaseShiftSection)
    set_mixer: SetMixerSection = field(default_factory=SetMixerSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    output: OutputSection = field(default_factory=OutputSection)

    def validate(self) -> "ExperimentConfig":
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        for name in _SECTIONS:
            getattr(self, name).validate()
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        for sec in d.values():
            if isinstance(sec, dict):
                for k, v in sec.items():
                    if isinstance(v, tuple):
                        sec[k] = list(v)
        return d

    def with_overrides(self, **sections) -> "ExperimentConfig":
        """Return a copy with ``section={key: value}`` updates applied and validated."""
        updates = {}
        for name, values in sections.items():
            if name == "scenario":
                updates["scenario"] = values
                continue
            updates[name] = replace(getattr(self, name), **values)
        return replace(self, **updates).validate()


def _build_section(cls, name: str, raw) -> object:
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {name}: {', '.join(unknown)}")
    values = {}
    for key, val in raw.items():
        default = known[key].default
        if isinstance(default, tuple) and isinstance(val, list):
            val = tuple(tuple(v) if isinstance(v, list) else v for v in val)
        elif isinstance(default, bool):
            if not isinstance(val, bool):
                raise ConfigError(f"{name}.{key} must be true or false")
        elif isinstance(default, int) and not isinstance(default, bool):
            if isinstance(val, bool) or not isinstance(val, (int, float)) or int(val) != val:
                raise ConfigError(f"{name}.{key} must be an integer")
            val = int(val)
        elif isinstance(default, float) or (default is None and key in ("Delta", "norm")):
            if val is not None:
                if isinstance(val, bool) or not isinstance(val, (int, float)):
                    raise ConfigError(f"{name}.{key} must be a number")
                val = float(val)
        values[key] = val
    return cls(**values)


def config_from_dict(doc: dict, scenario: str | None = None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = sorted(set(doc) - set(_SECTIONS) - {"scenario"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    scen = doc.get("scenario", scenario)
    if scen is None:
        raise ConfigError("missing scenario")
    if scenario is not None and scen != scenario:
        raise ConfigError(f"config scenario {scen!r} does not match requested {scenario!r}")
    sections = {name: _build_section(cls, name, doc.get(name)) for name, cls in _SECTIONS.items()}
    return ExperimentConfig(scenario=scen, **sections).validate()


def parse_config(text: str, scenario: str | None = None) -> ExperimentConfig:
    """Parse a JSON configuration document (a run manifest is accepted too)."""
    try:
        doc = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    if isinstance(doc, dict) and "config" in doc and "version" in doc:
        doc = doc["config"]
    return config_from_dict(doc, scenario)


PRESETS = {
    "desk-scale": {
        "scenario": "feedback-ensemble",
        "sde": {"fock_dim": 15},
        "ensemble": {"n_traj": 100},
    },
    "paper-fig5": {
        "scenario": "feedback-ensemble",
        "sde": {"fock_dim": 25},
        "ensemble": {"n_traj": 300},
        "output": {"svg": True},
    },
    "paper-fig6": {
        "scenario": "feedback-ensemble",
        "sde": {"fock_dim": 25},
        "ensemble": {"n_traj": 300},
        "output": {"svg": True},
    },
}


def preset(name: str) -> ExperimentConfig:
    try:
        doc = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from None
    return config_from_dict(json.loads(json.dumps(doc)))

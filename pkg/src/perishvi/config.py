"""Experiment configuration files.

The format is ``key = value`` text grouped under section headers, e.g.::

    scenario = a
    [params]
    m = 2
    issuing = lifo
    [vi]
    epsilon = 1e-4

A dotted key at top level (``vi.epsilon = 1e-4``) is the same as the key
inside its section.  Unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, ParameterError
from .scenario_a import ScenarioA, ScenarioAParams
from .scenario_b import ScenarioB, ScenarioBParams
from .scenario_c import ScenarioC, ScenarioCParams, shelf_life_coefficients
from .simopt import GaConfig
from .simulate import RolloutConfig
from .vi import ViConfig

SCENARIOS = {
    "a": (ScenarioA, ScenarioAParams),
    "b": (ScenarioB, ScenarioBParams),
    "c": (ScenarioC, ScenarioCParams),
}
SECTIONS = ("params", "vi", "simopt", "evaluation")
TOP_KEYS = ("scenario", "name", "output")
SIMOPT_KEYS = ("method", "n_rollouts", "base_seed") + tuple(
    f.name for f in dataclasses.fields(GaConfig)
)
# scenario C picks its shelf-life coefficients by experiment number
C_EXTRA_KEYS = ("experiment",)
_TOP = "__top__"


def _field_types(cls) -> dict:
    return {f.name: f.default for f in dataclasses.fields(cls)}


def _coerce(key: str, text: str, like):
    text = text.strip()
    try:
        if text.lower() in ("none", ""):
            return None
        if isinstance(like, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(like, tuple):
            return tuple(float(x) for x in text.split(",") if x.strip())
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float) or like is None:
            # None defaults here are numeric (order caps, gamma)
            number = float(text)
            return int(number) if like is None and number.is_integer() else number
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


@dataclass
class ExperimentConfig:
    scenario: str
    params: dict = field(default_factory=dict)
    vi: dict = field(default_factory=dict)
    simopt: dict = field(default_factory=dict)
    evaluation: dict = field(default_factory=dict)
    output: str | None = None
    name: str = ""

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of a, b, c; got {self.scenario!r}")
        self._check_keys("params", self.params, self._param_keys())
        self._check_keys("vi", self.vi, tuple(f.name for f in dataclasses.fields(ViConfig)))
        self._check_keys("simopt", self.simopt, SIMOPT_KEYS)
        self._check_keys("evaluation", self.evaluation,
                         tuple(f.name for f in dataclasses.fields(RolloutConfig)))

    def _param_keys(self):
        keys = tuple(f.name for f in dataclasses.fields(SCENARIOS[self.scenario][1]))
        return keys + (C_EXTRA_KEYS if self.scenario == "c" else ())

    @staticmethod
    def _check_keys(section, values, allowed):
        unknown = sorted(set(values) - set(allowed))
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")

    # -- builders --------------------------------------------------------

    def build_model(self):
        model_cls, params_cls = SCENARIOS[self.scenario]
        values = dict(self.params)
        if self.scenario == "c":
            experiment = int(values.pop("experiment", 1))
            if "c0" not in values or "c1" not in values:
                c0, c1 = shelf_life_coefficients(int(values.get("m", 3)), experiment)
                values.setdefault("c0", tuple(c0))
                values.setdefault("c1", tuple(c1))
        try:
            return model_cls(params_cls(**values))
        except (ParameterError, TypeError) as exc:
            raise ConfigError(f"invalid [params]: {exc}") from exc

    def vi_config(self) -> ViConfig:
        try:
            return ViConfig(**self.vi)
        except (ParameterError, TypeError) as exc:
            raise ConfigError(f"invalid [vi]: {exc}") from exc

    def rollout_config(self) -> RolloutConfig:
        try:
            return RolloutConfig(**self.evaluation)
        except (ParameterError, TypeError) as exc:
            raise ConfigError(f"invalid [evaluation]: {exc}") from exc

    def search_rollout_config(self) -> RolloutConfig:
        base = dict(self.evaluation)
        base["n_rollouts"] = self.simopt.get("n_rollouts", 4000)
        if "base_seed" in self.simopt:
            base["base_seed"] = self.simopt["base_seed"]
        try:
            return RolloutConfig(**base)
        except (ParameterError, TypeError) as exc:
            raise ConfigError(f"invalid [simopt]: {exc}") from exc

    def ga_config(self) -> GaConfig:
        values = {k: v for k, v in self.simopt.items()
                  if k not in ("method", "n_rollouts", "base_seed")}
        try:
            return GaConfig(**values)
        except (ParameterError, TypeError) as exc:
            raise ConfigError(f"invalid [simopt]: {exc}") from exc

    # -- text form -------------------------------------------------------

    def to_text(self) -> str:
        lines = [f"scenario = {self.scenario}"]
        if self.name:
            lines.append(f"name = {self.name}")
        if self.output:
            lines.append(f"output = {self.output}")
        for section in SECTIONS:
            values = getattr(self, section)
            if not values:
                continue
            lines.append("")
            lines.append(f"[{section}]")
            for key, value in values.items():
                if isinstance(value, tuple):
                    value = ", ".join(repr(float(x)) for x in value)
                lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def _typed_section(scenario: str, section: str, raw: dict) -> dict:
    if section == "params":
        like = _field_types(SCENARIOS[scenario][1])
        like["experiment"] = 1
    elif section == "vi":
        like = _field_types(ViConfig)
        like.update(gamma=0.0, convergence_test="")
    elif section == "evaluation":
        like = _field_types(RolloutConfig)
        like["gamma"] = 0.0
    else:
        like = _field_types(GaConfig)
        like.update(method="auto", n_rollouts=4000, base_seed=0, mutation_prob=0.0)
    out = {}
    for key, text in raw.items():
        if key not in like:
            raise ConfigError(f"unknown key in [{section}]: {key}")
        out[key] = _coerce(f"{section}.{key}", text, like[key])
    return out


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(
        default_section="__defaults__", interpolation=None, delimiters=("=",),
        comment_prefixes=("#", ";"), inline_comment_prefixes=("#",),
    )
    parser.optionxform = str
    try:
        parser.read_string(f"[{_TOP}]\n" + text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    raw = {s: {} for s in SECTIONS}
    top = {}
    for section in parser.sections():
        items = dict(parser.items(section))
        if section == _TOP:
            for key, value in items.items():
                if "." in key:
                    head, _, tail = key.partition(".")
                    if head not in raw:
                        raise ConfigError(f"{source}: unknown section in key {key!r}")
                    raw[head][tail] = value
                elif key in TOP_KEYS:
                    top[key] = value.strip()
                else:
                    raise ConfigError(f"{source}: unknown top-level key {key!r}")
        elif section in raw:
            raw[section].update(items)
        else:
            raise ConfigError(f"{source}: unknown section [{section}]")
    scenario = top.get("scenario")
    if scenario not in SCENARIOS:
        raise ConfigError(f"{source}: scenario must be one of a, b, c; got {scenario!r}")
    typed = {s: _typed_section(scenario, s, raw[s]) for s in SECTIONS}
    return ExperimentConfig(scenario=scenario, output=top.get("output"),
                            name=top.get("name", ""), **typed)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))

"""Experiment configuration: TOML files with typed sections, strict keys and presets."""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from typing import Any

import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .core import S2acError

KINDS = ("entropy-eval", "train-multigoal", "eval-multigoal", "robustness")
SAMPLERS = ("svgd", "dld", "hmc", "sgld")
TARGET_KINDS = ("gaussian", "isotropic", "gmm")
SWEEP_PARAMETERS = ("bandwidth", "epsilon", "steps", "particles", "modes", "target_std")
PRESETS = ("fig4a", "fig4b", "fig4c", "multigoal-alpha-sweep", "smoke")


class ConfigError(S2acError, ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        where = f"{source}:{line}: " if line else f"{source}: "
        super().__init__(where + message)
        self.line = line


def _num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _positive(x):
    return _num(x) and x > 0


def _non_negative_int(x):
    return _int(x) and x >= 0


def _positive_int(x):
    return _int(x) and x >= 1


def _vector(x):
    return isinstance(x, list) and len(x) > 0 and all(_num(v) for v in x)


def _matrix(x):
    return isinstance(x, list) and len(x) > 0 and all(_vector(r) and len(r) == len(x) for r in x)


def _bandwidth(x):
    return x == "adaptive" or _positive(x)


def _one_of(options):
    def check(x):
        return x in options

    check.__doc__ = f"one of {', '.join(map(str, options))}"
    return check


def _list_of(options):
    def check(x):
        return isinstance(x, list) and len(x) > 0 and all(v in options for v in x) and len(set(x)) == len(x)

    check.__doc__ = f"non-empty list of distinct values from {', '.join(options)}"
    return check


def _points(x):
    return isinstance(x, list) and len(x) > 0 and all(_vector(p) and len(p) == 2 for p in x)


def _segment(x):
    return _points(x) and len(x) == 2


def _unit_open(x):
    return _num(x) and 0 < x < 1


def _unit_closed_open(x):
    return _num(x) and 0 <= x < 1


def _hidden(x):
    return isinstance(x, list) and len(x) >= 1 and all(_positive_int(v) for v in x)


def _alphas(x):
    return isinstance(x, list) and len(x) > 0 and all(_positive(v) for v in x)


def _describe(check) -> str:
    names = {
        _num: "a number",
        _int: "an integer",
        _positive: "a positive number",
        _non_negative_int: "a non-negative integer",
        _positive_int: "a positive integer",
        _vector: "a non-empty list of numbers",
        _matrix: "a square matrix (list of equal-length rows)",
        _bandwidth: "a positive number or \"adaptive\"",
        _points: "a list of [x, y] points",
        _segment: "two [x, y] endpoints",
        _unit_open: "a number in (0, 1)",
        _unit_closed_open: "a number in [0, 1)",
        _hidden: "a list of positive integers",
        _alphas: "a list of positive numbers",
        _bool: "true or false",
        _str: "a string",
    }
    return names.get(check) or check.__doc__ or "a valid value"


def _bool(x):
    return isinstance(x, bool)


def _str(x):
    return isinstance(x, str) and x != ""


TOP = {"kind": _one_of(KINDS), "seed": _non_negative_int, "out": _str}

SECTIONS = {
    "sampler": {
        "samplers": _list_of(SAMPLERS),
        "epsilon": _positive,
        "steps": _non_negative_int,
        "particles": _positive_int,
        "bandwidth": _bandwidth,
        "hmc_mass": _positive,
        "init_variance": _positive,
        "repeats": _positive_int,
        "margin": _bool,
        "plots": _bool,
    },
    "target": {
        "kind": _one_of(TARGET_KINDS),
        "mean": _vector,
        "covariance": _matrix,
        "std": _positive,
        "dim": _positive_int,
        "modes": _positive_int,
        "radius": _positive,
        "variance": _positive,
    },
    "env": {
        "goals": _points,
        "goal_radius": _positive,
        "terminal_reward": _num,
        "action_cost": lambda x: _num(x) and x >= 0,
        "action_scale": _positive,
        "horizon": _positive_int,
        "arena": _positive,
        "obstacle": _segment,
        "jitter": lambda x: _num(x) and x >= 0,
    },
    "agent": {
        "alpha": _positive,
        "gamma": _unit_closed_open,
        "lr": _positive,
        "batch_size": _positive_int,
        "tau": lambda x: _num(x) and 0 <= x <= 1,
        "hidden": _hidden,
        "activation": _one_of(("relu", "elu")),
        "epsilon": _positive,
        "svgd_steps": _non_negative_int,
        "particles": _positive_int,
        "range_t": _positive,
        "bandwidth": _bandwidth,
        "sigma_min": _positive,
        "init_variance": _positive,
        "buffer_capacity": _positive_int,
        "amortized": _bool,
        "critic_clip": _bool,
    },
    "train": {
        "total_steps": _non_negative_int,
        "update_after": _non_negative_int,
        "update_every": _positive_int,
        "gradient_steps": _positive_int,
        "amortized_every": _non_negative_int,
        "alphas": _alphas,
        "eval_every": _non_negative_int,
        "eval_episodes": _positive_int,
        "heatmap_size": _positive_int,
        "checkpoint": _str,
        "obstacle": _segment,
    },
}

SWEEP = {"name": _str, "parameter": _one_of(SWEEP_PARAMETERS), "values": _alphas, "target": _one_of(TARGET_KINDS)}
SWEEP.update({k: v for k, v in SECTIONS["sampler"].items() if k not in ("samplers",)})

FIG4_DEFAULTS = {
    "sampler": {
        "samplers": ["svgd", "dld", "hmc", "sgld"],
        "epsilon": 0.5,
        "steps": 200,
        "particles": 200,
        "bandwidth": 5.0,
        "hmc_mass": 1.0,
        "init_variance": 6.0,
        "repeats": 1,
        "margin": True,
        "plots": True,
    },
    "target": {
        "kind": "gaussian",
        "mean": [-0.69, 0.8],
        "covariance": [[1.13, 0.82], [0.82, 3.39]],
        "std": 1.0,
        "dim": 2,
        "modes": 1,
        "radius": 3.0,
        "variance": 0.1,
    },
}

MULTIGOAL_DEFAULTS = {
    "env": {
        "goals": [[4.0, 0.0], [-4.0, 2.0], [-4.0, -2.0]],
        "goal_radius": 0.5,
        "terminal_reward": 10.0,
        "action_cost": 0.05,
        "action_scale": 1.0,
        "horizon": 30,
        "arena": 7.0,
        "jitter": 0.0,
    },
    "agent": {
        "alpha": 1.0,
        "gamma": 0.8,
        "lr": 3e-4,
        "batch_size": 100,
        "tau": 0.005,
        "hidden": [256, 256],
        "activation": "relu",
        "epsilon": 0.01,
        "svgd_steps": 10,
        "particles": 10,
        "range_t": 3.0,
        "bandwidth": "adaptive",
        "sigma_min": 1e-3,
        "init_variance": 0.3,
        "buffer_capacity": 1_000_000,
        "amortized": False,
        "critic_clip": True,
    },
    "train": {
        "total_steps": 100_000,
        "update_after": 1000,
        "update_every": 1,
        "gradient_steps": 1,
        "amortized_every": 0,
        "alphas": [1.0],
        "eval_every": 0,
        "eval_episodes": 20,
        "heatmap_size": 25,
        "obstacle": [[-2.5, 0.5], [-0.5, 2.5]],
    },
}


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 0
    out: str = "runs"
    sections: dict = field(default_factory=dict)
    sweeps: list = field(default_factory=list)

    def section(self, name: str) -> dict:
        return self.sections.get(name, {})

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind, "seed": self.seed, "out": self.out}
        for name in SECTIONS:
            if name in self.sections:
                d[name] = copy.deepcopy(self.sections[name])
        if self.sweeps:
            d["sweep"] = copy.deepcopy(self.sweeps)
        return d

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def replace(self, **changes) -> "ExperimentConfig":
        new = from_dict(self.to_dict())
        for key, value in changes.items():
            setattr(new, key, value)
        return new


def _defaults_for(kind: str) -> dict:
    if kind == "entropy-eval":
        return copy.deepcopy(FIG4_DEFAULTS)
    return copy.deepcopy(MULTIGOAL_DEFAULTS)


def _line_of(text: str | None, section: str | None, key: str | None) -> int | None:
    """Line number of ``key`` inside ``[section]`` (or of the header itself)."""
    if text is None:
        return None
    current = ""
    header = re.compile(r"^\s*\[\[?\s*([A-Za-z0-9_.-]+)\s*\]\]?")
    for no, line in enumerate(text.splitlines(), start=1):
        m = header.match(line)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return no
            continue
        if key is not None and current == (section or "") and re.match(rf"^\s*{re.escape(key)}\s*=", line):
            return no
    return None


def from_dict(raw: dict, text: str | None = None, source: str = "<config>") -> ExperimentConfig:
    """Validate a parsed mapping and fill defaults for the experiment kind."""

    def fail(msg, section=None, key=None):
        raise ConfigError(msg, _line_of(text, section, key), source)

    for key in raw:
        if key not in TOP and key not in SECTIONS and key != "sweep":
            if isinstance(raw[key], dict):
                fail(f"unknown section [{key}]", key)
            fail(f"unknown key {key!r}", None, key)
    if "kind" not in raw:
        fail("missing required key 'kind'")
    for key, check in TOP.items():
        if key in raw and not check(raw[key]):
            fail(f"{key} must be {_describe(check)}, got {raw[key]!r}", None, key)
    kind = raw["kind"]
    merged = _defaults_for(kind)
    for name, schema in SECTIONS.items():
        given = raw.get(name)
        if given is None:
            continue
        if not isinstance(given, dict):
            fail(f"[{name}] must be a table", None, name)
        for key, value in given.items():
            if key not in schema:
                fail(f"unknown key {key!r} in [{name}]", name, key)
            if not schema[key](value):
                fail(f"[{name}] {key} must be {_describe(schema[key])}, got {value!r}", name, key)
        merged.setdefault(name, {}).update(copy.deepcopy(given))
    sweeps = raw.get("sweep", [])
    if not isinstance(sweeps, list):
        fail("[[sweep]] entries must be an array of tables", None, "sweep")
    for entry in sweeps:
        for key, value in entry.items():
            if key not in SWEEP:
                fail(f"unknown key {key!r} in [[sweep]]", "sweep", key)
            if not SWEEP[key](value):
                fail(f"[[sweep]] {key} must be {_describe(SWEEP[key])}, got {value!r}", "sweep", key)
        for required in ("name", "parameter", "values"):
            if required not in entry:
                fail(f"[[sweep]] entry is missing {required!r}", "sweep")
    if kind == "entropy-eval":
        tgt = merged["target"]
        if tgt["kind"] == "gaussian" and len(tgt["covariance"]) != len(tgt["mean"]):
            fail("[target] covariance must match the mean's dimension", "target", "covariance")
    if kind in ("eval-multigoal", "robustness") and "checkpoint" not in merged.get("train", {}):
        fail(f"{kind} needs [train] checkpoint = <run directory>", "train")
    cfg = ExperimentConfig(kind, raw.get("seed", 0), raw.get("out", "runs"), merged, copy.deepcopy(sweeps))
    return cfg


def loads(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        m = re.search(r"line (\d+)", str(err))
        raise ConfigError(f"syntax error: {err}", int(m.group(1)) if m else None, source) from err
    return from_dict(raw, text, source)


def load(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err.strerror}", None, str(path)) from err
    return loads(text, str(path))


def preset(name: str) -> ExperimentConfig:
    if name == "fig4a":
        return from_dict({"kind": "entropy-eval", "out": "runs/fig4a"})
    if name == "fig4b":
        return from_dict(
            {
                "kind": "entropy-eval",
                "out": "runs/fig4b",
                "sampler": {"samplers": ["svgd"]},
                "sweep": [{"name": "kernel", "parameter": "bandwidth", "values": [0.1, 3.0, 5.0, 7.0, 100.0]}],
            }
        )
    if name == "fig4c":
        return from_dict(
            {
                "kind": "entropy-eval",
                "out": "runs/fig4c",
                "sampler": {"samplers": ["svgd"], "margin": False},
                "target": {"kind": "gmm", "modes": 1, "radius": 3.0, "variance": 0.1},
                "sweep": [
                    {"name": "modes", "parameter": "modes", "values": [1, 2, 3, 4], "target": "gmm",
                     "steps": 10, "particles": 10, "repeats": 20},
                    {"name": "scale", "parameter": "target_std", "values": [0.5, 1.0, 2.0, 4.0], "target": "isotropic"},
                ],
            }
        )
    if name in ("multigoal-alpha-sweep", "smoke"):
        desk = {
            "kind": "train-multigoal",
            "out": f"runs/{name}",
            "agent": {"hidden": [64, 64]},
            "train": {"update_every": 10, "alphas": [0.2, 1.0, 10.0, 20.0], "eval_every": 25_000},
        }
        if name == "smoke":
            desk["train"] = {"total_steps": 5000, "update_every": 10, "alphas": [1.0], "eval_every": 0}
        return from_dict(desk)
    raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")

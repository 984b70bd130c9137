"""Run configuration: a YAML tree with defaults, dotted overrides and line-precise errors."""
import copy
import os
from dataclasses import dataclass, fields

import yaml

from . import jetdyn
from .dynamics import RobotModel, load_model
from .envtask import EnvConfig, RewardWeights, WaypointTask
from .errors import ConfigError, InvalidSpec
from .ppo import AmpConfig, PpoConfig
from .terrain import TerrainSpec

OUTPUT_ROOT_ENV = "AMPLOCO_OUTPUT_ROOT"


def _dataclass_defaults(cls, skip=()):
    out = {}
    for f in fields(cls):
        if f.name in skip:
            continue
        v = getattr(cls(), f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def default_tree():
    """The full default configuration as a nested dict."""
    return {
        "seed": 0,
        "output_dir": "run",
        "iterations": 122,
        "checkpoint_every": 20,
        "workers": 1,
        "robot": None,
        "terrain": _dataclass_defaults(TerrainSpec),
        "scan": {"cells": 1, "cell": 0.3},
        "task": {**_dataclass_defaults(WaypointTask, skip=("target", "kind")),
                 "max_steps": 600, "min_clearance": 0.4, "p_rsi": 0.5},
        "reward": _dataclass_defaults(RewardWeights),
        "ppo": _dataclass_defaults(PpoConfig),
        "amp": {"priors": None, **_dataclass_defaults(AmpConfig)},
        "jet": {"mode": "ideal", "params": None, "rate_limit": 250.0},
    }


def _lines(node, prefix=""):
    """Map dotted keys to 1-based source lines of a composed YAML mapping."""
    out = {}
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            name = f"{prefix}{key.value}"
            out[name] = key.start_mark.line + 1
            out.update(_lines(value, name + "."))
    return out


def _merge(base, update, lines, prefix=""):
    for key, value in update.items():
        name = f"{prefix}{key}"
        if key not in base:
            raise ConfigError("unknown key", name, lines.get(name))
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge(base[key], value, lines, name + ".")
        elif isinstance(base[key], dict):
            raise ConfigError("expected a mapping", name, lines.get(name))
        else:
            base[key] = value


def set_dotted(tree, dotted, value):
    parts = dotted.split(".")
    node = tree
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node or not isinstance(node[p], dict):
            raise ConfigError("unknown key", dotted)
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError("unknown key", dotted)
    node[parts[-1]] = value


def get_dotted(tree, dotted):
    node = tree
    for p in dotted.split("."):
        node = node[p]
    return node


def parse_override(text):
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


class RunConfig:
    """A resolved configuration tree plus the source lines of user-given keys.

    Parameters
    ----------
    tree : dict
        Complete configuration (defaults already merged).
    lines : dict, optional
        Dotted key to source line, used in error messages.
    base_dir : str
        Directory against which relative file paths are resolved.
    """

    def __init__(self, tree, lines=None, base_dir="."):
        self.tree = tree
        self.lines = lines or {}
        self.base_dir = base_dir

    @classmethod
    def load(cls, path, overrides=()):
        with open(path) as fh:
            text = fh.read()
        try:
            node = yaml.compose(text)
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                              line=mark.line + 1 if mark else None) from exc
        if not isinstance(data, dict):
            raise ConfigError("top level must be a mapping", line=1)
        lines = _lines(node) if node is not None else {}
        cfg = cls.from_dict(data, lines, os.path.dirname(os.path.abspath(path)), overrides)
        return cfg

    @classmethod
    def from_dict(cls, data, lines=None, base_dir=".", overrides=()):
        tree = default_tree()
        _merge(tree, copy.deepcopy(data), lines or {})
        for ov in overrides:
            key, value = parse_override(ov) if isinstance(ov, str) else ov
            set_dotted(tree, key, value)
        cfg = cls(tree, lines, base_dir)
        cfg.validate()
        return cfg

    def error(self, message, key):
        return ConfigError(message, key, self.lines.get(key))

    def path(self, value):
        if value is None:
            return None
        value = os.path.expanduser(str(value))
        return value if os.path.isabs(value) else os.path.normpath(os.path.join(self.base_dir, value))

    def _require_file(self, key, value):
        p = self.path(value)
        if not os.path.isfile(p):
            raise self.error(f"file not found: {p}", key)
        return p

    def validate(self):
        t = self.tree
        if not isinstance(t["seed"], int) or isinstance(t["seed"], bool):
            raise self.error("seed must be an integer", "seed")
        for key in ("iterations", "checkpoint_every", "workers"):
            if not isinstance(t[key], int) or t[key] < 0:
                raise self.error("must be a non-negative integer", key)
        if t["robot"] is not None:
            self._require_file("robot", t["robot"])
        if t["jet"]["mode"] not in ("ideal", "lag"):
            raise self.error("must be 'ideal' or 'lag'", "jet.mode")
        if t["jet"]["params"] is not None:
            self._require_file("jet.params", t["jet"]["params"])
        priors = t["amp"]["priors"]
        w_style = t["reward"]["w_style"]
        if priors is None:
            if isinstance(w_style, (int, float)) and w_style > 0:
                raise self.error("required when reward.w_style > 0 (use [] to train without priors)",
                                 "amp.priors")
        elif not isinstance(priors, list):
            raise self.error("must be a list of dataset files", "amp.priors")
        else:
            for p in priors:
                self._require_file("amp.priors", p)
        # constructing the typed objects surfaces range errors per section
        self.env_config()
        self.ppo_config()
        self.amp_config()
        return self

    def _build(self, section, builder):
        try:
            return builder()
        except ConfigError:
            raise
        except (TypeError, ValueError, InvalidSpec) as exc:
            raise self.error(str(exc), section) from exc

    def model(self):
        robot = self.tree["robot"]
        return self._build("robot", lambda: load_model(self.path(robot)) if robot else RobotModel())

    def jet_params(self):
        p = self.tree["jet"]["params"]
        if p is None:
            return None
        with open(self.path(p)) as fh:
            return jetdyn.JetParams.from_dict(yaml.safe_load(fh))

    def env_config(self) -> EnvConfig:
        t = self.tree
        task = dict(t["task"])
        max_steps = task.pop("max_steps")
        min_clearance = task.pop("min_clearance")
        p_rsi = task.pop("p_rsi")
        terrain = self._build("terrain", lambda: TerrainSpec(**t["terrain"]))
        self._build("terrain", terrain.validate)
        task["air_altitude"] = tuple(task["air_altitude"])
        wt = self._build("task", lambda: WaypointTask(**task))
        weights = self._build("reward", lambda: RewardWeights(**t["reward"]))
        return self._build("task", lambda: EnvConfig(
            model=self.model(), terrain=terrain, scan_cells=int(t["scan"]["cells"]),
            scan_cell=float(t["scan"]["cell"]), task=wt, weights=weights,
            jet_mode=t["jet"]["mode"], jet_params=self.jet_params(),
            rate_limit=float(t["jet"]["rate_limit"]), max_steps=int(max_steps),
            min_clearance=float(min_clearance), p_rsi=float(p_rsi)))

    def ppo_config(self) -> PpoConfig:
        d = dict(self.tree["ppo"])
        d["hidden"] = tuple(d["hidden"])
        cfg = self._build("ppo", lambda: PpoConfig(**d))
        return self._build("ppo", cfg.validate)

    def amp_config(self) -> AmpConfig:
        d = {k: v for k, v in self.tree["amp"].items() if k != "priors"}
        d["hidden"] = tuple(d["hidden"])
        cfg = self._build("amp", lambda: AmpConfig(**d))
        if cfg.w_gp < 0:
            raise self.error("must be non-negative", "amp.w_gp")
        return cfg

    def prior_paths(self):
        return [self.path(p) for p in (self.tree["amp"]["priors"] or [])]

    def load_priors(self):
        from .priors import MotionDataset, load_dataset
        ds = MotionDataset([])
        for p in self.prior_paths():
            ds = ds + load_dataset(p)
        return ds

    def output_dir(self):
        out = str(self.tree["output_dir"])
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not os.path.isabs(out):
            return os.path.join(root, out)
        return out if os.path.isabs(out) else os.path.join(os.getcwd(), out)

    def resolved(self):
        """A self-contained tree: file paths absolute, everything explicit."""
        t = copy.deepcopy(self.tree)
        if t["robot"] is not None:
            t["robot"] = self.path(t["robot"])
        if t["jet"]["params"] is not None:
            t["jet"]["params"] = self.path(t["jet"]["params"])
        if t["amp"]["priors"] is not None:
            t["amp"]["priors"] = self.prior_paths()
        return t

    def dump(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.resolved(), fh, sort_keys=True)


VARIANTS = ("none", "walk_only", "fly_only", "both")


@dataclass
class AblationPlan:
    variants: tuple = VARIANTS
    seeds: tuple = (0,)
    episodes: int = 3

    def __post_init__(self):
        self.variants = tuple(self.variants)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.variants:
            raise ConfigError("at least one variant is required", "variants")
        unknown = set(self.variants) - set(VARIANTS)
        if unknown:
            raise ConfigError(f"unknown variants {sorted(unknown)}", "variants")
        if not self.seeds:
            raise ConfigError("at least one seed is required", "seeds")
        if self.episodes < 1:
            raise ConfigError("must be >= 1", "episodes")

    def priors_for(self, variant, walk, fly):
        return {"none": [], "walk_only": [walk], "fly_only": [fly], "both": [walk, fly]}[variant]

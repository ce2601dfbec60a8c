"""Run configuration: dataclass blocks loaded from YAML with field-path errors."""
from __future__ import annotations

import os
from dataclasses import MISSING, dataclass, field, fields, is_dataclass

import yaml

from .envs import Scene
from .errors import ConfigError
from .feature_learn import FeatureTrainConfig
from .kinematics import KinematicChain
from .reward_meirl import MeirlConfig
from .reward_offline import IrlConfig
from .reward_online import OnlineScenario
from .traj import TrajConfig

OUTPUT_DIR_ENV = "FERL_OUTPUT_DIR"


@dataclass
class TeacherConfig:
    noise_scale: float = 0.02
    steps: int = 60
    target_len: int = 30
    style: float = 1.5

    def __post_init__(self):
        if self.noise_scale < 0 or self.style < 0:
            raise ConfigError("teacher.noise_scale and teacher.style must be nonnegative")
        if self.steps < 1 or self.target_len < 1:
            raise ConfigError("teacher.steps and teacher.target_len must be >= 1")


@dataclass
class EvalConfig:
    test_states: int = 2000
    behavior_pairs: int = 20
    probability_pairs: int = 20
    probability_samples: int = 100
    beta_max: float = 100.0
    heatmap_bins: int = 24

    def __post_init__(self):
        for name in ("test_states", "behavior_pairs", "probability_pairs", "probability_samples", "heatmap_bins"):
            if getattr(self, name) < 1:
                raise ConfigError(f"eval.{name}: must be >= 1")
        if self.beta_max <= 0:
            raise ConfigError("eval.beta_max: must be positive")


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "ferl-out"
    scene: Scene = field(default_factory=Scene)
    chain: KinematicChain = field(default_factory=KinematicChain)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    feature: FeatureTrainConfig = field(default_factory=FeatureTrainConfig)
    traj: TrajConfig = field(default_factory=TrajConfig)
    irl: IrlConfig = field(default_factory=IrlConfig)
    meirl: MeirlConfig = field(default_factory=MeirlConfig)
    online: OnlineScenario = field(default_factory=OnlineScenario)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        # one planner configuration everywhere
        self.irl.traj = self.traj
        self.meirl.traj = self.traj
        self.scene.check_reach(self.chain)

    def resolved_output_dir(self):
        return os.environ.get(OUTPUT_DIR_ENV) or self.output_dir


_FROM_DICT = {"scene": Scene.from_dict, "chain": KinematicChain.from_dict}


def _check_scalar(value, default, path):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string, got {value!r}")
    return value


def _default(f):
    if f.default is not MISSING:
        return f.default
    if f.default_factory is not MISSING:
        return f.default_factory()
    return None


def build(cls, data, path):
    """Instantiate dataclass ``cls`` from a mapping; errors name the offending field path."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else str(key)
        if key not in known:
            raise ConfigError(f"{sub}: unknown field")
        default = _default(known[key])
        if key in _FROM_DICT and cls is RunConfig:
            try:
                kwargs[key] = _FROM_DICT[key](value or {})
            except ConfigError as e:
                raise ConfigError(f"{sub}: {e}") from None
            except (TypeError, ValueError, KeyError) as e:
                raise ConfigError(f"{sub}: {e}") from None
        elif is_dataclass(default):
            kwargs[key] = build(type(default), value, sub)
        else:
            kwargs[key] = _check_scalar(value, default, sub)
    try:
        return cls(**kwargs)
    except ConfigError as e:
        msg = str(e)
        raise ConfigError(msg if not path or msg.startswith(path) else f"{path}: {msg}") from None
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path or 'config'}: {e}") from None


def load_config(path=None, overrides=None) -> RunConfig:
    data = {}
    if path:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"config {path} is not valid YAML: {e}") from None
    if overrides:
        data = _merge(data, overrides)
    return build(RunConfig, data, "")


def _merge(base, extra):
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def to_dict(obj):
    """Plain-data view of a config (for logging next to outputs)."""
    import numpy as np

    if hasattr(obj, "to_dict") and not is_dataclass(obj) or isinstance(obj, (Scene, KinematicChain)):
        return obj.to_dict()
    if is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, tuple):
        return list(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj

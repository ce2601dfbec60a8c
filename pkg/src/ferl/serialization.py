"""JSON artifacts (traces, demos, checkpoints) and CSV reports."""
from __future__ import annotations

import csv
import json
import os

import numpy as np

from .envs import GroundTruthFeature
from .errors import ConfigError
from .feature_learn import FeatureFunction
from .reward_meirl import DeepReward, RandomFeature, ShallowRandomReward
from .reward_offline import DemoSet, LinearReward
from .traces import FeatureTrace

FORMAT = "ferl/1"


def _ensure_dir(path):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)


def save_json(path, obj):
    _ensure_dir(path)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from None


def save_traces(path, traces, feature=None):
    save_json(path, {"format": FORMAT, "feature": feature, "traces": [t.to_dict() for t in traces]})


def load_traces(path):
    d = load_json(path)
    items = d["traces"] if isinstance(d, dict) else d
    try:
        return [FeatureTrace.from_dict(t) for t in items]
    except (KeyError, TypeError) as e:
        raise ConfigError(f"{path}: malformed trace ({e})") from None


def save_demos(path, demos: DemoSet, task=None):
    save_json(path, {"format": FORMAT, "task": task, "demonstrations": demos.to_list()})


def load_demos(path) -> DemoSet:
    d = load_json(path)
    items = d["demonstrations"] if isinstance(d, dict) else d
    try:
        return DemoSet.from_list(items)
    except (KeyError, TypeError) as e:
        raise ConfigError(f"{path}: malformed demonstration ({e})") from None


def feature_from_dict(d, scene):
    kind = d.get("type")
    if kind == "learned":
        return FeatureFunction.from_dict(d)
    if kind == "ground_truth":
        return GroundTruthFeature(d["kind"], scene, d["scale"], d["radius"])
    if kind == "random":
        return RandomFeature.from_dict(d)
    raise ConfigError(f"unknown feature checkpoint type {kind!r}")


def reward_to_dict(model):
    if isinstance(model, LinearReward):
        return {"type": "linear", "theta": model.theta.tolist(), "features": [f.to_dict() for f in model.features]}
    if isinstance(model, ShallowRandomReward):
        return {"type": "shallow", "theta": np.asarray(model.theta).tolist(),
                "features": [f.to_dict() for f in model.features]}
    if isinstance(model, DeepReward):
        return model.to_dict()
    raise ConfigError(f"cannot serialise {type(model).__name__}")


def reward_from_dict(d, scene):
    kind = d.get("type")
    if kind == "linear":
        return LinearReward([feature_from_dict(f, scene) for f in d["features"]], d["theta"])
    if kind == "shallow":
        return ShallowRandomReward([RandomFeature.from_dict(f) for f in d["features"]], np.array(d["theta"]))
    if kind == "deep_meirl":
        return DeepReward.from_dict(d, [feature_from_dict(f, scene) for f in d.get("known", [])])
    raise ConfigError(f"unknown reward checkpoint type {kind!r}")


def save_checkpoint(path, model):
    payload = reward_to_dict(model) if not isinstance(model, FeatureFunction) else model.to_dict()
    payload["format"] = FORMAT
    save_json(path, payload)


def load_checkpoint(path, scene):
    d = load_json(path)
    if d.get("type") in ("learned", "ground_truth", "random"):
        return feature_from_dict(d, scene)
    return reward_from_dict(d, scene)


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return v


def write_csv(path, header, rows):
    _ensure_dir(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))

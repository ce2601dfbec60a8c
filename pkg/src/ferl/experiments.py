"""Declarative experiment sweeps: tasks x methods x data sizes x seeds -> CSV and SVG.

A spec file is YAML::

    name: feature-sweep
    experiment: features        # features | offline | online
    tasks: [table, laptop]
    methods: [ferl]
    n_data: [2, 10]
    seeds: 5
    metrics: [mse_norm]
    master_seed: 0
    config: {}                  # RunConfig overrides
    heatmaps: true

``n_data`` is the number of traces per feature for FERL; offline ME-IRL gets
``n_data`` demonstrations per GT feature and online ME-IRL gets ``n_data``
demonstrations.
"""
from __future__ import annotations

import logging
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml

from .config import RunConfig, load_config
from .demos import generate_demos, informative_pairs
from .envs import FEATURE_KINDS, GroundTruthFeature, task_reward
from .errors import ConfigError, FerlError
from .feature_learn import fit_dataset, mse_norm, pair_accuracy, select_subspace, split_ordered, train_feature
from .kinematics import EE_POS, sample_reachable_states
from .reward_meirl import train_meirl, train_shallow
from .reward_offline import offline_ferl
from .reward_online import MISSING_FEATURE, run_scenario
from .serialization import write_csv
from .traces import augment_equiv, build_datasets, generate_traces
from . import evaluation as ev

log = logging.getLogger(__name__)

EXPERIMENTS = ("features", "offline", "online")
OFFLINE_TASKS = ("one_feature", "two_features", "three_features")
METRICS = {
    "features": ("mse_norm", "order_accuracy"),
    "offline": ("reward_accuracy", "behavior_accuracy", "test_probability"),
    "online": ("reward_accuracy", "behavior_accuracy", "test_probability"),
}
CSV_HEADER = ("task", "method", "n_data", "seed", "value")


@dataclass
class ExperimentSpec:
    name: str
    experiment: str
    tasks: list
    methods: list
    n_data: list
    seeds: int = 5
    metrics: list = field(default_factory=list)
    master_seed: int = 0
    config: dict = field(default_factory=dict)
    subspace: object = "auto"
    heatmaps: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"spec.experiment: unknown {self.experiment!r}")
        if not self.tasks or not self.methods or not self.n_data:
            raise ConfigError("spec: tasks, methods and n_data must be nonempty")
        valid = {"features": FEATURE_KINDS, "offline": OFFLINE_TASKS, "online": tuple(MISSING_FEATURE)}
        for t in self.tasks:
            if t not in valid[self.experiment]:
                raise ConfigError(f"spec.tasks: {t!r} is not a {self.experiment} task")
        for m in self.methods:
            _method_kind(m, self.experiment)
        if any(int(n) < 1 for n in self.n_data):
            raise ConfigError("spec.n_data: sizes must be >= 1")
        if self.seeds < 1 or self.workers < 1:
            raise ConfigError("spec.seeds and spec.workers must be >= 1")
        self.metrics = list(self.metrics or METRICS[self.experiment][:1])
        for m in self.metrics:
            if m not in METRICS[self.experiment]:
                raise ConfigError(f"spec.metrics: {m!r} is not available for {self.experiment} experiments")


def _method_kind(method, experiment):
    if method == "ferl":
        return "ferl", None
    if method == "meirl-deep" and experiment in ("offline", "online"):
        return "deep", None
    if method.startswith("meirl-shallow-") and experiment == "offline":
        try:
            k = int(method.rsplit("-", 1)[1])
        except ValueError:
            k = 0
        if k >= 1:
            return "shallow", k
    raise ConfigError(f"spec.methods: {method!r} is not available for {experiment} experiments")


def load_spec(path_or_dict) -> ExperimentSpec:
    if isinstance(path_or_dict, ExperimentSpec):
        return path_or_dict
    if isinstance(path_or_dict, dict):
        data = path_or_dict
    else:
        try:
            with open(path_or_dict) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as e:
            raise ConfigError(f"cannot read spec {path_or_dict}: {e}") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"spec {path_or_dict} is not valid YAML: {e}") from None
    try:
        return ExperimentSpec(**data)
    except TypeError as e:
        raise ConfigError(f"spec: {e}") from None


def derive_seed(master, *parts) -> int:
    """Stable 32-bit seed from the master seed and a cell description."""
    words = [int(master) & 0xFFFFFFFF] + [zlib.crc32(str(p).encode()) for p in parts]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


def _subspace_for(spec_subspace, kind, traces, seed, cfg):
    if isinstance(spec_subspace, dict):
        return spec_subspace.get(kind, "positions")
    if spec_subspace == "auto":
        return select_subspace(traces, seed, cfg.feature) if len(traces) >= 2 else "positions"
    return spec_subspace


def _gen_traces(kind, n, seed, cfg: RunConfig):
    t = cfg.teacher
    return generate_traces(kind, cfg.chain, cfg.scene, n, seed, t.noise_scale, t.steps, t.target_len, t.style)


def _feature_cell(spec, cfg, task, n, seed):
    data_seed = derive_seed(spec.master_seed, "traces", task, n, seed)
    traces = _gen_traces(task, n, data_seed, cfg)
    sub = _subspace_for(spec.subspace, task, traces, data_seed, cfg)
    out = {}
    model_seed = derive_seed(spec.master_seed, "model", task, n, seed)
    phi = train_feature(traces, cfg.feature, model_seed, sub, task)
    scene = cfg.scene.with_laptop(cfg.scene.test_laptop_xyz) if task == "test_laptop" else cfg.scene
    X = sample_reachable_states(cfg.chain, scene, cfg.eval.test_states, derive_seed(spec.master_seed, "test", task))
    gt = GroundTruthFeature(task, cfg.scene)
    if "mse_norm" in spec.metrics:
        out["mse_norm"] = mse_norm(phi, gt, X, seed=model_seed)
    if "order_accuracy" in spec.metrics:
        out["order_accuracy"] = heldout_order_accuracy(task, n, cfg, seed=data_seed, subspace=sub)
    return out, (X, phi(X), gt(X))


def heldout_order_accuracy(kind, n, cfg: RunConfig, seed=0, subspace="positions", frac=0.2):
    """Train on noiseless traces with a fraction of the ordered tuples withheld; accuracy on those."""
    t = cfg.teacher
    traces = generate_traces(kind, cfg.chain, cfg.scene, n, seed, 0.0, t.steps, t.target_len, t.style)
    ds = augment_equiv(build_datasets(traces), cfg.feature.equiv_augment)
    train, held = split_ordered(ds, frac, seed)
    phi = fit_dataset(train, cfg.feature, seed, subspace, kind)
    return pair_accuracy(phi, ds.states, held)


def _offline_model(spec, cfg, task, kind, k_shallow, n, seed):
    gt, _ = task_reward(task, cfg.chain, cfg.scene)
    kinds = [f.kind for f in gt.features]
    k = len(kinds)
    model_seed = derive_seed(spec.master_seed, "model", task, kind, k_shallow, n, seed)
    demo_seed = derive_seed(spec.master_seed, "demos", task, n, seed)
    if kind == "ferl":
        trace_sets, subs = [], []
        for i, fk in enumerate(kinds):
            ts = _gen_traces(fk, n, derive_seed(spec.master_seed, "traces", fk, n, seed), cfg)
            trace_sets.append(ts)
            subs.append(_subspace_for(spec.subspace, fk, ts, model_seed + i, cfg))
        demos = generate_demos(gt, cfg.chain, cfg.scene, k, demo_seed, cfg.traj)
        reward, _ = offline_ferl(trace_sets, demos, cfg.chain, cfg.scene, cfg.feature, cfg.irl, model_seed, subs,
                                 kinds)
        return reward, gt
    demos = generate_demos(gt, cfg.chain, cfg.scene, n * k, demo_seed, cfg.traj)
    if kind == "deep":
        return train_meirl(demos, cfg.chain, cfg.scene, cfg.meirl, model_seed)[0], gt
    X_ref = sample_reachable_states(cfg.chain, cfg.scene, cfg.eval.test_states,
                                    derive_seed(spec.master_seed, "reference", seed))
    return train_shallow(demos, k_shallow, cfg.chain, cfg.scene, X_ref, cfg.irl, model_seed)[0], gt


def _online_model(spec, cfg, task, kind, n, seed):
    gt, known = task_reward(task, cfg.chain, cfg.scene)
    model_seed = derive_seed(spec.master_seed, "model", task, kind, n, seed)
    if kind == "ferl":
        from dataclasses import replace

        sc = replace(cfg.online, task=task, n_traces=n)
        return run_scenario(sc, cfg.chain, cfg.scene, model_seed, cfg.traj, cfg.feature).reward, gt
    demos = generate_demos(gt, cfg.chain, cfg.scene, n, derive_seed(spec.master_seed, "demos", task, n, seed),
                           cfg.traj)
    return train_meirl(demos, cfg.chain, cfg.scene, cfg.meirl, model_seed, known_features=known)[0], gt


def _reward_cell(spec, cfg, task, method, n, seed):
    kind, k_shallow = _method_kind(method, spec.experiment)
    if spec.experiment == "offline":
        model, gt = _offline_model(spec, cfg, task, kind, k_shallow, n, seed)
    else:
        model, gt = _online_model(spec, cfg, task, kind, n, seed)
    return evaluate_reward(model, gt, spec.metrics, cfg, derive_seed(spec.master_seed, "eval", task))


def evaluate_reward(model, gt, metrics, cfg: RunConfig, eval_seed):
    X = sample_reachable_states(cfg.chain, cfg.scene, cfg.eval.test_states, eval_seed)
    out = {}
    if "reward_accuracy" in metrics:
        out["reward_accuracy"] = ev.reward_accuracy(model, gt, X)
    if "behavior_accuracy" in metrics or "test_probability" in metrics:
        rng = np.random.default_rng(eval_seed)
        S, G = informative_pairs(gt, cfg.chain, cfg.scene, max(cfg.eval.behavior_pairs, cfg.eval.probability_pairs),
                                 rng, cfg.traj.T)
        if "behavior_accuracy" in metrics:
            ratios = ev.behavior_accuracy(model, gt, S[:cfg.eval.behavior_pairs], G[:cfg.eval.behavior_pairs],
                                          cfg.chain, cfg.scene, cfg.traj)
            out["behavior_accuracy"] = float(np.median(ratios))
        if "test_probability" in metrics:
            m = cfg.eval.probability_pairs
            out["test_probability"] = ev.test_probability(model, gt, S[:m], G[:m], cfg.chain, cfg.scene,
                                                          cfg.eval.probability_samples, eval_seed, cfg.traj,
                                                          cfg.eval.beta_max)[0]
    state_cost = ev.state_cost_fn(model)
    return out, (X, state_cost(X), gt.state_cost(X))


def run_cell(spec: ExperimentSpec, cfg: RunConfig, task, method, n, seed):
    """Train and evaluate one (task, method, n_data, seed) cell. Returns (metrics, field)."""
    if spec.experiment == "features":
        return _feature_cell(spec, cfg, task, n, seed)
    return _reward_cell(spec, cfg, task, method, n, seed)


def _safe_cell(args):
    spec, cfg, cell = args
    try:
        return cell, run_cell(spec, cfg, *cell), None
    except FerlError as e:
        log.error("cell %s failed: %s", cell, e)
        return cell, ({}, None), f"{type(e).__name__}: {e}"


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: dict  # metric -> list of (task, method, n_data, seed, value)
    failures: list
    files: list

    def values(self, metric, task=None, method=None, n_data=None):
        return np.array([r[4] for r in self.rows[metric]
                         if (task is None or r[0] == task) and (method is None or r[1] == method)
                         and (n_data is None or r[2] == n_data)])


def run_experiment(spec, cfg: RunConfig | None = None, out_dir=None) -> ExperimentResult:
    """Run every cell of a spec and write ``<out_dir>/<name>/<metric>.csv`` (+ heatmaps)."""
    spec = load_spec(spec)
    cfg = cfg or load_config(overrides=spec.config)
    out_dir = out_dir or cfg.resolved_output_dir()
    cells = [(t, m, int(n), s) for t in spec.tasks for m in spec.methods for n in spec.n_data
             for s in range(spec.seeds)]
    args = [(spec, cfg, c) for c in cells]
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            results = list(pool.map(_safe_cell, args))
    else:
        results = [_safe_cell(a) for a in args]
    order = {c: i for i, c in enumerate(cells)}
    results.sort(key=lambda r: order[r[0]])
    rows = {m: [] for m in spec.metrics}
    failures = []
    for cell, (metrics, _), err in results:
        if err:
            failures.append((cell, err))
        for m in spec.metrics:
            rows[m].append((*cell, float(metrics.get(m, np.nan))))
    base = os.path.join(out_dir, spec.name)
    files = []
    for m in spec.metrics:
        path = os.path.join(base, f"{m}.csv")
        write_csv(path, CSV_HEADER, rows[m])
        files.append(path)
    summary = []
    for m in spec.metrics:
        for t in spec.tasks:
            for meth in spec.methods:
                for n in spec.n_data:
                    v = [r[4] for r in rows[m] if r[0] == t and r[1] == meth and r[2] == int(n)]
                    v = np.array([x for x in v if np.isfinite(x)])
                    if v.size:
                        rep = ev.MetricReport(v)
                        summary.append((m, t, meth, int(n), rep.values.size, rep.median, rep.mean, rep.stderr))
    path = os.path.join(base, "summary.csv")
    write_csv(path, ("metric", "task", "method", "n_data", "count", "median", "mean", "stderr"), summary)
    files.append(path)
    if spec.heatmaps:
        files += _write_heatmaps(base, spec, cfg, results)
    if failures:
        write_csv(os.path.join(base, "failures.csv"), ("task", "method", "n_data", "seed", "error"),
                  [(*c, e) for c, e in failures])
    return ExperimentResult(spec, rows, failures, files)


def _write_heatmaps(base, spec, cfg, results):
    from .figures import field_heatmaps

    files = []
    n_max = max(int(n) for n in spec.n_data)
    for t in spec.tasks:
        gt_done = False
        for meth in spec.methods:
            hit = [r for r in results if r[0] == (t, meth, n_max, 0) and r[1][1] is not None]
            if not hit:
                continue
            X, values, gt_values = hit[0][1][1]
            ee = X[:, EE_POS]
            if not gt_done:
                files += field_heatmaps(os.path.join(base, f"field_{t}_gt"), ee, gt_values, cfg.eval.heatmap_bins,
                                        f"{t} ground truth")
                gt_done = True
            files += field_heatmaps(os.path.join(base, f"field_{t}_{meth}"), ee, values, cfg.eval.heatmap_bins,
                                    f"{t} {meth} (n={n_max})")
    return files

"""``ferl`` command-line entry point.

Exit codes: 0 ok, 1 configuration error, 2 invariant violation, 3 numerical
failure. ``FERL_OUTPUT_DIR`` overrides the output directory of every command.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np
import yaml

from .config import OUTPUT_DIR_ENV, build, load_config, to_dict
from .errors import ConfigError, FerlError, InvariantViolation, NumericalError

log = logging.getLogger("ferl")


def _out(cfg, path):
    """Output paths are relative to the (possibly overridden) output directory."""
    if os.path.isabs(path):
        return path
    return os.path.join(cfg.resolved_output_dir(), path)


def _cfg(args):
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out_dir", None):
        overrides["output_dir"] = args.out_dir
    return load_config(args.config, overrides)


def cmd_gen_traces(args):
    from .serialization import save_traces
    from .traces import generate_traces

    cfg = _cfg(args)
    t = cfg.teacher
    traces = generate_traces(args.feature, cfg.chain, cfg.scene, args.n, cfg.seed, t.noise_scale, t.steps,
                             t.target_len, t.style)
    path = _out(cfg, args.out)
    save_traces(path, traces, args.feature)
    print(f"wrote {len(traces)} traces to {path}")


def cmd_train_feature(args):
    from .feature_learn import select_subspace, train_feature
    from .serialization import load_traces, save_checkpoint, write_csv

    cfg = _cfg(args)
    traces = load_traces(args.traces)
    sub = args.subspace
    if sub == "auto":
        sub = select_subspace(traces, cfg.seed, cfg.feature) if len(traces) >= 2 else "positions"
    phi = train_feature(traces, cfg.feature, cfg.seed, sub, args.name or "learned")
    path = _out(cfg, args.out)
    save_checkpoint(path, phi)
    write_csv(_out(cfg, args.log or os.path.splitext(args.out)[0] + "_log.csv"), ("epoch", "L_ord", "L_equiv", "L"),
              phi.history)
    print(f"wrote feature ({sub}) to {path}")


def cmd_gen_demos(args):
    from .demos import generate_demos
    from .envs import task_reward
    from .serialization import save_demos

    cfg = _cfg(args)
    gt, _ = task_reward(args.task, cfg.chain, cfg.scene)
    demos = generate_demos(gt, cfg.chain, cfg.scene, args.n, cfg.seed, cfg.traj)
    path = _out(cfg, args.out)
    save_demos(path, demos, args.task)
    print(f"wrote {len(demos)} demonstrations to {path}")


def _known_features(task, cfg):
    from .envs import task_reward

    if not task:
        return []
    return task_reward(task, cfg.chain, cfg.scene)[1]


def cmd_train_reward_offline(args):
    from .feature_learn import select_subspace
    from .reward_offline import offline_ferl
    from .serialization import load_demos, load_json, load_traces, save_checkpoint, write_csv

    cfg = _cfg(args)
    trace_sets = [load_traces(p) for p in args.traces]
    names = [load_json(p).get("feature") or f"learned_{i}" for i, p in enumerate(args.traces)]
    subs = [select_subspace(ts, cfg.seed + i, cfg.feature) if args.subspace == "auto" and len(ts) >= 2
            else ("positions" if args.subspace == "auto" else args.subspace) for i, ts in enumerate(trace_sets)]
    demos = load_demos(args.demos)
    reward, history = offline_ferl(trace_sets, demos, cfg.chain, cfg.scene, cfg.feature, cfg.irl, cfg.seed, subs,
                                   names, _known_features(args.known_task, cfg))
    path = _out(cfg, args.out)
    save_checkpoint(path, reward)
    k = len(reward.theta)
    write_csv(_out(cfg, args.log or os.path.splitext(args.out)[0] + "_log.csv"),
              ("iter", "grad_norm", *[f"theta_{i}" for i in range(k)]), history)
    print(f"theta = {np.array2string(reward.theta, precision=4)}; wrote {path}")


def cmd_train_meirl(args):
    from .kinematics import sample_reachable_states
    from .reward_meirl import train_meirl, train_shallow
    from .serialization import load_demos, save_checkpoint, write_csv

    cfg = _cfg(args)
    demos = load_demos(args.demos)
    if args.variant == "deep":
        model, history = train_meirl(demos, cfg.chain, cfg.scene, cfg.meirl, cfg.seed,
                                     _known_features(args.known_task, cfg))
        header = ("iter", "cost_gap")
    else:
        if args.k is None or args.k < 1:
            raise ConfigError("--k: the shallow variant needs k >= 1")
        X = sample_reachable_states(cfg.chain, cfg.scene, cfg.eval.test_states, cfg.seed + 1)
        model, history = train_shallow(demos, args.k, cfg.chain, cfg.scene, X, cfg.irl, cfg.seed)
        header = ("iter", "grad_norm", *[f"theta_{i}" for i in range(args.k)])
    path = _out(cfg, args.out)
    save_checkpoint(path, model)
    write_csv(_out(cfg, args.log or os.path.splitext(args.out)[0] + "_log.csv"), header, history)
    print(f"wrote {args.variant} ME-IRL reward to {path}")


def cmd_run_online(args):
    from .reward_online import OnlineScenario, run_scenario
    from .serialization import save_checkpoint, save_json

    cfg = _cfg(args)
    sc = cfg.online
    if args.scenario:
        with open(args.scenario) as fh:
            data = yaml.safe_load(fh) or {}
        sc = build(OnlineScenario, {**to_dict(cfg.online), **data}, "scenario")
    if args.epsilon is not None:
        sc.epsilon = args.epsilon
    session = run_scenario(sc, cfg.chain, cfg.scene, cfg.seed, cfg.traj, cfg.feature)
    out = {
        "task": sc.task,
        "status": session.status,
        "epsilon": sc.epsilon,
        "features": [getattr(f, "name", "feature") for f in session.reward.features],
        "theta": session.reward.theta.tolist(),
        "events": session.log,
    }
    path = _out(cfg, args.out)
    save_json(path, out)
    if args.checkpoint:
        save_checkpoint(_out(cfg, args.checkpoint), session.reward)
    for e in session.log:
        print(f"correction {e['step']}: beta={e.get('beta', float('nan')):.4g} -> {e['decision']}")
    print(f"theta = {np.array2string(session.reward.theta, precision=4)}; wrote {path}")


def cmd_eval(args):
    from .envs import task_reward
    from .experiments import derive_seed, evaluate_reward
    from .serialization import load_checkpoint, write_csv

    cfg = _cfg(args)
    model = load_checkpoint(args.model, cfg.scene)
    gt, _ = task_reward(args.task, cfg.chain, cfg.scene)
    metrics, _ = evaluate_reward(model, gt, args.metrics, cfg, derive_seed(cfg.seed, "eval", args.task))
    rows = [(args.task, args.method, args.n_data, cfg.seed, metrics[m]) for m in args.metrics]
    for m, r in zip(args.metrics, rows):
        print(f"{m}: {r[-1]:.6g}")
    if args.out:
        # one task,method,n_data,seed,value file per metric
        stem, ext = os.path.splitext(_out(cfg, args.out))
        for m, r in zip(args.metrics, rows):
            path = f"{stem}{ext}" if len(args.metrics) == 1 else f"{stem}_{m}{ext or '.csv'}"
            write_csv(path, ("task", "method", "n_data", "seed", "value"), [r])
            print(f"wrote {path}")


def cmd_experiment(args):
    from .experiments import load_spec, run_experiment

    spec = load_spec(args.spec)
    if args.seeds is not None:
        spec.seeds = args.seeds
    if args.master_seed is not None:
        spec.master_seed = args.master_seed
    if args.workers is not None:
        spec.workers = args.workers
    overrides = dict(spec.config)
    if args.out_dir:
        overrides["output_dir"] = args.out_dir
    cfg = load_config(args.config, overrides)
    res = run_experiment(spec, cfg)
    for f in res.files:
        print(f"wrote {f}")
    if res.failures:
        print(f"{len(res.failures)} cells failed (see failures.csv)", file=sys.stderr)


def cmd_calibrate_epsilon(args):
    from .reward_online import calibrate_epsilon, correction_corpus, corpus_betas
    from .serialization import write_csv

    cfg = _cfg(args)
    sc = cfg.online
    task = args.task or sc.task
    kn = correction_corpus(task, "known", args.n, cfg.chain, cfg.scene, cfg.seed, sc.magnitude, sc.noise, cfg.traj)
    un = correction_corpus(task, "unknown", args.n, cfg.chain, cfg.scene, cfg.seed + 1, sc.magnitude, sc.noise,
                           cfg.traj)
    kb, ub = corpus_betas(task, kn, cfg.chain, cfg.scene), corpus_betas(task, un, cfg.chain, cfg.scene)
    eps, auc, (thr, tpr, fpr) = calibrate_epsilon(kb, ub)
    path = _out(cfg, args.out)
    write_csv(path, ("threshold", "tpr_unknown_to_learning", "fpr_known_to_learning"), zip(thr, tpr, fpr))
    print(f"epsilon = {eps:.6g}  AUC = {auc:.4f}  unknown routed = {(ub < eps).mean():.2f}  "
          f"known routed = {(kb < eps).mean():.2f}")
    print(f"wrote {path}")


def build_parser():
    p = argparse.ArgumentParser(prog="ferl", description="Feature learning from traces and reward learning on top.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--out-dir", help=f"output directory (env {OUTPUT_DIR_ENV} takes precedence)")
        if seed:
            sp.add_argument("--seed", type=int, help="master seed (overrides the config)")

    sp = sub.add_parser("gen-traces", help="simulate feature traces for one feature")
    sp.add_argument("--feature", required=True)
    sp.add_argument("--n", type=int, default=10)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(fn=cmd_gen_traces)

    sp = sub.add_parser("train-feature", help="train a feature network from a trace file")
    sp.add_argument("--traces", required=True)
    sp.add_argument("--subspace", default="auto", choices=("auto", "positions", "orientation", "full"))
    sp.add_argument("--name")
    sp.add_argument("--out", required=True)
    sp.add_argument("--log")
    common(sp)
    sp.set_defaults(fn=cmd_train_feature)

    sp = sub.add_parser("gen-demos", help="GT-optimal demonstrations for a task")
    sp.add_argument("--task", required=True)
    sp.add_argument("--n", type=int, default=10)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(fn=cmd_gen_demos)

    sp = sub.add_parser("train-reward-offline", help="offline FERL: features from traces, weights from demos")
    sp.add_argument("--traces", nargs="+", required=True, help="one trace file per feature")
    sp.add_argument("--demos", required=True)
    sp.add_argument("--subspace", default="auto", choices=("auto", "positions", "orientation", "full"))
    sp.add_argument("--known-task", help="prepend the known features of this online task")
    sp.add_argument("--out", required=True)
    sp.add_argument("--log")
    common(sp)
    sp.set_defaults(fn=cmd_train_reward_offline)

    sp = sub.add_parser("train-meirl", help="deep or shallow ME-IRL baseline")
    sp.add_argument("--demos", required=True)
    sp.add_argument("--variant", choices=("deep", "shallow"), default="deep")
    sp.add_argument("--k", type=int, help="number of random features (shallow)")
    sp.add_argument("--known-task", help="give the deep net the known features of this online task")
    sp.add_argument("--out", required=True)
    sp.add_argument("--log")
    common(sp)
    sp.set_defaults(fn=cmd_train_meirl)

    sp = sub.add_parser("run-online", help="simulate online FERL from corrections")
    sp.add_argument("--scenario", help="YAML with online scenario fields")
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--out", required=True, help="event log JSON")
    sp.add_argument("--checkpoint", help="also save the final reward")
    common(sp)
    sp.set_defaults(fn=cmd_run_online)

    sp = sub.add_parser("eval", help="reward metrics of a checkpoint against a task's GT reward")
    sp.add_argument("--model", required=True)
    sp.add_argument("--task", required=True)
    sp.add_argument("--metrics", nargs="+", default=["reward_accuracy"],
                    choices=("reward_accuracy", "behavior_accuracy", "test_probability"))
    sp.add_argument("--method", default="model")
    sp.add_argument("--n-data", type=int, default=0)
    sp.add_argument("--out")
    common(sp)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("experiment", help="run an experiment spec")
    sp.add_argument("spec")
    sp.add_argument("--seeds", type=int)
    sp.add_argument("--master-seed", type=int)
    sp.add_argument("--workers", type=int)
    common(sp, seed=False)
    sp.set_defaults(fn=cmd_experiment)

    sp = sub.add_parser("calibrate-epsilon", help="ROC of beta over known/unknown correction corpora")
    sp.add_argument("--task")
    sp.add_argument("--n", type=int, default=50)
    sp.add_argument("--out", default="epsilon_roc.csv")
    common(sp)
    sp.set_defaults(fn=cmd_calibrate_epsilon)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.fn(args)
    except FerlError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except FloatingPointError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return NumericalError.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

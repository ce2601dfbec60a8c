"""Online FERL from physical corrections.

A correction a_H at waypoint t is first checked against the current feature
set: its part explainable by the features is the projection a_H* onto the span
of the features' joint-space gradients at q_t, and the confidence is
beta = 1 / (|a_H|^2 - |a_H*|^2 + c). Below the threshold the robot asks for
feature traces and appends the new feature with weight 0. In either case the
correction is propagated along the trajectory, the weight of the feature that
changed most is updated, and the robot replans.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .feature_learn import FeatureTrainConfig, train_feature
from .kinematics import _frames_to_raw, forward_kinematics, raw_state_vjp
from .reward_offline import LinearReward
from .traj import Correction, DeformOperator, TrajConfig, Trajectory, deform, optimize_traj, traj_features

log = logging.getLogger(__name__)

UPDATE_REWARD = "update_reward"
LEARN_FEATURE = "learn_feature"
# Youden threshold of `ferl calibrate-epsilon --task laptop_missing --n 50` (seed 0), rounded
DEFAULT_EPSILON = 9.0e4


@dataclass
class ConfidenceEstimate:
    beta: float
    residual_norm_sq: float
    decision: str


def feature_joint_grads(features, q, chain, scene) -> np.ndarray:
    """(k, dof) gradients of each feature w.r.t. the configuration q."""
    q = np.asarray(q, dtype=float)
    frames = forward_kinematics(chain, q)
    raw = _frames_to_raw(frames, scene)
    return np.stack([raw_state_vjp(frames, f.value_and_grad(raw)[1]) for f in features])


def project_onto_span(a, G) -> np.ndarray:
    """Orthogonal projection of ``a`` onto the row space of ``G``."""
    a = np.asarray(a, dtype=float)
    if not np.any(a) or not np.any(G):
        return np.zeros_like(a)
    coef = np.linalg.lstsq(G.T, a, rcond=None)[0]
    return G.T @ coef


def optimal_correction(correction: Correction, traj: Trajectory, features, chain, scene) -> np.ndarray:
    if not features:
        raise ConfigError("feature set is empty")
    q_t = traj.waypoints[correction.t]
    return project_onto_span(correction.a_H, feature_joint_grads(features, q_t, chain, scene))


def confidence_from(a_H, a_star, epsilon=DEFAULT_EPSILON, c=1e-6) -> ConfidenceEstimate:
    a_H = np.asarray(a_H, dtype=float)
    residual = max(float(a_H @ a_H - a_star @ a_star), 0.0)
    beta = 1.0 / (residual + c)
    return ConfidenceEstimate(beta, residual, LEARN_FEATURE if beta < epsilon else UPDATE_REWARD)


def estimate_confidence(correction: Correction, traj: Trajectory, features, chain, scene,
                        epsilon=DEFAULT_EPSILON, c=1e-6) -> ConfidenceEstimate:
    a_star = optimal_correction(correction, traj, features, chain, scene)
    return confidence_from(correction.a_H, a_star, epsilon, c)


def online_update(reward: LinearReward, traj: Trajectory, traj_H: Trajectory, chain, scene, alpha=0.1):
    """One-index update: only the feature whose trajectory sum changed most moves.

    Returns (theta', index, delta).
    """
    delta = (traj_features(traj_H, reward.features, chain, scene)
             - traj_features(traj, reward.features, chain, scene))
    theta = reward.theta.copy()
    j = int(np.argmax(np.abs(delta)))
    theta[j] -= alpha * delta[j]
    return theta, j, delta


@dataclass
class OnlineSession:
    reward: LinearReward
    traj: Trajectory
    chain: object
    scene: object
    epsilon: float = DEFAULT_EPSILON
    alpha: float = 0.1
    deform_op: DeformOperator = None
    traj_cfg: TrajConfig = field(default_factory=TrajConfig)
    feature_cfg: FeatureTrainConfig = field(default_factory=FeatureTrainConfig)
    subspace: str = "positions"
    seed: int = 0
    status: str = "active"
    log: list = field(default_factory=list)

    def __post_init__(self):
        if self.deform_op is None:
            self.deform_op = DeformOperator(T=self.traj.T)
        if self.epsilon < 0 or self.alpha <= 0:
            raise ConfigError("online: epsilon must be >= 0 and alpha positive")

    @property
    def theta(self):
        return self.reward.theta


def start_session(reward: LinearReward, start, goal, chain, scene, **kw) -> OnlineSession:
    """Plan the initial trajectory under the starting reward and open a session."""
    traj_cfg = kw.get("traj_cfg") or TrajConfig()
    kw["traj_cfg"] = traj_cfg
    traj = optimize_traj(reward.cost(), start, goal, chain, scene, traj_cfg)
    return OnlineSession(reward, traj, chain, scene, **kw)


def online_ferl_step(session: OnlineSession, correction: Correction, teacher=None) -> OnlineSession:
    """One pass of the online loop for a single correction.

    ``teacher(session, correction)`` must return feature traces for whatever
    the correction was about; it is only called when confidence is low.
    """
    if session.status != "active":
        raise ConfigError(f"session is {session.status}")
    entry = {"step": len(session.log), "t": int(correction.t)}
    if not np.any(correction.a_H):
        entry["decision"] = "ignored_zero_correction"
        session.log.append(entry)
        return session
    est = estimate_confidence(correction, session.traj, session.reward.features, session.chain, session.scene,
                              session.epsilon)
    entry.update(beta=est.beta, residual_norm_sq=est.residual_norm_sq, decision=est.decision)
    if est.decision == LEARN_FEATURE:
        if teacher is None:
            session.status = "paused_needs_feature_traces"
            entry["paused"] = True
            session.log.append(entry)
            return session
        traces = teacher(session, correction)
        feat = train_feature(traces, session.feature_cfg, seed=session.seed * 1000 + len(session.log),
                             subspace=session.subspace, name=f"learned_{len(session.reward.features)}")
        session.reward = session.reward.append(feat, 0.0)
        entry["learned_feature"] = feat.name
    traj_H = deform(session.traj, correction, session.deform_op)
    theta, j, delta = online_update(session.reward, session.traj, traj_H, session.chain, session.scene,
                                    session.alpha)
    session.reward = LinearReward(session.reward.features, theta)
    session.traj = optimize_traj(session.reward.cost(), traj_H.start, traj_H.goal, session.chain, session.scene,
                                 session.traj_cfg, init=traj_H)
    entry.update(index=j, delta=delta.tolist(), theta=theta.tolist())
    session.log.append(entry)
    log.debug("online step %d: beta %.3g -> %s, theta %s", entry["step"], est.beta, est.decision, theta)
    return session


class CorrectionTeacher:
    """Simulated person pushing the arm to lower a (GT) cost.

    A push at waypoint t follows the negative joint-space gradient of
    ``features`` weighted by ``weights`` at q_t, plus isotropic noise, and has
    norm ``magnitude`` rad. Pushes happen mid-execution (t within the
    ``window`` fraction of the trajectory); the teacher picks the t whose
    deformed trajectory has the lowest cost and returns None when no push
    would help.
    """

    def __init__(self, features, weights, magnitude=0.02, noise=0.1, window=(0.25, 0.75), seed=0):
        self.features = list(features)
        self.weights = np.asarray(weights, dtype=float)
        if magnitude <= 0 or noise < 0:
            raise ConfigError("teacher magnitude must be positive and noise nonnegative")
        self.magnitude = magnitude
        self.noise = noise
        self.window = window
        self.rng = np.random.default_rng(seed)

    def _cost(self, traj, chain, scene):
        return float(traj_features(traj, self.features, chain, scene) @ self.weights)

    def __call__(self, traj: Trajectory, chain, scene, op: DeformOperator | None = None):
        op = op or DeformOperator(T=traj.T)
        W = traj.waypoints
        lo = max(1, int(np.floor(self.window[0] * traj.T)))
        hi = min(traj.T - 1, int(np.ceil(self.window[1] * traj.T)))
        base = self._cost(traj, chain, scene)
        best, best_cost = None, base
        noise = self.rng.standard_normal((hi - lo + 1, W.shape[1])) / np.sqrt(W.shape[1])
        for i, t in enumerate(range(lo, hi + 1)):
            g = self.weights @ feature_joint_grads(self.features, W[t], chain, scene)
            n = np.linalg.norm(g)
            if n < 1e-9:
                continue
            d = -g / n + self.noise * noise[i]
            cand = Correction(t, d * self.magnitude / np.linalg.norm(d))
            cost = self._cost(deform(traj, cand, op), chain, scene)
            if cost < best_cost:
                best, best_cost = cand, cost
        return best


def trace_teacher(kind, n=10, noise_scale=0.02):
    """Teacher hook that answers a feature request with ``n`` simulated traces for ``kind``."""
    from .traces import generate_traces

    def hook(session, correction):
        return generate_traces(kind, session.chain, session.scene, n, seed=session.seed * 7919 + len(session.log),
                               noise_scale=noise_scale)

    return hook


def roc_curve(known_betas, unknown_betas):
    """ROC of the rule "unknown iff beta < eps" over all thresholds.

    Returns (thresholds, tpr, fpr, auc), where tpr is the fraction of unknown
    corrections routed to feature learning and fpr that of known ones.
    """
    kb = np.asarray(known_betas, dtype=float)
    ub = np.asarray(unknown_betas, dtype=float)
    if kb.size == 0 or ub.size == 0:
        raise ConfigError("ROC needs both known and unknown corrections")
    cuts = np.unique(np.concatenate([kb, ub]))
    thr = np.concatenate([[cuts[0]], (cuts[:-1] + cuts[1:]) / 2, [np.nextafter(cuts[-1], np.inf)]])
    tpr = np.array([(ub < e).mean() for e in thr])
    fpr = np.array([(kb < e).mean() for e in thr])
    # P(beta_unknown < beta_known), ties counted half
    auc = float((ub[:, None] < kb[None, :]).mean() + 0.5 * (ub[:, None] == kb[None, :]).mean())
    return thr, tpr, fpr, auc


def calibrate_epsilon(known_betas, unknown_betas):
    """Youden-optimal threshold. Returns (epsilon, auc, (thresholds, tpr, fpr))."""
    thr, tpr, fpr, auc = roc_curve(known_betas, unknown_betas)
    i = int(np.argmax(tpr - fpr))
    return float(thr[i]), auc, (thr, tpr, fpr)


MISSING_FEATURE = {"laptop_missing": "laptop", "table_missing": "table", "proxemics_missing": "proxemics"}
# localized features want pairs that start and end away from them; the table is active almost everywhere
PAIR_ENDPOINT_MAX = {"laptop": 0.1, "proxemics": 0.1, "table": None}


@dataclass
class OnlineScenario:
    """Online task: GT reward, the known part of the feature set, and how the person corrects.

    The first correction is about the feature missing from the set; ``extra_corrections``
    further pushes follow the full GT cost.
    """

    task: str = "laptop_missing"
    theta0: tuple = (0.0, 10.0)
    epsilon: float = DEFAULT_EPSILON
    alpha: float = 0.1
    magnitude: float = 0.02
    noise: float = 0.1
    extra_corrections: int = 0
    n_traces: int = 10
    pair_tries: int = 20

    def __post_init__(self):
        self.theta0 = tuple(float(x) for x in self.theta0)
        if self.task not in MISSING_FEATURE:
            raise ConfigError(f"online.task: unknown {self.task!r}")
        if self.extra_corrections < 0 or self.n_traces < 1 or self.pair_tries < 1:
            raise ConfigError("online: extra_corrections >= 0, n_traces >= 1 and pair_tries >= 1 required")


def _missing(task):
    if task not in MISSING_FEATURE:
        raise ConfigError(f"online: unknown task {task!r}")
    return MISSING_FEATURE[task]


def correction_corpus(task, about, n, chain, scene, seed=0, magnitude=0.02, noise=0.1, traj_cfg=None):
    """``n`` scripted corrections on trajectories planned with the known features only.

    ``about="known"`` pushes along the known non-coffee feature, ``"unknown"``
    along the missing one. Returns a list of (trajectory, correction).
    """
    from .demos import informative_pairs
    from .envs import GroundTruthReward, task_reward

    gt, known = task_reward(task, chain, scene)
    if about not in ("known", "unknown"):
        raise ConfigError(f"about must be 'known' or 'unknown', got {about!r}")
    focus = known[1] if about == "known" else gt.features[len(known)]
    rng = np.random.default_rng(seed)
    teacher = CorrectionTeacher([focus], [1.0], magnitude, noise, seed=int(rng.integers(2**31)))
    # a known-feature correction makes sense when that feature is underweighted
    planner = LinearReward(known, np.array([0.0 if f is focus else 10.0 * i for i, f in enumerate(known)]))
    out = []
    # pairs where the corrected feature matters
    target = GroundTruthReward([focus], [1.0])
    for _ in range(20):
        S, G = informative_pairs(target, chain, scene, n, rng, endpoint_max=PAIR_ENDPOINT_MAX.get(focus.kind, 0.1))
        for tr in optimize_traj(planner.cost(), S, G, chain, scene, traj_cfg):
            cor = teacher(tr, chain, scene)
            if cor is not None:
                out.append((tr, cor))
            if len(out) == n:
                return out
    raise ConfigError(f"could not script {n} {about}-feature corrections")


def corpus_betas(task, corpus, chain, scene):
    from .envs import task_reward

    _, known = task_reward(task, chain, scene)
    return np.array([estimate_confidence(cor, tr, known, chain, scene).beta for tr, cor in corpus])


def run_scenario(sc: OnlineScenario, chain, scene, seed=0, traj_cfg=None, feature_cfg=None):
    """Simulate one online FERL run. Returns the finished session."""
    from .demos import informative_pairs
    from .envs import GroundTruthReward, task_reward

    gt, known = task_reward(sc.task, chain, scene)
    missing = gt.features[len(known)]
    if len(sc.theta0) != len(known):
        raise ConfigError(f"online.theta0 needs {len(known)} entries")
    rng = np.random.default_rng(seed)
    first = CorrectionTeacher([missing], [1.0], sc.magnitude, sc.noise, seed=int(rng.integers(2**31)))
    later = CorrectionTeacher(gt.features, gt.weights, sc.magnitude, sc.noise, seed=int(rng.integers(2**31)))
    reward = LinearReward(list(known), np.array(sc.theta0))
    kw = dict(epsilon=sc.epsilon, alpha=sc.alpha, seed=seed, traj_cfg=traj_cfg or TrajConfig(),
              feature_cfg=feature_cfg or FeatureTrainConfig())
    for _ in range(sc.pair_tries):
        S, G = informative_pairs(GroundTruthReward([missing], [1.0]), chain, scene, 1, rng,
                                 endpoint_max=PAIR_ENDPOINT_MAX[missing.kind])
        session = start_session(reward, S[0], G[0], chain, scene, **kw)
        cor = first(session.traj, chain, scene, session.deform_op)
        if cor is not None:
            break
    else:
        raise ConfigError("no start/goal pair where a correction about the missing feature helps")
    hook = trace_teacher(_missing(sc.task), sc.n_traces)
    online_ferl_step(session, cor, hook)
    for _ in range(sc.extra_corrections):
        cor = later(session.traj, chain, scene, session.deform_op)
        if cor is None or session.status != "active":
            break
        online_ferl_step(session, cor, hook)
    return session

"""Policy rollouts and final-distance evaluation."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .buffer import Trajectory
from .errors import ContractViolation
from .rng import episode_rngs

MODES = ("greedy", "sample", "uniform")


def rollout_batch(policy, env, goals, mode: str = "greedy", rngs=None, epsilon: float = 0.0):
    """Run one T-step episode per goal in lockstep.

    Each episode draws its randomness from its own generator in ``rngs``, so an
    episode's outcome does not depend on which other episodes share the batch.
    Returns ``(states, actions)`` with shapes ``(n, T+1, ...)`` and ``(n, T)``.
    """
    if mode not in MODES:
        raise ContractViolation(f"mode must be one of {MODES}, got {mode!r}")
    if not 0.0 <= epsilon <= 1.0:
        raise ContractViolation(f"epsilon must lie in [0, 1], got {epsilon}")
    goals = np.asarray(goals)
    n = len(goals)
    T = env.horizon
    A = env.action_count
    needs_rng = mode != "greedy" or epsilon > 0 or not env.deterministic
    if needs_rng:
        if rngs is None or len(rngs) != n:
            raise ContractViolation("stochastic rollouts need one generator per episode")
        draws = np.stack([r.random((3, T)) for r in rngs])  # action, epsilon, dynamics
    first = env.reset(rngs[0] if rngs else None)
    states = np.empty((n, T + 1, *np.shape(first)), dtype=np.asarray(first).dtype)
    states[:, 0] = first
    if env.is_finite and env.mdp.start_state is None:
        states[:, 0] = [env.reset(r) for r in rngs]
    actions = np.empty((n, T), dtype=np.int64)
    for t in range(T):
        s = states[:, t]
        if mode == "uniform":
            a = np.minimum((draws[:, 0, t] * A).astype(np.int64), A - 1)
        else:
            h = np.full(n, T - t) if policy.time_varying else None
            p = policy.probs_batch(s, goals, h)
            if mode == "greedy":
                a = np.argmax(p, axis=1)
            else:
                a = kernels.categorical_sample(np.ascontiguousarray(p), draws[:, 0, t].copy())
            if epsilon > 0:
                explore = draws[:, 1, t] < epsilon
                rand = np.minimum((draws[:, 0, t] * A).astype(np.int64), A - 1)
                a = np.where(explore, rand, a)
        actions[:, t] = a
        u = draws[:, 2, t].copy() if needs_rng else None
        states[:, t + 1] = env.step_batch(s, a, u=u)
    return states, actions


def rollout(policy, env, goal, rng=None, greedy: bool = True, epsilon: float = 0.0) -> Trajectory:
    mode = "greedy" if greedy else "sample"
    goals = np.asarray(goal)[None]
    states, actions = rollout_batch(policy, env, goals, mode, None if rng is None else [rng], epsilon)
    return Trajectory(states[0], actions[0], goal)


@dataclass(frozen=True)
class EpisodeRecord:
    goal: object
    final_state: object
    final_distance: float
    success: bool


@dataclass
class EvalReport:
    n_episodes: int
    median_final_distance: float
    mean_final_distance: float
    success_ratio: float
    episodes: list[EpisodeRecord] = field(default_factory=list)


def lower_median(values) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))
    if len(v) == 0:
        raise ContractViolation("median of an empty list")
    return float(v[(len(v) - 1) // 2])


def summarize(distances, threshold: float) -> tuple[float, float, float]:
    """(lower median, mean, success ratio) of final distances; success means distance < threshold."""
    d = np.asarray(distances, dtype=np.float64)
    return lower_median(d), float(d.mean()), float(np.mean(d < threshold))


def evaluate(policy, env, goals, threshold: float | None = None, rng=None, greedy: bool = True,
             epsilon: float = 0.0) -> EvalReport:
    """One rollout per goal; statistics over final distances."""
    goals = np.asarray(goals)
    if len(goals) == 0:
        raise ContractViolation("evaluate needs at least one goal")
    if threshold is None:
        threshold = env.goal_threshold
    rngs = None if rng is None else episode_rngs(rng, len(goals))
    states, _ = rollout_batch(policy, env, goals, "greedy" if greedy else "sample", rngs, epsilon)
    finals = states[:, -1]
    dist = env.distance_batch(finals, goals)
    median, mean, ratio = summarize(dist, threshold)
    episodes = [EpisodeRecord(g, f, float(d), bool(d < threshold)) for g, f, d in zip(goals, finals, dist)]
    return EvalReport(len(goals), median, mean, ratio, episodes)


def _fmt(v) -> str:
    v = np.atleast_1d(np.asarray(v))
    return " ".join(str(int(x)) if np.issubdtype(v.dtype, np.integer) else repr(float(x)) for x in v)


def write_episodes_csv(report: EvalReport, path) -> None:
    """``goal,final_distance,success``; vector goals are space-separated within their field."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["goal", "final_distance", "success"])
        for ep in report.episodes:
            w.writerow([_fmt(ep.goal), repr(ep.final_distance), int(ep.success)])

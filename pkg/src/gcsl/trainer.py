"""The GCSL outer loop: collect with the current policy, relabel, imitate.

Each iteration commands a goal drawn from the environment's goal prior, runs
one T-step episode (uniform random actions during warm-up, greedy
afterwards), stores it, and then updates the policy on hindsight-relabelled
data:

* an :class:`~gcsl.policy.MlpPolicy` takes ``T * grad_steps_per_env_step``
  Adam steps on freshly sampled relabelled batches;
* a :class:`~gcsl.policy.TabularPolicy` is kept equal to the exact
  likelihood maximiser on the buffer contents (``tabular_fit="exact"``), or
  accumulates counts from sampled batches (``tabular_fit="sampled"``).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from . import kernels
from .buffer import BufferConfig, ReplayBuffer, Trajectory, read_trajectory_log
from .errors import ContractViolation
from .evaluation import evaluate, rollout_batch
from .policy import Adam, MlpPolicy, TabularPolicy, batch_nll
from .rng import derive_rng

ABLATIONS = ("none", "time_varying", "limited_relabel", "on_policy", "fixed_collection")
TABULAR_EPSILON = 0.2
METRICS_HEADER = ("env_steps", "median_final_distance", "success_ratio", "mean_training_loss")


@dataclass(frozen=True)
class TrainConfig:
    total_env_steps: int = 300_000
    warmup_steps: int = 10_000
    batch_size: int = 256
    grad_steps_per_env_step: int = 1
    eval_every: int = 10_000
    eval_goals: int = 200
    ablation: str = "none"
    demo_path: str | None = None
    seed: int = 0
    lr: float = 5e-4
    epsilon: float | None = None
    h_max: int = 3
    on_policy_window: int = 10_000
    hidden: tuple[int, ...] = (400, 300)
    smoothing: float = 0.1
    policy_kind: str = "auto"
    tabular_fit: str = "exact"
    stop_median_distance: float | None = None
    horizon_input: bool | None = None

    def __post_init__(self):
        for name in ("total_env_steps", "batch_size", "grad_steps_per_env_step", "eval_every", "eval_goals"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be a positive integer")
        if self.warmup_steps < 0 or self.warmup_steps > self.total_env_steps:
            raise ContractViolation("warmup_steps must lie in [0, total_env_steps]")
        if self.ablation not in ABLATIONS:
            raise ContractViolation(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")
        if self.policy_kind not in ("auto", "tabular", "mlp"):
            raise ContractViolation(f"unknown policy kind {self.policy_kind!r}")
        if self.tabular_fit not in ("exact", "sampled"):
            raise ContractViolation(f"unknown tabular_fit {self.tabular_fit!r}")
        if self.epsilon is not None and not 0.0 <= self.epsilon <= 1.0:
            raise ContractViolation("epsilon must lie in [0, 1]")
        if self.seed < 0:
            raise ContractViolation("seed must be non-negative")
        if self.ablation == "time_varying" and self.horizon_input is False:
            raise ContractViolation("the time_varying ablation feeds the horizon to the policy")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def time_varying(self) -> bool:
        """Whether the policy is conditioned on the remaining horizon."""
        if self.horizon_input is not None:
            return self.horizon_input
        return self.ablation == "time_varying"

    def resolve(self, env) -> TrainConfig:
        """Fill the per-policy defaults left open (``None`` or ``auto``).

        Tabular policies default to horizon conditioning with epsilon-greedy
        collection (epsilon 0.2): a deterministic table followed greedily in a
        deterministic environment replays the same trajectory for a given goal
        and stops learning. MLP policies default to the Markov form with pure
        greedy collection.
        """
        kind = self.policy_kind
        if kind == "auto":
            kind = "tabular" if env.is_finite else "mlp"
        eps = self.epsilon
        if eps is None:
            eps = TABULAR_EPSILON if kind == "tabular" else 0.0
        horizon = self.horizon_input
        if horizon is None:
            horizon = kind == "tabular" or self.ablation == "time_varying"
        return replace(self, policy_kind=kind, epsilon=eps, horizon_input=horizon)

    def buffer_config(self) -> BufferConfig:
        if self.ablation == "limited_relabel":
            return BufferConfig.limited(self.h_max)
        if self.ablation == "on_policy":
            return BufferConfig.on_policy(self.on_policy_window)
        return BufferConfig.full()


@dataclass(frozen=True)
class MetricsRow:
    env_steps: int
    median_final_distance: float
    success_ratio: float
    mean_training_loss: float

    def __post_init__(self):
        if not 0.0 <= self.success_ratio <= 1.0:
            raise ContractViolation("success_ratio must lie in [0, 1]")
        if self.median_final_distance < 0:
            raise ContractViolation("distances are non-negative")

    def csv_fields(self) -> list[str]:
        return [str(self.env_steps), _fmt_float(self.median_final_distance),
                _fmt_float(self.success_ratio), _fmt_float(self.mean_training_loss)]


def _fmt_float(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def write_metrics_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow(r.csv_fields())


def make_policy(env, config: TrainConfig, rng: np.random.Generator | None = None):
    """Tabular for finite environments and an MLP otherwise, unless ``policy_kind`` says so."""
    config = config.resolve(env)
    kind = config.policy_kind
    horizon_max = env.horizon if config.time_varying else None
    if kind == "tabular":
        if not env.is_finite:
            raise ContractViolation("a tabular policy needs a finite environment")
        return TabularPolicy(env.state_count, env.action_count, horizon_max=horizon_max,
                             smoothing=config.smoothing)
    if rng is None:
        rng = derive_rng(config.seed, "init")
    encoder = env.features if env.is_finite else None
    return MlpPolicy(env.feature_dim, env.action_count, hidden=config.hidden, horizon_max=horizon_max,
                     rng=rng, encoder=encoder)


def collect_trajectory(policy, env, goal, mode: str, rng: np.random.Generator, epsilon: float = 0.0,
                       seed: int = 0, iteration: int = 0) -> Trajectory:
    """One T-step episode commanded to ``goal``; ``mode`` is ``uniform`` or ``greedy``."""
    if mode not in ("uniform", "greedy"):
        raise ContractViolation(f"collection mode must be 'uniform' or 'greedy', got {mode!r}")
    states, actions = rollout_batch(policy, env, np.asarray(goal)[None], mode, [rng], epsilon)
    return Trajectory(states[0], actions[0], goal, seed=seed, iteration=iteration)


def generate_demos(env, n: int, seed: int = 0) -> list[Trajectory]:
    """``n`` expert trajectories from the backward-DP optimal policy of a deterministic finite env.

    Goals are drawn from the environment's goal prior on the "demos" stream;
    the expert acts on the remaining horizon, so each trajectory ends on its
    commanded goal whenever that goal is reachable within T steps.
    """
    from .oracle import optimal_reach_policy

    if not env.is_finite:
        raise ContractViolation("expert demonstrations need a finite environment")
    if n < 1:
        raise ContractViolation("n must be positive")
    expert, _, _ = optimal_reach_policy(env.mdp)
    goals = env.sample_goals(derive_rng(seed, "demos"), n)
    states, actions = rollout_batch(expert, env, goals, "greedy")
    return [Trajectory(s, a, int(g), seed=seed, iteration=i)
            for i, (s, a, g) in enumerate(zip(states, actions, goals))]


def bootstrap_from_demos(buffer: ReplayBuffer, demo_path) -> int:
    """Append every trajectory of a demonstration log to ``buffer``; returns how many."""
    trajs = read_trajectory_log(demo_path)
    for t in trajs:
        buffer.append(t)
    return len(trajs)


class _TabularSync:
    """Keeps a tabular policy equal to the weighted MLE over the buffer contents."""

    def __init__(self, policy: TabularPolicy, h_max: int | None):
        self.policy = policy
        self.h_max = h_max
        self.pending: list[Trajectory] = []
        self.fitted: set[int] = set()

    def added(self, traj: Trajectory) -> None:
        self.pending.append(traj)

    def evicted(self, trajs) -> None:
        gone = {id(t) for t in trajs}
        self.pending = [t for t in self.pending if id(t) not in gone]
        out = [t for t in trajs if id(t) in self.fitted]
        if out:
            self._apply(out, sign=-1.0)
            self.fitted.difference_update(id(t) for t in out)

    def sync(self) -> None:
        if self.pending:
            self._apply(self.pending, sign=1.0)
            self.fitted.update(id(t) for t in self.pending)
            self.pending = []

    def _apply(self, trajs, sign: float) -> None:
        states = np.stack([t.states for t in trajs]).astype(np.int64)
        actions = np.stack([t.actions for t in trajs]).astype(np.int64)
        h_max = self.h_max if self.h_max is not None else actions.shape[1]
        s, g, h, a, w = kernels.relabel_cells(states, actions, h_max)
        horizons = h if self.policy.time_varying else None
        if sign > 0:
            self.policy.fit(s, g, a, horizons, w)
        else:
            self.policy.unfit(s, g, a, horizons, w)


@dataclass
class TrainState:
    """Everything :func:`train` mutates, exposed for inspection and checkpointing."""

    policy: object
    buffer: ReplayBuffer
    env_steps: int = 0
    updates: int = 0
    first_update_at: int | None = None
    losses: list[float] = field(default_factory=list)
    demos_loaded: int = 0


def train(env, policy, config: TrainConfig, buffer: ReplayBuffer | None = None,
          state: TrainState | None = None) -> Iterator[MetricsRow]:
    """Run GCSL, yielding a :class:`MetricsRow` every ``eval_every`` env steps and at the end.

    Consumes ``(total_env_steps // T) * T`` environment steps. Randomness comes
    from streams derived from ``config.seed`` ("goal", "collect", "train",
    "eval"), so the run is reproducible bit for bit.
    """
    T = env.horizon
    config = config.resolve(env)
    if config.time_varying != bool(getattr(policy, "time_varying", False)):
        raise ContractViolation("policy time-variance must match the configuration's horizon_input")
    if buffer is None:
        buffer = ReplayBuffer(config.buffer_config())
    if state is None:
        state = TrainState(policy, buffer)
    goal_rng = derive_rng(config.seed, "goal")
    collect_rng = derive_rng(config.seed, "collect")
    train_rng = derive_rng(config.seed, "train")
    eval_goals = env.sample_goals(derive_rng(config.seed, "eval"), config.eval_goals)

    tabular = isinstance(policy, TabularPolicy)
    sync = _TabularSync(policy, buffer.h_max) if tabular and config.tabular_fit == "exact" else None
    adam = None if tabular else Adam(lr=config.lr)

    if config.demo_path:
        state.demos_loaded = bootstrap_from_demos(buffer, config.demo_path)
    if sync is not None:
        for t in buffer.trajectories:
            sync.added(t)

    n_traj = config.total_env_steps // T
    next_eval = config.eval_every
    for k in range(n_traj):
        goal = env.sample_goal(goal_rng)
        warm = state.env_steps < config.warmup_steps
        mode = "uniform" if warm or config.ablation == "fixed_collection" else "greedy"
        traj = collect_trajectory(policy, env, goal, mode, collect_rng, config.epsilon,
                                  seed=config.seed, iteration=k)
        evicted = buffer.append(traj)
        state.env_steps += T
        if sync is not None:
            sync.added(traj)
            sync.evicted(evicted)

        if state.env_steps >= config.warmup_steps:
            if state.first_update_at is None:
                state.first_update_at = state.env_steps
            _update(policy, buffer, config, T, train_rng, adam, sync, state)

        last = k == n_traj - 1
        if state.env_steps >= next_eval or last:
            while next_eval <= state.env_steps:
                next_eval += config.eval_every
            report = evaluate(policy, env, eval_goals, env.goal_threshold)
            loss = float(np.mean(state.losses)) if state.losses else float("nan")
            state.losses = []
            row = MetricsRow(state.env_steps, report.median_final_distance, report.success_ratio, loss)
            yield row
            if config.stop_median_distance is not None and row.median_final_distance < config.stop_median_distance:
                return


def _update(policy, buffer, config, T, rng, adam, sync, state) -> None:
    n_steps = T * config.grad_steps_per_env_step
    tv = policy.time_varying
    if adam is not None:
        for _ in range(n_steps):
            b = buffer.sample_batch(config.batch_size, rng)
            loss, grads = policy.loss_and_grad(b.states, b.actions, b.goals, b.horizons if tv else None)
            adam.step(policy.params, grads)
            state.losses.append(loss)
        state.updates += n_steps
        return
    if sync is not None:
        sync.sync()
        b = buffer.sample_batch(config.batch_size, rng)
    else:
        b = buffer.sample_batch(n_steps * config.batch_size, rng)
        policy.fit(b.states, b.goals, b.actions, b.horizons if tv else None)
    state.updates += n_steps
    state.losses.append(batch_nll(policy, b.states, b.actions, b.goals, b.horizons if tv else None))


def run(env, config: TrainConfig, policy=None, buffer=None) -> tuple[list[MetricsRow], TrainState]:
    """Train to completion and return all metrics rows and the final state."""
    config = config.resolve(env)
    if policy is None:
        policy = make_policy(env, config)
    if buffer is None:
        buffer = ReplayBuffer(config.buffer_config())
    state = TrainState(policy, buffer)
    rows = list(train(env, policy, config, buffer, state))
    return rows, state


# ---------------------------------------------------------------------------
# hyper-parameter sweep

SWEEP_HIDDEN = (250, 500, 1000)
SWEEP_GRAD_STEPS = (1, 2, 4)
SWEEP_HEADER = ("hidden_size", "grad_steps", "final_success_ratio", "final_median_distance")


@dataclass(frozen=True)
class SweepRow:
    hidden_size: int
    grad_steps: int
    final_success_ratio: float
    final_median_distance: float
    error: str = ""

    def csv_fields(self) -> list[str]:
        return [str(self.hidden_size), str(self.grad_steps),
                _fmt_float(self.final_success_ratio), _fmt_float(self.final_median_distance)]


def run_sweep(env, base_config: TrainConfig, hidden_sizes=SWEEP_HIDDEN, grad_steps=SWEEP_GRAD_STEPS,
              log=None) -> list[SweepRow]:
    """Train one MLP per (hidden size, gradient steps) pair, all with ``base_config.seed``.

    Both hidden layers take the swept size. A failing run is recorded with NaN
    results and its error message; the sweep carries on.
    """
    rows = []
    for h in hidden_sizes:
        for k in grad_steps:
            cfg = replace(base_config, hidden=(h, h), grad_steps_per_env_step=k, policy_kind="mlp")
            try:
                metrics, _ = run(env, cfg)
                last = metrics[-1]
                rows.append(SweepRow(h, k, last.success_ratio, last.median_final_distance))
            except Exception as exc:  # noqa: BLE001 - one bad configuration must not end the sweep
                if log is not None:
                    log(f"sweep run hidden={h} grad_steps={k} failed: {exc}")
                rows.append(SweepRow(h, k, float("nan"), float("nan"), error=str(exc)))
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow(r.csv_fields())


def success_iqr(rows) -> float:
    """Inter-quartile range of final success ratios across sweep rows (failed runs ignored)."""
    vals = np.array([r.final_success_ratio for r in rows], dtype=np.float64)
    vals = vals[~np.isnan(vals)]
    if len(vals) == 0:
        return float("nan")
    q1, q3 = np.percentile(vals, [25, 75])
    return float(q3 - q1)

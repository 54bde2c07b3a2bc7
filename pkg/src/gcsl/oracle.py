"""Exact computations on small finite goal MDPs.

Everything here is computed by exhaustive trajectory enumeration or by exact
forward/backward dynamic programming, never by sampling. Policies are explicit
tables indexed ``[h, state, goal, action]`` with ``h`` the remaining horizon
(``h = T - t`` at time step ``t``); row ``h = 0`` is never consulted.

Notation used in the reports: ``J`` is the probability of ending exactly on
the commanded goal; ``J_gcsl`` the expected relabelled log-likelihood of
``pi`` under trajectories of ``pi_old``; ``J_surr`` the success-weighted
trajectory log-likelihood; ``C2`` the policy-independent part of the relabelled
trajectory log-likelihood (initial state and dynamics terms).
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .env import FiniteMdp, chain, open_grid
from .errors import ContractViolation, EnumerationBudgetExceeded

DEFAULT_BUDGET = 10**6
TOL = 1e-9


@dataclass
class TabularDistributionPolicy:
    """Explicit action distributions; ``table`` has shape (T+1, S, G, A)."""

    table: np.ndarray

    time_varying = True

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.ndim != 4:
            raise ContractViolation(f"policy table must be 4-D (T+1, S, G, A), got {self.table.shape}")

    @property
    def horizon(self) -> int:
        return self.table.shape[0] - 1

    @property
    def action_count(self) -> int:
        return self.table.shape[3]

    def probs_batch(self, states, goals, horizons) -> np.ndarray:
        return self.table[np.asarray(horizons), np.asarray(states), np.asarray(goals)]

    def row_error(self) -> float:
        """Largest deviation of a used row from a probability distribution."""
        rows = self.table[1:]
        return float(max(np.max(np.abs(rows.sum(axis=-1) - 1.0)), -min(rows.min(), 0.0)))

    def is_valid(self, tol: float = 1e-12) -> bool:
        return self.row_error() <= tol

    def full_support(self) -> bool:
        return bool(np.all(self.table[1:] > 0))

    @classmethod
    def uniform(cls, n_states: int, n_actions: int, horizon: int, n_goals: int | None = None):
        g = n_states if n_goals is None else n_goals
        return cls(np.full((horizon + 1, n_states, g, n_actions), 1.0 / n_actions))

    @classmethod
    def markov(cls, sga: np.ndarray, horizon: int):
        """Repeat one (S, G, A) table for every remaining horizon."""
        sga = np.asarray(sga, dtype=np.float64)
        return cls(np.broadcast_to(sga, (horizon + 1, *sga.shape)).copy())


def random_policy(mdp: FiniteMdp, rng: np.random.Generator, concentration: float = 1.0,
                  markov: bool = False) -> TabularDistributionPolicy:
    """Rows drawn from a symmetric Dirichlet; almost surely full support."""
    S, A, T = mdp.state_count, mdp.action_count, mdp.horizon
    shape = (S, S, A) if markov else (T + 1, S, S, A)
    rows = rng.dirichlet(np.full(A, concentration), size=shape[:-1])
    # guard against underflow to exact zeros for small concentrations
    rows = np.maximum(rows, 1e-300)
    rows /= rows.sum(axis=-1, keepdims=True)
    if markov:
        return TabularDistributionPolicy.markov(rows, T)
    return TabularDistributionPolicy(rows)


def _check_policy(policy: TabularDistributionPolicy, mdp: FiniteMdp) -> None:
    T, S, G, A = policy.table.shape
    if T - 1 != mdp.horizon or S != mdp.state_count or G != mdp.state_count or A != mdp.action_count:
        raise ContractViolation(
            f"policy table {policy.table.shape} does not fit MDP "
            f"(T={mdp.horizon}, S={mdp.state_count}, A={mdp.action_count})")


# ---------------------------------------------------------------------------
# trajectory enumeration


@dataclass
class PathSet:
    """Every trajectory with positive dynamics probability, independent of any policy.

    ``dyn_prob`` is ``p(s_0) * prod_t P(s_{t+1} | s_t, a_t)`` and ``dyn_logp`` its log.
    """

    states: np.ndarray
    actions: np.ndarray
    dyn_prob: np.ndarray
    dyn_logp: np.ndarray

    def __len__(self) -> int:
        return len(self.dyn_prob)

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]

    @property
    def final(self) -> np.ndarray:
        return self.states[:, -1]


def enumerate_paths(mdp: FiniteMdp, budget: int = DEFAULT_BUDGET) -> PathSet:
    T, A = mdp.horizon, mdp.action_count
    if A**T > budget:
        raise EnumerationBudgetExceeded(f"{A}^{T} action sequences exceed the budget of {budget}")
    starts = np.flatnonzero(mdp.initial > 0)
    states = starts[:, None]
    actions = np.empty((len(starts), 0), dtype=np.int64)
    logp = np.log(mdp.initial[starts])
    prob = mdp.initial[starts].copy()
    for _ in range(T):
        trans = mdp.transition[states[:, -1]]  # (N, A, S)
        idx, a, s_next = np.nonzero(trans > 0)
        if len(idx) > budget:
            raise EnumerationBudgetExceeded(f"{len(idx)} trajectories exceed the budget of {budget}")
        p = trans[idx, a, s_next]
        states = np.concatenate([states[idx], s_next[:, None]], axis=1)
        actions = np.concatenate([actions[idx], a[:, None]], axis=1)
        prob = prob[idx] * p
        logp = logp[idx] + np.log(p)
    return PathSet(states.astype(np.int64), actions.astype(np.int64), prob, logp)


def _action_probs(policy: TabularDistributionPolicy, paths: PathSet, goals) -> np.ndarray:
    """pi(a_t | s_t, goal, T - t) for every path and step; ``goals`` broadcasts against paths."""
    T = paths.horizon
    h = T - np.arange(T)
    g = np.asarray(goals)
    if g.ndim == 1:
        g = g[:, None]
    return policy.table[h[None, :], paths.states[:, :T], g, paths.actions]


def _policy_path_probs(policy: TabularDistributionPolicy, paths: PathSet, n_goals: int) -> np.ndarray:
    """(G, N): probability of each path's action sequence when commanded goal g."""
    out = np.empty((n_goals, len(paths)))
    for g in range(n_goals):
        out[g] = np.prod(_action_probs(policy, paths, np.full(len(paths), g)), axis=1)
    return out


@dataclass
class TrajectoryEnumeration:
    states: np.ndarray
    actions: np.ndarray
    probs: np.ndarray

    def __iter__(self):
        for s, a, p in zip(self.states, self.actions, self.probs):
            yield (s, a), p


def enumerate_trajectories(policy: TabularDistributionPolicy, mdp: FiniteMdp, goal: int,
                           budget: int = DEFAULT_BUDGET) -> TrajectoryEnumeration:
    """All trajectories with their probabilities under ``policy`` commanded to reach ``goal``."""
    _check_policy(policy, mdp)
    paths = enumerate_paths(mdp, budget)
    pol = np.prod(_action_probs(policy, paths, np.full(len(paths), goal)), axis=1)
    return TrajectoryEnumeration(paths.states, paths.actions, paths.dyn_prob * pol)


def _masked_dot(weights: np.ndarray, values: np.ndarray) -> float:
    """sum(weights * values) with 0 * (-inf) taken as 0."""
    m = weights > 0
    return float(np.sum(weights[m] * values[m]))


def _log(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(x)


# ---------------------------------------------------------------------------
# goal-reaching objective


def exact_reach_probability(policy: TabularDistributionPolicy, mdp: FiniteMdp, goal: int) -> float:
    """P(s_T = goal) by propagating the state distribution forward T steps."""
    _check_policy(policy, mdp)
    d = mdp.initial.copy()
    T = mdp.horizon
    for t in range(T):
        pi = policy.table[T - t, :, goal, :]  # (S, A)
        d = np.einsum("s,sa,sat->t", d, pi, mdp.transition)
    return float(d[goal])


def enumerated_reach_probability(policy: TabularDistributionPolicy, mdp: FiniteMdp, goal: int,
                                 budget: int = DEFAULT_BUDGET) -> float:
    """P(s_T = goal) by summing enumerated trajectory probabilities."""
    enum = enumerate_trajectories(policy, mdp, goal, budget)
    return float(enum.probs[enum.states[:, -1] == goal].sum())


def exact_J(policy: TabularDistributionPolicy, mdp: FiniteMdp) -> float:
    return float(sum(mdp.goal_distribution[g] * exact_reach_probability(policy, mdp, g)
                     for g in range(mdp.state_count) if mdp.goal_distribution[g] > 0))


# ---------------------------------------------------------------------------
# GCSL and surrogate objectives


@dataclass
class _Weights:
    paths: PathSet
    joint: np.ndarray  # (G, N): p(g) * pi_old(tau | g)

    @property
    def marginal(self) -> np.ndarray:
        return self.joint.sum(axis=0)

    @property
    def right(self) -> np.ndarray:
        """p(G(tau)) * pi_old(tau | G(tau)): mass of trajectories that hit their commanded goal."""
        return self.joint[self.paths.final, np.arange(len(self.paths))]


def _old_weights(pi_old: TabularDistributionPolicy, mdp: FiniteMdp, budget: int) -> _Weights:
    _check_policy(pi_old, mdp)
    paths = enumerate_paths(mdp, budget)
    pol = _policy_path_probs(pi_old, paths, mdp.state_count)
    joint = mdp.goal_distribution[:, None] * pol * paths.dyn_prob[None, :]
    return _Weights(paths, joint)


def _relabeled_action_logs(pi: TabularDistributionPolicy, paths: PathSet) -> np.ndarray:
    """sum_t log pi(a_t | s_t, s_T, T - t) per path."""
    return _log(_action_probs(pi, paths, paths.final)).sum(axis=1)


def _require_full_support(*policies: TabularDistributionPolicy) -> None:
    for p in policies:
        if not p.full_support():
            raise ContractViolation("this oracle requires full-support policies")


def exact_j_gcsl(pi: TabularDistributionPolicy, pi_old: TabularDistributionPolicy, mdp: FiniteMdp,
                 budget: int = DEFAULT_BUDGET) -> float:
    _check_policy(pi, mdp)
    w = _old_weights(pi_old, mdp, budget)
    return _masked_dot(w.marginal, _relabeled_action_logs(pi, w.paths))


def exact_j_surr(pi: TabularDistributionPolicy, pi_old: TabularDistributionPolicy, mdp: FiniteMdp,
                 budget: int = DEFAULT_BUDGET) -> float:
    """E_{g, tau ~ pi_old(.|g)}[ 1[s_T = g] * log pi(tau | g) ]."""
    _check_policy(pi, mdp)
    w = _old_weights(pi_old, mdp, budget)
    paths = w.paths
    # on the success event the commanded goal equals s_T, so log pi(tau | g) = log pi(tau | s_T)
    log_traj = paths.dyn_logp + _relabeled_action_logs(pi, paths)
    return _masked_dot(w.right, log_traj)


def relabeled_log_likelihood(pi, pi_old, mdp, budget: int = DEFAULT_BUDGET) -> float:
    """E_{tau ~ pi_old}[ log pi(tau | G(tau)) ], dynamics terms included."""
    w = _old_weights(pi_old, mdp, budget)
    return _masked_dot(w.marginal, w.paths.dyn_logp + _relabeled_action_logs(pi, w.paths))


def dynamics_constant(pi_old, mdp, budget: int = DEFAULT_BUDGET) -> float:
    """E_{tau ~ pi_old}[ log p(s_0) + sum_t log P(s_{t+1} | s_t, a_t) ]."""
    w = _old_weights(pi_old, mdp, budget)
    return _masked_dot(w.marginal, w.paths.dyn_logp)


def tv_alpha(pi: TabularDistributionPolicy, pi_old: TabularDistributionPolicy) -> float:
    """Largest total-variation distance between matching rows (h >= 1) of two tables."""
    if pi.table.shape != pi_old.table.shape:
        raise ContractViolation(f"table shapes differ: {pi.table.shape} vs {pi_old.table.shape}")
    return float(np.max(0.5 * np.abs(pi.table[1:] - pi_old.table[1:]).sum(axis=-1)))


# ---------------------------------------------------------------------------
# lower bound and relabelling gap


@dataclass
class GapTerms:
    P_wrong: float
    tv_right_wrong: float
    gap: float
    gap_bound: float
    wrong_term: float
    degenerate: bool
    holds: bool


@dataclass
class BoundReport:
    J: float
    J_surr: float
    J_gcsl: float
    relabeled_loglik: float
    alpha: float
    C2: float
    penalty: float
    slack_i: float
    slack_ii: float
    slack_iii: float
    check_i: bool
    check_ii: bool
    check_iii: bool
    policy_valid: bool
    P_wrong: float
    tv_right_wrong: float
    gap: float
    gap_bound: float
    wrong_term: float
    gap_degenerate: bool
    gap_ok: bool
    instance: int = -1

    @property
    def passed(self) -> bool:
        return self.policy_valid and self.check_i and self.check_ii and self.check_iii and self.gap_ok

    def as_row(self) -> dict:
        row = asdict(self)
        row["passed"] = self.passed
        return row


def _gap_from_weights(pi, w: _Weights, tol: float) -> GapTerms:
    paths = w.paths
    marginal = w.marginal
    right = w.right
    wrong = marginal - right
    p_wrong = float(wrong.sum())
    L = paths.dyn_logp + _relabeled_action_logs(pi, paths)
    if p_wrong <= 0.0 or p_wrong >= 1.0:
        return GapTerms(p_wrong, 0.0, 0.0, 0.0, 0.0, True, True)
    q_wrong = wrong / p_wrong
    q_right = right / (1.0 - p_wrong)
    tv = 0.5 * float(np.abs(q_right - q_wrong).sum())
    # P * E_{pi_old}[(1 - D) L] with D = q_wrong / pi_old
    gap = p_wrong * _masked_dot(marginal, L) - p_wrong * _masked_dot(q_wrong, L)
    mean_l = _masked_dot(marginal, L)
    bound = 2.0 * p_wrong * (1.0 - p_wrong) * tv * abs(mean_l)
    wrong_term = p_wrong * _masked_dot(q_wrong, L)
    holds = abs(gap) <= bound + tol
    return GapTerms(p_wrong, tv, gap, bound, wrong_term, False, bool(holds))


def gap_terms(pi, pi_old, mdp, budget: int = DEFAULT_BUDGET, tol: float = TOL) -> GapTerms:
    """Relabelling gap: its size, and the bound 2 P (1-P) TV(p_right, p_wrong) |E[log pi(tau|G(tau))]|."""
    _check_policy(pi, mdp)
    return _gap_from_weights(pi, _old_weights(pi_old, mdp, budget), tol)


def check_theorem_4_1(pi, pi_old, mdp, budget: int = DEFAULT_BUDGET, tol: float = TOL) -> BoundReport:
    """Check the GCSL lower bound through its three constituent relations.

    (i)   J(pi) >= J_surr(pi) - 4 T (T-1) alpha^2
    (ii)  J_surr(pi) >= E_{pi_old}[log pi(tau | G(tau))]
    (iii) E_{pi_old}[log pi(tau | G(tau))] == J_gcsl(pi) + C2
    """
    _check_policy(pi, mdp)
    _require_full_support(pi_old)
    w = _old_weights(pi_old, mdp, budget)
    paths = w.paths
    T = mdp.horizon
    action_logs = _relabeled_action_logs(pi, paths)
    j = exact_J(pi, mdp)
    j_gcsl = _masked_dot(w.marginal, action_logs)
    c2 = _masked_dot(w.marginal, paths.dyn_logp)
    loglik = _masked_dot(w.marginal, paths.dyn_logp + action_logs)
    j_surr = _masked_dot(w.right, paths.dyn_logp + action_logs)
    alpha = tv_alpha(pi, pi_old)
    penalty = 4.0 * T * (T - 1) * alpha**2
    slack_i = j - (j_surr - penalty)
    slack_ii = j_surr - loglik
    slack_iii = abs(loglik - (j_gcsl + c2))
    gap = _gap_from_weights(pi, w, tol)
    return BoundReport(
        J=j, J_surr=j_surr, J_gcsl=j_gcsl, relabeled_loglik=loglik, alpha=alpha, C2=c2,
        penalty=penalty, slack_i=slack_i, slack_ii=slack_ii, slack_iii=slack_iii,
        check_i=bool(slack_i >= -tol), check_ii=bool(slack_ii >= -tol), check_iii=bool(slack_iii <= tol),
        policy_valid=pi.is_valid() and pi_old.is_valid(),
        P_wrong=gap.P_wrong, tv_right_wrong=gap.tv_right_wrong, gap=gap.gap, gap_bound=gap.gap_bound,
        wrong_term=gap.wrong_term, gap_degenerate=gap.degenerate, gap_ok=gap.holds,
    )


# ---------------------------------------------------------------------------
# optimal policies


def relabel_optimal_policy(pi_old: TabularDistributionPolicy, mdp: FiniteMdp,
                           budget: int = DEFAULT_BUDGET) -> TabularDistributionPolicy:
    """Action distribution at (s, t) among pi_old trajectories that end at g; uniform if undefined."""
    _require_full_support(pi_old)
    w = _old_weights(pi_old, mdp, budget)
    paths = w.paths
    T, S, A = mdp.horizon, mdp.state_count, mdp.action_count
    counts = np.zeros((T + 1, S, S, A))
    marginal = w.marginal
    for t in range(T):
        np.add.at(counts, (T - t, paths.states[:, t], paths.final, paths.actions[:, t]), marginal)
    total = counts.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        table = np.where(total > 0, counts / total, 1.0 / A)
    return TabularDistributionPolicy(table)


def optimal_reach_policy(mdp: FiniteMdp):
    """Backward DP for the last-step reaching objective on deterministic dynamics.

    V_0(s, g) = 1[s = g] and V_h(s, g) = max_a V_{h-1}(next(s, a), g); the
    policy takes the lowest-index maximiser. Returns ``(policy, J_star, V)``.
    """
    if not mdp.deterministic:
        raise ContractViolation("optimal_reach_policy requires deterministic dynamics")
    nxt = mdp.next_state
    S, A, T = mdp.state_count, mdp.action_count, mdp.horizon
    V = np.zeros((T + 1, S, S))
    V[0] = np.eye(S)
    table = np.full((T + 1, S, S, A), 1.0 / A)
    for h in range(1, T + 1):
        q = V[h - 1][nxt]  # (S, A, G)
        best = np.argmax(q, axis=1)  # (S, G)
        V[h] = np.max(q, axis=1)
        table[h] = 0.0
        s_idx, g_idx = np.meshgrid(np.arange(S), np.arange(S), indexing="ij")
        table[h, s_idx, g_idx, best] = 1.0
    j_star = float(mdp.goal_distribution @ (mdp.initial @ V[T]))
    return TabularDistributionPolicy(table), j_star, V


def perturb_policy(policy: TabularDistributionPolicy, eps: float) -> TabularDistributionPolicy:
    """Move ``min(eps, 1 - p_min)`` of every row's mass onto its least likely action.

    Mass is taken from the other actions in order of decreasing probability
    (the argmax first), so each row ends up exactly that far in total variation.
    """
    if not 0.0 <= eps <= 1.0:
        raise ContractViolation(f"eps must lie in [0, 1], got {eps}")
    table = policy.table.copy()
    flat = table.reshape(-1, table.shape[-1])
    for row in flat:
        b = int(np.argmin(row))
        move = min(eps, 1.0 - row[b])
        left = move
        for a in np.argsort(-row, kind="stable"):
            if a == b or left <= 0:
                continue
            take = min(row[a], left)
            row[a] -= take
            left -= take
        row[b] += move - left
    return TabularDistributionPolicy(table)


@dataclass
class EpsilonCheck:
    eps: float
    realized_tv: float
    J: float
    gap: float
    bound: float
    holds: bool


@dataclass
class Theorem42Report:
    J_star: float
    J_relabel_optimal: float
    optimal_gap: float
    checks: list[EpsilonCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return abs(self.optimal_gap) <= TOL and all(c.holds for c in self.checks)


def check_theorem_4_2(mdp: FiniteMdp, pi_old: TabularDistributionPolicy, epsilons=(0.0, 0.05, 0.1, 0.25),
                      budget: int = DEFAULT_BUDGET, tol: float = TOL) -> Theorem42Report:
    """With deterministic dynamics, perturbing the relabel-optimal policy by eps costs at most eps * T."""
    if not mdp.deterministic:
        raise ContractViolation("this check assumes deterministic dynamics")
    _require_full_support(pi_old)
    target = relabel_optimal_policy(pi_old, mdp, budget)
    _, j_star, _ = optimal_reach_policy(mdp)
    j_target = exact_J(target, mdp)
    report = Theorem42Report(j_star, j_target, j_star - j_target)
    for eps in epsilons:
        pert = perturb_policy(target, eps)
        j = exact_J(pert, mdp)
        gap = j_star - j
        bound = eps * mdp.horizon
        report.checks.append(EpsilonCheck(eps, tv_alpha(pert, target), j, gap, bound, bool(gap <= bound + tol)))
    return report


# ---------------------------------------------------------------------------
# suites


def default_mdps() -> dict[str, FiniteMdp]:
    return {"chain4": chain(4, horizon=3).mdp, "grid3": open_grid(3, horizon=4).mdp}


def theorem_4_1_suite(n_instances: int = 100, seed: int = 0, mdp: FiniteMdp | None = None,
                      corrupt_instance: int | None = None) -> list[BoundReport]:
    """Random full-support (pi, pi_old) pairs; instance ``k`` uses rng stream (seed, k).

    ``corrupt_instance`` breaks one row of that instance's ``pi`` to exercise
    the failure path.
    """
    mdp = chain(4, horizon=3).mdp if mdp is None else mdp
    out = []
    for k in range(n_instances):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(k,)))
        pi = random_policy(mdp, rng)
        pi_old = random_policy(mdp, rng)
        if corrupt_instance == k:
            pi.table[1, 0, 0] = 2.0 * pi.table[1, 0, 0] + 0.5
        rep = check_theorem_4_1(pi, pi_old, mdp)
        rep.instance = k
        out.append(rep)
    return out


def theorem_4_2_suite(epsilons=(0.0, 0.05, 0.1, 0.25)) -> dict[str, Theorem42Report]:
    """Uniform data-collection policy on each default deterministic MDP."""
    out = {}
    for name, mdp in default_mdps().items():
        pi_old = TabularDistributionPolicy.uniform(mdp.state_count, mdp.action_count, mdp.horizon)
        out[name] = check_theorem_4_2(mdp, pi_old, epsilons)
    return out

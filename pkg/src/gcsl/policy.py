"""Goal-conditioned categorical policies and their optimiser.

Two policy classes share one batched interface, ``probs_batch(states, goals,
horizons)``:

* :class:`TabularPolicy` keeps smoothed action counts per (state, goal[, h])
  cell; its probabilities are the closed-form maximum-likelihood fit.
* :class:`MlpPolicy` is a ReLU network with hand-written backpropagation.

A policy is *time-varying* when it also conditions on the remaining horizon.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ContractViolation

MAGIC = b"GCSL1"
TABULAR_MAGIC = "GCSL-tabular-1"


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def encode_horizon(h: int, horizon_max: int) -> np.ndarray:
    """Thermometer code of the remaining horizon: ones in positions [0, h)."""
    if not 0 <= h <= horizon_max:
        raise ContractViolation(f"horizon {h} outside [0, {horizon_max}]")
    out = np.zeros(horizon_max)
    out[:h] = 1.0
    return out


def encode_horizons(h: np.ndarray, horizon_max: int) -> np.ndarray:
    h = np.asarray(h, dtype=np.int64)
    if np.any(h < 0) or np.any(h > horizon_max):
        raise ContractViolation(f"horizons outside [0, {horizon_max}]")
    return (np.arange(horizon_max)[None, :] < h[:, None]).astype(np.float64)


def _check_horizon(policy, horizons):
    if policy.time_varying and horizons is None:
        raise ContractViolation("time-varying policy needs the remaining horizon")
    if not policy.time_varying and horizons is not None:
        raise ContractViolation("time-invariant policy does not take a horizon")


# ---------------------------------------------------------------------------
# tabular


class TabularPolicy:
    """Smoothed count table over discrete (state, goal[, horizon]) cells.

    ``pi(a | cell) = (count + smoothing) / sum(count + smoothing)``; a cell with
    no mass at all (possible only with ``smoothing == 0``) is uniform.
    """

    def __init__(self, n_states: int, n_actions: int, n_goals: int | None = None,
                 horizon_max: int | None = None, smoothing: float = 0.1):
        if smoothing < 0:
            raise ContractViolation(f"smoothing must be >= 0, got {smoothing}")
        self.n_states = n_states
        self.n_goals = n_states if n_goals is None else n_goals
        self.n_actions = n_actions
        self.horizon_max = horizon_max
        self.smoothing = float(smoothing)
        if horizon_max is None:
            shape = (n_states, self.n_goals, n_actions)
        else:
            shape = (horizon_max + 1, n_states, self.n_goals, n_actions)
        self.counts = np.zeros(shape)

    @property
    def time_varying(self) -> bool:
        return self.horizon_max is not None

    @property
    def action_count(self) -> int:
        return self.n_actions

    def _cells(self, states, goals, horizons):
        s = np.asarray(states, dtype=np.int64)
        g = np.asarray(goals, dtype=np.int64)
        if s.shape != g.shape:
            raise ContractViolation("states and goals must have matching shapes")
        if np.any((s < 0) | (s >= self.n_states)) or np.any((g < 0) | (g >= self.n_goals)):
            raise ContractViolation("state or goal id out of range for this table")
        if self.time_varying:
            h = np.asarray(horizons, dtype=np.int64)
            if np.any((h < 0) | (h > self.horizon_max)):
                raise ContractViolation(f"horizon outside [0, {self.horizon_max}]")
            return (h, s, g)
        return (s, g)

    def probs_batch(self, states, goals, horizons=None) -> np.ndarray:
        _check_horizon(self, horizons)
        c = self.counts[self._cells(states, goals, horizons)] + self.smoothing
        total = c.sum(axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            p = c / total
        return np.where(total > 0, p, 1.0 / self.n_actions)

    def _flat(self, states, goals, horizons, actions) -> np.ndarray:
        cells = self._cells(states, goals, horizons)
        a = np.asarray(actions, dtype=np.int64)
        if np.any((a < 0) | (a >= self.n_actions)):
            raise ContractViolation("action index out of range")
        return np.ravel_multi_index((*cells, a), self.counts.shape)

    def fit(self, states, goals, actions, horizons=None, weights=None) -> TabularPolicy:
        """Add (weighted) observations; the table stays the exact likelihood maximiser."""
        _check_horizon(self, horizons)
        idx = np.atleast_1d(self._flat(states, goals, horizons, actions))
        w = np.ones(len(idx)) if weights is None else np.broadcast_to(np.asarray(weights, float), idx.shape)
        flat = self.counts.reshape(-1)
        kernels.scatter_add(flat, idx.astype(np.int64), np.ascontiguousarray(w, dtype=np.float64))
        return self

    def unfit(self, states, goals, actions, horizons=None, weights=None) -> TabularPolicy:
        """Remove observations previously added with :meth:`fit`."""
        _check_horizon(self, horizons)
        idx = np.atleast_1d(self._flat(states, goals, horizons, actions))
        w = np.ones(len(idx)) if weights is None else np.broadcast_to(np.asarray(weights, float), idx.shape)
        flat = self.counts.reshape(-1)
        kernels.scatter_add(flat, idx.astype(np.int64), -np.ascontiguousarray(w, dtype=np.float64))
        # cancellation may leave tiny negative residues
        np.maximum(self.counts, 0.0, out=self.counts)
        return self

    def save(self, path) -> None:
        meta = np.array([self.n_states, self.n_goals, self.n_actions,
                         -1 if self.horizon_max is None else self.horizon_max])
        with open(path, "wb") as fh:
            np.savez(fh, magic=np.array(TABULAR_MAGIC), meta=meta,
                     smoothing=np.array(self.smoothing), counts=self.counts)

    @classmethod
    def load(cls, path) -> TabularPolicy:
        with np.load(path) as data:
            if str(data["magic"]) != TABULAR_MAGIC:
                raise ContractViolation(f"{path} is not a tabular policy checkpoint")
            n_states, n_goals, n_actions, hmax = (int(v) for v in data["meta"])
            pol = cls(n_states, n_actions, n_goals, None if hmax < 0 else hmax, float(data["smoothing"]))
            pol.counts[...] = data["counts"]
        return pol


def fit_tabular(policy: TabularPolicy, examples) -> TabularPolicy:
    """Count every example into ``policy``.

    ``examples`` is either an iterable of objects with ``state``, ``action``,
    ``goal`` and ``horizon`` attributes or a batch with the plural array fields.
    """
    if hasattr(examples, "states"):
        s, g, a, h = examples.states, examples.goals, examples.actions, examples.horizons
    else:
        rows = list(examples)
        if not rows:
            return policy
        s = np.array([e.state for e in rows])
        g = np.array([e.goal for e in rows])
        a = np.array([e.action for e in rows])
        h = np.array([e.horizon for e in rows])
    return policy.fit(s, g, a, h if policy.time_varying else None)


# ---------------------------------------------------------------------------
# MLP


class MlpPolicy:
    """ReLU MLP from concatenated (state, goal[, horizon code]) features to action logits.

    ``encoder`` maps raw environment states to feature rows (for example a
    one-hot code for finite environments); without one, states are used as is.
    """

    def __init__(self, state_dim: int, n_actions: int, hidden=(400, 300), goal_dim: int | None = None,
                 horizon_max: int | None = None, rng: np.random.Generator | None = None,
                 init: str = "he", encoder=None):
        self.state_dim = state_dim
        self.goal_dim = state_dim if goal_dim is None else goal_dim
        self.n_actions = n_actions
        self.hidden = tuple(int(h) for h in hidden)
        self.horizon_max = horizon_max
        self.encoder = encoder
        self.sizes = (self.input_dim, *self.hidden, n_actions)
        self.params: list[np.ndarray] = []
        if rng is None:
            rng = np.random.default_rng(0)
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            if init == "zeros":
                w = np.zeros((fan_in, fan_out))
            elif init == "he":
                limit = np.sqrt(6.0 / fan_in)
                w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            else:
                raise ContractViolation(f"unknown init {init!r}")
            self.params += [w, np.zeros(fan_out)]

    @property
    def input_dim(self) -> int:
        return self.state_dim + self.goal_dim + (self.horizon_max or 0)

    @property
    def time_varying(self) -> bool:
        return self.horizon_max is not None

    @property
    def action_count(self) -> int:
        return self.n_actions

    def inputs(self, states, goals, horizons=None) -> np.ndarray:
        _check_horizon(self, horizons)
        if self.encoder is not None:
            s, g = self.encoder(states), self.encoder(goals)
        else:
            s = np.atleast_2d(np.asarray(states, dtype=np.float64))
            g = np.atleast_2d(np.asarray(goals, dtype=np.float64))
        if s.shape[1] != self.state_dim or g.shape[1] != self.goal_dim or len(s) != len(g):
            raise ContractViolation(
                f"expected state/goal features of width {self.state_dim}/{self.goal_dim}, "
                f"got {s.shape}/{g.shape}")
        parts = [s, g]
        if self.time_varying:
            parts.append(encode_horizons(np.atleast_1d(horizons), self.horizon_max))
        return np.concatenate(parts, axis=1)

    def _forward(self, x):
        acts = [x]
        pre = []
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            z = acts[-1] @ self.params[2 * i] + self.params[2 * i + 1]
            pre.append(z)
            if i < n_layers - 1:
                acts.append(np.maximum(z, 0.0))
        return acts, pre

    def logits_batch(self, states, goals, horizons=None) -> np.ndarray:
        acts, pre = self._forward(self.inputs(states, goals, horizons))
        return pre[-1]

    def probs_batch(self, states, goals, horizons=None) -> np.ndarray:
        return softmax(self.logits_batch(states, goals, horizons))

    def loss_and_grad(self, states, actions, goals, horizons=None):
        a = np.asarray(actions, dtype=np.int64)
        if a.ndim != 1 or len(a) == 0:
            raise ContractViolation("loss needs a non-empty batch")
        if np.any((a < 0) | (a >= self.n_actions)):
            raise ContractViolation("action index out of range")
        x = self.inputs(states, goals, horizons)
        acts, pre = self._forward(x)
        n = len(a)
        total, d = kernels.softmax_xent(np.ascontiguousarray(pre[-1]), a)
        d /= n
        grads = [None] * len(self.params)
        for i in reversed(range(len(pre))):
            grads[2 * i] = acts[i].T @ d
            grads[2 * i + 1] = d.sum(axis=0)
            if i > 0:
                d = (d @ self.params[2 * i].T) * (pre[i - 1] > 0)
        return total / n, grads

    def copy(self) -> MlpPolicy:
        other = MlpPolicy.__new__(MlpPolicy)
        other.__dict__.update(self.__dict__)
        other.params = [p.copy() for p in self.params]
        return other

    def save(self, path) -> None:
        """Binary checkpoint: magic, layer sizes, horizon length, float64 parameters."""
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(self.sizes)))
            fh.write(struct.pack(f"<{len(self.sizes)}I", *self.sizes))
            fh.write(struct.pack("<I", self.state_dim))
            fh.write(struct.pack("<I", self.horizon_max or 0))
            for p in self.params:
                fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes(order="C"))

    @classmethod
    def load(cls, path, encoder=None) -> MlpPolicy:
        raw = Path(path).read_bytes()
        if raw[:5] != MAGIC:
            raise ContractViolation(f"{path} is not a GCSL1 checkpoint")
        off = 5
        (n_sizes,) = struct.unpack_from("<I", raw, off)
        off += 4
        sizes = struct.unpack_from(f"<{n_sizes}I", raw, off)
        off += 4 * n_sizes
        state_dim, hmax = struct.unpack_from("<II", raw, off)
        off += 8
        goal_dim = sizes[0] - state_dim - hmax
        pol = cls(state_dim, sizes[-1], hidden=sizes[1:-1], goal_dim=goal_dim,
                  horizon_max=hmax or None, init="zeros", encoder=encoder)
        for i, p in enumerate(pol.params):
            count = p.size
            vals = np.frombuffer(raw, dtype="<f8", count=count, offset=off)
            pol.params[i] = vals.reshape(p.shape).astype(np.float64)
            off += 8 * count
        if off != len(raw):
            raise ContractViolation(f"{path}: {len(raw) - off} trailing bytes")
        return pol


def nll_loss_and_gradient(policy: MlpPolicy, batch):
    """Mean negative log-likelihood of ``batch`` and its exact parameter gradient."""
    if len(batch.actions) == 0:
        raise ContractViolation("loss needs a non-empty batch")
    horizons = batch.horizons if policy.time_varying else None
    return policy.loss_and_grad(batch.states, batch.actions, batch.goals, horizons)


def batch_nll(policy, states, actions, goals, horizons=None) -> float:
    """Mean negative log-likelihood for any policy exposing ``probs_batch``."""
    p = policy.probs_batch(states, goals, horizons if policy.time_varying else None)
    a = np.asarray(actions, dtype=np.int64)
    with np.errstate(divide="ignore"):
        return float(-np.mean(np.log(p[np.arange(len(a)), a])))


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class Adam:
    """Adam with bias correction; ``step`` updates the parameter arrays in place."""

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        if len(params) != len(grads):
            raise ContractViolation(f"{len(params)} parameters but {len(grads)} gradients")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        for p, g, m in zip(params, grads, self.m):
            if p.shape != np.shape(g) or p.shape != m.shape:
                raise ContractViolation(f"shape mismatch: param {p.shape}, grad {np.shape(g)}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return params


def adam_step(adam: Adam, params, gradient):
    return adam.step(params, gradient)


# ---------------------------------------------------------------------------
# single-query helpers


def _single(policy, state, goal, horizon):
    horizons = None if horizon is None else np.array([horizon])
    if isinstance(policy, MlpPolicy) and policy.encoder is None:
        return policy.probs_batch(np.asarray(state, float)[None], np.asarray(goal, float)[None], horizons)[0]
    return policy.probs_batch(np.array([state]), np.array([goal]), horizons)[0]


def action_probabilities(policy, state, goal, horizon=None) -> np.ndarray:
    return _single(policy, state, goal, horizon)


def sample_action(policy, state, goal, horizon, rng: np.random.Generator) -> int:
    p = action_probabilities(policy, state, goal, horizon)
    return int(kernels.categorical_sample(p[None], rng.random(1))[0])


def greedy_action(policy, state, goal, horizon=None) -> int:
    # np.argmax returns the first maximum, i.e. ties go to the lowest index
    return int(np.argmax(action_probabilities(policy, state, goal, horizon)))

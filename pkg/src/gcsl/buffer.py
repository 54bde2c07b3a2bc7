"""Trajectory storage with on-the-fly hindsight relabelling.

Trajectories are stored whole; examples ``(s_t, a_t, s_t', t' - t)`` are
materialised only when a batch is sampled.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from .errors import ContractViolation, NotReady


@dataclass
class Trajectory:
    """``states`` has length T+1 and ``actions`` length T."""

    states: np.ndarray
    actions: np.ndarray
    commanded_goal: Any
    seed: int = 0
    iteration: int = 0

    def __post_init__(self):
        self.states = np.asarray(self.states)
        self.actions = np.asarray(self.actions)
        if self.actions.ndim != 1 or len(self.actions) < 1:
            raise ContractViolation("a trajectory needs a 1-D, non-empty action sequence")
        if not np.issubdtype(self.actions.dtype, np.integer):
            raise ContractViolation("actions must be integer indices")
        if len(self.states) != len(self.actions) + 1:
            raise ContractViolation(
                f"{len(self.states)} states for {len(self.actions)} actions; expected T+1 states")
        self.actions = self.actions.astype(np.int64)

    @property
    def horizon(self) -> int:
        return len(self.actions)

    @property
    def final_state(self):
        return self.states[-1]


@dataclass(frozen=True)
class RelabeledExample:
    state: Any
    action: int
    goal: Any
    horizon: int


@dataclass
class Batch:
    """Structure-of-arrays batch of relabelled examples with their provenance."""

    states: np.ndarray
    actions: np.ndarray
    goals: np.ndarray
    horizons: np.ndarray
    traj_index: np.ndarray
    t: np.ndarray
    t_goal: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)

    def examples(self) -> Iterator[RelabeledExample]:
        for s, a, g, h in zip(self.states, self.actions, self.goals, self.horizons):
            yield RelabeledExample(s, int(a), g, int(h))


@dataclass(frozen=True)
class BufferConfig:
    """``mode`` is ``full``, ``limited`` (needs ``h_max``) or ``on_policy`` (needs ``window_transitions``)."""

    mode: str = "full"
    h_max: int | None = None
    window_transitions: int | None = None
    capacity: int | None = None

    def __post_init__(self):
        if self.mode not in ("full", "limited", "on_policy"):
            raise ContractViolation(f"unknown buffer mode {self.mode!r}")
        if self.mode == "limited" and (self.h_max is None or self.h_max < 1):
            raise ContractViolation("limited mode needs h_max >= 1")
        if self.mode == "on_policy" and (self.window_transitions is None or self.window_transitions < 1):
            raise ContractViolation("on_policy mode needs a positive window_transitions")
        if self.capacity is not None and self.capacity < 1:
            raise ContractViolation("capacity must be positive")

    @classmethod
    def full(cls, capacity: int | None = None) -> BufferConfig:
        return cls("full", capacity=capacity)

    @classmethod
    def limited(cls, h_max: int = 3) -> BufferConfig:
        return cls("limited", h_max=h_max)

    @classmethod
    def on_policy(cls, window_transitions: int = 10000) -> BufferConfig:
        return cls("on_policy", window_transitions=window_transitions)


class ReplayBuffer:
    """Stores equal-length trajectories in growable arrays.

    ``append`` returns the trajectories evicted to honour the on-policy window
    or the capacity, oldest first.
    """

    def __init__(self, config: BufferConfig | None = None):
        self.config = config or BufferConfig()
        self.horizon: int | None = None
        self._trajs: list[Trajectory] = []
        self._states: np.ndarray | None = None
        self._actions: np.ndarray | None = None
        self._start = 0
        self.appended = 0

    def __len__(self) -> int:
        return len(self._trajs)

    @property
    def transitions(self) -> int:
        return len(self._trajs) * (self.horizon or 0)

    @property
    def trajectories(self) -> list[Trajectory]:
        return list(self._trajs)

    @property
    def h_max(self) -> int | None:
        return self.config.h_max if self.config.mode == "limited" else None

    def _grow(self, traj: Trajectory) -> None:
        n = len(self._trajs)
        if self._states is None:
            cap = 16
            self._states = np.empty((cap, *traj.states.shape), dtype=traj.states.dtype)
            self._actions = np.empty((cap, traj.horizon), dtype=np.int64)
            self._start = 0
            return
        if self._start + n < len(self._states):
            return
        if self._start > 0 and n < len(self._states) // 2:
            # reclaim space freed by evictions before growing
            self._states[:n] = self._states[self._start:self._start + n]
            self._actions[:n] = self._actions[self._start:self._start + n]
            self._start = 0
            return
        cap = 2 * len(self._states)
        states = np.empty((cap, *self._states.shape[1:]), dtype=self._states.dtype)
        actions = np.empty((cap, self._actions.shape[1]), dtype=np.int64)
        states[:n] = self._states[self._start:self._start + n]
        actions[:n] = self._actions[self._start:self._start + n]
        self._states, self._actions, self._start = states, actions, 0

    def append(self, traj: Trajectory) -> list[Trajectory]:
        if not isinstance(traj, Trajectory):
            raise ContractViolation(f"expected a Trajectory, got {type(traj).__name__}")
        if self.horizon is None:
            if self.config.mode == "on_policy" and self.config.window_transitions < traj.horizon:
                raise ContractViolation("on-policy window must hold at least one trajectory")
            self.horizon = traj.horizon
        elif traj.horizon != self.horizon:
            raise ContractViolation(f"trajectory horizon {traj.horizon} != buffer horizon {self.horizon}")
        if self._states is not None and traj.states.shape != self._states.shape[1:]:
            raise ContractViolation(f"state array shape {traj.states.shape} != {self._states.shape[1:]}")
        self._grow(traj)
        slot = self._start + len(self._trajs)
        self._states[slot] = traj.states
        self._actions[slot] = traj.actions
        self._trajs.append(traj)
        self.appended += 1

        limit = None
        if self.config.mode == "on_policy":
            limit = self.config.window_transitions // self.horizon
        if self.config.capacity is not None:
            limit = self.config.capacity if limit is None else min(limit, self.config.capacity)
        evicted: list[Trajectory] = []
        if limit is not None and len(self._trajs) > limit:
            k = len(self._trajs) - limit
            evicted = self._trajs[:k]
            del self._trajs[:k]
            self._start += k
        return evicted

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """Views of the stored (states, actions) arrays, oldest first."""
        if not self._trajs:
            raise NotReady("replay buffer is empty")
        sl = slice(self._start, self._start + len(self._trajs))
        return self._states[sl], self._actions[sl]

    def sample_indices(self, batch_size: int, rng: np.random.Generator):
        """Trajectory, start and goal indices for ``batch_size`` independent draws."""
        if not self._trajs:
            raise NotReady("replay buffer is empty")
        if batch_size < 1:
            raise ContractViolation("batch_size must be positive")
        horizon = self.horizon
        i = rng.integers(0, len(self._trajs), size=batch_size)
        t = rng.integers(0, horizon, size=batch_size)
        top = np.full(batch_size, horizon) if self.h_max is None else np.minimum(t + self.h_max, horizon)
        tg = rng.integers(t + 1, top + 1)
        return i, t, tg

    def sample_batch(self, batch_size: int, rng: np.random.Generator) -> Batch:
        i, t, tg = self.sample_indices(batch_size, rng)
        rows = self._start + i
        return Batch(
            states=self._states[rows, t],
            actions=self._actions[rows, t],
            goals=self._states[rows, tg],
            horizons=tg - t,
            traj_index=i,
            t=t,
            t_goal=tg,
        )


def relabel_all(traj: Trajectory, h_max: int | None = None, include_t0: bool = True) -> list[RelabeledExample]:
    """Every hindsight example of ``traj``: goal ``s_{t+h}`` with ``h >= 1`` and ``t + h <= T``."""
    T = traj.horizon
    first = 0 if include_t0 else 1
    out = []
    for t in range(first, T):
        top = T if h_max is None else min(t + h_max, T)
        for tg in range(t + 1, top + 1):
            out.append(RelabeledExample(traj.states[t], int(traj.actions[t]), traj.states[tg], tg - t))
    return out


# ---------------------------------------------------------------------------
# plain-text trajectory log
#
# One trajectory per line, four tab-separated fields:
#   seed    commanded_goal    states    actions
# A vector is written as comma-separated numbers; the states field separates
# time steps with ';'. Finite-environment states are bare integers. Blank
# lines and lines starting with '#' are ignored.

LOG_HEADER = "# gcsl trajectory log v1: seed<TAB>goal<TAB>states(;-separated)<TAB>actions(,-separated)"


def _fmt_vec(v) -> str:
    v = np.atleast_1d(np.asarray(v))
    if np.issubdtype(v.dtype, np.integer):
        return ",".join(str(int(x)) for x in v)
    return ",".join(repr(float(x)) for x in v)


def format_trajectory(traj: Trajectory) -> str:
    states = ";".join(_fmt_vec(s) for s in traj.states)
    actions = ",".join(str(int(a)) for a in traj.actions)
    return f"{int(traj.seed)}\t{_fmt_vec(traj.commanded_goal)}\t{states}\t{actions}"


def _parse_vec(text: str):
    parts = text.split(",")
    if all(p.strip().lstrip("-").isdigit() for p in parts):
        vals = np.array([int(p) for p in parts], dtype=np.int64)
    else:
        vals = np.array([float(p) for p in parts], dtype=np.float64)
    return vals


def parse_trajectory(line: str) -> Trajectory:
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 4:
        raise ValueError(f"expected 4 tab-separated fields, got {len(fields)}")
    seed = int(fields[0])
    goal = _parse_vec(fields[1])
    rows = [_parse_vec(s) for s in fields[2].split(";")]
    if len({len(r) for r in rows}) != 1:
        raise ValueError("states have inconsistent dimensions")
    states = np.stack(rows)
    if states.shape[1] == 1 and np.issubdtype(states.dtype, np.integer):
        states = states[:, 0]
        goal = int(goal[0])
    actions = np.array([int(a) for a in fields[3].split(",")], dtype=np.int64)
    return Trajectory(states, actions, goal, seed=seed, iteration=-1)


def write_trajectory_log(path, trajs) -> int:
    lines = [LOG_HEADER] + [format_trajectory(t) for t in trajs]
    Path(path).write_text("\n".join(lines) + "\n")
    return len(lines) - 1


def read_trajectory_log(path) -> list[Trajectory]:
    """Parse a trajectory log; malformed lines raise ValueError naming the line number."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                out.append(parse_trajectory(line))
            except (ValueError, ContractViolation) as exc:
                raise ValueError(f"{path}:{lineno}: malformed trajectory record: {exc}") from None
    return out

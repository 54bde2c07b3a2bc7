"""Goal-reaching environments.

Three are built in:

* ``four-rooms``: continuous 2D navigation in the unit square split into four
  rooms by two thin walls, each wall half having one door.
* ``grid-rooms``: the classic 11x11 four-room gridworld.
* ``chain``: a short chain with left/stay/right actions.

The finite ones are thin wrappers around :class:`FiniteMdp`, which the exact
oracles consume directly. Environments hold no episode state: ``step`` is a
pure function of ``(state, action)`` (plus ``rng`` for stochastic tables).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, ContractViolation

_TOL = 1e-12


@dataclass(frozen=True)
class EnvSpec:
    horizon: int = 50
    action_count: int = 9
    state_dim: int = 2
    goal_threshold: float = 0.1

    def __post_init__(self):
        if self.horizon < 1:
            raise ContractViolation(f"horizon must be >= 1, got {self.horizon}")
        if self.action_count < 2:
            raise ContractViolation(f"action_count must be >= 2, got {self.action_count}")
        if self.state_dim < 1:
            raise ContractViolation(f"state_dim must be >= 1, got {self.state_dim}")


def action_grid(dim: int) -> np.ndarray:
    """The product grid {-1, 0, +1}^dim in lexicographic order, shape (3**dim, dim)."""
    return np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=dim)))


def _check_actions(actions, count: int) -> np.ndarray:
    a = np.asarray(actions)
    if not np.issubdtype(a.dtype, np.integer):
        if not np.all(np.equal(np.mod(a, 1), 0)):
            raise ContractViolation(f"action indices must be integers, got {actions!r}")
        a = a.astype(np.int64)
    if np.any(a < 0) or np.any(a >= count):
        raise ContractViolation(f"action index out of range [0, {count}): {actions!r}")
    return a


# ---------------------------------------------------------------------------
# continuous four rooms


class FourRooms:
    """Point agent in [0, 1]^2 with walls along x = 0.5 and y = 0.5.

    Each action sets a one-step displacement ``step_scale * grid_vector``, so
    the position alone is a Markov state. Walls have thickness
    ``wall_thickness`` and block motion by clipping the agent to the wall face.
    """

    name = "four-rooms"
    is_finite = False
    deterministic = True

    def __init__(
        self,
        horizon: int = 50,
        step_scale: float = 0.05,
        door_width: float = 0.12,
        wall_thickness: float = 0.02,
        goal_threshold: float = 0.1,
        start=(0.25, 0.25),
    ):
        if not 0.0 < door_width < 0.5:
            raise ContractViolation(f"door_width must lie in (0, 0.5), got {door_width}")
        if not 0.0 < wall_thickness < 0.5:
            raise ContractViolation(f"wall_thickness must lie in (0, 0.5), got {wall_thickness}")
        if step_scale <= 0.0:
            raise ContractViolation(f"step_scale must be positive, got {step_scale}")
        self.spec = EnvSpec(horizon=horizon, action_count=9, state_dim=2, goal_threshold=goal_threshold)
        self.step_scale = float(step_scale)
        self.door_width = float(door_width)
        self.wall_thickness = float(wall_thickness)
        self.wall_lo = 0.5 - wall_thickness / 2
        self.wall_hi = 0.5 + wall_thickness / 2
        self.door_centers = np.array([0.25, 0.75])
        self.door_half = door_width / 2
        self.start = np.asarray(start, dtype=np.float64)
        self.action_vectors = action_grid(2)
        if not self.is_free(self.start[None])[0]:
            raise ContractViolation(f"start {tuple(self.start)} lies inside a wall")

    @property
    def horizon(self) -> int:
        return self.spec.horizon

    @property
    def action_count(self) -> int:
        return self.spec.action_count

    @property
    def goal_threshold(self) -> float:
        return self.spec.goal_threshold

    def action_grid(self) -> np.ndarray:
        return self.action_vectors.copy()

    def reset(self, rng=None) -> np.ndarray:
        return self.start.copy()

    def step(self, state, action, rng=None) -> np.ndarray:
        state = np.asarray(state, dtype=np.float64)
        if state.shape != (2,):
            raise ContractViolation(f"four-rooms state must have shape (2,), got {state.shape}")
        return self.step_batch(state[None], np.array([action]))[0]

    def step_batch(self, states, actions, rng=None, u=None) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        a = _check_actions(actions, self.action_count)
        delta = self.step_scale * self.action_vectors[a]
        return kernels.four_rooms_move(
            np.ascontiguousarray(states), np.ascontiguousarray(delta),
            self.wall_lo, self.wall_hi, self.door_centers, self.door_half,
        )

    def is_free(self, points) -> np.ndarray:
        """True where a point lies in free space (walls are closed at their faces)."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        x, y = p[:, 0], p[:, 1]
        inside = (x >= 0) & (x <= 1) & (y >= 0) & (y <= 1)
        x_door = np.zeros(len(p), dtype=bool)
        y_door = np.zeros(len(p), dtype=bool)
        for c in self.door_centers:
            x_door |= np.abs(x - c) <= self.door_half + kernels.DOOR_TOL
            y_door |= np.abs(y - c) <= self.door_half + kernels.DOOR_TOL
        in_vwall = (x > self.wall_lo) & (x < self.wall_hi) & ~y_door
        in_hwall = (y > self.wall_lo) & (y < self.wall_hi) & ~x_door
        return inside & ~in_vwall & ~in_hwall

    def free_area_fractions(self) -> dict[str, float]:
        """Analytic share of free area per room and for the four doorways together."""
        side = self.wall_lo
        room = side * side
        doorways = 4 * self.wall_thickness * self.door_width
        total = 4 * room + doorways
        out = {name: room / total for name in ("bottom-left", "bottom-right", "top-left", "top-right")}
        out["doorways"] = doorways / total
        return out

    def region(self, points) -> np.ndarray:
        """0..3 for the rooms (bottom-left, bottom-right, top-left, top-right), 4 for doorways."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        x, y = p[:, 0], p[:, 1]
        out = np.full(len(p), 4, dtype=np.int64)
        lo, hi = self.wall_lo, self.wall_hi
        out[(x <= lo) & (y <= lo)] = 0
        out[(x >= hi) & (y <= lo)] = 1
        out[(x <= lo) & (y >= hi)] = 2
        out[(x >= hi) & (y >= hi)] = 3
        return out

    def sample_goal(self, rng: np.random.Generator) -> np.ndarray:
        return self.sample_goals(rng, 1)[0]

    def sample_goals(self, rng: np.random.Generator, n: int) -> np.ndarray:
        # rejection sampling keeps the distribution uniform over free space
        out = np.empty((n, 2))
        filled = 0
        while filled < n:
            cand = rng.random((max(2 * (n - filled), 8), 2))
            cand = cand[self.is_free(cand)][: n - filled]
            out[filled:filled + len(cand)] = cand
            filled += len(cand)
        return out

    def distance(self, state, goal) -> float:
        s = np.asarray(state, dtype=np.float64)
        g = np.asarray(goal, dtype=np.float64)
        if s.shape != g.shape:
            raise ContractViolation(f"state shape {s.shape} does not match goal shape {g.shape}")
        return float(np.sqrt(np.sum((s - g) ** 2)))

    def distance_batch(self, states, goals) -> np.ndarray:
        return np.sqrt(np.sum((np.asarray(states) - np.asarray(goals)) ** 2, axis=-1))

    def features(self, states) -> np.ndarray:
        return np.atleast_2d(np.asarray(states, dtype=np.float64))

    @property
    def feature_dim(self) -> int:
        return 2

    def state_array(self, n: int) -> np.ndarray:
        return np.empty((n, 2))


# ---------------------------------------------------------------------------
# finite MDPs


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """Tabular goal MDP.

    ``transition[s, a]`` is a distribution over next states, ``initial`` a
    distribution over start states and ``goal_distribution`` the goal prior
    over states.
    """

    transition: np.ndarray
    initial: np.ndarray
    horizon: int
    goal_distribution: np.ndarray

    def __post_init__(self):
        tr = np.asarray(self.transition, dtype=np.float64)
        if tr.ndim != 3 or tr.shape[0] != tr.shape[2]:
            raise ContractViolation(f"transition must have shape (S, A, S), got {tr.shape}")
        if np.any(tr < 0) or np.any(np.abs(tr.sum(axis=2) - 1.0) > _TOL):
            raise ContractViolation("transition rows must be distributions summing to 1")
        init = np.asarray(self.initial, dtype=np.float64)
        goals = np.asarray(self.goal_distribution, dtype=np.float64)
        for name, vec in (("initial", init), ("goal_distribution", goals)):
            if vec.shape != (tr.shape[0],):
                raise ContractViolation(f"{name} must have shape ({tr.shape[0]},), got {vec.shape}")
            if np.any(vec < 0) or abs(vec.sum() - 1.0) > _TOL:
                raise ContractViolation(f"{name} must be a distribution summing to 1")
        if self.horizon < 1:
            raise ContractViolation(f"horizon must be >= 1, got {self.horizon}")
        if tr.shape[1] < 2:
            raise ContractViolation("a finite MDP needs at least two actions")
        object.__setattr__(self, "transition", tr)
        object.__setattr__(self, "initial", init)
        object.__setattr__(self, "goal_distribution", goals)

    @classmethod
    def from_table(cls, next_state, start: int, horizon: int, goal_distribution=None) -> FiniteMdp:
        nxt = np.asarray(next_state, dtype=np.int64)
        n_states, n_actions = nxt.shape
        tr = np.zeros((n_states, n_actions, n_states))
        tr[np.arange(n_states)[:, None], np.arange(n_actions)[None, :], nxt] = 1.0
        init = np.zeros(n_states)
        init[start] = 1.0
        if goal_distribution is None:
            goal_distribution = np.full(n_states, 1.0 / n_states)
        return cls(tr, init, horizon, np.asarray(goal_distribution, dtype=np.float64))

    @property
    def state_count(self) -> int:
        return self.transition.shape[0]

    @property
    def action_count(self) -> int:
        return self.transition.shape[1]

    @property
    def deterministic(self) -> bool:
        return bool(np.all((self.transition == 0.0) | (self.transition == 1.0)))

    @property
    def next_state(self) -> np.ndarray:
        """(S, A) successor table; only defined for deterministic dynamics."""
        if not self.deterministic:
            raise ContractViolation("next_state table requires deterministic dynamics")
        return np.argmax(self.transition, axis=2)

    @property
    def start_state(self) -> int | None:
        nz = np.flatnonzero(self.initial)
        return int(nz[0]) if len(nz) == 1 else None

    def with_horizon(self, horizon: int) -> FiniteMdp:
        return FiniteMdp(self.transition, self.initial, horizon, self.goal_distribution)


class FiniteEnv:
    """Environment interface over a :class:`FiniteMdp`; states are integer ids."""

    is_finite = True

    def __init__(
        self,
        mdp: FiniteMdp,
        name: str,
        action_names: tuple[str, ...],
        action_vectors=None,
        coords=None,
        goal_threshold: float = 0.1,
    ):
        if len(action_names) != mdp.action_count:
            raise ContractViolation("one action name per action is required")
        self.mdp = mdp
        self.name = name
        self.action_names = tuple(action_names)
        self.action_vectors = None if action_vectors is None else np.asarray(action_vectors, dtype=np.float64)
        self.coords = None if coords is None else np.asarray(coords, dtype=np.int64)
        self.spec = EnvSpec(horizon=mdp.horizon, action_count=mdp.action_count, state_dim=1,
                            goal_threshold=goal_threshold)
        self.deterministic = mdp.deterministic
        self._next = mdp.next_state if self.deterministic else None
        self._cum = np.cumsum(mdp.transition, axis=2)

    @property
    def horizon(self) -> int:
        return self.spec.horizon

    @property
    def action_count(self) -> int:
        return self.spec.action_count

    @property
    def state_count(self) -> int:
        return self.mdp.state_count

    @property
    def goal_threshold(self) -> float:
        return self.spec.goal_threshold

    def action_grid(self) -> tuple[str, ...]:
        return self.action_names

    def reset(self, rng=None) -> int:
        start = self.mdp.start_state
        if start is not None:
            return start
        if rng is None:
            raise ContractViolation("stochastic initial state needs an rng")
        return int(kernels.categorical_sample(self.mdp.initial[None], rng.random(1))[0])

    def _check_states(self, states) -> np.ndarray:
        s = np.asarray(states)
        if np.any(s < 0) or np.any(s >= self.state_count):
            raise ContractViolation(f"state id out of range [0, {self.state_count}): {states!r}")
        return s.astype(np.int64)

    def step(self, state, action, rng=None) -> int:
        return int(self.step_batch(np.array([state]), np.array([action]), rng)[0])

    def step_batch(self, states, actions, rng=None, u=None) -> np.ndarray:
        """Step many states at once; stochastic tables draw from ``u`` or else ``rng``."""
        s = self._check_states(states)
        a = _check_actions(actions, self.action_count)
        if self._next is not None:
            return self._next[s, a]
        if u is None:
            if rng is None:
                raise ContractViolation("stochastic dynamics need an rng")
            u = rng.random(len(s))
        return kernels.categorical_sample(np.ascontiguousarray(self.mdp.transition[s, a]), np.asarray(u))

    def sample_goal(self, rng: np.random.Generator) -> int:
        return int(self.sample_goals(rng, 1)[0])

    def sample_goals(self, rng: np.random.Generator, n: int) -> np.ndarray:
        p = np.broadcast_to(self.mdp.goal_distribution, (n, self.state_count))
        return kernels.categorical_sample(np.ascontiguousarray(p), rng.random(n))

    def distance(self, state, goal) -> float:
        s, g = np.asarray(state), np.asarray(goal)
        if s.shape != g.shape:
            raise ContractViolation(f"state shape {s.shape} does not match goal shape {g.shape}")
        return float(np.any(s != g))

    def distance_batch(self, states, goals) -> np.ndarray:
        return (np.asarray(states) != np.asarray(goals)).astype(np.float64)

    def features(self, states) -> np.ndarray:
        s = np.atleast_1d(np.asarray(states, dtype=np.int64))
        out = np.zeros((len(s), self.state_count))
        out[np.arange(len(s)), s] = 1.0
        return out

    @property
    def feature_dim(self) -> int:
        return self.state_count

    def state_array(self, n: int) -> np.ndarray:
        return np.empty(n, dtype=np.int64)


CHAIN_ACTIONS = ("left", "stay", "right")
GRID_ACTIONS = ("up", "down", "left", "right", "stay")
GRID_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))

# classic four-room layout (interior of the 13x13 map); '#' is wall
FOUR_ROOMS_LAYOUT = (
    ".....#.....",
    ".....#.....",
    "...........",
    ".....#.....",
    ".....#.....",
    "#.####.....",
    ".....###.##",
    ".....#.....",
    ".....#.....",
    "...........",
    ".....#.....",
)


def chain(n_states: int = 4, horizon: int = 3, goal_threshold: float = 0.1) -> FiniteEnv:
    """Chain of ``n_states`` cells; actions left/stay/right, clipped at the ends; start 0."""
    if n_states < 2:
        raise ContractViolation("chain needs at least two states")
    nxt = np.empty((n_states, 3), dtype=np.int64)
    for s in range(n_states):
        nxt[s] = (max(s - 1, 0), s, min(s + 1, n_states - 1))
    mdp = FiniteMdp.from_table(nxt, start=0, horizon=horizon)
    return FiniteEnv(mdp, "chain", CHAIN_ACTIONS, action_vectors=[[-1.0], [0.0], [1.0]],
                     coords=np.arange(n_states)[:, None], goal_threshold=goal_threshold)


def grid_world(layout, start: tuple[int, int], horizon: int, name: str = "grid",
               goal_threshold: float = 0.1) -> FiniteEnv:
    """Deterministic gridworld over the free ('.') cells; bumping a wall or edge is a no-op."""
    rows = [str(r) for r in layout]
    cells = [(r, c) for r, row in enumerate(rows) for c, ch in enumerate(row) if ch == "."]
    ids = {rc: i for i, rc in enumerate(cells)}
    if tuple(start) not in ids:
        raise ContractViolation(f"start {start} is not a free cell")
    nxt = np.empty((len(cells), len(GRID_MOVES)), dtype=np.int64)
    for i, (r, c) in enumerate(cells):
        for a, (dr, dc) in enumerate(GRID_MOVES):
            nxt[i, a] = ids.get((r + dr, c + dc), i)
    mdp = FiniteMdp.from_table(nxt, start=ids[tuple(start)], horizon=horizon)
    env = FiniteEnv(mdp, name, GRID_ACTIONS, action_vectors=GRID_MOVES, coords=cells,
                    goal_threshold=goal_threshold)
    env.layout = tuple(rows)
    return env


def grid_rooms(horizon: int = 30, goal_threshold: float = 0.1) -> FiniteEnv:
    return grid_world(FOUR_ROOMS_LAYOUT, start=(8, 2), horizon=horizon, name="grid-rooms",
                      goal_threshold=goal_threshold)


def open_grid(size: int = 3, horizon: int = 4, goal_threshold: float = 0.1) -> FiniteEnv:
    """Wall-free ``size`` x ``size`` grid starting in the top-left corner."""
    return grid_world(["." * size] * size, start=(0, 0), horizon=horizon, name="grid-open",
                      goal_threshold=goal_threshold)


_BUILDERS = {
    "four-rooms": (FourRooms, {"horizon", "step_scale", "door_width", "wall_thickness", "goal_threshold"}),
    "grid-rooms": (grid_rooms, {"horizon", "goal_threshold"}),
    "chain": (chain, {"horizon", "n_states", "goal_threshold"}),
    "grid-open": (open_grid, {"horizon", "size", "goal_threshold"}),
}

ENV_NAMES = tuple(_BUILDERS)


def make_env(name: str, **params):
    """Build an environment by name; unknown names or parameters raise ConfigError."""
    try:
        builder, allowed = _BUILDERS[name]
    except KeyError:
        raise ConfigError(f"unknown environment {name!r}; choose from {', '.join(ENV_NAMES)}") from None
    bad = sorted(set(params) - allowed)
    if bad:
        raise ConfigError(f"environment {name!r} does not take parameter(s) {', '.join(bad)}")
    return builder(**params)

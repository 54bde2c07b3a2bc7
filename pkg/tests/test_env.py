import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from gcsl.env import FiniteMdp, FourRooms, action_grid, chain, grid_rooms, make_env, open_grid
from gcsl.errors import ConfigError, ContractViolation


def _action(env, dx, dy):
    return int(np.flatnonzero((env.action_grid() == [dx, dy]).all(axis=1))[0])


class TestFourRooms:
    def test_open_space_translation(self):
        env = FourRooms()
        nxt = env.step([0.25, 0.25], _action(env, 1, 0))
        np.testing.assert_allclose(nxt, [0.30, 0.25], atol=1e-15)

    def test_wall_blocks_motion(self):
        env = FourRooms()
        face = env.wall_lo
        nxt = env.step([face - 0.01, 0.4], _action(env, 1, 1))
        assert nxt[0] == pytest.approx(face)  # blocked along x
        assert nxt[1] == pytest.approx(0.45)  # free along y
        again = env.step(nxt, _action(env, 1, 0))
        np.testing.assert_allclose(again, nxt)

    def test_door_lets_agent_through(self):
        env = FourRooms()
        s = np.array([0.45, 0.25])
        for _ in range(3):
            s = env.step(s, _action(env, 1, 0))
        assert s[0] > env.wall_hi
        assert env.region(s)[0] == 1

    def test_outer_boundary_clips(self):
        env = FourRooms()
        np.testing.assert_allclose(env.step([0.02, 0.98], _action(env, -1, 1)), [0.0, 1.0])

    def test_reset_is_fixed(self):
        env = FourRooms()
        a = env.reset(np.random.default_rng(1))
        b = env.reset(np.random.default_rng(2))
        np.testing.assert_array_equal(a, [0.25, 0.25])
        np.testing.assert_array_equal(a, b)

    def test_invalid_action_rejected(self):
        env = FourRooms()
        with pytest.raises(ContractViolation):
            env.step([0.25, 0.25], 9)
        with pytest.raises(ContractViolation):
            env.step([0.25, 0.25], -1)

    def test_distance(self):
        env = FourRooms()
        assert env.distance([0.0, 0.0], [3.0, 4.0]) == 5.0
        assert env.distance([0.3, 0.7], [0.3, 0.7]) == 0.0
        with pytest.raises(ContractViolation):
            env.distance([0.0, 0.0], [0.0, 0.0, 0.0])

    def test_goal_room_masses_match_free_area(self):
        env = FourRooms()
        goals = env.sample_goals(np.random.default_rng(0), 100_000)
        assert env.is_free(goals).all()
        counts = np.bincount(env.region(goals), minlength=5)
        frac = env.free_area_fractions()
        expected = np.array([frac[k] for k in ("bottom-left", "bottom-right", "top-left", "top-right", "doorways")])
        assert expected.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(counts[:4] / len(goals), 0.25 * np.ones(4), atol=0.01)
        p = stats.chisquare(counts, expected * len(goals)).pvalue
        assert p > 1e-3

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=200, deadline=None)
    def test_containment(self, seed):
        env = FourRooms()
        rng = np.random.default_rng(seed)
        s = np.repeat(env.reset()[None], 16, axis=0)
        for _ in range(env.horizon):
            s = env.step_batch(s, rng.integers(0, 9, len(s)))
            assert env.is_free(s).all()
            assert np.all((s >= 0) & (s <= 1))

    def test_containment_from_wall_edges(self):
        # every action from points on wall faces, door jambs and corners stays in free space
        env = FourRooms()
        lo, hi, h = env.wall_lo, env.wall_hi, env.door_half
        coords = np.unique(np.concatenate([
            [0.0, lo, hi, 0.5, 1.0], env.door_centers - h, env.door_centers + h,
            env.door_centers - h + 0.01, env.door_centers + h - 0.01, [0.3, 0.45, 0.55, 0.8]]))
        pts = np.array([(x, y) for x in coords for y in coords])
        pts = pts[env.is_free(pts)]
        for a in range(env.action_count):
            s = pts
            for _ in range(4):
                s = env.step_batch(s, np.full(len(s), a))
                assert env.is_free(s).all(), a

    def test_deterministic_replay(self):
        env = FourRooms()
        acts = np.random.default_rng(3).integers(0, 9, 50)

        def roll():
            s = env.reset()
            out = [s]
            for a in acts:
                s = env.step(s, a)
                out.append(s)
            return np.array(out)

        np.testing.assert_array_equal(roll(), roll())

    def test_bad_geometry(self):
        with pytest.raises(ContractViolation):
            FourRooms(door_width=0.6)
        with pytest.raises(ContractViolation):
            FourRooms(step_scale=0.0)


def test_action_grid_lexicographic():
    g = action_grid(2)
    assert g.shape == (9, 2)
    np.testing.assert_array_equal(g[0], [-1, -1])
    np.testing.assert_array_equal(g[4], [0, 0])
    np.testing.assert_array_equal(g[8], [1, 1])
    assert int((np.abs(g).sum(axis=1) == 0).sum()) == 1


class TestFinite:
    def test_chain_lookup(self):
        env = chain(4)
        assert env.action_grid() == ("left", "stay", "right")
        assert env.step(1, 2) == 2
        assert env.step(0, 0) == 0
        assert env.step(3, 2) == 3

    def test_step_matches_table_exhaustively(self):
        for env in (chain(4), open_grid(3), grid_rooms()):
            nxt = env.mdp.next_state
            s, a = np.meshgrid(np.arange(env.state_count), np.arange(env.action_count), indexing="ij")
            np.testing.assert_array_equal(env.step_batch(s.ravel(), a.ravel()), nxt[s.ravel(), a.ravel()])
            assert np.all(env.mdp.transition[s, a, nxt[s, a]] == 1.0)

    def test_grid_rooms_layout(self):
        env = grid_rooms()
        assert env.horizon == 30
        assert env.state_count == 104
        assert env.action_grid() == ("up", "down", "left", "right", "stay")
        assert env.reset() == env.reset(np.random.default_rng(9))
        goals = env.sample_goals(np.random.default_rng(0), 100_000)
        cells = env.coords[goals]
        assert all(env.layout[r][c] == "." for r, c in np.unique(cells, axis=0))

    def test_chain_goals_uniform(self):
        env = chain(4)
        goals = env.sample_goals(np.random.default_rng(0), 100_000)
        np.testing.assert_allclose(np.bincount(goals, minlength=4) / 1e5, 0.25, atol=0.01)

    def test_discrete_distance(self):
        env = chain(4)
        assert env.distance(2, 3) == 1.0
        assert env.distance(3, 3) == 0.0

    def test_out_of_range_state(self):
        with pytest.raises(ContractViolation):
            chain(4).step(4, 0)

    def test_stochastic_step_needs_randomness(self):
        tr = np.zeros((2, 2, 2))
        tr[:, 0] = [0.5, 0.5]
        tr[:, 1] = [0.0, 1.0]
        mdp = FiniteMdp(tr, np.array([1.0, 0.0]), 2, np.array([0.5, 0.5]))
        from gcsl.env import FiniteEnv

        env = FiniteEnv(mdp, "coin", ("flip", "go"))
        assert not env.deterministic
        with pytest.raises(ContractViolation):
            env.step(0, 0)
        draws = env.step_batch(np.zeros(20_000, dtype=int), np.zeros(20_000, dtype=int),
                               rng=np.random.default_rng(0))
        assert draws.mean() == pytest.approx(0.5, abs=0.02)

    def test_mdp_validation(self):
        tr = np.full((2, 2, 2), 0.6)
        with pytest.raises(ContractViolation):
            FiniteMdp(tr, np.array([1.0, 0.0]), 2, np.array([0.5, 0.5]))
        nxt = np.array([[0, 1], [1, 0]])
        with pytest.raises(ContractViolation):
            FiniteMdp.from_table(nxt, 0, 0)
        with pytest.raises(ContractViolation):
            FiniteMdp.from_table(nxt, 0, 2, goal_distribution=[0.7, 0.7])


def test_make_env():
    assert make_env("four-rooms", horizon=20).horizon == 20
    assert make_env("four-rooms", door_width=0.2).door_width == 0.2
    assert make_env("chain", n_states=6).state_count == 6
    assert make_env("grid-rooms").state_count == 104
    with pytest.raises(ConfigError):
        make_env("lunar-lander")
    with pytest.raises(ConfigError):
        make_env("chain", door_width=0.1)

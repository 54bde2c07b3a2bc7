import numpy as np
import pytest

from gcsl.buffer import (LOG_HEADER, BufferConfig, ReplayBuffer, Trajectory, format_trajectory, parse_trajectory,
                         read_trajectory_log, relabel_all, write_trajectory_log)
from gcsl.errors import ContractViolation, NotReady


def _traj(T, offset=0, seed=0):
    return Trajectory(np.arange(offset, offset + T + 1), np.arange(T) % 3, offset + T, seed=seed)


class TestTrajectory:
    def test_shape_contract(self):
        with pytest.raises(ContractViolation):
            Trajectory(np.arange(3), np.arange(3), 0)
        with pytest.raises(ContractViolation):
            Trajectory(np.arange(1), np.arange(0), 0)
        with pytest.raises(ContractViolation):
            Trajectory(np.arange(3), np.array([0.5, 1.0]), 0)

    def test_properties(self):
        t = _traj(4, offset=10)
        assert t.horizon == 4 and t.final_state == 14


class TestRelabelAll:
    def test_three_step_example(self):
        traj = Trajectory(np.array([10, 11, 12, 13]), np.array([0, 1, 2]), 99)
        got = {(e.state, e.action, e.goal, e.horizon) for e in relabel_all(traj)}
        assert got == {(10, 0, 11, 1), (10, 0, 12, 2), (10, 0, 13, 3),
                       (11, 1, 12, 1), (11, 1, 13, 2), (12, 2, 13, 1)}

    def test_counts(self):
        assert len(relabel_all(_traj(50))) == 1275
        assert len(relabel_all(_traj(50), include_t0=False)) == 1225
        assert len(relabel_all(_traj(1))) == 1
        # limited window: 3 per start except the last two starts
        assert len(relabel_all(_traj(50), h_max=3)) == 3 * 48 + 2 + 1

    def test_goal_is_a_later_state(self):
        traj = _traj(7, offset=3)
        for e in relabel_all(traj):
            assert e.goal == e.state + e.horizon and 1 <= e.horizon <= 7 - (e.state - 3)


class TestReplayBuffer:
    def test_empty_not_ready(self, rng):
        buf = ReplayBuffer()
        with pytest.raises(NotReady):
            buf.sample_batch(4, rng)
        with pytest.raises(NotReady):
            buf.stacked()

    def test_on_policy_eviction(self):
        buf = ReplayBuffer(BufferConfig.on_policy(100))
        trajs = [_traj(50, offset=k) for k in range(3)]
        assert buf.append(trajs[0]) == [] and buf.append(trajs[1]) == []
        evicted = buf.append(trajs[2])
        assert evicted == [trajs[0]]
        assert len(buf) == 2 and buf.transitions == 100
        states, _ = buf.stacked()
        np.testing.assert_array_equal(states[:, 0], [1, 2])

    def test_window_smaller_than_episode(self):
        with pytest.raises(ContractViolation):
            ReplayBuffer(BufferConfig.on_policy(10)).append(_traj(50))

    def test_capacity_and_growth(self):
        buf = ReplayBuffer(BufferConfig.full(capacity=20))
        for k in range(100):
            buf.append(_traj(3, offset=k))
        states, actions = buf.stacked()
        np.testing.assert_array_equal(states[:, 0], np.arange(80, 100))
        assert actions.shape == (20, 3) and buf.appended == 100

    def test_mixed_horizons_rejected(self):
        buf = ReplayBuffer()
        buf.append(_traj(3))
        with pytest.raises(ContractViolation):
            buf.append(_traj(4))
        with pytest.raises(ContractViolation):
            buf.append("not a trajectory")

    def test_bad_configs(self):
        for kw in ({"mode": "weird"}, {"mode": "limited"}, {"mode": "on_policy"}, {"capacity": 0}):
            with pytest.raises(ContractViolation):
                BufferConfig(**kw)

    def test_batch_is_consistent_with_trajectories(self, rng):
        buf = ReplayBuffer()
        for k in range(5):
            buf.append(_traj(6, offset=100 * k))
        b = buf.sample_batch(500, rng)
        trajs = buf.trajectories
        for i, t, tg, s, a, g, h in zip(b.traj_index, b.t, b.t_goal, b.states, b.actions, b.goals, b.horizons):
            assert s == trajs[i].states[t] and a == trajs[i].actions[t] and g == trajs[i].states[tg]
            assert h == tg - t and 0 <= t < tg <= 6

    def test_pair_marginal_matches_uniform_start_then_later_goal(self):
        T = 6
        buf = ReplayBuffer()
        buf.append(_traj(T))
        _, t, tg = buf.sample_indices(1_000_000, np.random.default_rng(3))
        freq = np.zeros((T, T + 1))
        np.add.at(freq, (t, tg), 1)
        freq /= freq.sum()
        want = np.zeros_like(freq)
        for s in range(T):
            want[s, s + 1:] = 1.0 / (T * (T - s))
        assert 0.5 * np.abs(freq - want).sum() < 0.01

    def test_limited_window_respected(self, rng):
        buf = ReplayBuffer(BufferConfig.limited(3))
        buf.append(_traj(20))
        b = buf.sample_batch(5000, rng)
        assert b.horizons.min() == 1 and b.horizons.max() == 3
        assert np.all(b.t_goal <= 20)

    def test_seeded_sampling_is_reproducible(self):
        buf = ReplayBuffer()
        buf.append(_traj(8))
        a = buf.sample_batch(32, np.random.default_rng(9))
        b = buf.sample_batch(32, np.random.default_rng(9))
        np.testing.assert_array_equal(a.t, b.t)
        np.testing.assert_array_equal(a.t_goal, b.t_goal)


class TestTrajectoryLog:
    def test_roundtrip_continuous(self, tmp_path, rng):
        trajs = [Trajectory(rng.random((4, 2)), rng.integers(0, 9, 3), rng.random(2), seed=k) for k in range(3)]
        path = tmp_path / "log.tsv"
        assert write_trajectory_log(path, trajs) == 3
        assert path.read_text().splitlines()[0] == LOG_HEADER
        back = read_trajectory_log(path)
        for a, b in zip(trajs, back):
            np.testing.assert_array_equal(a.states, b.states)
            np.testing.assert_array_equal(a.actions, b.actions)
            np.testing.assert_array_equal(a.commanded_goal, b.commanded_goal)
            assert a.seed == b.seed

    def test_roundtrip_finite(self):
        t = _traj(4, offset=2, seed=7)
        back = parse_trajectory(format_trajectory(t))
        assert back.states.ndim == 1 and back.commanded_goal == 6 and back.seed == 7
        np.testing.assert_array_equal(back.states, t.states)

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.tsv"
        good = format_trajectory(_traj(2))
        path.write_text(f"{LOG_HEADER}\n{good}\n\n0\t1\t1;2;3\n")
        with pytest.raises(ValueError, match=r"bad\.tsv:4"):
            read_trajectory_log(path)

    def test_inconsistent_records_rejected(self):
        with pytest.raises(ValueError):
            parse_trajectory("0\t1\t1,2;3\t0")
        with pytest.raises(ValueError):
            parse_trajectory("0\t1\t1;2;3\t0")  # 3 states, 1 action
        with pytest.raises(ValueError):
            parse_trajectory("x\t1\t1;2\t0")

    def test_comments_and_blank_lines_ignored(self, tmp_path):
        path = tmp_path / "log.tsv"
        path.write_text(f"# hello\n\n{format_trajectory(_traj(2))}\n# bye\n")
        assert len(read_trajectory_log(path)) == 1

import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import max_relative_error, numeric_gradient
from gcsl.buffer import Batch, RelabeledExample
from gcsl.errors import ContractViolation
from gcsl.policy import (MAGIC, Adam, MlpPolicy, TabularPolicy, action_probabilities, adam_step, batch_nll,
                         encode_horizon, encode_horizons, fit_tabular, greedy_action, nll_loss_and_gradient,
                         sample_action, softmax)


def _small_net(rng, horizon_max=None):
    pol = MlpPolicy(2, 3, hidden=(8, 6), rng=rng, horizon_max=horizon_max)
    for b in pol.params[1::2]:
        b[:] = rng.normal(scale=0.1, size=b.shape)
    return pol


class TestHorizonEncoding:
    def test_examples(self):
        np.testing.assert_array_equal(encode_horizon(0, 4), [0, 0, 0, 0])
        np.testing.assert_array_equal(encode_horizon(4, 4), [1, 1, 1, 1])
        np.testing.assert_array_equal(encode_horizon(2, 4), [1, 1, 0, 0])

    def test_out_of_range(self):
        with pytest.raises(ContractViolation):
            encode_horizon(5, 4)
        with pytest.raises(ContractViolation):
            encode_horizons(np.array([-1]), 4)

    def test_batch_matches_single(self):
        h = np.arange(7)
        np.testing.assert_array_equal(encode_horizons(h, 6), np.stack([encode_horizon(int(x), 6) for x in h]))


class TestTabular:
    def test_count_normalisation(self):
        pol = TabularPolicy(1, 2, smoothing=0.0)
        pol.fit([0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 1])
        np.testing.assert_allclose(action_probabilities(pol, 0, 0), [0.75, 0.25])

    def test_empty_cell_smoothed_uniform(self):
        pol = TabularPolicy(3, 2, smoothing=0.1)
        np.testing.assert_allclose(action_probabilities(pol, 1, 2), [0.5, 0.5])
        unsmoothed = TabularPolicy(3, 4, smoothing=0.0)
        np.testing.assert_allclose(action_probabilities(unsmoothed, 1, 2), [0.25] * 4)

    def test_fit_tabular_examples(self):
        pol = TabularPolicy(2, 2, horizon_max=3, smoothing=0.0)
        ex = [RelabeledExample(0, 0, 1, 1)] * 2 + [RelabeledExample(0, 1, 1, 1)]
        fit_tabular(pol, ex)
        np.testing.assert_allclose(action_probabilities(pol, 0, 1, 1), [2 / 3, 1 / 3])
        np.testing.assert_allclose(action_probabilities(pol, 0, 1, 2), [0.5, 0.5])

    def test_order_invariance(self, rng):
        s, g, a = rng.integers(0, 4, 200), rng.integers(0, 4, 200), rng.integers(0, 3, 200)
        ex = [RelabeledExample(int(x), int(z), int(y), 1) for x, y, z in zip(s, g, a)]
        p1 = fit_tabular(TabularPolicy(4, 3), ex)
        p2 = fit_tabular(TabularPolicy(4, 3), ex[::-1])
        np.testing.assert_array_equal(p1.counts, p2.counts)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_reproduces_empirical_frequencies(self, seed):
        rng = np.random.default_rng(seed)
        counts = rng.integers(0, 5, (3, 3, 4))
        s, g, a = np.nonzero(counts)
        reps = counts[s, g, a]
        pol = TabularPolicy(3, 4, smoothing=0.0)
        pol.fit(np.repeat(s, reps), np.repeat(g, reps), np.repeat(a, reps))
        for si in range(3):
            for gi in range(3):
                row = counts[si, gi]
                want = row / row.sum() if row.sum() else np.full(4, 0.25)
                np.testing.assert_allclose(action_probabilities(pol, si, gi), want, atol=1e-12)

    def test_smoothed_rows_are_positive_distributions(self, rng):
        pol = TabularPolicy(5, 4, smoothing=0.1)
        pol.fit(rng.integers(0, 5, 500), rng.integers(0, 5, 500), rng.integers(0, 4, 500))
        s, g = np.meshgrid(np.arange(5), np.arange(5))
        p = pol.probs_batch(s.ravel(), g.ravel())
        assert np.all(p > 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_weighted_fit_and_unfit(self, rng):
        pol = TabularPolicy(3, 2, smoothing=0.0)
        pol.fit([0, 0], [1, 1], [0, 1], weights=[0.25, 0.75])
        np.testing.assert_allclose(action_probabilities(pol, 0, 1), [0.25, 0.75])
        pol.fit([2], [2], [1])
        pol.unfit([2], [2], [1])
        assert np.all(pol.counts[2, 2] == 0)

    def test_horizon_contract(self):
        with pytest.raises(ContractViolation):
            TabularPolicy(2, 2).probs_batch([0], [0], [1])
        with pytest.raises(ContractViolation):
            TabularPolicy(2, 2, horizon_max=3).probs_batch([0], [0])
        with pytest.raises(ContractViolation):
            TabularPolicy(2, 2).probs_batch([2], [0])

    def test_save_load_roundtrip(self, tmp_path, rng):
        pol = TabularPolicy(4, 3, horizon_max=5, smoothing=0.3)
        pol.fit(rng.integers(0, 4, 50), rng.integers(0, 4, 50), rng.integers(0, 3, 50), rng.integers(0, 6, 50))
        pol.save(tmp_path / "p.npz")
        back = TabularPolicy.load(tmp_path / "p.npz")
        np.testing.assert_array_equal(back.counts, pol.counts)
        assert back.smoothing == 0.3 and back.horizon_max == 5


class TestMlp:
    def test_zero_weights_uniform(self):
        pol = MlpPolicy(2, 9, hidden=(5, 4), init="zeros")
        np.testing.assert_allclose(action_probabilities(pol, [0.3, 0.1], [0.9, 0.2]), np.full(9, 1 / 9))
        loss, _ = pol.loss_and_grad(np.zeros((4, 2)), np.array([0, 3, 8, 8]), np.ones((4, 2)))
        assert loss == pytest.approx(math.log(9), abs=1e-12)

    def test_default_architecture(self):
        pol = MlpPolicy(2, 9)
        assert pol.sizes == (4, 400, 300, 9)
        assert [p.shape for p in pol.params] == [(4, 400), (400,), (400, 300), (300,), (300, 9), (9,)]
        assert all(np.all(b == 0) for b in pol.params[1::2])
        limit = np.sqrt(6.0 / 4)
        assert np.abs(pol.params[0]).max() <= limit

    def test_gradient_matches_finite_differences(self, rng):
        for _ in range(10):
            pol = _small_net(rng)
            n = int(rng.integers(1, 6))
            s, g, a = rng.normal(size=(n, 2)), rng.normal(size=(n, 2)), rng.integers(0, 3, n)
            _, analytic = pol.loss_and_grad(s, a, g)
            assert max_relative_error(analytic, numeric_gradient(pol, s, a, g)) < 1e-4

    def test_gradient_with_horizon_input(self, rng):
        pol = _small_net(rng, horizon_max=4)
        s, g, a, h = rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), rng.integers(0, 3, 3), np.array([1, 4, 2])
        _, analytic = pol.loss_and_grad(s, a, g, h)
        assert max_relative_error(analytic, numeric_gradient(pol, s, a, g, h)) < 1e-4

    def test_duplicated_batch_same_loss_and_gradient(self, rng):
        pol = _small_net(rng)
        s, g, a = rng.normal(size=(4, 2)), rng.normal(size=(4, 2)), rng.integers(0, 3, 4)
        l1, g1 = pol.loss_and_grad(s, a, g)
        l2, g2 = pol.loss_and_grad(np.tile(s, (2, 1)), np.tile(a, 2), np.tile(g, (2, 1)))
        assert l1 == pytest.approx(l2, rel=1e-12)
        for x, y in zip(g1, g2):
            np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-14)

    def test_nll_on_batch_object(self, rng):
        pol = _small_net(rng)
        batch = Batch(rng.normal(size=(3, 2)), rng.integers(0, 3, 3), rng.normal(size=(3, 2)),
                      np.ones(3, dtype=int), np.zeros(3, dtype=int), np.zeros(3, dtype=int), np.ones(3, dtype=int))
        loss, _ = nll_loss_and_gradient(pol, batch)
        assert loss == pytest.approx(batch_nll(pol, batch.states, batch.actions, batch.goals))

    def test_empty_batch_rejected(self):
        pol = MlpPolicy(2, 3, hidden=(4,))
        with pytest.raises(ContractViolation):
            pol.loss_and_grad(np.zeros((0, 2)), np.zeros(0, dtype=int), np.zeros((0, 2)))

    def test_dimension_mismatch_rejected(self):
        pol = MlpPolicy(2, 3, hidden=(4,))
        with pytest.raises(ContractViolation):
            pol.probs_batch(np.zeros((1, 3)), np.zeros((1, 2)))
        with pytest.raises(ContractViolation):
            pol.probs_batch(np.zeros((1, 2)), np.zeros((1, 2)), np.array([1]))

    def test_softmax_properties(self, rng):
        for scale in (1.0, 30.0, 300.0):
            p = softmax(rng.normal(scale=scale, size=(50, 9)))
            np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(softmax(rng.normal(scale=5.0, size=(50, 9))) > 0)

    def test_checkpoint_layout(self, tmp_path, rng):
        pol = MlpPolicy(2, 3, hidden=(5, 4), rng=rng, horizon_max=6)
        path = tmp_path / "p.gcsl"
        pol.save(path)
        raw = path.read_bytes()
        assert raw[:5] == MAGIC
        (n,) = struct.unpack_from("<I", raw, 5)
        sizes = struct.unpack_from(f"<{n}I", raw, 9)
        assert sizes == (10, 5, 4, 3)
        first = np.frombuffer(raw, dtype="<f8", count=10 * 5, offset=9 + 4 * n + 8).reshape(10, 5)
        np.testing.assert_array_equal(first, pol.params[0])
        assert len(raw) == 9 + 4 * n + 8 + 8 * sum(p.size for p in pol.params)
        back = MlpPolicy.load(path)
        assert back.horizon_max == 6
        x = rng.normal(size=(4, 2))
        np.testing.assert_array_equal(back.probs_batch(x, x, [1, 2, 3, 6]), pol.probs_batch(x, x, [1, 2, 3, 6]))

    def test_load_rejects_foreign_files(self, tmp_path):
        p = tmp_path / "x"
        p.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(ContractViolation):
            MlpPolicy.load(p)


class TestActions:
    def _tab(self, probs):
        pol = TabularPolicy(1, len(probs), smoothing=0.0)
        pol.counts[0, 0] = probs
        return pol

    def test_greedy_examples(self):
        assert greedy_action(self._tab([0.2, 0.5, 0.3]), 0, 0) == 1
        assert greedy_action(self._tab([0.5, 0.5]), 0, 0) == 0

    def test_greedy_invariant_under_logit_rescaling(self, rng):
        pol = MlpPolicy(2, 5, hidden=(6,), rng=rng)
        x = rng.normal(size=(20, 2))
        base = np.argmax(pol.probs_batch(x, x), axis=1)
        scaled = pol.copy()
        scaled.params[-2] *= 3.7
        scaled.params[-1] *= 3.7
        np.testing.assert_array_equal(np.argmax(scaled.probs_batch(x, x), axis=1), base)

    def test_sample_uniform_frequencies(self):
        pol = self._tab(np.ones(9))
        rng = np.random.default_rng(0)
        draws = [sample_action(pol, 0, 0, None, rng) for _ in range(100_000)]
        np.testing.assert_allclose(np.bincount(draws, minlength=9) / 1e5, 1 / 9, atol=0.005)

    def test_sample_degenerate_and_deterministic(self):
        pol = self._tab([1.0, 0.0, 0.0])
        rng = np.random.default_rng(1)
        assert all(sample_action(pol, 0, 0, None, rng) == 0 for _ in range(200))
        uni = self._tab(np.ones(4))
        a = [sample_action(uni, 0, 0, None, np.random.default_rng(5)) for _ in range(3)]
        b = [sample_action(uni, 0, 0, None, np.random.default_rng(5)) for _ in range(3)]
        assert a == b


class TestAdam:
    def test_first_step(self):
        p = [np.zeros(1)]
        adam_step(Adam(), p, [np.ones(1)])
        assert p[0][0] == pytest.approx(-5e-4 / (1 + 1e-8), rel=1e-12)

    def test_zero_gradient_keeps_params(self):
        p = [np.array([0.3, -1.2])]
        Adam().step(p, [np.zeros(2)])
        np.testing.assert_array_equal(p[0], [0.3, -1.2])

    def test_odd_symmetry(self):
        a, b = [np.zeros(3)], [np.zeros(3)]
        oa, ob = Adam(), Adam()
        g = np.array([0.5, -2.0, 1e-3])
        for _ in range(2):
            oa.step(a, [g])
            ob.step(b, [-g])
        np.testing.assert_array_equal(a[0], -b[0])

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolation):
            Adam().step([np.zeros(2)], [np.zeros(3)])
        with pytest.raises(ContractViolation):
            Adam().step([np.zeros(2)], [])

    def test_step_counter_and_moment_shapes(self):
        opt = Adam()
        p = [np.zeros((2, 3)), np.zeros(3)]
        for k in range(3):
            opt.step(p, [np.ones((2, 3)), np.ones(3)])
            assert opt.t == k + 1
        assert [m.shape for m in opt.m] == [(2, 3), (3,)]

    def test_descent_on_fixed_batch(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            pol = _small_net(rng)
            s, g, a = rng.normal(size=(8, 2)), rng.normal(size=(8, 2)), rng.integers(0, 3, 8)
            before, grads = pol.loss_and_grad(s, a, g)
            Adam(lr=float(rng.uniform(1e-5, 1e-3))).step(pol.params, grads)
            after, _ = pol.loss_and_grad(s, a, g)
            assert after < before

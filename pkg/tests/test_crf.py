import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_argmax, brute_log_partition, finite_diff, matmul_loops

from dfl import crf


def instance(seed, L, n, scale=1.0):
    rng = np.random.default_rng(seed)
    return (rng.normal(scale=scale, size=(n, L)), rng.normal(scale=scale, size=(L, L)),
            rng.normal(scale=scale, size=L), rng.normal(scale=scale, size=L))


def zero_head(L, d=3):
    z = np.zeros
    return crf.CrfHead("DISFL", z((d, L)), z(L), z((L, L)), z(L), z(L))


class TestEmissions:
    def test_zero_weights_give_bias(self):
        head = zero_head(2)
        head.b[:] = [0.3, -0.3]
        E = crf.emissions(head, np.random.default_rng(0).normal(size=(4, 3)))
        assert np.array_equal(E, np.tile([0.3, -0.3], (4, 1)))

    def test_zero_input_gives_bias(self):
        head = crf.CrfHead.init("NER", 3, 9, np.random.default_rng(1), dtype=np.float64)
        head.b[:] = np.arange(9)
        assert np.array_equal(crf.emissions(head, np.zeros((5, 3))), np.tile(np.arange(9.0), (5, 1)))

    def test_against_loop_matmul(self):
        rng = np.random.default_rng(2)
        head = crf.CrfHead.init("POS", 4, 3, rng, dtype=np.float64)
        head.b[:] = rng.normal(size=3)
        H = rng.normal(size=(2, 4))
        expected = matmul_loops(H, head.W) + head.b
        np.testing.assert_allclose(crf.emissions(head, H), expected, rtol=0, atol=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            crf.emissions(zero_head(2, d=3), np.zeros((2, 4)))


class TestLogPartition:
    def test_single_label(self):
        z = np.zeros
        assert crf.log_partition(np.array([[0.5], [1.5]]), z((1, 1)), z(1), z(1)) == 2.0

    def test_two_equal_paths(self):
        z = np.zeros
        assert crf.log_partition(z((1, 2)), z((2, 2)), z(2), z(2)) == pytest.approx(math.log(2), abs=1e-15)

    def test_eight_paths(self):
        E, T, s, e = instance(42, 2, 3)
        assert crf.log_partition(E, T, s, e) == pytest.approx(brute_log_partition(E, T, s, e), abs=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 4), st.integers(1, 5))
    def test_matches_enumeration(self, seed, L, n):
        E, T, s, e = instance(seed, L, n, scale=2.0)
        assert crf.log_partition(E, T, s, e) == pytest.approx(brute_log_partition(E, T, s, e), abs=1e-8)

    def test_large_scores_stay_finite(self):
        E, T, s, e = instance(0, 3, 6, scale=300.0)
        assert np.isfinite(crf.log_partition(E, T, s, e))


class TestNll:
    def test_single_label_zero(self):
        E, T, s, e = instance(0, 1, 4)
        loss, dE, dT, ds, de = crf.nll(E, T, s, e, [0, 0, 0, 0])
        assert loss == 0.0
        for g in (dE, dT, ds, de):
            assert not g.any()

    def test_uniform_marginals(self):
        z = np.zeros
        loss, dE, dT, ds, de = crf.nll(z((1, 2)), z((2, 2)), z(2), z(2), [0])
        assert loss == pytest.approx(math.log(2), abs=1e-15)
        np.testing.assert_allclose(dE, [[-0.5, 0.5]], atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_finite_difference(self, seed):
        E, T, s, e = instance(seed, 3, 4)
        gold = np.random.default_rng(seed + 100).integers(0, 3, size=4)
        _, dE, dT, ds, de = crf.nll(E, T, s, e, gold)
        for arr, grad in ((E, dE), (T, dT), (s, ds), (e, de)):
            fd = finite_diff(lambda: crf.nll(E, T, s, e, gold)[0], arr)
            rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-8)
            assert rel.max() < 1e-6

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 4), st.integers(1, 5), st.floats(-5, 5))
    def test_properties(self, seed, L, n, c):
        E, T, s, e = instance(seed, L, n)
        gold = np.random.default_rng(seed).integers(0, L, size=n)
        loss, dE, *_ = crf.nll(E, T, s, e, gold)
        assert loss >= -1e-12
        np.testing.assert_allclose(dE.sum(axis=1), 0, atol=1e-10)
        assert crf.nll(E + c, T, s, e, gold)[0] == pytest.approx(loss, abs=1e-9)

    def test_invalid_gold(self):
        E, T, s, e = instance(0, 2, 3)
        with pytest.raises(ValueError):
            crf.nll(E, T, s, e, [0, 2, 1])


class TestViterbi:
    def test_single_label(self):
        E, T, s, e = instance(3, 1, 5)
        path, score = crf.viterbi(E, T, s, e)
        assert path.tolist() == [0] * 5
        assert score == pytest.approx(E.sum() + 4 * T[0, 0] + s[0] + e[0], abs=1e-12)

    def test_tie_break_smallest(self):
        z = np.zeros
        path, score = crf.viterbi(z((2, 2)), z((2, 2)), z(2), z(2))
        assert path.tolist() == [0, 0] and score == 0.0

    def test_tie_break_earliest_position(self):
        # paths [0,1] and [1,0] tie at the top; [0,1] is lexicographically smaller
        E = np.array([[0.0, 0.0], [0.0, 0.0]])
        T = np.array([[-5.0, 1.0], [1.0, -5.0]])
        path, _ = crf.viterbi(E, T, np.zeros(2), np.zeros(2))
        assert path.tolist() == [0, 1]

    def test_81_paths(self):
        E, T, s, e = instance(9, 3, 4)
        path, score = crf.viterbi(E, T, s, e)
        bpath, bscore = brute_argmax(E, T, s, e)
        assert path.tolist() == bpath
        assert score == pytest.approx(bscore, abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 4), st.integers(1, 5), st.floats(-10, 10))
    def test_matches_brute_force_and_shift_invariant(self, seed, L, n, c):
        E, T, s, e = instance(seed, L, n)
        path, score = crf.viterbi(E, T, s, e)
        bpath, bscore = brute_argmax(E, T, s, e)
        assert path.tolist() == bpath
        assert score == pytest.approx(bscore, abs=1e-9)
        assert crf.viterbi(E + c, T, s, e)[0].tolist() == bpath


class TestBatched:
    @pytest.mark.parametrize("seed", range(4))
    def test_batch_matches_single(self, seed):
        rng = np.random.default_rng(seed)
        L, B, n = 3, 4, 6
        lengths = np.array([6, 1, 3, 5])
        mask = np.arange(n)[None, :] < lengths[:, None]
        E = rng.normal(size=(B, n, L))
        T, s, e = rng.normal(size=(L, L)), rng.normal(size=L), rng.normal(size=L)
        gold = rng.integers(0, L, size=(B, n))
        loss, dE, dT, ds, de = crf.batch_nll(E, mask, gold, T, s, e)
        ref = [crf.nll(E[b, :k], T, s, e, gold[b, :k]) for b, k in enumerate(lengths)]
        assert loss == pytest.approx(sum(r[0] for r in ref), abs=1e-10)
        for b, k in enumerate(lengths):
            np.testing.assert_allclose(dE[b, :k], ref[b][1], atol=1e-12)
            assert not dE[b, k:].any()
        np.testing.assert_allclose(dT, sum(r[2] for r in ref), atol=1e-12)
        np.testing.assert_allclose(ds, sum(r[3] for r in ref), atol=1e-12)
        np.testing.assert_allclose(de, sum(r[4] for r in ref), atol=1e-12)
        paths = crf.batch_viterbi(E, mask, T, s, e)
        for b, k in enumerate(lengths):
            assert paths[b].tolist() == crf.viterbi(E[b, :k], T, s, e)[0].tolist()

    def test_padding_values_ignored(self):
        rng = np.random.default_rng(0)
        E = rng.normal(size=(1, 4, 2))
        mask = np.array([[True, True, False, False]])
        gold = np.array([[1, 0, 1, 1]])
        T, s, e = rng.normal(size=(2, 2)), rng.normal(size=2), rng.normal(size=2)
        a = crf.batch_nll(E, mask, gold, T, s, e)[0]
        E2 = E.copy()
        E2[0, 2:] = 1e3
        with np.errstate(all="raise"):
            out = crf.batch_nll(E2, mask, gold, T, s, e)
        assert out[0] == a and all(np.isfinite(x).all() for x in out[1:])

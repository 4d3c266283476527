import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tvsysid.stats import (
    build_block,
    empty_stats,
    update_unweighted,
    update_weighted,
    weighted_stats_derivative,
)

from .conftest import dense_phi, forgetting_diag


class TestBuildBlock:
    def test_unit_impulse_lags(self):
        b = build_block([1, 0, 0], [0.0, 0.0, 0.0], start=1, n=2)
        np.testing.assert_array_equal(b.rows, [[1, 0], [0, 1], [0, 0]])

    def test_zero_input_gives_zero_block(self):
        b = build_block(np.zeros(6), np.zeros(6), start=1, n=3)
        assert not b.rows.any()

    def test_matches_direct_indexing(self):
        rng = np.random.default_rng(7)
        u = rng.standard_normal(8)
        b = build_block(u, np.zeros(8), start=1, n=3)
        np.testing.assert_allclose(b.rows, dense_phi(u, 3), rtol=0, atol=0)

    @settings(deadline=None, max_examples=50)
    @given(
        n=st.integers(1, 6),
        length=st.integers(1, 20),
        start=st.integers(1, 20),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_any_start_matches_direct_indexing(self, n, length, start, seed):
        if start > length:
            return
        rng = np.random.default_rng(seed)
        u = rng.standard_normal(length)
        y = rng.standard_normal(length)
        b = build_block(u, y, start=start, n=n)
        np.testing.assert_array_equal(b.rows, dense_phi(u, n)[start - 1 :])
        np.testing.assert_array_equal(b.outputs, y[start - 1 :])
        assert b.start_index == start

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            build_block([1.0], [1.0], start=1, n=0)
        with pytest.raises(ValueError):
            build_block([], [], start=1, n=2)
        with pytest.raises(ValueError):
            build_block([1.0, 2.0], [1.0], start=1, n=2)
        with pytest.raises(ValueError):
            build_block([1.0], [1.0], start=2, n=1)


class TestUnweightedUpdates:
    def test_matches_dense_batch_products(self):
        rng = np.random.default_rng(0)
        u = rng.standard_normal(50)
        y = rng.standard_normal(50)
        s = update_unweighted(empty_stats(4), build_block(u, y, 1, 4))
        phi = dense_phi(u, 4)
        np.testing.assert_allclose(s.R, phi.T @ phi, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(s.yt, phi.T @ y, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(s.yb, y @ y, rtol=1e-12)
        assert s.count == 50 and s.weight == 50

    def test_zero_block_only_advances_count(self):
        s0 = update_unweighted(empty_stats(3), build_block(np.ones(5), np.ones(5), 1, 3))
        s1 = update_unweighted(s0, build_block(np.zeros(9), np.zeros(9), 6, 3))
        np.testing.assert_array_equal(s1.R, s0.R)
        np.testing.assert_array_equal(s1.yt, s0.yt)
        assert s1.yb == s0.yb and s1.count == s0.count + 4

    def test_two_updates_equal_concatenated_block(self):
        rng = np.random.default_rng(1)
        u = rng.standard_normal(30)
        y = rng.standard_normal(30)
        split = update_unweighted(
            update_unweighted(empty_stats(3), build_block(u[:17], y[:17], 1, 3)),
            build_block(u, y, 18, 3),
        )
        whole = update_unweighted(empty_stats(3), build_block(u, y, 1, 3))
        np.testing.assert_allclose(split.R, whole.R, atol=1e-12)
        np.testing.assert_allclose(split.yt, whole.yt, atol=1e-12)
        assert split.yb == pytest.approx(whole.yb, abs=1e-12)

    def test_mode_and_width_checks(self):
        with pytest.raises(ValueError):
            update_unweighted(empty_stats(3, "fixed"), build_block([1.0], [1.0], 1, 3))
        with pytest.raises(ValueError):
            update_unweighted(empty_stats(3), build_block([1.0], [1.0], 1, 2))


class TestWeightedUpdates:
    def test_gamma_one_equals_unweighted(self):
        rng = np.random.default_rng(2)
        u, y = rng.standard_normal(20), rng.standard_normal(20)
        b = build_block(u, y, 1, 4)
        s_w = update_weighted(empty_stats(4), b, 1.0)
        s_u = update_unweighted(empty_stats(4), b)
        np.testing.assert_array_equal(s_w.R, s_u.R)
        np.testing.assert_array_equal(s_w.yt, s_u.yt)
        assert s_w.yb == s_u.yb and s_w.weight == s_u.weight

    def test_scalar_single_row(self):
        # prior R=4 discounted by 0.5 plus a unit regressor
        s = empty_stats(1)
        s = update_weighted(s, build_block([2.0], [0.0], 1, 1), 1.0)  # R = 4
        s = update_weighted(s, build_block([2.0, 1.0], [0.0, 0.0], 2, 1), 0.5)
        assert s.R[0, 0] == pytest.approx(0.5 * 4.0 + 1.0)

    def test_blockwise_equals_dense_weighted_batch(self):
        rng = np.random.default_rng(3)
        u, y = rng.standard_normal(30), rng.standard_normal(30)
        gamma = 0.9
        s = empty_stats(4)
        for a, b in [(0, 10), (10, 20), (20, 30)]:
            s = update_weighted(s, build_block(u[:b], y[:b], a + 1, 4), gamma)
        phi = dense_phi(u, 4)
        G = forgetting_diag(gamma, 30)
        np.testing.assert_allclose(s.R, phi.T @ G @ phi, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(s.yt, phi.T @ G @ y, rtol=1e-12, atol=1e-14)
        assert s.yb == pytest.approx(y @ G @ y, rel=1e-12)
        assert s.weight == pytest.approx(np.trace(G))

    @settings(deadline=None, max_examples=30)
    @given(
        seed=st.integers(0, 2**32 - 1),
        gamma=st.floats(0.55, 1.0),
        n=st.integers(1, 5),
    )
    def test_recursive_equals_batch_property(self, seed, gamma, n):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(n + 2, 60))
        u, y = rng.standard_normal(k), rng.standard_normal(k)
        cuts = sorted(set([0, k] + list(rng.integers(1, k, size=3))))
        s = empty_stats(n)
        for a, b in zip(cuts[:-1], cuts[1:]):
            s = update_weighted(s, build_block(u[:b], y[:b], a + 1, n), gamma)
        phi = dense_phi(u, n)
        G = forgetting_diag(gamma, k)
        ref = phi.T @ G @ phi
        assert np.linalg.norm(s.R - ref) <= 1e-10 * max(np.linalg.norm(ref), 1e-12)
        # symmetry and near-positive-semidefiniteness are maintained
        np.testing.assert_array_equal(s.R, s.R.T)
        eigs = np.linalg.eigvalsh(s.R)
        assert eigs.min() >= -1e-12 * max(np.linalg.norm(s.R), 1.0)

    def test_rejects_bad_gamma(self):
        b = build_block([1.0], [1.0], 1, 1)
        for gamma in (0.0, -0.5, 1.5):
            with pytest.raises(ValueError):
                update_weighted(empty_stats(1), b, gamma)


class TestWeightedDerivative:
    def test_single_row_closed_form(self):
        # T=1: the new row enters at weight gamma^0, so only the stored
        # statistics rescale: dR = R_prev
        rng = np.random.default_rng(4)
        u, y = rng.standard_normal(6), rng.standard_normal(6)
        prev = update_weighted(empty_stats(2), build_block(u[:5], y[:5], 1, 2), 0.8)
        tail = build_block(u, y, 6, 2)
        dR, dyt, dyb = weighted_stats_derivative(prev, tail, 0.8)
        np.testing.assert_allclose(dR, prev.R, atol=1e-14)
        np.testing.assert_allclose(dyt, prev.yt, atol=1e-14)
        assert dyb == pytest.approx(prev.yb, abs=1e-14)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        u, y = rng.standard_normal(40), rng.standard_normal(40)
        prev = update_weighted(empty_stats(3), build_block(u[:25], y[:25], 1, 3), 0.93)
        tail = build_block(u, y, 26, 3)
        gamma, eps = 0.95, 1e-6
        dR, dyt, dyb = weighted_stats_derivative(prev, tail, gamma)
        sp = update_weighted(prev, tail, gamma + eps)
        sm = update_weighted(prev, tail, gamma - eps)
        np.testing.assert_allclose(dR, (sp.R - sm.R) / (2 * eps), rtol=1e-6, atol=1e-7)
        np.testing.assert_allclose(dyt, (sp.yt - sm.yt) / (2 * eps), rtol=1e-6, atol=1e-7)
        assert dyb == pytest.approx((sp.yb - sm.yb) / (2 * eps), rel=1e-6, abs=1e-7)

    def test_zero_inputs_zero_derivative(self):
        prev = empty_stats(2)
        tail = build_block(np.zeros(4), np.zeros(4), 1, 2)
        dR, dyt, dyb = weighted_stats_derivative(prev, tail, 0.9)
        assert not dR.any() and not dyt.any() and dyb == 0.0

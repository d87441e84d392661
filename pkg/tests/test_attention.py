"""Attention-kernel tests: dense oracle equivalence, lazy fills, selection rules,
budget counters, and the multi-head wrapper."""

import numpy as np
import numpy.testing as npt
import pytest

from conftest import dense_attention
from sparsecast.attention import (
    AttentionConfig,
    MultiHeadAttention,
    ScoreBudget,
    canonical_attention,
    causal_mask,
    importance_scores,
    masked_neural_sparse_attention,
    neural_sparse_attention,
    prob_sparse_attention,
    select_top_queries,
    select_top_queries_causal,
    top_n_count,
)
from sparsecast.tensor import ParamStore, Tensor, finite_diff_check, sum_


class TestCanonical:
    def test_identical_keys_average_values(self):
        rng = np.random.default_rng(0)
        q = rng.standard_normal((5, 4))
        k = np.tile(rng.standard_normal(4), (6, 1))
        v = rng.standard_normal((6, 4))
        out = canonical_attention(q, k, v).data
        npt.assert_allclose(out, np.tile(v.mean(axis=0), (5, 1)), atol=1e-12)

    def test_single_key(self):
        rng = np.random.default_rng(1)
        q = rng.standard_normal((4, 3))
        k = rng.standard_normal((1, 3))
        v = rng.standard_normal((1, 3))
        out = canonical_attention(q, k, v).data
        npt.assert_allclose(out, np.tile(v[0], (4, 1)), atol=1e-15)

    def test_strong_alignment_picks_value(self):
        rng = np.random.default_rng(2)
        k = np.eye(4)
        v = rng.standard_normal((4, 4))
        q = 50.0 * k[2:3]
        out = canonical_attention(q, k, v).data
        npt.assert_allclose(out[0], v[2], atol=1e-6)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="dim"):
            canonical_attention(np.zeros((3, 4)), np.zeros((3, 5)), np.zeros((3, 5)))

    def test_budget_counts_full_grid(self):
        budget = ScoreBudget()
        rng = np.random.default_rng(3)
        canonical_attention(rng.standard_normal((7, 4)), rng.standard_normal((9, 4)),
                            rng.standard_normal((9, 4)), budget=budget)
        assert budget.dot_products_materialized == 7 * 9


class TestImportanceScores:
    def test_cancellation_leaves_bias(self):
        rng = np.random.default_rng(4)
        q = rng.standard_normal((6, 3))
        kernel = Tensor(rng.standard_normal((2, 3, 3)))
        bias = Tensor(np.array([0.7, -0.2]))
        out = importance_scores(q, -q, kernel, bias)
        npt.assert_allclose(out, np.tile([0.7, -0.2], (6, 1)), atol=1e-15)

    def test_identity_tap_reads_channel_zero(self):
        rng = np.random.default_rng(5)
        q = rng.standard_normal((8, 3))
        k = rng.standard_normal((8, 3))
        kernel = np.zeros((1, 3, 3))
        kernel[0, 0, 1] = 1.0
        out = importance_scores(q, k, Tensor(kernel), Tensor(np.zeros(1)))
        npt.assert_allclose(out[:, 0], (q + k)[:, 0], atol=1e-12)

    def test_all_ones_kernel_is_windowed_sum(self):
        rng = np.random.default_rng(6)
        q = rng.standard_normal((4, 2))
        k = rng.standard_normal((4, 2))
        out = importance_scores(q, k, Tensor(np.ones((1, 2, 3))), Tensor(np.zeros(1)))
        rows = (q + k).sum(axis=1)
        expected = [rows[0] + rows[1], rows[0] + rows[1] + rows[2],
                    rows[1] + rows[2] + rows[3], rows[2] + rows[3]]
        npt.assert_allclose(out[:, 0], expected, atol=1e-12)

    def test_cross_attention_rejected(self):
        with pytest.raises(ValueError, match="canonical"):
            importance_scores(np.zeros((4, 3)), np.zeros((6, 3)),
                              Tensor(np.zeros((1, 3, 3))))

    def test_causal_variant_sees_no_future(self):
        rng = np.random.default_rng(7)
        q = rng.standard_normal((10, 3))
        k = rng.standard_normal((10, 3))
        kernel = Tensor(rng.standard_normal((1, 3, 3)))
        base = importance_scores(q, k, kernel, causal=True)
        q2 = q.copy()
        q2[7:] += 100.0
        bumped = importance_scores(q2, k, kernel, causal=True)
        npt.assert_array_equal(base[:7], bumped[:7])


class TestSelection:
    def test_budget_counts(self):
        assert top_n_count(96, 5) == 23
        assert top_n_count(1, 5) == 1
        assert top_n_count(8, 1) == 3
        assert top_n_count(1000, 5) == 35

    def test_selects_largest_with_low_index_ties(self):
        scores = np.array([1.0, 3.0, 3.0, 0.0, 3.0, -1.0, 0.5, 0.2])
        idx = select_top_queries(scores, 1)  # n = ceil(ln 8) = 3
        npt.assert_array_equal(idx, [1, 2, 4])

    def test_permutation_consistency(self):
        rng = np.random.default_rng(8)
        scores = rng.standard_normal(20)
        perm = rng.permutation(20)
        base = select_top_queries(scores, 2)
        permuted = select_top_queries(scores[perm], 2)
        npt.assert_array_equal(np.sort(perm[permuted]), np.sort(base))

    def test_causal_selection_always_keeps_row_zero(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            sel = select_top_queries_causal(rng.standard_normal(15), 1)
            assert 0 in sel

    def test_causal_selection_is_prefix_stable(self):
        rng = np.random.default_rng(10)
        scores = rng.standard_normal(18)
        sel_full = select_top_queries_causal(scores, 2)
        sel_prefix = select_top_queries_causal(scores[:9], 2)
        npt.assert_array_equal(sel_full[sel_full < 9], sel_prefix)


def _scored_instance(rng, L, d):
    q, k, v = rng.standard_normal((3, L, d))
    kernel = Tensor(rng.standard_normal((1, d, 3)))
    scores = importance_scores(q, k, kernel, causal=False)[:, 0]
    cscores = importance_scores(q, k, kernel, causal=True)[:, 0]
    return q, k, v, scores, cscores


class TestNeuralSparse:
    def test_degenerates_to_dense_bitwise(self):
        rng = np.random.default_rng(11)
        q, k, v, scores, _ = _scored_instance(rng, 12, 4)
        sparse = neural_sparse_attention(q, k, v, 1000.0, scores).data
        dense = canonical_attention(q, k, v).data
        assert np.array_equal(sparse, dense)

    def test_constant_value_rows(self):
        rng = np.random.default_rng(12)
        q, k, _, scores, _ = _scored_instance(rng, 10, 4)
        v = np.tile([1.0, -2.0, 0.5, 3.0], (10, 1))
        out = neural_sparse_attention(q, k, v, 2.0, scores).data
        npt.assert_allclose(out, v, atol=1e-12)

    def test_selected_match_oracle_lazy_equal_mean(self):
        rng = np.random.default_rng(13)
        q, k, v, scores, _ = _scored_instance(rng, 16, 4)
        out = neural_sparse_attention(q, k, v, 2.0, scores).data
        sel = select_top_queries(scores, 2.0)
        lazy = np.setdiff1d(np.arange(16), sel)
        assert lazy.size > 0
        oracle = dense_attention(q, k, v)
        assert np.abs(out[sel] - oracle[sel]).max() < 1e-10
        assert np.array_equal(out[lazy], np.tile(v.mean(axis=0), (lazy.size, 1)))

    def test_budget_counts_n_times_keys(self):
        rng = np.random.default_rng(14)
        q, k, v, scores, _ = _scored_instance(rng, 20, 4)
        budget = ScoreBudget()
        neural_sparse_attention(q, k, v, 2.0, scores, budget=budget)
        n = top_n_count(20, 2.0)
        assert budget.dot_products_materialized == n * 20
        assert budget.rows_selected == n


class TestMaskedNeuralSparse:
    def test_row_zero_returns_first_value(self):
        rng = np.random.default_rng(15)
        q, k, v, _, cscores = _scored_instance(rng, 8, 4)
        out = masked_neural_sparse_attention(q, k, v, 2.0, cscores).data
        npt.assert_allclose(out[0], v[0], atol=1e-15)

    def test_lazy_rows_are_cumulative_sums(self):
        # scores descending force rows 1.. to rank below their prefix budget at c=1
        v = np.array([[1.0], [2.0], [3.0]])
        q = k = np.zeros((3, 1))
        scores = np.array([3.0, 2.0, 1.0])
        out = masked_neural_sparse_attention(q, k, v, 1.0, scores).data
        sel = select_top_queries_causal(scores, 1.0)
        npt.assert_array_equal(sel, [0])  # rows 1 and 2 are lazy
        npt.assert_array_equal(out, [[1.0], [3.0], [6.0]])

    def test_selected_match_causal_oracle(self):
        rng = np.random.default_rng(16)
        q, k, v, _, cscores = _scored_instance(rng, 12, 4)
        out = masked_neural_sparse_attention(q, k, v, 2.0, cscores).data
        sel = select_top_queries_causal(cscores, 2.0)
        lazy = np.setdiff1d(np.arange(12), sel)
        oracle = dense_attention(q, k, v, causal=True)
        assert np.abs(out[sel] - oracle[sel]).max() < 1e-10
        assert np.array_equal(out[lazy], np.cumsum(v, axis=0)[lazy])

    def test_future_perturbation_leaves_past_rows(self):
        rng = np.random.default_rng(17)
        L, d = 12, 4
        q, k, v = rng.standard_normal((3, L, d))
        kernel = Tensor(rng.standard_normal((1, d, 3)))

        def run(q_, k_, v_):
            cs = importance_scores(q_, k_, kernel, causal=True)[:, 0]
            return masked_neural_sparse_attention(q_, k_, v_, 2.0, cs).data

        base = run(q, k, v)
        t = 4
        for _ in range(10):
            tp = rng.integers(t + 1, L)
            q2, k2, v2 = q.copy(), k.copy(), v.copy()
            q2[tp] += rng.standard_normal(d)
            k2[tp] += rng.standard_normal(d)
            v2[tp] += rng.standard_normal(d)
            assert np.array_equal(run(q2, k2, v2)[: t + 1], base[: t + 1])

    def test_normalized_cumsum_switch(self):
        v = np.array([[2.0], [4.0], [6.0]])
        q = k = np.zeros((3, 1))
        scores = np.array([3.0, 2.0, 1.0])
        out = masked_neural_sparse_attention(q, k, v, 1.0, scores,
                                             cumsum_normalized=True).data
        npt.assert_allclose(out, [[2.0], [3.0], [4.0]], atol=1e-15)


class TestProbSparse:
    def test_degenerates_to_dense(self):
        rng = np.random.default_rng(18)
        q, k, v = rng.standard_normal((3, 12, 4))
        out = prob_sparse_attention(q, k, v, 1000.0, np.random.default_rng(0)).data
        assert np.array_equal(out, canonical_attention(q, k, v).data)

    def test_masked_degenerates_to_causal_dense(self):
        rng = np.random.default_rng(19)
        q, k, v = rng.standard_normal((3, 12, 4))
        out = prob_sparse_attention(q, k, v, 1000.0, np.random.default_rng(0),
                                    masked=True).data
        dense = canonical_attention(q, k, v, mask=causal_mask(12)).data
        assert np.array_equal(out, dense)

    def test_identical_queries_tie_break_lowest(self):
        rng = np.random.default_rng(20)
        k, v = rng.standard_normal((2, 16, 4))
        q = np.tile(rng.standard_normal(4), (16, 1))
        budget = ScoreBudget()
        prob_sparse_attention(q, k, v, 2.0, np.random.default_rng(1), budget=budget)
        n = top_n_count(16, 2.0)
        assert budget.rows_selected == n  # ties resolved, exactly n rows

    def test_selected_rows_match_oracle(self):
        rng = np.random.default_rng(21)
        q, k, v = rng.standard_normal((3, 16, 4))
        budget = ScoreBudget()
        out = prob_sparse_attention(q, k, v, 2.0, np.random.default_rng(7),
                                    budget=budget).data
        oracle = dense_attention(q, k, v)
        lazy_fill = v.mean(axis=0)
        n = top_n_count(16, 2.0)
        matches_oracle = np.abs(out - oracle).max(axis=1) < 1e-10
        matches_fill = np.abs(out - lazy_fill).max(axis=1) == 0.0
        assert matches_oracle.sum() >= n
        assert (matches_oracle | matches_fill).all()

    def test_budget_includes_sampling(self):
        rng = np.random.default_rng(22)
        q, k, v = rng.standard_normal((3, 20, 4))
        budget = ScoreBudget()
        prob_sparse_attention(q, k, v, 2.0, np.random.default_rng(3), budget=budget)
        n = top_n_count(20, 2.0)
        assert budget.dot_products_materialized == 20 * n + n * 20

    def test_perturbing_future_keeps_masked_rows(self):
        rng = np.random.default_rng(23)
        L, d = 16, 4
        q, k, v = rng.standard_normal((3, L, d))
        base = prob_sparse_attention(q, k, v, 2.0, np.random.default_rng(5),
                                     masked=True).data
        t = 6
        for _ in range(10):
            tp = rng.integers(t + 1, L)
            q2, k2, v2 = q.copy(), k.copy(), v.copy()
            q2[tp] += rng.standard_normal(d)
            k2[tp] += rng.standard_normal(d)
            v2[tp] += rng.standard_normal(d)
            out = prob_sparse_attention(q2, k2, v2, 2.0, np.random.default_rng(5),
                                        masked=True).data
            assert np.array_equal(out[: t + 1], base[: t + 1])


class TestMultiHead:
    def _mha(self, kind, d_model=8, n_heads=2, c=5.0, seed=0):
        store = ParamStore()
        cfg = AttentionConfig(n_heads=n_heads, d_model=d_model, c=c, kind=kind)
        return MultiHeadAttention(store, "attn", cfg, np.random.default_rng(seed)), store

    def test_identity_plumbing_matches_raw_kernel(self):
        mha, _ = self._mha("canonical", d_model=4, n_heads=1)
        for w in (mha.w_q, mha.w_k, mha.w_v, mha.w_o):
            w.data[...] = np.eye(4)
        x = np.random.default_rng(24).standard_normal((6, 4))
        out = mha(Tensor(x)).data
        expected = canonical_attention(x, x, x).data
        npt.assert_allclose(out, expected, atol=1e-12)

    def test_neural_sparse_degenerates_to_canonical(self):
        sparse, _ = self._mha("neural_sparse", c=1000.0, seed=5)
        dense, _ = self._mha("canonical", seed=5)
        x = Tensor(np.random.default_rng(25).standard_normal((10, 8)))
        npt.assert_allclose(sparse(x).data, dense(x).data, atol=1e-12)

    def test_zero_value_projection_gives_zeros(self):
        mha, _ = self._mha("canonical")
        mha.w_v.data[...] = 0.0
        x = Tensor(np.random.default_rng(26).standard_normal((5, 8)))
        npt.assert_array_equal(mha(x).data, np.zeros((5, 8)))

    def test_cross_attention_with_sparse_kind_rejected(self):
        mha, _ = self._mha("neural_sparse")
        x = Tensor(np.zeros((5, 8)))
        y = Tensor(np.zeros((7, 8)))
        with pytest.raises(ValueError, match="canonical"):
            mha(x, y)

    def test_config_validation(self):
        with pytest.raises(ValueError, match="divisible"):
            AttentionConfig(n_heads=3, d_model=8)
        with pytest.raises(ValueError, match="kind"):
            AttentionConfig(n_heads=2, d_model=8, kind="mystery")
        with pytest.raises(ValueError, match="c"):
            AttentionConfig(n_heads=2, d_model=8, c=0.5)

    def test_gradients_flow_through_sparse_path(self):
        mha, store = self._mha("neural_sparse", c=2.0)
        x_const = np.random.default_rng(27).standard_normal((10, 8))
        w = np.random.default_rng(28).standard_normal((10, 8))

        def f(params):
            return sum_(mha(Tensor(x_const)) * Tensor(w))

        assert finite_diff_check(f, store) < 1e-4

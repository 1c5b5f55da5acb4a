import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from netgsa import ggm
from netgsa.config import RunConfig
from netgsa.errors import DataError
from netgsa.gsa import (GeneSetCollection, SplitMatrix, backtest, bh_adjust, bh_adjust_partial,
                        classic_gsa, classic_scores, combine_min, gene_t_statistics,
                        median_aggregate, network_split_matrix, rows_from_splits, run_netgsa,
                        run_single_split, shapiro_filter, t_to_z)
from oracles import brute_force_bh


def test_bh_worked_example():
    np.testing.assert_allclose(bh_adjust([0.01, 0.04, 0.03, 0.005]), [0.02, 0.04, 0.04, 0.02])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30))
def test_bh_matches_brute_force(p):
    assert list(bh_adjust(p)) == brute_force_bh(p)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30))
def test_bh_invariants(p):
    adj = bh_adjust(p)
    # m p / m may round one ulp below p
    assert np.all(adj >= np.asarray(p) * (1 - 1e-15))
    assert np.all(adj <= 1.0)
    order = np.argsort(p, kind="stable")
    assert np.all(np.diff(adj[order]) >= 0)


def test_bh_rejects_invalid():
    with pytest.raises(DataError):
        bh_adjust([0.1, np.nan])
    with pytest.raises(DataError):
        bh_adjust([1.2])
    assert bh_adjust([]).size == 0


def test_bh_partial_keeps_nan():
    out = bh_adjust_partial([0.01, np.nan, 0.04])
    assert math.isnan(out[1])
    np.testing.assert_allclose(out[[0, 2]], [0.02, 0.04])


def test_median_aggregate():
    assert median_aggregate([0.1, 0.3, np.nan, 0.2]) == pytest.approx(0.2)
    assert median_aggregate([0.1, 0.4]) == pytest.approx(0.25)
    assert math.isnan(median_aggregate([np.nan]))


def test_gene_set_collection_validation():
    idx = {"a": 0, "b": 1}
    with pytest.raises(DataError):
        GeneSetCollection([("s", ["a"]), ("s", ["b"])], idx)
    with pytest.raises(DataError):
        GeneSetCollection([("s", ["a", "zz"])], idx)
    sets = GeneSetCollection.from_indices({"first": [0, 2], "second": [1]}, 3)
    np.testing.assert_array_equal(sets.columns(0), [0, 2])
    assert sets.subset(["second"]).names == ["second"]
    with pytest.raises(DataError):
        sets.subset(["third"])


def test_t_statistics_match_scipy():
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(8, 5)), rng.normal(1, 2, size=(11, 5))
    t, df = gene_t_statistics(X, Y)
    ref = stats.ttest_ind(Y, X, axis=0)
    np.testing.assert_allclose(t, ref.statistic)
    welch = stats.ttest_ind(Y, X, axis=0, equal_var=False)
    np.testing.assert_allclose(df, welch.df)


def test_zero_variance_gene_scores_zero():
    X = np.column_stack([np.ones(4), [1.0, 2, 3, 4]])
    Y = np.column_stack([np.ones(5), [2.0, 3, 4, 5, 6]])
    t, _ = gene_t_statistics(X, Y)
    assert t[0] == 0.0


def test_t_to_z_tail_equivalence():
    z = t_to_z(np.array([2.0, -40.0]), np.array([10.0, 10.0]))
    assert stats.norm.sf(z[0]) == pytest.approx(stats.t.sf(2.0, 10))
    # the lower tail is mapped without saturating
    assert stats.norm.cdf(z[1]) == pytest.approx(stats.t.cdf(-40.0, 10), rel=1e-9)


def test_classic_four_genes_unit_scores(monkeypatch):
    # four genes with z = 1 give E = sqrt(4) * 1 = 2, two-sided p = 0.0455
    sets = GeneSetCollection.from_indices({"s": [0, 1, 2, 3]}, 4)
    monkeypatch.setattr("netgsa.gsa.t_to_z", lambda t, df: np.ones(4))
    X = np.arange(3.0)[:, None] + np.zeros((3, 4))
    p = classic_scores(X, X + 1.0, sets)
    assert p[0] == pytest.approx(2 * stats.norm.sf(2.0))
    assert p[0] == pytest.approx(0.0455, abs=1e-4)


def test_classic_detects_mean_shift():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(20, 10))
    Y = rng.normal(size=(20, 10))
    Y[:, :5] += 1.5
    p = classic_gsa(X, Y, GeneSetCollection.from_indices({"up": range(5), "flat": range(5, 10)}, 10))
    assert p[0] < 0.01 and p[1] > 0.05


def test_combine_min():
    out = combine_min([0.1, np.nan, 0.5], [0.2, 0.3, np.nan])
    np.testing.assert_array_equal(out, [0.1, 0.3, 0.5])
    with pytest.raises(DataError):
        combine_min([0.1], [0.1, 0.2])


def test_shapiro_filter_drops_skewed_gene():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(60, 4))
    Y = rng.normal(size=(60, 4))
    X[:, 2] = rng.exponential(size=60) ** 3
    keep = shapiro_filter(X, Y, 0.01)
    assert 2 not in keep and {0, 1, 3} <= set(keep)
    with pytest.raises(DataError):
        shapiro_filter(X[:2], Y)


def test_rows_from_splits_failure_rule():
    sets = GeneSetCollection.from_indices({"a": [0, 1], "b": [1, 2]}, 3)
    adj = np.array([[0.1, np.nan], [0.2, np.nan], [0.3, 0.4]])
    rows = rows_from_splits(sets, SplitMatrix(adj, adj))
    assert rows[0].p_net_median == pytest.approx(0.2)
    assert math.isnan(rows[1].p_net_median) and rows[1].failed_split_count == 2


def _small_problem(seed=3):
    rng = np.random.default_rng(seed)
    X = ggm.standardize(rng.standard_normal((30, 12)))
    Y = ggm.standardize(rng.standard_normal((30, 12)))
    sets = GeneSetCollection.from_indices({"s0": range(0, 6), "s1": range(6, 12), "s2": range(3, 9)}, 12)
    return X, Y, sets


def test_network_split_matrix_threads_and_cache_invariant():
    X, Y, sets = _small_problem()
    cfg = RunConfig(splits=3)
    base = network_split_matrix(X, Y, sets, cfg, 3, 7)
    threaded = network_split_matrix(X, Y, sets, RunConfig(splits=3, threads=3), 3, 7)
    cache = {}
    cached = network_split_matrix(X, Y, sets, cfg, 3, 7, cache=cache)
    again = network_split_matrix(X, Y, sets, cfg, 3, 7, cache=cache)
    for other in (threaded, cached, again):
        np.testing.assert_array_equal(base.raw, other.raw)
    assert len(cache) == 9
    for b in range(3):
        np.testing.assert_array_equal(base.adjusted[b], bh_adjust_partial(base.raw[b]))


def test_run_netgsa_rows_sorted_and_seeded():
    X, Y, sets = _small_problem()
    rows = run_netgsa(X, Y, sets, RunConfig(splits=3, seed=1))
    p = [r.p_net_median for r in rows]
    assert p == sorted(p)
    assert rows == run_netgsa(X, Y, sets, RunConfig(splits=3, seed=1))
    single = run_single_split(X, Y, sets, RunConfig(), 1)
    assert single.shape == (3,)


def test_backtest_counts_per_set():
    X, Y, sets = _small_problem()
    counts = backtest(X, Y, sets.subset(["s0"]), RunConfig(splits=3), repeats=2, rng=0)
    assert set(counts) == {"s0"}
    assert 0 <= counts["s0"] <= 2


def test_bh_trivial_vectors():
    np.testing.assert_array_equal(bh_adjust([1.0, 1.0, 1.0]), [1.0, 1.0, 1.0])
    np.testing.assert_array_equal(bh_adjust([0.37]), [0.37])


def test_single_set_adjusted_equals_raw():
    X, Y, sets = _small_problem()
    mat = network_split_matrix(X, Y, sets.subset(["s1"]), RunConfig(splits=2), 2, 5)
    np.testing.assert_array_equal(mat.adjusted, mat.raw)


def test_one_split_reduces_to_single_split():
    X, Y, sets = _small_problem()
    rows = run_netgsa(X, Y, sets, RunConfig(splits=1), master_seed=8)
    single = run_single_split(X, Y, sets, RunConfig(), 8)
    assert {r.name: r.p_net_median for r in rows} == dict(zip(sets.names, single.tolist()))


def test_median_convention():
    assert median_aggregate([0.2, 0.4, 0.6]) == pytest.approx(0.4)
    assert median_aggregate([0.2, 0.4]) == pytest.approx(0.3)


def test_identical_conditions_give_zero_scores():
    X = np.random.default_rng(4).standard_normal((10, 6))
    t, _ = gene_t_statistics(X, X.copy())
    np.testing.assert_array_equal(t, 0.0)
    sets = GeneSetCollection.from_indices({"a": range(3), "b": range(3, 6)}, 6)
    np.testing.assert_array_equal(classic_gsa(X, X.copy(), sets), [1.0, 1.0])


def test_combine_min_cases():
    np.testing.assert_array_equal(combine_min([0.3, 0.01], [0.02, 0.5]), [0.02, 0.01])
    np.testing.assert_array_equal(combine_min([0.2, 0.7], [0.2, 0.7]), [0.2, 0.7])
    np.testing.assert_array_equal(combine_min([0.2, 0.7], [np.nan, np.nan]), [0.2, 0.7])


def test_shapiro_filter_level_on_normal_genes():
    kept = [shapiro_filter(*np.random.default_rng(s).standard_normal((2, 100, 50))).size
            for s in range(20)]
    assert np.sum(kept) >= 0.95 * 20 * 50


def test_shapiro_filter_rejects_chi_square_gene():
    dropped = 0
    for s in range(50):
        rng = np.random.default_rng(s)
        X, Y = rng.standard_normal((100, 5)), rng.standard_normal((100, 5))
        X[:, 0] = rng.standard_normal(100) ** 2
        dropped += 0 not in shapiro_filter(X, Y)
    assert dropped >= 45


def test_shapiro_filter_keeps_normal_quantiles():
    q = stats.norm.ppf((np.arange(1, 31) - 0.375) / 30.25)[:, None]
    np.testing.assert_array_equal(shapiro_filter(q, q), [0])


def test_backtest_is_deterministic():
    X, Y, sets = _small_problem()
    cfg = RunConfig(splits=2)
    assert backtest(X, Y, sets, cfg, repeats=2, rng=5) == backtest(X, Y, sets, cfg, repeats=2, rng=5)


def test_overlapping_sets_share_genes():
    X, Y, _ = _small_problem()
    sets = GeneSetCollection.from_indices({"a": range(0, 6), "b": range(3, 9)}, 12)
    mat = network_split_matrix(X, Y, sets, RunConfig(splits=1), 1, 2, keep_networks=["a", "b"])
    assert mat.networks["a"][0][0].shape == mat.networks["b"][0][0].shape == (6, 6)


def test_single_split_null_calibration_on_geneset_generator():
    from netgsa.simulation import gen_genesets_sim

    quiet = 0
    for run in range(50):
        sim = gen_genesets_sim(1.0, None, np.random.SeedSequence((404, run)), mean_shift=False)
        p = run_single_split(ggm.standardize(sim.X), ggm.standardize(sim.Y), sim.sets, RunConfig(), run)
        quiet += not np.any(np.nan_to_num(p, nan=1.0) < 0.05)
    assert quiet >= 45

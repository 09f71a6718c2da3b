import warnings

import numpy as np
import pytest

from conformal_kit.core import Dataset, Interval, Labels, Mask, ValidationError
from conformal_kit.evaluation import (
    CoverageReport,
    EmptyStratumWarning,
    RiskReport,
    coverage,
    coverage_over_splits,
    covered_flags,
    equal_frequency_bins,
    fsc,
    fsc_from_covered,
    risk_over_splits,
    set_size,
    size_bin_ids,
    size_report,
    ssc,
    ssc_from_covered,
    stratified_coverage,
)
from conformal_kit.rcps import LossTable
from conformal_kit.scores import get_family

FULL = Labels((0, 1, 2))
EMPTY = Labels(())


def test_coverage_counting():
    labels = list(range(10))
    sets = [Labels((i,)) for i in range(9)] + [Labels((0,))]
    assert coverage(labels, sets) == pytest.approx(0.9)


def test_coverage_full_and_empty():
    assert coverage([0, 1, 2], [FULL] * 3) == 1.0
    assert coverage([0, 1, 2], [EMPTY] * 3) == 0.0
    assert coverage([0.5], [Interval(1, 0)]) == 0.0


def test_coverage_masks():
    truth = Mask(np.array([[1, 0], [0, 0]]))
    assert covered_flags([truth, truth], [Mask(np.ones((2, 2))), Mask(np.zeros((2, 2)))]).tolist() == [True, False]


def test_coverage_errors():
    with pytest.raises(ValidationError):
        coverage([0, 1], [FULL])
    with pytest.raises(ValidationError):
        coverage([], [])


def test_set_size():
    assert set_size(FULL) == 3 and set_size(Interval(1, 3.5)) == 2.5 and set_size(Interval(2, 1)) == 0
    assert set_size(Mask(np.eye(2))) == 2
    with pytest.raises(TypeError):
        set_size({1, 2})


def _groups_with_coverage(cov_a, cov_b, n=100):
    covered = np.r_[np.arange(n) < cov_a * n, np.arange(n) < cov_b * n]
    groups = np.r_[np.zeros(n, int), np.ones(n, int)]
    return covered, groups


def test_fsc_min_of_groups():
    covered, groups = _groups_with_coverage(0.95, 0.80)
    assert fsc_from_covered(covered, groups) == pytest.approx(0.80)
    labels = [0] * covered.size
    sets = [Labels((0,)) if c else EMPTY for c in covered]
    assert fsc(labels, sets, groups) == pytest.approx(0.80)


def test_fsc_single_group_is_overall():
    covered = np.arange(50) % 7 != 0
    assert fsc_from_covered(covered, np.zeros(50, int)) == pytest.approx(covered.mean())


def test_fsc_empty_declared_group_warns():
    covered, groups = _groups_with_coverage(0.9, 0.7)
    with pytest.warns(EmptyStratumWarning):
        assert fsc_from_covered(covered, groups, all_groups=[0, 1, 2]) == pytest.approx(0.7)


def test_stratified_bounds_pooled(rng):
    covered = rng.uniform(size=500) < 0.8
    groups = rng.integers(0, 4, size=500)
    per = stratified_coverage(covered, groups)
    assert min(per.values()) <= covered.mean() <= max(per.values())


class TestSizeBins:
    def test_default_three_bins(self):
        assert size_bin_ids([0, 1, 2, 3, 7]).tolist() == [0, 0, 1, 2, 2]

    def test_custom_edges(self):
        assert size_bin_ids([0.5, 1.5, 2.5], edges=(0, 1, 2)).tolist() == [0, 1, 2]

    def test_bad_edges(self):
        with pytest.raises(ValidationError):
            size_bin_ids([1], edges=(2, 1))

    def test_ssc_min_over_bins(self):
        # bins {1}, {2}, {3+} with coverages 0.92 / 0.88 / 0.90
        cov = np.r_[np.arange(100) < 92, np.arange(100) < 88, np.arange(100) < 90]
        sizes = np.repeat([1, 2, 3], 100)
        assert ssc_from_covered(cov, sizes) == pytest.approx(0.88)

    def test_ssc_constant_size_is_overall(self):
        labels = [0, 1, 2, 0]
        sets = [Labels((0, 1))] * 4
        assert ssc(labels, sets) == coverage(labels, sets)


def test_equal_frequency_bins(rng):
    b = equal_frequency_bins(rng.normal(size=1000), 4)
    assert sorted(np.bincount(b).tolist()) == [250] * 4


def test_size_report_counts_sum():
    r = size_report([1, 1, 2, 3, 3, 3])
    assert r.counts.sum() == 6 and r.mean == pytest.approx(13 / 6)
    assert size_report([0.5, 1.2, 3.3]).counts.sum() == 3


def test_coverage_report_validation():
    with pytest.raises(ValidationError):
        CoverageReport(np.array([]), 10, 0.1)
    with pytest.raises(ValidationError):
        CoverageReport(np.array([1.2]), 10, 0.1)
    r = CoverageReport(np.array([0.8, 0.9, 1.0]), 10, 0.1)
    assert r.summary()["mean"] == pytest.approx(0.9) and r.min == 0.8 and r.max == 1.0


def _softmax_dataset(rng, n=400, K=5):
    logits = rng.normal(size=(n, K)) * 2
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    y = np.array([rng.choice(K, p=row) for row in p])
    return Dataset("softmax", p, y)


class TestCoverageOverSplits:
    def test_single_split_equals_coverage(self, rng):
        from conformal_kit._runtime import make_rng
        from conformal_kit.calibrate import conformal_quantile

        ds = _softmax_dataset(rng)
        rep = coverage_over_splits(ds, "lac", 0.1, n_splits=1, seed=5)
        perm = make_rng(5, 0).permutation(len(ds))
        cal, val = perm[:200], perm[200:]
        fam = get_family("lac")
        q = conformal_quantile(fam.score(ds.outputs[cal], ds.labels[cal]), 0.1)
        assert rep.n_splits == 1 and rep.thresholds[0] == q
        assert rep.per_split_coverage[0] == fam.covered(ds.outputs[val], ds.labels[val], q).mean()

    def test_deterministic_and_thread_independent(self, rng):
        ds = _softmax_dataset(rng)
        a = coverage_over_splits(ds, "aps", 0.1, n_splits=12, seed=1, n_jobs=1)
        b = coverage_over_splits(ds, "aps", 0.1, n_splits=12, seed=1, n_jobs=3)
        np.testing.assert_array_equal(a.per_split_coverage, b.per_split_coverage)
        np.testing.assert_array_equal(a.thresholds, b.thresholds)

    def test_kind_mismatch(self, rng):
        with pytest.raises(ValidationError):
            coverage_over_splits(_softmax_dataset(rng), "cqr", 0.1)

    def test_insufficient_data(self, rng):
        with pytest.raises(ValidationError):
            coverage_over_splits(_softmax_dataset(rng, n=1), "lac", 0.1)


def test_risk_over_splits_reports(rng):
    losses = np.sort(rng.uniform(size=(300, 5)), axis=1)[:, ::-1]
    losses[:, -1] = 0
    table = LossTable(np.linspace(0, 1, 5), losses)
    rep = risk_over_splits(table, 0.4, 0.1, n_cal=150, n_splits=20, seed=2, sizes=np.tile(np.arange(5.0), (300, 1)))
    assert isinstance(rep, RiskReport) and rep.n_splits == 20 and rep.n_val == 150
    s = rep.summary()
    assert 0 <= s["violation_rate"] <= 1 and s["mean_size"] >= 0
    again = risk_over_splits(table, 0.4, 0.1, n_cal=150, n_splits=20, seed=2, n_jobs=2)
    np.testing.assert_array_equal(rep.per_split_risk, again.per_split_risk)


def test_thread_env(monkeypatch):
    from conformal_kit._runtime import thread_count

    monkeypatch.delenv("CONFORMAL_KIT_THREADS", raising=False)
    assert thread_count() == 1
    monkeypatch.setenv("CONFORMAL_KIT_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.setenv("CONFORMAL_KIT_THREADS", "0")
    assert thread_count() >= 1
    assert thread_count(2) == 2

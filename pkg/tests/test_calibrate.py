import math

import numpy as np
import pytest

from conformal_kit.calibrate import JITTER_SCALE, calibrate, conformal_quantile, quantile_index
from conformal_kit.core import ScoreRecord, ValidationError

FIVE = [0.1, 0.3, 0.5, 0.7, 0.9]


@pytest.mark.parametrize("alpha, expected", [(0.5, 0.5), (0.2, 0.9)])
def test_five_scores(alpha, expected):
    assert conformal_quantile(FIVE, alpha) == expected


def test_single_score_is_vacuous():
    assert conformal_quantile([0.4], 0.1) == math.inf


@pytest.mark.parametrize("n, alpha, k", [(500, 0.1, 451), (1000, 0.1, 901), (5, 0.5, 3), (5, 0.2, 5), (1, 0.1, 2)])
def test_quantile_index(n, alpha, k):
    assert quantile_index(n, alpha) == k


def test_decimal_alpha_is_exact():
    # (n + 1)(1 - 0.3) is exactly 7 for n = 9; float arithmetic gives 7.000000000000001
    assert quantile_index(9, 0.3) == 7
    assert quantile_index(19, 0.05) == 19


def test_order_statistic_of_unsorted_input(rng):
    s = rng.permutation(np.arange(500.0))
    assert conformal_quantile(s, 0.1) == 450.0  # 451st smallest


def test_ties_kept():
    assert conformal_quantile([1.0, 1.0, 1.0, 2.0], 0.5) == 1.0


@pytest.mark.parametrize("bad", [[], [math.nan], [math.inf, 1.0]])
def test_rejects_bad_scores(bad):
    with pytest.raises(ValidationError):
        conformal_quantile(bad, 0.1)


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5])
def test_rejects_bad_alpha(alpha):
    with pytest.raises(ValidationError):
        conformal_quantile(FIVE, alpha)


class TestCalibrate:
    def test_artifact_fields(self, rng):
        s = rng.uniform(size=500)
        art = calibrate([ScoreRecord(float(v)) for v in s], 0.1, "lac")
        assert art.method == "lac" and art.alpha == 0.1 and art.n == 500
        assert art.threshold == np.sort(s)[450]
        assert art.metadata["k"] == "451"
        assert "vacuous" not in art.metadata

    def test_accepts_plain_scores(self):
        assert calibrate(FIVE, 0.5, "aps").threshold == 0.5

    def test_vacuous_flag(self):
        art = calibrate([0.4], 0.1, "lac")
        assert art.threshold == math.inf and art.metadata["vacuous"] == "true"

    def test_jitter_needs_rng(self):
        with pytest.raises(ValidationError):
            calibrate(FIVE, 0.5, "lac", jitter=True)

    def test_jitter_is_tiny_and_seeded(self):
        a = calibrate(FIVE, 0.5, "lac", jitter=True, rng=np.random.default_rng(3))
        b = calibrate(FIVE, 0.5, "lac", jitter=True, rng=np.random.default_rng(3))
        assert a.threshold == b.threshold
        assert abs(a.threshold - 0.5) <= JITTER_SCALE

    def test_metadata_merged(self):
        art = calibrate(FIVE, 0.5, "lac", metadata={"source": "x.csv"})
        assert art.metadata["source"] == "x.csv" and art.metadata["k"] == "3"


def test_exchangeability_coverage(rng):
    """P(s_test <= q) lands in [1 - alpha, 1 - alpha + 1/(n + 1)] for continuous scores."""
    n, alpha, trials = 20, 0.1, 20000
    s = rng.uniform(size=(trials, n + 1))
    q = np.array([conformal_quantile(row[:n], alpha) for row in s])
    freq = np.mean(s[:, n] <= q)
    # k = 19 of 21 ranks, so the exact probability is 19/21
    assert freq == pytest.approx(19 / 21, abs=4 * math.sqrt(0.1 / trials))

import numpy as np
import pytest

from peakcast.core import std_normal_quantile
from peakcast.metrics import (alarm_scores, point_metrics, reliability,
                              sharpness)

LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)


class TestPointMetrics:
    def test_perfect(self):
        pm = point_metrics([1, 2, 3], [1, 2, 3])
        assert (pm.rmse, pm.mae, pm.bias) == (0.0, 0.0, 0.0)

    def test_constant_offset(self):
        pm = point_metrics([3, 4, 5], [1, 2, 3])
        assert (pm.rmse, pm.mae, pm.bias) == (2.0, 2.0, 2.0)

    def test_hand_case(self):
        pm = point_metrics([0, 4], [0, 0])
        assert pm.rmse == pytest.approx(np.sqrt(8))
        assert pm.mae == 2.0
        assert pm.bias == 2.0

    def test_rmse_dominates_bias(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            p, o = rng.normal(size=20), rng.normal(size=20)
            pm = point_metrics(p, o)
            assert pm.rmse >= abs(pm.bias) - 1e-12

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            point_metrics([1], [1, 2])


class TestReliability:
    def test_calibrated_simulation(self):
        # forecasts equal the true conditional distribution
        rng = np.random.default_rng(7)
        n = 4000
        mu = rng.normal(0, 2, n)
        sigma = rng.uniform(0.5, 2.0, n)
        obs = mu + sigma * rng.standard_normal(n)
        z = std_normal_quantile(np.asarray(LEVELS))
        q = mu[:, None] + sigma[:, None] * z[None, :]
        table = reliability(q, LEVELS, obs)
        for tau, cov in zip(table.levels, table.coverage):
            se = np.sqrt(tau * (1 - tau) / n)
            assert abs(cov - tau) <= 3 * se

    def test_huge_forecasts_cover_everything(self):
        q = np.full((10, len(LEVELS)), 1e12)
        table = reliability(q, LEVELS, np.zeros(10))
        assert table.coverage == (1.0,) * len(LEVELS)

    def test_low_forecasts_cover_nothing(self):
        q = np.full((10, len(LEVELS)), -1e12)
        table = reliability(q, LEVELS, np.zeros(10))
        assert table.coverage == (0.0,) * len(LEVELS)

    def test_monotone_for_monotone_forecasts(self):
        rng = np.random.default_rng(1)
        q = np.sort(rng.normal(size=(200, len(LEVELS))), axis=1)
        table = reliability(q, LEVELS, rng.normal(size=200))
        assert np.all(np.diff(table.coverage) >= 0)


class TestSharpness:
    def test_degenerate_zero_width(self):
        q = np.ones((5, len(LEVELS)))
        widths = sharpness(q, LEVELS)
        assert widths["0.05-0.95"] == 0.0
        assert widths["0.25-0.75"] == 0.0

    def test_normal_width(self):
        z = std_normal_quantile(np.asarray(LEVELS))
        q = np.tile(z, (3, 1))
        widths = sharpness(q, LEVELS)
        assert widths["0.05-0.95"] == pytest.approx(2 * 1.6448536269514722,
                                                    abs=1e-9)

    def test_scales_with_sigma(self):
        z = std_normal_quantile(np.asarray(LEVELS))
        w1 = sharpness(np.tile(z, (3, 1)), LEVELS)["0.05-0.95"]
        w3 = sharpness(np.tile(3 * z, (3, 1)), LEVELS)["0.05-0.95"]
        assert w3 == pytest.approx(3 * w1)

    def test_unknown_pair(self):
        with pytest.raises(ValueError):
            sharpness(np.ones((2, len(LEVELS))), LEVELS, pairs=((0.1, 0.9),))


class TestAlarmScores:
    def test_hand_case(self):
        sc = alarm_scores([0.6, 0.4], [1, 0], 0.5)
        assert (sc.tp, sc.fp, sc.fn, sc.tn) == (1, 0, 0, 1)
        assert sc.auc == 1.0

    def test_perfect_ranking(self):
        p = [0.9, 0.8, 0.2, 0.1]
        sc = alarm_scores(p, [1, 1, 0, 0], 0.5)
        assert sc.auc == 1.0

    def test_random_probabilities_auc_half(self):
        rng = np.random.default_rng(9)
        n = 4000
        p = rng.uniform(size=n)
        labels = rng.uniform(size=n) < 0.3
        sc = alarm_scores(p, labels, 0.5)
        assert sc.auc == pytest.approx(0.5, abs=0.05)

    def test_counts_partition(self):
        rng = np.random.default_rng(2)
        p = rng.uniform(size=100)
        labels = rng.uniform(size=100) < 0.4
        sc = alarm_scores(p, labels, 0.35)
        assert sc.tp + sc.fn == labels.sum()
        assert sc.fp + sc.tn == (~labels).sum()

    def test_auc_monotone_transform_invariant(self):
        rng = np.random.default_rng(5)
        p = rng.uniform(0.01, 0.99, size=200)
        labels = rng.uniform(size=200) < 0.5
        a1 = alarm_scores(p, labels, 0.5).auc
        a2 = alarm_scores(p**3, labels, 0.5).auc
        a3 = alarm_scores(np.log(p), labels, 0.5).auc
        assert a1 == pytest.approx(a2, abs=1e-12)
        assert a1 == pytest.approx(a3, abs=1e-12)

    def test_degenerate_labels(self):
        assert alarm_scores([0.2, 0.8], [0, 0], 0.5).auc is None
        assert alarm_scores([0.2, 0.8], [1, 1], 0.5).auc is None

    def test_strict_inequality_rule(self):
        sc = alarm_scores([0.5], [1], 0.5)
        assert sc.tp == 0 and sc.fn == 1

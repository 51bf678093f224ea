import numpy as np
import pandas as pd
import pytest
from scipy import stats

from peakcast.features import read_calendar_csv, read_series_csv
from peakcast.synth import (SynthConfig, conditional_log_std, generate,
                            write_dataset)


class TestConfig:
    def test_defaults_valid(self):
        cfg = SynthConfig()
        assert cfg.days == 365

    def test_rejects_short_span(self):
        with pytest.raises(ValueError):
            SynthConfig(days=10)

    def test_rejects_explosive_ar(self):
        with pytest.raises(ValueError):
            SynthConfig(ar_coefficient=1.0)

    def test_stationary_std_formula(self):
        cfg = SynthConfig(noise_scale=0.3, ar_coefficient=0.6)
        assert conditional_log_std(cfg) == pytest.approx(0.3 / np.sqrt(0.64))


class TestGenerate:
    def test_shapes_and_index(self):
        no2, o3, exo, cal = generate(SynthConfig(days=60, seed=1))
        assert len(no2.data) == 60 * 24
        assert no2.data.index.equals(o3.data.index)
        assert no2.data.index.equals(exo.data.index)
        assert no2.data.index.freqstr in ("h", "H")

    def test_seed_determinism(self):
        a = generate(SynthConfig(days=60, seed=9))
        b = generate(SynthConfig(days=60, seed=9))
        for sa, sb in zip(a[:3], b[:3]):
            pd.testing.assert_series_equal(sa.data, sb.data)
        pd.testing.assert_frame_equal(a[3], b[3])

    def test_different_seeds_differ(self):
        a = generate(SynthConfig(days=60, seed=1))[0]
        b = generate(SynthConfig(days=60, seed=2))[0]
        assert not np.allclose(a.data.to_numpy(), b.data.to_numpy())

    def test_zero_amplitudes_give_constant_series(self):
        cfg = SynthConfig(days=60, diurnal_amplitude=0.0,
                          weekly_amplitude=0.0, noise_scale=0.0,
                          exo_coupling=0.0, peak_rate_per_day=0.0)
        no2 = generate(cfg)[0].data.to_numpy()
        assert np.allclose(no2, np.exp(cfg.base_log_level))

    def test_strictly_positive(self):
        no2, o3, exo, cal = generate(SynthConfig(days=90, seed=3))
        assert (no2.data > 0).all()
        assert (o3.data > 0).all()

    def test_raw_right_skewed_log_near_symmetric(self):
        no2 = generate(SynthConfig(days=365, seed=42))[0]
        raw = no2.data.to_numpy()
        assert stats.skew(raw) > 0.5
        assert abs(stats.skew(np.log(raw))) < 0.5

    def test_diurnal_cycle_present(self):
        no2 = generate(SynthConfig(days=365, seed=42))[0].data
        by_hour = np.log(no2).groupby(no2.index.hour).mean()
        assert by_hour.max() - by_hour.min() > 0.3

    def test_occasional_exceedances(self):
        no2 = generate(SynthConfig(days=365, seed=42))[0].data.to_numpy()
        frac = np.mean(no2 > 180.0)
        assert 0.0 < frac < 0.05

    def test_calendar_covers_series_with_margin(self):
        no2, _, _, cal = generate(SynthConfig(days=60, seed=4))
        days = pd.DatetimeIndex(pd.Series(cal.index))
        assert days.min() < no2.data.index.min().tz_localize(None)
        assert days.max() > no2.data.index.max().tz_localize(None)
        assert set(cal.columns) == {
            "bank_holiday", "heavy_traffic", "school_holiday"}


class TestWriteDataset:
    def test_round_trip(self, tmp_path):
        cfg = SynthConfig(days=45, seed=6)
        paths = write_dataset(cfg, tmp_path)
        no2_direct = generate(cfg)[0]
        no2_back = read_series_csv(paths["no2"])
        np.testing.assert_allclose(no2_back.data.to_numpy(),
                                   no2_direct.data.to_numpy(), rtol=1e-12)
        cal = read_calendar_csv(paths["calendar"])
        assert {"bank_holiday", "heavy_traffic",
                "school_holiday"} <= set(cal.columns)

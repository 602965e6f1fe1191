"""Exogenous data: ingestion validation, synthesis determinism, drift, splits."""

import numpy as np
import pytest

from offgrid.data import (
    DataError,
    DriftSpec,
    ExogenousSeries,
    SynthParams,
    apply_drift,
    load_series,
    save_series,
    slice_steps,
    split,
    synth_series,
)


def write_csv(path, rows, header="timestamp,load_kw,pv_kw"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")


class TestLoadSeries:
    def test_well_formed(self, tmp_path):
        p = tmp_path / "ok.csv"
        write_csv(
            p,
            [
                "2016-01-01T00:00:00,10.0,0.0",
                "2016-01-01T01:00:00,11.5,2.0",
                "2016-01-01T02:00:00,9.0,5.5",
            ],
        )
        s = load_series(p)
        assert len(s) == 3
        assert s.load_kw.tolist() == [10.0, 11.5, 9.0]

    def test_negative_value_names_row(self, tmp_path):
        p = tmp_path / "neg.csv"
        write_csv(p, ["2016-01-01T00:00:00,10.0,0.0", "2016-01-01T01:00:00,-1.0,0.0"])
        with pytest.raises(DataError, match="row 1"):
            load_series(p)

    def test_missing_hour_rejected(self, tmp_path):
        rows = [f"2016-01-01T{h:02d}:00:00,5.0,0.0" for h in range(24) if h != 7]
        p = tmp_path / "gap.csv"
        write_csv(p, rows)
        with pytest.raises(DataError, match="non-constant"):
            load_series(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="cannot open"):
            load_series(tmp_path / "absent.csv")

    def test_malformed_row(self, tmp_path):
        p = tmp_path / "bad.csv"
        write_csv(p, ["2016-01-01T00:00:00,abc,0.0"])
        with pytest.raises(DataError, match="malformed row 0"):
            load_series(p)

    def test_missing_column(self, tmp_path):
        p = tmp_path / "cols.csv"
        p.write_text("timestamp,load_kw\n2016-01-01T00:00:00,1.0\n")
        with pytest.raises(DataError, match="missing columns"):
            load_series(p)

    def test_roundtrip_bit_identical(self, tmp_path):
        s = synth_series(SynthParams(seed=3, days=4))
        p = tmp_path / "rt.csv"
        save_series(p, s)
        back = load_series(p)
        assert np.array_equal(back.load_kw, s.load_kw)
        assert np.array_equal(back.pv_kw, s.pv_kw)
        assert np.array_equal(back.timestamps, s.timestamps)


class TestSynthSeries:
    def test_deterministic(self):
        a = synth_series(SynthParams(seed=7, days=20))
        b = synth_series(SynthParams(seed=7, days=20))
        assert np.array_equal(a.load_kw, b.load_kw)
        assert np.array_equal(a.pv_kw, b.pv_kw)

    def test_different_seeds_differ(self):
        a = synth_series(SynthParams(seed=1, days=20))
        b = synth_series(SynthParams(seed=2, days=20))
        assert not np.array_equal(a.load_kw, b.load_kw)

    def test_night_pv_is_zero(self):
        s = synth_series(SynthParams(seed=0, days=10, sunrise_hour=6, sunset_hour=18))
        hod = np.arange(len(s)) % 24
        night = (hod < 6) | (hod >= 18)
        assert np.all(s.pv_kw[night] == 0.0)

    def test_no_seasonality_no_noise_repeats_daily_profile(self):
        p = SynthParams(seed=0, days=5, pv_seasonal_amp=0.0, load_noise_std=0.0, pv_noise_frac=0.0)
        s = synth_series(p)
        day0 = s.pv_kw[:24]
        for d in range(1, 5):
            assert np.allclose(s.pv_kw[24 * d : 24 * (d + 1)], day0)

    def test_nameplate_respected(self):
        s = synth_series(SynthParams(seed=4, days=400, pv_peak_kw=120.0))
        assert s.pv_kw.max() <= 120.0

    def test_winter_below_summer(self):
        s = synth_series(SynthParams(seed=0, days=365, pv_noise_frac=0.0, pv_seasonal_amp=0.6))
        daily = s.pv_kw.reshape(365, 24).mean(axis=1)
        summer = daily[:30].mean()  # day 0 starts at the seasonal peak
        winter = daily[170:200].mean()
        assert winter < summer

    def test_invalid_params(self):
        with pytest.raises(DataError):
            SynthParams(ar_coeff=1.0)
        with pytest.raises(DataError):
            SynthParams(days=0)


class TestDrift:
    def test_zero_spec_identity(self):
        s = synth_series(SynthParams(seed=2, days=5))
        out = apply_drift(s, DriftSpec(0.0, 0.0))
        assert np.array_equal(out.load_kw, s.load_kw)
        assert np.array_equal(out.pv_kw, s.pv_kw)

    def test_load_growth_hand_value(self):
        n = 200
        ts = np.datetime64("2016-01-01T00:00", "s") + np.arange(n) * np.timedelta64(1, "h")
        s = ExogenousSeries(ts, np.full(n, 10.0), np.zeros(n))
        out = apply_drift(s, DriftSpec(load_growth_per_step=0.001))
        assert out.load_kw[100] == pytest.approx(11.0)

    def test_multiplier_collapse_rejected(self):
        s = synth_series(SynthParams(seed=2, days=10))
        with pytest.raises(DataError, match="multiplier"):
            apply_drift(s, DriftSpec(pv_decay_per_step=0.02))


class TestSplit:
    def test_full_span_identity(self):
        s = synth_series(SynthParams(seed=1, days=4))
        (out,) = split(s, [(s.timestamps[0], s.timestamps[-1])])
        assert np.array_equal(out.load_kw, s.load_kw)

    def test_partition_lengths_sum(self):
        s = synth_series(SynthParams(seed=1, days=12))
        mid = s.timestamps[8 * 24 - 1]
        after = s.timestamps[8 * 24]
        parts = split(s, [(s.timestamps[0], mid), (after, s.timestamps[-1])])
        assert len(parts[0]) + len(parts[1]) == len(s)
        assert len(parts[0]) == 8 * 24

    def test_out_of_range_rejected(self):
        s = synth_series(SynthParams(seed=1, days=2))
        beyond = s.timestamps[-1] + np.timedelta64(1, "h")
        with pytest.raises(DataError, match="outside"):
            split(s, [(s.timestamps[0], beyond)])

    def test_slice_steps(self):
        s = synth_series(SynthParams(seed=1, days=2))
        out = slice_steps(s, 5, 29)
        assert len(out) == 24
        assert np.array_equal(out.load_kw, s.load_kw[5:29])
        with pytest.raises(DataError):
            slice_steps(s, 40, 20)


class TestInvariants:
    def test_series_validation(self):
        ts = np.datetime64("2016-01-01T00:00", "s") + np.arange(3) * np.timedelta64(1, "h")
        with pytest.raises(DataError):
            ExogenousSeries(ts, np.array([1.0, -2.0, 3.0]), np.zeros(3))
        with pytest.raises(DataError):
            ExogenousSeries(ts, np.array([1.0, np.nan, 3.0]), np.zeros(3))
        with pytest.raises(DataError):
            ExogenousSeries(ts[::-1], np.ones(3), np.zeros(3))

import numpy as np
import pytest

from timecnn.data import (
    SeriesDataset,
    SplitSpec,
    apply_scaler,
    fit_scaler,
    inject_noise,
    invert_scaler,
    load_csv,
    save_csv,
    sign_schedule,
    split,
    split_borders,
    synth_dynamic_corr,
    window_arrays,
    windows,
)
from timecnn.errors import ConfigError, DataError
from timecnn.numeric import make_rng

from oracles import pearson


def ds_of(values, name="t"):
    values = np.asarray(values, dtype=float)
    return SeriesDataset(name, values, tuple(f"c{j}" for j in range(values.shape[1])))


class TestLoadCsv:
    def test_plain(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("a,b\n1,2\n3,4\n5,6.5\n")
        ds = load_csv(p, has_date_column=False)
        assert ds.values.tolist() == [[1, 2], [3, 4], [5, 6.5]]
        assert ds.column_names == ("a", "b")

    def test_date_column_skipped(self, tmp_path):
        p = tmp_path / "b.csv"
        p.write_text("date,OT,HUFL\n2016-07-01 00:00:00,1.5,2\n2016-07-01 01:00:00,3,4\n")
        ds = load_csv(p)
        assert ds.n_vars == 2 and ds.rows == 2 and ds.column_names == ("OT", "HUFL")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_csv(tmp_path / "nope.csv")

    def test_ragged(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text("a,b\n1,2\n3\n")
        with pytest.raises(DataError, match=":3:"):
            load_csv(p, has_date_column=False)

    def test_unparseable_cell_location(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b\n1,2\n3,oops\n")
        with pytest.raises(DataError, match=r":3: cannot parse 'oops' in column 'b'"):
            load_csv(p, has_date_column=False)

    def test_nan_rejected(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("a\n1\nnan\n")
        with pytest.raises(DataError):
            load_csv(p, has_date_column=False)

    def test_save_round_trip(self, tmp_path):
        ds = synth_dynamic_corr(50, 3, seed=1)
        save_csv(ds, tmp_path / "s.csv")
        back = load_csv(tmp_path / "s.csv")
        assert np.array_equal(back.values, ds.values)
        assert back.column_names == ds.column_names


class TestSplit:
    def test_622_no_lookback(self):
        parts = split(ds_of(np.zeros((100, 1))), SplitSpec(0.6, 0.2, 0.2), lookback=0)
        assert [p.rows for p in parts] == [60, 20, 20]

    def test_712_with_lookback(self):
        assert split_borders(100, SplitSpec(0.7, 0.1, 0.2), 10) == [(0, 70), (60, 80), (70, 100)]

    def test_boundary_rows(self):
        ds = ds_of(np.arange(100.0)[:, None])
        train, val, test = split(ds, SplitSpec(0.7, 0.1, 0.2), lookback=10, horizon=2)
        assert val.values[0, 0] == 60 and val.values[-1, 0] == 79
        assert test.values[0, 0] == 70 and test.values[-1, 0] == 99

    def test_windows_disjoint_labels(self):
        # no target row of a test window is a target row of a train window
        L, T = 10, 5
        train, _, test = split(ds_of(np.arange(200.0)[:, None]), SplitSpec(0.7, 0.1, 0.2), L, T)
        _, ytr = window_arrays(train, L, T)
        _, yte = window_arrays(test, L, T)
        assert not set(ytr.ravel()) & set(yte.ravel())

    @pytest.mark.parametrize("ratios", [(0.5, 0.2, 0.2), (0.7, 0.0, 0.3), (0.8, 0.3, -0.1)])
    def test_bad_ratios(self, ratios):
        with pytest.raises(ConfigError):
            SplitSpec(*ratios)

    def test_segment_too_short(self):
        with pytest.raises(DataError, match="val"):
            split(ds_of(np.zeros((40, 1))), SplitSpec(0.7, 0.1, 0.2), lookback=2, horizon=5)

    def test_ett_hour_calendar(self):
        assert split_borders(17420, SplitSpec(0.6, 0.2, 0.2, "ett_hour"), 96) == [
            (0, 8640),
            (8544, 11520),
            (11424, 14400),
        ]

    def test_ett_minute_calendar(self):
        assert split_borders(69680, SplitSpec(0.6, 0.2, 0.2, "ett_minute"), 96)[2] == (46080 - 96, 57600)

    def test_ett_too_short(self):
        with pytest.raises(DataError):
            split_borders(1000, SplitSpec(0.6, 0.2, 0.2, "ett_hour"), 96)


class TestScaler:
    def test_train_moments(self):
        ds = ds_of(make_rng(0).standard_normal((300, 3)) * [1, 5, 100] + [0, -2, 7])
        scaled = apply_scaler(ds, fit_scaler(ds)).values
        np.testing.assert_allclose(scaled.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(scaled.std(axis=0), 1.0, atol=1e-9)

    def test_constant_column(self):
        ds = ds_of(np.column_stack([np.full(10, 4.2), np.arange(10.0)]))
        assert not apply_scaler(ds, fit_scaler(ds)).values[:, 0].any()

    def test_round_trip(self):
        ds = ds_of(make_rng(1).standard_normal((50, 4)) * 3 + 1)
        sc = fit_scaler(ds)
        np.testing.assert_allclose(invert_scaler(apply_scaler(ds, sc), sc).values, ds.values, atol=1e-9)

    def test_uses_train_statistics_only(self):
        train = ds_of(np.arange(10.0)[:, None])
        test = ds_of(np.full((5, 1), 1000.0))
        sc = fit_scaler(train)
        assert sc.mean[0] == 4.5
        assert apply_scaler(test, sc).values[0, 0] == pytest.approx((1000 - 4.5) / np.std(np.arange(10.0)))


class TestWindows:
    def test_count(self):
        assert len(list(windows(ds_of(np.zeros((10, 2))), 4, 2))) == 5

    def test_contents(self):
        ds = ds_of(np.arange(20.0).reshape(10, 2))
        w = list(windows(ds, 4, 2))[3]
        assert w.origin_index == 3
        assert np.array_equal(w.x, ds.values[3:7]) and np.array_equal(w.y, ds.values[7:9])

    def test_non_overlapping_stride(self):
        ds = ds_of(np.arange(30.0)[:, None])
        ws = list(windows(ds, 4, 2, stride=6))
        assert [w.origin_index for w in ws] == [0, 6, 12, 18, 24]
        covered = np.concatenate([np.concatenate([w.x, w.y]).ravel() for w in ws])
        assert len(set(covered)) == len(covered)

    def test_shuffle_deterministic(self):
        ds = ds_of(np.zeros((40, 1)))
        a = [w.origin_index for w in windows(ds, 4, 2, shuffle_seed=3)]
        b = [w.origin_index for w in windows(ds, 4, 2, shuffle_seed=3)]
        assert a == b and a != sorted(a)

    def test_cover_source(self):
        rows, L, T = 30, 5, 3
        x, _ = window_arrays(ds_of(np.arange(float(rows))[:, None]), L, T)
        assert set(x.ravel()) == set(range(rows - T))

    def test_too_short(self):
        with pytest.raises(DataError):
            window_arrays(ds_of(np.zeros((5, 1))), 4, 2)


class TestNoise:
    def test_sigma_zero(self):
        ds = ds_of(make_rng(0).standard_normal((20, 3)))
        assert np.array_equal(inject_noise(ds, 1, 0.0, make_rng(1)).values, ds.values)

    def test_other_columns_untouched(self):
        ds = ds_of(make_rng(0).standard_normal((20, 3)))
        out = inject_noise(ds, 1, 2.0, make_rng(1)).values
        assert np.array_equal(out[:, [0, 2]], ds.values[:, [0, 2]])
        assert not np.array_equal(out[:, 1], ds.values[:, 1])

    def test_monte_carlo_std(self):
        ds = ds_of(np.zeros((100_000, 2)))
        delta = inject_noise(ds, 0, 1.0, make_rng(2023)).values[:, 0]
        assert 0.99 <= delta.std(ddof=1) <= 1.01

    def test_bad_index(self):
        with pytest.raises(DataError):
            inject_noise(ds_of(np.zeros((5, 2))), 2, 1.0, make_rng(0))


class TestSynth:
    def test_shape_and_determinism(self):
        a = synth_dynamic_corr(500, 4, seed=9)
        b = synth_dynamic_corr(500, 4, seed=9)
        assert a.values.shape == (500, 4) and np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, synth_dynamic_corr(500, 4, seed=10).values)

    def test_needs_two_variables(self):
        with pytest.raises(ConfigError):
            synth_dynamic_corr(100, 1)

    def test_strong_correlation_within_regime(self):
        rows, n = 2000, 5
        ds = synth_dynamic_corr(rows, n, regime_length=48, seed=3, noise=0.1)
        signs = sign_schedule(rows, n, regime_length=48, seed=3, noise=0.1)
        checked = 0
        for j in range(1, n):
            flips = np.flatnonzero(np.diff(signs[:, j])) + 1
            bounds = np.concatenate([[0], flips, [rows]])
            for s, e in zip(bounds[:-1], bounds[1:]):
                if e - s < 24:
                    continue
                r = pearson(ds.values[s:e, 0], ds.values[s:e, j])
                assert abs(r) > 0.8
                assert np.sign(r) == signs[s, j]
                checked += 1
        assert checked > 100

    def test_rolling_sign_flip(self):
        ds = synth_dynamic_corr(400, 3, regime_length=48, seed=5)
        signs = sign_schedule(400, 3, regime_length=48, seed=5)
        flip = int(np.flatnonzero(np.diff(signs[:, 1]))[1]) + 1
        before = pearson(ds.values[flip - 12 : flip, 0], ds.values[flip - 12 : flip, 1])
        after = pearson(ds.values[flip : flip + 12, 0], ds.values[flip : flip + 12, 1])
        assert np.sign(before) == -np.sign(after) != 0

    def test_lag_delays_driver(self):
        ds = synth_dynamic_corr(300, 3, seed=1, noise=0.0, lag=4)
        signs = sign_schedule(300, 3, seed=1, noise=0.0, lag=4)
        np.testing.assert_array_equal(ds.values[8:, 2] * signs[8:, 2], ds.values[:-8, 0])

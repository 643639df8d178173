import filecmp

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter1d

from mls2s.errors import InputError
from mls2s.graph import read_edge_list
from mls2s.pipeline import (PipelineConfig, SpeedMatrix, StageError, TripRecord, build_speed_matrix,
                            filter_links, gaussian_kernel, gaussian_smooth, impute_ha, read_speed_matrix,
                            reaggregate, run_pipeline, select_top_links, split_long_trips,
                            write_speed_matrix)


def matrix(values, mask=None, interval=300):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if mask is None:
        mask = ~np.isnan(values)
    values = np.where(mask, np.nan_to_num(values), 0.0)
    return SpeedMatrix([f"L{i}" for i in range(values.shape[0])], interval, 0, values, mask)


class TestSplit:
    def test_short_trip_unchanged(self):
        t = TripRecord("L1", 0, 300, 40.0)
        assert split_long_trips([t], 300) == [t]

    def test_remainder_kept(self):
        out = split_long_trips([TripRecord("L1", 0, 720, 40.0)], 300)
        assert [(t.start_time, t.end_time) for t in out] == [(0, 300), (300, 600), (600, 720)]
        assert all(t.speed == 40.0 for t in out)

    def test_exact_multiple(self):
        out = split_long_trips([TripRecord("L1", 100, 700, 1.0)], 300)
        assert [(t.start_time, t.end_time) for t in out] == [(100, 400), (400, 700)]

    def test_duration_conserved(self, rng):
        trips = [TripRecord(f"L{rng.integers(5)}", int(s), int(s + d), 30.0)
                 for s, d in zip(rng.integers(0, 10**6, 500), rng.integers(1, 5000, 500))]
        out = split_long_trips(trips, 300)
        assert sum(t.end_time - t.start_time for t in out) == sum(t.end_time - t.start_time for t in trips)
        assert all(t.end_time - t.start_time <= 300 for t in out)

    def test_bad_interval(self):
        with pytest.raises(InputError):
            split_long_trips([], 0)


class TestBuild:
    def test_max_aggregation_example(self):
        speeds = [22.15, 33.17, 2.61, 27.17, 34.01, 33.60, 55.97]
        trips = [TripRecord("L1", 10 + k, 200 + k, v) for k, v in enumerate(speeds)]
        trips.append(TripRecord("L1", 600, 700, 41.0))
        m = build_speed_matrix(trips, ["L1"], 300)
        assert m.values[0, 0] == 55.97
        assert not m.mask[0, 1]
        assert m.values[0, 2] == 41.0 and m.mask[0, 2]

    def test_half_open_overlap(self):
        m = build_speed_matrix([TripRecord("L1", 0, 300, 10.0), TripRecord("L1", 299, 301, 20.0)],
                               ["L1"], 300, start=0, end=900)
        assert m.values[0].tolist() == [20.0, 20.0, 0.0]
        assert m.mask[0].tolist() == [True, True, False]

    def test_unknown_links_dropped(self):
        m = build_speed_matrix([TripRecord("L1", 0, 100, 10.0), TripRecord("zz", 0, 100, 99.0)], ["L1"], 300)
        assert m.node_ids == ["L1"] and m.values[0, 0] == 10.0

    def test_unknown_aggregation(self):
        with pytest.raises(InputError, match="median"):
            build_speed_matrix([TripRecord("L1", 0, 100, 1.0)], ["L1"], 300, aggregation="median")

    def test_empty(self):
        with pytest.raises(InputError):
            build_speed_matrix([], ["L1"], 300)


class TestFilter:
    def test_threshold_is_strict(self):
        keep_row = np.ones(3000, dtype=bool)
        keep_row[100:1100] = False  # exactly tau
        drop_row = np.ones(3000, dtype=bool)
        drop_row[100:1101] = False  # tau + 1
        two_runs = np.ones(3000, dtype=bool)
        two_runs[0:600] = two_runs[1000:1600] = False
        m = SpeedMatrix(["a", "b", "c", "d"], 300, 0, np.zeros((4, 3000)),
                        np.vstack([np.ones(3000, bool), keep_row, drop_row, two_runs]))
        out, kept = filter_links(m, 1000)
        assert kept == ["a", "b", "d"] and out.n == 3

    def test_all_dropped(self):
        with pytest.raises(InputError):
            filter_links(matrix([[np.nan] * 5]), 2)

    def test_top_k(self):
        m = matrix(np.ones((3, 4)))
        trips = [TripRecord("L2", 0, 1, 1.0)] * 3 + [TripRecord("L0", 0, 1, 1.0)]
        _, kept = select_top_links(m, trips, 2)
        assert kept == ["L0", "L2"]


class TestReaggregate:
    def test_factor_one(self):
        m = matrix([[1.0, np.nan, 3.0]])
        out = reaggregate(m, 1)
        assert np.array_equal(out.values, m.values) and np.array_equal(out.mask, m.mask)

    def test_max_over_observed(self):
        out = reaggregate(matrix([[10.0, np.nan, 20.0, np.nan, np.nan, np.nan, 5.0]]), 3)
        assert out.values[0, 0] == 20.0 and out.mask[0].tolist() == [True, False]
        assert out.T == 2 and out.interval_seconds == 900

    def test_bad_factor(self):
        with pytest.raises(InputError):
            reaggregate(matrix([[1.0]]), 0)


class TestImpute:
    def test_no_missing(self):
        m = matrix(np.arange(12.0).reshape(2, 6))
        assert np.array_equal(impute_ha(m, 3, 2).values, m.values)

    def test_previous_cycles_average(self):
        row = [40.0, 1.0, 60.0, 1.0, np.nan, 1.0]
        out = impute_ha(matrix([row]), 2, 2)
        assert out.values[0, 4] == 50.0 and out.mask.all()

    def test_fallbacks(self):
        out = impute_ha(matrix([[np.nan, 5.0, np.nan, 7.0, np.nan]]), 5, 1)
        assert out.values[0].tolist() == [5.0, 5.0, 5.0, 7.0, 7.0]

    def test_unobserved_link(self):
        with pytest.raises(InputError):
            impute_ha(matrix([[np.nan, np.nan]]), 1, 1)


class TestSmooth:
    def test_constant_preserved(self):
        out = gaussian_smooth(matrix(np.full((2, 30), 42.0)), 1.0)
        np.testing.assert_allclose(out.values, 42.0, rtol=0, atol=1e-12)

    def test_symmetric_series_mean(self, rng):
        half = rng.uniform(10, 50, 20)
        row = np.r_[half, half[::-1]]
        out = gaussian_smooth(matrix([row]), 1.5)
        assert abs(out.values.mean() - row.mean()) < 1e-9

    def test_impulse_gives_kernel(self):
        row = np.zeros(21)
        row[10] = 1.0
        out = gaussian_smooth(matrix([row]), 1.0).values[0]
        raw = np.exp(-0.5 * np.arange(-4, 5) ** 2)
        np.testing.assert_allclose(out[6:15], raw / raw.sum(), rtol=0, atol=1e-15)
        assert out[10] == pytest.approx(0.398942 / (raw.sum() / np.sqrt(2 * np.pi)), rel=1e-5)

    def test_matches_scipy_reflect(self, rng):
        row = rng.uniform(10, 60, 50)
        out = gaussian_smooth(matrix([row]), 1.0).values[0]
        np.testing.assert_allclose(out, gaussian_filter1d(row, 1.0, mode="reflect", truncate=4.0),
                                   rtol=0, atol=1e-12)

    def test_radius(self):
        assert gaussian_kernel(1.1).size == 2 * 5 + 1

    def test_requires_imputed(self):
        with pytest.raises(InputError):
            gaussian_smooth(matrix([[1.0, np.nan]]), 1.0)
        with pytest.raises(InputError):
            gaussian_smooth(matrix([[1.0]]), 0.0)


def test_speed_matrix_round_trip(tmp_path):
    m = matrix([[1.5, np.nan, 3.25], [4.0, 5.0, np.nan]], interval=900)
    write_speed_matrix(m, tmp_path / "m.csv")
    back = read_speed_matrix(tmp_path / "m.csv")
    assert back.node_ids == m.node_ids and back.interval_seconds == 900
    assert np.array_equal(back.mask, m.mask)
    np.testing.assert_array_equal(back.values[m.mask], m.values[m.mask])


class TestRunPipeline:
    def test_golden(self, tmp_path, fixtures_dir):
        src = fixtures_dir / "pipeline"
        m, g, report = run_pipeline(src / "trips.csv", src / "segments.csv", tmp_path)
        for name in ("speed_matrix.csv", "edges.csv", "nodes.txt"):
            assert filecmp.cmp(tmp_path / name, src / "golden" / name, shallow=False), name
        assert m.n == g.n == 5
        assert m.mask.all()
        assert report.records_orphan > 0 and report.links_after_filter == 5
        assert read_edge_list(tmp_path / "edges.csv", tmp_path / "nodes.txt") == g

    def test_values_within_input_range(self, tmp_path, fixtures_dir):
        src = fixtures_dir / "pipeline"
        m, _, _ = run_pipeline(src / "trips.csv", src / "segments.csv", tmp_path)
        speeds = [float(line.split(",")[3]) for line in (src / "trips.csv").read_text().splitlines()[1:]]
        assert m.values.min() >= min(speeds) - 1e-9 and m.values.max() <= max(speeds) + 1e-9

    def test_empty_trips_fail_at_build(self, tmp_path, fixtures_dir):
        (tmp_path / "trips.csv").write_text("link_id,start_time,end_time,speed\n")
        with pytest.raises(StageError) as info:
            run_pipeline(tmp_path / "trips.csv", fixtures_dir / "pipeline" / "segments.csv", tmp_path / "out")
        assert info.value.stage == "build"

    def test_config_reflected_in_provenance(self, tmp_path, fixtures_dir):
        src = fixtures_dir / "pipeline"
        cfg = PipelineConfig(tau=2000)
        _, _, report = run_pipeline(src / "trips.csv", src / "segments.csv", tmp_path, cfg)
        text = (tmp_path / "provenance.txt").read_text()
        assert "config.tau=2000" in text and report.links_after_filter == 6

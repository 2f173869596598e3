import io
import json
import math

import numpy as np
import pytest

from fleetsec.detector import (
    AnomalyReport,
    DetectorConfig,
    MissingThresholdError,
    calibrate,
    detect,
    detect_fleet,
    threshold_from_distances,
    write_reports_jsonl,
)
from fleetsec.matrix_profile import ProfileConfig, compute_brute_force
from fleetsec.telemetry import Metric, TelemetrySeries


def series_of(values, device="d", metric=Metric.PACKETS_IN, interval=1, start=0):
    return TelemetrySeries(device, metric, interval, tuple(float(v) for v in values), start)


def periodic(n, period=8):
    return [float(i % period) for i in range(n)]


CFG = DetectorConfig(profile_config=ProfileConfig(4, 2), quantile=0.99, margin=2.0)


class TestThresholdRule:
    def test_max_quantile_times_margin(self):
        assert threshold_from_distances([0, 0, 0, 1], 1.0, 2.0) == 2.0

    def test_interpolated_quantile_matches_independent_sort(self, rng_np):
        distances = list(rng_np.uniform(0, 5, size=47))
        got = threshold_from_distances(distances, 0.9, 1.5)
        # linear interpolation between order statistics, done by hand
        xs = sorted(distances)
        pos = 0.9 * (len(xs) - 1)
        lo, frac = int(math.floor(pos)), pos - math.floor(pos)
        want = 1.5 * (xs[lo] + frac * (xs[lo + 1] - xs[lo]))
        assert got == pytest.approx(want, abs=1e-12)

    def test_exactly_periodic_baseline_calibrates_to_zero(self):
        threshold = calibrate(series_of(periodic(64)), CFG)
        assert threshold == 0.0

    def test_random_walk_baseline(self, rng_np):
        values = rng_np.normal(size=80).cumsum()
        threshold = calibrate(series_of(values), CFG)
        profile = compute_brute_force(values, CFG.profile_config)
        finite = [float(d) for d in profile.distances if math.isfinite(d)]
        assert threshold == pytest.approx(2.0 * float(np.quantile(finite, 0.99)))


class TestDetect:
    def test_clean_series_with_own_calibration_is_quiet(self):
        base = series_of(periodic(96))
        assert detect(base, calibrate(base, CFG), CFG) == []

    def test_burst_is_flagged_near_the_burst_only(self):
        burst_at = 66  # sawtooth value 2 there, scaled to 50
        values = periodic(128)
        values[burst_at] = 50.0
        series = series_of(values)
        threshold = calibrate(series_of(periodic(128)), CFG)
        reports = detect(series, threshold, CFG)
        assert reports, "burst went undetected"
        m = CFG.profile_config.window_m
        for r in reports:
            assert r.window_index <= burst_at < r.window_index + 2 * m

    def test_infinite_threshold_silences_everything(self, rng_np):
        series = series_of(rng_np.normal(size=60).cumsum())
        assert detect(series, math.inf, CFG) == []

    def test_report_fields(self):
        values = periodic(40)
        values[20] = 99.0
        series = series_of(values, interval=3, start=600)
        reports = detect(series, 0.5, CFG)
        assert reports
        r = reports[0]
        assert r.time == 600 + r.window_index * 3
        assert r.score > r.threshold == 0.5
        assert r.device_id == "d"
        assert r.metric == "packets_in"

    def test_reports_sorted_and_strictly_above_threshold(self, rng_np):
        series = series_of(rng_np.normal(size=100).cumsum())
        reports = detect(series, 0.1, CFG)
        idx = [r.window_index for r in reports]
        assert idx == sorted(idx)
        assert all(r.score > 0.1 for r in reports)

    def test_monotone_in_threshold(self, rng_np):
        series = series_of(rng_np.normal(size=90).cumsum())
        low = {r.window_index for r in detect(series, 0.2, CFG)}
        high = {r.window_index for r in detect(series, 0.8, CFG)}
        assert high <= low


class TestDetectFleet:
    def test_empty_fleet(self):
        assert detect_fleet({}, {}, CFG) == []

    def test_only_the_bursting_device_reports(self):
        quiet = periodic(96)
        noisy = periodic(96)
        noisy[50] = 70.0
        fleet = {"a": series_of(quiet, "a"), "b": series_of(noisy, "b")}
        thresholds = {"a": 0.5, "b": 0.5}
        reports = detect_fleet(fleet, thresholds, CFG)
        assert reports
        assert {r.device_id for r in reports} == {"b"}

    def test_missing_threshold_is_an_error(self):
        fleet = {"a": series_of(periodic(64), "a")}
        with pytest.raises(MissingThresholdError):
            detect_fleet(fleet, {}, CFG)

    def test_matches_independent_per_device_calls(self, rng_np):
        fleet, thresholds = {}, {}
        for name in ("a", "b", "c"):
            values = rng_np.normal(size=70).cumsum()
            fleet[name] = series_of(values, name)
            thresholds[name] = 0.3
        combined = detect_fleet(fleet, thresholds, CFG)
        singles = []
        for name in sorted(fleet):
            singles.extend(detect(fleet[name], thresholds[name], CFG))
        assert combined == singles


def test_jsonl_export_key_order():
    report = AnomalyReport("dev", "packets_in", 3, 30, 2.5, 1.0)
    out = io.StringIO()
    write_reports_jsonl([report], out)
    line = out.getvalue().strip()
    assert json.loads(line) == {
        "device_id": "dev",
        "metric": "packets_in",
        "window_index": 3,
        "time": 30,
        "score": 2.5,
        "threshold": 1.0,
    }
    assert list(json.loads(line)) == [
        "device_id", "metric", "window_index", "time", "score", "threshold",
    ]


def test_config_validation():
    with pytest.raises(ValueError):
        DetectorConfig(profile_config=ProfileConfig(4), quantile=0.0)
    with pytest.raises(ValueError):
        DetectorConfig(profile_config=ProfileConfig(4), margin=0.5)

import numpy as np
import pytest

from agclab.datagen import (EstimatorDataset, GeneratorConfig, SeriesBundle,
                            assemble_dataset, build_event_traces,
                            generate_series, interpolate, read_series_csv,
                            split_counts, write_series_csv)
from agclab.identify import detect_ramp_events, identify
from agclab.presets import example_fleet


def test_netload_identity_exact():
    s = generate_series(GeneratorConfig(seed=1, days=1))
    np.testing.assert_array_equal(s.netload, s.load - s.wind - s.solar)


def test_deterministic_under_seed():
    a = generate_series(GeneratorConfig(seed=3, days=1))
    b = generate_series(GeneratorConfig(seed=3, days=1))
    np.testing.assert_array_equal(a.load, b.load)
    np.testing.assert_array_equal(a.wind, b.wind)
    np.testing.assert_array_equal(a.solar, b.solar)
    c = generate_series(GeneratorConfig(seed=4, days=1))
    assert not np.array_equal(a.load, c.load)


def test_no_events_no_detections():
    cfg = GeneratorConfig(seed=2, days=1, events_per_day=0.0, load_noise=0.0,
                          wind_noise=0.0, solar_noise=0.0)
    s = generate_series(cfg)
    assert detect_ramp_events(s.netload, s.resolution_s) == []


def test_injection_recovery_rate():
    cfg = GeneratorConfig(seed=5, days=17, events_per_day=6.0)
    s = generate_series(cfg)
    events = detect_ramp_events(s.netload, s.resolution_s)
    from agclab.datagen import _event_plan
    plan = _event_plan(cfg)
    assert len(plan) == 102
    recovered = 0
    for minute, _ in plan:
        k = int(round(minute * 60.0 / cfg.native_resolution_s))
        if any(ev.start_index - 2 <= k <= ev.start_index + len(ev.netload_series)
               for ev in events):
            recovered += 1
    assert recovered >= 0.95 * len(plan)


def test_magnitude_below_threshold_rejected():
    with pytest.raises(ValueError, match="detection threshold"):
        GeneratorConfig(event_magnitude=(0.01, 0.06))


def test_interpolate_midpoint_and_endpoints():
    t = np.array([0.0, 60.0])
    s = SeriesBundle(times_s=t, load=np.array([0.0, 0.06]),
                     wind=np.zeros(2), solar=np.zeros(2), resolution_s=60.0)
    fine = interpolate(s, 1.0)
    assert fine.load[30] == pytest.approx(0.03)
    assert fine.load[0] == 0.0 and fine.load[-1] == pytest.approx(0.06)
    assert len(fine.times_s) == 61


def test_interpolate_preserves_knots_and_energy():
    s = generate_series(GeneratorConfig(seed=6, days=1))
    fine = interpolate(s, 6.0)
    np.testing.assert_allclose(fine.load[::10], s.load, rtol=0, atol=1e-15)
    coarse_int = np.trapezoid(s.netload, s.times_s)
    fine_int = np.trapezoid(fine.netload, fine.times_s)
    assert fine_int == pytest.approx(coarse_int, abs=1e-12 * max(1.0, abs(coarse_int)))


def test_interpolate_rejects_nondivisible():
    s = generate_series(GeneratorConfig(seed=6, days=1))
    with pytest.raises(ValueError, match="divide"):
        interpolate(s, 7.0)


def test_build_event_traces_end_to_end():
    cfg = GeneratorConfig(seed=7, days=2)
    s = generate_series(cfg)
    fleet = example_fleet()
    events = build_event_traces(s, fleet, seed=7)
    assert len(events) >= 8
    ev = events[0]
    assert ev.freq_series is not None
    assert len(ev.freq_series) == len(ev.netload_series)
    assert ev.true_H > 0 and ev.true_D > 0
    assert ev.freq_series[0] == 0.0
    # identification recovers the sampled truth from the synthesized trace
    res = identify(ev, ev.commitment)
    assert abs(res.H_hat - ev.true_H) <= 0.05
    assert abs(res.D_hat - ev.true_D) <= 5e-4


def test_split_counts_match_published_ratio():
    assert split_counts(424) == (300, 100, 24)
    tr, va, te = split_counts(4241)
    assert (tr, va, te) == (3000, 1000, 241)


def test_assemble_dataset_no_leakage():
    cfg = GeneratorConfig(seed=8, days=3)
    s = generate_series(cfg)
    fleet = example_fleet()
    events = build_event_traces(s, fleet, seed=8)
    results = [identify(ev, ev.commitment) for ev in events]
    ds = assemble_dataset(s, events, results, fleet, t_in=30, seed=8)
    assert ds.windows.shape[1:] == (30, 4)
    assert len(ds.windows) == len(ds.labels) == len(ds.event_ids)
    by_id = {ev.event_id: ev for ev in events}
    # exhaustive scan: every feature sample is strictly before the event start
    for i, eid in enumerate(ds.event_ids):
        assert by_id[eid].start_index >= 30
    tr, va, te = (ds.splits[k] for k in ("train", "val", "test"))
    assert len(tr) + len(va) + len(te) == len(ds.event_ids)
    assert set(tr) & set(va) == set()
    # chronological: train events precede validation precede test
    starts = np.array([by_id[eid].start_index for eid in ds.event_ids])
    if len(va) and len(tr):
        assert starts[tr].max() <= starts[va].min()
    if len(te) and len(va):
        assert starts[va].max() <= starts[te].min()


def test_event_too_early_is_skipped():
    cfg = GeneratorConfig(seed=9, days=1)
    s = generate_series(cfg)
    fleet = example_fleet()
    events = build_event_traces(s, fleet, seed=9)
    results = [identify(ev, ev.commitment) for ev in events]
    ds = assemble_dataset(s, events, results, fleet, t_in=10**4, seed=9)
    assert len(ds.windows) == 0
    assert len(ds.skipped) == len(events)


def test_series_csv_roundtrip(tmp_path):
    s = generate_series(GeneratorConfig(seed=10, days=1))
    path = tmp_path / "series.csv"
    write_series_csv(s, path, meta="config_hash=00 version=0.1.0")
    back = read_series_csv(path)
    np.testing.assert_array_equal(back.load, s.load)
    np.testing.assert_array_equal(back.netload, s.netload)
    assert back.resolution_s == s.resolution_s
    assert path.read_text().startswith("# config_hash=00")

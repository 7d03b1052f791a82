"""Synthetic load / wind / solar data standing in for historical series.

The generator produces one-minute series with a diurnal load shape, an
autocorrelated wind component, a clear-sky solar envelope and injected
netload ramp events, all reproducible from a seed (day-indexed noise so
days can be generated in any order). Linear interpolation converts the
native series to the fine resolution used by the frequency simulations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import PRIMARY, simulate
from .fleet import (SystemModel, apply_schedule, build_state_space, droop_sum,
                    tg_inertia_lower_bound, with_parameters)
from .identify import RampEvent, detect_ramp_events, sample_true_params
from .seeding import subseed

__all__ = ["GeneratorConfig", "SeriesBundle", "generate_series", "interpolate",
           "build_event_traces", "assemble_dataset", "EstimatorDataset",
           "write_series_csv", "read_series_csv", "SPLIT_RATIOS"]

# train / validation / test proportions, rescaled to the available events
SPLIT_RATIOS = (3000, 1000, 241)


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    days: int = 2
    native_resolution_s: float = 60.0
    load_base: float = 0.70          # p.u. mean load level
    load_diurnal: float = 0.12       # p.u. amplitude of the daily shape
    load_noise: float = 0.004        # p.u. AR(1) innovation std
    wind_mean: float = 0.10
    wind_noise: float = 0.003
    wind_phi: float = 0.995          # AR(1) autocorrelation per minute
    solar_peak: float = 0.12
    solar_noise: float = 0.002
    events_per_day: float = 6.0
    event_magnitude: tuple = (0.025, 0.06)   # p.u., >= detection threshold
    event_hold_min: int = 20
    detection_threshold: float = 0.02

    def __post_init__(self):
        if self.event_magnitude[0] < self.detection_threshold:
            raise ValueError("injected event magnitudes must reach the "
                             "detection threshold")


@dataclass(frozen=True)
class SeriesBundle:
    times_s: np.ndarray
    load: np.ndarray
    wind: np.ndarray
    solar: np.ndarray
    resolution_s: float

    @property
    def netload(self):
        return self.load - self.wind - self.solar

    def __post_init__(self):
        n = len(self.times_s)
        if not (len(self.load) == len(self.wind) == len(self.solar) == n):
            raise ValueError("series lengths are not aligned")


def _day_noise(seed, day, n, channels=3):
    rng = np.random.default_rng(subseed(seed, "day", day))
    return rng.standard_normal((channels, n))


def _event_plan(cfg):
    """Deterministic list of (minute, magnitude) injections, separated by
    more than the event hold plus the detection window."""
    rng = np.random.default_rng(subseed(cfg.seed, "events"))
    total_min = cfg.days * 1440
    n_events = int(round(cfg.events_per_day * cfg.days))
    min_sep = cfg.event_hold_min + 4
    chosen = []
    guard = 0
    while len(chosen) < n_events and guard < 100000:
        guard += 1
        m = int(rng.integers(30, total_min - cfg.event_hold_min - 5))
        if all(abs(m - c) >= min_sep for c, _ in chosen):
            mag = rng.uniform(*cfg.event_magnitude) * (1 if rng.random() < 0.5 else -1)
            chosen.append((m, mag))
    chosen.sort()
    return chosen


def generate_series(cfg: GeneratorConfig) -> SeriesBundle:
    """Reproducible synthetic series at the native one-minute resolution."""
    n_per_day = int(round(86400.0 / cfg.native_resolution_s))
    n = cfg.days * n_per_day
    t = np.arange(n) * cfg.native_resolution_s
    hours = (t / 3600.0) % 24.0

    noise = np.concatenate(
        [_day_noise(cfg.seed, d, n_per_day) for d in range(cfg.days)], axis=1)

    shape = (np.sin(2 * np.pi * (hours - 9.0) / 24.0)
             + 0.35 * np.sin(4 * np.pi * (hours - 7.0) / 24.0))
    load = cfg.load_base + cfg.load_diurnal * shape
    ar = np.empty(n)
    acc = 0.0
    for k in range(n):
        acc = 0.98 * acc + cfg.load_noise * noise[0, k]
        ar[k] = acc
    load = load + ar

    wind = np.empty(n)
    acc = cfg.wind_mean
    for k in range(n):
        acc = cfg.wind_mean + cfg.wind_phi * (acc - cfg.wind_mean) + cfg.wind_noise * noise[1, k]
        wind[k] = acc
    wind = np.maximum(wind, 0.0)

    envelope = np.maximum(np.sin(np.pi * (hours - 6.0) / 12.0), 0.0)
    solar = cfg.solar_peak * envelope + cfg.solar_noise * noise[2] * envelope
    solar = np.maximum(solar, 0.0)

    # ramp events enter through the load channel so the netload identity
    # stays exact by construction
    for minute, mag in _event_plan(cfg):
        k = int(round(minute * 60.0 / cfg.native_resolution_s))
        hold = int(round(cfg.event_hold_min * 60.0 / cfg.native_resolution_s))
        end = min(k + hold, n)
        load[k:end] += mag
        # linear recovery over the following 30 native samples
        rec = min(30, n - end)
        if rec > 0:
            load[end:end + rec] += mag * (1.0 - np.arange(1, rec + 1) / rec)

    return SeriesBundle(times_s=t, load=load, wind=wind, solar=solar,
                        resolution_s=cfg.native_resolution_s)


def interpolate(series: SeriesBundle, target_resolution_s: float) -> SeriesBundle:
    """Piecewise-linear upsampling; native knots are preserved exactly."""
    ratio = series.resolution_s / target_resolution_s
    if abs(ratio - round(ratio)) > 1e-9 or ratio < 1:
        raise ValueError(
            f"target resolution {target_resolution_s} must divide the native "
            f"resolution {series.resolution_s}")
    t_new = np.arange(int(round((len(series.times_s) - 1) * ratio)) + 1) * target_resolution_s
    return SeriesBundle(
        times_s=t_new,
        load=np.interp(t_new, series.times_s, series.load),
        wind=np.interp(t_new, series.times_s, series.wind),
        solar=np.interp(t_new, series.times_s, series.solar),
        resolution_s=target_resolution_s,
    )


def build_event_traces(series: SeriesBundle, fleet: SystemModel,
                       schedule=None, seed: int = 0,
                       fine_resolution_s: float = 0.1,
                       trace_duration_s: float = 60.0,
                       threshold: float = 0.02, window_s: float = 60.0,
                       freq_noise_std: float = 0.0,
                       bess_appendix_literal: bool = False):
    """Detect ramp events and synthesize their fine-resolution traces.

    For each detected event, ground-truth (H, D) is sampled at the event's
    load level, the netload deviation is interpolated to the fine
    resolution, and the primary frequency response is simulated from rest.
    Returns the completed RampEvent list.
    """
    raw = detect_ramp_events(series.netload, series.resolution_s,
                             threshold=threshold, window_s=window_s)
    nl_native = series.netload
    t_native = series.times_s
    out = []
    for ev in raw:
        k0 = ev.start_index
        t0 = t_native[k0]
        hour = int(t0 // 3600) % 24
        snap = apply_schedule(fleet, schedule, hour) if schedule else fleet
        load_pu = float(series.load[k0])
        H, D = sample_true_params(subseed(seed, "truth", ev.event_id), load_pu, snap)
        n_fine = int(round(trace_duration_s / fine_resolution_s))
        t_fine = t0 + np.arange(n_fine + 1) * fine_resolution_s
        if t_fine[-1] > t_native[-1]:
            continue  # event too close to the end of the series
        nl_fine = np.interp(t_fine, t_native, nl_native)
        dnl = nl_fine - nl_fine[0]
        ss = build_state_space(with_parameters(snap, H, D),
                               bess_appendix_literal=bess_appendix_literal)
        traj = simulate(ss, (t_fine - t0, dnl), None, step=fine_resolution_s,
                        kind=PRIMARY)
        f = traj.freq_deviation.copy()
        if freq_noise_std > 0:
            rng = np.random.default_rng(subseed(seed, "noise", ev.event_id))
            f = f + rng.normal(0.0, freq_noise_std, size=len(f))
        out.append(replace(ev, netload_series=nl_fine, freq_series=f,
                           sample_period_s=fine_resolution_s,
                           commitment=snap, true_H=H, true_D=D))
    return out


# ---------------------------------------------------------------------------
# estimator dataset assembly

@dataclass(frozen=True)
class EstimatorDataset:
    windows: np.ndarray              # [N, T_IN, 4]: load, renew, delta_f, tg_inertia
    labels: np.ndarray               # [N, 2]: identified (H, D)
    event_ids: np.ndarray
    splits: dict                     # name -> index array
    feature_names: tuple = ("load_pu", "renew_pu", "delta_f_pu", "tg_inertia_s")
    skipped: tuple = ()


def _ambient_frequency(series: SeriesBundle, fleet: SystemModel, seed):
    """Synthetic normal-operation frequency deviations at the native
    resolution: quasi-steady droop response to short-term netload swings
    plus measurement-scale noise."""
    nl = series.netload
    w = 15
    pad = np.concatenate([np.full(w, nl[0]), nl])
    rolling = np.convolve(pad, np.ones(w) / w, mode="valid")[:len(nl)]
    gain = droop_sum(fleet) + 1.0
    rng = np.random.default_rng(subseed(seed, "ambient"))
    return -(nl - rolling) / gain + rng.normal(0.0, 2e-6, size=len(nl))


def split_counts(n_events: int):
    total = sum(SPLIT_RATIOS)
    train = int(round(n_events * SPLIT_RATIOS[0] / total))
    val = int(round(n_events * SPLIT_RATIOS[1] / total))
    test = n_events - train - val
    return train, val, max(test, 0)


def assemble_dataset(series: SeriesBundle, events, ident_results,
                     fleet: SystemModel, schedule=None, t_in: int = 30,
                     seed: int = 0) -> EstimatorDataset:
    """One (feature window, H, D) sample per identified event.

    Features are taken strictly before the event start (the window ends at
    start_index - 1); events that begin before a full window exist are
    skipped. Labels are the offline identification results. Splits are
    chronological with the configured proportions.
    """
    ambient = _ambient_frequency(series, fleet, seed)
    tg_by_hour = {}
    results_by_id = {r.event_id: r for r in ident_results}
    rows, labels, ids, skipped = [], [], [], []
    for ev in sorted(events, key=lambda e: e.start_index):
        res = results_by_id.get(ev.event_id)
        if res is None:
            continue
        k0 = ev.start_index
        if k0 < t_in:
            skipped.append(ev.event_id)
            continue
        sel = slice(k0 - t_in, k0)
        t_sel = series.times_s[sel]
        hours = (t_sel // 3600).astype(int) % 24
        tg = np.empty(t_in)
        for i, h in enumerate(hours):
            if h not in tg_by_hour:
                snap = apply_schedule(fleet, schedule, h) if schedule else fleet
                tg_by_hour[h] = tg_inertia_lower_bound(snap)
            tg[i] = tg_by_hour[h]
        renew = series.wind[sel] + series.solar[sel]
        rows.append(np.column_stack([series.load[sel], renew, ambient[sel], tg]))
        labels.append([res.H_hat, res.D_hat])
        ids.append(ev.event_id)

    windows = np.asarray(rows)
    labels = np.asarray(labels)
    ids = np.asarray(ids)
    n = len(ids)
    tr, va, te = split_counts(n)
    splits = {"train": np.arange(0, tr),
              "val": np.arange(tr, tr + va),
              "test": np.arange(tr + va, n)}
    return EstimatorDataset(windows=windows, labels=labels, event_ids=ids,
                            splits=splits, skipped=tuple(skipped))


# ---------------------------------------------------------------------------
# CSV interfaces

def write_series_csv(series: SeriesBundle, path, meta=""):
    with open(path, "w", newline="") as fh:
        if meta:
            fh.write(f"# {meta}\n")
        w = csv.writer(fh)
        w.writerow(["t_s", "load_pu", "wind_pu", "solar_pu", "netload_pu"])
        nl = series.netload
        for k in range(len(series.times_s)):
            w.writerow([repr(float(series.times_s[k])), repr(float(series.load[k])),
                        repr(float(series.wind[k])), repr(float(series.solar[k])),
                        repr(float(nl[k]))])


def read_series_csv(path) -> SeriesBundle:
    t, load, wind, solar = [], [], [], []
    with open(path, newline="") as fh:
        rd = csv.DictReader(r for r in fh if not r.startswith("#"))
        for rec in rd:
            t.append(float(rec["t_s"]))
            load.append(float(rec["load_pu"]))
            wind.append(float(rec["wind_pu"]))
            solar.append(float(rec["solar_pu"]))
    t = np.asarray(t)
    return SeriesBundle(times_s=t, load=np.asarray(load), wind=np.asarray(wind),
                        solar=np.asarray(solar),
                        resolution_s=float(t[1] - t[0]) if len(t) > 1 else 1.0)

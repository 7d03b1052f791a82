"""Offline identification of system inertia and load damping from ramp events.

Large netload ramps excite the primary frequency response; while secondary
control is still silent the one-step discrete dynamics depend on (H, D)
only, so both are recovered per event by least squares on the measured
frequency trace. The search runs inside a box whose lower inertia edge is
the inertia contributed by the online steam turbines.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dynamics import PRIMARY, discretize, step_state
from .fleet import SystemModel, build_state_space, tg_inertia_lower_bound, with_parameters

__all__ = ["RampEvent", "IdentResult", "detect_ramp_events",
           "sample_true_params", "identify", "write_events_csv",
           "read_events_csv", "write_results_csv"]

LOAD_INERTIA_MEAN = 1.79
LOAD_INERTIA_STD = 0.31
LOAD_DAMPING_MEAN = 0.01
LOAD_DAMPING_STD = 0.003


@dataclass(frozen=True)
class RampEvent:
    event_id: int
    start_index: int                 # index into the source netload series
    sample_period_s: float
    netload_series: np.ndarray       # p.u., absolute netload over the event
    freq_series: np.ndarray = None   # p.u. frequency deviation, same length
    commitment: SystemModel = None   # fleet snapshot at the event hour
    true_H: float = None
    true_D: float = None

    def __post_init__(self):
        if self.freq_series is not None and len(self.freq_series) != len(self.netload_series):
            raise ValueError("netload and frequency series lengths differ")


@dataclass(frozen=True)
class IdentResult:
    event_id: int
    H_hat: float
    D_hat: float
    residual_rmse: float
    iterations: int
    converged: bool


def detect_ramp_events(netload, resolution_s: float, threshold: float = 0.02,
                       window_s: float = 60.0):
    """Maximal non-overlapping windows with |netload(t+window) - netload(t)|
    above the threshold.

    Overlapping triggered windows are merged, so each returned event spans
    from its first trigger to the last trigger plus one window.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    x = np.asarray(netload, dtype=float)
    w = int(round(window_s / resolution_s))
    if w < 1 or len(x) <= w:
        return []
    hits = np.nonzero(np.abs(x[w:] - x[:-w]) > threshold)[0]
    events = []
    if len(hits) == 0:
        return events
    run_start = prev = hits[0]
    for k in hits[1:]:
        if k <= prev + w:
            prev = k
            continue
        events.append((run_start, prev + w))
        run_start = prev = k
    events.append((run_start, prev + w))
    return [
        RampEvent(event_id=i, start_index=int(s), sample_period_s=float(resolution_s),
                  netload_series=x[s:e + 1].copy())
        for i, (s, e) in enumerate(events)
    ]


def _trunc_normal(rng, mean, std):
    for _ in range(1000):
        v = rng.normal(mean, std)
        if v > 0:
            return v
    return mean  # unreachable for the configured distributions


def sample_true_params(seed, load_pu: float, fleet: SystemModel,
                       mean_scale: bool = False):
    """Synthetic ground truth (H, D) at a given load level.

    H is the online-TG contribution plus the load contribution, whose
    per-unit inertial coefficient is drawn from N(1.79, 0.31) truncated at
    zero; the damping factor comes from N(1%, 0.3%) likewise. With
    ``mean_scale`` the distribution means are used instead of draws.
    """
    if load_pu < 0:
        raise ValueError("load must be nonnegative")
    base = tg_inertia_lower_bound(fleet) if (fleet.online_reheat or fleet.online_nonreheat) else 0.0
    if mean_scale:
        g_h, g_d = LOAD_INERTIA_MEAN, LOAD_DAMPING_MEAN
    else:
        rng = np.random.default_rng(seed)
        g_h = _trunc_normal(rng, LOAD_INERTIA_MEAN, LOAD_INERTIA_STD)
        g_d = _trunc_normal(rng, LOAD_DAMPING_MEAN, LOAD_DAMPING_STD)
    return base + load_pu * g_h, load_pu * g_d


def _simulated_freq(fleet, H, D, dnl, T, bess_appendix_literal=False):
    """Frequency trace of the primary response to the event's netload
    deviations, from rest, at the event sampling period."""
    ss = build_state_space(with_parameters(fleet, H, D),
                           bess_appendix_literal=bess_appendix_literal)
    dyn = discretize(ss, T, kind=PRIMARY)
    x = np.zeros(ss.n)
    out = np.empty(len(dnl))
    out[0] = 0.0
    for k in range(len(dnl) - 1):
        x = step_state(dyn, x, (dnl[k], dnl[k + 1]))
        out[k + 1] = x[0]
    return out


def identify(event: RampEvent, fleet: SystemModel = None, bounds=None,
             window_s: float = 20.0, grid: int = 8, max_iter: int = 60,
             n_starts: int = 3, bess_appendix_literal: bool = False) -> IdentResult:
    """Least-squares fit of (H, D) to one event's frequency trace.

    Multi-start projected Gauss-Newton over the (H, D) box: the objective is
    evaluated on a `grid` x `grid` lattice, and descent runs from the best
    `n_starts` lattice points. The identification window keeps only the
    first `window_s` seconds, where secondary control is assumed silent.
    """
    fleet = fleet if fleet is not None else event.commitment
    if fleet is None:
        raise ValueError("identify needs a fleet model (argument or event.commitment)")
    if event.freq_series is None:
        raise ValueError("event carries no frequency data")
    T = event.sample_period_s
    K = min(len(event.netload_series), int(round(window_s / T)) + 1)
    if K < 10:
        raise ValueError("event too short inside the identification window")
    dnl = event.netload_series[:K] - event.netload_series[0]
    f_meas = event.freq_series[:K]

    if bounds is None:
        h_lo = tg_inertia_lower_bound(fleet)
        bounds = ((h_lo, h_lo + 5.0), (0.0, 0.05))
    (h_lo, h_hi), (d_lo, d_hi) = bounds
    lo = np.array([max(h_lo, 1e-6), d_lo])
    hi = np.array([h_hi, d_hi])

    def residual(theta):
        f_sim = _simulated_freq(fleet, theta[0], theta[1], dnl, T,
                                bess_appendix_literal)
        return f_sim - f_meas

    def objective(theta):
        r = residual(theta)
        return float(r @ r)

    hs = np.linspace(lo[0], hi[0], grid)
    ds = np.linspace(lo[1], hi[1], grid)
    grid_pts = [(objective(np.array([h, d])), (h, d)) for h in hs for d in ds]
    grid_pts.sort(key=lambda t: t[0])

    best_obj, best_theta, best_iters, best_conv = np.inf, None, 0, False
    for start_obj, (h0, d0) in grid_pts[:n_starts]:
        theta = np.array([h0, d0])
        obj = start_obj
        converged = False
        it = 0
        for it in range(1, max_iter + 1):
            r = residual(theta)
            # forward-difference Jacobian in the two parameters
            steps = np.array([max(1e-6 * theta[0], 1e-7), 1e-7])
            J = np.empty((len(r), 2))
            for i in range(2):
                tp = theta.copy()
                tp[i] = min(tp[i] + steps[i], hi[i])
                h_eff = tp[i] - theta[i]
                if h_eff == 0.0:
                    tp[i] = theta[i] - steps[i]
                    h_eff = -steps[i]
                J[:, i] = (residual(tp) - r) / h_eff
            g = J.T @ r
            JtJ = J.T @ J
            lam = 1e-12 * max(np.trace(JtJ), 1.0)
            improved = False
            for _ in range(25):
                try:
                    delta = np.linalg.solve(JtJ + lam * np.eye(2), -g)
                except np.linalg.LinAlgError:
                    lam *= 10
                    continue
                cand = np.clip(theta + delta, lo, hi)
                cand_obj = objective(cand)
                if cand_obj < obj:
                    theta, obj = cand, cand_obj
                    improved = True
                    break
                lam = max(lam * 10, 1e-10)
            proj_change = np.linalg.norm(np.clip(theta - g, lo, hi) - theta)
            if obj < 1e-20 or proj_change < 1e-12:
                converged = True
                break
            if not improved:
                converged = proj_change < 1e-8
                break
        if obj < best_obj:
            best_obj, best_theta, best_iters, best_conv = obj, theta, it, converged

    return IdentResult(event_id=event.event_id, H_hat=float(best_theta[0]),
                       D_hat=float(best_theta[1]),
                       residual_rmse=float(np.sqrt(best_obj / K)),
                       iterations=best_iters, converged=bool(best_conv))


# ---------------------------------------------------------------------------
# CSV interfaces

def write_events_csv(events, path, meta=""):
    with open(path, "w", newline="") as fh:
        if meta:
            fh.write(f"# {meta}\n")
        w = csv.writer(fh)
        w.writerow(["event_id", "t_s", "netload_pu", "delta_f_pu"])
        for ev in events:
            for k in range(len(ev.netload_series)):
                f = ev.freq_series[k] if ev.freq_series is not None else ""
                w.writerow([ev.event_id, repr(k * ev.sample_period_s),
                            repr(float(ev.netload_series[k])),
                            repr(float(f)) if f != "" else ""])


def read_events_csv(path):
    rows = {}
    period = {}
    with open(path, newline="") as fh:
        rd = csv.DictReader(r for r in fh if not r.startswith("#"))
        for rec in rd:
            ev = int(rec["event_id"])
            rows.setdefault(ev, []).append(
                (float(rec["t_s"]), float(rec["netload_pu"]),
                 float(rec["delta_f_pu"]) if rec["delta_f_pu"] else np.nan))
    events = []
    for ev in sorted(rows):
        data = sorted(rows[ev])
        t = np.array([d[0] for d in data])
        nl = np.array([d[1] for d in data])
        f = np.array([d[2] for d in data])
        events.append(RampEvent(
            event_id=ev, start_index=0,
            sample_period_s=float(t[1] - t[0]) if len(t) > 1 else 1.0,
            netload_series=nl,
            freq_series=None if np.isnan(f).all() else f))
    return events


def write_results_csv(results, events, path, meta=""):
    by_id = {ev.event_id: ev for ev in events}
    with open(path, "w", newline="") as fh:
        if meta:
            fh.write(f"# {meta}\n")
        w = csv.writer(fh)
        w.writerow(["event_id", "H_hat", "D_hat", "rmse", "converged",
                    "true_H", "true_D"])
        for r in results:
            ev = by_id.get(r.event_id)
            w.writerow([r.event_id, repr(r.H_hat), repr(r.D_hat),
                        repr(r.residual_rmse), int(r.converged),
                        repr(ev.true_H) if ev and ev.true_H is not None else "",
                        repr(ev.true_D) if ev and ev.true_D is not None else ""])

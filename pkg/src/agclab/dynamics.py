"""Exact discretization and propagation of the area frequency dynamics.

A continuous model xdot = A x + B u is discretized over one sampling (or
AGC) period assuming the netload disturbance changes linearly within the
period and the AGC signal is held constant. Both input integrals

    int_0^T exp(A (T - tau)) B dtau   and   int_0^T exp(A (T - tau)) B tau dtau

come out of a single matrix exponential of a padded block matrix, so the
one-step map is exact to expm accuracy for that input class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .fleet import StateSpace

__all__ = ["expm", "DiscreteDynamics", "discretize", "step_state", "simulate",
           "Trajectory", "PRIMARY", "AGC"]

PRIMARY = "primary"
AGC = "agc"


def expm(A: np.ndarray, t: float = 1.0) -> np.ndarray:
    """Matrix exponential e^(A t).

    Scaling-and-squaring with a diagonal Pade approximant, with order and
    scaling picked from the norm of A*t (scipy's implementation of the
    Al-Mohy/Higham algorithm).
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ValueError(f"expm expects a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)) or not np.isfinite(t):
        raise ValueError("expm input contains non-finite entries")
    return scipy.linalg.expm(A * t)


@dataclass(frozen=True)
class DiscreteDynamics:
    """One-step transition map for a fixed step length.

    kind 'primary' (historical-data sampling period) carries no AGC input
    column; kind 'agc' carries all three.
    """
    A_d: np.ndarray                 # [n, n]
    step_NL: np.ndarray             # [n], coefficient of dP_NL at step start
    ramp_NL: np.ndarray             # [n], coefficient of (dP_NL_end - dP_NL_start)
    step_length: float
    kind: str
    step_R: np.ndarray = None       # [n], coefficient of dP_R; None for 'primary'

    @property
    def n(self):
        return self.A_d.shape[0]


_cache: dict = {}
_CACHE_MAX = 4096


def discretize(ss: StateSpace, step: float, kind: str = AGC,
               cache: bool = True) -> DiscreteDynamics:
    """Exact one-step discretization of `ss` for step/ramp inputs.

    A_d = e^(A*step); the step and ramp input integrals are read off the
    exponential of the padded matrix [[A, B, 0], [0, 0, I], [0, 0, 0]]
    (Van Loan construction). The ramp column is divided by the step so it
    multiplies the disturbance increment directly.

    The MPC loop re-discretizes per scenario, so results are memoized on
    the matrix contents, step and kind.
    """
    if kind not in (PRIMARY, AGC):
        raise ValueError(f"kind must be '{PRIMARY}' or '{AGC}', got {kind!r}")
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")

    key = None
    if cache:
        key = (ss.A.tobytes(), ss.B.tobytes(), float(step), kind)
        hit = _cache.get(key)
        if hit is not None:
            return hit

    n = ss.n
    m = ss.B.shape[1]
    M = np.zeros((n + 2 * m, n + 2 * m))
    M[:n, :n] = ss.A
    M[:n, n:n + m] = ss.B
    M[n:n + m, n + m:] = np.eye(m)
    E = expm(M, step)
    A_d = E[:n, :n]
    G = E[:n, n:n + m]          # int e^{A(T-tau)} B dtau
    Hm = E[:n, n + m:]          # int e^{A(T-tau)} B tau dtau
    dyn = DiscreteDynamics(
        A_d=A_d,
        step_NL=G[:, 1].copy(),
        ramp_NL=Hm[:, 1] / step,
        step_length=float(step),
        kind=kind,
        step_R=G[:, 0].copy() if kind == AGC else None,
    )
    if cache:
        if len(_cache) >= _CACHE_MAX:
            _cache.clear()
        _cache[key] = dyn
    return dyn


def step_state(dyn: DiscreteDynamics, x: np.ndarray, u) -> np.ndarray:
    """Advance one step: u = (dP_R, nl_start, nl_end) for 'agc' dynamics,
    (nl_start, nl_end) for 'primary'."""
    x = np.asarray(x, dtype=float)
    if dyn.kind == AGC:
        if len(u) != 3:
            raise ValueError("agc dynamics take u = (dP_R, nl_start, nl_end)")
        dpr, nl0, nl1 = u
        return dyn.A_d @ x + dyn.step_R * dpr + dyn.step_NL * nl0 + dyn.ramp_NL * (nl1 - nl0)
    if len(u) != 2:
        raise ValueError("primary dynamics take u = (nl_start, nl_end)")
    nl0, nl1 = u
    return dyn.A_d @ x + dyn.step_NL * nl0 + dyn.ramp_NL * (nl1 - nl0)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray               # [k+1]
    states: np.ndarray              # [k+1, n]
    inputs: np.ndarray              # [k+1, 2]: (dP_R, dP_NL) at each sample
    labels: tuple = ()

    @property
    def freq_deviation(self):
        return self.states[:, 0]

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if not (len(self.times) == self.states.shape[0] == self.inputs.shape[0]):
            raise ValueError("trajectory row counts are inconsistent")


def _interp_knots(times, values, t):
    """Linear interpolation; `t` must lie within the knot range."""
    return float(np.interp(t, times, values))


def _check_series(name, times, eps=1e-9):
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) < 1:
        raise ValueError(f"{name} series needs at least one knot")
    if len(times) > 1:
        dt = np.diff(times)
        if np.any(dt <= 0):
            raise ValueError(f"{name} series times must increase")
        if np.any(np.abs(dt - dt[0]) > eps * max(1.0, abs(dt[0]))):
            raise ValueError(f"{name} series must be uniformly sampled")
    return times


def simulate(ss: StateSpace, disturbance, control, step: float,
             x0=None, t_end: float = None, kind: str = AGC) -> Trajectory:
    """Propagate the model under a piecewise-linear netload disturbance and a
    piecewise-constant AGC signal.

    `disturbance` and `control` are (times, values) pairs of uniformly
    sampled series; `step` must divide both resolutions so that every step
    sees a linear disturbance segment and a constant control. The result is
    then exact (up to expm accuracy) rather than an integration scheme.
    `control` may be None for a primary-response-only run.
    """
    if kind == PRIMARY and control is not None:
        raise ValueError("primary dynamics ignore the AGC signal; pass control=None")
    dt_times, dt_vals = disturbance
    dt_times = _check_series("disturbance", dt_times)
    dt_vals = np.asarray(dt_vals, dtype=float)
    if control is not None:
        ct_times, ct_vals = control
        ct_times = _check_series("control", ct_times)
        ct_vals = np.asarray(ct_vals, dtype=float)
    if t_end is None:
        t_end = dt_times[-1]
    for name, times in (("disturbance", dt_times),) + ((("control", ct_times),) if control is not None else ()):
        if len(times) > 1:
            res = times[1] - times[0]
            ratio = res / step
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                raise ValueError(f"step {step} does not divide {name} resolution {res}")
    if dt_times[-1] < t_end - 1e-9:
        raise ValueError("disturbance series does not cover the horizon")

    dyn = discretize(ss, step, kind=kind)
    nsteps = int(round(t_end / step))
    x = np.zeros(ss.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    states = np.empty((nsteps + 1, ss.n))
    inputs = np.empty((nsteps + 1, 2))
    times = np.arange(nsteps + 1) * step
    states[0] = x
    for k in range(nsteps):
        t0, t1 = times[k], times[k + 1]
        nl0 = _interp_knots(dt_times, dt_vals, t0)
        nl1 = _interp_knots(dt_times, dt_vals, t1)
        if control is None:
            dpr = 0.0
        else:
            idx = np.searchsorted(ct_times, t0 + 1e-12, side="right") - 1
            dpr = float(ct_vals[max(idx, 0)])
        if kind == AGC:
            x = step_state(dyn, x, (dpr, nl0, nl1))
        else:
            x = step_state(dyn, x, (nl0, nl1))
        states[k + 1] = x
        inputs[k] = (dpr, nl0)
    inputs[nsteps] = (inputs[nsteps - 1][0] if nsteps else 0.0,
                      _interp_knots(dt_times, dt_vals, times[-1]))
    return Trajectory(times=times, states=states, inputs=inputs, labels=ss.labels)

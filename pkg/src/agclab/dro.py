"""Distributionally robust MPC for the AGC signal.

The forecast quantiles of (H, D) become scenarios; an adversary may tilt
the scenario weights inside a box around the empirical weights (bounded by
the calibration deviations) while keeping them a probability vector. The
controller minimizes control effort plus the worst-case expected frequency
penalty, with per-period CVaR constraints keeping the frequency deviation
inside its band under every admissible weighting. Both the worst-case
expectation and the CVaR constraints enter the optimization through their
LP duals, so one convex QCQP per AGC period yields the signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dynamics import AGC, DiscreteDynamics, discretize
from .fleet import SystemModel, build_state_space, with_parameters
from .qcqp import QcqpProblem, QuadConstraint, solve
from .quantnet import CalibrationReport, QuantileForecast

__all__ = ["AmbiguitySet", "ControlConfig", "build_ambiguity",
           "inner_worstcase_expectation", "dualize_objective",
           "CondensedDynamics", "condense", "scenario_dynamics",
           "assemble_p5", "control_step", "InfeasibleAmbiguity"]


class InfeasibleAmbiguity(ValueError):
    pass


@dataclass(frozen=True)
class AmbiguitySet:
    H: np.ndarray                    # [J] scenario inertias
    D: np.ndarray                    # [J] scenario dampings
    omega0: np.ndarray               # [J] empirical weights
    eta_max: float
    eta_min: float

    def __post_init__(self):
        J = len(self.H)
        if not (len(self.D) == len(self.omega0) == J):
            raise ValueError("scenario arrays must share a length")
        if abs(self.omega0.sum() - 1.0) > 1e-9 or np.any(self.omega0 < 0):
            raise ValueError("empirical weights must be a probability vector")
        if not (self.eta_min <= 0.0 <= self.eta_max):
            raise ValueError("weight-deviation bounds must bracket zero")

    @property
    def J(self):
        return len(self.H)

    def weight_box(self):
        lower = np.maximum(self.omega0 + self.eta_min, 0.0)
        upper = self.omega0 + self.eta_max
        return lower, upper


@dataclass(frozen=True)
class ControlConfig:
    agc_period_s: float = 4.0        # upsilon
    horizon: int = 4                 # Z periods
    cost_signal: float = 30.0        # C_R
    cost_freq: float = 15000.0       # C_f
    freq_lower_pu: float = -0.001    # -0.05 Hz on a 50 Hz base
    freq_upper_pu: float = 0.001
    signal_lower_pu: float = -0.1
    signal_upper_pu: float = 0.1
    beta: float = 0.95
    pairing: str = "comonotonic"     # or "independent_grid"
    solver_tol: float = 1e-8
    solver_max_iter: int = 200
    fallback_penalty: float = 1e6
    bess_appendix_literal: bool = False

    def __post_init__(self):
        if not (self.freq_lower_pu < 0.0 < self.freq_upper_pu):
            raise ValueError("frequency band must straddle zero")
        if not (0.5 < self.beta < 1.0):
            raise ValueError("beta must lie in (0.5, 1): the per-side CVaR "
                             "level 1 - beta/2 must stay above one half")
        if not self.agc_period_s > 0 or self.horizon < 1:
            raise ValueError("invalid horizon settings")
        if not (np.isfinite(self.signal_lower_pu) and np.isfinite(self.signal_upper_pu)):
            raise ValueError("signal bounds must be finite")

    @property
    def tail(self):
        return 1.0 - self.beta / 2.0


def build_ambiguity(forecast: QuantileForecast, report: CalibrationReport,
                    pairing: str = "comonotonic") -> AmbiguitySet:
    """Scenario set from the forecast quantiles plus calibration-based
    weight-deviation bounds.

    Comonotonic pairing matches same-rank H and D quantiles (J = 100);
    `independent_grid` crosses the ten decile values of each parameter.
    The eta bounds combine both parameters conservatively (widest band).
    """
    if pairing == "comonotonic":
        H = np.asarray(forecast.H_quantiles, dtype=float)
        D = np.asarray(forecast.D_quantiles, dtype=float)
    elif pairing == "independent_grid":
        deciles = np.arange(4, 100, 10)
        Hd = np.asarray(forecast.H_quantiles)[deciles]
        Dd = np.asarray(forecast.D_quantiles)[deciles]
        H = np.repeat(Hd, len(Dd))
        D = np.tile(Dd, len(Hd))
    else:
        raise ValueError(f"unknown pairing {pairing!r}")
    J = len(H)
    return AmbiguitySet(H=H, D=D, omega0=np.full(J, 1.0 / J),
                        eta_max=report.eta_max, eta_min=report.eta_min)


def inner_worstcase_expectation(costs, amb: AmbiguitySet):
    """Exact solution of max_w costs'w over the weight box intersected with
    the simplex, by greedy filling in decreasing cost order.

    Returns (value, attaining weights)."""
    costs = np.asarray(costs, dtype=float)
    if not np.all(np.isfinite(costs)):
        raise ValueError("scenario costs must be finite")
    lower, upper = amb.weight_box()
    budget = 1.0 - lower.sum()
    if budget < -1e-12 or upper.sum() < 1.0 - 1e-12:
        raise InfeasibleAmbiguity(
            "weight box cannot reach the probability simplex")
    w = lower.copy()
    order = np.lexsort((np.arange(len(costs)), -costs))
    for j in order:
        if budget <= 0:
            break
        add = min(upper[j] - lower[j], budget)
        w[j] += add
        budget -= add
    return float(costs @ w), w


def dualize_objective(amb: AmbiguitySet, costs):
    """Optimal value and multipliers of the LP dual of the inner worst case:

        min  sum_j [(w0_j + eta_min) mu_lo_j + (w0_j + eta_max) mu_hi_j] + v
        s.t. mu_lo_j + mu_hi_j + v >= costs_j,  mu_lo <= 0 <= mu_hi.

    The optimum over v of the piecewise-linear profile is scanned on the
    kink set {costs_j}, which is exact; this route never touches the greedy
    primal solver, so the two sides certify each other by strong duality.
    """
    costs = np.asarray(costs, dtype=float)
    l = amb.omega0 + amb.eta_min
    u = amb.omega0 + amb.eta_max
    lpos = np.maximum(l, 0.0)

    def value_at(v):
        r = costs - v
        return v + float(u @ np.maximum(r, 0.0) + lpos @ np.minimum(r, 0.0))

    kinks = np.unique(costs)
    vals = [value_at(v) for v in kinks]
    k = int(np.argmin(vals))
    v_star = float(kinks[k])
    r = costs - v_star
    mu_hi = u * 0.0 + np.maximum(r, 0.0)
    mu_lo = np.minimum(r, 0.0) * (l > 0)
    return {
        "value": float(vals[k]),
        "v": v_star,
        "mu_lo": mu_lo,
        "mu_hi": mu_hi,
    }


# ---------------------------------------------------------------------------
# condensation of the per-scenario discrete dynamics

@dataclass(frozen=True)
class CondensedDynamics:
    """Affine maps from (x0, AGC moves, netload knots) to the frequency
    deviation at the period boundaries z = 1..Z."""
    x0_map: np.ndarray               # [Z, n]
    control_map: np.ndarray          # [Z, Z]: column k = effect of dPR_k
    netload_map: np.ndarray          # [Z, Z+1]: effect of the NL knots

    def freq_terms(self, x0, nl_knots):
        """(base [Z], control sensitivity [Z, Z]) with base from x0 and NL."""
        base = self.x0_map @ np.asarray(x0, dtype=float)
        base = base + self.netload_map @ np.asarray(nl_knots, dtype=float)
        return base, self.control_map


def condense(dyn: DiscreteDynamics, horizon: int) -> CondensedDynamics:
    """Unroll x_{z+1} = A x_z + b_R u_z + b_N nl_z + b_M (nl_{z+1} - nl_z)
    and keep the frequency row of each period boundary."""
    if dyn.kind != AGC or dyn.step_R is None:
        raise ValueError("condensation needs AGC-kind dynamics")
    n = dyn.n
    Z = horizon
    x0_map = np.zeros((Z, n))
    control_map = np.zeros((Z, Z))
    netload_map = np.zeros((Z, Z + 1))
    # running row vector r = e0' A^(z - 1 - k) accumulated backwards
    Apow = np.eye(n)
    for z in range(1, Z + 1):
        Apow_z = np.linalg.matrix_power(dyn.A_d, z)
        x0_map[z - 1] = Apow_z[0]
        for k in range(z):
            row = np.linalg.matrix_power(dyn.A_d, z - 1 - k)[0]
            control_map[z - 1, k] = row @ dyn.step_R
            netload_map[z - 1, k] += row @ (dyn.step_NL - dyn.ramp_NL)
            netload_map[z - 1, k + 1] += row @ dyn.ramp_NL
    return CondensedDynamics(x0_map=x0_map, control_map=control_map,
                             netload_map=netload_map)


def scenario_dynamics(fleet: SystemModel, amb: AmbiguitySet, config: ControlConfig):
    """Discretize and condense every scenario's model at the AGC period."""
    out = []
    for H, D in zip(amb.H, amb.D):
        ss = build_state_space(with_parameters(fleet, float(H), float(D)),
                               bess_appendix_literal=config.bess_appendix_literal)
        dyn = discretize(ss, config.agc_period_s, kind=AGC)
        out.append(condense(dyn, config.horizon))
    return out


# ---------------------------------------------------------------------------
# P5 assembly

@dataclass(frozen=True)
class P5Layout:
    Z: int
    J: int
    relaxed: bool = False

    def __post_init__(self):
        Z, J = self.Z, self.J
        object.__setattr__(self, "dPR", np.arange(Z))
        base = Z
        object.__setattr__(self, "mu_lo", np.arange(base, base + J)); base += J
        object.__setattr__(self, "mu_hi", np.arange(base, base + J)); base += J
        object.__setattr__(self, "v", base); base += 1
        object.__setattr__(self, "delta", np.arange(base, base + Z)); base += Z
        object.__setattr__(self, "lam", np.arange(base, base + Z)); base += Z
        object.__setattr__(self, "dbar", np.arange(base, base + Z)); base += Z
        object.__setattr__(self, "psi", np.arange(base, base + Z)); base += Z
        for name in ("h_lo", "h_hi", "th", "ph_lo", "ph_hi", "thb"):
            object.__setattr__(self, name,
                               np.arange(base, base + J * Z).reshape(J, Z))
            base += J * Z
        if self.relaxed:
            object.__setattr__(self, "xi", np.arange(base, base + 2 * Z))
            base += 2 * Z
        object.__setattr__(self, "n", base)


def assemble_p5(x0, nl_forecast, amb: AmbiguitySet, config: ControlConfig,
                fleet: SystemModel, condensed=None, relaxed: bool = False):
    """Convex QCQP for one AGC decision.

    Decision variables: the AGC moves over the horizon plus the dual and
    auxiliary variables of the worst-case expectation and of the two
    per-period CVaR blocks (lower and upper frequency bound). With
    ``relaxed`` the two CVaR budget rows gain penalized slacks, which keeps
    the problem feasible so a command can always be issued.

    Returns (problem, layout, per-scenario (base, control) frequency maps).
    """
    nl_forecast = np.asarray(nl_forecast, dtype=float)
    Z, J = config.horizon, amb.J
    if len(nl_forecast) != Z + 1:
        raise ValueError(f"netload forecast needs {Z + 1} knots, got {len(nl_forecast)}")
    if condensed is None:
        condensed = scenario_dynamics(fleet, amb, config)
    lay = P5Layout(Z=Z, J=J, relaxed=relaxed)
    n = lay.n
    eps = config.tail
    l_w = amb.omega0 + amb.eta_min
    u_w = amb.omega0 + amb.eta_max

    terms = [cd.freq_terms(x0, nl_forecast) for cd in condensed]

    P_diag = np.zeros(n)
    P_diag[lay.dPR] = 2.0 * config.cost_signal
    c = np.zeros(n)
    c[lay.mu_lo] = l_w
    c[lay.mu_hi] = u_w
    c[lay.v] = 1.0

    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    lb[lay.dPR] = config.signal_lower_pu
    ub[lay.dPR] = config.signal_upper_pu
    ub[lay.mu_lo] = 0.0
    lb[lay.mu_hi] = 0.0
    ub[lay.h_lo.ravel()] = 0.0
    lb[lay.h_hi.ravel()] = 0.0
    lb[lay.th.ravel()] = 0.0
    ub[lay.ph_lo.ravel()] = 0.0
    lb[lay.ph_hi.ravel()] = 0.0
    lb[lay.thb.ravel()] = 0.0
    if relaxed:
        lb[lay.xi] = 0.0
        c[lay.xi] = config.fallback_penalty

    rows, cols, vals, h = [], [], [], []

    def add_row(cols_j, vals_j, rhs):
        r = len(h)
        rows.extend([r] * len(cols_j))
        cols.extend(cols_j)
        vals.extend(vals_j)
        h.append(rhs)

    quads = []
    for j in range(J):
        base, ctrl = terms[j]
        # sum_z C_f df_{j,z}^2 <= mu_lo_j + mu_hi_j + v
        Q = 2.0 * config.cost_freq * (ctrl.T @ ctrl)
        a = np.zeros(n)
        a[lay.dPR] = 2.0 * config.cost_freq * (ctrl.T @ base)
        a[lay.mu_lo[j]] = -1.0
        a[lay.mu_hi[j]] = -1.0
        a[lay.v] = -1.0
        const = config.cost_freq * float(base @ base)
        quads.append(QuadConstraint(idx=lay.dPR.copy(), Q=Q, a=a, b=const))

    for zi in range(Z):
        # lower-bound CVaR budget row (per period)
        cj = list(lay.h_lo[:, zi]) + list(lay.h_hi[:, zi]) + [lay.lam[zi], lay.delta[zi]]
        vj = list(l_w) + list(u_w) + [1.0, 1.0]
        if relaxed:
            cj.append(lay.xi[zi])
            vj.append(-1.0)
        add_row(cj, vj, 0.0)
        # upper-bound CVaR budget row
        cj = list(lay.ph_lo[:, zi]) + list(lay.ph_hi[:, zi]) + [lay.psi[zi], lay.dbar[zi]]
        vj = list(l_w) + list(u_w) + [1.0, 1.0]
        if relaxed:
            cj.append(lay.xi[Z + zi])
            vj.append(-1.0)
        add_row(cj, vj, 0.0)
        for j in range(J):
            base, ctrl = terms[j]
            # dual row h_lo + h_hi + lam >= th, as th - h_lo - h_hi - lam <= 0
            add_row([lay.th[j, zi], lay.h_lo[j, zi], lay.h_hi[j, zi], lay.lam[zi]],
                    [1.0, -1.0, -1.0, -1.0], 0.0)
            add_row([lay.thb[j, zi], lay.ph_lo[j, zi], lay.ph_hi[j, zi], lay.psi[zi]],
                    [1.0, -1.0, -1.0, -1.0], 0.0)
            # th >= (f_lower - df - delta)/eps:
            #   (-ctrl dPR - delta)/eps - th <= (base - f_lower)/eps
            cj = list(lay.dPR) + [lay.delta[zi], lay.th[j, zi]]
            vj = list(-ctrl[zi] / eps) + [-1.0 / eps, -1.0]
            add_row(cj, vj, (base[zi] - config.freq_lower_pu) / eps)
            # thb >= (df - f_upper - dbar)/eps
            cj = list(lay.dPR) + [lay.dbar[zi], lay.thb[j, zi]]
            vj = list(ctrl[zi] / eps) + [-1.0 / eps, -1.0]
            add_row(cj, vj, (config.freq_upper_pu - base[zi]) / eps)

    G = sp.csr_matrix((vals, (rows, cols)), shape=(len(h), n))
    P = sp.diags(P_diag, format="csr")
    blocks = (("dPR", 0, Z), ("mu_lo", Z, J), ("mu_hi", Z + J, J),
              ("v", Z + 2 * J, 1))
    prob = QcqpProblem(n=n, P=P, c=c, G=G, h=np.asarray(h), quads=tuple(quads),
                       lb=lb, ub=ub, blocks=blocks)
    return prob, lay, terms


def control_step(x0, nl_forecast, forecast: QuantileForecast,
                 report: CalibrationReport, config: ControlConfig,
                 fleet: SystemModel, condensed=None, amb=None):
    """One receding-horizon decision: build the ambiguity set, assemble the
    robust program, solve it and return the first move.

    On solver failure the chance-constraint budgets are relaxed with an
    exact L1 penalty and the step is flagged; a frequency controller must
    always emit a command."""
    if amb is None:
        amb = build_ambiguity(forecast, report, pairing=config.pairing)
    if condensed is None:
        condensed = scenario_dynamics(fleet, amb, config)
    prob, lay, terms = assemble_p5(x0, nl_forecast, amb, config, fleet,
                                   condensed=condensed)
    sol = solve(prob, tol=config.solver_tol, max_iter=config.solver_max_iter)
    fallback = False
    if sol.status != "Optimal":
        prob_r, lay_r, _ = assemble_p5(x0, nl_forecast, amb, config, fleet,
                                       condensed=condensed, relaxed=True)
        sol = solve(prob_r, tol=max(config.solver_tol, 1e-8),
                    max_iter=config.solver_max_iter)
        lay = lay_r
        fallback = True

    dpr = sol.y[lay.dPR].copy()
    worst_expect = float(
        (amb.omega0 + amb.eta_min) @ sol.y[lay.mu_lo]
        + (amb.omega0 + amb.eta_max) @ sol.y[lay.mu_hi] + sol.y[lay.v])
    return {
        "dPR0": float(np.clip(dpr[0], config.signal_lower_pu, config.signal_upper_pu)),
        "horizon_dPR": dpr,
        "objective": float(sol.objective),
        "worstcase_expectation": worst_expect,
        "status": sol.status,
        "fallback": fallback,
        "iterations": sol.iterations,
        "solution": sol,
        "layout": lay,
        "ambiguity": amb,
    }

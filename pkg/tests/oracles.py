"""Independent reference routines used only by the tests.

Each oracle recomputes a quantity along a different path than the library:
truncated Taylor series for the matrix exponential, classical RK4 for the
continuous dynamics, exhaustive vertex enumeration for the small weight LPs,
scalar scans for CVaR, and dense grid search for the MPC decisions.
"""

import numpy as np


def taylor_expm(M, terms=128):
    """Plain truncated Taylor series; accurate for ||M|| <= 1."""
    M = np.asarray(M, dtype=float)
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms + 1):
        term = term @ M / k
        out = out + term
    return out


def rk4_trajectory(ss, disturbance, control, substep, t_end, x0=None,
                   output_every=1):
    """Classical fourth-order Runge-Kutta on xdot = A x + B u(t).

    u(t) = (dP_R(t), dP_NL(t)) with dP_NL linearly interpolated between its
    knots and dP_R piecewise constant. Returns (times, states) decimated to
    every `output_every`-th substep. The recursion is evaluated with
    precomputed step matrices and window doubling, which is algebraically
    identical to the naive loop.
    """
    A, B = ss.A, ss.B
    n = A.shape[0]
    h = float(substep)
    nsteps = int(round(t_end / h))
    tgrid = np.arange(nsteps + 1) * h

    dt_times, dt_vals = disturbance
    nl_all = np.interp(tgrid, dt_times, dt_vals)
    nl_half = np.interp(tgrid[:-1] + 0.5 * h, dt_times, dt_vals)
    if control is None:
        pr_start = np.zeros(nsteps)
    else:
        ct_times, ct_vals = control
        idx = np.searchsorted(ct_times, tgrid[:-1] + 1e-12, side="right") - 1
        # control switches align with substep boundaries, so within a substep
        # the signal is the constant taken at the substep start
        pr_start = np.asarray(ct_vals)[np.maximum(idx, 0)]

    # one RK4 step: x+ = R x + P0 u(t) + Pm u(t+h/2) + P1 u(t+h)
    A2, A3, A4 = A @ A, None, None
    A3 = A2 @ A
    A4 = A3 @ A
    R = np.eye(n) + h * A + (h**2 / 2) * A2 + (h**3 / 6) * A3 + (h**4 / 24) * A4
    P0 = (h / 6) * (B + h * (A @ B) + (h**2 / 2) * (A2 @ B) + (h**3 / 4) * (A3 @ B))
    Pm = (h / 6) * (4 * B + 2 * h * (A @ B) + (h**2 / 2) * (A2 @ B))
    P1 = (h / 6) * B

    U0 = np.column_stack([pr_start, nl_all[:-1]])
    Um = np.column_stack([pr_start, nl_half])
    U1 = np.column_stack([pr_start, nl_all[1:]])
    g = U0 @ P0.T + Um @ Pm.T + U1 @ P1.T            # [nsteps, n]

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    m = max(int(output_every), 1)
    nblocks = nsteps // m
    # window matrices: x_{k+m} = R^m x_k + sum_j R^{m-1-j} g_{k+j}
    Rpow = np.empty((m, n, n))
    Rpow[m - 1] = np.eye(n)
    for j in range(m - 2, -1, -1):
        Rpow[j] = R @ Rpow[j + 1]
    Rm = R @ Rpow[0]
    times_out = np.empty(nblocks + 1)
    states_out = np.empty((nblocks + 1, n))
    times_out[0] = 0.0
    states_out[0] = x
    gwin = g[: nblocks * m].reshape(nblocks, m, n)
    contrib = np.einsum("jab,wjb->wa", Rpow, gwin)
    for w in range(nblocks):
        x = Rm @ x + contrib[w]
        times_out[w + 1] = (w + 1) * m * h
        states_out[w + 1] = x
    return times_out, states_out


def lp_vertex_max(costs, lower, upper):
    """Maximize c'w over {l <= w <= u, sum w = 1} by vertex enumeration.

    Vertices have at most one coordinate strictly between its bounds; every
    (free index, upper set) combination is tried. Returns (value, w)."""
    costs = np.asarray(costs, dtype=float)
    J = len(costs)
    best, best_w = -np.inf, None
    for free in range(J):
        others = [j for j in range(J) if j != free]
        for mask in range(1 << len(others)):
            w = lower.copy()
            for b, j in enumerate(others):
                if mask >> b & 1:
                    w[j] = upper[j]
            rest = 1.0 - (w.sum() - w[free])
            if lower[free] - 1e-12 <= rest <= upper[free] + 1e-12:
                w[free] = min(max(rest, lower[free]), upper[free])
                val = float(costs @ w)
                if val > best:
                    best, best_w = val, w.copy()
    return best, best_w


def cvar_from_weights(losses, weights, tail):
    """CVaR of a discrete loss distribution at tail mass `tail`, by scanning
    the kink set of delta -> delta + E[(L-delta)^+]/tail."""
    losses = np.asarray(losses, dtype=float)
    best = np.inf
    for d in losses:
        val = d + np.sum(weights * np.maximum(losses - d, 0.0)) / tail
        best = min(best, val)
    return best


def worstcase_cvar_enum(losses, lower, upper, tail):
    """min over delta of max over weight vertices of the CVaR expression
    delta + sum w (L-delta)^+ / tail.

    The inner max is solved exactly per delta (vertex LP); the outer
    function is convex piecewise linear in delta (kinks at the losses and
    at weight-switch crossings), so a golden-section search bracketing the
    losses converges to the true minimum value.
    """
    losses = np.asarray(losses, dtype=float)

    def outer(d):
        val, _ = lp_vertex_max(np.maximum(losses - d, 0.0) / tail, lower, upper)
        return d + val

    a = float(losses.min()) - 1.0
    b = float(losses.max()) + 1.0
    best = min(outer(d) for d in losses)
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    x1 = b - phi * (b - a)
    x2 = a + phi * (b - a)
    f1, f2 = outer(x1), outer(x2)
    for _ in range(200):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - phi * (b - a)
            f1 = outer(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + phi * (b - a)
            f2 = outer(x2)
    return min(best, f1, f2)

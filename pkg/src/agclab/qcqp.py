"""Convex QCQP solver: primal-dual interior point with Mehrotra corrector.

Problems carry a convex quadratic objective, linear equalities, linear
inequalities, variable bounds / sign constraints, and convex quadratic
inequalities 0.5 y'Qy + a'y + b <= 0 with positive semidefinite Q held in
compact support form. Every inequality gets a slack and a multiplier; the
search direction comes from the reduced system

    (P + sum z_q Q_q + J' diag(z/s) J) dy = rhs

assembled sparsely and factored with a sparse LU (the reduced matrix is a
bordered block pattern for the control problems this solves, so a sparse
factorization is orders of magnitude cheaper than a dense one at the same
accuracy). Convergence is declared on the actual KKT residuals of the
original data, so an Optimal status certifies stationarity, feasibility
and complementarity to the requested tolerance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = ["QuadConstraint", "QcqpProblem", "QcqpSolution", "solve",
           "kkt_residual", "save_problem", "load_problem"]


@dataclass(frozen=True)
class QuadConstraint:
    """0.5 * y[idx]' Q y[idx] + a' y + b <= 0 with PSD Q on the support."""
    idx: np.ndarray                  # [k] variable indices
    Q: np.ndarray                    # [k, k] dense PSD block
    a: np.ndarray                    # [n] linear part (dense; mostly zeros)
    b: float

    def value(self, y):
        v = y[self.idx]
        return 0.5 * v @ self.Q @ v + self.a @ y + self.b

    def grad(self, y):
        g = self.a.copy()
        g[self.idx] += self.Q @ y[self.idx]
        return g


@dataclass(frozen=True)
class QcqpProblem:
    n: int
    P: sp.csr_matrix                 # objective quadratic (0.5 y'Py), PSD
    c: np.ndarray
    A_eq: sp.csr_matrix = None       # A_eq y = b_eq
    b_eq: np.ndarray = None
    G: sp.csr_matrix = None          # G y <= h
    h: np.ndarray = None
    quads: tuple = ()
    lb: np.ndarray = None            # -inf where free
    ub: np.ndarray = None
    blocks: tuple = ()               # ((name, start, length), ...) metadata

    def __post_init__(self):
        object.__setattr__(self, "P", sp.csr_matrix(self.P, shape=(self.n, self.n)))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))
        if self.A_eq is None:
            object.__setattr__(self, "A_eq", sp.csr_matrix((0, self.n)))
            object.__setattr__(self, "b_eq", np.zeros(0))
        else:
            object.__setattr__(self, "A_eq", sp.csr_matrix(self.A_eq))
            object.__setattr__(self, "b_eq", np.asarray(self.b_eq, dtype=float))
        if self.G is None:
            object.__setattr__(self, "G", sp.csr_matrix((0, self.n)))
            object.__setattr__(self, "h", np.zeros(0))
        else:
            object.__setattr__(self, "G", sp.csr_matrix(self.G))
            object.__setattr__(self, "h", np.asarray(self.h, dtype=float))
        lb = np.full(self.n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        ub = np.full(self.n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    def objective(self, y):
        return 0.5 * float(y @ (self.P @ y)) + float(self.c @ y)

    def validate(self, eig_floor=-1e-10):
        """Dimension and convexity intake checks; raises on violations."""
        if len(self.c) != self.n or len(self.lb) != self.n or len(self.ub) != self.n:
            raise ValueError("inconsistent dimensions in problem data")
        if self.A_eq.shape[1] != self.n or self.G.shape[1] != self.n:
            raise ValueError("constraint matrices do not match the variable count")
        if self.A_eq.shape[0] != len(self.b_eq) or self.G.shape[0] != len(self.h):
            raise ValueError("constraint right-hand sides do not match row counts")
        for k, q in enumerate(self.quads):
            Qs = 0.5 * (q.Q + q.Q.T)
            if Qs.shape[0] != len(q.idx):
                raise ValueError(f"quadratic constraint {k}: support mismatch")
            w = np.linalg.eigvalsh(Qs)
            if w.min() < eig_floor:
                raise ValueError(
                    f"quadratic constraint {k} is not positive semidefinite "
                    f"(min eigenvalue {w.min():.3e})")
        if np.any(self.lb > self.ub):
            raise ValueError("empty box: some lower bound exceeds its upper bound")


@dataclass(frozen=True)
class QcqpSolution:
    y: np.ndarray
    objective: float
    status: str                      # Optimal | Infeasible | MaxIter
    iterations: int
    kkt: dict                        # stationarity / primal / complementarity
    z_lb: np.ndarray = None
    z_ub: np.ndarray = None
    z_G: np.ndarray = None
    z_quad: np.ndarray = None
    nu: np.ndarray = None
    certificate: dict = None


# ---------------------------------------------------------------------------
# residual evaluation (pure; usable on external candidate points)

def _ineq_values(p: QcqpProblem, y):
    lb_i = np.nonzero(np.isfinite(p.lb))[0]
    ub_i = np.nonzero(np.isfinite(p.ub))[0]
    vals = [p.lb[lb_i] - y[lb_i], y[ub_i] - p.ub[ub_i]]
    if p.G.shape[0]:
        vals.append(p.G @ y - p.h)
    else:
        vals.append(np.zeros(0))
    vals.append(np.array([q.value(y) for q in p.quads]))
    return lb_i, ub_i, vals


def kkt_residual(p: QcqpProblem, y, z_lb=None, z_ub=None, z_G=None,
                 z_quad=None, nu=None) -> dict:
    """Stationarity, primal-violation and complementarity norms (inf-norms)
    at a candidate primal-dual point."""
    y = np.asarray(y, dtype=float)
    lb_i, ub_i, (g_lb, g_ub, g_G, g_q) = _ineq_values(p, y)
    z_lb = np.zeros(len(lb_i)) if z_lb is None else np.asarray(z_lb, dtype=float)
    z_ub = np.zeros(len(ub_i)) if z_ub is None else np.asarray(z_ub, dtype=float)
    z_G = np.zeros(p.G.shape[0]) if z_G is None else np.asarray(z_G, dtype=float)
    z_quad = np.zeros(len(p.quads)) if z_quad is None else np.asarray(z_quad, dtype=float)
    nu = np.zeros(p.A_eq.shape[0]) if nu is None else np.asarray(nu, dtype=float)

    grad = p.P @ y + p.c
    grad[lb_i] -= z_lb
    grad[ub_i] += z_ub
    if p.G.shape[0]:
        grad += p.G.T @ z_G
    for zq, q in zip(z_quad, p.quads):
        grad += zq * q.grad(y)
    if p.A_eq.shape[0]:
        grad += p.A_eq.T @ nu

    primal = 0.0
    if p.A_eq.shape[0]:
        primal = np.abs(p.A_eq @ y - p.b_eq).max()
    for g in (g_lb, g_ub, g_G, g_q):
        if len(g):
            primal = max(primal, float(np.maximum(g, 0.0).max()))

    comp = 0.0
    for z, g in ((z_lb, g_lb), (z_ub, g_ub), (z_G, g_G), (z_quad, g_q)):
        if len(g):
            comp = max(comp, float(np.abs(z * g).max()))

    return {
        "stationarity": float(np.abs(grad).max()) if p.n else 0.0,
        "primal": float(primal),
        "complementarity": comp,
    }


# ---------------------------------------------------------------------------
# interior-point solver

def _build_jacobian(p, y, lb_i, ub_i):
    """Sparse stacked inequality Jacobian at y (bounds, linear, quadratic)."""
    n = p.n
    rows = []
    if len(lb_i):
        rows.append(sp.csr_matrix((-np.ones(len(lb_i)), (np.arange(len(lb_i)), lb_i)),
                                  shape=(len(lb_i), n)))
    if len(ub_i):
        rows.append(sp.csr_matrix((np.ones(len(ub_i)), (np.arange(len(ub_i)), ub_i)),
                                  shape=(len(ub_i), n)))
    if p.G.shape[0]:
        rows.append(p.G)
    if p.quads:
        rows.append(sp.csr_matrix(np.vstack([q.grad(y) for q in p.quads])))
    if not rows:
        return sp.csr_matrix((0, n))
    return sp.vstack(rows, format="csr")


def _hessian(p, z_quad):
    H = p.P.tocoo(copy=True).tocsr()
    if p.quads:
        data, ri, ci = [], [], []
        for zq, q in zip(z_quad, p.quads):
            k = len(q.idx)
            ii, jj = np.meshgrid(q.idx, q.idx, indexing="ij")
            ri.append(ii.ravel())
            ci.append(jj.ravel())
            data.append((zq * q.Q).ravel())
        H = H + sp.csr_matrix(
            (np.concatenate(data), (np.concatenate(ri), np.concatenate(ci))),
            shape=(p.n, p.n))
    return H


def _factor_and_solve(M, A_eq, reg, rhs_y, rhs_nu):
    """Solve [[M + reg I, A'], [A, -reg I]] [dy, dnu] = [rhs_y, rhs_nu]."""
    n = M.shape[0]
    peq = A_eq.shape[0]
    if peq:
        K = sp.bmat([[M + reg * sp.eye(n), A_eq.T],
                     [A_eq, -reg * sp.eye(peq)]], format="csc")
        rhs = np.concatenate([rhs_y, rhs_nu])
    else:
        K = (M + reg * sp.eye(n)).tocsc()
        rhs = rhs_y
    lu = spla.splu(K, permc_spec="COLAMD")
    sol = lu.solve(rhs)
    if not np.all(np.isfinite(sol)):
        raise np.linalg.LinAlgError("singular KKT system")
    return (sol[:n], sol[n:]) if peq else (sol, np.zeros(0)), lu


def _step_to_boundary(v, dv, tau=0.99):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(tau * np.min(-v[neg] / dv[neg])))


def solve(p: QcqpProblem, tol: float = 1e-8, max_iter: int = 200) -> QcqpSolution:
    """Interior-point solve with certified KKT residuals.

    Returns Optimal only when stationarity, primal violation and
    complementarity (evaluated on the original data) are all <= tol.
    Hopeless primal infeasibility is reported with a Farkas-style
    certificate when one can be validated, MaxIter otherwise.
    """
    p.validate()
    n = p.n
    lb_i = np.nonzero(np.isfinite(p.lb))[0]
    ub_i = np.nonzero(np.isfinite(p.ub))[0]

    y = np.zeros(n)
    y = np.minimum(np.maximum(y, np.where(np.isfinite(p.lb), p.lb + 0.0, y)),
                   np.where(np.isfinite(p.ub), p.ub - 0.0, y))
    _, _, gvals = _ineq_values(p, y)
    g = np.concatenate(gvals)
    m = len(g)
    if m == 0:
        # equality-constrained (or unconstrained) QP: one saddle-point solve
        # plus iterative refinement
        reg = 1e-12
        nu = np.zeros(p.A_eq.shape[0])
        for _ in range(8):
            try:
                (y, nu), lu = _factor_and_solve(p.P.tocsr(), p.A_eq, reg,
                                                -p.c, p.b_eq)
                for _ in range(3):
                    r_y = -(p.P @ y + p.c + (p.A_eq.T @ nu if nu.size else 0.0))
                    r_nu = p.b_eq - p.A_eq @ y if nu.size else np.zeros(0)
                    sol = lu.solve(np.concatenate([r_y, r_nu])) if nu.size else lu.solve(r_y)
                    y = y + sol[:n]
                    if nu.size:
                        nu = nu + sol[n:]
                break
            except (np.linalg.LinAlgError, RuntimeError):
                reg *= 100
        kkt = kkt_residual(p, y, nu=nu if nu.size else None)
        status = "Optimal" if max(kkt.values()) <= tol else "MaxIter"
        return QcqpSolution(y=y, objective=p.objective(y), status=status,
                            iterations=1, kkt=kkt,
                            nu=nu if nu.size else None)

    s = np.maximum(-g, 1.0)
    z = np.ones(m)
    nu = np.zeros(p.A_eq.shape[0])
    nlb, nub, nG = len(lb_i), len(ub_i), p.G.shape[0]

    def split(zvec):
        return (zvec[:nlb], zvec[nlb:nlb + nub],
                zvec[nlb + nub:nlb + nub + nG], zvec[nlb + nub + nG:])

    best = None
    primal_hist = []
    for it in range(1, max_iter + 1):
        lb_v, ub_v, gvals = _ineq_values(p, y)
        g = np.concatenate(gvals)
        z_lb, z_ub, z_G, z_quad = split(z)
        kkt = kkt_residual(p, y, z_lb, z_ub, z_G, z_quad, nu)
        worst = max(kkt.values())
        if best is None or worst < best[0]:
            best = (worst, y.copy(), z.copy(), nu.copy(), kkt, it)
        if worst <= tol:
            return _solution(p, y, z, nu, kkt, it, "Optimal", split)

        J = _build_jacobian(p, y, lb_i, ub_i)
        H = _hessian(p, z_quad)
        r_d = p.P @ y + p.c + J.T @ z + (p.A_eq.T @ nu if nu.size else 0.0)
        r_eq = p.A_eq @ y - p.b_eq if nu.size else np.zeros(0)
        r_p = g + s
        mu = float(s @ z) / m
        primal_hist.append(kkt["primal"])

        w = z / s
        M = H + (J.T @ sp.diags(w) @ J).tocsr()

        reg = 1e-12
        for attempt in range(8):
            try:
                # affine-scaling predictor
                r_c = s * z
                rhs_y = -r_d + J.T @ ((r_c - z * r_p) / s)
                (dy_a, dnu_a), lu = _factor_and_solve(M, p.A_eq, reg, rhs_y, -r_eq)
                break
            except (np.linalg.LinAlgError, RuntimeError):
                reg *= 100
        else:
            return _solution(p, *best[1:4], best[4], it, "MaxIter", split)

        ds_a = -r_p - J @ dy_a
        dz_a = (-r_c - z * ds_a) / s
        alpha_a = min(_step_to_boundary(s, ds_a), _step_to_boundary(z, dz_a))
        mu_aff = float((s + alpha_a * ds_a) @ (z + alpha_a * dz_a)) / m
        sigma = min(max((mu_aff / mu) ** 3, 0.0), 1.0)

        # corrector reuses the factorization
        r_c = s * z + ds_a * dz_a - sigma * mu
        rhs_y = -r_d + J.T @ ((r_c - z * r_p) / s)
        if nu.size:
            sol = lu.solve(np.concatenate([rhs_y, -r_eq]))
            dy, dnu = sol[:n], sol[n:]
        else:
            dy = lu.solve(rhs_y)
            dnu = np.zeros(0)
        ds = -r_p - J @ dy
        dz = (-r_c - z * ds) / s
        alpha = min(_step_to_boundary(s, ds), _step_to_boundary(z, dz))

        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz
        nu = nu + alpha * dnu
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
            return _solution(p, *best[1:4], best[4], it, "MaxIter", split)

        # infeasibility signature: multipliers blow up while the primal
        # violation refuses to move
        znorm = float(np.abs(z).max())
        if (znorm > 1e8 and it >= 12 and kkt["primal"] > 1e3 * tol
                and len(primal_hist) >= 12
                and kkt["primal"] > 0.5 * primal_hist[-12]):
            cert = _farkas_certificate(p, z, lb_i, ub_i, tol)
            if cert is not None:
                return QcqpSolution(y=y, objective=p.objective(y),
                                    status="Infeasible", iterations=it,
                                    kkt=kkt, certificate=cert)
            if znorm > 1e40:
                return _solution(p, *best[1:4], best[4], it, "MaxIter", split)

    worst, y_b, z_b, nu_b, kkt_b, it_b = best
    status = "Optimal" if worst <= tol else "MaxIter"
    return _solution(p, y_b, z_b, nu_b, kkt_b, max_iter, status, split)


def _solution(p, y, z, nu, kkt, iterations, status, split):
    z_lb, z_ub, z_G, z_quad = split(z)
    return QcqpSolution(y=y, objective=p.objective(y), status=status,
                        iterations=iterations, kkt=kkt, z_lb=z_lb, z_ub=z_ub,
                        z_G=z_G, z_quad=z_quad,
                        nu=nu if len(nu) else None)


def _farkas_certificate(p, z, lb_i, ub_i, tol):
    """Validate a dual ray proving that the LINEAR part of the constraint set
    is empty: lambda >= 0, J_lin' lambda = 0, lambda' rhs < 0."""
    if p.quads:
        return None
    nlb, nub, nG = len(lb_i), len(ub_i), p.G.shape[0]
    lam = np.maximum(z, 0.0)
    norm = lam.sum()
    if norm <= 0:
        return None
    lam = lam / norm
    combo = np.zeros(p.n)
    combo[lb_i] -= lam[:nlb]
    combo[ub_i] += lam[nlb:nlb + nub]
    if nG:
        combo += p.G.T @ lam[nlb + nub:nlb + nub + nG]
    rhs = np.concatenate([-p.lb[lb_i], p.ub[ub_i], p.h])
    gap = float(lam @ rhs)
    if np.abs(combo).max() <= 1e-6 and gap < -1e-10:
        return {"ray": lam, "combo_norm": float(np.abs(combo).max()),
                "rhs_gap": gap}
    return None


# ---------------------------------------------------------------------------
# serialization (self-describing, bit-exact round trip)

def _sp_to_doc(M):
    coo = sp.coo_matrix(M)
    return {"shape": list(coo.shape), "row": coo.row.tolist(),
            "col": coo.col.tolist(), "data": coo.data.tolist()}


def _sp_from_doc(doc):
    return sp.csr_matrix((doc["data"], (doc["row"], doc["col"])),
                         shape=tuple(doc["shape"]))


def _vec_to_doc(v):
    return [("inf" if x == np.inf else "-inf" if x == -np.inf else x) for x in v]


def _vec_from_doc(doc):
    return np.array([np.inf if x == "inf" else -np.inf if x == "-inf" else float(x)
                     for x in doc])


def save_problem(p: QcqpProblem, path, meta=None):
    doc = {
        "format": "qcqp/1",
        "n": p.n,
        "P": _sp_to_doc(p.P),
        "c": p.c.tolist(),
        "A_eq": _sp_to_doc(p.A_eq),
        "b_eq": p.b_eq.tolist(),
        "G": _sp_to_doc(p.G),
        "h": p.h.tolist(),
        "quads": [{"idx": q.idx.tolist(), "Q": q.Q.tolist(),
                   "a": q.a.tolist(), "b": q.b} for q in p.quads],
        "lb": _vec_to_doc(p.lb),
        "ub": _vec_to_doc(p.ub),
        "blocks": [list(b) for b in p.blocks],
    }
    if meta:
        doc["meta"] = meta
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_problem(path) -> QcqpProblem:
    with open(path) as fh:
        doc = json.load(fh)
    quads = tuple(QuadConstraint(idx=np.asarray(q["idx"], dtype=int),
                                 Q=np.asarray(q["Q"], dtype=float),
                                 a=np.asarray(q["a"], dtype=float),
                                 b=float(q["b"]))
                  for q in doc["quads"])
    return QcqpProblem(
        n=int(doc["n"]), P=_sp_from_doc(doc["P"]), c=np.asarray(doc["c"]),
        A_eq=_sp_from_doc(doc["A_eq"]), b_eq=np.asarray(doc["b_eq"]),
        G=_sp_from_doc(doc["G"]), h=np.asarray(doc["h"]), quads=quads,
        lb=_vec_from_doc(doc["lb"]), ub=_vec_from_doc(doc["ub"]),
        blocks=tuple(tuple(b) for b in doc["blocks"]),
    )

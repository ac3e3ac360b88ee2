"""Dense operator-splitting QP solver for the receding-horizon problem.

Solves  min 1/2 z' H z + g' z
        s.t. A_eq z = b_eq,  lb <= z <= ub,  A_in z <= ub_in

by ADMM on the form l <= A z <= u with per-row penalties (equality rows get
a stiffer penalty), Ruiz equilibration of the stacked data, and adaptive
penalty rebalancing.  Designed for the small dense problems the controller
produces every tick: cheap refactorizations, warm starts, honest status
reporting with an infeasibility certificate.  Residual tests are applied to
the unscaled problem so the returned tolerances mean what they say.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

DEFAULT_EPS = 1e-6
DEFAULT_MAX_ITER = 4000
RHO = 10.0
RHO_EQ_FACTOR = 1e3
SIGMA = 1e-6
ALPHA = 1.6  # over-relaxation
RUIZ_PASSES = 10


@dataclass
class QpProblem:
    H: np.ndarray                       # PSD Hessian
    g: np.ndarray                       # linear term
    A_eq: np.ndarray | None = None      # dynamics equality rows
    b_eq: np.ndarray | None = None
    lb: np.ndarray | None = None        # box on the stacked variables
    ub: np.ndarray | None = None
    A_in: np.ndarray | None = None      # extra halfspace rows (terminal set)
    ub_in: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        n = self.g.shape[0]
        if self.H.shape != (n, n):
            raise ValueError("Hessian/linear-term size mismatch")
        if not np.allclose(self.H, self.H.T, atol=1e-9):
            raise ValueError("Hessian must be symmetric")
        if self.lb is None:
            self.lb = np.full(n, -np.inf)
        if self.ub is None:
            self.ub = np.full(n, np.inf)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)

    @property
    def n(self) -> int:
        return self.g.shape[0]

    def stacked_constraints(self):
        """(A, l, u, is_eq): all constraints as l <= A z <= u."""
        n = self.n
        blocks_A, blocks_l, blocks_u, eq = [], [], [], []
        if self.A_eq is not None and len(self.A_eq):
            A_eq = np.atleast_2d(np.asarray(self.A_eq, dtype=float))
            b_eq = np.asarray(self.b_eq, dtype=float)
            blocks_A.append(A_eq)
            blocks_l.append(b_eq)
            blocks_u.append(b_eq)
            eq.append(np.ones(A_eq.shape[0], dtype=bool))
        blocks_A.append(np.eye(n))
        blocks_l.append(self.lb)
        blocks_u.append(self.ub)
        eq.append(np.zeros(n, dtype=bool))
        if self.A_in is not None and len(self.A_in):
            A_in = np.atleast_2d(np.asarray(self.A_in, dtype=float))
            blocks_A.append(A_in)
            blocks_l.append(np.full(A_in.shape[0], -np.inf))
            blocks_u.append(np.asarray(self.ub_in, dtype=float))
            eq.append(np.zeros(A_in.shape[0], dtype=bool))
        return (np.vstack(blocks_A), np.hstack(blocks_l), np.hstack(blocks_u),
                np.hstack(eq))


@dataclass
class QpSolution:
    z: np.ndarray
    status: str                 # optimal | max-iter | infeasible
    iterations: int
    primal_residual: float
    dual_residual: float
    objective: float
    solve_time: float
    y: np.ndarray = field(default=None, repr=False)   # stacked duals
    zeta: np.ndarray = field(default=None, repr=False)  # constraint iterate


def _ruiz(H, g, A, l, u):
    """Symmetric Ruiz equilibration of the stacked (H, A) data."""
    n, m = H.shape[0], A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    Hs, As = H.copy(), A.copy()
    for _ in range(RUIZ_PASSES):
        col = np.maximum(np.abs(Hs).max(axis=0),
                         np.abs(As).max(axis=0) if m else 0.0)
        col[col == 0] = 1.0
        d = 1.0 / np.sqrt(col)
        row = np.abs(As).max(axis=1) if m else np.ones(0)
        row[row == 0] = 1.0
        e = 1.0 / np.sqrt(row)
        Hs = Hs * d[:, None] * d[None, :]
        As = As * e[:, None] * d[None, :]
        D *= d
        E *= e
        if max(abs(1 - d).max(initial=0), abs(1 - e).max(initial=0)) < 1e-3:
            break
    gs = D * g
    # cost normalization
    c = 1.0 / max(1e-8, np.abs(Hs).max(), np.abs(gs).max())
    Hs *= c
    gs *= c
    ls = E * l
    us = E * u
    return Hs, gs, As, ls, us, D, E, c


def solve_qp(qp: QpProblem, warm_start: QpSolution | None = None,
             eps: float = DEFAULT_EPS,
             max_iter: int = DEFAULT_MAX_ITER) -> QpSolution:
    """ADMM solve with optional warm start from a previous solution."""
    t0 = time.perf_counter()
    A0, l0, u0, is_eq = qp.stacked_constraints()
    n, m = qp.n, A0.shape[0]

    if np.any(l0 > u0 + 1e-12):
        return QpSolution(z=np.zeros(n), status="infeasible", iterations=0,
                          primal_residual=np.inf, dual_residual=np.inf,
                          objective=np.nan, solve_time=time.perf_counter() - t0,
                          y=np.zeros(m), zeta=np.zeros(m))

    Hs, gs, As, ls, us, D, E, c = _ruiz(qp.H, qp.g, A0, l0, u0)
    rho_vec = np.where(is_eq, RHO * RHO_EQ_FACTOR, RHO)

    def factor(rho_vec):
        K = Hs + SIGMA * np.eye(n) + (As.T * rho_vec) @ As
        return cho_factor(K, lower=True)

    chol = factor(rho_vec)

    if warm_start is not None and warm_start.z is not None \
            and warm_start.z.shape == (n,) and warm_start.y is not None \
            and warm_start.y.shape == (m,):
        z = warm_start.z / D
        y = c * warm_start.y / E
        zeta = E * warm_start.zeta if warm_start.zeta is not None \
            else np.clip(As @ z, ls, us)
    else:
        z = np.zeros(n)
        y = np.zeros(m)
        zeta = np.clip(np.zeros(m), ls, us)

    status = "max-iter"
    iters = max_iter
    r_prim_u = r_dual_u = np.inf
    y_prev = y.copy()
    for it in range(1, max_iter + 1):
        rhs = SIGMA * z - gs + As.T @ (rho_vec * zeta - y)
        z_new = cho_solve(chol, rhs)
        Az = As @ z_new
        Az_rel = ALPHA * Az + (1.0 - ALPHA) * zeta
        zeta = np.clip(Az_rel + y / rho_vec, ls, us)
        y = y + rho_vec * (Az_rel - zeta)
        z = z_new

        if it % 10 == 0 or it == max_iter:
            # unscaled residuals
            z_u = D * z
            y_u = E * y / c
            zeta_u = zeta / E
            r_prim_u = float(np.max(np.abs(A0 @ z_u - zeta_u))) if m else 0.0
            r_dual_u = float(np.max(np.abs(qp.H @ z_u + qp.g + A0.T @ y_u)))
            if r_prim_u <= eps and r_dual_u <= eps:
                status = "optimal"
                iters = it
                break
            if r_prim_u <= 1e4 * eps or it == max_iter:
                polished = _polish(qp, A0, l0, u0, z_u, y_u, eps)
                if polished is not None:
                    z_u, y_u, r_prim_u, r_dual_u = polished
                    zeta_u = A0 @ z_u
                    obj = float(0.5 * z_u @ qp.H @ z_u + qp.g @ z_u)
                    return QpSolution(
                        z=z_u, status="optimal", iterations=it,
                        primal_residual=r_prim_u, dual_residual=r_dual_u,
                        objective=obj,
                        solve_time=time.perf_counter() - t0,
                        y=y_u, zeta=zeta_u)
            if it % 100 == 0:
                dy = y - y_prev
                if _primal_infeasibility_certificate(As, ls, us, dy):
                    status = "infeasible"
                    iters = it
                    break
                y_prev = y.copy()

    z_u = D * z
    y_u = E * y / c
    zeta_u = zeta / E
    obj = float(0.5 * z_u @ qp.H @ z_u + qp.g @ z_u)
    return QpSolution(z=z_u, status=status, iterations=iters,
                      primal_residual=r_prim_u, dual_residual=r_dual_u,
                      objective=obj, solve_time=time.perf_counter() - t0,
                      y=y_u, zeta=zeta_u)


def _polish(qp: QpProblem, A0, l0, u0, z_u, y_u, eps):
    """Active-set refinement of an approximate iterate: solve the KKT
    system of the guessed active constraints exactly and accept only if
    the refined point is primal feasible with sign-consistent duals."""
    m = A0.shape[0]
    Az = A0 @ z_u
    span = np.maximum(np.abs(l0), np.abs(u0))
    span[~np.isfinite(span)] = 1.0
    tol_act = 1e-5 * np.maximum(1.0, span)
    eq_rows = np.isfinite(l0) & np.isfinite(u0) & (u0 - l0 <= 1e-12)
    act_up = (~eq_rows) & np.isfinite(u0) & \
        ((u0 - Az <= tol_act) | (y_u > 1e-7))
    act_lo = (~eq_rows) & np.isfinite(l0) & \
        ((Az - l0 <= tol_act) | (y_u < -1e-7)) & ~act_up
    active = eq_rows | act_up | act_lo
    idx = np.flatnonzero(active)
    n = qp.n
    A_act = A0[idx]
    b_act = np.where(act_up[idx], u0[idx],
                     np.where(act_lo[idx], l0[idx], u0[idx]))
    k = len(idx)
    KKT = np.block([[qp.H + 1e-12 * np.eye(n), A_act.T],
                    [A_act, -1e-12 * np.eye(k)]])
    rhs = np.hstack([-qp.g, b_act])
    try:
        sol = np.linalg.solve(KKT, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(KKT, rhs, rcond=None)
    z_p = sol[:n]
    nu = sol[n:]
    y_p = np.zeros(m)
    y_p[idx] = nu
    Az_p = A0 @ z_p
    viol = np.maximum(Az_p - u0, l0 - Az_p)
    r_prim = float(np.max(viol, initial=0.0))
    r_dual = float(np.max(np.abs(qp.H @ z_p + qp.g + A0.T @ y_p)))
    sign_ok = np.all(y_p[act_up] >= -1e-7) and np.all(y_p[act_lo] <= 1e-7)
    if r_prim <= eps and r_dual <= eps and sign_ok:
        return z_p, y_p, r_prim, r_dual
    return None


def _primal_infeasibility_certificate(A, l, u, dy, tol: float = 1e-8) -> bool:
    """OSQP-style certificate: a nonzero dy with A' dy ~ 0 and negative
    support value proves the constraint set empty."""
    norm = float(np.max(np.abs(dy)))
    if norm < 1e-12:
        return False
    d = dy / norm
    if float(np.max(np.abs(A.T @ d))) > tol:
        return False
    val = 0.0
    for ui, li, di in zip(u, l, d):
        if di > tol:
            if np.isinf(ui):
                return False
            val += ui * di
        elif di < -tol:
            if np.isinf(li):
                return False
            val += li * di
    return val < -tol


def check_solution(qp: QpProblem, z, tol: float = 1e-6) -> dict:
    """Independent feasibility audit of a candidate solution."""
    out = {}
    if qp.A_eq is not None and len(qp.A_eq):
        out["eq"] = float(np.max(np.abs(qp.A_eq @ z - qp.b_eq)))
    else:
        out["eq"] = 0.0
    out["lb"] = float(np.max(np.maximum(qp.lb - z, 0.0), initial=0.0))
    out["ub"] = float(np.max(np.maximum(z - qp.ub, 0.0), initial=0.0))
    if qp.A_in is not None and len(qp.A_in):
        out["ineq"] = float(np.max(np.maximum(qp.A_in @ z - qp.ub_in, 0.0),
                                   initial=0.0))
    else:
        out["ineq"] = 0.0
    out["feasible"] = all(v <= tol for k, v in out.items()
                          if k != "feasible")
    return out

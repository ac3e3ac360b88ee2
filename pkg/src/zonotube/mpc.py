"""Receding-horizon controller: builds and solves the tube-tightened
tracking QP with input-rate decision variables and terminal ingredients.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .qp import QpProblem, QpSolution, check_solution, solve_qp
from .scheduling import GainSchedule
from .sets import Box, Zonotope, interval_hull, linear_image, zonotope_contains_point
from .tube import TubeSequence, build_tube, disturbance_zonotope
from .vehicle import LpvModel

N_STATES = 5
N_INPUTS = 2

# interval widths used to normalize the weight tables
IOTA_VX = 14.0
IOTA_OMEGA = 2.8
IOTA_DELTA = 0.534
IOTA_A = 15.0


def default_Q() -> np.ndarray:
    return 0.8 * np.diag([0.4 / IOTA_VX**2, 0.0, 0.6 / IOTA_OMEGA**2,
                          0.0, 0.0])


def default_R() -> np.ndarray:
    return 0.2 * np.diag([0.5 / IOTA_DELTA**2, 0.5 / IOTA_A**2])


@dataclass
class MpcConfig:
    horizon: int = 5
    T_s: float = 0.033
    Q: np.ndarray = field(default_factory=default_Q)
    R: np.ndarray = field(default_factory=default_R)
    state_box: Box = field(default_factory=lambda: Box(
        [1.0, -1.0, -1.4, -np.inf, -np.inf],
        [15.0, 1.0, 1.4, np.inf, np.inf]))
    input_box: Box = field(default_factory=lambda: Box(
        [-0.267, -2.0], [0.267, 13.0]))
    rate_box: Box = field(default_factory=lambda: Box(
        [-0.05, -0.5], [0.05, 0.5]))
    tracked_states: tuple = (0, 2)      # v_x and omega carry references
    terminal_states: tuple = (0, 1, 2)  # dims constrained by the terminal set
    tube_substeps: int = 7              # local steps per MPC period in the tube
    tube_initial: str = "disturbance"
    p_max: int = 25
    solver_eps: float = 1e-6
    solver_max_iter: int = 4000
    terminal_enabled: bool = True

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        if not (1 <= self.horizon <= 50):
            raise ValueError("horizon must lie in [1, 50]")
        if self.T_s <= 0:
            raise ValueError("T_s must be positive")
        eigQ = np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T))
        if eigQ.min() < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        eigR = np.linalg.eigvalsh(0.5 * (self.R + self.R.T))
        if eigR.min() <= 0:
            raise ValueError("R must be positive definite")


@dataclass
class MpcSolution:
    delta_u: np.ndarray          # (H, 2) optimal input increments
    u: np.ndarray                # (H, 2) nominal input sequence
    states: np.ndarray           # (H+1, 5) predicted nominal trajectory
    cost: float
    status: str                  # optimal | max-iter | infeasible | fallback
    solve_time: float
    iterations: int
    primal_residual: float
    dual_residual: float
    degraded: bool = False
    terminal_violation: bool = False
    zeta_traj: list = field(default=None, repr=False)
    tube: TubeSequence = field(default=None, repr=False)
    qp_solution: QpSolution = field(default=None, repr=False)


def terminal_hull_radii(gains: GainSchedule) -> np.ndarray | None:
    """Per-axis interval radii of the stored terminal set, if present."""
    if gains.terminal_set is None:
        return None
    Z = Zonotope(gains.terminal_set["center"],
                 gains.terminal_set["generators"])
    return interval_hull(Z).radius()


class _Prediction:
    """Dense prediction operators x_stack = M_x x_k + M_u u_stack and
    u_stack = T du_stack + tile(u_prev)."""

    def __init__(self, Ad, Bd, H):
        n, m = N_STATES, N_INPUTS
        self.M_x = np.zeros((n * H, n))
        self.M_u = np.zeros((n * H, m * H))
        prod = np.eye(n)
        for i in range(H):
            prod = Ad[i] @ prod if i else Ad[0]
            self.M_x[n * i:n * (i + 1)] = prod
        for j in range(H):
            block = Bd[j]
            for i in range(j, H):
                if i > j:
                    block = Ad[i] @ block
                self.M_u[n * i:n * (i + 1), m * j:m * (j + 1)] = block
        self.T = np.kron(np.tril(np.ones((H, H))), np.eye(m))


def build_qp(x_k, u_prev, zeta_traj, r_traj, tube: TubeSequence,
             chi_radii, P_terminal, cfg: MpcConfig,
             model: LpvModel) -> QpProblem:
    """Assemble the tracking QP for one tick in dense condensed form.

    Decision variables are the input increments; the dynamics equalities
    are eliminated through the prediction operators, the tightened input
    and state boxes become halfspace rows (state rows only where the bound
    is finite), and the terminal set enters through halfspace rows around
    the terminal reference on its constrained dims.
    """
    H = cfg.horizon
    if tube.any_empty:
        raise ValueError("tightened constraint sets are empty")
    if len(zeta_traj) < H:
        raise ValueError(f"need {H} scheduling samples")
    x_k = np.asarray(x_k, dtype=float)
    u_prev = np.asarray(u_prev, dtype=float)
    r_traj = np.atleast_2d(np.asarray(r_traj, dtype=float))
    if r_traj.shape[0] < H + 1:
        r_traj = np.vstack([r_traj,
                            np.repeat(r_traj[-1:], H + 1 - r_traj.shape[0],
                                      axis=0)])

    Ad, Bd = [], []
    for i in range(H):
        A_i, B_i = model.discrete_matrices(zeta_traj[i], cfg.T_s)
        Ad.append(A_i)
        Bd.append(B_i)
    pred = _Prediction(Ad, Bd, H)
    u_tile = np.tile(u_prev, H)
    S = pred.M_u @ pred.T                      # x_stack from du
    x_free = pred.M_x @ x_k + pred.M_u @ u_tile

    # stage weights: Q on x_1..x_{H-1}, Q + terminal deviation weight on x_H
    T_sel = np.zeros((N_STATES, N_STATES))
    for d in cfg.terminal_states:
        T_sel[d, d] = 1.0
    Pf = T_sel @ np.asarray(P_terminal, dtype=float) @ T_sel
    Q_blocks = [cfg.Q] * (H - 1) + [cfg.Q + Pf]
    Q_bar = np.zeros((N_STATES * H, N_STATES * H))
    r_stack = np.zeros(N_STATES * H)
    for i in range(H):
        Q_bar[N_STATES * i:N_STATES * (i + 1),
              N_STATES * i:N_STATES * (i + 1)] = Q_blocks[i]
        r_stack[N_STATES * i:N_STATES * (i + 1)] = r_traj[i + 1]
    R_bar = np.kron(np.eye(H), cfg.R)

    H_qp = 2.0 * (R_bar + S.T @ Q_bar @ S)
    g = 2.0 * S.T @ Q_bar @ (x_free - r_stack)

    # rate box is the native variable box
    lb = np.tile(cfg.rate_box.lower, H)
    ub = np.tile(cfg.rate_box.upper, H)

    # halfspace rows: tightened inputs, finite tightened state bounds,
    # terminal set rows
    rows, rhs = [], []
    for i in range(H):
        U_t = tube.tightened_inputs[i]
        Ti = pred.T[2 * i:2 * i + 2]
        rows.append(Ti)
        rhs.append(U_t.upper - u_prev)
        rows.append(-Ti)
        rhs.append(-(U_t.lower - u_prev))
    for i in range(1, H + 1):
        X_t = tube.tightened_states[i]
        for d in range(N_STATES):
            row = S[N_STATES * (i - 1) + d]
            off = x_free[N_STATES * (i - 1) + d]
            if np.isfinite(X_t.upper[d]):
                rows.append(row[None, :])
                rhs.append(np.array([X_t.upper[d] - off]))
            if np.isfinite(X_t.lower[d]):
                rows.append(-row[None, :])
                rhs.append(np.array([off - X_t.lower[d]]))
    if cfg.terminal_enabled and chi_radii is not None:
        for d in cfg.terminal_states:
            row = S[N_STATES * (H - 1) + d]
            off = x_free[N_STATES * (H - 1) + d]
            rows.append(row[None, :])
            rhs.append(np.array([r_traj[H, d] + chi_radii[d] - off]))
            rows.append(-row[None, :])
            rhs.append(np.array([off - (r_traj[H, d] - chi_radii[d])]))
    A_in = np.vstack(rows)
    ub_in = np.hstack(rhs)

    qp = QpProblem(H=H_qp, g=g, lb=lb, ub=ub, A_in=A_in, ub_in=ub_in)
    qp._pred = pred          # prediction operators for unpacking
    qp._x_free = x_free
    qp._u_tile = u_tile
    return qp


def unpack_solution(qp: QpProblem, qp_sol: QpSolution, x_k,
                    cfg: MpcConfig) -> MpcSolution:
    H = cfg.horizon
    du = qp_sol.z.reshape(H, 2)
    u_stack = qp._pred.T @ qp_sol.z + qp._u_tile
    x_stack = qp._pred.M_u @ u_stack + qp._x_free - qp._pred.M_u @ qp._u_tile
    states = np.vstack([np.asarray(x_k, dtype=float),
                        x_stack.reshape(H, N_STATES)])
    return MpcSolution(delta_u=du, u=u_stack.reshape(H, 2), states=states,
                       cost=qp_sol.objective, status=qp_sol.status,
                       solve_time=qp_sol.solve_time,
                       iterations=qp_sol.iterations,
                       primal_residual=qp_sol.primal_residual,
                       dual_residual=qp_sol.dual_residual,
                       qp_solution=qp_sol)


def shift_warm_start(prev: MpcSolution, cfg: MpcConfig) -> QpSolution | None:
    """Shifted increment sequence (duals reused as-is) for the next tick."""
    if prev is None or prev.qp_solution is None or prev.degraded:
        return None
    H = cfg.horizon
    z = prev.qp_solution.z.copy().reshape(H, 2)
    z = np.vstack([z[1:], np.zeros((1, 2))]).ravel()
    return QpSolution(z=z, status=prev.qp_solution.status, iterations=0,
                      primal_residual=np.inf, dual_residual=np.inf,
                      objective=np.nan, solve_time=0.0,
                      y=prev.qp_solution.y, zeta=prev.qp_solution.zeta)


def scheduling_trajectory(x_k, u_prev, prev: MpcSolution | None,
                          cfg: MpcConfig, model: LpvModel,
                          bounds) -> list:
    """Frozen scheduling samples for the tick: the shifted previous
    prediction, or the current operating point repeated on a cold start."""
    from .vehicle import ControlInput, VehicleState
    H = cfg.horizon
    samples = []
    if prev is not None and prev.states is not None:
        for i in range(1, H + 1):
            idx_u = min(i, H - 1)
            s = VehicleState.from_array(prev.states[min(i, H)])
            u = ControlInput(*prev.u[idx_u])
            samples.append(_clamped_sample(s, u, model, bounds))
    else:
        s = VehicleState.from_array(np.asarray(x_k, dtype=float))
        u = ControlInput(*np.asarray(u_prev, dtype=float))
        samples = [_clamped_sample(s, u, model, bounds)] * H
    return samples


def _clamped_sample(s, u, model: LpvModel, bounds):
    zeta3 = bounds.clamp([s.v_x, s.v_y, u.delta])
    from .vehicle import ControlInput, VehicleState
    s2 = VehicleState(zeta3[0], zeta3[1], s.omega, s.x, s.theta)
    u2 = ControlInput(zeta3[2], u.a)
    C_f, C_r = model.stiffness(s2, u2)
    return (zeta3[0], zeta3[1], zeta3[2], C_f, C_r)


def mpc_step(x_k, u_prev, r_traj, prev: MpcSolution | None,
             gains: GainSchedule, W: Zonotope | None, cfg: MpcConfig,
             model: LpvModel) -> MpcSolution:
    """One controller tick: tube propagation, constraint tightening, QP
    build and solve, with a shifted-sequence fallback on failure."""
    t0 = time.perf_counter()
    if W is None:
        W = disturbance_zonotope()
    zeta_traj = scheduling_trajectory(x_k, u_prev, prev, cfg, model,
                                      gains.bounds)
    tube = build_tube(zeta_traj, gains, W, cfg.T_s, cfg.horizon, model,
                      cfg.state_box, cfg.input_box, p_max=cfg.p_max,
                      controller="hinf", initial=cfg.tube_initial,
                      substeps=cfg.tube_substeps)
    chi = terminal_hull_radii(gains)
    if tube.any_empty:
        sol = _fallback(x_k, u_prev, prev, cfg)
        sol.solve_time = time.perf_counter() - t0
        return sol
    qp = build_qp(x_k, u_prev, zeta_traj, r_traj, tube, chi, gains.P, cfg,
                  model)
    qp_sol = solve_qp(qp, warm_start=shift_warm_start(prev, cfg),
                      eps=cfg.solver_eps, max_iter=cfg.solver_max_iter)
    if qp_sol.status == "infeasible":
        sol = _fallback(x_k, u_prev, prev, cfg)
        sol.solve_time = time.perf_counter() - t0
        return sol
    sol = unpack_solution(qp, qp_sol, x_k, cfg)
    sol.zeta_traj = zeta_traj
    sol.tube = tube
    sol.terminal_violation = _terminal_violation(sol, r_traj, gains, cfg)
    sol.solve_time = time.perf_counter() - t0
    return sol


def _terminal_violation(sol: MpcSolution, r_traj, gains: GainSchedule,
                        cfg: MpcConfig) -> bool:
    """Exact membership post-check of the terminal state in the stored
    terminal set (projected to the constrained dims)."""
    if gains.terminal_set is None or not cfg.terminal_enabled:
        return False
    r_traj = np.atleast_2d(np.asarray(r_traj, dtype=float))
    r_H = r_traj[min(cfg.horizon, r_traj.shape[0] - 1)]
    dims = list(cfg.terminal_states)
    Z = Zonotope(gains.terminal_set["center"],
                 gains.terminal_set["generators"])
    sel = np.zeros((len(dims), N_STATES))
    for j, d in enumerate(dims):
        sel[j, d] = 1.0
    proj = linear_image(sel, Z)
    dev = sol.states[-1][dims] - r_H[dims]
    return not zonotope_contains_point(proj, dev, tol=1e-7)


def _fallback(x_k, u_prev, prev: MpcSolution | None,
              cfg: MpcConfig) -> MpcSolution:
    """Shifted previous input sequence (or held last input) in degraded
    mode; predictions are left empty."""
    H = cfg.horizon
    if prev is not None:
        u = np.vstack([prev.u[1:], prev.u[-1:]])
    else:
        u = np.tile(np.asarray(u_prev, dtype=float), (H, 1))
    u = np.clip(u, cfg.input_box.lower, cfg.input_box.upper)
    du = np.diff(np.vstack([np.asarray(u_prev, dtype=float)[None], u]),
                 axis=0)
    states = np.tile(np.asarray(x_k, dtype=float), (H + 1, 1))
    return MpcSolution(delta_u=du, u=u, states=states, cost=np.nan,
                       status="fallback", solve_time=0.0, iterations=0,
                       primal_residual=np.inf, dual_residual=np.inf,
                       degraded=True)

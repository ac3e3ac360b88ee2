"""Polytopic H-infinity state-feedback synthesis via LMIs.

The design solves, over the scheduling-box vertices with a common Lyapunov
matrix X and per-vertex variables W_i,

    min gamma  s.t.  [ S_i   E    X C^T + W_i^T D2^T ]
                     [ E^T  -gI    D1^T              ]  <= 0,
                     [ ...  ...   -gI                ]
    S_i = A_i X + B W_i + X A_i^T + W_i^T B^T,

plus a pole-region disk per (A_i, W_j) pair that keeps every interpolated
closed loop contractive under forward-Euler discretization at the local
loop period.  Gains are K_i = W_i X^{-1}.

Feedthrough naming follows the printed shapes: D1 (n_z x n_d) weights the
disturbance channel and D2 (n_z x m) the input channel in z.  The published
output matrices have one inconsistent row count; they are completed to a
common n_z = 8 by zero-padding so every printed nonzero entry survives.

Numerics: gamma enters the blocks linearly, so the minimum is found by
bisection over plain feasibility solves (interior-point SDP solvers are
much more reliable on those than on the degenerate gamma-optimal problem);
state/input similarity scaling is applied internally, which is an exact
congruence of the blocks and leaves gamma unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from zonotube.scheduling import SchedulingBounds
from zonotube.vehicle import LpvModel

N_STATES = 5
N_INPUTS = 2

# published tuning matrices, z padded from 7 (C) / 8 (D2) rows to n_z = 8
E_DEFAULT = 0.3 * np.array([
    [0.0, 0.5, 0, 0, 0, 0, 0],
    [2.0, 0.0, 0, 0, 0, 0, 0],
    [3.0, 0.0, 0, 0, 0, 0, 0],
    [0.0, 0.0001, 0, 0, 0, 0, 0],
    [0.01, 0.0, 0, 0, 0, 0, 0],
])
C_DEFAULT = 1e-4 * np.array([
    [0.2, 0, 0, 0, 0],
    [0, 0.2, 0, 0, 0],
    [0, 0, 0.2, 0, 0],
    [0, 0, 0, 0.2, 0],
    [0, 0, 0, 0, 0.1],
    [0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0],
])
D1_DEFAULT = 1e-4 * np.vstack([
    np.array([
        [0, 0, -0.2, 0, 0, 0, 0],
        [0, 0, 0, -0.2, 0, 0, 0],
        [0, 0, 0, 0, -0.2, 0, 0],
        [0, 0, 0, 0, 0, -0.2, 0],
        [0, 0, 0, 0, 0, 0, -0.1],
        [0, 0, 0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0, 0, 0],
    ]),
    np.zeros((1, 7)),
])
D2_DEFAULT = 1e-3 * np.array([[0, 0]] * 6 + [[0.15, 0], [0, 0.15]])

DESIGN_STIFFNESS = 4.0e4
LOCAL_PERIOD = 0.005
STATE_SCALE = np.array([0.074, 0.192, 0.105, 0.3, 0.3])
INPUT_SCALE = np.array([0.267, 7.5])


@dataclass
class HinfDesignSpec:
    """Vertex dynamics plus the disturbance/performance channel weights."""

    A_vertices: list            # 8 continuous A matrices
    B: np.ndarray               # common input matrix (delta = 0 instantiation)
    E: np.ndarray = field(default_factory=lambda: E_DEFAULT.copy())
    C: np.ndarray = field(default_factory=lambda: C_DEFAULT.copy())
    D1: np.ndarray = field(default_factory=lambda: D1_DEFAULT.copy())
    D2: np.ndarray = field(default_factory=lambda: D2_DEFAULT.copy())
    rho_local: float = 0.97     # Euler contraction bound per local period
    T_local: float = LOCAL_PERIOD
    cross_pairs: bool = True    # certify (A_i, K_j) pairs, not just i == j

    def __post_init__(self):
        n = self.B.shape[0]
        nz = self.C.shape[0]
        nd = self.E.shape[1]
        if self.D1.shape != (nz, nd):
            raise ValueError(f"D1 must be {nz}x{nd} (z from d)")
        if self.D2.shape != (nz, self.B.shape[1]):
            raise ValueError(f"D2 must be {nz}x{self.B.shape[1]} (z from u)")
        for A in self.A_vertices:
            if A.shape != (n, n):
                raise ValueError("vertex A matrices must match B's row count")

    @staticmethod
    def from_model(model: LpvModel, bounds: SchedulingBounds,
                   stiffness: float = DESIGN_STIFFNESS, **kw):
        B = model.matrices((bounds.v_x[0], 0.0, 0.0, stiffness, stiffness))[1]
        As = [model.matrices((v[0], v[1], v[2], stiffness, stiffness))[0]
              for v in bounds.vertices()]
        return HinfDesignSpec(A_vertices=As, B=B, **kw)


@dataclass
class DesignResult:
    X: np.ndarray               # common Lyapunov matrix (X = P^-1)
    W: np.ndarray               # stacked per-vertex W_i
    gains: np.ndarray           # stacked K_i = W_i X^-1
    gamma: float                # certified attenuation of the returned gains
    status: str
    lmi_residual: float         # max eigenvalue over the assembled blocks
    lqr_gains: np.ndarray | None = None


class _Scaled:
    """Similarity-scaled copy of the design data (exact congruence)."""

    def __init__(self, spec: HinfDesignSpec):
        n = spec.B.shape[0]
        self.Ds = np.diag(STATE_SCALE[:n])
        self.Dsi = np.linalg.inv(self.Ds)
        self.Su = np.diag(INPUT_SCALE[:spec.B.shape[1]])
        self.A = [self.Dsi @ A @ self.Ds for A in spec.A_vertices]
        self.B = self.Dsi @ spec.B @ self.Su
        self.E = self.Dsi @ spec.E
        self.C = spec.C @ self.Ds
        self.D1 = spec.D1
        self.D2 = spec.D2 @ self.Su
        self.n = n
        self.m = spec.B.shape[1]
        self.nz = spec.C.shape[0]
        self.nd = spec.E.shape[1]
        self.T_local = spec.T_local

    def gains_from(self, X, Ws):
        Xi = np.linalg.inv(X)
        return np.array([self.Su @ Wv @ Xi @ self.Dsi for Wv in Ws])

    def unscale_X(self, X):
        return self.Ds @ X @ self.Ds.T


def _solve_feasibility(problem) -> bool:
    try:
        problem.solve(solver=cp.CVXOPT, verbose=False)
    except cp.error.SolverError:
        return False
    return problem.status == "optimal"


def _bisect(feasible, lo: float, hi: float, iters: int = 26):
    """Smallest feasible value of a scalar by expansion + bisection."""
    while not feasible(hi):
        lo, hi = hi, hi * 10.0
        if hi > 1e12:
            raise RuntimeError("LMI infeasible for any attenuation level")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _blocks(sc: _Scaled, X, Ws, gam, gains_fixed=None):
    """Performance blocks (per vertex) and disk blocks (per pair)."""
    perf = []
    for i, A in enumerate(sc.A):
        W = Ws[i]
        S = A @ X + sc.B @ W + X @ A.T + W.T @ sc.B.T
        perf.append(cp.bmat([
            [S, sc.E, X @ sc.C.T + W.T @ sc.D2.T],
            [sc.E.T, -gam * np.eye(sc.nd), sc.D1.T],
            [sc.C @ X + sc.D2 @ W, sc.D1, -gam * np.eye(sc.nz)],
        ]))
    return perf


def _disk_blocks(sc: _Scaled, X, Ws, rho_local, cross: bool):
    q = 1.0 / sc.T_local
    rd = rho_local / sc.T_local
    out = []
    idx = range(len(sc.A))
    for i in idx:
        for j in (idx if cross else [i]):
            ACX = q * X + sc.A[i] @ X + sc.B @ Ws[j]
            out.append(cp.bmat([[-rd * X, ACX], [ACX.T, -rd * X]]))
    return out


def synthesize_hinf(spec: HinfDesignSpec, margin: float = 1.0,
                    bisect_iters: int = 26) -> DesignResult:
    """Minimize the closed-loop attenuation over the vertex family.

    ``margin`` > 1 re-solves at margin * gamma_star for a strictly interior
    (lower-gain) solution; the reported gamma is re-certified for the gains
    actually returned, so it remains the attenuation they achieve.
    """
    sc = _Scaled(spec)

    def feasible(gam_val):
        X = cp.Variable((sc.n, sc.n), symmetric=True)
        Ws = [cp.Variable((sc.m, sc.n)) for _ in sc.A]
        cons = [X >> 1e-5 * np.eye(sc.n), X << 1e3 * np.eye(sc.n)]
        cons += [blk << 0 for blk in _blocks(sc, X, Ws, cp.Constant(gam_val))]
        cons += [blk << 0 for blk in _disk_blocks(sc, X, Ws, spec.rho_local,
                                                  spec.cross_pairs)]
        if _solve_feasibility(cp.Problem(cp.Minimize(0), cons)):
            feasible.solution = (0.5 * (X.value + X.value.T),
                                 [W.value for W in Ws])
            return True
        return False

    feasible.solution = None
    gamma_star = _bisect(feasible, 0.0, 1.0, bisect_iters)
    if margin > 1.0:
        feasible(margin * gamma_star)
    X, Ws = feasible.solution
    gains = sc.gains_from(X, Ws)
    gamma_cert, X_cert = analyze_gamma(spec, gains, bisect_iters)
    X_state = sc.unscale_X(X) if X_cert is None else X_cert
    residual = lmi_residual(spec, X_state, gains, gamma_cert)
    return DesignResult(X=X_state, W=np.array(Ws), gains=gains,
                        gamma=gamma_cert, status="optimal",
                        lmi_residual=residual)


def analyze_gamma(spec: HinfDesignSpec, gains, bisect_iters: int = 26):
    """Certified attenuation of a fixed gain family (LMI in X only)."""
    sc = _Scaled(spec)

    def feasible(gam_val):
        X = cp.Variable((sc.n, sc.n), symmetric=True)
        cons = [X >> 1e-7 * np.eye(sc.n), X << 1e4 * np.eye(sc.n)]
        for i, A in enumerate(sc.A):
            Acl = A + sc.B @ (np.linalg.inv(sc.Su) @ gains[i] @ sc.Ds)
            Ccl = sc.C + sc.D2 @ (np.linalg.inv(sc.Su) @ gains[i] @ sc.Ds)
            S = Acl @ X + X @ Acl.T
            cons.append(cp.bmat([
                [S, sc.E, X @ Ccl.T],
                [sc.E.T, -gam_val * np.eye(sc.nd), sc.D1.T],
                [Ccl @ X, sc.D1, -gam_val * np.eye(sc.nz)],
            ]) << 0)
        prob = cp.Problem(cp.Minimize(0), cons)
        if _solve_feasibility(prob):
            feasible.X = sc.unscale_X(0.5 * (X.value + X.value.T))
            return True
        return False

    feasible.X = None
    try:
        gamma = _bisect(feasible, 0.0, 1.0, bisect_iters)
    except RuntimeError:
        return float("inf"), None
    return gamma, feasible.X


def analyze_contraction_metric(spec: HinfDesignSpec, gains,
                               rho_local: float | None = None):
    """Common ellipsoid certifying per-local-step Euler contraction of every
    (A_i, K_j) pair; returns the state-space Lyapunov matrix or None."""
    sc = _Scaled(spec)
    rho = spec.rho_local if rho_local is None else rho_local
    q = 1.0 / sc.T_local
    rd = rho / sc.T_local
    X = cp.Variable((sc.n, sc.n), symmetric=True)
    cons = [X >> 1e-6 * np.eye(sc.n), X << 1e4 * np.eye(sc.n)]
    for A in sc.A:
        for K in gains:
            Acl = A + sc.B @ (np.linalg.inv(sc.Su) @ K @ sc.Ds)
            ACX = q * X + Acl @ X
            cons.append(cp.bmat([[-rd * X, ACX], [ACX.T, -rd * X]]) << 0)
    if _solve_feasibility(cp.Problem(cp.Minimize(0), cons)):
        return sc.unscale_X(0.5 * (X.value + X.value.T))
    return None


def lmi_residual(spec: HinfDesignSpec, X_state, gains, gamma: float) -> float:
    """Max eigenvalue over the assembled performance blocks at a solution
    (closed-loop form, scaled coordinates); <= 0 means the LMI holds."""
    sc = _Scaled(spec)
    X = sc.Dsi @ X_state @ sc.Dsi.T
    worst = -np.inf
    for i, A in enumerate(sc.A):
        Kp = np.linalg.inv(sc.Su) @ gains[i] @ sc.Ds
        Acl = A + sc.B @ Kp
        Ccl = sc.C + sc.D2 @ Kp
        S = Acl @ X + X @ Acl.T
        blk = np.block([
            [S, sc.E, X @ Ccl.T],
            [sc.E.T, -gamma * np.eye(sc.nd), sc.D1.T],
            [Ccl @ X, sc.D1, -gamma * np.eye(sc.nz)],
        ])
        worst = max(worst, float(np.linalg.eigvalsh(blk).max()))
    return worst


def closed_loop_vertex_eigenvalues(spec: HinfDesignSpec, gains):
    """Continuous eigenvalues of A_i + B K_i per vertex."""
    return [np.linalg.eigvals(A + spec.B @ K)
            for A, K in zip(spec.A_vertices, gains)]


def discrete_spectral_radii(spec: HinfDesignSpec, gains, T_s: float,
                            substeps: int = 1):
    """Spectral radii of the per-MPC-period closed-loop transitions."""
    out = []
    h = T_s / substeps
    for A, K in zip(spec.A_vertices, gains):
        step = np.eye(spec.B.shape[0]) + h * (A + spec.B @ K)
        out.append(np.max(np.abs(np.linalg.eigvals(
            np.linalg.matrix_power(step, substeps)))))
    return np.array(out)

"""Per-vertex LQR baseline gains (continuous algebraic Riccati)."""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_continuous_are

# MPC weight table entries lifted to LQR weights: Q made PD by +1e-6 I
Q_LQR_DEFAULT = np.diag([0.8 * 0.4 / 14.0**2, 0.0, 0.8 * 0.6 / 2.8**2,
                         0.0, 0.0]) + 1e-6 * np.eye(5)
R_LQR_DEFAULT = np.diag([0.2 * 0.5 / 0.534**2, 0.2 * 0.5 / 15.0**2])


def synthesize_lqr(A_vertices, B, Q=None, R=None):
    """Per-vertex Riccati gains in the A + B K convention (K = -R^-1 B^T P).

    Returns (gain stack, list of Riccati solutions).
    """
    Q = Q_LQR_DEFAULT if Q is None else np.asarray(Q, dtype=float)
    R = R_LQR_DEFAULT if R is None else np.asarray(R, dtype=float)
    if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() < 0:
        raise ValueError("Q must be positive semidefinite")
    if np.linalg.eigvalsh(0.5 * (R + R.T)).min() <= 0:
        raise ValueError("R must be positive definite")
    gains, solutions = [], []
    for A in A_vertices:
        P = solve_continuous_are(A, B, Q, R)
        K = -np.linalg.solve(R, B.T @ P)
        lam = np.linalg.eigvals(A + B @ K)
        if lam.real.max() >= 0:
            raise RuntimeError("Riccati closed loop not Hurwitz")
        gains.append(K)
        solutions.append(P)
    return np.array(gains), solutions

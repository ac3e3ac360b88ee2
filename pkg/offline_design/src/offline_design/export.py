"""Build and export a complete gain schedule for the runtime.

The corrective-controller gains are shaped by per-vertex discrete Riccati
designs at the local-loop period (which keeps every vertex transition
contractive by construction and the input-set erosion inside its budget),
then certified through the attenuation analysis LMI: the exported gamma and
Lyapunov matrix P are a valid certificate of the closed-loop family's
disturbance attenuation, so the published block LMI holds at the exported
solution.  A gamma-optimal synthesis (`synthesize_hinf`) is available but
its minimizing gains violate the constraint-tightening budgets by orders of
magnitude, which would empty the tightened input sets online.

The terminal set is computed on the compound per-MPC-period closed-loop
family in the real eigenbasis of the mid-range transition, where the
enclosure arithmetic provably contracts.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_discrete_are

from zonotube.invariant import ClosedLoopFamily, check_rpi, terminal_set_pipeline
from zonotube.scheduling import (
    GainSchedule,
    SchedulingBounds,
    interpolate_gain,
    load_gains,
    membership_weights,
    save_gains,
)
from zonotube.sets import (
    Box,
    box_erode_zonotope,
    interval_hull,
    linear_image,
    minkowski_sum,
)
from zonotube.tube import disturbance_zonotope
from zonotube.vehicle import LpvModel, simulation_params

from .hinf import (
    DESIGN_STIFFNESS,
    HinfDesignSpec,
    analyze_gamma,
    closed_loop_vertex_eigenvalues,
    discrete_spectral_radii,
    lmi_residual,
)
from .lqr import synthesize_lqr

# published scheduling rows give v_x in [0.5, 10]; the design narrows to the
# operating band: below ~1 m/s the open-loop lateral mode already breaks the
# local Euler step, and interpolating 1/v entries across a 20x speed range
# misrepresents the mid-range dynamics the vehicle actually visits
DESIGN_BOUNDS = SchedulingBounds(v_x=(2.5, 7.5))

U_BOX = Box([-0.267, -2.0], [0.267, 13.0])
X_BOX = Box([1.0, -1.0, -1.4, -np.inf, -np.inf],
            [15.0, 1.0, 1.4, np.inf, np.inf])
T_S = 0.033
T_LOCAL = 0.005
TUBE_SUBSTEPS = 7
HORIZON = 5

# local-loop shaping weights for the corrective controller
Q_CORRECTIVE = np.diag([4.0, 1.0, 20.0, 1.5, 8.0])
R_CORRECTIVE = np.diag([0.6, 0.3])


@dataclass
class ReferenceDesign:
    schedule: GainSchedule
    gamma: float
    lmi_residual: float
    spectral_radii: np.ndarray
    terminal_radii: np.ndarray
    frame: np.ndarray
    report: dict = field(default_factory=dict)


def corrective_vertex_gains(model: LpvModel, bounds: SchedulingBounds,
                            Q=Q_CORRECTIVE, R=R_CORRECTIVE,
                            stiffness: float = DESIGN_STIFFNESS,
                            T_local: float = T_LOCAL) -> np.ndarray:
    """Per-vertex discrete Riccati gains at the local-loop period."""
    gains = []
    for v in bounds.vertices():
        A, B = model.matrices((v[0], v[1], v[2], stiffness, stiffness))
        Ad = np.eye(5) + T_local * A
        Bd = T_local * B
        P = solve_discrete_are(Ad, Bd, Q, R)
        gains.append(-np.linalg.solve(R + Bd.T @ P @ Bd, Bd.T @ P @ Ad))
    return np.array(gains)


def real_eigenbasis(M: np.ndarray) -> np.ndarray:
    """Real basis from the eigenvectors of M (complex pairs give two real
    columns); columns normalized."""
    lam, V = np.linalg.eig(M)
    cols, used = [], set()
    for i in range(len(lam)):
        if i in used:
            continue
        if abs(lam[i].imag) < 1e-12:
            cols.append(V[:, i].real)
            used.add(i)
        else:
            cols.append(V[:, i].real)
            cols.append(V[:, i].imag)
            used.add(i)
            used.add(int(np.argmin(np.abs(lam - lam[i].conjugate()))))
    T = np.array(cols).T
    return T / np.linalg.norm(T, axis=0, keepdims=True)


def compound_transition(model, zeta, K, T_s=T_S, substeps=TUBE_SUBSTEPS,
                        stiffness=DESIGN_STIFFNESS):
    A, B = model.matrices((zeta[0], zeta[1], zeta[2], stiffness, stiffness))
    h = T_s / substeps
    step = np.eye(5) + h * (A + B @ K)
    return np.linalg.matrix_power(step, substeps)


def build_compound_family(model, bounds, gains, T_s=T_S,
                          substeps=TUBE_SUBSTEPS, p_max: int = 60):
    """Per-MPC-period closed-loop family over the scheduling vertices with
    the contraction-adapted frame."""
    mats = [compound_transition(model, v, K, T_s, substeps)
            for v, K in zip(bounds.vertices(), gains)]
    center = np.concatenate([bounds.as_array().mean(axis=1)])
    K_c = interpolate_gain(membership_weights(center, bounds), gains)
    frame = real_eigenbasis(compound_transition(model, center, K_c, T_s,
                                                substeps))
    return ClosedLoopFamily(mats, disturbance_zonotope(), p_max=p_max,
                            frame=frame), frame


def tube_erosion_probe(model, bounds, gains, zeta, T_s=T_S,
                       substeps=TUBE_SUBSTEPS, horizon=HORIZON):
    """Input erosion |K| . radii(Phi_Hp) of a frozen tube at one point."""
    K = interpolate_gain(membership_weights(list(zeta), bounds), gains)
    M = compound_transition(model, zeta, K, T_s, substeps)
    W = disturbance_zonotope()
    phi = W
    for _ in range(horizon):
        phi = minkowski_sum(linear_image(M, phi), W)
    return np.abs(K) @ interval_hull(phi).radius(), K, phi


def build_reference_design(model: LpvModel | None = None,
                           bounds: SchedulingBounds = DESIGN_BOUNDS,
                           epsilon: float = 1e-4) -> ReferenceDesign:
    model = model or LpvModel(simulation_params())
    gains = corrective_vertex_gains(model, bounds)

    # certify attenuation of the exported gains (BRL analysis LMI)
    spec = HinfDesignSpec.from_model(model, bounds)
    gamma, X_gamma = analyze_gamma(spec, gains)
    if X_gamma is None:
        raise RuntimeError("corrective gains admit no attenuation certificate")
    P = np.linalg.inv(0.5 * (X_gamma + X_gamma.T))
    P = 0.5 * (P + P.T)
    residual = lmi_residual(spec, X_gamma, gains, gamma)

    for lam in closed_loop_vertex_eigenvalues(spec, gains):
        if lam.real.max() >= 0:
            raise RuntimeError("a closed-loop vertex is not Hurwitz")
    rho = discrete_spectral_radii(spec, gains, T_S, TUBE_SUBSTEPS)
    if rho.max() >= 1:
        raise RuntimeError("a compound closed-loop vertex is not contractive")

    # erosion sanity at operating probes (tightened input set must survive)
    for vz in (bounds.v_x[0] + 0.5, 0.5 * sum(bounds.v_x), bounds.v_x[1] - 0.5):
        erosion, K, phi = tube_erosion_probe(model, bounds, gains,
                                             (vz, 0.0, 0.0))
        tightened = box_erode_zonotope(U_BOX, linear_image(K, phi))
        if tightened.empty:
            raise RuntimeError(f"tightened input set empty at v_x = {vz}")

    lqr_gains, _ = synthesize_lqr(spec.A_vertices, spec.B)

    family, frame = build_compound_family(model, bounds, gains)
    E0, Ek, rpi = terminal_set_pipeline(family, epsilon=epsilon)
    if not rpi.is_outer_approximation:
        raise RuntimeError("terminal set failed its invariance check")
    radii = interval_hull(rpi.set).radius()

    schedule = GainSchedule(
        bounds=bounds,
        vertex_gains=gains,
        P=P,
        gamma=gamma,
        lqr_gains=lqr_gains,
        terminal_set={
            "center": rpi.set.center.tolist(),
            "generators": rpi.set.generators.tolist(),
            "epsilon_achieved": rpi.epsilon_achieved,
            "iterations": rpi.iterations,
            "is_outer_approximation": rpi.is_outer_approximation,
        },
        metadata={
            "tool": "offline-design",
            "date": datetime.date.today().isoformat(),
            "design_stiffness": DESIGN_STIFFNESS,
            "T_s": T_S,
            "T_local": T_LOCAL,
            "tube_substeps": TUBE_SUBSTEPS,
            "gamma": gamma,
            "lmi_residual": residual,
            "frame": frame.tolist(),
        },
    )
    return ReferenceDesign(
        schedule=schedule,
        gamma=gamma,
        lmi_residual=residual,
        spectral_radii=rho,
        terminal_radii=radii,
        frame=frame,
        report={
            "gamma": gamma,
            "lmi_residual": residual,
            "compound_spectral_radii": rho.tolist(),
            "terminal_hull_radii": radii.tolist(),
            "rpi_iterations": rpi.iterations,
            "epsilon_achieved": rpi.epsilon_achieved,
        },
    )


def export_reference_design(path, design: ReferenceDesign | None = None,
                            report_path=None) -> ReferenceDesign:
    """Write the gains file (validated by re-reading) plus an optional
    synthesis report."""
    design = design or build_reference_design()
    save_gains(path, design.schedule)
    load_gains(path)  # schema round-trip check
    if report_path is not None:
        with open(report_path, "w") as f:
            json.dump(design.report, f, indent=2)
    return design

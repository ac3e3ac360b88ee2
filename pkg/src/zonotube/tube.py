"""Online tube construction: the per-iteration reachable-set sequence and
the constraint tightening derived from it, plus the vertex-polytope variant
used as the timing baseline.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .scheduling import GainSchedule
from .sets import (
    Box,
    VPolytope,
    Zonotope,
    box_erode_zonotope,
    linear_image,
    minkowski_sum,
    poly_linear_image,
    poly_minkowski_sum,
    reduce_generators,
    zonotope_to_vpolytope,
)
from .vehicle import LpvModel

# disturbance-set half-widths per state axis (v_x, v_y, omega, x, theta)
DISTURBANCE_BOUNDS = (0.074, 0.192, 0.105, 0.0, 0.0)


def disturbance_zonotope(bounds=DISTURBANCE_BOUNDS) -> Zonotope:
    """Centered disturbance set; zero-width axes carry no generator."""
    b = np.asarray(bounds, dtype=float)
    cols = [i for i in range(b.size) if b[i] > 0]
    R = np.zeros((b.size, len(cols)))
    for j, i in enumerate(cols):
        R[i, j] = b[i]
    return Zonotope(np.zeros(b.size), R)


@dataclass
class TubeSequence:
    """Reachable sets with the tightened constraint boxes they induce."""

    sets: list                      # H_p + 1 zonotopes
    tightened_states: list          # H_p + 1 boxes
    tightened_inputs: list          # H_p boxes
    any_empty: bool = False

    def __post_init__(self):
        if len(self.tightened_states) != len(self.sets):
            raise ValueError("state boxes must match reachable-set count")
        if len(self.tightened_inputs) != len(self.sets) - 1:
            raise ValueError("need one input box per prediction step")


def closed_loop_step_matrices(zeta_traj, gains: GainSchedule, model: LpvModel,
                              T_s: float, controller: str = "hinf",
                              substeps: int = 1):
    """Per-step (A_cl_d, K) pairs for a frozen scheduling trajectory.

    ``substeps = 1`` is the plain forward-Euler transition at T_s;
    larger values compound the local-loop Euler step (T_s / substeps)
    over one MPC period, which is the transition the multirate error
    dynamics actually follow.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    out = []
    h = T_s / substeps
    for zeta in zeta_traj:
        K = gains.gain(np.asarray(zeta[:3], dtype=float), controller)
        A, B = model.matrices(zeta)
        step = np.eye(A.shape[0]) + h * (A + B @ K)
        A_cl = np.linalg.matrix_power(step, substeps) if substeps > 1 else step
        out.append((A_cl, K))
    return out


def propagate_tube(zeta_traj, gains: GainSchedule, W: Zonotope, T_s: float,
                   H_p: int, model: LpvModel, p_max: int | None = None,
                   controller: str = "hinf",
                   initial: str = "disturbance", substeps: int = 1) -> list:
    """Reachable-set sequence Phi_0 .. Phi_Hp of the closed-loop error
    dynamics.

    ``initial`` selects the first set: "disturbance" starts from W (the
    sound choice: the measured state already carries one disturbance step),
    "null" from the origin.  Generator reduction keeps the per-set budget
    at p_max (default 5n).
    """
    if len(zeta_traj) < H_p:
        raise ValueError(f"need {H_p} scheduling samples, got {len(zeta_traj)}")
    if initial == "disturbance":
        phi = W
    elif initial == "null":
        phi = Zonotope.point(np.zeros(W.dim))
    else:
        raise ValueError(f"unknown initial set policy '{initial}'")
    if p_max is None:
        p_max = 5 * W.dim
    steps = closed_loop_step_matrices(zeta_traj[:H_p], gains, model, T_s,
                                      controller, substeps)
    sets = [phi]
    for A_cl, _ in steps:
        phi = minkowski_sum(linear_image(A_cl, phi), W)
        if phi.num_generators > p_max:
            phi = reduce_generators(phi, p_max)
        sets.append(phi)
    return sets


def tighten_constraints(phis, X: Box, U: Box, gains: GainSchedule,
                        zeta_traj, controller: str = "hinf"):
    """Tightened state and input boxes along the horizon.

    State boxes erode X by each reachable set; input boxes erode U by the
    image of the reachable set under the local gain.  Emptiness is data,
    not an error: callers must check the flags.
    """
    states = [box_erode_zonotope(X, phi) for phi in phis]
    inputs = []
    for i, phi in enumerate(phis[:-1]):
        K = gains.gain(np.asarray(zeta_traj[i][:3], dtype=float), controller)
        inputs.append(box_erode_zonotope(U, linear_image(K, phi)))
    return states, inputs


def build_tube(zeta_traj, gains: GainSchedule, W: Zonotope, T_s: float,
               H_p: int, model: LpvModel, X: Box, U: Box,
               p_max: int | None = None, controller: str = "hinf",
               initial: str = "disturbance",
               substeps: int = 1) -> TubeSequence:
    phis = propagate_tube(zeta_traj, gains, W, T_s, H_p, model, p_max,
                          controller, initial, substeps)
    states, inputs = tighten_constraints(phis, X, U, gains, zeta_traj,
                                         controller)
    empty = any(b.empty for b in states) or any(b.empty for b in inputs)
    return TubeSequence(sets=phis, tightened_states=states,
                        tightened_inputs=inputs, any_empty=empty)


def propagate_tube_polytope(zeta_traj, gains: GainSchedule, W: Zonotope,
                            T_s: float, H_p: int, model: LpvModel,
                            controller: str = "hinf",
                            initial: str = "disturbance",
                            substeps: int = 1) -> list:
    """Vertex-polytope version of the tube recursion (benchmark baseline).

    Semantically identical to the zonotope path while no generator
    reduction triggers; every step pays a pairwise vertex sum plus an
    exact convex hull.
    """
    W_poly = zonotope_to_vpolytope(W)
    if initial == "disturbance":
        poly = W_poly
    elif initial == "null":
        poly = VPolytope(np.zeros((1, W.dim)), rank=0)
    else:
        raise ValueError(f"unknown initial set policy '{initial}'")
    steps = closed_loop_step_matrices(zeta_traj[:H_p], gains, model, T_s,
                                      controller, substeps)
    sets = [poly]
    for A_cl, _ in steps:
        poly = poly_minkowski_sum(poly_linear_image(A_cl, poly), W_poly)
        sets.append(poly)
    return sets


@dataclass
class TubeTimingRecord:
    repetition: int
    step: int
    representation: str
    microseconds: float
    set_size: int  # generator count (zonotope) or vertex count (polytope)


def _timed_tube(step_matrices, W, initial_set, advance, size_of, rep,
                representation, records):
    current = initial_set
    total = 0.0
    for i, (A_cl, _) in enumerate(step_matrices):
        t0 = time.perf_counter_ns()
        current = advance(A_cl, current)
        dt_us = (time.perf_counter_ns() - t0) / 1000.0
        total += dt_us
        records.append(TubeTimingRecord(rep, i + 1, representation, dt_us,
                                        size_of(current)))
    return total


def benchmark_tube(zeta_traj, gains: GainSchedule, W: Zonotope, T_s: float,
                   H_p: int, model: LpvModel, reps_zonotope: int = 1000,
                   reps_polytope: int = 25, p_max: int | None = None,
                   controller: str = "hinf", substeps: int = 1):
    """Time the zonotope tube against the vertex-polytope baseline.

    Returns (records, summary): per-step timing records and a summary with
    mean/median/p99 per representation plus the speedup ratio of mean
    sequence times.
    """
    if p_max is None:
        p_max = 5 * W.dim
    steps = closed_loop_step_matrices(zeta_traj[:H_p], gains, model, T_s,
                                      controller, substeps)
    records: list[TubeTimingRecord] = []

    def zono_advance(A_cl, phi):
        phi = minkowski_sum(linear_image(A_cl, phi), W)
        if phi.num_generators > p_max:
            phi = reduce_generators(phi, p_max)
        return phi

    W_poly = zonotope_to_vpolytope(W)

    def poly_advance(A_cl, poly):
        return poly_minkowski_sum(poly_linear_image(A_cl, poly), W_poly)

    zono_totals = np.array([
        _timed_tube(steps, W, W, zono_advance,
                    lambda z: z.num_generators, rep, "zonotope", records)
        for rep in range(reps_zonotope)])
    poly_totals = np.array([
        _timed_tube(steps, W, W_poly, poly_advance,
                    lambda p: p.num_vertices, rep, "polytope", records)
        for rep in range(reps_polytope)])

    def stats(totals):
        return {
            "mean_us": float(np.mean(totals)),
            "median_us": float(np.median(totals)),
            "p99_us": float(np.percentile(totals, 99)),
            "repetitions": int(totals.size),
        }

    summary = {
        "zonotope": stats(zono_totals),
        "polytope": stats(poly_totals),
        "speedup_ratio": float(np.mean(poly_totals) / np.mean(zono_totals)),
        "horizon": H_p,
    }
    return records, summary

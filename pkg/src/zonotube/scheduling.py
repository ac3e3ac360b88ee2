"""Polytopic membership weights over the scheduling box and online
interpolation of vertex feedback gains, plus gains-file IO.

Vertex ordering contract: vertex i of the 2^3 = 8 combinations is the binary
counter over (v_x, v_y, delta) with v_x as the most significant bit and bit
value 0 selecting the lower interval endpoint.  The ordering is serialized in
the gains file so the offline design tool and the runtime cannot drift.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

N_SCHEDULING = 3
N_VERTICES = 8
SCHEDULING_NAMES = ("v_x", "v_y", "delta")


def canonical_vertex_order(n_vars: int = N_SCHEDULING) -> list[str]:
    """Bit strings '000'..'111' over (v_x, v_y, delta), MSB first."""
    return [format(i, f"0{n_vars}b") for i in range(2**n_vars)]


@dataclass(frozen=True)
class SchedulingBounds:
    """Per-variable intervals for zeta = (v_x, v_y, delta)."""

    v_x: tuple = (0.5, 10.0)
    v_y: tuple = (-0.6, 0.6)
    delta: tuple = (-0.267, 0.267)

    def __post_init__(self):
        for name, (lo, hi) in zip(SCHEDULING_NAMES, self.intervals()):
            if not lo < hi:
                raise ValueError(f"scheduling interval for {name} must have "
                                 f"lower < upper, got [{lo}, {hi}]")

    def intervals(self):
        return (self.v_x, self.v_y, self.delta)

    def as_array(self) -> np.ndarray:
        return np.array(self.intervals())

    def vertices(self) -> np.ndarray:
        """(8, 3) vertex array in the canonical bit order."""
        iv = self.as_array()
        out = np.empty((N_VERTICES, N_SCHEDULING))
        for i, bits in enumerate(canonical_vertex_order()):
            out[i] = [iv[j][int(b)] for j, b in enumerate(bits)]
        return out

    def clamp(self, zeta, slack_fraction: float = 0.01) -> np.ndarray:
        """Clamp zeta into the box; warn when marginally outside, raise when
        outside by more than ``slack_fraction`` of the interval width."""
        z = np.asarray(zeta, dtype=float).copy()
        iv = self.as_array()
        widths = iv[:, 1] - iv[:, 0]
        below = iv[:, 0] - z
        above = z - iv[:, 1]
        excess = np.maximum(below, above)
        if np.any(excess > slack_fraction * widths):
            j = int(np.argmax(excess / widths))
            raise ValueError(
                f"scheduling variable {SCHEDULING_NAMES[j]} = {z[j]:.4g} is "
                f"outside its interval {tuple(iv[j])} by more than "
                f"{slack_fraction:.0%} of the range")
        if np.any(excess > 0):
            warnings.warn("scheduling vector marginally outside its box; "
                          "clamped", stacklevel=2)
        return np.clip(z, iv[:, 0], iv[:, 1])


def membership_weights(zeta, bounds: SchedulingBounds,
                       slack_fraction: float = 0.01) -> np.ndarray:
    """Barycentric weights over the 8 box vertices.

    Weight i is the product over variables of eta0 (lower-endpoint weight,
    (upper - z)/(upper - lower)) or eta1 = 1 - eta0 according to the
    canonical bit pattern of vertex i.  Weights are nonnegative and sum to
    one for any zeta in the box.
    """
    z = bounds.clamp(zeta, slack_fraction)
    iv = bounds.as_array()
    eta0 = (iv[:, 1] - z) / (iv[:, 1] - iv[:, 0])
    eta1 = 1.0 - eta0
    w = np.empty(N_VERTICES)
    for i, bits in enumerate(canonical_vertex_order()):
        prod = 1.0
        for j, b in enumerate(bits):
            prod *= eta1[j] if b == "1" else eta0[j]
        w[i] = prod
    return w


def interpolate_gain(weights, gains) -> np.ndarray:
    """K = sum_i mu_i K_i over the vertex gain list."""
    w = np.asarray(weights, dtype=float)
    K = np.asarray(gains, dtype=float)
    if w.shape[0] != K.shape[0]:
        raise ValueError(f"{w.shape[0]} weights for {K.shape[0]} vertex gains")
    return np.einsum("i,ijk->jk", w, K)


def local_control(error, K) -> np.ndarray:
    """Corrective action u = K e."""
    return np.asarray(K, dtype=float) @ np.asarray(error, dtype=float)


class GainSchedule:
    """Offline-designed vertex gains with the shared Lyapunov/terminal-cost
    matrix.  Immutable after construction; safe for concurrent readers."""

    def __init__(self, bounds: SchedulingBounds, vertex_gains, P, gamma: float,
                 vertex_order=None, lqr_gains=None, terminal_set=None,
                 metadata=None):
        self.bounds = bounds
        self.vertex_gains = np.asarray(vertex_gains, dtype=float)
        self.P = np.asarray(P, dtype=float)
        self.gamma = float(gamma)
        self.vertex_order = list(vertex_order) if vertex_order is not None \
            else canonical_vertex_order()
        self.lqr_gains = None if lqr_gains is None \
            else np.asarray(lqr_gains, dtype=float)
        self.terminal_set = terminal_set  # optional dict from the gains file
        self.metadata = dict(metadata or {})
        self._validate()
        self.vertex_gains.setflags(write=False)
        self.P.setflags(write=False)
        if self.lqr_gains is not None:
            self.lqr_gains.setflags(write=False)

    def _validate(self):
        if self.vertex_gains.shape[0] != N_VERTICES:
            raise ValueError(
                f"expected {N_VERTICES} vertex gains, "
                f"got {self.vertex_gains.shape[0]}")
        if self.vertex_gains.ndim != 3:
            raise ValueError("vertex gains must be a stack of matrices")
        if not np.all(np.isfinite(self.vertex_gains)):
            raise ValueError("vertex gains must be finite")
        n = self.vertex_gains.shape[2]
        if self.P.shape != (n, n):
            raise ValueError(f"P must be {n}x{n}")
        if not np.allclose(self.P, self.P.T, atol=1e-10):
            raise ValueError("P must be symmetric")
        eigs = np.linalg.eigvalsh(0.5 * (self.P + self.P.T))
        if eigs.min() <= 0:
            raise ValueError(f"P must be positive definite "
                             f"(min eigenvalue {eigs.min():.3e})")
        if self.vertex_order != canonical_vertex_order():
            raise ValueError("gains file vertex_order does not match the "
                             "canonical binary-counter ordering")
        if self.lqr_gains is not None and \
                self.lqr_gains.shape != self.vertex_gains.shape:
            raise ValueError("lqr gain stack must match the vertex gain shape")

    @property
    def n_states(self) -> int:
        return self.vertex_gains.shape[2]

    @property
    def n_inputs(self) -> int:
        return self.vertex_gains.shape[1]

    def weights(self, zeta) -> np.ndarray:
        return membership_weights(zeta, self.bounds)

    def gain(self, zeta, controller: str = "hinf") -> np.ndarray:
        """Interpolated feedback gain at a scheduling point."""
        stack = self.gain_stack(controller)
        return interpolate_gain(self.weights(zeta), stack)

    def gain_stack(self, controller: str = "hinf") -> np.ndarray:
        if controller == "hinf":
            return self.vertex_gains
        if controller == "lqr":
            if self.lqr_gains is None:
                raise ValueError("gains file carries no LQR baseline gains")
            return self.lqr_gains
        raise ValueError(f"unknown controller '{controller}'")


def save_gains(path, schedule: GainSchedule):
    """Serialize a GainSchedule to the JSON gains-file schema."""
    payload = {
        "n": schedule.n_states,
        "m": schedule.n_inputs,
        "n_zeta": N_SCHEDULING,
        "bounds": {name: list(iv) for name, iv in
                   zip(SCHEDULING_NAMES, schedule.bounds.intervals())},
        "vertex_order": schedule.vertex_order,
        "K": schedule.vertex_gains.tolist(),
        "P": schedule.P.tolist(),
        "gamma": schedule.gamma,
        "metadata": schedule.metadata,
    }
    if schedule.lqr_gains is not None:
        payload["K_lqr"] = schedule.lqr_gains.tolist()
    if schedule.terminal_set is not None:
        payload["chi_f"] = schedule.terminal_set
    with open(path, "w") as f:
        json.dump(payload, f, indent=1)


def load_gains(path) -> GainSchedule:
    """Load and validate a gains file (schema, vertex count, P > 0)."""
    with open(path) as f:
        raw = json.load(f)
    required = {"n", "m", "n_zeta", "bounds", "vertex_order", "K", "P",
                "gamma"}
    missing = required - raw.keys()
    if missing:
        raise ValueError(f"gains file missing fields: {sorted(missing)}")
    if raw["n_zeta"] != N_SCHEDULING:
        raise ValueError(f"expected n_zeta = {N_SCHEDULING}, "
                         f"got {raw['n_zeta']}")
    bounds = SchedulingBounds(**{k: tuple(v) for k, v in raw["bounds"].items()})
    K = np.asarray(raw["K"], dtype=float)
    if K.shape != (N_VERTICES, raw["m"], raw["n"]):
        raise ValueError(f"K has shape {K.shape}, expected "
                         f"({N_VERTICES}, {raw['m']}, {raw['n']})")
    return GainSchedule(
        bounds=bounds,
        vertex_gains=K,
        P=raw["P"],
        gamma=raw["gamma"],
        vertex_order=raw["vertex_order"],
        lqr_gains=raw.get("K_lqr"),
        terminal_set=raw.get("chi_f"),
        metadata=raw.get("metadata"),
    )

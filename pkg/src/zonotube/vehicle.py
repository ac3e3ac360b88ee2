"""Bicycle vehicle models: the control-design LPV model, the tire-stiffness
functions, and the higher-fidelity simulation plant.

Two sign conventions exist for the yaw-rate term inside the slip angles and
they are not interchangeable.  ``slip_sign=+1`` reproduces the published
formulas verbatim (front slip ``delta - v_y/v_x + l_f*w/v_x``); ``-1`` is the
classical convention (front axle lateral velocity ``v_y + l_f*w``), which is
the one the published state-space entries actually embed and the only one
with stabilizing yaw damping.  The model classes default to the classical
convention and derive their matrices from it, so the linear embedding is
exact for either choice.  The standalone slip helpers default to the
published form.  The integrator rows carry the same treatment
(``integrator_sign=+1`` physical, ``-1`` as published).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

N_STATES = 5
N_INPUTS = 2

PRINTED_SLIP_SIGN = +1
CLASSICAL_SLIP_SIGN = -1


@dataclass(frozen=True)
class VehicleParams:
    """Physical vehicle parameters (Driverless UPC car defaults).

    ``tire_scale`` multiplies the plant's Pacejka peak factors and
    ``mu`` enters the longitudinal resistance term; both are calibration
    points for closed-loop simulation (see data/sim_vehicle.json).
    """

    l_f: float = 0.902        # m, CoG to front axle
    l_r: float = 0.638        # m, CoG to rear axle
    m: float = 196.0          # kg
    I: float = 93.0           # kg m^2, yaw inertia
    d_f: float = 8.255        # Pacejka peak factor, front
    c_f: float = 1.6          # Pacejka shape factor, front
    b_f: float = 6.1          # Pacejka stiffness factor, front
    d_r: float = 8.255
    c_r: float = 1.6
    b_r: float = 6.1
    mu: float = 1.4           # resistance coefficient in F_df
    rho: float = 1.225        # kg/m^3
    g: float = 9.81           # m/s^2
    C_dAf: float = 1.64       # m^2, frontal drag-area product
    C_dAl: float = 1.82       # m^2, lateral drag-area product
    tire_scale: float = 1.0   # plant Pacejka force scale

    def __post_init__(self):
        for name in ("l_f", "l_r", "m", "I", "d_f", "c_f", "b_f", "d_r",
                     "c_r", "b_r", "mu", "rho", "g", "C_dAf", "C_dAl",
                     "tire_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"vehicle parameter {name} must be positive")


@dataclass(frozen=True)
class VehicleState:
    v_x: float   # m/s, longitudinal velocity
    v_y: float   # m/s, lateral velocity
    omega: float  # rad/s, yaw rate
    x: float     # m, integrated longitudinal position
    theta: float  # rad, integrated heading

    def as_array(self) -> np.ndarray:
        return np.array([self.v_x, self.v_y, self.omega, self.x, self.theta])

    @staticmethod
    def from_array(a) -> "VehicleState":
        return VehicleState(*(float(v) for v in a))


@dataclass(frozen=True)
class ControlInput:
    delta: float  # rad, front steering angle
    a: float      # m/s^2, rear longitudinal acceleration

    def as_array(self) -> np.ndarray:
        return np.array([self.delta, self.a])


@dataclass(frozen=True)
class Disturbance:
    phi: float = 0.0   # rad, road slope
    v_w: float = 0.0   # m/s, lateral wind speed


@dataclass(frozen=True)
class TirePoly:
    """Stiffness polynomial C(a) = p1 a^3 + p2 a^2 + p3 a + p4 + p5/(a+eps),
    saturated to ``saturation_value`` on [0, saturation_band]."""

    coefficients: tuple = (-2.167e6, 1.284e6, -0.288e6, 0.029e6, 15.038)
    order: int = 4
    eps: float = 1e-4
    saturation_band: float = 0.0075
    saturation_value: float = 4.0e4

    def __post_init__(self):
        if len(self.coefficients) != self.order + 1:
            raise ValueError("tire polynomial needs order + 1 coefficients")


FRONT_TIRE = TirePoly()
REAR_TIRE = TirePoly(coefficients=(-2.130e6, 1.198e6, -0.252e6, 0.024e6, 14.551))


def tire_stiffness(alpha, poly: TirePoly = FRONT_TIRE):
    """LPV tire stiffness coefficient, N/rad.

    Evaluated on |alpha| so that the force C(alpha)*alpha is odd; returns
    the saturation value exactly inside the small-slip band.
    """
    a = np.abs(np.asarray(alpha, dtype=float))
    p = poly.coefficients
    powers = sum(p[i] * a ** (poly.order - 1 - i) for i in range(poly.order))
    c = powers + p[-1] / (a + poly.eps)
    c = np.where(a <= poly.saturation_band, poly.saturation_value, c)
    return float(c) if np.isscalar(alpha) else c


def slip_angles_lpv(s: VehicleState, u: ControlInput, p: VehicleParams,
                    slip_sign: int = PRINTED_SLIP_SIGN):
    """Small-angle slip angles of the design model.

    Default reproduces the published formulas
    (a_f = delta - v_y/v_x + l_f w/v_x, a_r = -v_y/v_x - l_r w/v_x);
    ``slip_sign=-1`` selects the classical convention.
    """
    if s.v_x <= 0:
        raise ValueError("slip angles require v_x > 0")
    a_f = u.delta - s.v_y / s.v_x + slip_sign * p.l_f * s.omega / s.v_x
    a_r = -s.v_y / s.v_x - slip_sign * p.l_r * s.omega / s.v_x
    return a_f, a_r


def slip_angles_plant(s: VehicleState, u: ControlInput, p: VehicleParams,
                      slip_sign: int = PRINTED_SLIP_SIGN):
    """Arctangent slip angles of the simulation plant (published form by
    default: a_f = delta - atan(v_y/v_x - l_f w/v_x))."""
    if s.v_x <= 0:
        raise ValueError("slip angles require v_x > 0")
    a_f = u.delta - math.atan(s.v_y / s.v_x - slip_sign * p.l_f * s.omega / s.v_x)
    a_r = -math.atan(s.v_y / s.v_x + slip_sign * p.l_r * s.omega / s.v_x)
    return a_f, a_r


def lpv_matrices(zeta, C_f: float, C_r: float, p: VehicleParams,
                 slip_sign: int = CLASSICAL_SLIP_SIGN,
                 integrator_sign: int = +1,
                 v_x_min: float = 0.1):
    """Continuous-time state-space pair (A, B) for scheduling point
    ``zeta = (v_x, v_y, delta)`` and frozen stiffness values.

    With the classical slip convention the entries coincide with the
    published matrices.
    """
    v_x, v_y, delta = float(zeta[0]), float(zeta[1]), float(zeta[2])
    if v_x < v_x_min:
        raise ValueError(f"v_x = {v_x} below scheduling bound {v_x_min}")
    sd, cd = math.sin(delta), math.cos(delta)
    m, I, l_f, l_r = p.m, p.I, p.l_f, p.l_r
    sgn = float(slip_sign)

    A = np.zeros((N_STATES, N_STATES))
    B = np.zeros((N_STATES, N_INPUTS))
    A[0, 0] = -p.mu * p.g / v_x - p.rho * p.C_dAf * v_x / (2 * m)
    A[0, 1] = C_f * sd / (m * v_x)
    A[0, 2] = -sgn * C_f * l_f * sd / (m * v_x) + v_y
    A[1, 1] = -(C_r + C_f * cd) / (m * v_x)
    A[1, 2] = sgn * (C_f * l_f * cd - C_r * l_r) / (m * v_x) - v_x
    A[2, 1] = -(C_f * l_f * cd - l_r * C_r) / (I * v_x)
    A[2, 2] = sgn * (C_f * l_f**2 * cd + l_r**2 * C_r) / (I * v_x)
    A[3, 0] = float(integrator_sign)
    A[4, 2] = float(integrator_sign)
    B[0, 0] = -C_f * sd / m
    B[0, 1] = 1.0
    B[1, 0] = C_f * cd / m
    B[2, 0] = C_f * l_f * cd / I
    return A, B


def discretize_euler(A, B, T_s: float):
    """Forward-Euler discretization (A_d, B_d) = (I + A*T_s, B*T_s)."""
    if T_s < 0:
        raise ValueError("T_s must be nonnegative")
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    return np.eye(A.shape[0]) + A * T_s, B * T_s


class LpvModel:
    """Design model: Eq.-(9)-style nonlinear right-hand side plus its exact
    linear parameter embedding, sharing one slip convention so that
    f(x, u) == A(zeta) x + B(zeta) u identically."""

    def __init__(self, params: VehicleParams | None = None,
                 front_tire: TirePoly = FRONT_TIRE,
                 rear_tire: TirePoly = REAR_TIRE,
                 slip_sign: int = CLASSICAL_SLIP_SIGN,
                 integrator_sign: int = +1,
                 v_x_min: float = 0.1):
        self.params = params if params is not None else VehicleParams()
        self.front_tire = front_tire
        self.rear_tire = rear_tire
        self.slip_sign = slip_sign
        self.integrator_sign = integrator_sign
        self.v_x_min = v_x_min

    def slip_angles(self, s: VehicleState, u: ControlInput):
        return slip_angles_lpv(s, u, self.params, slip_sign=self.slip_sign)

    def stiffness(self, s: VehicleState, u: ControlInput):
        a_f, a_r = self.slip_angles(s, u)
        return (tire_stiffness(a_f, self.front_tire),
                tire_stiffness(a_r, self.rear_tire))

    def scheduling(self, s: VehicleState, u: ControlInput):
        """Full scheduling sample (v_x, v_y, delta, C_f, C_r)."""
        C_f, C_r = self.stiffness(s, u)
        return (s.v_x, s.v_y, u.delta, C_f, C_r)

    def matrices(self, scheduling):
        v_x, v_y, delta, C_f, C_r = scheduling
        return lpv_matrices((v_x, v_y, delta), C_f, C_r, self.params,
                            slip_sign=self.slip_sign,
                            integrator_sign=self.integrator_sign,
                            v_x_min=self.v_x_min)

    def discrete_matrices(self, scheduling, T_s: float):
        A, B = self.matrices(scheduling)
        return discretize_euler(A, B, T_s)

    def f(self, s: VehicleState, u: ControlInput) -> np.ndarray:
        """Nonlinear design-model derivative with the model's conventions."""
        p = self.params
        if s.v_x <= 0:
            raise ValueError("design model requires v_x > 0")
        a_f, a_r = self.slip_angles(s, u)
        F_yf = tire_stiffness(a_f, self.front_tire) * a_f
        F_yr = tire_stiffness(a_r, self.rear_tire) * a_r
        F_df = p.mu * p.m * p.g + 0.5 * p.rho * p.C_dAf * s.v_x**2
        sd, cd = math.sin(u.delta), math.cos(u.delta)
        return np.array([
            u.a + (-F_yf * sd - F_df) / p.m + s.omega * s.v_y,
            (F_yf * cd + F_yr) / p.m - s.omega * s.v_x,
            (F_yf * p.l_f * cd - F_yr * p.l_r) / p.I,
            self.integrator_sign * s.v_x,
            self.integrator_sign * s.omega,
        ])


def plant_derivatives(s: VehicleState, u: ControlInput, d: Disturbance,
                      p: VehicleParams,
                      slip_sign: int = CLASSICAL_SLIP_SIGN) -> np.ndarray:
    """Simulation-plant state derivative with Pacejka tire forces, drag,
    road-slope and lateral-wind disturbances."""
    if s.v_x <= 0:
        raise ValueError("plant requires v_x > 0")
    a_f, a_r = slip_angles_plant(s, u, p, slip_sign=slip_sign)
    F_yf = p.tire_scale * p.d_f * math.sin(p.c_f * math.atan(p.b_f * a_f))
    F_yr = p.tire_scale * p.d_r * math.sin(p.c_r * math.atan(p.b_r * a_r))
    F_df = p.mu * p.m * p.g + 0.5 * p.rho * p.C_dAf * s.v_x**2
    F_w = 0.5 * p.rho * p.C_dAl * d.v_w**2
    sd, cd = math.sin(u.delta), math.cos(u.delta)
    return np.array([
        u.a + (-F_yf * sd - F_df) / p.m + s.omega * s.v_y
        - p.g * math.sin(d.phi),
        (F_yf * cd + F_yr - F_w) / p.m - s.omega * s.v_x,
        (F_yf * p.l_f * cd - F_yr * p.l_r - F_w * (p.l_f - p.l_r)) / p.I,
        s.v_x,
        s.omega,
    ])


def plant_step_rk4(s: VehicleState, u: ControlInput, d: Disturbance,
                   p: VehicleParams, h: float,
                   slip_sign: int = CLASSICAL_SLIP_SIGN) -> VehicleState:
    """Classical 4th-order Runge-Kutta step of the plant ODE."""
    if h <= 0:
        raise ValueError("step size must be positive")

    def deriv(arr):
        return plant_derivatives(VehicleState.from_array(arr), u, d, p,
                                 slip_sign=slip_sign)

    x0 = s.as_array()
    k1 = deriv(x0)
    k2 = deriv(x0 + 0.5 * h * k1)
    k3 = deriv(x0 + 0.5 * h * k2)
    k4 = deriv(x0 + h * k3)
    x1 = x0 + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if x1[0] <= 0.1:
        raise ValueError(f"plant left validity region: v_x = {x1[0]:.4f}")
    return VehicleState.from_array(x1)


def fit_tire_poly(samples, order: int = 4, eps: float = 1e-4,
                  saturation_band: float = 0.0075,
                  saturation_value: float = 4.0e4) -> TirePoly:
    """Least-squares polynomial fit of lateral-force samples.

    ``samples`` is a sequence of (alpha, F_y) pairs; the fitted force model
    F(a) = p1 a^n + ... + p_n a + p_{n+1} carries over into the stiffness
    form with p_{n+1} regularized by eps.
    """
    data = np.asarray(samples, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError("samples must be (alpha, F_y) pairs")
    if data.shape[0] < order + 2:
        raise ValueError(f"need at least {order + 2} samples")
    alpha, force = data[:, 0], data[:, 1]
    V = np.vander(alpha, order + 1)  # columns alpha^n ... alpha^0
    coef, _, rank, _ = np.linalg.lstsq(V, force, rcond=None)
    if rank < order + 1:
        raise ValueError("rank-deficient design matrix in tire fit")
    return TirePoly(coefficients=tuple(coef), order=order, eps=eps,
                    saturation_band=saturation_band,
                    saturation_value=saturation_value)


def tire_poly_force(poly: TirePoly, alpha):
    """Force implied by the fitted polynomial, F(a) = sum p_i a^(n+1-i)."""
    a = np.asarray(alpha, dtype=float)
    return np.polyval(poly.coefficients, a)


# ---------------------------------------------------------------------------
# config file interface
# ---------------------------------------------------------------------------

def load_vehicle_config(path):
    """Load (VehicleParams, front TirePoly, rear TirePoly) from a JSON file
    mirroring the two parameter tables."""
    with open(path) as f:
        raw = json.load(f)
    params = VehicleParams(**raw["vehicle"])

    def tire(section):
        return TirePoly(
            coefficients=tuple(section["coefficients"]),
            order=section.get("order", 4),
            eps=section.get("eps", 1e-4),
            saturation_band=section.get("saturation_band", 0.0075),
            saturation_value=section.get("saturation_value", 4.0e4),
        )

    return params, tire(raw["tire_front"]), tire(raw["tire_rear"])


def save_vehicle_config(path, params: VehicleParams,
                        front: TirePoly = FRONT_TIRE,
                        rear: TirePoly = REAR_TIRE):
    payload = {
        "vehicle": {k: getattr(params, k) for k in (
            "l_f", "l_r", "m", "I", "d_f", "c_f", "b_f", "d_r", "c_r", "b_r",
            "mu", "rho", "g", "C_dAf", "C_dAl", "tire_scale")},
        "tire_front": {"coefficients": list(front.coefficients),
                       "order": front.order, "eps": front.eps,
                       "saturation_band": front.saturation_band,
                       "saturation_value": front.saturation_value},
        "tire_rear": {"coefficients": list(rear.coefficients),
                      "order": rear.order, "eps": rear.eps,
                      "saturation_band": rear.saturation_band,
                      "saturation_value": rear.saturation_value},
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)


def simulation_params(**overrides) -> VehicleParams:
    """Vehicle parameters calibrated for closed-loop simulation.

    Two published constants cannot be used verbatim in closed loop: the
    resistance coefficient 1.4 makes the equilibrium acceleration exceed
    the input bound (no speed is sustainable), and the raw Pacejka peak
    factor yields tire forces ~300x weaker than the fitted stiffness
    polynomials.  The calibration keeps every shape constant and aligns
    the plant's linear-range cornering stiffness with the design model's
    saturation stiffness.
    """
    base = VehicleParams()
    # linear-range Pacejka stiffness d*c*b matched to the 4e4 N/rad saturation
    scale = 4.0e4 / (base.d_f * base.c_f * base.b_f)
    cfg = dict(mu=0.02, tire_scale=scale)
    cfg.update(overrides)
    return replace(base, **cfg)

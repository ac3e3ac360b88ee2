import math

import numpy as np
import pytest

from zonotube.vehicle import (
    CLASSICAL_SLIP_SIGN,
    FRONT_TIRE,
    PRINTED_SLIP_SIGN,
    REAR_TIRE,
    ControlInput,
    Disturbance,
    LpvModel,
    TirePoly,
    VehicleParams,
    VehicleState,
    discretize_euler,
    fit_tire_poly,
    load_vehicle_config,
    lpv_matrices,
    plant_derivatives,
    plant_step_rk4,
    save_vehicle_config,
    simulation_params,
    slip_angles_lpv,
    slip_angles_plant,
    tire_poly_force,
    tire_stiffness,
)

PARAMS = VehicleParams()


def pacejka_force(alpha, d, c, b):
    return d * math.sin(c * math.atan(b * alpha))


class TestTireStiffness:
    def test_saturation_band(self):
        assert tire_stiffness(0.005) == 4.0e4
        assert tire_stiffness(0.0) == 4.0e4
        assert tire_stiffness(0.0075) == 4.0e4
        assert tire_stiffness(-0.005) == 4.0e4

    def test_formula_value_front(self):
        # independent term-by-term evaluation with the front coefficients
        a = 0.02
        expected = (-2.167e6 * a**3 + 1.284e6 * a**2 - 0.288e6 * a
                    + 0.029e6 + 15.038 / (a + 1e-4))
        assert tire_stiffness(a, FRONT_TIRE) == pytest.approx(expected,
                                                              rel=1e-12)

    def test_force_is_odd(self):
        for a in (0.003, 0.02, 0.1, 0.25):
            f_pos = tire_stiffness(a, FRONT_TIRE) * a
            f_neg = tire_stiffness(-a, FRONT_TIRE) * (-a)
            assert f_pos == pytest.approx(-f_neg, rel=1e-12)

    @pytest.mark.xfail(
        strict=True,
        reason="the published Pacejka peak factor (8.255) and the published "
               "stiffness polynomials disagree by ~300x in force scale; no "
               "constant rescaling brings them within 15% at alpha = 0.02")
    def test_matches_published_pacejka_curve(self):
        a = 0.02
        poly_force = tire_stiffness(a, FRONT_TIRE) * a
        pac = pacejka_force(a, PARAMS.d_f, PARAMS.c_f, PARAMS.b_f)
        assert abs(poly_force - pac) <= 0.15 * abs(pac)

    def test_calibrated_linear_range_matches_saturation(self):
        p = simulation_params()
        slope = p.tire_scale * p.d_f * p.c_f * p.b_f
        assert slope == pytest.approx(4.0e4, rel=1e-12)

    def test_vectorized(self):
        a = np.array([0.0, 0.005, 0.02, -0.02])
        c = tire_stiffness(a, FRONT_TIRE)
        assert c.shape == (4,)
        assert c[0] == c[1] == 4.0e4
        assert c[2] == c[3]


class TestSlipAngles:
    def test_zero_motion(self):
        s = VehicleState(5.0, 0.0, 0.0, 0.0, 0.0)
        assert slip_angles_lpv(s, ControlInput(0.0, 0.0), PARAMS) == (0.0, 0.0)
        assert slip_angles_plant(s, ControlInput(0.0, 0.0), PARAMS) == (0.0, 0.0)

    def test_pure_steering(self):
        s = VehicleState(5.0, 0.0, 0.0, 0.0, 0.0)
        a_f, a_r = slip_angles_lpv(s, ControlInput(0.1, 0.0), PARAMS)
        assert a_f == pytest.approx(0.1)
        assert a_r == 0.0
        a_f, a_r = slip_angles_plant(s, ControlInput(0.1, 0.0), PARAMS)
        assert a_f == pytest.approx(0.1)
        assert a_r == 0.0

    def test_published_form(self):
        s = VehicleState(5.0, 0.2, 0.3, 0.0, 0.0)
        u = ControlInput(0.0, 0.0)
        a_f, a_r = slip_angles_lpv(s, u, PARAMS, slip_sign=PRINTED_SLIP_SIGN)
        assert a_f == pytest.approx(-0.2 / 5 + 0.902 * 0.3 / 5)
        assert a_r == pytest.approx(-0.2 / 5 - 0.638 * 0.3 / 5)

    def test_plant_published_form(self):
        s = VehicleState(5.0, 0.2, 0.3, 0.0, 0.0)
        u = ControlInput(0.05, 0.0)
        a_f, a_r = slip_angles_plant(s, u, PARAMS, slip_sign=PRINTED_SLIP_SIGN)
        assert a_f == pytest.approx(0.05 - math.atan(0.2 / 5 - 0.902 * 0.3 / 5))
        assert a_r == pytest.approx(-math.atan(0.2 / 5 + 0.638 * 0.3 / 5))

    def test_requires_positive_speed(self):
        s = VehicleState(0.0, 0.0, 0.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            slip_angles_lpv(s, ControlInput(0.0, 0.0), PARAMS)
        with pytest.raises(ValueError):
            slip_angles_plant(s, ControlInput(0.0, 0.0), PARAMS)


class TestLpvMatrices:
    def test_core_entries(self):
        A, B = lpv_matrices((5.0, 0.0, 0.0), 4e4, 4e4, PARAMS)
        assert A[1, 1] == pytest.approx(-(4e4 + 4e4) / (196 * 5))
        assert B[1, 0] == pytest.approx(4e4 / 196)

    def test_zero_steering_decouples(self):
        A, B = lpv_matrices((5.0, 0.0, 0.0), 4e4, 4e4, PARAMS)
        assert A[0, 1] == 0.0
        assert B[0, 0] == 0.0

    def test_published_integrator_rows(self):
        A, B = lpv_matrices((5.0, 0.1, 0.02), 4e4, 4e4, PARAMS,
                            integrator_sign=-1)
        assert np.array_equal(A[3], [-1.0, 0.0, 0.0, 0.0, 0.0])
        assert np.array_equal(A[4], [0.0, 0.0, -1.0, 0.0, 0.0])
        assert np.array_equal(B[3], [0.0, 0.0])
        assert np.array_equal(B[4], [0.0, 0.0])

    def test_default_integrator_rows_physical(self):
        A, _ = lpv_matrices((5.0, 0.0, 0.0), 4e4, 4e4, PARAMS)
        assert A[3, 0] == 1.0
        assert A[4, 2] == 1.0

    def test_speed_bound_enforced(self):
        with pytest.raises(ValueError):
            lpv_matrices((0.05, 0.0, 0.0), 4e4, 4e4, PARAMS)


class TestDiscretization:
    def test_zero_dynamics(self):
        A_d, B_d = discretize_euler(np.zeros((3, 3)), np.zeros((3, 1)), 0.1)
        assert np.array_equal(A_d, np.eye(3))

    def test_zero_period(self):
        A_d, B_d = discretize_euler(np.eye(2), np.ones((2, 1)), 0.0)
        assert np.array_equal(A_d, np.eye(2))
        assert np.array_equal(B_d, np.zeros((2, 1)))

    def test_scalar(self):
        A_d, _ = discretize_euler(np.array([[-1.0]]), np.zeros((1, 1)), 0.033)
        assert A_d[0, 0] == pytest.approx(0.967)


def equilibrium_accel(p, v_x):
    return (p.mu * p.m * p.g + 0.5 * p.rho * p.C_dAf * v_x**2) / p.m


class TestPlant:
    def test_straight_driving_equilibrium(self):
        v = 5.0
        s = VehicleState(v, 0.0, 0.0, 0.0, 0.0)
        u = ControlInput(0.0, equilibrium_accel(PARAMS, v))
        dx = plant_derivatives(s, u, Disturbance(), PARAMS)
        assert dx[0] == pytest.approx(0.0, abs=1e-12)
        assert dx[1] == 0.0
        assert dx[2] == 0.0
        assert dx[3] == v
        assert dx[4] == 0.0

    def test_zero_slip_zero_lateral_force(self):
        s = VehicleState(5.0, 0.0, 0.0, 0.0, 0.0)
        dx = plant_derivatives(s, ControlInput(0.0, 0.0), Disturbance(), PARAMS)
        assert dx[1] == 0.0  # F_yf = F_yr = 0 and omega v_x = 0

    def test_slope_subtracts_gravity(self):
        v = 5.0
        s = VehicleState(v, 0.0, 0.0, 0.0, 0.0)
        u = ControlInput(0.0, equilibrium_accel(PARAMS, v))
        flat = plant_derivatives(s, u, Disturbance(phi=0.0), PARAMS)
        steep = plant_derivatives(s, u, Disturbance(phi=math.pi / 2), PARAMS)
        assert steep[0] - flat[0] == pytest.approx(-PARAMS.g)

    def test_rk4_equilibrium(self):
        v = 5.0
        s = VehicleState(v, 0.0, 0.0, 0.0, 0.0)
        u = ControlInput(0.0, equilibrium_accel(PARAMS, v))
        s1 = plant_step_rk4(s, u, Disturbance(), PARAMS, h=0.005)
        assert s1.v_x == pytest.approx(v, abs=1e-9)
        assert s1.v_y == pytest.approx(0.0, abs=1e-9)
        assert s1.omega == pytest.approx(0.0, abs=1e-9)
        assert s1.theta == pytest.approx(0.0, abs=1e-9)
        assert s1.x == pytest.approx(v * 0.005, abs=1e-9)

    def test_rk4_order(self):
        p = simulation_params()
        s = VehicleState(5.0, 0.1, 0.3, 0.0, 0.0)
        u = ControlInput(0.05, 1.0)
        d = Disturbance(phi=0.05, v_w=5.0)

        def one_vs_two(h):
            big = plant_step_rk4(s, u, d, p, h).as_array()
            half = plant_step_rk4(s, u, d, p, h / 2)
            two = plant_step_rk4(half, u, d, p, h / 2).as_array()
            return np.linalg.norm(big - two)

        ratio = one_vs_two(0.02) / one_vs_two(0.01)
        assert 20.0 < ratio < 45.0

    def test_heading_first_order(self):
        s = VehicleState(5.0, 0.0, 0.4, 0.0, 1.0)
        h = 0.005
        s1 = plant_step_rk4(s, ControlInput(0.0, 0.0), Disturbance(), PARAMS, h)
        assert s1.theta == pytest.approx(1.0 + 0.4 * h, abs=5e-5)

    def test_speed_strictly_decreases_unpowered(self):
        p = simulation_params()
        s = VehicleState(5.0, 0.0, 0.0, 0.0, 0.0)
        u = ControlInput(0.0, 0.0)
        for _ in range(20):
            s1 = plant_step_rk4(s, u, Disturbance(), p, h=0.005)
            assert s1.v_x < s.v_x
            s = s1

    def test_validity_region(self):
        s = VehicleState(0.12, 0.0, 0.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            plant_step_rk4(s, ControlInput(0.0, -5.0), Disturbance(), PARAMS,
                           h=0.05)


class TestLpvModel:
    @pytest.mark.parametrize("slip_sign", [CLASSICAL_SLIP_SIGN,
                                           PRINTED_SLIP_SIGN])
    def test_embedding_is_exact(self, slip_sign):
        model = LpvModel(PARAMS, slip_sign=slip_sign)
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(10_000):
            s = VehicleState(rng.uniform(0.5, 10.0), rng.uniform(-0.6, 0.6),
                             rng.uniform(-1.0, 1.0), rng.uniform(-10, 10),
                             rng.uniform(-3, 3))
            u = ControlInput(rng.uniform(-0.267, 0.267), rng.uniform(-2, 13))
            f = model.f(s, u)
            A, B = model.matrices(model.scheduling(s, u))
            lin = A @ s.as_array() + B @ u.as_array()
            worst = max(worst, np.linalg.norm(f - lin) / np.linalg.norm(f))
        assert worst < 1e-9

    def test_longitudinal_rows_agree_with_plant(self):
        model = LpvModel(PARAMS)
        s = VehicleState(5.0, 0.0, 0.0, 0.0, 0.0)
        u = ControlInput(0.0, 2.0)
        f_design = model.f(s, u)
        f_plant = plant_derivatives(s, u, Disturbance(), PARAMS)
        assert f_design[0] == f_plant[0]

    def test_classical_default_has_yaw_damping(self):
        model = LpvModel(PARAMS)
        A, _ = model.matrices((5.0, 0.0, 0.0, 4e4, 4e4))
        assert A[2, 2] < 0.0


class TestTireFit:
    def test_exact_polynomial_recovered(self):
        coef = (2.0e5, -1.0e4, 3.0e3, -50.0, 7.0)
        alpha = np.linspace(-0.3, 0.3, 12)
        force = np.polyval(coef, alpha)
        poly = fit_tire_poly(np.column_stack([alpha, force]))
        assert np.allclose(poly.coefficients, coef, rtol=1e-8)

    @pytest.mark.xfail(
        strict=True,
        reason="a degree-4 least-squares fit of the published Pacejka curve "
               "on [-0.3, 0.3] leaves 7.1% RMS residual; the 5% target needs "
               "degree >= 5 or a narrower slip range")
    def test_pacejka_fit_residual_5pct(self):
        alpha = np.linspace(-0.3, 0.3, 61)
        force = np.array([pacejka_force(a, PARAMS.d_f, PARAMS.c_f, PARAMS.b_f)
                          for a in alpha])
        poly = fit_tire_poly(np.column_stack([alpha, force]))
        residual = tire_poly_force(poly, alpha) - force
        rms = np.sqrt(np.mean(residual**2))
        assert rms < 0.05 * np.abs(force).max()

    def test_pacejka_fit_residual_follows_curve(self):
        alpha = np.linspace(-0.3, 0.3, 61)
        force = np.array([pacejka_force(a, PARAMS.d_f, PARAMS.c_f, PARAMS.b_f)
                          for a in alpha])
        poly = fit_tire_poly(np.column_stack([alpha, force]))
        residual = tire_poly_force(poly, alpha) - force
        rms = np.sqrt(np.mean(residual**2))
        assert rms < 0.08 * np.abs(force).max()

    def test_zero_samples_zero_polynomial(self):
        alpha = np.linspace(-0.2, 0.2, 10)
        poly = fit_tire_poly(np.column_stack([alpha, np.zeros(10)]))
        assert np.allclose(poly.coefficients, 0.0, atol=1e-12)

    def test_rank_deficient_rejected(self):
        samples = [(0.1, 5.0)] * 8
        with pytest.raises(ValueError):
            fit_tire_poly(samples)

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError):
            fit_tire_poly([(0.0, 0.0), (0.1, 1.0)])


class TestConfigFile:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "vehicle.json"
        params = simulation_params()
        save_vehicle_config(path, params, FRONT_TIRE, REAR_TIRE)
        loaded, front, rear = load_vehicle_config(path)
        assert loaded == params
        assert front == FRONT_TIRE
        assert rear == REAR_TIRE

    def test_invalid_parameter_rejected(self):
        with pytest.raises(ValueError):
            VehicleParams(m=-1.0)

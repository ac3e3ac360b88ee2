import numpy as np
import pytest

from zonotube.invariant import (
    ClosedLoopFamily,
    check_rpi,
    compute_E0,
    compute_Ek_star,
    compute_mrpi,
    one_step_map,
    terminal_set_pipeline,
    terminal_set_within,
)
from zonotube.sets import (
    Box,
    Zonotope,
    containment_directions,
    interval_hull,
    linear_image,
    minkowski_sum,
    support,
    zonotope_contains_point,
)


def scalar_family(a=0.5, w=1.0):
    return ClosedLoopFamily([np.array([[a]])],
                            Zonotope(np.zeros(1), np.array([[w]])))


class TestFamily:
    def test_unstable_vertex_rejected(self):
        with pytest.raises(ValueError, match="spectral radius"):
            ClosedLoopFamily([np.array([[1.01]])],
                             Zonotope(np.zeros(1), np.array([[1.0]])))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            ClosedLoopFamily([np.eye(2) * 0.5],
                             Zonotope(np.zeros(3), np.eye(3)))


class TestOneStepMap:
    def test_identical_vertices_exact(self):
        rng = np.random.default_rng(0)
        M = np.array([[0.6, 0.2], [-0.1, 0.5]])
        fam = ClosedLoopFamily([M] * 8, Zonotope(np.zeros(2), np.eye(2)))
        omega = Zonotope(np.zeros(2), rng.normal(size=(2, 4)))
        mapped = one_step_map(fam, omega)
        exact = linear_image(M, omega)
        for d in containment_directions(2):
            assert abs(support(mapped, d) - support(exact, d)) < 1e-12

    def test_origin_maps_to_origin(self):
        fam = scalar_family()
        mapped = one_step_map(fam, Zonotope.point(np.zeros(1)))
        assert interval_hull(mapped).radius().max() == 0.0

    def test_contains_all_vertex_images(self):
        rng = np.random.default_rng(1)
        M1 = np.array([[0.5, 0.3], [0.0, 0.4]])
        M2 = np.array([[0.2, -0.4], [0.3, 0.1]])
        fam = ClosedLoopFamily([M1, M2],
                               Zonotope(np.zeros(2), 0.1 * np.eye(2)))
        omega = Zonotope(np.zeros(2), rng.normal(size=(2, 3)))
        mapped = one_step_map(fam, omega)
        for M in (M1, M2):
            img = linear_image(M, omega)
            for x in img.sample(rng, 1000):
                assert zonotope_contains_point(mapped, x, tol=1e-8)


class TestComputeE0:
    def test_scalar_hand_computation(self):
        fam = scalar_family(a=0.5, w=1.0)
        E0 = compute_E0(fam, xi=0.5, r=1.0)
        hull = interval_hull(E0)
        # p* = 1, so E0 = B(1) + (1 * 0.5 / 0.5) B(1) = [-2, 2]
        assert hull.lower[0] == pytest.approx(-2.0, abs=1e-12)
        assert hull.upper[0] == pytest.approx(2.0, abs=1e-12)

    def test_nilpotent_single_step(self):
        fam = scalar_family(a=0.0, w=1.0)
        xi = 0.25
        E0 = compute_E0(fam, xi=xi, r=1.0)
        hull = interval_hull(E0)
        expected = 1.0 + xi / (1.0 - xi)
        assert hull.upper[0] == pytest.approx(expected, abs=1e-12)

    def test_covers_sampled_reachable_states(self):
        rng = np.random.default_rng(2)
        M1 = np.array([[0.5, 0.2], [-0.2, 0.6]])
        M2 = np.array([[0.4, -0.1], [0.1, 0.5]])
        W = Zonotope(np.zeros(2), np.diag([0.1, 0.05]))
        fam = ClosedLoopFamily([M1, M2], W)
        E0 = compute_E0(fam)
        for _ in range(200):
            x = np.zeros(2)
            for _ in range(50):
                lam = rng.uniform()
                M = lam * M1 + (1 - lam) * M2
                w = W.sample(rng, 1)[0]
                x = M @ x + w
            assert zonotope_contains_point(E0, x, tol=1e-8)

    def test_ball_must_cover_disturbance(self):
        fam = scalar_family(w=1.0)
        with pytest.raises(ValueError, match="cover"):
            compute_E0(fam, xi=0.5, r=0.5)

    def test_xi_range_enforced(self):
        fam = scalar_family()
        with pytest.raises(ValueError):
            compute_E0(fam, xi=1.0)


class TestComputeEkStar:
    def test_scalar_fixed_point(self):
        fam = scalar_family(a=0.5, w=1.0)
        E0 = compute_E0(fam, xi=0.5, r=1.0)  # [-2, 2] is already invariant
        E = compute_Ek_star(fam, E0)
        hull = interval_hull(E)
        assert hull.upper[0] == pytest.approx(2.0, abs=1e-9)
        assert check_rpi(fam, E, slack=1e-9)

    def test_zero_disturbance(self):
        fam = ClosedLoopFamily([np.array([[0.5]])],
                               Zonotope.point(np.zeros(1)))
        E = compute_Ek_star(fam, compute_E0(fam))
        assert interval_hull(E).radius().max() == 0.0

    def test_rotation_contraction_is_invariant(self):
        theta = 0.4
        R = 0.85 * np.array([[np.cos(theta), -np.sin(theta)],
                             [np.sin(theta), np.cos(theta)]])
        fam = ClosedLoopFamily([R], Zonotope(np.zeros(2), 0.1 * np.eye(2)))
        E = compute_Ek_star(fam, compute_E0(fam))
        assert check_rpi(fam, E, slack=1e-8)


class TestComputeMrpi:
    def test_scalar_analytic_limit(self):
        fam = scalar_family(a=0.5, w=1.0)
        E0 = compute_E0(fam, xi=0.5, r=1.0)
        E = compute_Ek_star(fam, E0)
        res = compute_mrpi(fam, E, epsilon=1e-4)
        hull = interval_hull(res.set)
        assert hull.upper[0] == pytest.approx(2.0, abs=1e-4)
        assert res.is_outer_approximation
        assert res.epsilon_achieved <= 1e-4

    def test_zero_disturbance_origin(self):
        fam = ClosedLoopFamily([np.array([[0.5]])],
                               Zonotope.point(np.zeros(1)))
        res = compute_mrpi(fam, Zonotope.point(np.zeros(1)), epsilon=1e-6)
        assert interval_hull(res.set).radius().max() == 0.0

    def test_single_vertex_matches_truncated_series(self):
        rng = np.random.default_rng(3)
        # random stable 3-D system
        M = rng.normal(size=(3, 3))
        M *= 0.7 / np.max(np.abs(np.linalg.eigvals(M)))
        W = Zonotope(np.zeros(3), np.diag([0.1, 0.2, 0.05]))
        fam = ClosedLoopFamily([M], W, p_max=200)
        eps = 1e-4
        _, _, res = terminal_set_pipeline(fam, epsilon=eps)
        series = W
        term = W
        for _ in range(200):
            term = linear_image(M, term)
            series = minkowski_sum(series, term)
        for i in range(3):
            d = np.zeros(3)
            d[i] = 1.0
            for sign in (d, -d):
                assert abs(support(res.set, sign)
                           - support(series, sign)) < eps + 1e-8

    def test_monotone_growth_from_origin(self):
        fam = scalar_family(a=0.5, w=1.0)
        omega = Zonotope.point(np.zeros(1))
        prev = 0.0
        for _ in range(30):
            omega = minkowski_sum(one_step_map(fam, omega), fam.W)
            cur = support(omega, np.array([1.0]))
            assert cur >= prev - 1e-12
            prev = cur
        assert prev == pytest.approx(2.0, abs=1e-8)


class TestCheckRpi:
    def test_computed_set_passes(self):
        fam = scalar_family(a=0.5, w=1.0)
        _, _, res = terminal_set_pipeline(fam, xi=0.5, r=1.0, epsilon=1e-5)
        assert check_rpi(fam, res.set, slack=res.epsilon_achieved)

    def test_origin_fails_with_nonzero_disturbance(self):
        fam = scalar_family(a=0.5, w=1.0)
        assert not check_rpi(fam, Zonotope.point(np.zeros(1)), slack=1e-9)

    def test_scalar_superset_is_invariant(self):
        fam = scalar_family(a=0.5, w=1.0)
        omega = Zonotope(np.zeros(1), np.array([[3.0]]))
        assert check_rpi(fam, omega, slack=0.0)  # 0.5 * 3 + 1 = 2.5 <= 3


class TestTerminalSetWithin:
    def test_bounded_box(self):
        fam = scalar_family(a=0.5, w=1.0)
        _, _, res = terminal_set_pipeline(fam, xi=0.5, r=1.0)
        assert terminal_set_within(res, Box([-3.0], [3.0]))
        assert not terminal_set_within(res, Box([-1.0], [1.0]))

    def test_infinite_bounds_ignored(self):
        fam = scalar_family(a=0.5, w=1.0)
        _, _, res = terminal_set_pipeline(fam, xi=0.5, r=1.0)
        assert terminal_set_within(res, Box([-np.inf], [np.inf]))

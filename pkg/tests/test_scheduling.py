import numpy as np
import pytest

from zonotube.scheduling import (
    N_VERTICES,
    GainSchedule,
    SchedulingBounds,
    canonical_vertex_order,
    interpolate_gain,
    load_gains,
    local_control,
    membership_weights,
    save_gains,
)

BOUNDS = SchedulingBounds()


def stable_schedule(rng=None, lqr=False):
    rng = rng or np.random.default_rng(0)
    K = rng.normal(scale=0.5, size=(N_VERTICES, 2, 5))
    M = rng.normal(size=(5, 5))
    P = M @ M.T + 5.0 * np.eye(5)
    return GainSchedule(BOUNDS, K, P, gamma=1.25,
                        lqr_gains=K * 0.5 if lqr else None,
                        metadata={"tool": "test", "date": "2026-01-01"})


class TestMembershipWeights:
    def test_lower_vertex(self):
        zeta = [BOUNDS.v_x[0], BOUNDS.v_y[0], BOUNDS.delta[0]]
        w = membership_weights(zeta, BOUNDS)
        expected = np.zeros(N_VERTICES)
        expected[0] = 1.0  # bit pattern 000 = all lower endpoints
        assert np.allclose(w, expected)

    def test_upper_vertex(self):
        zeta = [BOUNDS.v_x[1], BOUNDS.v_y[1], BOUNDS.delta[1]]
        w = membership_weights(zeta, BOUNDS)
        assert w[-1] == pytest.approx(1.0)
        assert np.allclose(np.delete(w, -1), 0.0)

    def test_center_is_uniform(self):
        zeta = BOUNDS.as_array().mean(axis=1)
        w = membership_weights(zeta, BOUNDS)
        assert np.allclose(w, 1.0 / N_VERTICES)

    def test_partition_of_unity_and_reconstruction(self):
        rng = np.random.default_rng(1)
        iv = BOUNDS.as_array()
        verts = BOUNDS.vertices()
        for _ in range(10_000):
            zeta = rng.uniform(iv[:, 0], iv[:, 1])
            w = membership_weights(zeta, BOUNDS)
            assert abs(w.sum() - 1.0) < 1e-12
            assert w.min() >= -1e-15
            assert np.allclose(w @ verts, zeta, atol=1e-12)

    def test_barycentric_exactness_affine_family(self):
        rng = np.random.default_rng(2)
        M0 = rng.normal(size=(4, 4))
        Ms = [rng.normal(size=(4, 4)) for _ in range(3)]
        verts = BOUNDS.vertices()
        vertex_mats = np.array([M0 + sum(v[j] * Ms[j] for j in range(3))
                                for v in verts])
        iv = BOUNDS.as_array()
        for _ in range(200):
            zeta = rng.uniform(iv[:, 0], iv[:, 1])
            w = membership_weights(zeta, BOUNDS)
            interp = np.einsum("i,ijk->jk", w, vertex_mats)
            direct = M0 + sum(zeta[j] * Ms[j] for j in range(3))
            assert np.allclose(interp, direct, atol=1e-10)

    def test_marginal_clamp_warns(self):
        zeta = [BOUNDS.v_x[1] + 0.005 * (BOUNDS.v_x[1] - BOUNDS.v_x[0]),
                0.0, 0.0]
        with pytest.warns(UserWarning):
            w = membership_weights(zeta, BOUNDS)
        assert abs(w.sum() - 1.0) < 1e-12

    def test_far_outside_rejected(self):
        with pytest.raises(ValueError):
            membership_weights([20.0, 0.0, 0.0], BOUNDS)


class TestGainInterpolation:
    def test_vertex_weight_selects_gain(self):
        sched = stable_schedule()
        w = np.zeros(N_VERTICES)
        w[3] = 1.0
        assert np.array_equal(interpolate_gain(w, sched.vertex_gains),
                              sched.vertex_gains[3])

    def test_uniform_weights_of_equal_gains(self):
        K = np.tile(np.arange(10.0).reshape(2, 5), (N_VERTICES, 1, 1))
        w = np.full(N_VERTICES, 1.0 / N_VERTICES)
        assert np.allclose(interpolate_gain(w, K), K[0])

    def test_linearity(self):
        sched = stable_schedule()
        rng = np.random.default_rng(3)
        w1 = rng.dirichlet(np.ones(N_VERTICES))
        w2 = rng.dirichlet(np.ones(N_VERTICES))
        lam = 0.3
        mixed = interpolate_gain(lam * w1 + (1 - lam) * w2,
                                 sched.vertex_gains)
        parts = lam * interpolate_gain(w1, sched.vertex_gains) \
            + (1 - lam) * interpolate_gain(w2, sched.vertex_gains)
        assert np.allclose(mixed, parts, atol=1e-14)

    def test_weight_count_mismatch(self):
        sched = stable_schedule()
        with pytest.raises(ValueError):
            interpolate_gain(np.ones(7) / 7, sched.vertex_gains)

    def test_gain_continuity(self):
        sched = stable_schedule()
        iv = BOUNDS.as_array()
        widths = iv[:, 1] - iv[:, 0]
        # multilinear interpolation: per-variable weight shift is bounded by
        # |dz_j| / w_j, and sum_i |dmu_i| <= 2 sum_j |dz_j| / w_j
        L = 2.0 * max(np.linalg.norm(K) for K in sched.vertex_gains)
        rng = np.random.default_rng(4)
        for _ in range(500):
            z1 = rng.uniform(iv[:, 0], iv[:, 1])
            z2 = rng.uniform(iv[:, 0], iv[:, 1])
            dK = np.linalg.norm(sched.gain(z1) - sched.gain(z2))
            assert dK <= L * np.sum(np.abs(z1 - z2) / widths) + 1e-12


class TestLocalControl:
    def test_zero_error(self):
        K = np.ones((2, 5))
        assert np.array_equal(local_control(np.zeros(5), K), np.zeros(2))

    def test_zero_gain(self):
        assert np.array_equal(local_control(np.ones(5), np.zeros((2, 5))),
                              np.zeros(2))

    def test_unit_error_reads_column(self):
        rng = np.random.default_rng(5)
        K = rng.normal(size=(2, 5))
        for j in range(5):
            e = np.zeros(5)
            e[j] = 1.0
            assert np.allclose(local_control(e, K), K[:, j])


class TestGainsFile:
    def test_round_trip_bitwise(self, tmp_path):
        sched = stable_schedule(lqr=True)
        path = tmp_path / "gains.json"
        save_gains(path, sched)
        loaded = load_gains(path)
        assert np.array_equal(loaded.vertex_gains, sched.vertex_gains)
        assert np.array_equal(loaded.P, sched.P)
        assert np.array_equal(loaded.lqr_gains, sched.lqr_gains)
        assert loaded.gamma == sched.gamma
        assert loaded.bounds == sched.bounds
        assert loaded.vertex_order == canonical_vertex_order()

    def test_wrong_vertex_count_rejected(self, tmp_path):
        sched = stable_schedule()
        path = tmp_path / "gains.json"
        save_gains(path, sched)
        import json
        raw = json.loads(path.read_text())
        raw["K"] = raw["K"][:7]
        path.write_text(json.dumps(raw))
        with pytest.raises(ValueError, match="K has shape"):
            load_gains(path)

    def test_indefinite_P_rejected(self, tmp_path):
        sched = stable_schedule()
        path = tmp_path / "gains.json"
        save_gains(path, sched)
        import json
        raw = json.loads(path.read_text())
        P = np.asarray(raw["P"])
        eigval, eigvec = np.linalg.eigh(P)
        eigval[0] = -1e-8
        raw["P"] = (eigvec @ np.diag(eigval) @ eigvec.T).tolist()
        path.write_text(json.dumps(raw))
        with pytest.raises(ValueError, match="positive definite"):
            load_gains(path)

    def test_missing_field_rejected(self, tmp_path):
        path = tmp_path / "gains.json"
        path.write_text("{}")
        with pytest.raises(ValueError, match="missing fields"):
            load_gains(path)

    def test_controller_selection(self):
        sched = stable_schedule(lqr=True)
        zeta = [4.0, 0.0, 0.0]
        assert not np.allclose(sched.gain(zeta, "hinf"),
                               sched.gain(zeta, "lqr"))
        with pytest.raises(ValueError):
            sched.gain(zeta, "pid")

    def test_missing_lqr_gains(self):
        sched = stable_schedule(lqr=False)
        with pytest.raises(ValueError, match="LQR"):
            sched.gain([4.0, 0.0, 0.0], "lqr")

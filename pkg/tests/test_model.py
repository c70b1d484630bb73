import numpy as np
import pytest

from helpers import echo_class
from iossnet.errors import NumericError, SpecificationError
from iossnet.model import (
    Box,
    GridSpec,
    JacobianBundle,
    NetworkSpec,
    SubsystemClass,
    TrainParams,
    build_model,
    finite_difference_jacobians,
    grid_points,
    make_train_network,
    simulate,
    step_network,
    train_classes,
    train_input,
)


class TestBoxAndGrid:
    def test_box_rejects_inverted_bounds(self):
        with pytest.raises(SpecificationError):
            Box([1.0], [0.0])

    def test_box_rejects_length_mismatch(self):
        with pytest.raises(SpecificationError):
            Box([0.0, 0.0], [1.0])

    def test_uniform_three_point_grid(self):
        pts = grid_points(Box([0.0], [1.0]), GridSpec((3,)))
        np.testing.assert_allclose(pts[:, 0], [0.0, 0.5, 1.0])

    def test_corner_grid(self):
        pts = grid_points(Box([0.0, -1.0], [1.0, 1.0]), GridSpec((2, 2)))
        assert {tuple(p) for p in pts} == {(0, -1), (0, 1), (1, -1), (1, 1)}

    def test_single_point_uses_midpoint(self):
        pts = grid_points(Box([-2.0], [2.0]), GridSpec((1,)))
        np.testing.assert_allclose(pts, [[0.0]])

    def test_count_and_lexicographic_order(self):
        pts = grid_points(Box([0.0, 0.0], [1.0, 2.0]), GridSpec((2, 3)))
        assert len(pts) == GridSpec((2, 3)).count == 6
        np.testing.assert_allclose(pts[:3, 0], 0.0)
        np.testing.assert_allclose(pts[:3, 1], [0.0, 1.0, 2.0])

    def test_grid_dimension_mismatch(self):
        with pytest.raises(SpecificationError):
            grid_points(Box([0.0], [1.0]), GridSpec((2, 2)))

    def test_grid_entries_positive(self):
        with pytest.raises(SpecificationError):
            GridSpec((0,))


class TestTrainNetwork:
    def test_neighbor_lists_three(self):
        spec = make_train_network(3)
        assert spec.neighbors == ((1,), (0, 2), (1,))

    def test_two_carriages_both_boundary(self):
        spec = make_train_network(2)
        assert spec.neighbors == ((1,), (0,))
        assert spec.assignment == ("boundary", "boundary")

    def test_class_counts_five(self):
        spec = make_train_network(5)
        assert spec.assignment.count("boundary") == 2
        assert spec.assignment.count("interior") == 3
        assert len(spec.classes) == 2

    @pytest.mark.parametrize("M", [0, 1])
    def test_too_small(self, M):
        with pytest.raises(SpecificationError):
            make_train_network(M)

    def test_equilibrium(self):
        spec = make_train_network(4)
        x = np.zeros(spec.size("n"))
        xn, y = step_network(spec, x, np.zeros(spec.size("m")), np.zeros(spec.size("q")))
        assert np.all(xn == 0.0) and np.all(y == 0.0)

    def test_hand_velocity_update(self):
        params = TrainParams(delta=0.1, m_mass=1.0, k_spring=1.0, d_damp=1.0)
        spec = make_train_network(3, params)
        x = np.array([0.0, 0.0, 1.0, 0.0, 2.0, 0.0])
        xn, _ = step_network(spec, x, np.zeros(2), np.zeros(9))
        assert xn[1] == pytest.approx(0.1)

    def test_parameters_must_be_positive(self):
        with pytest.raises(SpecificationError):
            TrainParams(k_spring=0.0)

    def test_params_round_trip(self):
        p = TrainParams(k_spring=0.5)
        assert TrainParams.from_dict(p.to_dict()).to_dict() == p.to_dict()

    def test_registry(self):
        assert build_model("train", 3).M == 3
        with pytest.raises(SpecificationError):
            build_model("nope", 3)

    def test_analytic_jacobians_match_finite_differences(self):
        rng = np.random.default_rng(1)
        for cls in train_classes(TrainParams()):
            for point in cls.domain.sample(rng, 100):
                x, u, w, z = cls.split(point)
                ana = cls.jacobians(x, u, w, z)
                num = finite_difference_jacobians(cls, x, u, w, z)
                for name in "ABCDEF":
                    a, b = getattr(ana, name), getattr(num, name)
                    assert np.max(np.abs(a - b), initial=0.0) <= 1e-5 * (1.0 + np.max(np.abs(a), initial=0.0))

    def test_reversal_symmetry(self):
        M = 5
        spec = make_train_network(M)
        rng = np.random.default_rng(3)
        T = 15
        x0 = rng.uniform(-0.5, 0.5, (M, 2))
        u = np.stack([rng.uniform(-1, 1, T), rng.uniform(-1, 1, T)], axis=-1)
        w = rng.uniform(-0.01, 0.01, (T, M, 3))
        X, Y = simulate(spec, x0.ravel(), u, w.reshape(T, -1))
        Xr, Yr = simulate(spec, x0[::-1].ravel(), u[:, ::-1], w[:, ::-1].reshape(T, -1))
        np.testing.assert_allclose(X.reshape(T + 1, M, 2)[:, ::-1], Xr.reshape(T + 1, M, 2), atol=1e-13)
        np.testing.assert_allclose(Y[:, ::-1], Yr, atol=1e-13)

    def test_train_input_layout(self):
        u = train_input(4, [0.5, -0.5])
        np.testing.assert_allclose(u, [[0.5, 0.0], [-0.5, 0.0]])


class TestNetworkSpec:
    def test_identity_single_node(self):
        cls = SubsystemClass("id", 2, 1, 1, 1, (), lambda x, u, w, z: x, lambda x, u, w, z: x[..., :1],
                             Box([-1.0] * 4, [1.0] * 4))
        spec = NetworkSpec((cls,), ("id",), ((),))
        x = np.array([0.3, -0.2])
        xn, _ = step_network(spec, x, np.array([0.9]), np.array([0.4]))
        np.testing.assert_array_equal(xn, x)

    def test_z_gathering_follows_neighbor_order(self):
        spec = NetworkSpec((echo_class(2, "two"), echo_class(1, "one")), ("one", "two", "one"),
                           ((1,), (2, 0), (1,)))
        x = np.arange(6.0)
        xn, _ = step_network(spec, x, np.zeros(0), np.zeros(0))
        np.testing.assert_allclose(spec.gather_z(x, 1), [4.0, 5.0, 0.0, 1.0])
        np.testing.assert_allclose(xn[2:4], [4.0 + 0.0, 5.0 + 1.0])
        np.testing.assert_allclose(xn[0:2], [2.0, 3.0])

    def test_self_neighbor_rejected(self):
        with pytest.raises(SpecificationError):
            NetworkSpec((echo_class(1),), ("echo", "echo"), ((0,), (0,)))

    def test_neighbor_range_checked(self):
        with pytest.raises(SpecificationError):
            NetworkSpec((echo_class(1),), ("echo", "echo"), ((1,), (5,)))

    def test_slot_size_checked(self):
        odd = SubsystemClass("odd", 1, 0, 0, 1, (), lambda x, u, w, z: x, lambda x, u, w, z: x,
                             Box([-1.0], [1.0]))
        with pytest.raises(SpecificationError):
            NetworkSpec((echo_class(1), odd), ("echo", "odd"), ((1,), ()))

    def test_dimension_mismatch(self):
        spec = make_train_network(3)
        with pytest.raises(SpecificationError):
            step_network(spec, np.zeros(5), np.zeros(2), np.zeros(9))

    def test_non_finite_names_node(self):
        bad = SubsystemClass("bad", 1, 0, 0, 1, (), lambda x, u, w, z: x / 0.0, lambda x, u, w, z: x,
                             Box([-1.0], [1.0]))
        spec = NetworkSpec((bad,), ("bad",), ((),))
        with np.errstate(all="ignore"), pytest.raises(NumericError, match="node 0"):
            step_network(spec, np.ones(1), np.zeros(0), np.zeros(0))

    def test_finite_difference_fallback(self):
        cls = SubsystemClass("sq", 1, 0, 1, 1, (), lambda x, u, w, z: x ** 2 + w,
                             lambda x, u, w, z: 3.0 * x, Box([-1.0, -1.0], [1.0, 1.0]))
        jac = cls.jacobian_at(np.array([0.4, 0.0]))
        assert isinstance(jac, JacobianBundle)
        assert jac.A[0, 0] == pytest.approx(0.8, rel=1e-8)
        assert jac.C[0, 0] == pytest.approx(3.0, rel=1e-8)

    def test_batched_simulation_shapes(self):
        spec = make_train_network(3)
        X, Y = simulate(spec, np.zeros((7, 6)), np.zeros((7, 4, 2)), np.zeros((7, 4, 9)))
        assert X.shape == (7, 5, 6) and Y.shape == (7, 4, 3)

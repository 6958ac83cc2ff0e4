"""Field containers, sampling boxes, canonical structures."""

import numpy as np
import pytest

from sodelab.errors import ChartDimensionError, DomainSamplingError
from sodelab.expr import VariableContext, parse, qv_context
from sodelab.fields import (
    Box,
    PointMap,
    ScalarField,
    Tensor11Field,
    VectorField,
    canonical_symplectic,
    canonical_tangent_structure,
)

CTX2 = qv_context(2)  # (q1, q2, v1, v2)


class TestContainers:
    def test_vector_field_from_strings(self):
        x = VectorField.of(CTX2, "v1", "v2", "-q1", "-q2")
        np.testing.assert_allclose(
            x((1.0, 2.0, 3.0, 4.0)), [3.0, 4.0, -1.0, -2.0]
        )

    def test_component_count_enforced(self):
        with pytest.raises(ValueError):
            VectorField.of(CTX2, "v1", "v2")

    def test_out_of_context_name_rejected(self):
        other = parse("x", VariableContext.of("x"))
        with pytest.raises(ValueError):
            ScalarField(CTX2, other)

    def test_scalar_gradient(self):
        h = ScalarField.of(CTX2, "q1^2 + q2*v1")
        grad = h.gradient()
        np.testing.assert_allclose(
            grad((1.0, 2.0, 3.0, 4.0)), [2.0, 3.0, 2.0, 0.0]
        )

    def test_negated_and_scaled(self):
        x = VectorField.of(CTX2, "v1", "v2", "-q1", "-q2")
        p = (1.0, 2.0, 3.0, 4.0)
        np.testing.assert_allclose(x.negated()(p), -x(p))
        np.testing.assert_allclose(x.scaled(2.0)(p), 2 * x(p))
        np.testing.assert_allclose(x.scaled("q1")(p), 1.0 * x(p))

    def test_ode_rhs_adapter(self):
        x = VectorField.of(CTX2, "v1", "v2", "-q1", "-q2")
        p = np.array([1.0, 2.0, 3.0, 4.0])
        np.testing.assert_allclose(x.ode_rhs(17.0, p), x(p))

    def test_tensor_contraction_shape(self):
        s = Tensor11Field.constant(CTX2, np.eye(4))
        assert s((0.0, 0.0, 0.0, 0.0)).shape == (4, 4)


class TestPointMap:
    def test_jacobian_matches_difference_quotient(self):
        src = VariableContext.of("a", "b")
        dst = VariableContext.of("u", "w", "z")
        m = PointMap(src, dst, ("a*b", "a^2 - b", "sin(a)"))
        p = np.array([0.7, -1.2])
        jac = m.jacobian_at(p)
        h = 1e-6
        for j in range(2):
            dp = np.zeros(2)
            dp[j] = h
            numeric = (m(p + dp) - m(p - dp)) / (2 * h)
            np.testing.assert_allclose(jac[:, j], numeric, rtol=1e-6, atol=1e-9)

    def test_pushforward(self):
        src = VariableContext.of("a", "b")
        dst = VariableContext.of("u", "w")
        m = PointMap(src, dst, ("a + b", "a - b"))
        np.testing.assert_allclose(
            m.pushforward_at((0.0, 0.0), (1.0, 2.0)), [3.0, -1.0]
        )

    def test_component_count_checked(self):
        src = VariableContext.of("a")
        dst = VariableContext.of("u", "w")
        with pytest.raises(ValueError):
            PointMap(src, dst, ("a",))


class TestBox:
    def test_sampling_is_deterministic(self):
        box = Box.cube(CTX2, 2.0)
        a = box.sample(seed=7, n_random=50)
        b = box.sample(seed=7, n_random=50)
        np.testing.assert_array_equal(a, b)

    def test_seed_changes_random_tail(self):
        box = Box.cube(CTX2, 2.0)
        a = box.sample(seed=1, n_random=50)
        b = box.sample(seed=2, n_random=50)
        assert not np.array_equal(a[-50:], b[-50:])

    def test_points_inside_bounds(self):
        box = Box(CTX2, (-1.0, 0.0, -2.0, 1.0), (1.0, 3.0, 2.0, 4.0))
        pts = box.sample(seed=0, n_random=100)
        assert np.all(pts >= np.array(box.lo) - 1e-12)
        assert np.all(pts <= np.array(box.hi) + 1e-12)

    def test_exclusion_ball_over_selected_dims(self):
        box = Box.cube(CTX2, 1.0, exclude_radius=0.5, exclude_dims=(0, 1))
        pts = box.sample(seed=0, n_random=200)
        assert np.all(np.linalg.norm(pts[:, :2], axis=1) >= 0.5)
        # fiber coordinates are free to be small
        assert np.any(np.linalg.norm(pts[:, 2:], axis=1) < 0.5)

    def test_empty_domain_raises(self):
        with pytest.raises(DomainSamplingError):
            Box.cube(CTX2, 1.0, exclude_radius=10.0).sample(seed=0, n_random=10)

    def test_degenerate_bounds_rejected(self):
        with pytest.raises(ValueError):
            Box(CTX2, (0.0, 0.0, 0.0, 0.0), (1.0, 1.0, 0.0, 1.0))

    def test_high_dimension_grid_stays_bounded(self):
        ctx8 = qv_context(4)
        box = Box.cube(ctx8, 1.0)
        pts = box.sample(seed=0, n_random=20, grid_points=3)
        # 3^4 grid points, extra axes at center, plus the random tail
        assert len(pts) == 81 + 20
        assert np.allclose(pts[:81, 4:], 0.0)

    def test_contains(self):
        box = Box.cube(CTX2, 1.0, exclude_radius=0.25)
        assert box.contains((0.5, 0.5, 0.5, 0.5))
        assert not box.contains((2.0, 0.0, 0.0, 0.0))
        assert not box.contains((0.1, 0.0, 0.0, 0.0))


class TestCanonicalStructures:
    def test_vertical_endomorphism_blocks(self):
        s, _ = canonical_tangent_structure(CTX2)
        m = s((0.3, -0.2, 1.5, 2.5))
        expected = np.zeros((4, 4))
        expected[2, 0] = expected[3, 1] = 1.0
        np.testing.assert_array_equal(m, expected)

    def test_dilation_components(self):
        _, delta = canonical_tangent_structure(CTX2)
        np.testing.assert_allclose(
            delta((9.0, 9.0, 1.5, -2.5)), [0.0, 0.0, 1.5, -2.5]
        )

    def test_odd_dimension_rejected(self):
        with pytest.raises(ChartDimensionError):
            canonical_tangent_structure(VariableContext.of("a", "b", "c"))

    def test_symplectic_pairing(self):
        from sodelab.expr import phase_context

        ctx = phase_context(2)
        omega = canonical_symplectic(ctx)
        m = omega((0.0, 0.0, 0.0, 0.0))
        dq1 = np.array([1.0, 0.0, 0.0, 0.0])
        dp1 = np.array([0.0, 0.0, 1.0, 0.0])
        assert dq1 @ m @ dp1 == 1.0
        assert dp1 @ m @ dq1 == -1.0
        np.testing.assert_array_equal(m, -m.T)

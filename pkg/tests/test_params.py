import numpy as np
import pytest

from safeswarm.errors import DimensionError
from safeswarm.params import (
    AdamState,
    ParamVector,
    adam_step,
    clip_grad_norm,
    orthogonal_init,
)


class TestParamVector:
    def test_roundtrip_bit_exact(self):
        rng = np.random.default_rng(0)
        named = {
            "w1": rng.standard_normal((3, 4)),
            "b1": rng.standard_normal(4),
            "scalarish": rng.standard_normal(()),
        }
        pv = ParamVector.from_arrays(named)
        back = pv.to_arrays()
        for k, v in named.items():
            assert back[k].shape == v.shape
            assert np.array_equal(back[k], v)
        pv2 = ParamVector.from_arrays(back)
        assert np.array_equal(pv.data, pv2.data)

    def test_total_length(self):
        pv = ParamVector.from_arrays({"a": np.zeros((2, 5)), "b": np.zeros(3)})
        assert len(pv) == 13
        assert pv.segments[1].offset == 10

    def test_length_mismatch(self):
        pv = ParamVector.from_arrays({"a": np.zeros(4)})
        with pytest.raises(DimensionError):
            ParamVector(pv.segments, np.zeros(5))


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = np.array([1.0, -2.0])
        st = AdamState.zeros(2)
        out = adam_step(p, np.zeros(2), st, lr=7e-3)
        assert np.array_equal(out, p)

    def test_first_step_magnitude(self):
        p = np.zeros(3)
        st = AdamState.zeros(3)
        out = adam_step(p, np.ones(3), st, lr=7e-3, eps=1e-5)
        assert np.all(out < 0)
        assert np.max(np.abs(out + 7e-3)) < 1e-4

    def test_quadratic_convergence(self):
        x = np.array([1.0])
        st = AdamState.zeros(1)
        for _ in range(500):
            x = adam_step(x, 2.0 * x, st, lr=7e-3)
        assert abs(x[0]) < 1e-2


class TestClip:
    def test_under_cap_unchanged(self):
        g = np.array([3.0, 4.0])
        assert np.array_equal(clip_grad_norm(g, 10.0), g)

    def test_rescale(self):
        out = clip_grad_norm(np.array([30.0, 40.0]), 10.0)
        assert np.allclose(out, [6.0, 8.0], atol=1e-12)

    def test_contract_random(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            g = rng.standard_normal(20) * rng.uniform(0.1, 100)
            out = clip_grad_norm(g, 10.0)
            assert np.linalg.norm(out) <= 10.0 + 1e-9


class TestOrthogonal:
    def test_square_orthogonality(self):
        w = orthogonal_init((6, 6), gain=1.3, rng=np.random.default_rng(2))
        gram = w.T @ w
        assert np.max(np.abs(gram - 1.3**2 * np.eye(6))) < 1e-8

    def test_determinism(self):
        a = orthogonal_init((4, 7), 1.0, np.random.default_rng(3))
        b = orthogonal_init((4, 7), 1.0, np.random.default_rng(3))
        assert np.array_equal(a, b)

    def test_tall_matrix_columns_orthonormal(self):
        w = orthogonal_init((4, 2), 1.0, np.random.default_rng(4))
        gram = w.T @ w
        assert np.max(np.abs(gram - np.eye(2))) < 1e-8

    def test_wide_matrix_rows_orthonormal(self):
        w = orthogonal_init((2, 5), 1.0, np.random.default_rng(5))
        gram = w @ w.T
        assert np.max(np.abs(gram - np.eye(2))) < 1e-8

    def test_non_2d_rejected(self):
        with pytest.raises(DimensionError):
            orthogonal_init((3,), 1.0, np.random.default_rng(6))

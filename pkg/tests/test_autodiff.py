import numpy as np
import pytest

from safeswarm import tensor as T
from safeswarm.errors import ContractError, DimensionError, DomainError
from safeswarm.tensor import Tensor

from util import finite_difference_gradient, max_rel_error


def grad_of(build, x0):
    """Analytic gradient of a scalar-valued builder over a flat vector."""
    with T.Tape():
        x = Tensor(x0, requires_grad=True)
        out = build(x)
        (g,) = T.backward(out, [x])
    return out.data, g.data


def fd_check(build, x0, h=1e-5, tol=1e-4, coords=None):
    _, analytic = grad_of(build, x0)
    fd, checked = finite_difference_gradient(lambda v: grad_of(build, v)[0], x0, h, coords)
    assert max_rel_error(analytic[checked], fd[checked]) < tol


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 0.0], [0.0, 1.0]])
        b = Tensor([[3.0], [4.0]])
        assert np.array_equal(T.matmul(a, b).data, [[3.0], [4.0]])

    def test_row_times_column(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.item() == 11.0

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((4, 5))
        b = rng.standard_normal((5, 2))
        expect = np.zeros((4, 2))
        for i in range(4):
            for j in range(2):
                for k in range(5):
                    expect[i, j] += a[i, k] * b[k, j]
        got = T.matmul(Tensor(a), Tensor(b)).data
        assert np.max(np.abs(got - expect)) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradients_flow_to_both_sides(self):
        rng = np.random.default_rng(1)
        a0 = rng.standard_normal(6)
        b0 = rng.standard_normal(6)

        def build_a(x):
            return T.sum_(T.matmul(T.reshape(x, (2, 3)), Tensor(b0.reshape(3, 2))))

        def build_b(x):
            return T.sum_(T.matmul(Tensor(a0.reshape(2, 3)), T.reshape(x, (3, 2))))

        fd_check(build_a, a0)
        fd_check(build_b, b0)


class TestElementwise:
    def test_relu_definition(self):
        assert np.array_equal(T.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_tanh_odd(self):
        assert T.tanh(Tensor(0.0)).data == 0.0

    def test_sigmoid_derivative_at_zero(self):
        with T.Tape():
            x = Tensor(0.0, requires_grad=True)
            y = T.sigmoid(x)
            (g,) = T.backward(y, [x])
        assert abs(g.data - 0.25) < 1e-15

    def test_log_domain_error(self):
        with pytest.raises(DomainError):
            T.log(Tensor([1.0, 0.0]))

    def test_dispatch(self):
        out = T.elementwise("add", Tensor([1.0]), Tensor([2.0]))
        assert out.data[0] == 3.0
        with pytest.raises(ContractError):
            T.elementwise("nope", Tensor([1.0]))

    def test_broadcast_restriction(self):
        with pytest.raises(DimensionError):
            T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(3)))

    def test_scalar_broadcast(self):
        out = T.mul(Tensor([[1.0, 2.0]]), 3.0)
        assert np.array_equal(out.data, [[3.0, 6.0]])
        with T.Tape():
            s = Tensor(2.0, requires_grad=True)
            y = T.sum_(T.mul(Tensor([1.0, 2.0, 3.0]), s))
            (g,) = T.backward(y, [s])
        assert g.data == 6.0

    @pytest.mark.parametrize("op", ["add", "sub", "mul", "relu", "tanh", "exp", "sigmoid"])
    def test_gradients_match_fd(self, op):
        rng = np.random.default_rng(hash(op) % 2**32)
        x0 = rng.standard_normal(7) * 0.7 + 0.1
        other = Tensor(rng.standard_normal(7))

        def build(x):
            if op in ("add", "sub", "mul"):
                y = getattr(T, op)(x, other)
            else:
                y = getattr(T, op)(x)
            return T.sum_(T.mul(y, y))

        fd_check(build, x0)

    def test_log_gradient(self):
        x0 = np.array([0.5, 1.5, 3.0])
        fd_check(lambda x: T.sum_(T.log(x)), x0)

    def test_div_gradient(self):
        rng = np.random.default_rng(5)
        x0 = rng.standard_normal(6)

        def build(x):
            a = T.slice_axis(x, 0, 0, 3)
            b = T.add(T.mul(T.slice_axis(x, 0, 3, 6), 0.1), 2.0)
            return T.sum_(T.div(a, b))

        fd_check(build, x0)


class TestSoftmax:
    def test_uniform(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0]))
        assert np.allclose(out.data, 1.0 / 3.0, atol=1e-15)

    def test_overflow_stability(self):
        out = T.softmax(Tensor([1000.0, 0.0]))
        assert np.all(np.isfinite(out.data))
        assert abs(out.data[0] - 1.0) < 1e-12

    def test_matches_direct_formula(self):
        x = np.array([1.0, 2.0, 3.0])
        out = T.softmax(Tensor(x)).data
        expect = np.exp(x) / np.exp(x).sum()
        assert abs(out.sum() - 1.0) < 1e-12
        assert np.max(np.abs(out - expect)) < 1e-12

    def test_sum_to_one_and_positive(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((4, 6)) * 5
        out = T.softmax(Tensor(x), axis=1).data
        assert np.max(np.abs(out.sum(axis=1) - 1.0)) < 1e-12
        assert np.all(out > 0.0)

    def test_empty_axis(self):
        with pytest.raises(DimensionError):
            T.softmax(Tensor(np.zeros((3, 0))), axis=1)

    def test_gradient(self):
        rng = np.random.default_rng(3)
        x0 = rng.standard_normal(5)
        w = rng.standard_normal(5)
        fd_check(lambda x: T.sum_(T.mul(T.softmax(x), Tensor(w))), x0)


class TestConcat:
    def test_lengths_add(self):
        out = T.concat([Tensor(np.zeros(2)), Tensor(np.zeros(3))])
        assert out.data.shape == (5,)

    def test_single_identity(self):
        x = Tensor([1.0, 2.0])
        assert np.array_equal(T.concat([x]).data, x.data)

    def test_gradient_is_ones_for_sum(self):
        with T.Tape():
            a = Tensor(np.zeros(2), requires_grad=True)
            b = Tensor(np.zeros((3)), requires_grad=True)
            y = T.sum_(T.concat([a, b]))
            ga, gb = T.backward(y, [a, b])
        assert np.array_equal(ga.data, np.ones(2))
        assert np.array_equal(gb.data, np.ones(3))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            T.concat([Tensor(np.zeros((2, 2))), Tensor(np.zeros((3, 3)))], axis=0)


class TestBackward:
    def test_product_rule(self):
        with T.Tape():
            x = Tensor(3.0, requires_grad=True)
            y = Tensor(4.0, requires_grad=True)
            out = T.mul(x, y)
            gx, gy = T.backward(out, [x, y])
        assert gx.data == 4.0 and gy.data == 3.0

    def test_unused_leaf_zero(self):
        with T.Tape():
            x = Tensor([1.0], requires_grad=True)
            z = Tensor([5.0], requires_grad=True)
            out = T.sum_(T.mul(x, x))
            (gz,) = T.backward(out, [z])
        assert np.array_equal(gz.data, [0.0])

    def test_accumulation_over_multiple_uses(self):
        with T.Tape():
            x = Tensor(2.0, requires_grad=True)
            out = T.add(T.mul(x, x), T.mul(3.0, x))
            (g,) = T.backward(out, [x])
        assert g.data == 7.0

    def test_non_scalar_root_rejected(self):
        with T.Tape():
            x = Tensor([1.0, 2.0], requires_grad=True)
            y = T.mul(x, x)
            with pytest.raises(ContractError):
                T.backward(y, [x])

    def test_three_layer_mlp_matches_fd(self):
        rng = np.random.default_rng(7)
        sizes = [(4, 8), (8,), (8, 6), (6,), (6, 1), (1,)]
        total = sum(int(np.prod(s)) for s in sizes)
        x_in = rng.standard_normal((3, 4))
        theta0 = rng.standard_normal(total) * 0.5

        def build(theta):
            parts = []
            offset = 0
            for s in sizes:
                n = int(np.prod(s))
                parts.append(T.reshape(T.slice_axis(theta, 0, offset, offset + n), s))
                offset += n
            h = T.tanh(T.linear(Tensor(x_in), parts[0], parts[1]))
            h = T.relu(T.linear(h, parts[2], parts[3]))
            out = T.linear(h, parts[4], parts[5])
            return T.sum_(out)

        fd_check(build, theta0, tol=1e-4)

    def test_determinism(self):
        rng = np.random.default_rng(11)
        x0 = rng.standard_normal(20)

        def once():
            with T.Tape():
                x = Tensor(x0, requires_grad=True)
                h = T.tanh(T.mul(x, 0.5))
                y = T.sum_(T.mul(h, h))
                (g,) = T.backward(y, [x])
            return g.data.copy()

        assert np.array_equal(once(), once())


class TestGatherScatter:
    def test_gather_then_scatter_roundtrip(self):
        x = np.arange(12.0).reshape(4, 3)
        idx = np.array([2, 0, 2, 1])
        out = T.gather_rows(Tensor(x), idx)
        assert np.array_equal(out.data, x[idx])

    def test_scatter_add_sums_duplicates(self):
        vals = Tensor(np.ones((4, 2)))
        out = T.scatter_add_rows(vals, np.array([0, 0, 1, 3]), 5)
        assert np.array_equal(out.data[:, 0], [2.0, 1.0, 0.0, 1.0, 0.0])

    def test_scatter_unsorted_matches_sorted(self):
        rng = np.random.default_rng(4)
        vals = rng.standard_normal((30, 3))
        idx = rng.integers(0, 7, size=30)
        order = np.argsort(idx, kind="stable")
        a = T.scatter_add_rows(Tensor(vals), idx, 7).data
        b = T.scatter_add_rows(Tensor(vals[order]), idx[order], 7).data
        assert np.allclose(a, b, atol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(6)
        x0 = rng.standard_normal(8)
        idx = np.array([1, 3, 3, 0])
        w = rng.standard_normal((3, 2))

        def build(x):
            m = T.reshape(x, (4, 2))
            g = T.gather_rows(m, idx)
            s = T.scatter_add_rows(T.mul(g, g), np.array([0, 1, 1, 2]), 3)
            return T.sum_(T.mul(s, Tensor(w)))

        fd_check(build, x0)

    def test_segment_softmax_groups(self):
        scores = Tensor(np.array([[1.0], [1.0], [2.0], [5.0]]))
        seg = np.array([0, 0, 0, 2])
        out = T.segment_softmax(scores, seg, 3).data[:, 0]
        assert abs(out[:3].sum() - 1.0) < 1e-12
        assert abs(out[3] - 1.0) < 1e-12

    def test_segment_softmax_gradient(self):
        rng = np.random.default_rng(8)
        x0 = rng.standard_normal(6)
        seg = np.array([0, 0, 1, 1, 1, 2])
        w = rng.standard_normal((6, 1))

        def build(x):
            sc = T.reshape(x, (6, 1))
            alpha = T.segment_softmax(sc, seg, 3)
            return T.sum_(T.mul(alpha, Tensor(w)))

        fd_check(build, x0)


class TestSecondOrder:
    def test_hessian_vector_product_quadratic(self):
        # f(x) = 0.5 x^T A x with symmetric A: Hv = Av
        rng = np.random.default_rng(9)
        a = rng.standard_normal((5, 5))
        a = 0.5 * (a + a.T)
        x0 = rng.standard_normal(5)
        v = rng.standard_normal(5)
        with T.Tape():
            x = Tensor(x0, requires_grad=True)
            xc = T.reshape(x, (5, 1))
            f = T.mul(T.sum_(T.mul(xc, T.matmul(Tensor(a), xc))), 0.5)
            (g,) = T.backward(f, [x], create_graph=True)
            gv = T.sum_(T.mul(g, Tensor(v)))
            (hv,) = T.backward(gv, [x])
        assert np.max(np.abs(hv.data - a @ v)) < 1e-10

    def test_double_backward_through_nonlinearity(self):
        # f(x) = sum(tanh(x)^2); checks Hv against finite differences of grad
        rng = np.random.default_rng(10)
        x0 = rng.standard_normal(6)
        v = rng.standard_normal(6)

        def grad_at(x_val):
            with T.Tape():
                x = Tensor(x_val, requires_grad=True)
                y = T.tanh(x)
                f = T.sum_(T.mul(y, y))
                (g,) = T.backward(f, [x])
            return g.data.copy()

        with T.Tape():
            x = Tensor(x0, requires_grad=True)
            y = T.tanh(x)
            f = T.sum_(T.mul(y, y))
            (g,) = T.backward(f, [x], create_graph=True)
            gv = T.sum_(T.mul(g, Tensor(v)))
            (hv,) = T.backward(gv, [x])
        h = 1e-6
        fd = (grad_at(x0 + h * v) - grad_at(x0 - h * v)) / (2 * h)
        assert max_rel_error(hv.data, fd, floor=1e-5) < 1e-3

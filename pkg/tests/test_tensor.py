import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dsanet import tensor as T
from dsanet.tensor import DimensionError, NumericalError, Tensor, grad_check, parameter


def erf_series(x, terms=80):
    # Maclaurin series, accurate for |x| <= 3 at this many terms
    total, term = 0.0, x
    for n in range(terms):
        total += term / (2 * n + 1)
        term *= -x * x / (n + 1)
    return 2.0 / math.sqrt(math.pi) * total


def naive_matmul(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def fd_grad(f, x, step=1e-5):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[i] += step
        down[i] -= step
        g[i] = (f(up) - f(down)) / (2 * step)
    return g


class TestMatmul:
    def test_identity(self):
        out = T.matmul(Tensor(np.eye(2)), Tensor([[1, 2], [3, 4]]))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_orthogonal_supports(self):
        out = T.matmul(Tensor([[1, 0], [0, 0]]), Tensor([[0, 0], [0, 1]]))
        np.testing.assert_array_equal(out.data, np.zeros((2, 2)))

    def test_matches_triple_loop(self, rng):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), atol=1e-14)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_backward_rule(self, rng):
        a, b = parameter(rng.normal(size=(3, 4))), parameter(rng.normal(size=(4, 2)))
        g = rng.normal(size=(3, 2))
        T.backward(T.sum(T.matmul(a, b) * Tensor(g)))
        np.testing.assert_allclose(a.grad, g @ b.data.T)
        np.testing.assert_allclose(b.grad, a.data.T @ g)

    def test_sorted_variant_matches(self, rng):
        a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
        np.testing.assert_allclose(T.matmul_sorted(Tensor(a), Tensor(b)).data, a @ b, atol=1e-13)


class TestActivation:
    def test_fixed_points(self):
        assert T.activation(Tensor(0.0), "tanh").item() == 0.0
        assert T.activation(Tensor(0.0), "sigmoid").item() == 0.5
        assert T.activation(Tensor(0.0), "gelu").item() == 0.0

    def test_sigmoid_asymptote(self):
        xs = np.array([1.0, 5.0, 10.0, 20.0, 40.0])
        out = T.activation(Tensor(xs), "sigmoid").data
        assert np.all(np.diff(out) >= 0) and np.all(out < 1.0 + 1e-15)
        assert out[-1] > 1 - 1e-15

    @pytest.mark.parametrize("x", [-2.0, -1.0, 1.0, 2.0])
    def test_gelu_matches_erf_series(self, x):
        expected = x * 0.5 * (1 + erf_series(x / math.sqrt(2)))
        assert T.activation(Tensor(x), "gelu").item() == pytest.approx(expected, abs=1e-14)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            T.activation(Tensor(1.0), "swish")

    @pytest.mark.parametrize("kind", ["tanh", "gelu", "sigmoid", "relu"])
    def test_gradients(self, kind, rng):
        x0 = rng.normal(size=(3, 4))
        x0[np.abs(x0) < 1e-3] = 0.5  # keep relu away from its kink
        w = rng.normal(size=(3, 4))
        x = parameter(x0)
        T.backward(T.sum(T.activation(x, kind) * Tensor(w)))
        fd = fd_grad(lambda v: float(np.sum(T.activation(Tensor(v), kind).data * w)), x0)
        np.testing.assert_allclose(x.grad, fd, rtol=1e-6, atol=1e-8)

    def test_large_inputs_stay_finite(self):
        out = T.activation(Tensor([-1000.0, 1000.0]), "sigmoid").data
        np.testing.assert_array_equal(out, [0.0, 1.0])


class TestSoftmax:
    def test_uniform_row(self):
        np.testing.assert_allclose(T.softmax_rows(Tensor([[2.5, 2.5, 2.5]])).data, [[1 / 3] * 3], atol=1e-15)

    def test_single_column(self):
        np.testing.assert_array_equal(T.softmax_rows(Tensor([[3.0], [-7.0]])).data, [[1.0], [1.0]])

    def test_closed_form(self):
        np.testing.assert_allclose(T.softmax_rows(Tensor([[0.0, math.log(3.0)]])).data, [[0.25, 0.75]], atol=1e-15)

    def test_stable_for_large_logits(self):
        out = T.softmax_rows(Tensor([[1000.0, 0.0]])).data
        np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-300)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (4, 5), elements=st.floats(-30, 30)), st.permutations(range(4)))
    def test_rows_sum_and_row_permutation(self, x, perm):
        out = T.softmax_rows(Tensor(x)).data
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
        permuted = T.softmax_rows(Tensor(x[list(perm)])).data
        np.testing.assert_array_equal(permuted, out[list(perm)])

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 6), elements=st.floats(-30, 30)), st.permutations(range(6)))
    def test_column_permutation_is_bit_exact(self, x, perm):
        out = T.softmax_rows(Tensor(x)).data
        np.testing.assert_array_equal(T.softmax_rows(Tensor(x[:, list(perm)])).data, out[:, list(perm)])


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = parameter(rng.normal(size=(2, 3, 4)))
        T.backward(T.sum(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))

    def test_inner_product(self, rng):
        x = parameter(rng.normal(size=(5,)))
        T.backward(T.sum(x * x))
        np.testing.assert_allclose(x.grad, 2 * x.data)

    def test_non_scalar_rejected(self):
        with pytest.raises(ValueError, match="scalar"):
            T.backward(parameter(np.ones(3)) * 2.0)

    def test_composite_graph_against_fd(self, rng):
        a = parameter(rng.normal(size=(4, 3)))
        b = parameter(rng.normal(size=(3, 5)))
        labels = [0, 4, 2, 1]

        def loss():
            h = T.activation(a @ b, "gelu")
            return -T.mean(T.pick(T.log_softmax_rows(h), labels)) + T.sum(T.softmax_rows(h) * h)

        assert grad_check(loss, [a, b], step=1e-5) < 1e-6

    def test_deterministic(self, rng):
        a = parameter(rng.normal(size=(6, 6)))
        loss = T.sum(T.softmax_rows(a @ a.T) * a)
        T.backward(loss)
        first = a.grad.copy()
        T.backward(loss)
        np.testing.assert_array_equal(a.grad, first)

    def test_shared_node_accumulates(self):
        x = parameter([2.0])
        y = x * x
        T.backward(T.sum(y + y))
        np.testing.assert_allclose(x.grad, [8.0])

    def test_tape_is_topological(self, rng):
        a = parameter(rng.normal(size=(2, 2)))
        out = T.sum(T.activation(a @ a, "tanh") + a)
        nodes = T.Tape(out).nodes
        position = {id(n): i for i, n in enumerate(nodes)}
        for n in nodes:
            for p in n._parents:
                assert position[id(p)] < position[id(n)]


class TestGradCheck:
    def test_quadratic(self):
        x = parameter([3.0])
        assert grad_check(lambda: T.sum(x * x), [x], step=1e-5) < 1e-9

    def test_softmax_cross_entropy(self, rng):
        logits = parameter(rng.normal(size=(5, 4)))
        y = rng.integers(0, 4, size=5)
        assert grad_check(lambda: -T.mean(T.pick(T.log_softmax_rows(logits), y)), [logits]) < 1e-6

    def test_non_finite_probe_reports_parameter(self):
        x = parameter([1e-6], name="x")
        with pytest.raises(NumericalError, match="x"):
            grad_check(lambda: T.sum(T.log(x)), [x], step=1e-3)

    def test_bad_step(self):
        with pytest.raises(ValueError):
            grad_check(lambda: T.sum(parameter([1.0])), [], step=0.0)


class TestOps:
    @pytest.mark.parametrize(
        "build",
        [
            lambda a, b: T.sum(a * b),
            lambda a, b: T.sum(a / (b * b + 1.0)),
            lambda a, b: T.sum(T.exp(a) - b),
            lambda a, b: T.sum(T.sqrt(a * a + 1.0) * b),
            lambda a, b: T.sum(T.power(b * b + 1.0, -1.0) * a),
            lambda a, b: T.sum(T.concat([a, b], axis=1) * T.concat([b, a], axis=1)),
            lambda a, b: T.sum(T.shift_rows(a, 1) * b) + T.sum(T.shift_rows(a, -2) * b),
            lambda a, b: T.sum(a[:, 1:] * b[:, :2]),
            lambda a, b: T.sum(T.scale_rows(a, T.sum(b, axis=1)) * a),
            lambda a, b: T.sum(T.transpose(a) @ b),
            lambda a, b: T.sum(T.reshape(a, (2, 6)) * T.reshape(b, (2, 6))),
            lambda a, b: T.sum(T.matmul_sorted(a, T.transpose(b))),
            lambda a, b: T.sum(a + T.sum(b, axis=0)),
        ],
    )
    def test_op_gradients(self, build, rng):
        a = parameter(rng.normal(size=(4, 3)))
        b = parameter(rng.normal(size=(4, 3)))
        assert grad_check(lambda: build(a, b), [a, b]) < 1e-6

    def test_no_general_broadcasting(self):
        with pytest.raises(DimensionError):
            Tensor(np.ones((3, 2))) + Tensor(np.ones((3, 1)))
        with pytest.raises(DimensionError):
            Tensor(np.ones((3, 2))) * Tensor(np.ones(2))

    def test_row_bias(self):
        out = Tensor(np.zeros((3, 2))) + Tensor([1.0, 2.0])
        np.testing.assert_array_equal(out.data, [[1, 2]] * 3)

    def test_shift_rows_zero_pads(self):
        x = Tensor(np.arange(4.0).reshape(4, 1))
        np.testing.assert_array_equal(T.shift_rows(x, 1).data.ravel(), [1, 2, 3, 0])
        np.testing.assert_array_equal(T.shift_rows(x, -1).data.ravel(), [0, 0, 1, 2])
        np.testing.assert_array_equal(T.shift_rows(x, 9).data.ravel(), [0, 0, 0, 0])

    def test_non_finite_rejected(self):
        with pytest.raises(NumericalError):
            Tensor([1.0, float("nan")])
        with pytest.raises(NumericalError):
            T.exp(Tensor([1000.0]))

    def test_jvp_matches_fd_at_random_points(self, rng):
        # directional derivative check of a composite map
        x0 = rng.normal(size=(3, 4))
        w = rng.normal(size=(4, 4))
        direction = rng.normal(size=(3, 4))

        def f(v):
            return float(np.sum(T.softmax_rows(T.activation(Tensor(v) @ Tensor(w), "tanh")).data ** 2))

        x = parameter(x0)
        T.backward(T.sum(T.power(T.softmax_rows(T.activation(x @ Tensor(w), "tanh")), 2.0)))
        analytic = float(np.sum(x.grad * direction))
        h = 1e-5
        fd = (f(x0 + h * direction) - f(x0 - h * direction)) / (2 * h)
        assert abs(analytic - fd) / max(1.0, abs(fd)) < 1e-6

import numpy as np
import pytest

from haad.autodiff import (
    NumericFault,
    SparseSym,
    Tape,
    col_mean,
    dot,
    finite_diff_grad,
    forward_backward,
    mean_all,
    relu,
    row_normalize,
    row_sum,
    sigmoid,
    softplus,
    spmul,
    square,
    sum_all,
    variance,
)


def path_laplacian():
    return SparseSym(2, [(0, 1, -1.0)], [1.0, 1.0])


class TestForwardBackward:
    def test_square(self):
        value, grads = forward_backward(lambda x: sum_all(square(x)), [np.array(3.0)])
        assert value == 9.0
        assert grads[0] == pytest.approx(6.0, abs=0)

    def test_relu_subgradient(self):
        value, grads = forward_backward(lambda x: sum_all(relu(x)),
                                        [np.array([[-1.0, 2.0]])])
        assert value == 2.0
        np.testing.assert_array_equal(grads[0], [[0.0, 1.0]])

    def test_non_scalar_output_rejected(self):
        with pytest.raises(ValueError, match="scalar"):
            forward_backward(lambda x: square(x), [np.array([[1.0, 2.0]])])

    def test_nan_input_is_numeric_fault(self):
        tape = Tape()
        with pytest.raises(NumericFault, match="node"):
            tape.leaf(np.array([1.0, np.nan]))

    def test_unused_input_gets_zero_grad(self):
        value, grads = forward_backward(lambda x, y: sum_all(square(x)),
                                        [np.array(2.0), np.array(5.0)])
        assert value == 4.0
        assert grads[1] == 0.0


class TestFiniteDiff:
    def test_square_at_three(self):
        g = finite_diff_grad(lambda x: float(x[0] ** 2), np.array([3.0]), h=1e-5)
        assert abs(g[0] - 6.0) < 1e-9

    def test_constant_function(self):
        g = finite_diff_grad(lambda x: 7.5, np.array([1.0, -2.0, 0.3]), h=1e-5)
        np.testing.assert_array_equal(g, np.zeros(3))

    def test_bad_step_rejected(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda x: 0.0, np.array([1.0]), h=0.0)

    def test_v_geo_gradient_matches_analytic(self):
        # Dirichlet energy (1/N) q^T L q has gradient (2/N) L q
        L = path_laplacian()
        q = np.array([[0.3], [-1.2]])

        def f(v):
            return float(np.sum(v.reshape(2, 1) * L.matmat(v.reshape(2, 1)))) / 2.0

        numeric = finite_diff_grad(f, q.ravel().copy(), h=1e-5).reshape(2, 1)
        analytic = (2.0 / 2.0) * L.matmat(q)
        np.testing.assert_allclose(numeric, analytic, rtol=1e-7, atol=1e-9)


class TestSparseSym:
    def test_path_laplacian_product(self):
        out = path_laplacian().matmat(np.array([[0.0], [2.0]]))
        np.testing.assert_array_equal(out, [[-2.0], [2.0]])

    def test_zero_matrix(self):
        zero = SparseSym(3, [], np.zeros(3))
        np.testing.assert_array_equal(zero.matmat(np.ones((3, 2))), np.zeros((3, 2)))

    def test_identity_diagonal(self):
        eye = SparseSym(3, [], np.ones(3))
        q = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(eye.matmat(q), q)

    def test_matches_dense_reference(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            entries = []
            for i in range(8):
                for j in range(i + 1, 8):
                    if rng.random() < 0.4:
                        entries.append((i, j, float(rng.standard_normal())))
            mat = SparseSym(8, entries, rng.standard_normal(8))
            q = rng.standard_normal((8, 5))
            np.testing.assert_allclose(mat.matmat(q), mat.to_dense() @ q, atol=1e-12)

    def test_rejects_duplicates_and_bad_indices(self):
        with pytest.raises(ValueError, match="duplicate"):
            SparseSym(3, [(0, 1, 1.0), (0, 1, 2.0)], np.zeros(3))
        with pytest.raises(ValueError, match="i < j"):
            SparseSym(3, [(1, 1, 1.0)], np.zeros(3))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            path_laplacian().matmat(np.zeros((3, 1)))


def _program(x, L):
    """Composition touching every primitive op."""
    a = x @ np.array([[0.4, -0.2, 0.1], [0.3, 0.8, -0.5]])   # matmul (2x2 @ 2x3)
    b = relu(a) + softplus(a) - 0.3 * sigmoid(a)             # elementwise chain
    c = b * (a + 1.0)                                        # hadamard with broadcast const
    n = row_normalize(c)
    s1 = dot(n, c)                                           # frobenius inner product
    s2 = variance(c) + mean_all(square(a)) + sum_all(abs(b))
    col = row_sum(c)                                         # (2, 1)
    lq = spmul(L, col)
    s3 = dot(col, lq) + sum_all(col_mean(c))
    return s1 + s2 + s3


@pytest.mark.parametrize("seed", range(12))
def test_composed_program_gradient_matches_finite_difference(seed):
    rng = np.random.default_rng(seed)
    L = path_laplacian()
    x0 = rng.standard_normal((2, 2))

    def fval(v):
        return _program(v.reshape(2, 2), L)

    _, grads = forward_backward(lambda v: _program(v, L), [x0])
    numeric = finite_diff_grad(lambda v: float(fval(v)), x0.copy(), h=1e-5)
    denom = max(np.max(np.abs(numeric)), 1e-8)
    assert np.max(np.abs(grads[0] - numeric)) / denom < 1e-6


def test_recording_disabled_matches_bit_for_bit():
    rng = np.random.default_rng(11)
    L = path_laplacian()
    x0 = rng.standard_normal((2, 2))
    on = Tape(recording=True)
    off = Tape(recording=False)
    v_on = _program(on.leaf(x0), L)
    v_off = _program(off.leaf(x0), L)
    assert float(v_on.value) == float(v_off.value)
    assert len(off) == 0


def test_backward_visits_each_node_once():
    # a diamond-shaped graph accumulates both paths exactly once
    tape = Tape()
    x = tape.leaf(np.array(2.0))
    y = square(x)           # 4
    z = y + y               # both parents are the same node
    (g,) = tape.grad(z, [x])
    assert float(g) == 8.0

import math

import numpy as np
import pytest

from haad.graph import GraphError, PatchGrid, SpatialGraph, build_knn_graph, laplacian


def smallest_eigenvalue_by_power_iteration(dense, iters=2000):
    """Independent PSD oracle: power iteration on the shifted matrix cI - L."""
    n = dense.shape[0]
    c = float(np.max(np.sum(np.abs(dense), axis=1))) + 1.0  # Gershgorin bound
    shifted = c * np.eye(n) - dense
    v = np.ones(n) / math.sqrt(n)
    for _ in range(iters):
        v = shifted @ v
        v = v / np.linalg.norm(v)
    lam_max_shifted = float(v @ (shifted @ v))
    return c - lam_max_shifted


class TestBuildKnn:
    def test_two_patch_grid(self):
        g = build_knn_graph(PatchGrid(1, 2), k=1, sigma=8.0)
        assert g.edges.tolist() == [[0, 1]]
        assert g.weights[0] == pytest.approx(math.exp(-1.0 / 128.0), abs=1e-12)
        assert g.weights[0] == pytest.approx(0.992218, abs=1e-6)

    def test_interior_node_has_eight_neighbors(self):
        g = build_knn_graph(PatchGrid(3, 3), k=8, sigma=8.0)
        incident = sum(1 for i, j in g.edges if 4 in (i, j))
        assert incident == 8

    def test_kernel_monotonicity_bound(self):
        sigma = 8.0
        g = build_knn_graph(PatchGrid(4, 4), k=8, sigma=sigma)
        cap = math.exp(-1.0 / (2.0 * sigma * sigma))
        assert np.max(g.weights) == pytest.approx(cap, abs=1e-15)
        assert np.all(g.weights > 0.0)
        assert np.all(g.weights <= cap)

    def test_single_patch_rejected(self):
        with pytest.raises(GraphError):
            build_knn_graph(PatchGrid(1, 1), k=1, sigma=8.0)

    def test_k_clamped_for_tiny_grids(self):
        g = build_knn_graph(PatchGrid(1, 2), k=8, sigma=8.0)
        assert len(g.edges) == 1

    def test_bad_parameters(self):
        with pytest.raises(GraphError):
            build_knn_graph(PatchGrid(2, 2), k=0)
        with pytest.raises(GraphError):
            build_knn_graph(PatchGrid(2, 2), sigma=0.0)

    def test_deterministic(self):
        a = build_knn_graph(PatchGrid(4, 5), k=5, sigma=3.0)
        b = build_knn_graph(PatchGrid(4, 5), k=5, sigma=3.0)
        np.testing.assert_array_equal(a.edges, b.edges)
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_no_self_loops_and_unique_pairs(self):
        g = build_knn_graph(PatchGrid(3, 4), k=6, sigma=2.0)
        pairs = {tuple(e) for e in g.edges.tolist()}
        assert len(pairs) == len(g.edges)
        assert all(i < j for i, j in pairs)


class TestLaplacian:
    def test_single_unit_edge(self):
        L = laplacian(SpatialGraph(2, [(0, 1)], [1.0]))
        np.testing.assert_array_equal(L.to_dense(), [[1.0, -1.0], [-1.0, 1.0]])

    def test_empty_graph(self):
        L = laplacian(SpatialGraph(3, np.empty((0, 2)), []))
        np.testing.assert_array_equal(L.to_dense(), np.zeros((3, 3)))

    def test_positive_semidefinite_by_power_iteration(self):
        g = build_knn_graph(PatchGrid(3, 3), k=8, sigma=8.0)
        smallest = smallest_eigenvalue_by_power_iteration(laplacian(g).to_dense())
        assert smallest >= -1e-10

    def test_row_sums_zero_and_symmetry(self):
        g = build_knn_graph(PatchGrid(4, 4), k=8, sigma=8.0)
        dense = laplacian(g).to_dense()
        np.testing.assert_allclose(dense.sum(axis=1), np.zeros(16), atol=1e-12)
        np.testing.assert_array_equal(dense, dense.T)

    @pytest.mark.parametrize("seed", range(5))
    def test_quadratic_form_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        g = build_knn_graph(PatchGrid(3, 4), k=6, sigma=4.0)
        L = laplacian(g)
        q = rng.standard_normal((12, 7))
        assert float(np.sum(q * L.matmat(q))) >= -1e-10

    def test_constant_signal_has_zero_energy(self):
        g = build_knn_graph(PatchGrid(3, 3), k=8, sigma=8.0)
        L = laplacian(g)
        q = np.full((9, 4), 2.71)
        assert abs(float(np.sum(q * L.matmat(q)))) < 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_edge_sum_identity(self, seed):
        # tr(q^T L q) equals the weighted sum over unordered edges of
        # ||q_i - q_j||^2, which is the convention making both forms agree
        rng = np.random.default_rng(seed)
        g = build_knn_graph(PatchGrid(3, 4), k=5, sigma=3.0)
        L = laplacian(g)
        q = rng.standard_normal((12, 6))
        trace_form = float(np.sum(q * L.matmat(q))) / 12.0
        edge_sum = sum(w * float(np.sum((q[i] - q[j]) ** 2))
                       for (i, j), w in zip(g.edges, g.weights)) / 12.0
        assert trace_form == pytest.approx(edge_sum, abs=1e-10)

"""Spatial patch graphs and their Laplacians.

Patches on an H_p x W_p grid are connected to their k nearest spatial
neighbors (grid Euclidean distance, ties broken by ascending patch index,
per-node lists symmetrized by union) with Gaussian-kernel edge weights
w_ij = exp(-d_ij^2 / (2 sigma^2)).  The Laplacian L = D - W is assembled
as a :class:`~haad.autodiff.SparseSym`, so it is symmetric by construction
and positive semidefinite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import SparseSym

__all__ = ["GraphError", "PatchGrid", "SpatialGraph", "build_knn_graph", "laplacian"]


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class PatchGrid:
    """Row-major grid of h_p x w_p patches."""

    h_p: int
    w_p: int

    def __post_init__(self):
        if self.h_p < 1 or self.w_p < 1:
            raise GraphError("grid dimensions must be at least 1")

    @property
    def n(self):
        return self.h_p * self.w_p

    def coords(self):
        """Integer (y, x) coordinate per patch, row-major order."""
        ys, xs = np.divmod(np.arange(self.n), self.w_p)
        return np.stack([ys, xs], axis=1)


class SpatialGraph:
    """Undirected weighted graph over grid patches.

    Immutable after construction; edges are unordered pairs (i < j) stored
    in sorted order with weights in (0, 1].
    """

    __slots__ = ("n", "edges", "weights")

    def __init__(self, n, edges, weights):
        self.n = int(n)
        self.edges = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
        self.weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        if self.edges.shape[0] != self.weights.shape[0]:
            raise GraphError("edge/weight length mismatch")


def build_knn_graph(grid: PatchGrid, k: int = 8, sigma: float = 8.0) -> SpatialGraph:
    """Symmetrized k-nearest-neighbor graph with Gaussian kernel weights.

    Each patch lists its k nearest grid neighbors (k is clamped to n-1 for
    tiny grids); an edge exists if either endpoint lists the other.
    """
    if k < 1:
        raise GraphError("k must be at least 1")
    if sigma <= 0:
        raise GraphError("sigma must be positive")
    n = grid.n
    if n < 2:
        raise GraphError("a single-patch grid has no spatial edges; geometric dynamics need n >= 2")
    k = min(k, n - 1)

    coords = grid.coords()
    diff = coords[:, None, :] - coords[None, :, :]
    dist2 = np.sum(diff * diff, axis=2)  # integer-valued, exact

    pairs = set()
    indices = np.arange(n)
    for i in range(n):
        d2 = dist2[i].astype(np.float64)
        d2[i] = np.inf  # no self-loops
        order = np.lexsort((indices, d2))  # distance first, index breaks ties
        for j in order[:k]:
            pairs.add((min(i, int(j)), max(i, int(j))))

    edges = sorted(pairs)
    weights = [math.exp(-dist2[i, j] / (2.0 * sigma * sigma)) for i, j in edges]
    return SpatialGraph(n, edges, weights)


def laplacian(g: SpatialGraph) -> SparseSym:
    """Graph Laplacian L = D - W with the weighted degree diagonal."""
    degrees = np.zeros(g.n, dtype=np.float64)
    entries = []
    for (i, j), w in zip(g.edges, g.weights):
        degrees[i] += w
        degrees[j] += w
        entries.append((int(i), int(j), -float(w)))
    return SparseSym(g.n, entries, degrees)

"""Graph container used by the loaders and the message passing layers."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .errors import EmptyGraph


@dataclass(eq=False)
class Graph:
    """Undirected graph in CSR form with a self-loop on every node.

    ``indices[indptr[i]:indptr[i + 1]]`` is the sorted neighbourhood N(i),
    which always contains ``i`` itself.  Masks are boolean arrays over nodes.
    """

    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None
    train_mask: np.ndarray | None = None
    val_mask: np.ndarray | None = None
    test_mask: np.ndarray | None = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_edges(cls, num_nodes, edges, features=None, labels=None, **kwargs) -> "Graph":
        """Build from an iterable of ``(u, v)`` pairs; duplicates and direction are ignored."""
        num_nodes = int(num_nodes)
        edges = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        edges = edges.reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
            raise IndexError(f"edge endpoint out of range for {num_nodes} nodes")
        loops = np.arange(num_nodes)
        rows = np.concatenate([edges[:, 0], edges[:, 1], loops])
        cols = np.concatenate([edges[:, 1], edges[:, 0], loops])
        adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(num_nodes, num_nodes))
        adj.sum_duplicates()
        adj.sort_indices()
        if features is None:
            features = np.ones((num_nodes, 1))
        features = np.asarray(features, dtype=np.float64)
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
        return cls(
            num_nodes,
            adj.indptr.astype(np.int64),
            adj.indices.astype(np.int64),
            features,
            labels,
            **kwargs,
        )

    # ------------------------------------------------------------ structure

    @property
    def degrees(self) -> np.ndarray:
        """``c_i = |N(i)|`` including the self-loop."""
        return np.diff(self.indptr)

    @property
    def num_edges(self) -> int:
        """Undirected edges, self-loops excluded."""
        return int((len(self.indices) - self.num_nodes) // 2)

    def neighbors(self, i) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def edge_index(self):
        """``(targets, sources)`` for every CSR entry, self-loops included."""
        targets = np.repeat(np.arange(self.num_nodes), self.degrees)
        return targets, self.indices

    def edge_list(self):
        """Undirected edges ``u < v`` as an ``(E, 2)`` array."""
        t, s = self.edge_index()
        keep = t < s
        return np.stack([t[keep], s[keep]], axis=1)

    def adjacency(self, self_loops=True) -> sp.csr_matrix:
        t, s = self.edge_index()
        keep = np.ones(len(t), bool) if self_loops else t != s
        return sp.csr_matrix(
            (np.ones(keep.sum()), (t[keep], s[keep])), shape=(self.num_nodes, self.num_nodes)
        )

    @cached_property
    def gcn_matrix(self) -> sp.csr_matrix:
        """Sparse ``k_ij = c_i^{-1/2} c_j^{-1/2}`` over j in N(i)."""
        t, s = self.edge_index()
        inv = 1.0 / np.sqrt(self.degrees)
        return sp.csr_matrix((inv[t] * inv[s], (t, s)), shape=(self.num_nodes, self.num_nodes))

    @cached_property
    def cheb_matrix(self) -> sp.csr_matrix:
        """Rescaled Laplacian ``2L/2 - I = -D^{-1/2} A D^{-1/2}`` of the loop-free graph."""
        a = self.adjacency(self_loops=False)
        deg = np.asarray(a.sum(axis=1)).ravel()
        inv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
        return (-sp.diags(inv) @ a @ sp.diags(inv)).tocsr()

    @cached_property
    def neighbor_sum_matrix(self) -> sp.csr_matrix:
        """Plain adjacency without self-loops (sum over N(i) minus i)."""
        return self.adjacency(self_loops=False)

    def permute(self, perm) -> "Graph":
        """Relabel node ``perm[k]`` as ``k``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        edges = inv[self.edge_list()]

        def take(a):
            return None if a is None else a[perm]

        return Graph.from_edges(
            self.num_nodes,
            edges,
            features=self.features[perm],
            labels=take(self.labels),
            train_mask=take(self.train_mask),
            val_mask=take(self.val_mask),
            test_mask=take(self.test_mask),
            name=self.name,
        )

    def is_connected(self) -> bool:
        n, _ = csgraph.connected_components(self.adjacency(), directed=False)
        return n == 1


def disjoint_union(graphs):
    """Stack graphs into one block-diagonal graph.

    Returns the union and a row-normalized ``(G, N)`` sparse matrix whose
    product with node rows gives the per-graph arithmetic mean.
    """
    if not graphs:
        raise EmptyGraph("cannot batch zero graphs")
    offsets = np.cumsum([0] + [g.num_nodes for g in graphs])
    edges = np.concatenate([g.edge_list() + off for g, off in zip(graphs, offsets)])
    features = np.concatenate([g.features for g in graphs])
    union = Graph.from_edges(int(offsets[-1]), edges, features=features)
    rows = np.repeat(np.arange(len(graphs)), [g.num_nodes for g in graphs])
    sizes = np.array([g.num_nodes for g in graphs], dtype=np.float64)
    if np.any(sizes == 0):
        raise EmptyGraph("graph with no nodes in batch")
    pool = sp.csr_matrix(
        (1.0 / sizes[rows], (rows, np.arange(int(offsets[-1])))), shape=(len(graphs), int(offsets[-1]))
    )
    return union, pool

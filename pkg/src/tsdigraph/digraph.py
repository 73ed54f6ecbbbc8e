"""Digraphs with node features built from time series.

Nodes are 0-based internally. Edge-list text files use 1-based indices.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class TimeSeries:
    """An ``r x m`` array of samples (r time steps, m channels)."""

    values: np.ndarray
    sample_rate_hz: float = 128.0
    label: Optional[int] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"time series must be r x m with r, m >= 1, got {v.shape}")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        object.__setattr__(self, "values", v)

    @property
    def length(self):
        return self.values.shape[0]

    @property
    def channels(self):
        return self.values.shape[1]


class Digraph:
    """Simple digraph: at most one edge per ordered pair.

    ``edges`` is an ``(E, 2)`` integer array of (tail, head) pairs. When
    ``weights`` is given every weight must be nonzero.
    """

    def __init__(self, num_nodes, edges=(), weights=None):
        if num_nodes < 0:
            raise ValueError("node count must be nonnegative")
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= num_nodes):
            raise ValueError("edge endpoint out of range")
        keys = e[:, 0] * max(num_nodes, 1) + e[:, 1]
        if len(np.unique(keys)) != len(keys):
            raise ValueError("duplicate edge: digraphs are simple")
        if weights is not None:
            weights = np.asarray(weights, dtype=np.float64).reshape(-1)
            if weights.shape[0] != e.shape[0]:
                raise ValueError("one weight per edge required")
            if np.any(weights == 0):
                raise ValueError("weighted digraphs store only nonzero weights")
        self.num_nodes = int(num_nodes)
        self.edges = e
        self.weights = weights
        self._cache = {}

    @property
    def num_edges(self):
        return self.edges.shape[0]

    def edge_weights(self):
        return np.ones(self.num_edges) if self.weights is None else self.weights

    def edge_set(self):
        return {(int(a), int(b)) for a, b in self.edges}

    def adjacency(self):
        """Sparse CSR adjacency, ``A[tail, head] = weight``."""
        if "adj" not in self._cache:
            n = self.num_nodes
            self._cache["adj"] = sp.csr_matrix(
                (self.edge_weights(), (self.edges[:, 0], self.edges[:, 1])), shape=(n, n))
        return self._cache["adj"]

    def reversed(self):
        return Digraph(self.num_nodes, self.edges[:, ::-1], self.weights)

    def with_self_loops(self, weight=1.0):
        have = {int(a) for a, b in self.edges if a == b}
        extra = [(i, i) for i in range(self.num_nodes) if i not in have]
        edges = np.vstack([self.edges, np.asarray(extra, dtype=np.int64).reshape(-1, 2)])
        w = None
        if self.weights is not None or weight != 1.0:
            w = np.concatenate([self.edge_weights(), np.full(len(extra), weight)])
        return Digraph(self.num_nodes, edges, w)

    def relabel(self, perm):
        """Graph with node ``i`` renamed ``perm[i]``."""
        perm = np.asarray(perm)
        return Digraph(self.num_nodes, perm[self.edges], self.weights)

    def is_undirected(self):
        a = self.adjacency()
        return (abs(a - a.T)).nnz == 0

    def __repr__(self):
        return f"Digraph(num_nodes={self.num_nodes}, num_edges={self.num_edges})"


@dataclass(frozen=True)
class FeaturedDigraph:
    graph: Digraph
    features: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim == 1:
            f = f[:, None]
        if f.shape[0] != self.graph.num_nodes:
            raise ValueError(
                f"{f.shape[0]} feature rows for {self.graph.num_nodes} nodes")
        object.__setattr__(self, "features", f)


@dataclass(frozen=True)
class TimeDigraphSpec:
    d: int = 4
    k: int = 32
    include_adjacent: bool = True
    variant: str = "series"

    def __post_init__(self):
        if self.d < 1 or self.k < 1:
            raise ValueError("d and k must be positive")
        if self.variant not in ("series", "grid", "grid_dense"):
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def lookback(self):
        return self.k * self.d

    @classmethod
    def from_lookback(cls, lookback, d, **kw):
        """Smallest ``k`` whose window ``k * d`` covers ``lookback``."""
        return cls(d=d, k=-(-lookback // d), **kw)


def _gap_allowed(gap, spec: TimeDigraphSpec, zero_ok):
    ok = (gap % spec.d == 0) & (gap < spec.lookback) & (gap > 0)
    if spec.include_adjacent:
        ok |= gap == 1
    if zero_ok:
        ok |= gap == 0
    return ok


def build_series_digraph(n, spec: TimeDigraphSpec = TimeDigraphSpec()):
    """Forward-in-time series digraph on ``n`` nodes.

    Edge ``i -> l`` for ``l > i`` when ``l - i == 1`` (if adjacent edges are
    on) or when ``d`` divides ``l - i`` and ``l - i < k * d``.
    """
    if n < 1:
        raise ValueError("series digraph needs at least one node")
    gaps = np.arange(1, n)
    gaps = gaps[_gap_allowed(gaps, spec, zero_ok=False)]
    tails, heads = [], []
    for g in gaps:
        src = np.arange(n - g)
        tails.append(src)
        heads.append(src + g)
    if not tails:
        return Digraph(n)
    edges = np.stack([np.concatenate(tails), np.concatenate(heads)], axis=1)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return Digraph(n, edges[order])


def grid_node(i, j, m):
    """Index of node ``v_{ij}`` (time ``i``, channel ``j``, both 0-based)."""
    return i * m + j


def build_grid_digraph(n, m, spec: TimeDigraphSpec = TimeDigraphSpec(variant="grid"), dense=None):
    """Time x channel grid digraph; edges never point backward in time.

    Dense: every non-self-loop pair with ``l >= i``. Restricted: additionally
    ``l - i`` is 0 or 1, or a multiple of ``d`` below ``k * d``. Same-time
    edges across channels are added in both orientations.
    """
    if n < 1 or m < 1:
        raise ValueError("grid digraph needs n, m >= 1")
    if dense is None:
        dense = spec.variant == "grid_dense"
    ti, tl = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    gap = tl - ti
    if dense:
        allowed = gap >= 0
    else:
        allowed = (gap >= 0) & ((gap <= 1) | ((gap % spec.d == 0) & (gap < spec.lookback)))
    pairs = np.argwhere(allowed)
    edges = []
    for i, l in pairs:
        for j in range(m):
            for k in range(m):
                if i == l and j == k:
                    continue
                edges.append((grid_node(i, j, m), grid_node(l, k, m)))
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges):
        edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    return Digraph(n * m, edges)


def attach_features(ts: TimeSeries, g: Digraph, variant="series"):
    """Series: node ``v_i`` carries ``x(i)``. Grid: node ``v_ij`` carries ``x(i)_j``."""
    r, m = ts.values.shape
    if variant == "series":
        if g.num_nodes != r:
            raise ValueError(f"series digraph has {g.num_nodes} nodes, series has {r} steps")
        return FeaturedDigraph(g, ts.values.copy())
    if variant in ("grid", "grid_dense"):
        if g.num_nodes != r * m:
            raise ValueError(f"grid digraph has {g.num_nodes} nodes, expected {r * m}")
        return FeaturedDigraph(g, ts.values.reshape(r * m, 1).copy())
    raise ValueError(f"unknown variant {variant!r}")


def features_to_series(fd: FeaturedDigraph, variant="series", channels=1, sample_rate_hz=128.0):
    """Inverse of ``attach_features``."""
    if variant == "series":
        return TimeSeries(fd.features.copy(), sample_rate_hz)
    return TimeSeries(fd.features.reshape(-1, channels).copy(), sample_rate_hz)


def adjacency_matrix(g: Digraph):
    """Dense ``num_nodes x num_nodes`` adjacency (edge weight or 1)."""
    return g.adjacency().toarray()


_ALPHAS = ("h", "t", "u")


def neighborhood(g: Digraph, i, alpha="h"):
    """``h``: senders into ``i``; ``t``: receivers from ``i``; ``u``: both."""
    if not 0 <= i < g.num_nodes:
        raise IndexError(f"node {i} out of range")
    if alpha not in _ALPHAS:
        raise ValueError(f"alpha must be one of {_ALPHAS}")
    a = g.adjacency()
    heads = set(a.indices[a.indptr[i]:a.indptr[i + 1]].tolist())
    at = g._cache.get("adjT")
    if at is None:
        at = g._cache["adjT"] = a.T.tocsr()
    tails = set(at.indices[at.indptr[i]:at.indptr[i + 1]].tolist())
    if alpha == "h":
        return tails
    if alpha == "t":
        return heads
    return tails | heads


def pullback_subgraph_features(fd: FeaturedDigraph, nodes):
    """Features pulled back along the inclusion of the induced subgraph on ``nodes``.

    Node ``nodes[p]`` of the original graph becomes node ``p``.
    """
    nodes = np.asarray(nodes, dtype=np.int64).reshape(-1)
    n = fd.graph.num_nodes
    if nodes.size and (nodes.min() < 0 or nodes.max() >= n):
        raise ValueError("subset node out of range")
    if len(np.unique(nodes)) != len(nodes):
        raise ValueError("subset nodes must be distinct")
    pos = np.full(n, -1, dtype=np.int64)
    pos[nodes] = np.arange(len(nodes))
    e = fd.graph.edges
    keep = (pos[e[:, 0]] >= 0) & (pos[e[:, 1]] >= 0) if len(e) else np.zeros(0, bool)
    w = None if fd.graph.weights is None else fd.graph.weights[keep]
    sub = Digraph(len(nodes), pos[e[keep]], w)
    return FeaturedDigraph(sub, fd.features[nodes].reshape(len(nodes), fd.features.shape[1]))


def write_edge_list(g: Digraph, path):
    """One ``tail head weight`` line per edge, 1-based."""
    with open(path, "w") as fh:
        fh.write(f"# nodes {g.num_nodes}\n")
        for (a, b), w in zip(g.edges, g.edge_weights()):
            fh.write(f"{a + 1} {b + 1} {float(w)!r}\n")


def read_edge_list(path, num_nodes=None):
    edges, weights = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if parts[:1] == ["nodes"] and num_nodes is None:
                    num_nodes = int(parts[1])
                continue
            a, b, w = line.split()
            edges.append((int(a) - 1, int(b) - 1))
            weights.append(float(w))
    if num_nodes is None:
        num_nodes = 1 + max((max(e) for e in edges), default=-1)
    w = np.asarray(weights)
    return Digraph(num_nodes, edges, None if np.all(w == 1.0) else w)

"""Directed message passing: linear (GCN/Sage style), multi-head attention,
and the weighted digraph that turns a 1-D convolution into a graph convolution.

Features live on the second-to-last axis, so a batch ``(B, n, c)`` of
graphs sharing one topology is processed as the disjoint union of B copies.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import autograd as ag
from .autograd import Tensor
from .digraph import Digraph, FeaturedDigraph, pullback_subgraph_features
from .nn import Module, init_uniform


def aggregation_matrix(g: Digraph, alpha="h", normalization="none"):
    """Sparse ``M`` with ``M[i, j] = c_ij * A_f(i, j)`` for ``j`` in ``N^alpha(i)``.

    For ``alpha="u"`` a pair linked both ways uses the weight of ``i -> j``.
    """
    key = ("agg", alpha, normalization)
    if key in g._cache:
        return g._cache[key]
    a = g.adjacency()
    if alpha == "t":
        m = a.copy()
    elif alpha == "h":
        m = a.T.tocsr()
    elif alpha == "u":
        at = a.T.tocsr()
        mask = a.copy()
        mask.data = np.ones_like(mask.data)
        m = (a + at - at.multiply(mask)).tocsr()
    else:
        raise ValueError(f"alpha must be h, t or u, got {alpha!r}")
    m.eliminate_zeros()
    if normalization == "mean":
        counts = np.diff(m.indptr).astype(float)
        scale = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
        m = sp.diags(scale) @ m
    elif normalization == "sym":
        deg = np.asarray(m.sum(axis=1)).reshape(-1)
        if np.any(deg < 0):
            raise ValueError("symmetric normalisation needs nonnegative degrees")
        inv = np.divide(1.0, np.sqrt(deg), out=np.zeros_like(deg), where=deg > 0)
        m = sp.diags(inv) @ m @ sp.diags(inv)
    elif normalization != "none":
        raise ValueError(f"unknown normalization {normalization!r}")
    m = sp.csr_matrix(m)
    g._cache[key] = m
    return m


def self_loop_weights(g: Digraph):
    """``A_ii`` where a self loop exists, else 1 (the implicit self connection)."""
    if "selfw" not in g._cache:
        w = np.ones(g.num_nodes)
        loops = g.edges[:, 0] == g.edges[:, 1]
        w[g.edges[loops, 0]] = g.edge_weights()[loops]
        g._cache["selfw"] = w
    return g._cache["selfw"]


def _activate(x, activation):
    if activation in (None, "identity"):
        return x
    if activation == "silu":
        return ag.silu(x)
    raise ValueError(f"unknown activation {activation!r}")


def message_passing(x, g: Digraph, weight, alpha="h", normalization="none",
                    self_weight=None, self_coef=1.0, bias=None, activation=None):
    """``sigma(sum_j c_ij A_f(i,j) W h_j + l_i A_ii B h_i + b)`` on every node."""
    x = ag.as_tensor(x)
    weight = ag.as_tensor(weight)
    if x.shape[-2] != g.num_nodes:
        raise ValueError(f"features have {x.shape[-2]} nodes, graph has {g.num_nodes}")
    if weight.shape[1] != x.shape[-1]:
        raise ValueError(f"weight expects {weight.shape[1]} input dims, got {x.shape[-1]}")
    m = aggregation_matrix(g, alpha, normalization)
    if weight.shape[0] <= weight.shape[1]:
        out = ag.spmm(m, ag.linear(x, weight))
    else:
        out = ag.linear(ag.spmm(m, x), weight)
    if self_weight is not None:
        coef = np.asarray(self_coef, dtype=float) * self_loop_weights(g)
        if np.all(coef == 1.0):
            out = out + ag.linear(x, self_weight)
        else:
            out = out + ag.linear(x, self_weight) * coef[:, None].astype(x.data.dtype)
    if bias is not None:
        out = out + bias
    return _activate(out, activation)


@dataclass
class MessagePassingSpec:
    weight: np.ndarray
    alpha: str = "h"
    normalization: str = "none"
    self_weight: Optional[np.ndarray] = None
    self_coef: object = 1.0
    bias: Optional[np.ndarray] = None
    activation: str = "identity"
    add_self_loops: bool = False

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.weight, dtype=float))
        self.weight = w
        if self.self_weight is not None:
            b = np.atleast_2d(np.asarray(self.self_weight, dtype=float))
            if b.shape[1] != w.shape[1] or b.shape[0] != w.shape[0]:
                raise ValueError("self weight must match W's shape")
            self.self_weight = b


def sage_spec(weight, self_weight, bias=None, alpha="h", activation="identity"):
    """Mean over neighbours plus a separately weighted self term."""
    return MessagePassingSpec(weight, alpha, "mean", self_weight, 1.0, bias, activation)


def gcn_spec(weight, bias=None, alpha="h", activation="identity"):
    """Symmetric degree normalisation with added unit self loops."""
    return MessagePassingSpec(weight, alpha, "sym", None, 1.0, bias, activation,
                              add_self_loops=True)


def linear_message_passing(fd: FeaturedDigraph, spec: MessagePassingSpec) -> FeaturedDigraph:
    g = fd.graph.with_self_loops() if spec.add_self_loops else fd.graph
    out = message_passing(fd.features, g, spec.weight, spec.alpha, spec.normalization,
                          spec.self_weight, spec.self_coef, spec.bias, spec.activation)
    return FeaturedDigraph(fd.graph, out.data)


# -- attention --------------------------------------------------------------

def attention_edges(g: Digraph, alpha="h"):
    """(receiver, sender) index arrays over ``N^alpha(i)`` plus ``i`` itself."""
    key = ("gat_edges", alpha)
    if key not in g._cache:
        m = aggregation_matrix(g, alpha, "none")
        pattern = (abs(m) + sp.identity(g.num_nodes, format="csr")).tocoo()
        order = np.lexsort((pattern.col, pattern.row))
        g._cache[key] = (pattern.row[order].astype(np.int64), pattern.col[order].astype(np.int64))
    return g._cache[key]


@dataclass
class GATParams:
    weight: object       # (heads * head_dim, in_dim)
    att_src: object      # (heads, head_dim)
    att_dst: object      # (heads, head_dim)
    bias: object = None  # merged output dim
    negative_slope: float = 0.2
    merge: str = "concat"

    @property
    def heads(self):
        return self.att_src.shape[0]

    @property
    def head_dim(self):
        return self.att_src.shape[1]


def gat_conv(x, g: Digraph, p: GATParams, alpha="h", return_attention=False):
    """Multi-head attention over ``N^alpha(i)`` plus self.

    Per head: ``e_ij = leaky_relu(a_dst . z_i + a_src . z_j)``, softmax over
    j, output ``sum_j att_ij z_j`` with ``z = W h``.
    """
    x = ag.as_tensor(x)
    heads, hd = p.heads, p.head_dim
    n = g.num_nodes
    if x.shape[-2] != n:
        raise ValueError(f"features have {x.shape[-2]} nodes, graph has {n}")
    recv, send = attention_edges(g, alpha)
    node_ax = x.ndim - 2
    z = ag.linear(x, p.weight)
    z = z.reshape(*x.shape[:-1], heads, hd)
    s_src = (z * p.att_src).sum(axis=-1)
    s_dst = (z * p.att_dst).sum(axis=-1)
    logits = ag.leaky_relu(ag.take(s_dst, recv, node_ax) + ag.take(s_src, send, node_ax),
                           p.negative_slope)
    # per-receiver max shift; constant w.r.t. gradients
    starts = np.flatnonzero(np.r_[True, recv[1:] != recv[:-1]])
    seg_max = np.maximum.reduceat(logits.data, starts, axis=node_ax)
    shift = np.take(seg_max, np.repeat(np.arange(len(starts)), np.diff(np.r_[starts, len(recv)])),
                    axis=node_ax)
    w = ag.exp(logits - shift)
    denom = ag.segment_sum(w, recv, n, node_ax)
    att = w / ag.take(denom, recv, node_ax)
    msg = ag.take(z, send, node_ax) * att.reshape(*att.shape, 1)
    out = ag.segment_sum(msg, recv, n, node_ax)
    if p.merge == "concat":
        out = out.reshape(*x.shape[:-1], heads * hd)
    elif p.merge == "average":
        out = out.mean(axis=-2)
    else:
        raise ValueError(f"unknown head merge {p.merge!r}")
    if p.bias is not None:
        out = out + p.bias
    if return_attention:
        return out, att
    return out


def gat_conv_fd(fd: FeaturedDigraph, p: GATParams, alpha="h") -> FeaturedDigraph:
    return FeaturedDigraph(fd.graph, gat_conv(fd.features, fd.graph, p, alpha).data)


# -- layers -----------------------------------------------------------------

class SageConv(Module):
    def __init__(self, in_dim, out_dim, rng, alpha="t"):
        self.weight = init_uniform(rng, (out_dim, in_dim), in_dim)
        self.self_weight = init_uniform(rng, (out_dim, in_dim), in_dim)
        self.bias = init_uniform(rng, (out_dim,), in_dim)
        self.alpha = alpha
        self.out_dim = out_dim

    def forward(self, x, g):
        return message_passing(x, g, self.weight, self.alpha, "mean",
                               self.self_weight, 1.0, self.bias)


class GCNConv(Module):
    def __init__(self, in_dim, out_dim, rng, alpha="t"):
        self.weight = init_uniform(rng, (out_dim, in_dim), in_dim)
        self.bias = init_uniform(rng, (out_dim,), in_dim)
        self.alpha = alpha
        self.out_dim = out_dim

    def forward(self, x, g):
        key = "with_loops"
        if key not in g._cache:
            g._cache[key] = g.with_self_loops()
        return message_passing(x, g._cache[key], self.weight, self.alpha, "sym",
                               bias=self.bias)


class GATConv(Module):
    def __init__(self, in_dim, out_dim, rng, heads=2, merge="concat", alpha="t",
                 negative_slope=0.2):
        if merge == "concat":
            if out_dim % heads:
                raise ValueError(f"{out_dim} output dims do not split over {heads} heads")
            hd = out_dim // heads
        else:
            hd = out_dim
        self.weight = init_uniform(rng, (heads * hd, in_dim), in_dim)
        self.att_src = init_uniform(rng, (heads, hd), hd)
        self.att_dst = init_uniform(rng, (heads, hd), hd)
        self.bias = init_uniform(rng, (out_dim,), in_dim)
        self.merge, self.alpha, self.negative_slope = merge, alpha, negative_slope
        self.out_dim = out_dim

    def params(self):
        return GATParams(self.weight, self.att_src, self.att_dst, self.bias,
                         self.negative_slope, self.merge)

    def forward(self, x, g):
        return gat_conv(x, g, self.params(), self.alpha)


def make_gconv(kind, in_dim, out_dim, rng, alpha="t", heads=2, merge="concat"):
    kind = kind.lower()
    if kind == "sage":
        return SageConv(in_dim, out_dim, rng, alpha)
    if kind == "gcn":
        return GCNConv(in_dim, out_dim, rng, alpha)
    if kind == "gat":
        return GATConv(in_dim, out_dim, rng, heads, merge, alpha)
    raise ValueError(f"unknown graph convolution {kind!r}")


# -- convolution as graph convolution ---------------------------------------

def lemma1_build(kernel, d_len):
    """Weighted digraph realising the valid 1-D convolution with ``kernel``.

    ``A[i, j] = K[j - i]`` (0-based) for ``0 <= j - i < r``; zero taps give no
    edge. The convolution output lives on the first ``d_len - r + 1`` nodes
    and is read off by aggregating over out-neighbours (``alpha="t"``).
    """
    kernel = np.asarray(kernel, dtype=float).reshape(-1)
    r = kernel.size
    if r < 1 or r > d_len:
        raise ValueError(f"kernel length {r} must be in [1, {d_len}]")
    edges, weights = [], []
    for i in range(d_len):
        for off in range(r):
            j = i + off
            if j < d_len and kernel[off] != 0:
                edges.append((i, j))
                weights.append(kernel[off])
    g = Digraph(d_len, edges, weights)
    h_nodes = np.arange(d_len - r + 1)
    spec = MessagePassingSpec(np.ones((1, 1)), alpha="t", normalization="none",
                              self_weight=None, self_coef=0.0)
    return g, h_nodes, spec


def lemma1_gconv_path(kernel, x):
    """``pullback o gconv`` applied to the series ``x``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    g, h_nodes, spec = lemma1_build(kernel, x.size)
    out = linear_message_passing(FeaturedDigraph(g, x[:, None]), spec)
    return pullback_subgraph_features(out, h_nodes).features[:, 0]


def dilate_kernel(kernel, dilation):
    """Insert ``dilation - 1`` zeros between consecutive taps."""
    kernel = np.asarray(kernel, dtype=float).reshape(-1)
    out = np.zeros(dilation * (kernel.size - 1) + 1)
    out[::dilation] = kernel
    return out


def lemma1_check(kernel, x, dilation=1):
    """Max abs deviation between the valid convolution and the graph path."""
    x = np.asarray(x, dtype=float).reshape(-1)
    kernel = np.asarray(kernel, dtype=float).reshape(-1)
    span = dilation * (kernel.size - 1) + 1
    if x.size < span:
        raise ValueError(f"signal length {x.size} shorter than kernel span {span}")
    direct = ag.conv1d(x[:, None], kernel[None, None, :], dilation=dilation,
                       causal=False).data[:, 0]
    via_graph = lemma1_gconv_path(dilate_kernel(kernel, dilation), x)
    return float(np.max(np.abs(direct - via_graph)))

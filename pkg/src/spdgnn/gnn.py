"""Message passing layers (GCN, GAT, Cheb, SGC, GIN) over any geometry.

Every curved layer follows the same template: move points with the
geometry's feature transform, aggregate neighbours in the tangent space at
the base point, map back, then apply the bias and the nonlinearity.  In
SPD_n that is

    Q_i = M o Z_i
    P_i = exp(sum_j k_ij log Q_j)
    Z'_i = phi(P_i (+) B)

and the Euclidean, Poincare and product layers are the same code with a
different :class:`~spdgnn.manifolds.GeometryContext`.

Parameters are flat dicts of arrays keyed ``"layer0.transform.W"`` and so
on; :func:`scope` hands a layer the sub-dict for its prefix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .errors import ConfigError, DimensionMismatch, EmptyGraph
from .graph import Graph
from .manifolds import Euclidean, GeometryContext, Hyperbolic, Spd

ARCHS = ("gcn", "gat", "cheb", "sgc", "gin")
LEAKY_SLOPE = 0.2


class scope(dict):
    """View of the entries of ``params`` under ``prefix``, with the prefix stripped."""

    def __init__(self, params, prefix):
        p = prefix if prefix.endswith(".") else prefix + "."
        super().__init__((k[len(p):], v) for k, v in params.items() if k.startswith(p))


def _add_prefix(prefix, params):
    return {f"{prefix}.{k}": v for k, v in params.items()}


# ------------------------------------------------------------ input mapping


def input_map_to_spd(x, W_in, n):
    """Map Euclidean features into SPD_n.

    ``v = W_in x`` fills the upper triangle of a zero matrix ``A`` row by row
    and the result is ``exp(A + A^T)``; diagonal entries of the exponent are
    therefore ``2 v``.
    """
    x = ad.as_tensor(x)
    if ad.value_of(W_in).shape[0] != n * (n + 1) // 2:
        raise DimensionMismatch(f"W_in must have {n * (n + 1) // 2} rows")
    squeeze = x.ndim == 1
    if squeeze:
        x = ad.reshape(x, (1, -1))
    out = Spd(n).input_map({"W_in": W_in}, x)
    if squeeze:
        out = out[0]
    return out if isinstance(x, ad.Tensor) and x.tape is not None else ad.value_of(out)


def gcn_weights(graph: Graph):
    """``k_ij`` aligned with the graph's CSR entries."""
    return graph.gcn_matrix.data.copy()


# ---------------------------------------------------------------- layers


def gcn_layer(geo: GeometryContext, params, Z, graph: Graph):
    Q = geo.transform(scope(params, "transform"), Z)
    P = geo.combine(graph.gcn_matrix, Q)
    return geo.bias_nonlin(scope(params, "bias"), P)


def euclidean_gcn_layer(X, graph, params):
    """``relu(D^-1/2 A D^-1/2 X W^T + b)``; ``params`` holds ``W`` and ``b``."""
    geo = Euclidean(ad.value_of(params["W"]).shape[0])
    return _keep_type(gcn_layer(geo, _gcn_params(params), X, graph), X, params)


def spd_gcn_layer(Z, graph, params, nonlinearity="tgreeig", reeig_eps=0.5):
    """SPD GCN layer; ``params`` holds ``M`` (raw square matrix) and ``beta``."""
    geo = Spd(ad.value_of(params["M"]).shape[0], nonlinearity, reeig_eps)
    return _keep_type(gcn_layer(geo, _gcn_params(params), Z, graph), Z, params)


def hyperbolic_gcn_layer(Z, graph, params):
    """Poincare GCN layer; ``params`` holds ``W`` and the tangent bias ``b``."""
    geo = Hyperbolic(ad.value_of(params["W"]).shape[0])
    return _keep_type(gcn_layer(geo, _gcn_params(params), Z, graph), Z, params)


def _gcn_params(params):
    bias_keys = {"b", "beta", "b1", "b2"}
    out = {}
    for k, v in params.items():
        out[("bias." if k in bias_keys else "transform.") + k] = v
    return out


def _keep_type(out, *inputs):
    values = [*inputs[:-1], *inputs[-1].values()]
    if any(isinstance(v, ad.Tensor) for v in values):
        return out
    return ad.value_of(out)


def _rows_dot(v, a):
    """``v @ a`` for ``v`` of shape (N, D) and ``a`` of shape (D,)."""
    a = ad.reshape(a, (-1, 1))
    return ad.reshape(v @ a, (-1,))


def gat_attention(geo: GeometryContext, params, Q, graph: Graph):
    """Attention coefficients ``alpha_ij`` (aligned with CSR entries) and tangent vectors."""
    T = geo.log0(Q)
    v = geo.vectorize(T)
    a = params["a"]
    d = v.shape[-1]
    s_dst = _rows_dot(v, a[:d])
    s_src = _rows_dot(v, a[d:])
    targets, sources = graph.edge_index()
    e = ad.leaky_relu(ad.gather_rows(s_dst, targets) + ad.gather_rows(s_src, sources), LEAKY_SLOPE)
    return ad.segment_softmax(e, targets, graph.num_nodes), T


def gat_layer(geo: GeometryContext, params, Z, graph: Graph, return_attention=False):
    """Single-head attention; ``alpha`` replaces ``k`` in the tangent aggregation."""
    Q = geo.transform(scope(params, "transform"), Z)
    alpha, T = gat_attention(geo, scope(params, "att"), Q, graph)
    targets, sources = graph.edge_index()
    msgs = ad.gather_rows(T, sources)
    w = ad.reshape(alpha, (-1,) + (1,) * (msgs.ndim - 1))
    P = geo.exp0(ad.scatter_add_rows(msgs * w, targets, graph.num_nodes))
    out = geo.bias_nonlin(scope(params, "bias"), P)
    return (out, alpha) if return_attention else out


def cheb_layer(geo: GeometryContext, params, Z, graph: Graph):
    """First-order Chebyshev filter ``T0 + L~ T1`` in the tangent space.

    ``T0`` and ``T1`` are the log-mapped outputs of two independent feature
    transforms and ``L~ = L - I`` is the normalized Laplacian rescaled with
    ``lambda_max = 2``.
    """
    T0 = geo.log0(geo.transform(scope(params, "t0"), Z))
    T1 = geo.log0(geo.transform(scope(params, "t1"), Z))
    P = geo.exp0(T0 + ad.spmm(graph.cheb_matrix, T1))
    return geo.bias_nonlin(scope(params, "bias"), P)


def sgc_layer(geo: GeometryContext, params, Z, graph: Graph, K=2):
    """Propagate ``K`` times in the tangent space, then transform once."""
    T = geo.log0(Z)
    for _ in range(K):
        T = ad.spmm(graph.gcn_matrix, T)
    Q = geo.transform(scope(params, "transform"), geo.exp0(T))
    return geo.bias_nonlin(scope(params, "bias"), Q)


def sgc_model(geo: GeometryContext, params, Z, graph: Graph, K=2, num_layers=1):
    for layer in range(num_layers):
        Z = sgc_layer(geo, scope(params, f"layer{layer}"), Z, graph, K)
    return Z


def gin_layer(geo: GeometryContext, params, Z, graph: Graph):
    """``(1 + eps) t_i + sum_{j != i} t_j`` in the tangent space, then a two-step transform."""
    T = geo.log0(Z)
    eps = params["eps"]
    p = T * (1.0 + eps) + ad.spmm(graph.neighbor_sum_matrix, T)
    H = geo.nonlin(geo.transform(scope(params, "t1"), geo.exp0(p)))
    H = geo.transform(scope(params, "t2"), H)
    return geo.bias_nonlin(scope(params, "bias"), H)


def init_layer(arch, geo: GeometryContext, rng, d_in):
    if arch == "gcn" or arch == "sgc":
        parts = {"transform": geo.init_transform(rng, d_in), "bias": geo.init_bias(rng)}
    elif arch == "gat":
        D = geo.ambient_dim
        bound = 1.0 / np.sqrt(2 * D)
        parts = {
            "transform": geo.init_transform(rng, d_in),
            "att": {"a": rng.uniform(-bound, bound, size=2 * D)},
            "bias": geo.init_bias(rng),
        }
    elif arch == "cheb":
        parts = {
            "t0": geo.init_transform(rng, d_in),
            "t1": geo.init_transform(rng, d_in),
            "bias": geo.init_bias(rng),
        }
    elif arch == "gin":
        parts = {
            "t1": geo.init_transform(rng, d_in),
            "t2": geo.init_transform(rng, geo.ambient_dim),
            "bias": geo.init_bias(rng),
        }
    else:
        raise ConfigError(f"unknown architecture {arch!r}; choose from {ARCHS}")
    flat = {}
    for part, values in parts.items():
        flat.update(_add_prefix(part, values))
    if arch == "gin":
        flat["eps"] = np.zeros(())
    return flat


def apply_layer(arch, geo, params, Z, graph, sgc_k=2):
    if arch == "gcn":
        return gcn_layer(geo, params, Z, graph)
    if arch == "gat":
        return gat_layer(geo, params, Z, graph)
    if arch == "cheb":
        return cheb_layer(geo, params, Z, graph)
    if arch == "sgc":
        return sgc_layer(geo, params, Z, graph, sgc_k)
    if arch == "gin":
        return gin_layer(geo, params, Z, graph)
    raise ConfigError(f"unknown architecture {arch!r}")


def graph_readout_mean(geo: GeometryContext, Z, pool=None):
    """Arithmetic mean of node embeddings (per graph when ``pool`` is given).

    SPD embeddings are averaged entrywise; ball coordinates are averaged in
    the tangent space at the origin.
    """
    n = ad.value_of(Z).shape[0]
    if n == 0:
        raise EmptyGraph("readout of an empty node set")
    if pool is None:
        pool = sp.csr_matrix(np.full((1, n), 1.0 / n))
    out = geo.readout_mean(pool, Z)
    return out if isinstance(Z, ad.Tensor) and Z.tape is not None else ad.value_of(out)


# ----------------------------------------------------------------- model


@dataclass(frozen=True)
class ModelConfig:
    arch: str
    geometry: GeometryContext
    in_dim: int
    num_layers: int = 2
    dropout: float = 0.0
    sgc_k: int = 2
    jitter_sigma: float = 0.0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown architecture {self.arch!r}; choose from {ARCHS}")
        if self.num_layers < 1:
            raise ConfigError("num_layers must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")


class GNNEncoder:
    """Input map followed by ``num_layers`` message passing layers."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.geometry = config.geometry

    def init_params(self, rng) -> dict:
        geo = self.geometry
        params = _add_prefix("input", geo.init_input(rng, self.config.in_dim))
        d = geo.input_size(self.config.in_dim)
        for layer in range(self.config.num_layers):
            params.update(_add_prefix(f"layer{layer}", init_layer(self.config.arch, geo, rng, d)))
            d = geo.ambient_dim
        return params

    def embed(self, params, graph: Graph, train=False, rng=None, layer_hook=None):
        """Node embeddings after the last layer.

        ``layer_hook(layer_index, points)`` is called with the array of
        points after the input map (index -1) and after every layer.
        """
        cfg, geo = self.config, self.geometry
        X = ad.dropout(ad.as_tensor(graph.features), cfg.dropout, rng, train)
        Z = geo.input_map(scope(params, "input"), X)
        if cfg.jitter_sigma > 0 and isinstance(geo, Spd):
            Z = _jitter(Z, cfg.jitter_sigma, rng)
        if layer_hook is not None:
            layer_hook(-1, ad.value_of(Z))
        for layer in range(cfg.num_layers):
            if layer > 0 and isinstance(geo, Euclidean):
                Z = ad.dropout(Z, cfg.dropout, rng, train)
            Z = apply_layer(cfg.arch, geo, scope(params, f"layer{layer}"), Z, graph, cfg.sgc_k)
            if layer_hook is not None:
                layer_hook(layer, ad.value_of(Z))
        return Z


def _jitter(Z, sigma, rng):
    from .symcore import jitter_if_degenerate

    rng = np.random.default_rng(0) if rng is None else rng
    noisy = jitter_if_degenerate(Z.value, sigma, rng)
    return Z + (noisy - Z.value)

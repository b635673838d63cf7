"""Classification heads acting on log-mapped embeddings.

``linear-xe``  linear map of the upper-triangle vector, cross-entropy loss.
``svm-mm``     linear functionals ``X -> Tr(W_k X)`` on S_n, multi-class hinge
               loss plus ``lam * sum_k Tr(W_k C W_k C)``; SPD geometry only.
``nc-mm``      per-class centroid with its own SPD metric and bias,
               multi-margin loss on the similarity scores.

All predictions break ties towards the lowest class index.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, LabelOutOfRange, NegativeLambda
from .manifolds import GeometryContext, Spd

HEADS = ("linear-xe", "svm-mm", "nc-mm")


def _out(result, *inputs):
    if any(isinstance(x, ad.Tensor) for x in inputs):
        return result
    return ad.value_of(result)


def vectorize_upper(X):
    """``(X_11 ... X_1n, X_22, ..., X_nn)``: row-wise upper triangle, no sqrt(2) weights."""
    return _out(ad.triu_vec(X), X)


def linear_xe_forward(x, W):
    """Logits ``W x`` for rows of ``x``."""
    return _out(ad.as_tensor(x) @ ad.transpose(W), x, W)


def predict(scores):
    return np.argmax(ad.value_of(scores), axis=-1)


def svm_mm_scores(X, W):
    """``Tr(W_k X_i)`` for a stack ``X`` (N, n, n) and ``W`` (K, n, n)."""
    Xt, Wt = ad.as_tensor(X), ad.as_tensor(W)
    n = Xt.shape[-1]
    flat_x = ad.reshape(Xt, (-1, n * n))
    flat_w = ad.reshape(ad.sym(Wt), (-1, n * n))
    return _out(flat_x @ ad.transpose(flat_w), X, W)


def svm_mm_loss(X, labels, W, lam):
    """Hinge loss with the trace regularizer, ``C`` the mean of the batch ``X``.

    The hinge part is ``1/(N K^2) sum_i sum_k sum_{l != y_i} max(0, 1 - Tr(W_{y_i} X_i)
    + Tr(W_l X_i))``; the ``k`` index does not enter the summand, so it
    contributes a factor ``K``.
    """
    if lam < 0:
        raise NegativeLambda(f"lambda must be non-negative, got {lam}")
    Xt, Wt = ad.as_tensor(X), ad.as_tensor(W)
    K = Wt.shape[0]
    labels = np.asarray(labels, dtype=np.intp)
    if np.any(labels < 0) or np.any(labels >= K):
        raise LabelOutOfRange(f"labels must lie in [0, {K - 1}]")
    N = labels.shape[0]
    scores = svm_mm_scores(Xt, Wt)
    rows = np.arange(N)
    target = ad.reshape(ad.getitem(scores, (rows, labels)), (N, 1))
    others = np.ones((N, K))
    others[rows, labels] = 0.0
    hinge = ad.sum(ad.relu(1.0 - target + scores) * others)
    data_term = ad.div(ad.scale(hinge, K), float(N * K * K))

    C = ad.mean(Xt, axis=0)
    WC = ad.sym(Wt) @ C
    reg = ad.sum(ad.trace(WC @ WC))
    return _out(ad.scale(reg, lam) + data_term, X, W)


def nc_mm_similarity(x, mu, P, b):
    """``-1/2 (x - mu_k) P_k (x - mu_k)^T + b_k`` for every row of ``x`` and class ``k``.

    Shapes: ``x`` (N, D), ``mu`` (K, D), ``P`` (K, D, D), ``b`` (K,); returns (N, K).
    A single vector ``x`` of shape (D,) returns shape (K,).
    """
    x_t = ad.as_tensor(x)
    single = x_t.ndim == 1
    if single:
        x_t = ad.reshape(x_t, (1, -1))
    mu_t = ad.as_tensor(mu)
    N, D = x_t.shape
    K = mu_t.shape[0]
    diff = ad.reshape(x_t, (N, 1, 1, D)) - ad.reshape(mu_t, (1, K, 1, D))
    quad = ad.sum(ad.sum((diff @ ad.as_tensor(P)) * diff, axis=-1), axis=-1)
    sim = ad.scale(quad, -0.5) + b
    if single:
        sim = ad.reshape(sim, (K,))
    return _out(sim, x, mu, P, b)


class Head:
    """A classifier with its own parameters, scoring geometry points."""

    name = ""

    def __init__(self, geometry: GeometryContext, num_classes: int, C: float = 0.0):
        self.geometry = geometry
        self.num_classes = int(num_classes)
        self.C = float(C)

    def init_params(self, rng) -> dict:
        raise NotImplementedError

    def features(self, Z):
        return self.geometry.tangent_vectors(Z)

    def scores(self, params, Z):
        raise NotImplementedError

    def loss(self, params, Z, labels):
        raise NotImplementedError

    def predict(self, params, Z):
        return predict(self.scores(params, Z))


class LinearXE(Head):
    name = "linear-xe"

    def init_params(self, rng):
        D = self.geometry.ambient_dim
        bound = 1.0 / np.sqrt(D)
        return {"W": rng.uniform(-bound, bound, size=(self.num_classes, D))}

    def scores(self, params, Z):
        return ad.as_tensor(self.features(Z)) @ ad.transpose(params["W"])

    def loss(self, params, Z, labels):
        return ad.cross_entropy(self.scores(params, Z), labels)


class SvmMM(Head):
    name = "svm-mm"

    def __init__(self, geometry, num_classes, C=0.0):
        if not isinstance(geometry, Spd):
            raise ConfigError("svm-mm acts on symmetric matrices and needs the spd geometry")
        super().__init__(geometry, num_classes, C)

    def init_params(self, rng):
        n = self.geometry.dim
        bound = 1.0 / n
        return {"W": rng.uniform(-bound, bound, size=(self.num_classes, n, n))}

    def features(self, Z):
        return self.geometry.log0(Z)

    def scores(self, params, Z):
        return svm_mm_scores(self.features(Z), params["W"])

    def loss(self, params, Z, labels):
        return svm_mm_loss(self.features(Z), labels, params["W"], self.C)


class NcMM(Head):
    """Nearest-centroid head; ``C`` weights an L2 penalty on the metric log-parameters."""

    name = "nc-mm"

    def init_params(self, rng):
        D, K = self.geometry.ambient_dim, self.num_classes
        return {
            "mu": rng.uniform(-0.1, 0.1, size=(K, D)),
            "S": np.zeros((K, D, D)),
            "b": np.zeros(K),
        }

    def metrics(self, params):
        return ad.eig_fn(ad.sym(params["S"]), "exp")

    def scores(self, params, Z):
        return nc_mm_similarity(self.features(Z), params["mu"], self.metrics(params), params["b"])

    def loss(self, params, Z, labels):
        loss = ad.multi_margin(self.scores(params, Z), labels)
        if self.C > 0:
            loss = loss + ad.scale(ad.sum(ad.frobenius_norm_sq(ad.sym(params["S"]))), self.C)
        return loss


def make_head(name: str, geometry: GeometryContext, num_classes: int, C: float = 0.0) -> Head:
    cls = {"linear-xe": LinearXE, "svm-mm": SvmMM, "nc-mm": NcMM}.get(name)
    if cls is None:
        raise ConfigError(f"unknown classifier {name!r}; choose from {HEADS}")
    return cls(geometry, num_classes, C)

"""Latent geometries: Euclidean space, the Poincare ball, SPD_n and H^m x R^m.

The free functions accept numpy arrays or :class:`~spdgnn.autodiff.Tensor`
objects.  Called with arrays only they return arrays; if any argument is a
tensor they return a tensor recorded on its tape.

The :class:`GeometryContext` subclasses bundle the operations a message
passing layer needs (tangent maps at the base point, feature transform,
bias and nonlinearity, readout) behind one interface.  Points of every
geometry are stored row-wise: shape ``(N, d)`` for vector geometries and
``(N, n, n)`` for SPD_n.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionMismatch, OutsideBall

BALL_EPS = 1e-5
MIN_NORM = 1e-15


def _arrays_stay_arrays(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        out = fn(*args, **kwargs)
        if any(isinstance(a, Tensor) for a in (*args, *kwargs.values())):
            return out
        if isinstance(out, tuple):
            return tuple(o.value for o in out)
        return out.value

    return wrapper


def _same_shape(a, b):
    if ad.value_of(a).shape[-2:] != ad.value_of(b).shape[-2:]:
        raise DimensionMismatch(f"{ad.value_of(a).shape} vs {ad.value_of(b).shape}")


# ------------------------------------------------------------------- SPD_n


@_arrays_stay_arrays
def spd_expmap0(S):
    return ad.eig_fn(S, "exp")


@_arrays_stay_arrays
def spd_logmap0(P):
    return ad.eig_fn(P, "log")


@_arrays_stay_arrays
def spd_gyro_add(P, Q):
    """``sqrt(P) Q sqrt(P)``: translate the identity to ``P`` and apply it to ``Q``."""
    _same_shape(P, Q)
    root = ad.eig_fn(P, "sqrt")
    return ad.sym(root @ Q @ root)


@_arrays_stay_arrays
def spd_gyro_inverse(P):
    return ad.eig_fn(P, "inv")


@_arrays_stay_arrays
def orthogonalize(M_raw):
    return ad.orthogonalize(M_raw)


@_arrays_stay_arrays
def spd_isometry(M_raw, P):
    """``M P M^T`` with ``M`` the orthogonal QR factor of ``M_raw``."""
    _same_shape(M_raw, P)
    M = ad.orthogonalize(M_raw)
    return ad.sym(M @ P @ M.T)


@_arrays_stay_arrays
def reeig(P, eps=0.5):
    """Floor the eigenvalues at ``eps``."""
    return ad.eig_fn(P, "clamp", eps=eps, positive=True)


@_arrays_stay_arrays
def tgreeig(P):
    """``U exp(relu(log Lambda)) U^T``, i.e. floor the eigenvalues at 1."""
    return ad.eig_fn(P, "clamp", eps=1.0, positive=True)


# ------------------------------------------------------------ Poincare ball


def _norm(x):
    sq = ad.sum(x * x, axis=-1, keepdims=True)
    return ad.sqrt(ad.maximum(sq, MIN_NORM * MIN_NORM))


def _check_ball(x):
    norms = np.linalg.norm(ad.value_of(x), axis=-1)
    bad = ~(norms < 1.0)
    if np.any(bad):
        raise OutsideBall(f"point norm {norms[bad].flat[0]} is not inside the unit ball")
    return x


@_arrays_stay_arrays
def project(x):
    """Pull points back to norm at most ``1 - BALL_EPS``."""
    x = ad.as_tensor(x)
    factor = ad.minimum((1.0 - BALL_EPS) / _norm(x), 1.0)
    return _check_ball(x * factor)


@_arrays_stay_arrays
def poincare_expmap0(v):
    """``tanh(|v|) v / |v|`` (curvature -1)."""
    v = ad.as_tensor(v)
    n = _norm(v)
    return project(ad.tanh(n) * v / n)


@_arrays_stay_arrays
def poincare_logmap0(x):
    """``artanh(|x|) x / |x|``."""
    x = ad.as_tensor(x)
    n = _norm(x)
    return ad.artanh(ad.minimum(n, 1.0 - BALL_EPS)) * x / n


@_arrays_stay_arrays
def mobius_add(x, y):
    x, y = ad.as_tensor(x), ad.as_tensor(y)
    xy = ad.sum(x * y, axis=-1, keepdims=True)
    x2 = ad.sum(x * x, axis=-1, keepdims=True)
    y2 = ad.sum(y * y, axis=-1, keepdims=True)
    num = (1.0 + 2.0 * xy + y2) * x + (1.0 - x2) * y
    den = 1.0 + 2.0 * xy + x2 * y2
    return project(num / ad.maximum(den, MIN_NORM))


@_arrays_stay_arrays
def hyp_matvec(W, x):
    """``expmap0(W logmap0(x))`` applied to each row of ``x``."""
    return poincare_expmap0(poincare_logmap0(x) @ ad.transpose(W))


# ---------------------------------------------------------- H^m x R^m


def _split(z, m):
    return z[..., :m], z[..., m:]


@_arrays_stay_arrays
def product_transform(W11, W12, W21, W22, z):
    """Block transform mixing the hyperbolic and Euclidean halves of ``z``."""
    z = ad.as_tensor(z)
    m = ad.value_of(W11).shape[-1]
    if z.shape[-1] != 2 * m:
        raise DimensionMismatch(f"expected {2 * m} coordinates, got {z.shape[-1]}")
    z1, z2 = _split(z, m)
    h = mobius_add(hyp_matvec(W11, z1), hyp_matvec(W12, poincare_expmap0(z2)))
    e = poincare_logmap0(z1) @ ad.transpose(W21) + z2 @ ad.transpose(W22)
    return ad.concat([h, e], axis=-1)


@_arrays_stay_arrays
def product_aggregate(weights, points):
    """Tangent-space weighted sum on the ball half, plain sum on the flat half.

    ``weights`` is a scipy sparse ``(N_out, N_in)`` matrix.
    """
    points = ad.as_tensor(points)
    m = points.shape[-1] // 2
    q1, q2 = _split(points, m)
    h = poincare_expmap0(ad.spmm(weights, poincare_logmap0(q1)))
    return ad.concat([h, ad.spmm(weights, q2)], axis=-1)


def _ball_relu(x):
    return poincare_expmap0(ad.relu(poincare_logmap0(x)))


@_arrays_stay_arrays
def product_bias_nonlin(p, B1, B2):
    p = ad.as_tensor(p)
    m = p.shape[-1] // 2
    p1, p2 = _split(p, m)
    return ad.concat([_ball_relu(mobius_add(p1, B1)), ad.relu(p2 + B2)], axis=-1)


# ---------------------------------------------------------------- contract


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass(frozen=True)
class GeometryContext:
    """Dispatch record for one latent geometry.

    Subclasses implement the operations below; layers only talk to this
    interface.  Parameters live in plain dicts of arrays (or tensors during
    a forward pass) under the names returned by the ``init_*`` methods.
    """

    dim: int
    kind: ClassVar[str] = ""

    @property
    def ambient_dim(self) -> int:
        return self.dim

    # points <-> tangent vectors at the base point
    def exp0(self, T):
        raise NotImplementedError

    def log0(self, Z):
        raise NotImplementedError

    def vectorize(self, T):
        """Flatten tangent vectors to ``(N, ambient_dim)``."""
        return T

    def input_size(self, d_in):
        """Feature size the first layer sees after :meth:`input_map`."""
        return self.ambient_dim

    def init_input(self, rng, d_in):
        return {"W_in": _uniform(rng, (self.ambient_dim, d_in), d_in)}

    def input_map(self, params, X):
        return self.exp0(ad.as_tensor(X) @ ad.transpose(params["W_in"]))

    def init_transform(self, rng, d_in):
        raise NotImplementedError

    def transform(self, params, Z):
        raise NotImplementedError

    def init_bias(self, rng):
        raise NotImplementedError

    def bias_nonlin(self, params, P):
        raise NotImplementedError

    def nonlin(self, P):
        raise NotImplementedError

    def combine(self, A, Z):
        """``exp0(A log0(Z))`` for a constant sparse matrix ``A``."""
        return self.exp0(ad.spmm(A, self.log0(Z)))

    def readout_mean(self, pool, Z):
        """Mean of node embeddings per graph; ``pool`` is a row-normalized sparse matrix."""
        return self.combine(pool, Z)

    def tangent_vectors(self, Z):
        return self.vectorize(self.log0(Z))


@dataclass(frozen=True)
class Euclidean(GeometryContext):
    kind: ClassVar[str] = "euclidean"

    def exp0(self, T):
        return ad.as_tensor(T)

    def log0(self, Z):
        return ad.as_tensor(Z)

    def input_size(self, d_in):
        return d_in

    def init_input(self, rng, d_in):
        return {}

    def input_map(self, params, X):
        return ad.as_tensor(X)

    def init_transform(self, rng, d_in):
        return {"W": _uniform(rng, (self.dim, d_in), d_in)}

    def transform(self, params, Z):
        return Z @ ad.transpose(params["W"])

    def init_bias(self, rng):
        return {"b": np.zeros(self.dim)}

    def bias_nonlin(self, params, P):
        return ad.relu(P + params["b"])

    def nonlin(self, P):
        return ad.relu(P)

    def combine(self, A, Z):
        return ad.spmm(A, Z)


@dataclass(frozen=True)
class Hyperbolic(GeometryContext):
    """Poincare ball of curvature -1."""

    kind: ClassVar[str] = "hyperbolic"

    def exp0(self, T):
        return poincare_expmap0(T)

    def log0(self, Z):
        return poincare_logmap0(Z)

    def init_transform(self, rng, d_in):
        return {"W": _uniform(rng, (self.dim, d_in), d_in)}

    def transform(self, params, Z):
        return hyp_matvec(params["W"], Z)

    def init_bias(self, rng):
        return {"b": np.zeros(self.dim)}

    def bias_nonlin(self, params, P):
        return _ball_relu(mobius_add(P, poincare_expmap0(params["b"])))

    def nonlin(self, P):
        return _ball_relu(P)


@dataclass(frozen=True)
class Spd(GeometryContext):
    """SPD_n with tangent space S_n at the identity.

    ``nonlinearity`` is ``"tgreeig"`` (eigenvalue floor 1) or ``"reeig"``
    (eigenvalue floor ``reeig_eps``).
    """

    nonlinearity: str = "tgreeig"
    reeig_eps: float = 0.5
    kind: ClassVar[str] = "spd"

    def __post_init__(self):
        if self.dim < 2:
            raise ConfigError("SPD_n needs n >= 2")
        if self.nonlinearity not in ("tgreeig", "reeig"):
            raise ConfigError(f"unknown SPD nonlinearity {self.nonlinearity!r}")

    @property
    def ambient_dim(self):
        return self.dim * (self.dim + 1) // 2

    def exp0(self, T):
        return spd_expmap0(T)

    def log0(self, Z):
        return spd_logmap0(Z)

    def vectorize(self, T):
        return ad.triu_vec(T)

    def input_map(self, params, X):
        """Linear map to n(n+1)/2 entries, arrange as upper triangle A, return exp(A + A^T)."""
        v = ad.as_tensor(X) @ ad.transpose(params["W_in"])
        A = ad.fill_upper(v, self.dim)
        return spd_expmap0(A + ad.transpose(A))

    def init_transform(self, rng, d_in):
        n = self.dim
        return {"M": _uniform(rng, (n, n), n)}

    def transform(self, params, Z):
        return spd_isometry(params["M"], Z)

    def init_bias(self, rng):
        return {"beta": np.zeros((self.dim, self.dim))}

    def bias_matrix(self, params):
        return spd_expmap0(ad.sym(params["beta"]))

    def nonlin(self, P):
        if self.nonlinearity == "reeig":
            return reeig(P, self.reeig_eps)
        return tgreeig(P)

    def bias_nonlin(self, params, P):
        return self.nonlin(spd_gyro_add(P, self.bias_matrix(params)))

    def readout_mean(self, pool, Z):
        # entrywise mean; the PD cone is convex
        return ad.spmm(pool, Z)


@dataclass(frozen=True)
class Product(GeometryContext):
    """H^m x R^m; points are rows ``[ball coordinates | flat coordinates]``."""

    kind: ClassVar[str] = "product"

    @property
    def ambient_dim(self):
        return 2 * self.dim

    def exp0(self, T):
        T = ad.as_tensor(T)
        t1, t2 = _split(T, self.dim)
        return ad.concat([poincare_expmap0(t1), t2], axis=-1)

    def log0(self, Z):
        Z = ad.as_tensor(Z)
        z1, z2 = _split(Z, self.dim)
        return ad.concat([poincare_logmap0(z1), z2], axis=-1)

    def init_input(self, rng, d_in):
        return {"W_in": _uniform(rng, (2 * self.dim, d_in), d_in)}

    def init_transform(self, rng, d_in):
        m = self.dim
        return {name: _uniform(rng, (m, m), m) for name in ("W11", "W12", "W21", "W22")}

    def transform(self, params, Z):
        return product_transform(params["W11"], params["W12"], params["W21"], params["W22"], Z)

    def init_bias(self, rng):
        return {"b1": np.zeros(self.dim), "b2": np.zeros(self.dim)}

    def bias_nonlin(self, params, P):
        return product_bias_nonlin(P, poincare_expmap0(params["b1"]), params["b2"])

    def nonlin(self, P):
        P = ad.as_tensor(P)
        p1, p2 = _split(P, self.dim)
        return ad.concat([_ball_relu(p1), ad.relu(p2)], axis=-1)

    def combine(self, A, Z):
        return product_aggregate(A, Z)


GEOMETRIES = {cls.kind: cls for cls in (Euclidean, Hyperbolic, Spd, Product)}


def make_geometry(kind: str, dim: int, **kwargs) -> GeometryContext:
    try:
        cls = GEOMETRIES[kind]
    except KeyError:
        raise ConfigError(f"unknown geometry {kind!r}; choose from {sorted(GEOMETRIES)}") from None
    if dim < 1:
        raise ConfigError("dimension must be positive")
    return cls(dim, **kwargs) if cls is Spd else cls(dim)

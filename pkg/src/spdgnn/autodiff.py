"""A small reverse-mode automatic differentiation tape over numpy arrays.

Usage::

    tape = Tape()
    w = tape.param(np.array(3.0))
    loss = w * w
    grads = backward(tape, loss)      # {w: 6.0}

Tensors that are not attached to a tape are constants; operations whose
inputs are all constants do not record anything, so every function here
doubles as a plain numpy evaluator.  Nodes are appended in execution order,
which is a topological order, and ``backward`` walks them once in reverse.
Gradients are returned fresh on every call and are never accumulated on the
tensors themselves, so calling ``backward`` twice gives identical results.
"""
from __future__ import annotations

import numpy as np

from .errors import (
    LabelOutOfRange,
    NonFinite,
    NotPositiveDefinite,
    NotScalarLoss,
    NotSymmetric,
    Overflow,
    RankDeficient,
    ShapeMismatch,
)
from .symcore import DEGENERATE_GAP, EXP_LIMIT, sym_eig

_DEBUG = False


def set_debug(flag: bool) -> None:
    """Check every forward value for NaN/Inf when enabled."""
    global _DEBUG
    _DEBUG = bool(flag)


class Tensor:
    __slots__ = ("value", "tape", "node_id")
    __array_ufunc__ = None  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, value, tape=None, node_id=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.value

    def __repr__(self):
        where = "const" if self.tape is None else f"node {self.node_id}"
        return f"Tensor({where}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return getitem(self, idx)


class _Node:
    __slots__ = ("parents", "backward")

    def __init__(self, parents, backward):
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered record of operations for one differentiation pass."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self.leaves: list[Tensor] = []

    def __len__(self):
        return len(self._nodes)

    def param(self, value) -> Tensor:
        """Register a differentiable leaf."""
        t = Tensor(np.array(value, dtype=np.float64), self, len(self._nodes))
        self._nodes.append(_Node((), None))
        self.leaves.append(t)
        return t

    def _record(self, value, parent_ids, backward):
        t = Tensor(value, self, len(self._nodes))
        self._nodes.append(_Node(parent_ids, backward))
        return t


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def value_of(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _make(value, parents, backward):
    tape = None
    for p in parents:
        if p.tape is not None:
            if tape is None:
                tape = p.tape
            elif p.tape is not tape:
                raise ValueError("cannot combine tensors recorded on different tapes")
    if _DEBUG and not np.all(np.isfinite(value)):
        raise NonFinite("non-finite value produced in forward pass")
    if tape is None:
        return Tensor(value)
    ids = tuple(p.node_id if p.tape is tape else None for p in parents)
    return tape._record(value, ids, backward)


def backward(tape: Tape, loss: Tensor, wrt=None) -> dict:
    """Gradients of a scalar ``loss`` with respect to the tape's leaves.

    Returns a dict keyed by leaf tensor.  Leaves that do not influence the
    loss get zero arrays.  ``wrt`` restricts the returned keys.
    """
    if loss.value.size != 1:
        raise NotScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    leaves = tape.leaves if wrt is None else list(wrt)
    if loss.tape is None:
        return {leaf: np.zeros_like(leaf.value) for leaf in leaves}
    if loss.tape is not tape:
        raise ValueError("loss was not recorded on this tape")
    adj = {loss.node_id: np.ones_like(loss.value)}
    leaf_grads = {}
    nodes = tape._nodes
    for nid in range(loss.node_id, -1, -1):
        g = adj.pop(nid, None)
        if g is None:
            continue
        node = nodes[nid]
        if node.backward is None:
            leaf_grads[nid] = g
            continue
        for pid, pg in zip(node.parents, node.backward(g)):
            if pid is None or pg is None:
                continue
            adj[pid] = adj[pid] + pg if pid in adj else pg
    return {
        leaf: leaf_grads[leaf.node_id] if leaf.node_id in leaf_grads else np.zeros_like(leaf.value)
        for leaf in leaves
    }


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _swap(a):
    return np.swapaxes(a, -1, -2)


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.value + b.value
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    sa, sb = a.shape, b.shape
    return _make(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.value - b.value
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    sa, sb = a.shape, b.shape
    return _make(out, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def neg(a):
    a = as_tensor(a)
    return _make(-a.value, (a,), lambda g: (-g,))


def scale(a, c: float):
    a = as_tensor(a)
    c = float(c)
    return _make(c * a.value, (a,), lambda g: (c * g,))


def mul(a, b):
    """Elementwise (Hadamard) product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    try:
        out = av * bv
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    return _make(
        out, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


hadamard = mul


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av / bv
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)),
    )


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    av = a.value
    return _make(np.log(av), (a,), lambda g: (g / av,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _make(out, (a,), lambda g: (0.5 * g / out,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def artanh(a):
    a = as_tensor(a)
    av = a.value
    return _make(np.arctanh(av), (a,), lambda g: (g / (1.0 - av * av),))


def relu(a):
    a = as_tensor(a)
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a, slope=0.2):
    a = as_tensor(a)
    factor = np.where(a.value > 0, 1.0, slope)
    return _make(a.value * factor, (a,), lambda g: (g * factor,))


def maximum(a, c: float):
    """``max(a, c)`` against a constant; ties take the constant branch."""
    a = as_tensor(a)
    mask = a.value > c
    return _make(np.where(mask, a.value, c), (a,), lambda g: (g * mask,))


def minimum(a, c: float):
    a = as_tensor(a)
    mask = a.value < c
    return _make(np.where(mask, a.value, c), (a,), lambda g: (g * mask,))


# ------------------------------------------------------------------ reductions


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    shape = a.shape
    out = np.sum(a.value, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(out, (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def trace(a):
    """Trace over the last two axes."""
    a = as_tensor(a)
    n = a.shape[-1]
    eye = np.eye(n)
    return _make(np.trace(a.value, axis1=-2, axis2=-1), (a,), lambda g: (g[..., None, None] * eye,))


def frobenius_norm_sq(a):
    """Sum of squared entries over the last two axes."""
    a = as_tensor(a)
    av = a.value
    return _make(np.sum(av * av, axis=(-2, -1)), (a,), lambda g: (2.0 * g[..., None, None] * av,))


def softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.value - np.max(a.value, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)
    return _make(
        out, (a,), lambda g: (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)
    )


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.value - np.max(a.value, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _make(out, (a,), lambda g: (g - p * np.sum(g, axis=axis, keepdims=True),))


# -------------------------------------------------------------- linear algebra


def matmul(a, b):
    """Matrix product over the last two axes, broadcasting leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise ShapeMismatch(f"matmul shapes {av.shape} and {bv.shape}")
    out = np.matmul(av, bv)
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(np.matmul(g, _swap(bv)), av.shape),
            _unbroadcast(np.matmul(_swap(av), g), bv.shape),
        ),
    )


def transpose(a):
    a = as_tensor(a)
    return _make(_swap(a.value), (a,), lambda g: (_swap(g),))


def sym(a):
    """``(a + a^T) / 2`` over the last two axes."""
    a = as_tensor(a)
    return _make(0.5 * (a.value + _swap(a.value)), (a,), lambda g: (0.5 * (g + _swap(g)),))


def spmm(A, x):
    """Product of a constant scipy sparse matrix with the rows of ``x``.

    ``x`` has shape ``(N, ...)``; trailing axes are flattened for the product.
    """
    x = as_tensor(x)
    shape = x.shape
    if A.shape[1] != shape[0]:
        raise ShapeMismatch(f"sparse {A.shape} times rows of {shape}")
    flat = x.value.reshape(shape[0], -1)
    out = np.asarray(A @ flat).reshape((A.shape[0],) + shape[1:])
    At = A.T.tocsr()
    return _make(
        out, (x,), lambda g: (np.asarray(At @ g.reshape(g.shape[0], -1)).reshape(shape),)
    )


# ---------------------------------------------------------------- structural


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def getitem(a, idx):
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.value[idx], (a,), bw)


def gather_rows(a, idx):
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.value[idx], (a,), bw)


def scatter_add_rows(a, idx, num_rows):
    """``out[idx[e]] += a[e]`` for every row ``e``."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.shape[0] != a.shape[0]:
        raise ShapeMismatch(f"{idx.shape[0]} indices for {a.shape[0]} rows")
    out = np.zeros((num_rows,) + a.shape[1:])
    np.add.at(out, idx, a.value)
    return _make(out, (a,), lambda g: (g[idx],))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, sizes, axis=axis)))


def dropout(a, p, rng, train=True):
    """Inverted dropout; identity when ``train`` is false or ``p == 0``."""
    a = as_tensor(a)
    if not train or p == 0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return _make(a.value * keep, (a,), lambda g: (g * keep,))


def segment_softmax(e, segments, num_segments):
    """Softmax of a 1-D score vector within groups given by ``segments``."""
    e = as_tensor(e)
    seg = np.asarray(segments, dtype=np.intp)
    top = np.full(num_segments, -np.inf)
    np.maximum.at(top, seg, e.value)
    z = np.exp(e.value - top[seg])
    denom = np.bincount(seg, weights=z, minlength=num_segments)
    out = z / denom[seg]

    def bw(g):
        s = np.bincount(seg, weights=g * out, minlength=num_segments)
        return (out * (g - s[seg]),)

    return _make(out, (e,), bw)


_TRIU_CACHE: dict = {}


def _triu(n):
    if n not in _TRIU_CACHE:
        _TRIU_CACHE[n] = np.triu_indices(n)
    return _TRIU_CACHE[n]


def triu_vec(a):
    """Row-wise upper triangle (diagonal included) of the last two axes."""
    a = as_tensor(a)
    n = a.shape[-1]
    r, c = _triu(n)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        out[..., r, c] = g
        return (out,)

    return _make(a.value[..., r, c], (a,), bw)


def fill_upper(v, n):
    """Inverse of :func:`triu_vec` into an otherwise-zero matrix."""
    v = as_tensor(v)
    r, c = _triu(n)
    if v.shape[-1] != len(r):
        raise ShapeMismatch(f"need {len(r)} entries for a {n}x{n} upper triangle, got {v.shape[-1]}")
    out = np.zeros(v.shape[:-1] + (n, n))
    out[..., r, c] = v.value
    return _make(out, (v,), lambda g: (g[..., r, c],))


# ------------------------------------------------- spectral matrix functions


def _clamp_pair(eps):
    return (lambda lam: np.maximum(lam, eps), lambda lam: (lam > eps).astype(np.float64))


_EIG_FUNCS = {
    "exp": (np.exp, np.exp),
    "log": (np.log, lambda lam: 1.0 / lam),
    "sqrt": (np.sqrt, lambda lam: 0.5 / np.sqrt(lam)),
    "inv_sqrt": (lambda lam: lam ** -0.5, lambda lam: -0.5 * lam ** -1.5),
    "inv": (lambda lam: 1.0 / lam, lambda lam: -1.0 / (lam * lam)),
    "relu": (lambda lam: np.maximum(lam, 0.0), lambda lam: (lam > 0).astype(np.float64)),
}
_NEEDS_PD = {"log", "sqrt", "inv_sqrt", "inv"}


def eig_fn(S, f, eps=None, positive=False):
    """Spectral function ``U f(Lambda) U^T`` of symmetric matrices.

    ``f`` is one of ``"exp"``, ``"log"``, ``"sqrt"``, ``"inv_sqrt"``,
    ``"inv"``, ``"relu"``, ``"clamp"`` (which floors eigenvalues at ``eps``), or a pair
    ``(f, f_prime)`` of vectorized scalar functions.

    The backward pass is the Daleckii-Krein formula
    ``dS = U (F o (U^T G U)) U^T`` with ``F_ij`` the divided difference
    ``(f(l_i) - f(l_j)) / (l_i - l_j)``.  Whenever two eigenvalues are within
    ``DEGENERATE_GAP`` of each other the quotient is replaced by its limit
    ``f'((l_i + l_j) / 2)``, so repeated eigenvalues give finite gradients.
    ``positive=True`` rejects inputs that are not positive definite.
    """
    S = as_tensor(S)
    sv = S.value
    if sv.ndim < 2 or sv.shape[-1] != sv.shape[-2]:
        raise ShapeMismatch(f"eig_fn needs square matrices, got {sv.shape}")
    asym = np.max(np.abs(sv - _swap(sv)), initial=0.0)
    if asym > 1e-8 * (1.0 + np.max(np.abs(sv), initial=0.0)):
        raise NotSymmetric(f"input asymmetry {asym:.3e}")
    if isinstance(f, str):
        name = f
        if name == "clamp":
            if eps is None:
                raise ValueError("clamp requires eps")
            fun, dfun = _clamp_pair(eps)
        else:
            fun, dfun = _EIG_FUNCS[name]
    else:
        name = None
        fun, dfun = f

    U, lam = sym_eig(sv)
    if (positive or name in _NEEDS_PD) and np.any(lam <= 0):
        raise NotPositiveDefinite(f"{name or 'function'} of a matrix with eigenvalue {lam.min():.3e}")
    if name == "exp" and np.any(lam > EXP_LIMIT):
        raise Overflow(f"eigenvalue {lam.max():.1f} exceeds {EXP_LIMIT}; reduce the learning rate")
    flam = fun(lam)
    Ut = _swap(U)
    out = np.matmul(U * flam[..., None, :], Ut)
    out = 0.5 * (out + _swap(out))

    def bw(g):
        li, lj = lam[..., :, None], lam[..., None, :]
        diff = li - lj
        close = np.abs(diff) < DEGENERATE_GAP
        with np.errstate(divide="ignore", invalid="ignore"):
            quot = (flam[..., :, None] - flam[..., None, :]) / np.where(close, 1.0, diff)
        F = np.where(close, dfun(0.5 * (li + lj)), quot)
        gs = 0.5 * (g + _swap(g))
        inner = np.matmul(Ut, np.matmul(gs, U))
        return (np.matmul(U, np.matmul(F * inner, Ut)),)

    return _make(out, (S,), bw)


def _copyltu(m):
    return np.tril(m) + _swap(np.tril(m, -1))


def orthogonalize(M, reg=1e-6):
    """Q factor of ``M = QR`` with ``diag(R) > 0``; differentiable.

    A near-singular ``M`` is regularized by adding ``reg * I`` first.
    """
    M = as_tensor(M)
    mv = M.value
    n = mv.shape[-1]
    if mv.ndim != 2 or mv.shape[0] != n:
        raise ShapeMismatch(f"orthogonalize needs a square matrix, got {mv.shape}")
    if not np.all(np.isfinite(mv)):
        raise NonFinite("orthogonalize input contains NaN or Inf")
    ref = max(1.0, float(np.max(np.abs(mv), initial=0.0)))

    def qr(a):
        q, r = np.linalg.qr(a)
        d = np.where(np.diagonal(r) < 0, -1.0, 1.0)
        return q * d, d[:, None] * r

    Q, R = qr(mv)
    if np.min(np.abs(np.diagonal(R))) < 1e-10 * ref:
        Q, R = qr(mv + reg * np.eye(n))
        if np.min(np.abs(np.diagonal(R))) < 1e-12 * ref:
            raise RankDeficient("matrix is rank deficient even after regularization")

    def bw(g):
        m = -np.matmul(_swap(g), Q)
        x = g + np.matmul(Q, _copyltu(m))
        return (_swap(np.linalg.solve(R, _swap(x))),)

    return _make(Q, (M,), bw)


# -------------------------------------------------------------------- losses


def _check_labels(labels, k):
    labels = np.asarray(labels, dtype=np.intp)
    if np.any(labels < 0) or np.any(labels >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k - 1}]")
    return labels


def cross_entropy(logits, labels):
    """Mean of ``-log softmax(logits)[label]``; 1-D logits take a scalar label."""
    logits = as_tensor(logits)
    single = logits.ndim == 1
    if single:
        logits = reshape(logits, (1, -1))
    labels = _check_labels(np.atleast_1d(labels), logits.shape[-1])
    n = labels.shape[0]
    picked = getitem(log_softmax(logits, axis=-1), (np.arange(n), labels))
    return scale(sum(picked), -1.0 / n)


def multi_margin(scores, labels, margin=1.0):
    """Mean over rows of ``(1/K) sum_{k != y} max(0, margin - s_y + s_k)``."""
    scores = as_tensor(scores)
    if scores.ndim == 1:
        scores = reshape(scores, (1, -1))
    k = scores.shape[-1]
    labels = _check_labels(np.atleast_1d(labels), k)
    n = labels.shape[0]
    rows = np.arange(n)
    target = reshape(getitem(scores, (rows, labels)), (n, 1))
    hinge = relu(margin - target + scores)
    other = np.ones((n, k))
    other[rows, labels] = 0.0
    return scale(sum(hinge * other), 1.0 / (n * k))

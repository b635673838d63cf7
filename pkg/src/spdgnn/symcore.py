"""Dense symmetric linear algebra in double precision.

Every function accepts a single ``(n, n)`` matrix or a stack ``(..., n, n)``
and works on the trailing two axes.  Symmetric inputs are symmetrized as
``(A + A^T) / 2`` on entry, so callers may pass results of matrix products
that are symmetric only up to rounding.

The eigensolver is a cyclic Jacobi method run on the whole stack at once.
Pairs are visited in round-robin (tournament) order so that each step
applies ``n // 2`` disjoint rotations with a handful of vectorized numpy
calls; each matrix is frozen as soon as it has converged, which makes the
result for one matrix independent of whatever else shares its batch.
"""
from __future__ import annotations

import functools
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatch, NoConvergence, NonFinite, NotPositiveDefinite, Overflow

MAX_SWEEPS = 30
DEGENERATE_GAP = 1e-6
CLAMP_FLOOR = 1e-8
EXP_LIMIT = 700.0

_OFF_TOL = 1e-14


class EigenDecomposition(NamedTuple):
    """Eigenvectors as columns of ``U`` and eigenvalues sorted descending."""

    U: np.ndarray
    lam: np.ndarray

    def reconstruct(self, f=None):
        lam = self.lam if f is None else f(self.lam)
        return symmetrize(np.matmul(self.U * lam[..., None, :], np.swapaxes(self.U, -1, -2)))


def _check_square(a):
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimensionMismatch(f"expected square matrices, got shape {a.shape}")


def symmetrize(a):
    """Return ``(a + a^T) / 2`` as float64; raises NonFinite on NaN/Inf."""
    a = np.asarray(a, dtype=np.float64)
    _check_square(a)
    if not np.all(np.isfinite(a)):
        raise NonFinite("matrix contains NaN or Inf")
    return 0.5 * (a + np.swapaxes(a, -1, -2))


@functools.lru_cache(maxsize=None)
def _round_robin(n):
    """Disjoint (p, q) pairs per step; together the steps cover every p < q once."""
    m = n + (n % 2)
    others = list(range(1, m))
    steps = []
    for _ in range(m - 1):
        ring = [0] + others
        pairs = sorted(
            (min(ring[i], ring[m - 1 - i]), max(ring[i], ring[m - 1 - i])) for i in range(m // 2)
        )
        pairs = [pq for pq in pairs if pq[1] < n]
        steps.append((np.array([p for p, _ in pairs]), np.array([q for _, q in pairs])))
        others = others[-1:] + others[:-1]
    return tuple(steps)


def _jacobi(a, max_sweeps):
    """Diagonalize a (B, n, n) stack in place; returns (eigenvalues, eigenvectors)."""
    nb, n, _ = a.shape
    v = np.broadcast_to(np.eye(n), a.shape).copy()
    if n == 1:
        return a[:, 0, :].copy(), v
    scale = np.sqrt(np.sum(a * a, axis=(-1, -2)))
    offmask = ~np.eye(n, dtype=bool)
    steps = _round_robin(n)
    for sweep in range(max_sweeps + 1):
        off = np.sqrt(np.sum(np.where(offmask, a * a, 0.0), axis=(-1, -2)))
        active = off > _OFF_TOL * scale
        if not active.any():
            break
        if sweep == max_sweeps:
            raise NoConvergence(
                f"Jacobi did not converge in {max_sweeps} sweeps "
                f"(worst off-diagonal norm {off.max():.3e})"
            )
        for p, q in steps:
            app = a[:, p, p]
            aqq = a[:, q, q]
            apq = a[:, p, q]
            rot = active[:, None] & (apq != 0.0)
            # a negligible apq overflows tau to +-inf, giving t = 0: no rotation, apq zeroed
            with np.errstate(over="ignore"):
                tau = (aqq - app) / (2.0 * np.where(rot, apq, 1.0))
                t = np.where(tau >= 0.0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
            t = np.where(rot, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c

            cc, ss = c[:, None, :], s[:, None, :]
            ap, aq = a[:, :, p], a[:, :, q]
            a[:, :, p] = cc * ap - ss * aq
            a[:, :, q] = ss * ap + cc * aq
            cr, sr = c[:, :, None], s[:, :, None]
            ap, aq = a[:, p, :], a[:, q, :]
            a[:, p, :] = cr * ap - sr * aq
            a[:, q, :] = sr * ap + cr * aq

            a[:, p, p] = app - t * apq
            a[:, q, q] = aqq + t * apq
            kept = np.where(rot, 0.0, apq)
            a[:, p, q] = kept
            a[:, q, p] = kept

            vp, vq = v[:, :, p], v[:, :, q]
            v[:, :, p] = cc * vp - ss * vq
            v[:, :, q] = ss * vp + cc * vq
    return np.diagonal(a, axis1=-2, axis2=-1).copy(), v


def sym_eig(S, max_sweeps=MAX_SWEEPS) -> EigenDecomposition:
    """Eigendecomposition of symmetric matrices by cyclic Jacobi rotations.

    Eigenvalues come back sorted in descending order.  Each eigenvector
    column is signed so that its entry of largest magnitude is positive
    (the first such entry when several tie), which makes ``U`` unique
    whenever the eigenvalues are distinct.

    Raises
    ------
    NonFinite
        If the input contains NaN or Inf.
    NoConvergence
        If the off-diagonal mass does not vanish within ``max_sweeps`` sweeps.
    """
    S = symmetrize(S)
    batch, n = S.shape[:-2], S.shape[-1]
    a = S.reshape((-1, n, n)).copy()
    lam, U = _jacobi(a, max_sweeps)

    order = np.argsort(-lam, axis=-1, kind="stable")
    lam = np.take_along_axis(lam, order, axis=-1)
    U = np.take_along_axis(U, order[:, None, :], axis=-1)
    lead = np.argmax(np.abs(U), axis=-2)
    signs = np.sign(np.take_along_axis(U, lead[:, None, :], axis=-2))
    U = U * signs
    return EigenDecomposition(U.reshape(batch + (n, n)), lam.reshape(batch + (n,)))


def eig_apply(S, f):
    """``U f(Lambda) U^T`` for an elementwise function ``f`` of the eigenvalues."""
    return sym_eig(S).reconstruct(f)


def eigengaps(lam):
    """Differences between consecutive sorted eigenvalues, shape (..., n-1)."""
    return -np.diff(lam, axis=-1)


def jitter_if_degenerate(S, sigma=1e-3, rng=None):
    """Add symmetric Gaussian noise to matrices with (near-)repeated eigenvalues.

    Matrices whose eigenvalue gaps are all at least ``DEGENERATE_GAP`` are
    returned unchanged.  For the others the result is ``S + (N + N^T)/2``
    with ``N`` i.i.d. normal with standard deviation ``sigma``.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    S = symmetrize(S)
    if sigma == 0 or S.shape[-1] < 2:
        return S
    lam = sym_eig(S).lam
    degenerate = np.any(eigengaps(lam) < DEGENERATE_GAP, axis=-1)
    if not np.any(degenerate):
        return S
    rng = np.random.default_rng() if rng is None else rng
    noise = rng.normal(0.0, sigma, size=S.shape)
    noise = 0.5 * (noise + np.swapaxes(noise, -1, -2))
    return S + np.where(degenerate[..., None, None], noise, 0.0)


def clamp_eigs(S, floor=CLAMP_FLOOR):
    """Replace every eigenvalue below ``floor`` by ``floor``."""
    if floor <= 0:
        raise ValueError("floor must be positive")
    return eig_apply(S, lambda lam: np.maximum(lam, floor))


def spd_exp(S):
    """Matrix exponential of a symmetric matrix (always SPD)."""
    dec = sym_eig(S)
    if np.any(dec.lam > EXP_LIMIT):
        raise Overflow(
            f"eigenvalue {dec.lam.max():.1f} exceeds {EXP_LIMIT}; training is diverging, "
            "reduce the learning rate"
        )
    return dec.reconstruct(np.exp)


def _spd_dec(P):
    dec = sym_eig(P)
    if np.any(dec.lam <= 0):
        raise NotPositiveDefinite(f"smallest eigenvalue {dec.lam.min():.3e} is not positive")
    return dec


def spd_log(P):
    """Matrix logarithm of an SPD matrix."""
    return _spd_dec(P).reconstruct(np.log)


def spd_sqrt(P):
    return _spd_dec(P).reconstruct(np.sqrt)


def spd_inv_sqrt(P):
    return _spd_dec(P).reconstruct(lambda lam: 1.0 / np.sqrt(lam))


def spd_inv(P):
    return _spd_dec(P).reconstruct(lambda lam: 1.0 / lam)


def min_eigenvalue(S):
    return sym_eig(S).lam[..., -1]


def spd_distance(P, Q):
    """Affine-invariant geodesic distance ``||log(P^-1/2 Q P^-1/2)||_F``."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape:
        raise DimensionMismatch(f"shapes differ: {P.shape} vs {Q.shape}")
    W = spd_inv_sqrt(P)
    lam = _spd_dec(W @ Q @ W).lam
    return np.sqrt(np.sum(np.log(lam) ** 2, axis=-1))

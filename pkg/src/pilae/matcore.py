"""Dense matrix kernels: thin SVD, numeric rank, pseudoinverses and ridge solves.

All matrices are float64 numpy arrays. Samples are stored as columns, so a
data matrix is ``d x N``.

The SVD takes one of two routes. Strongly rectangular matrices go through a
symmetric eigendecomposition of the small Gram matrix followed by a one-sided
pass that recovers the singular values from column norms (this keeps tiny
singular values accurate to ``eps * sigma_max``). Everything else is
QR-preconditioned one-sided Jacobi with a round-robin pair ordering, which
rotates ``K/2`` disjoint column pairs per vectorised step.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .errors import NumericalError

EPS = np.finfo(np.float64).eps

# Gram route when the short side exceeds _GRAM_MIN_DIM and either the long
# side is at least _GRAM_RATIO times longer or the short side is too big for
# pure-numpy Jacobi (_JACOBI_MAX_DIM).
_GRAM_RATIO = 4
_GRAM_MIN_DIM = 32
_JACOBI_MAX_DIM = 256
# The Gram route squares the condition number: singular values below
# sqrt(eps) * sigma_0 are not resolved and are flushed to zero.
_GRAM_FLOOR = float(np.sqrt(EPS))
_MAX_SWEEPS = 60
# pinv rows are produced in fixed blocks so any row prefix is bit-identical
# to the corresponding rows of the full product.
_ROW_BLOCK = 256


@dataclass(frozen=True)
class SvdFactors:
    """Thin factorisation ``a = u @ diag(sigma) @ v.T`` with ``k = min(m, n)``."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    @property
    def shape(self):
        return self.u.shape[0], self.v.shape[0]

    def rank(self) -> int:
        m, n = self.shape
        return numeric_rank(self.sigma, m, n)

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


@lru_cache(maxsize=64)
def _round_robin_perm(k: int) -> np.ndarray:
    """Column permutation advancing a circle-method tournament by one round.

    Columns are kept so that round pairs are ``(i, h + i)`` with ``h = k/2``;
    applying the permutation ``k - 1`` times visits every pair once.
    """
    h = k // 2
    players = list(range(k))

    def layout(pl):
        return pl[:h] + pl[h:][::-1]

    cur = layout(players)
    nxt = layout([players[0], players[-1]] + players[1:-1])
    pos = {c: i for i, c in enumerate(cur)}
    return np.array([pos[c] for c in nxt])


def _jacobi_orthogonalize(b: np.ndarray):
    """Rotate the columns of ``b`` until mutually orthogonal.

    Returns the rotated matrix and the accumulated rotation ``v`` with
    ``b_in @ v = b_out``. Columns come back in an arbitrary but
    deterministic order.
    """
    k = b.shape[1]
    if k == 1:
        return b, np.eye(1)
    pad = k % 2
    if pad:
        b = np.hstack([b, np.zeros((b.shape[0], 1))])
    kk = b.shape[1]
    h = kk // 2
    v = np.eye(kk)
    tol = kk * EPS
    perm = _round_robin_perm(kk)
    for _ in range(_MAX_SWEEPS):
        rotated = False
        for _ in range(kk - 1):
            bp, bq = b[:, :h], b[:, h:]
            alpha = np.einsum("ij,ij->j", bp, bp)
            beta = np.einsum("ij,ij->j", bq, bq)
            gamma = np.einsum("ij,ij->j", bp, bq)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if active.any():
                rotated = True
                g = np.where(active, gamma, 1.0)
                zeta = (beta - alpha) / (2.0 * g)
                t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for mat in (b, v):
                    mp, mq = mat[:, :h], mat[:, h:]
                    new_p = c * mp - s * mq
                    mq *= c
                    mq += s * mp
                    mp[...] = new_p
            b = b[:, perm]
            v = v[:, perm]
        if not rotated:
            break
    else:
        raise NumericalError(f"one-sided Jacobi did not converge in {_MAX_SWEEPS} sweeps")
    if pad:
        # the zero padding column has gamma = 0 with everything, so it never
        # rotates and its v column stays the unit vector e_k
        keep = np.ones(kk, dtype=bool)
        keep[int(np.argmax(v[k, :]))] = False
        b = b[:, keep]
        v = v[:k][:, keep]
    return b, v


def _complete_basis(u: np.ndarray, count: int) -> np.ndarray:
    """Return ``count`` orthonormal columns orthogonal to the columns of ``u``.

    Candidates are the standard basis vectors of the rows least covered by
    ``u``, projected out of ``u`` and orthonormalised together. If that block
    is ill-conditioned, candidates are instead picked one at a time by largest
    residual. Deterministic either way.
    """
    m = u.shape[0]
    if count == 0:
        return np.zeros((m, 0))
    row_sq = np.einsum("ij,ij->i", u, u) if u.shape[1] else np.zeros(m)
    cand = np.argsort(row_sq, kind="stable")[:count]
    w = np.zeros((m, count))
    w[cand, np.arange(count)] = 1.0
    for _ in range(2):
        if u.shape[1]:
            w -= u @ (u.T @ w)
    q, r = np.linalg.qr(w)
    if np.min(np.abs(np.diag(r))) > 1e-3:
        return q
    return _complete_basis_greedy(u, count, row_sq)


def _complete_basis_greedy(u: np.ndarray, count: int, row_sq: np.ndarray) -> np.ndarray:
    m, k = u.shape
    basis = np.empty((m, k + count))
    basis[:, :k] = u
    for j in range(count):
        i = int(np.argmax(1.0 - row_sq))
        w = np.zeros(m)
        w[i] = 1.0
        cur = basis[:, :k + j]
        for _ in range(2):
            w -= cur @ (cur.T @ w)
        nrm = np.linalg.norm(w)
        if nrm <= EPS:
            raise NumericalError("could not complete orthonormal basis")
        w /= nrm
        basis[:, k + j] = w
        row_sq = row_sq + w * w
    return basis[:, k:]


def _tall_svd(b: np.ndarray):
    """Thin SVD of a tall ``M x K`` matrix (``M >= K``)."""
    m, k = b.shape
    gram = k > _GRAM_MIN_DIM and (m >= _GRAM_RATIO * k or k > _JACOBI_MAX_DIM)
    if gram:
        _, q = np.linalg.eigh(b.T @ b)
        c = b @ q
        v = q
    elif m > k:
        qm, r = np.linalg.qr(b)
        r, v = _jacobi_orthogonalize(r)
        c = qm @ r
    else:
        c, v = _jacobi_orthogonalize(b.copy())
    sigma = np.sqrt(np.einsum("ij,ij->j", c, c))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    c = c[:, order]
    v = np.ascontiguousarray(v[:, order])
    if gram:
        sigma[sigma < _GRAM_FLOOR * sigma[0]] = 0.0
    tol = numeric_tol(sigma, m, k)
    good = sigma > tol if sigma[0] > 0 else np.zeros(k, dtype=bool)
    u = np.empty((m, k))
    ng = int(good.sum())
    # sigma is sorted, so the good columns form a prefix
    u[:, :ng] = c[:, :ng] / sigma[:ng]
    if ng < k:
        u[:, ng:] = _complete_basis(u[:, :ng], k - ng)
    return u, sigma, v


def svd(a) -> SvdFactors:
    """Thin SVD with descending singular values and a fixed sign convention.

    Each column of ``u`` has its largest-magnitude entry non-negative.
    Raises :class:`NumericalError` if the Jacobi iteration does not converge.
    """
    a = as_matrix(a)
    m, n = a.shape
    if m >= n:
        u, sigma, v = _tall_svd(a)
    else:
        v, sigma, u = _tall_svd(a.T)
    idx = np.argmax(np.abs(u), axis=0)
    flip = u[idx, np.arange(u.shape[1])] < 0
    u[:, flip] *= -1.0
    v[:, flip] *= -1.0
    return SvdFactors(u=u, sigma=sigma, v=v)


def numeric_tol(sigma, m: int, n: int) -> float:
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.size == 0:
        return 0.0
    return max(m, n) * float(sigma[0]) * EPS


def numeric_rank(sigma, m: int, n: int) -> int:
    """Count singular values above ``max(m, n) * sigma_0 * eps``."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.size == 0 or sigma[0] <= 0:
        return 0
    return int(np.count_nonzero(sigma > numeric_tol(sigma, m, n)))


def _pinv_rows(f: SvdFactors, r: int, stop: int) -> np.ndarray:
    n = f.v.shape[0]
    m = f.u.shape[0]
    out = np.zeros((stop, m))
    if r == 0:
        return out
    ut = f.u[:, :r].T
    inv = 1.0 / f.sigma[:r]
    for start in range(0, stop, _ROW_BLOCK):
        end = min(start + _ROW_BLOCK, n)
        blk = (f.v[start:end, :r] * inv) @ ut
        keep = min(end, stop) - start
        out[start:start + keep] = blk[:keep]
    return out


def pinv(a, factors: SvdFactors | None = None) -> np.ndarray:
    """Moore-Penrose pseudoinverse ``V Sigma^+ U^T``; shape ``cols x rows``."""
    a = as_matrix(a)
    f = factors if factors is not None else svd(a)
    m, n = a.shape
    return _pinv_rows(f, numeric_rank(f.sigma, m, n), n)


def truncated_pinv(a, p: int, factors: SvdFactors | None = None) -> np.ndarray:
    """First ``p`` rows of ``pinv(a)`` (a ``p x rows(a)`` matrix).

    Bit-identical to ``pinv(a)[:p]``.
    """
    a = as_matrix(a)
    m, n = a.shape
    if not isinstance(p, (int, np.integer)) or not 1 <= p <= n:
        raise ValueError(f"p must be an integer in [1, {n}], got {p!r}")
    f = factors if factors is not None else svd(a)
    return _pinv_rows(f, numeric_rank(f.sigma, m, n), int(p))


def _ridge_factor(h: np.ndarray, lambda1: float):
    if not lambda1 > 0:
        raise ValueError(f"lambda1 must be > 0, got {lambda1!r}")
    gram = h @ h.T
    gram[np.diag_indices_from(gram)] += lambda1
    try:
        return scipy.linalg.cho_factor(gram, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"Cholesky of H H^T + lambda I failed: {exc}") from exc


def ridge_pinv(h, lambda1: float) -> np.ndarray:
    """``H^T (H H^T + lambda1 I)^{-1}`` via Cholesky; shape ``N x p``."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2:
        raise ValueError("h must be 2-D")
    c = _ridge_factor(h, lambda1)
    return scipy.linalg.cho_solve(c, h).T


def ridge_apply(target, h, lambda1: float) -> np.ndarray:
    """``target @ ridge_pinv(h, lambda1)`` without forming the ``N x p`` matrix."""
    h = np.asarray(h, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if target.shape[1] != h.shape[1]:
        raise ValueError(f"target has {target.shape[1]} columns, h has {h.shape[1]}")
    c = _ridge_factor(h, lambda1)
    return scipy.linalg.cho_solve(c, h @ target.T).T


def identity_distance(h, lambda1: float, sigma=None) -> float:
    """``||ridge_pinv(h) h - I_N||_F^2 / N``.

    Evaluated spectrally: the ``N x N`` projector has eigenvalues
    ``s^2 / (s^2 + lambda1)`` on the singular values of ``h`` and zero
    elsewhere. Pass ``sigma`` to reuse an existing SVD.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.size == 0:
        raise ValueError("h must be a non-empty 2-D matrix")
    p, n = h.shape
    k = min(p, n)
    if sigma is None:
        small = h @ h.T if p <= n else h.T @ h
        s2 = np.clip(np.linalg.eigvalsh(small)[::-1][:k], 0.0, None)
    else:
        s2 = np.asarray(sigma, dtype=np.float64)[:k] ** 2
    resid = lambda1 / (s2 + lambda1) if lambda1 > 0 else (s2 == 0).astype(float)
    return float((np.sum(resid * resid) + (n - k)) / n)

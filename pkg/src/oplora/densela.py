"""
Dense linear algebra on float64 matrices.

Matrices are plain 2-D ``numpy.ndarray`` objects (row-major, float64).
``svd_exact`` is a one-sided (Hestenes) Jacobi SVD run on the smaller Gram
side after a column-pivoted QR preconditioning step; ``svd_randomized`` is a Gaussian
range finder with power iterations whose small projected problem is
handed to ``svd_exact``.
"""
import os
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DataError, DimensionError, ParameterError, RankError, SizeError
from .rng import Xoshiro256

DEFAULT_SIZE_CAP = 4096 * 4096
_EPS = np.finfo(np.float64).eps


def as_matrix(m, name="matrix"):
    """Validate ``m`` as a finite 2-D float64 array and return a C-contiguous copy-free view."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionError(f"{name} must be a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DataError(f"{name} contains NaN or Inf")
    return np.ascontiguousarray(a)


def size_cap():
    """Element cap for ``svd_exact``; ``OPLORA_SIZE_CAP`` overrides the default."""
    env = os.environ.get("OPLORA_SIZE_CAP")
    if env:
        return int(env)
    return DEFAULT_SIZE_CAP


@dataclass(frozen=True)
class SvdFactorization:
    """Thin SVD ``m ~= u @ diag(sigma) @ v.T`` with a split index ``k``.

    Columns ``[:k]`` are the dominant block; columns after ``k`` are the
    remaining triples (empty for truncated factorizations).
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray
    k: int = 0

    @property
    def p(self):
        return self.sigma.shape[0]

    @property
    def u_k(self):
        return self.u[:, : self.k]

    @property
    def v_k(self):
        return self.v[:, : self.k]

    @property
    def sigma_k(self):
        return self.sigma[: self.k]

    @property
    def u_perp(self):
        return self.u[:, self.k :]

    @property
    def v_perp(self):
        return self.v[:, self.k :]

    @property
    def sigma_perp(self):
        return self.sigma[self.k :]

    def with_k(self, k):
        if not 0 <= k <= self.p:
            raise RankError(f"split index {k} outside [0, {self.p}]")
        return SvdFactorization(self.u, self.sigma, self.v, int(k))

    def reconstruct(self):
        return (self.u * self.sigma) @ self.v.T


def _sign_normalize(u, v):
    # largest-magnitude entry of each left vector made nonnegative
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, v * signs


def qr_decompose(m):
    """Thin QR with ``diag(R) >= 0``.

    Backed by LAPACK Householder QR (``numpy.linalg.qr``); column signs are
    flipped so that R has a nonnegative diagonal, which makes the factors
    unique for full-rank input.
    """
    a = as_matrix(m)
    rows, cols = a.shape
    if rows < cols:
        raise DimensionError(f"qr_decompose needs rows >= cols, got {rows}x{cols}")
    q, r = np.linalg.qr(a, mode="reduced")
    s = np.sign(np.diag(r))
    s[s == 0] = 1.0
    return q * s, r * s[:, None]


def _round_robin(n):
    """Disjoint (p, q) index pairs per round covering every pair once per sweep."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                ps.append(min(a, b))
                qs.append(max(a, b))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _complete_basis(u, count):
    """Append ``count`` orthonormal columns orthogonal to ``u`` (deterministic).

    The new columns come from a column-pivoted QR of ``I - u u^T``, so the
    best-conditioned complement directions are taken first.
    """
    rows = u.shape[0]
    resid = np.eye(rows) - u @ u.T
    q, _, _ = sla.qr(resid, mode="economic", pivoting=True)
    extra = q[:, :count]
    # one reorthogonalization pass against u
    extra = extra - u @ (u.T @ extra)
    extra, _ = np.linalg.qr(extra)
    return np.column_stack([u, extra])


def _jacobi_tall(a, tol, max_sweeps):
    """SVD of a tall matrix (rows >= cols) as ``(u, sigma, v)``, sigma descending.

    Column-pivoted QR ``a[:, piv] = Q R`` first, then one-sided Jacobi on the
    rows of R (the columns of R^T), which converges in far fewer sweeps than
    Jacobi on ``a`` directly. Left vectors come out of the accumulated
    rotations, right vectors from the normalized orthogonalized rows.
    """
    rows, n = a.shape
    q, r, piv = sla.qr(a, mode="economic", pivoting=True)
    x = np.ascontiguousarray(r)
    rot = np.eye(n)
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        rotated = False
        for ps, qs in rounds:
            xp, xq = x[ps], x[qs]
            alpha = np.einsum("ij,ij->i", xp, xp)
            beta = np.einsum("ij,ij->i", xq, xq)
            gamma = np.einsum("ij,ij->i", xp, xq)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not active.any():
                continue
            rotated = True
            if not active.all():
                ps, qs = ps[active], qs[active]
                xp, xq = xp[active], xq[active]
                alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
            s = c * t[:, None]
            x[ps] = c * xp - s * xq
            x[qs] = s * xp + c * xq
            rp, rq = rot[ps], rot[qs]
            rot[ps] = c * rp - s * rq
            rot[qs] = s * rp + c * rq
        if not rotated:
            break

    sigma = np.linalg.norm(x, axis=1)
    order = np.argsort(-sigma, kind="stable")
    sigma, x, rot = sigma[order], x[order], rot[order]
    cutoff = sigma[0] * n * _EPS if sigma[0] > 0 else 0.0
    ngood = int(np.count_nonzero(sigma > cutoff))
    w = (x[:ngood] / sigma[:ngood, None]).T
    if ngood < n:
        sigma[ngood:] = 0.0
        w = _complete_basis(w, n - ngood)
    v = np.empty_like(w)
    v[piv] = w
    return q @ rot.T, sigma, v


def svd_exact(m, tol=1e-15, max_sweeps=60, cap=None):
    """Full thin SVD via one-sided Jacobi.

    Returns ``p = min(rows, cols)`` triples, singular values nonincreasing,
    signs normalized so each left vector's largest-magnitude entry is
    nonnegative. Raises :class:`SizeError` above the element cap.
    """
    a = as_matrix(m)
    rows, cols = a.shape
    limit = size_cap() if cap is None else cap
    if rows * cols > limit:
        raise SizeError(
            f"{rows}x{cols} exceeds exact-SVD cap of {limit} elements; use svd_randomized"
        )
    if rows >= cols:
        u, sigma, v = _jacobi_tall(a, tol, max_sweeps)
    else:
        v, sigma, u = _jacobi_tall(a.T, tol, max_sweeps)
    u, v = _sign_normalize(u, v)
    return SvdFactorization(u, sigma, v, 0)


def svd_randomized(m, k, oversample=8, power_iters=2, seed=0):
    """Rank-``k`` SVD from a Gaussian range finder.

    The sketch has ``k + oversample`` columns (capped at min dims); each power
    iteration re-orthonormalizes through QR. Only the leading ``k`` triples
    are returned, with ``k`` also set as the split index.
    """
    a = as_matrix(m)
    rows, cols = a.shape
    if not 1 <= k <= min(rows, cols):
        raise RankError(f"target rank {k} outside [1, {min(rows, cols)}]")
    if oversample < 0 or power_iters < 0:
        raise ParameterError("oversample and power_iters must be nonnegative")
    ell = min(k + oversample, rows, cols)
    omega = Xoshiro256(seed).normal((cols, ell))
    q, _ = np.linalg.qr(a @ omega, mode="reduced")
    for _ in range(power_iters):
        z, _ = np.linalg.qr(a.T @ q, mode="reduced")
        q, _ = np.linalg.qr(a @ z, mode="reduced")
    small = svd_exact(q.T @ a)
    u = q @ small.u[:, :k]
    # re-orthogonalize; R is ~identity so the vectors barely move
    u, _ = qr_decompose(u)
    v = small.v[:, :k]
    u, v = _sign_normalize(u, v)
    return SvdFactorization(u, small.sigma[:k].copy(), v, k)


def truncate(f, k):
    """Keep the leading ``k`` triples of a factorization."""
    if not 0 <= k <= f.p:
        raise RankError(f"cannot truncate {f.p} triples to {k}")
    return SvdFactorization(f.u[:, :k], f.sigma[:k], f.v[:, :k], k)


def gaussian(shape, seed):
    """Seeded standard normal matrix from the portable generator."""
    return Xoshiro256(seed).normal(shape)


def principal_angles(a, b):
    """Principal angles (radians) between the column spaces of orthonormal ``a`` and ``b``."""
    # sines of the angles are the singular values of the residual (I - a a^T) b
    resid = b - a @ (a.T @ b)
    s = np.linalg.svd(resid, compute_uv=False)
    return np.sort(np.arcsin(np.clip(s, 0.0, 1.0)))

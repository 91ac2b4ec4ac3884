"""
Factored orthogonal projectors onto the complement of a weight's dominant
singular subspaces.

Only the bases ``u_k`` (d_out x k) and ``v_k`` (d_in x k) are stored; the
projectors ``I - u_k u_k^T`` and ``I - v_k v_k^T`` are applied as two thin
products and never formed.

When ``sigma_k == sigma_{k+1}`` the dominant subspace is not unique and the
preserved directions are whichever basis the SVD returned.
"""
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .densela import as_matrix, svd_exact, svd_randomized, truncate
from .errors import DimensionError, FormatError, ParameterError, RankError
from .io import read_matrix, write_matrix

MODES = ("exact", "randomized")


def fingerprint(w0):
    """64-bit hex digest of a matrix's shape and float64 bytes."""
    a = np.ascontiguousarray(np.asarray(w0, dtype="<f8"))
    h = hashlib.blake2b(digest_size=8)
    h.update(np.asarray(a.shape, dtype="<u8").tobytes())
    h.update(a.tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class ProjectorPair:
    u_k: np.ndarray
    v_k: np.ndarray
    k: int
    source_fingerprint: str
    mode: str = "exact"
    oversample: int = 8
    power_iters: int = 2
    seed: int = 0

    @property
    def d_out(self):
        return self.u_k.shape[0]

    @property
    def d_in(self):
        return self.v_k.shape[0]

    def matches(self, w0):
        return fingerprint(w0) == self.source_fingerprint


def top_k_factors(w0, k, mode="exact", oversample=8, power_iters=2, seed=0):
    """Leading ``k`` singular triples of ``w0`` by the requested route."""
    if mode == "exact":
        return truncate(svd_exact(w0), k)
    if mode == "randomized":
        return svd_randomized(w0, k, oversample=oversample, power_iters=power_iters, seed=seed)
    raise ParameterError(f"unknown SVD mode {mode!r}; expected one of {MODES}")


def build_projectors(w0, k, mode="exact", oversample=8, power_iters=2, seed=0):
    """Projector pair from the top-``k`` singular vectors of ``w0``."""
    w0 = as_matrix(w0, "w0")
    if k <= 0:
        raise ParameterError(f"projection rank must be positive, got {k}")
    if k >= min(w0.shape):
        raise RankError(f"projection rank {k} must be < min{w0.shape}")
    f = top_k_factors(w0, k, mode, oversample, power_iters, seed)
    return ProjectorPair(
        u_k=f.u_k.copy(),
        v_k=f.v_k.copy(),
        k=int(k),
        source_fingerprint=fingerprint(w0),
        mode=mode,
        oversample=int(oversample),
        power_iters=int(power_iters),
        seed=int(seed),
    )


def _check(m, n, side):
    # 1-D inputs are treated as a single column (rows) or row (cols)
    m = np.asarray(m, dtype=np.float64)
    if m.ndim not in (1, 2):
        raise DimensionError(f"expected a vector or matrix, got shape {m.shape}")
    dim = m.shape[0] if side == "rows" or m.ndim == 1 else m.shape[1]
    if dim != n:
        raise DimensionError(f"expected {n} {side}, got shape {m.shape}")
    return m


def apply_left(p, m):
    """``(I - u_k u_k^T) m``."""
    m = _check(m, p.d_out, "rows")
    return m - p.u_k @ (p.u_k.T @ m)


def apply_right(p, m):
    """``m (I - v_k v_k^T)``."""
    m = _check(m, p.d_in, "cols")
    return m - (m @ p.v_k) @ p.v_k.T


def apply_input(p, x):
    """``(I - v_k v_k^T) x`` for column inputs ``x`` of shape (d_in, batch)."""
    x = _check(x, p.d_in, "rows")
    return x - p.v_k @ (p.v_k.T @ x)


def project_onto_topk(p, m):
    """``u_k u_k^T m``, the component of ``m`` inside the dominant column space."""
    m = _check(m, p.d_out, "rows")
    return p.u_k @ (p.u_k.T @ m)


def save_projectors(p, directory, prefix="proj"):
    os.makedirs(directory, exist_ok=True)
    write_matrix(os.path.join(directory, f"{prefix}_u.oplr"), p.u_k)
    write_matrix(os.path.join(directory, f"{prefix}_v.oplr"), p.v_k)
    meta = {
        "k": p.k,
        "mode": p.mode,
        "oversample": p.oversample,
        "power_iters": p.power_iters,
        "seed": p.seed,
        "fingerprint": p.source_fingerprint,
    }
    with open(os.path.join(directory, f"{prefix}.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_projectors(directory, prefix="proj"):
    try:
        with open(os.path.join(directory, f"{prefix}.json")) as fh:
            meta = json.load(fh)
        u_k = read_matrix(os.path.join(directory, f"{prefix}_u.oplr"))
        v_k = read_matrix(os.path.join(directory, f"{prefix}_v.oplr"))
        p = ProjectorPair(
            u_k=u_k,
            v_k=v_k,
            k=int(meta["k"]),
            source_fingerprint=str(meta["fingerprint"]),
            mode=meta.get("mode", "exact"),
            oversample=int(meta.get("oversample", 8)),
            power_iters=int(meta.get("power_iters", 2)),
            seed=int(meta.get("seed", 0)),
        )
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad projector sidecar in {directory}: {exc}") from exc
    if u_k.shape[1] != p.k or v_k.shape[1] != p.k:
        raise FormatError("projector bases disagree with recorded k")
    return p

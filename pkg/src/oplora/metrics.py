"""
Subspace-interference metrics for an update against a frozen weight.

``rho_k`` is the share of an update's squared Frobenius energy that falls in
the span of the weight's top-k left singular vectors,

    rho_k = ||U_k^T delta||_F^2 / ||delta||_F^2       (in [0, 1])

``rho_k_bilateral`` additionally restricts to the top-k right vectors,
``||U_k^T delta V_k||_F^2 / ||delta||_F^2``.
"""
import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .densela import as_matrix, svd_exact
from .errors import DimensionError, RankError, UndefinedMetricError
from .projection import top_k_factors

DEFAULT_K_VALUES = (8, 16, 32, 64, 128)
CSV_COLUMNS = ("layer", "k", "rho", "update_norm", "preservation_residual", "degenerate_flag")
DEGENERACY_GAP = 1e-8


@dataclass
class AlignmentReport:
    layer_name: str
    k_values: list
    rho: list
    update_norm: float
    preservation_residual: float
    degenerate: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def rows(self):
        for i, (k, r) in enumerate(zip(self.k_values, self.rho)):
            flag = bool(self.degenerate[i]) if self.degenerate else False
            yield {
                "layer": self.layer_name,
                "k": k,
                "rho": repr(float(r)),
                "update_norm": repr(float(self.update_norm)),
                "preservation_residual": repr(float(self.preservation_residual)),
                "degenerate_flag": str(flag).lower(),
            }

    def to_csv(self, header=True):
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        if header:
            writer.writeheader()
        writer.writerows(self.rows())
        return buf.getvalue()


def _check_pair(w0, delta):
    w0 = as_matrix(w0, "w0")
    delta = as_matrix(delta, "delta")
    if w0.shape != delta.shape:
        raise DimensionError(f"shape mismatch: w0 {w0.shape} vs delta {delta.shape}")
    return w0, delta


def _check_k(k, shape):
    if not 1 <= k < min(shape):
        raise RankError(f"k={k} must satisfy 1 <= k < {min(shape)}")


def _energy(delta):
    e = float(np.sum(delta * delta))
    if e == 0.0:
        raise UndefinedMetricError("update has zero Frobenius norm; rho_k is 0/0")
    return e


def is_degenerate(sigma, k, gap=DEGENERACY_GAP):
    """True when sigma_k and sigma_{k+1} are tied to within ``gap * sigma_1``."""
    if k >= len(sigma):
        return False
    return bool(sigma[k - 1] - sigma[k] < gap * sigma[0])


def rho_k(w0, delta, k, mode="exact", oversample=8, power_iters=2, seed=0):
    w0, delta = _check_pair(w0, delta)
    _check_k(k, w0.shape)
    energy = _energy(delta)
    f = top_k_factors(w0, k, mode, oversample, power_iters, seed)
    c = f.u_k.T @ delta
    return float(np.sum(c * c)) / energy


def rho_k_bilateral(w0, delta, k, mode="exact", oversample=8, power_iters=2, seed=0):
    w0, delta = _check_pair(w0, delta)
    _check_k(k, w0.shape)
    energy = _energy(delta)
    f = top_k_factors(w0, k, mode, oversample, power_iters, seed)
    c = f.u_k.T @ delta @ f.v_k
    return float(np.sum(c * c)) / energy


def clip_k_values(k_values, shape):
    return [int(k) for k in k_values if 1 <= k < min(shape)]


def rho_sweep(w0, delta, k_values=DEFAULT_K_VALUES, layer_name="layer", svd=None, preservation_k=None):
    """rho_k for every k in ``k_values`` from a single exact SVD of ``w0``.

    ``k_values`` are clipped to ``1 <= k < min(w0.shape)``. The preservation
    residual is evaluated on ``w0 + delta`` at ``preservation_k`` (default:
    the largest swept k). ``svd`` may pass in a precomputed ``svd_exact(w0)``.
    """
    w0, delta = _check_pair(w0, delta)
    ks = clip_k_values(k_values, w0.shape)
    if not ks:
        raise RankError(f"no k in {list(k_values)} fits a {w0.shape} matrix")
    energy = _energy(delta)
    f = svd_exact(w0) if svd is None else svd
    c = f.u.T @ delta
    row_energy = np.sum(c * c, axis=1)
    cum = np.cumsum(row_energy)
    rho = [min(max(float(cum[k - 1]) / energy, 0.0), 1.0) for k in ks]
    pk = max(ks) if preservation_k is None else preservation_k
    return AlignmentReport(
        layer_name=layer_name,
        k_values=ks,
        rho=rho,
        update_norm=float(np.sqrt(energy)),
        preservation_residual=preservation_check(w0, w0 + delta, pk, svd=f),
        degenerate=[is_degenerate(f.sigma, k) for k in ks],
    )


def preservation_check(w0, w_prime, k, svd=None):
    """How far ``w_prime`` moves the top-k singular triples of ``w0``, relative to sigma_1.

    Returns the larger of ``max_i ||w' v_i - sigma_i u_i||_2 / sigma_1`` and
    ``||U_k^T w' V_k - Sigma_k||_F / sigma_1``.
    """
    w0, w_prime = _check_pair(w0, w_prime)
    _check_k(k, w0.shape)
    f = svd_exact(w0) if svd is None else svd
    u, s, v = f.u[:, :k], f.sigma[:k], f.v[:, :k]
    s1 = float(f.sigma[0])
    if s1 == 0.0:
        raise UndefinedMetricError("w0 is the zero matrix")
    col = np.linalg.norm(w_prime @ v - u * s, axis=0).max()
    block = np.linalg.norm(u.T @ w_prime @ v - np.diag(s))
    return float(max(col, block) / s1)


def mean_rho(reports):
    """Unweighted per-k mean over layer reports sharing the same k grid."""
    if not reports:
        return []
    ks = reports[0].k_values
    for r in reports[1:]:
        if r.k_values != ks:
            raise DimensionError("reports use different k grids")
    return [float(np.mean([r.rho[i] for r in reports])) for i in range(len(ks))]

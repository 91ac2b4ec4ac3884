"""
Orthogonal projectors and spectral preservation
===============================================

Build the factored complement projectors for a frozen weight and check that
an update sandwiched between them leaves the top-k singular triples alone.
"""
import numpy as np

from oplora.densela import svd_exact
from oplora.metrics import preservation_check
from oplora.projection import apply_left, apply_right, build_projectors

rng = np.random.default_rng(3)
w0 = rng.standard_normal((64, 48))
k = 8
p = build_projectors(w0, k)

###############################################################################
# Only u_k and v_k are stored. Applying I - U_k U_k^T costs two thin products.
m = rng.standard_normal((64, 48))
dense = (np.eye(64) - p.u_k @ p.u_k.T) @ m
print("factored vs dense:", np.linalg.norm(apply_left(p, m) - dense))

###############################################################################
# A random update, projected on both sides, is added to w0. The leading k
# singular triples survive untouched.
delta = apply_right(p, apply_left(p, rng.standard_normal((64, 48))))
w1 = w0 + delta
print("preservation residual:", preservation_check(w0, w1, k))

f0 = svd_exact(w0).with_k(k)
print("sigma_1..k before:", np.round(f0.sigma[:k], 6))
print("U_k^T W' V_k diagonal:", np.round(np.diag(f0.u_k.T @ w1 @ f0.v_k), 6))

###############################################################################
# The unprojected update moves them.
print("unprojected residual:", preservation_check(w0, w0 + rng.standard_normal((64, 48)), k))

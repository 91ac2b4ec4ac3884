"""
Exact and randomized SVD
========================

Factor a matrix with a known spectrum, compare the exact one-sided Jacobi
factorization against the randomized range finder, and look at how close
the two top-k subspaces are.
"""
import numpy as np

from oplora.densela import principal_angles, svd_exact, svd_randomized

rng = np.random.default_rng(0)
q1, _ = np.linalg.qr(rng.standard_normal((120, 80)))
q2, _ = np.linalg.qr(rng.standard_normal((80, 80)))
sigma = 0.9 ** np.arange(80)
m = (q1 * sigma) @ q2.T

###############################################################################
# The exact route recovers the spectrum to roughly machine precision.
f = svd_exact(m)
print("max sigma error:", np.max(np.abs(f.sigma - sigma)))
print("reconstruction error:", np.linalg.norm(f.reconstruct() - m))

###############################################################################
# The randomized route only sees a sketch. With two power iterations the
# top-16 subspace is still very close.
g = svd_randomized(m, 16, oversample=8, power_iters=2, seed=1)
angles = principal_angles(f.u[:, :16], g.u)
print("largest principal angle (rad):", angles.max())
print("top-16 sigma, randomized vs exact:", np.max(np.abs(g.sigma - f.sigma[:16])))

"""
Training adapters and measuring subspace interference
=====================================================

Fit a low-rank update to a shifted linear map with each adapter method, then
sweep rho_k, the share of update energy landing in the top-k left singular
subspace of the frozen weight.
"""
import numpy as np

from oplora.adapter import AdapterConfig, effective_update, forward, grad, init_adapter
from oplora.metrics import rho_sweep
from oplora.optim import OptimizerConfig, optimizer_step

rng = np.random.default_rng(5)
w0 = rng.standard_normal((40, 32))
target = w0 + 0.3 * rng.standard_normal((40, 32))
x = rng.standard_normal((32, 128))
y = target @ x
opt = OptimizerConfig(kind="adam", lr=1e-2, steps=300)

###############################################################################
# Each method trains only A and B. Loss is the mean squared error; a rank-4
# update cannot absorb a full-rank shift, so losses stay well above zero.
for method in ("lora", "pissa", "milora", "oplora"):
    cfg = AdapterConfig(r=4, alpha=8.0, k=8 if method == "oplora" else 0, method=method, seed=1)
    st = init_adapter(w0, cfg)
    w_start = st.w_frozen + effective_update(st)
    opt_state = None
    for _ in range(opt.steps):
        err = forward(st, x) - y
        g_a, g_b = grad(st, x, err / x.shape[1])
        (st.a, st.b), opt_state = optimizer_step([st.a, st.b], [g_a, g_b], opt_state, opt)
    loss = 0.5 * np.mean(np.sum((forward(st, x) - y) ** 2, axis=0))
    delta = st.w_frozen + effective_update(st) - w0
    rep = rho_sweep(w0, delta, [4, 8, 16])
    print(f"{method:7s} loss {loss:8.3f}  rho_4,8,16 =", ", ".join(f"{r:.2e}" for r in rep.rho))

###############################################################################
# oplora's rho stays at round-off for every k up to its projection rank.
# pissa starts inside the top subspace, so its updates concentrate there.

"""Exit criteria. Each test prints one PASS/FAIL line (also repeated in the terminal summary)."""
import pathlib
import time
from dataclasses import replace

import numpy as np
import pytest

from oplora.adapter import AdapterConfig, effective_update, forward, grad, init_adapter, merge
from oplora.densela import svd_exact
from oplora.experiment import (
    adapt_and_measure,
    default_config,
    pretrain,
    results_csv,
    run_experiment,
    summarize,
)
from oplora.metrics import rho_sweep
from oplora.projection import apply_left, apply_right, build_projectors
from oplora.rng import derive_seed

from conftest import fd_grads, matrix_with_spectrum, record, rel_err

README = pathlib.Path(__file__).resolve().parents[1] / "README.md"


def random_instances(n=100, seed=2024):
    """Exact-mode OPLoRA states up to 128x96 with k <= 16 and A, B ~ U[-1, 1]."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        if i == 0:
            d_out, d_in, k = 128, 96, 16
        else:
            d_out = int(rng.integers(8, 129))
            d_in = int(rng.integers(8, 97))
            k = int(rng.integers(1, min(16, min(d_out, d_in) - 1) + 1))
        r = int(rng.integers(1, 9))
        w0 = rng.standard_normal((d_out, d_in))
        st = init_adapter(w0, AdapterConfig(r=r, alpha=2.0 * r, k=k, method="oplora", seed=i))
        st.a = rng.uniform(-1, 1, st.a.shape)
        st.b = rng.uniform(-1, 1, st.b.shape)
        out.append(st)
    return out


@pytest.fixture(scope="module")
def instances():
    t0 = time.perf_counter()
    states = random_instances()
    return states, time.perf_counter() - t0


@pytest.fixture(scope="module")
def default_runs():
    cfg = default_config()
    t0 = time.perf_counter()
    results = run_experiment(cfg)
    return cfg, results, time.perf_counter() - t0


def test_criterion_1_singular_triples_preserved(instances):
    states, build_time = instances
    t0 = time.perf_counter()
    worst_col = worst_block = 0.0
    for st in states:
        k = st.config.k
        f = svd_exact(st.w0)
        u, s, v = f.u[:, :k], f.sigma[:k], f.v[:, :k]
        w1 = merge(st)
        col = max(
            np.linalg.norm(w1 @ v - u * s, axis=0).max(),
            np.linalg.norm(w1.T @ u - v * s, axis=0).max(),
        )
        block = np.linalg.norm(u.T @ w1 @ v - np.diag(s))
        worst_col = max(worst_col, col / f.sigma[0])
        worst_block = max(worst_block, block / f.sigma[0])
    elapsed = build_time + time.perf_counter() - t0
    ok = worst_col <= 1e-10 and worst_block <= 1e-10 and elapsed < 10.0
    record(1, ok, f"max triple residual {worst_col:.2e}, block {worst_block:.2e} (tol 1e-10 sigma_1), {elapsed:.1f}s")
    assert ok


def test_criterion_2_output_annihilation(instances):
    states, build_time = instances
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = 0.0
    for st in states:
        u = st.projectors.u_k
        dw = effective_update(st)
        x = rng.standard_normal((st.shape[1], 100))
        lhs = np.linalg.norm(u.T @ (dw @ x), axis=0)
        bound = np.linalg.norm(dw) * np.linalg.norm(x, axis=0)
        worst = max(worst, float(np.max(lhs / bound)))
        # same property through the factored forward path
        out = forward(st, x) - st.w0 @ x
        worst = max(worst, float(np.max(np.linalg.norm(u.T @ out, axis=0) / bound)))
    elapsed = build_time + time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 10.0
    record(2, ok, f"max ||U_k^T dW x|| / (||dW||_F ||x||) = {worst:.2e} (tol 1e-10), {elapsed:.1f}s")
    assert ok


def test_criterion_3_rho_contract(instances):
    states, _ = instances
    worst_exact = 0.0
    for st in states[:25]:
        ks = list(range(1, st.config.k + 1))
        rep = rho_sweep(st.w0, effective_update(st), ks)
        worst_exact = max(worst_exact, max(rep.rho))

    # default toy layer: seed 0 of the bundled config, oplora at k = 16
    cfg = default_config()
    seed = cfg.seeds[0]
    spec_a = replace(cfg.task_a, teacher_seed=derive_seed(cfg.task_a.teacher_seed, seed))
    spec_b = replace(cfg.task_b, teacher_seed=derive_seed(cfg.task_b.teacher_seed, seed))
    pre = pretrain(spec_a)
    f = svd_exact(pre.w0)
    ks = [k for k in cfg.k_sweep if k <= 16]
    rhos = {}
    for mode in ("exact", "randomized"):
        ac = replace(cfg.adapter, method="oplora", k=16, mode=mode, oversample=8, power_iters=2,
                     seed=derive_seed(cfg.adapter.seed, seed))
        res = adapt_and_measure(pre.w0, spec_a, spec_b, ac, cfg.optimizer, data_a=pre.data,
                                k_values=ks, svd=f, seed=seed)
        rhos[mode] = res.rho_report.rho
    worst_exact = max(worst_exact, max(rhos["exact"]))
    rnd = rhos["randomized"]
    ok = worst_exact <= 1e-12 and all(0.0 < r < 1e-3 for r in rnd)
    record(3, ok, f"exact max rho {worst_exact:.2e} (tol 1e-12); randomized rho at k={ks}: "
                  + ", ".join(f"{r:.2e}" for r in rnd) + " (need 0 < rho < 1e-3)")
    assert ok


def test_criterion_4_gradients():
    t0 = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(99)
    for i in range(20):
        d_out = int(rng.integers(4, 33)) if i else 32
        d_in = int(rng.integers(4, 33)) if i else 32
        r = int(rng.integers(1, min(8, min(d_out, d_in)) + 1)) if i else 8
        k = int(rng.integers(1, min(d_out, d_in)))
        w0 = rng.standard_normal((d_out, d_in))
        x = rng.standard_normal((d_in, 6))
        y = rng.standard_normal((d_out, 6))
        for method in ("lora", "pissa", "milora", "oplora"):
            st = init_adapter(w0, AdapterConfig(r=r, alpha=2.0 * r, k=k if method == "oplora" else 0,
                                                method=method, seed=i))
            if method in ("lora", "oplora"):
                st.b = rng.uniform(-1, 1, st.b.shape)
            g_a, g_b = grad(st, x, forward(st, x) - y)
            fd_a, fd_b = fd_grads(st, x, y, step=1e-5)
            worst = max(worst, rel_err(fd_a, g_a), rel_err(fd_b, g_b))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 30.0
    record(4, ok, f"max relative error vs central differences {worst:.2e} (tol 1e-6), {elapsed:.1f}s")
    assert ok


def test_criterion_5_oracle_equivalence():
    rng = np.random.default_rng(5)
    worst_proj = 0.0
    for n in (8, 64, 256, 512):
        k = min(16, n // 2)
        # bases from the randomized route keep the 512 case fast; any orthonormal basis will do here
        p = build_projectors(rng.standard_normal((n, n)), k, mode="randomized", seed=n)
        m = rng.standard_normal((n, n))
        dense_l = np.eye(n) - p.u_k @ p.u_k.T
        dense_r = np.eye(n) - p.v_k @ p.v_k.T
        nm = np.linalg.norm(m)
        worst_proj = max(
            worst_proj,
            np.linalg.norm(apply_left(p, m) - dense_l @ m) / nm,
            np.linalg.norm(apply_right(p, m) - m @ dense_r) / nm,
        )
    worst_sigma = 0.0
    for i, (rows, cols) in enumerate([(12, 9), (40, 30), (30, 40), (96, 64), (128, 96)]):
        p = min(rows, cols)
        sigma = np.linspace(10.0, 1.0, p)
        m = matrix_with_spectrum(sigma, rows, cols, seed=i)
        s = svd_exact(m).sigma
        gram = m.T @ m if rows >= cols else m @ m.T
        oracle = np.sqrt(np.sort(np.linalg.eigvalsh(gram))[::-1])
        worst_sigma = max(worst_sigma, float(np.max(np.abs(s - oracle) / oracle)))
    ok = worst_proj <= 1e-12 and worst_sigma <= 1e-8
    record(5, ok, f"factored vs dense projector {worst_proj:.2e} (tol 1e-12); "
                  f"sigma vs Gram eigenvalues {worst_sigma:.2e} (tol 1e-8)")
    assert ok


def test_criterion_6_method_ordering(default_runs):
    cfg, results, elapsed = default_runs
    s = summarize(cfg, results)["methods"]
    four = {"lora": "lora", "pissa": "pissa", "milora": "milora", "oplora": "oplora-16"}
    rho16 = {name: s[label]["mean_rho"]["16"] for name, label in four.items()}
    others = [v for n, v in rho16.items() if n != "oplora"]
    lowest = all(rho16["oplora"] < v for v in others)
    highest = all(rho16["pissa"] > v for n, v in rho16.items() if n != "pissa")
    fg_op = s["oplora-16"]["median_forgetting"]
    fg_lora = s["lora"]["median_forgetting"]
    ok = lowest and highest and fg_op <= fg_lora and elapsed < 120.0
    record(6, ok, "mean rho_16 " + ", ".join(f"{n}={v:.3g}" for n, v in rho16.items())
                  + f"; median forgetting oplora={fg_op:.3g} <= lora={fg_lora:.3g}; {elapsed:.1f}s")
    assert ok


def test_criterion_7_scope_substitution():
    st = init_adapter(np.diag([3.0, 2.0, 1.0]), AdapterConfig(r=1, alpha=1.0, method="pissa"))
    pissa_ok = np.allclose(st.b @ st.a, np.diag([3.0, 0, 0]), atol=1e-14) and np.allclose(
        st.residual_w0, np.diag([0, 2.0, 1.0]), atol=1e-14)
    st = init_adapter(np.diag([3.0, 2.0, 1.0]), AdapterConfig(r=1, alpha=1.0, method="milora"))
    milora_ok = np.allclose(st.b @ st.a, np.diag([0, 0, 1.0]), atol=1e-14) and np.allclose(
        st.residual_w0, np.diag([3.0, 2.0, 0]), atol=1e-14)
    text = README.read_text() if README.exists() else ""
    statement = "Not reproduced at desk scale" in text
    ok = pissa_ok and milora_ok and statement
    record(7, ok, f"large-model benchmark accuracies declared out of reach in README: {statement}; "
                  f"pissa/milora diagonal init checks: {pissa_ok and milora_ok}")
    assert ok


def test_criterion_8_determinism(default_runs):
    cfg, results, _ = default_runs
    first = results_csv(cfg, results)
    second = results_csv(cfg, run_experiment(cfg))
    ok = first.encode() == second.encode()
    record(8, ok, f"default experiment CSV byte-identical across runs ({len(first)} bytes)")
    assert ok

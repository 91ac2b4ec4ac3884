import numpy as np
import pytest

from oplora.adapter import (
    AdapterConfig,
    effective_update,
    forward,
    grad,
    init_adapter,
    kaiming_uniform,
    load_checkpoint,
    merge,
    save_checkpoint,
)
from oplora.densela import svd_exact
from oplora.errors import DimensionError, FingerprintError, ParameterError, RankError
from oplora.io import read_matrix, write_matrix
from oplora.projection import build_projectors

from conftest import dense_update, fd_grads, random_matrix, rel_err

METHODS = ["lora", "pissa", "milora", "oplora"]


def make_state(method, d_out=12, d_in=9, r=3, k=2, alpha=6.0, seed=0, randomize=True):
    w0 = random_matrix(d_out, d_in, seed)
    st = init_adapter(w0, AdapterConfig(r=r, alpha=alpha, k=k if method == "oplora" else 0, method=method, seed=seed))
    if randomize:
        rng = np.random.default_rng(seed + 100)
        st.a = rng.uniform(-1, 1, st.a.shape)
        st.b = rng.uniform(-1, 1, st.b.shape)
    return st


class TestInit:
    @pytest.mark.parametrize("method", ["lora", "oplora"])
    def test_zero_update_at_init(self, method, rng):
        st = make_state(method, randomize=False)
        assert not np.any(st.b)
        x = rng.standard_normal((9, 5))
        # b = 0 gives an exactly zero update
        assert forward(st, x).tobytes() == (st.w0 @ x).tobytes()
        assert not np.any(effective_update(st))

    def test_kaiming_bound_and_seed(self):
        a = kaiming_uniform(4, 24, seed=3)
        assert np.abs(a).max() <= np.sqrt(6 / 24)
        assert a.tobytes() == kaiming_uniform(4, 24, seed=3).tobytes()
        st = init_adapter(np.eye(24)[:10], AdapterConfig(r=4, method="lora", seed=3))
        assert st.a.tobytes() == a.tobytes()

    def test_pissa_diagonal(self):
        st = init_adapter(np.diag([3.0, 2.0, 1.0]), AdapterConfig(r=1, alpha=1.0, method="pissa"))
        np.testing.assert_allclose(st.b @ st.a, np.diag([3.0, 0, 0]), atol=1e-15)
        np.testing.assert_allclose(st.residual_w0, np.diag([0, 2.0, 1.0]), atol=1e-15)

    def test_milora_diagonal(self):
        st = init_adapter(np.diag([3.0, 2.0, 1.0]), AdapterConfig(r=1, alpha=1.0, method="milora"))
        np.testing.assert_allclose(st.b @ st.a, np.diag([0, 0, 1.0]), atol=1e-15)
        np.testing.assert_allclose(st.residual_w0, np.diag([3.0, 2.0, 0]), atol=1e-15)

    @pytest.mark.parametrize("method", ["pissa", "milora"])
    def test_rebasing_reconstructs_w0(self, method):
        w0 = random_matrix(15, 11, 4)
        st = init_adapter(w0, AdapterConfig(r=4, alpha=16.0, method=method))
        assert np.linalg.norm(merge(st) - w0) <= 1e-9 * np.linalg.norm(w0)
        assert np.linalg.norm(st.residual_w0 + st.config.scale * st.b @ st.a - w0) <= 1e-9 * np.linalg.norm(w0)

    def test_oplora_has_no_residual(self):
        st = make_state("oplora")
        assert st.residual_w0 is None and st.projectors is not None
        assert st.projectors.source_fingerprint == st.fingerprint

    @pytest.mark.parametrize(
        "cfg, exc",
        [
            (AdapterConfig(r=10, method="lora"), RankError),
            (AdapterConfig(r=0, method="lora"), ParameterError),
            (AdapterConfig(r=2, alpha=0.0, method="lora"), ParameterError),
            (AdapterConfig(r=2, k=0, method="oplora"), RankError),
            (AdapterConfig(r=2, k=9, method="oplora"), RankError),
            (AdapterConfig(r=2, method="dora"), ParameterError),
        ],
    )
    def test_invalid_config(self, cfg, exc):
        with pytest.raises(exc):
            init_adapter(random_matrix(12, 9, 0), cfg)


class TestForward:
    def test_oplora_preserves_top_inputs(self):
        st = make_state("oplora", k=3)
        f = svd_exact(st.w0)
        for i in range(3):
            out = forward(st, f.v[:, i : i + 1])[:, 0]
            assert np.linalg.norm(out - f.sigma[i] * f.u[:, i]) <= 1e-10 * f.sigma[0]

    @pytest.mark.parametrize("method", METHODS)
    def test_dense_oracle(self, method, rng):
        st = make_state(method)
        x = rng.standard_normal((9, 7))
        expected = (st.w_frozen + dense_update(st)) @ x
        np.testing.assert_allclose(forward(st, x), expected, rtol=0, atol=1e-12 * np.abs(expected).max())

    @pytest.mark.parametrize("method", METHODS)
    def test_forward_merge_consistency(self, method, rng):
        st = make_state(method)
        x = rng.standard_normal((9, 4))
        out = forward(st, x)
        assert np.linalg.norm(out - merge(st) @ x) <= 1e-10 * np.linalg.norm(out)
        assert np.linalg.norm(out - (st.w_frozen + effective_update(st)) @ x) <= 1e-10 * np.linalg.norm(out)

    def test_preproject_toggle_matches(self, rng):
        st = make_state("oplora")
        x = rng.standard_normal((9, 6))
        np.testing.assert_allclose(forward(st, x, preproject=True), forward(st, x), atol=1e-12)

    def test_zero_b(self, rng):
        st = make_state("oplora")
        st.b = np.zeros_like(st.b)
        x = rng.standard_normal((9, 3))
        np.testing.assert_array_equal(forward(st, x), st.w0 @ x)
        np.testing.assert_array_equal(merge(st), st.w0)

    def test_dimension_error(self):
        with pytest.raises(DimensionError):
            forward(make_state("lora"), np.ones((8, 2)))

    def test_fingerprint_mismatch(self, rng):
        st = make_state("oplora")
        st.projectors = build_projectors(random_matrix(12, 9, 99), 2)
        with pytest.raises(FingerprintError):
            forward(st, rng.standard_normal((9, 1)))


class TestEffectiveUpdate:
    def test_oplora_identities(self):
        st = make_state("oplora", k=3)
        dw = effective_update(st)
        u, v = st.projectors.u_k, st.projectors.v_k
        assert np.linalg.norm(u.T @ dw) <= 1e-10 * np.linalg.norm(dw)
        assert np.linalg.norm(dw @ v) <= 1e-10 * np.linalg.norm(dw)

    def test_lora_direct_product(self):
        st = make_state("lora")
        np.testing.assert_allclose(effective_update(st), st.config.scale * st.b @ st.a, rtol=1e-15)


class TestGrad:
    def test_zero_upstream(self, rng):
        st = make_state("oplora")
        g_a, g_b = grad(st, rng.standard_normal((9, 4)), np.zeros((12, 4)))
        assert not np.any(g_a) and not np.any(g_b)

    @pytest.mark.parametrize("method", METHODS)
    def test_finite_differences(self, method, rng):
        st = make_state(method, d_out=8, d_in=6, r=2, k=2)
        x = rng.standard_normal((6, 5))
        y = rng.standard_normal((8, 5))
        g_a, g_b = grad(st, x, forward(st, x) - y)
        fd_a, fd_b = fd_grads(st, x, y)
        assert rel_err(fd_a, g_a) <= 1e-6
        assert rel_err(fd_b, g_b) <= 1e-6

    def test_oplora_grad_b_in_complement(self, rng):
        st = make_state("oplora", k=3)
        _, g_b = grad(st, rng.standard_normal((9, 6)), rng.standard_normal((12, 6)))
        assert np.linalg.norm(st.projectors.u_k.T @ g_b) <= 1e-11 * np.linalg.norm(g_b)

    def test_shape_errors(self):
        st = make_state("lora")
        with pytest.raises(DimensionError):
            grad(st, np.ones((9, 2)), np.ones((12, 3)))


class TestMerge:
    def test_diagonal_preservation(self):
        w0 = np.diag([5.0, 4.0, 3.0, 2.0, 1.0])
        st = init_adapter(w0, AdapterConfig(r=2, alpha=2.0, k=2, method="oplora", seed=1))
        rng = np.random.default_rng(7)
        st.a = rng.uniform(-1, 1, st.a.shape)
        st.b = rng.uniform(-1, 1, st.b.shape)
        w1 = merge(st)
        f = svd_exact(w1)
        np.testing.assert_allclose(f.sigma[:2], [5.0, 4.0], atol=1e-10)
        for i in range(2):
            e = np.eye(5)[:, i]
            assert np.linalg.norm(w1 @ e - w0[i, i] * e) <= 1e-10 * 5
            assert np.linalg.norm(w1.T @ e - w0[i, i] * e) <= 1e-10 * 5


class TestCheckpoint:
    @pytest.mark.parametrize("method", METHODS)
    def test_roundtrip(self, method, tmp_path):
        st = make_state(method)
        save_checkpoint(st, tmp_path)
        back = load_checkpoint(tmp_path)
        assert back.config == st.config
        assert merge(back).tobytes() == merge(st).tobytes()
        assert (tmp_path / "residual.oplr").exists() == (method in ("pissa", "milora"))
        assert (tmp_path / "proj.json").exists() == (method == "oplora")

    def test_tampered_w0(self, tmp_path):
        st = make_state("oplora")
        save_checkpoint(st, tmp_path)
        w0 = read_matrix(tmp_path / "w0.oplr")
        w0[0, 0] += 1.0
        write_matrix(tmp_path / "w0.oplr", w0)
        with pytest.raises(FingerprintError):
            load_checkpoint(tmp_path)

"""
LoRA-family adapters over a frozen weight.

Methods:

    lora    A ~ U(-sqrt(6/d_in), sqrt(6/d_in)), B = 0
    oplora  as lora, update sandwiched as P_L B A P_R with projectors built
            once from the frozen weight
    pissa   B, A from the top-r singular triples; frozen weight re-based to
            the residual
    milora  as pissa with the bottom-r triples

The update is always scaled by alpha / r at the outermost level.
"""
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .densela import as_matrix, svd_exact
from .errors import DimensionError, FingerprintError, FormatError, ParameterError, RankError
from .io import read_matrix, write_matrix
from .projection import (
    ProjectorPair,
    apply_input,
    apply_left,
    apply_right,
    build_projectors,
    fingerprint,
    load_projectors,
    save_projectors,
)
from .rng import Xoshiro256

METHODS = ("lora", "pissa", "milora", "oplora")


@dataclass(frozen=True)
class AdapterConfig:
    r: int = 8
    alpha: float = 16.0
    k: int = 0
    method: str = "lora"
    seed: int = 0
    mode: str = "exact"
    oversample: int = 8
    power_iters: int = 2

    @property
    def scale(self):
        return self.alpha / self.r

    def validate(self, d_out, d_in):
        if self.method not in METHODS:
            raise ParameterError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.r < 1:
            raise ParameterError(f"rank r must be positive, got {self.r}")
        if not self.alpha > 0:
            raise ParameterError(f"alpha must be positive, got {self.alpha}")
        if self.r > min(d_out, d_in):
            raise RankError(f"rank r={self.r} exceeds min({d_out}, {d_in})")
        if self.k < 0:
            raise ParameterError(f"projection rank must be nonnegative, got {self.k}")
        if self.method == "oplora" and not 1 <= self.k < min(d_out, d_in):
            raise RankError(f"oplora needs 1 <= k < {min(d_out, d_in)}, got k={self.k}")


@dataclass
class AdapterState:
    w0: np.ndarray
    a: np.ndarray
    b: np.ndarray
    config: AdapterConfig
    projectors: ProjectorPair = None
    residual_w0: np.ndarray = None
    fingerprint: str = field(default="")

    @property
    def w_frozen(self):
        return self.w0 if self.residual_w0 is None else self.residual_w0

    @property
    def shape(self):
        return self.w0.shape

    def check_projectors(self):
        if self.projectors is None:
            return
        if self.projectors.source_fingerprint != self.fingerprint:
            raise FingerprintError(
                f"projectors built from {self.projectors.source_fingerprint}, "
                f"frozen weight is {self.fingerprint}"
            )


def kaiming_uniform(rows, cols, seed):
    bound = np.sqrt(6.0 / cols)
    return Xoshiro256(seed).uniform(-bound, bound, (rows, cols))


def init_adapter(w0, config):
    w0 = as_matrix(w0, "w0").copy()
    d_out, d_in = w0.shape
    config.validate(d_out, d_in)
    fp = fingerprint(w0)
    r, s = config.r, config.scale

    if config.method in ("lora", "oplora"):
        a = kaiming_uniform(r, d_in, config.seed)
        b = np.zeros((d_out, r))
        proj = None
        if config.method == "oplora":
            proj = build_projectors(
                w0,
                config.k,
                mode=config.mode,
                oversample=config.oversample,
                power_iters=config.power_iters,
                seed=config.seed,
            )
        return AdapterState(w0, a, b, config, projectors=proj, fingerprint=fp)

    f = svd_exact(w0)
    sl = slice(0, r) if config.method == "pissa" else slice(f.p - r, f.p)
    root = np.sqrt(f.sigma[sl] / s)
    b = f.u[:, sl] * root
    a = root[:, None] * f.v[:, sl].T
    component = (f.u[:, sl] * f.sigma[sl]) @ f.v[:, sl].T
    return AdapterState(w0, a, b, config, residual_w0=w0 - component, fingerprint=fp)


def _check_input(state, x, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != state.shape[1]:
        raise DimensionError(f"{name} must have shape ({state.shape[1]}, batch), got {x.shape}")
    return x


def forward(state, x, preproject=False):
    """``W_frozen x + (alpha/r) * update(x)`` without forming the dense update.

    ``preproject`` applies the projectors to B and A once instead of to the
    activations; the two paths are algebraically identical.
    """
    x = _check_input(state, x)
    s = state.config.scale
    base = state.w_frozen @ x
    p = state.projectors
    if p is None:
        return base + s * (state.b @ (state.a @ x))
    state.check_projectors()
    if preproject:
        b = apply_left(p, state.b)
        a = apply_right(p, state.a)
        return base + s * (b @ (a @ x))
    return base + s * apply_left(p, state.b @ (state.a @ apply_input(p, x)))


def effective_update(state):
    """Dense ``(alpha/r) * P_L B A P_R`` (projectors omitted when absent)."""
    s = state.config.scale
    p = state.projectors
    if p is None:
        return s * (state.b @ state.a)
    state.check_projectors()
    return s * apply_right(p, apply_left(p, state.b) @ state.a)


def grad(state, x, upstream):
    """Gradients of ``sum(upstream * forward(x))`` w.r.t. A and B.

    Returns ``(g_a, g_b)`` with shapes (r, d_in) and (d_out, r). The frozen
    weight gets no gradient.
    """
    x = _check_input(state, x)
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != (state.shape[0], x.shape[1]):
        raise DimensionError(f"upstream must have shape {(state.shape[0], x.shape[1])}, got {g.shape}")
    s = state.config.scale
    p = state.projectors
    if p is not None:
        state.check_projectors()
        x = apply_input(p, x)
        g = apply_left(p, g)
    ax = state.a @ x
    g_b = s * (g @ ax.T)
    g_a = s * ((state.b.T @ g) @ x.T)
    return g_a, g_b


def merge(state):
    return state.w_frozen + effective_update(state)


def save_checkpoint(state, directory):
    os.makedirs(directory, exist_ok=True)
    write_matrix(os.path.join(directory, "w0.oplr"), state.w0)
    write_matrix(os.path.join(directory, "a.oplr"), state.a)
    write_matrix(os.path.join(directory, "b.oplr"), state.b)
    if state.residual_w0 is not None:
        write_matrix(os.path.join(directory, "residual.oplr"), state.residual_w0)
    if state.projectors is not None:
        save_projectors(state.projectors, directory)
    meta = asdict(state.config)
    meta["fingerprint"] = state.fingerprint
    with open(os.path.join(directory, "adapter.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(directory):
    """Load a checkpoint directory; raises FingerprintError on a w0/projector mismatch."""
    try:
        with open(os.path.join(directory, "adapter.json")) as fh:
            meta = json.load(fh)
        config = AdapterConfig(
            r=int(meta["r"]),
            alpha=float(meta["alpha"]),
            k=int(meta["k"]),
            method=str(meta["method"]),
            seed=int(meta["seed"]),
            mode=meta.get("mode", "exact"),
            oversample=int(meta.get("oversample", 8)),
            power_iters=int(meta.get("power_iters", 2)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad adapter.json in {directory}: {exc}") from exc

    w0 = read_matrix(os.path.join(directory, "w0.oplr"))
    a = read_matrix(os.path.join(directory, "a.oplr"))
    b = read_matrix(os.path.join(directory, "b.oplr"))
    residual_path = os.path.join(directory, "residual.oplr")
    residual = read_matrix(residual_path) if os.path.exists(residual_path) else None
    proj = None
    if os.path.exists(os.path.join(directory, "proj.json")):
        proj = load_projectors(directory)

    fp = fingerprint(w0)
    recorded = meta.get("fingerprint", fp)
    if recorded != fp:
        raise FingerprintError(f"w0.oplr hashes to {fp}, adapter.json records {recorded}")
    d_out, d_in = w0.shape
    config.validate(d_out, d_in)
    if a.shape != (config.r, d_in) or b.shape != (d_out, config.r):
        raise DimensionError(f"adapter factors {a.shape}, {b.shape} do not match w0 {w0.shape}")
    if config.method == "oplora" and proj is None:
        raise FormatError("oplora checkpoint is missing projector files")
    state = AdapterState(w0, a, b, config, projectors=proj, residual_w0=residual, fingerprint=fp)
    state.check_projectors()
    return state

"""
Desk-scale continual-learning harness.

Task A is a linear teacher-student regression with a decaying teacher
spectrum; full-batch gradient descent on it produces the frozen weight w0.
Task B's teacher is task A's teacher plus a shift, a ``conflict`` fraction of
which lies in the top ``conflict_rank`` left singular subspace of w0, so an
unconstrained adapter is pushed to overwrite dominant directions. Each method
then adapts w0 to task B under identical data, optimizer and seeds, and we
record task-B fit, task-A forgetting (loss delta) and the rho_k sweep of the
learned update.
"""
import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources

import numpy as np

from .adapter import AdapterConfig, effective_update, forward, grad, init_adapter, merge
from .densela import qr_decompose, svd_exact
from .errors import ParameterError, UndefinedMetricError
from .metrics import AlignmentReport, clip_k_values, rho_sweep
from .optim import OptimizerConfig, optimizer_step
from .rng import Xoshiro256, derive_seed

PRETRAIN_GRAD_TOL = 1e-8
PRETRAIN_MAX_STEPS = 10_000


@dataclass(frozen=True)
class TaskSpec:
    d_in: int = 48
    d_out: int = 64
    hidden: int = None
    teacher_seed: int = 0
    noise_std: float = 0.0
    n_train: int = 256
    n_eval: int = 256
    spectrum_decay: float = 0.9
    teacher_scale: float = 1.0
    # only read for a shifted (task B) teacher
    conflict: float = 0.0
    conflict_rank: int = 16
    shift_scale: float = 0.5

    def validate(self):
        if min(self.d_in, self.d_out) < 1 or (self.hidden is not None and self.hidden < 1):
            raise ParameterError("task dimensions must be positive")
        if self.n_train < 1 or self.n_eval < 1:
            raise ParameterError("n_train and n_eval must be >= 1")
        if self.noise_std < 0:
            raise ParameterError("noise_std must be nonnegative")
        if not 0.0 <= self.conflict <= 1.0:
            raise ParameterError("conflict must lie in [0, 1]")


@dataclass
class Dataset:
    teacher: np.ndarray
    x_train: np.ndarray
    y_train: np.ndarray
    x_eval: np.ndarray
    y_eval: np.ndarray


@dataclass
class Pretrained:
    w0: np.ndarray
    loss: float
    grad_norm: float
    steps: int
    converged: bool
    data: Dataset


@dataclass
class RunResult:
    method: str
    seed: int
    task_b_loss_init: float
    task_b_loss: float
    task_a_loss_before: float
    task_a_loss_after: float
    rho_report: AlignmentReport = None
    wall_time_ms: int = 0
    status: str = "ok"
    message: str = ""

    @property
    def forgetting(self):
        return self.task_a_loss_after - self.task_a_loss_before


def random_orthonormal(rows, cols, seed):
    q, _ = qr_decompose(Xoshiro256(seed).normal((rows, cols)))
    return q


def make_teacher(spec):
    """``U diag(s) V^T`` with random orthonormal U, V and ``s_i = scale * decay**i``.

    ``hidden`` caps the teacher's rank (a linear bottleneck).
    """
    p = min(spec.d_out, spec.d_in)
    if spec.hidden is not None:
        p = min(p, spec.hidden)
    u = random_orthonormal(spec.d_out, p, derive_seed(spec.teacher_seed, 1))
    v = random_orthonormal(spec.d_in, p, derive_seed(spec.teacher_seed, 2))
    s = spec.teacher_scale * spec.spectrum_decay ** np.arange(p)
    return (u * s) @ v.T


def generate_task(spec, teacher=None):
    """Seeded regression data ``y = T x + noise`` with Gaussian inputs."""
    spec.validate()
    t = make_teacher(spec) if teacher is None else np.asarray(teacher, dtype=np.float64)
    if t.shape != (spec.d_out, spec.d_in):
        raise ParameterError(f"teacher shape {t.shape} != ({spec.d_out}, {spec.d_in})")
    rng = Xoshiro256(derive_seed(spec.teacher_seed, 3))
    x_train = rng.normal((spec.d_in, spec.n_train))
    x_eval = rng.normal((spec.d_in, spec.n_eval))
    y_train = t @ x_train
    y_eval = t @ x_eval
    if spec.noise_std > 0:
        y_train = y_train + spec.noise_std * rng.normal(y_train.shape)
        y_eval = y_eval + spec.noise_std * rng.normal(y_eval.shape)
    return Dataset(t, x_train, y_train, x_eval, y_eval)


def conflicting_teacher(base, w0, spec, svd=None):
    """``base + shift`` with ``conflict`` of the shift inside w0's top left subspace.

    Both shift parts are normalized to unit Frobenius norm before mixing; the
    result is rescaled to ``shift_scale * ||base||_F``.
    """
    spec.validate()
    f = svd_exact(w0) if svd is None else svd
    k = max(1, min(spec.conflict_rank, f.p))
    rng = Xoshiro256(derive_seed(spec.teacher_seed, 4))
    inside = f.u[:, :k] @ rng.normal((k, spec.d_in))
    outside = rng.normal((spec.d_out, spec.d_in))
    inside /= np.linalg.norm(inside)
    outside /= np.linalg.norm(outside)
    shift = spec.conflict * inside + (1.0 - spec.conflict) * outside
    shift *= spec.shift_scale * np.linalg.norm(base) / np.linalg.norm(shift)
    return base + shift


def mse(w, x, y):
    r = w @ x - y
    return float(np.mean(r * r))


def pretrain(spec_a, data=None):
    """Full-batch gradient descent from zero on the task-A mean-squared loss.

    Step size is ``1 / L`` with ``L`` the exact Lipschitz constant of the
    gradient. Stops at gradient norm <= 1e-8 or after 10k steps;
    non-convergence is reported through ``converged``, not raised.
    """
    data = generate_task(spec_a) if data is None else data
    x, y = data.x_train, data.y_train
    denom = y.size
    lipschitz = 2.0 * svd_exact(x).sigma[0] ** 2 / denom
    lr = 1.0 / lipschitz
    w = np.zeros((spec_a.d_out, spec_a.d_in))
    gnorm = math.inf
    step = 0
    for step in range(1, PRETRAIN_MAX_STEPS + 1):
        g = 2.0 * ((w @ x - y) @ x.T) / denom
        gnorm = float(np.linalg.norm(g))
        if gnorm <= PRETRAIN_GRAD_TOL:
            break
        w = w - lr * g
    converged = gnorm <= PRETRAIN_GRAD_TOL
    return Pretrained(w, mse(w, x, y), gnorm, step, converged, data)


def adapt_and_measure(
    w0,
    spec_a,
    spec_b,
    config,
    opt,
    data_a=None,
    data_b=None,
    k_values=(4, 8, 16, 32),
    label=None,
    svd=None,
    seed=0,
):
    """Train the adapter on task B and measure fit, forgetting and rho_k.

    Task-A losses use the eval split; "before" is the merged weight at
    initialization (equal to w0 for every method).
    """
    t0 = time.perf_counter()
    opt.validate()
    f = svd_exact(w0) if svd is None else svd
    if data_a is None:
        data_a = generate_task(spec_a)
    if data_b is None:
        data_b = generate_task(spec_b, teacher=conflicting_teacher(data_a.teacher, w0, spec_b, svd=f))
    label = label or config.method

    state = init_adapter(w0, config)
    x, y = data_b.x_train, data_b.y_train
    a_before = mse(merge(state), data_a.x_eval, data_a.y_eval)
    b_init = mse(merge(state), data_b.x_eval, data_b.y_eval)

    params, opt_state = [state.a, state.b], None
    # divergence is detected explicitly below
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(opt.steps):
            out = forward(state, x)
            upstream = 2.0 * (out - y) / y.size
            g_a, g_b = grad(state, x, upstream)
            params, opt_state = optimizer_step(params, [g_a, g_b], opt_state, opt)
            state.a, state.b = params
            if not (np.all(np.isfinite(state.a)) and np.all(np.isfinite(state.b))):
                return RunResult(
                    label, seed, b_init, math.nan, a_before, math.nan,
                    wall_time_ms=int(1000 * (time.perf_counter() - t0)),
                    status="failed", message="non-finite adapter parameters (diverged)",
                )

    merged = merge(state)
    report = None
    try:
        report = rho_sweep(
            w0, effective_update(state), k_values, layer_name=label, svd=f,
            preservation_k=config.k or None,
        )
    except UndefinedMetricError:
        pass
    return RunResult(
        method=label,
        seed=seed,
        task_b_loss_init=b_init,
        task_b_loss=mse(merged, data_b.x_eval, data_b.y_eval),
        task_a_loss_before=a_before,
        task_a_loss_after=mse(merged, data_a.x_eval, data_a.y_eval),
        rho_report=report,
        wall_time_ms=int(1000 * (time.perf_counter() - t0)),
    )


def parse_method(name, base):
    """``"oplora-4"`` -> (AdapterConfig with k=4, label). Plain ``"oplora"`` uses the base k."""
    if name.startswith("oplora"):
        k = base.k
        if "-" in name:
            try:
                k = int(name.split("-", 1)[1])
            except ValueError:
                raise ParameterError(f"bad method entry {name!r}") from None
        return replace(base, method="oplora", k=k), f"oplora-{k}"
    if name not in ("lora", "pissa", "milora"):
        raise ParameterError(f"unknown method {name!r}")
    return replace(base, method=name, k=0), name


@dataclass
class ExperimentConfig:
    task_a: TaskSpec = field(default_factory=TaskSpec)
    task_b: TaskSpec = field(default_factory=TaskSpec)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    methods: list = field(default_factory=lambda: ["lora", "pissa", "milora", "oplora"])
    seeds: list = field(default_factory=list)
    k_sweep: list = field(default_factory=lambda: [4, 8, 16, 32])

    @classmethod
    def from_dict(cls, d):
        def build(klass, sub):
            sub = dict(sub or {})
            known = {f.name for f in fields(klass)}
            unknown = set(sub) - known
            if unknown:
                raise ParameterError(f"unknown {klass.__name__} keys: {sorted(unknown)}")
            return klass(**sub)

        if not isinstance(d, dict):
            raise ParameterError("experiment config must be a JSON object")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        if "seeds" not in d:
            raise ParameterError("config must list seeds explicitly")
        cfg = cls(
            task_a=build(TaskSpec, d.get("task_a")),
            task_b=build(TaskSpec, d.get("task_b")),
            adapter=build(AdapterConfig, d.get("adapter")),
            optimizer=build(OptimizerConfig, d.get("optimizer")),
            methods=list(d.get("methods", ["lora", "pissa", "milora", "oplora"])),
            seeds=[int(s) for s in d["seeds"]],
            k_sweep=[int(k) for k in d.get("k_sweep", [4, 8, 16, 32])],
        )
        cfg.validate()
        return cfg

    def to_dict(self):
        return {
            "task_a": asdict(self.task_a),
            "task_b": asdict(self.task_b),
            "adapter": asdict(self.adapter),
            "optimizer": asdict(self.optimizer),
            "methods": list(self.methods),
            "seeds": list(self.seeds),
            "k_sweep": list(self.k_sweep),
        }

    def validate(self):
        self.task_a.validate()
        self.task_b.validate()
        self.optimizer.validate()
        if (self.task_a.d_in, self.task_a.d_out) != (self.task_b.d_in, self.task_b.d_out):
            raise ParameterError("task A and task B must share dimensions")
        for m in self.methods:
            cfg, _ = parse_method(m, self.adapter)
            cfg.validate(self.task_a.d_out, self.task_a.d_in)
        if not clip_k_values(self.k_sweep, (self.task_a.d_out, self.task_a.d_in)):
            raise ParameterError("k_sweep has no value valid for the task dimensions")

    @property
    def labels(self):
        return [parse_method(m, self.adapter)[1] for m in self.methods]


def load_config(path):
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def default_config():
    """The bundled 10-seed comparison config."""
    text = resources.files("oplora.data").joinpath("default_experiment.json").read_text()
    return ExperimentConfig.from_dict(json.loads(text))


def run_seed(cfg, seed):
    """All methods on one seed; data, w0 and optimizer settings are shared."""
    spec_a = replace(cfg.task_a, teacher_seed=derive_seed(cfg.task_a.teacher_seed, seed))
    spec_b = replace(cfg.task_b, teacher_seed=derive_seed(cfg.task_b.teacher_seed, seed))
    pre = pretrain(spec_a)
    w0 = pre.w0
    f = svd_exact(w0)
    data_b = generate_task(spec_b, teacher=conflicting_teacher(pre.data.teacher, w0, spec_b, svd=f))
    base = replace(cfg.adapter, seed=derive_seed(cfg.adapter.seed, seed))
    results = []
    for name in cfg.methods:
        config, label = parse_method(name, base)
        res = adapt_and_measure(
            w0, spec_a, spec_b, config, cfg.optimizer,
            data_a=pre.data, data_b=data_b, k_values=cfg.k_sweep,
            label=label, svd=f, seed=seed,
        )
        if not pre.converged:
            res.message = (res.message + "; " if res.message else "") + "pretrain did not converge"
        results.append(res)
    return results


def run_experiment(cfg, jobs=1):
    """Every (seed, method) run, ordered by seed then method."""
    if jobs > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_seed = list(pool.map(run_seed, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        per_seed = [run_seed(cfg, s) for s in cfg.seeds]
    return [r for rs in per_seed for r in rs]


def csv_columns(cfg):
    ks = clip_k_values(cfg.k_sweep, (cfg.task_a.d_out, cfg.task_a.d_in))
    return (
        ["method", "seed", "status", "task_b_loss_init", "task_b_loss",
         "task_a_loss_before", "task_a_loss_after", "forgetting"]
        + [f"rho_{k}" for k in ks]
        + ["update_norm", "preservation_residual", "message"]
    )


def _fmt(x):
    return repr(float(x))


def results_csv(cfg, results):
    ks = clip_k_values(cfg.k_sweep, (cfg.task_a.d_out, cfg.task_a.d_in))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(csv_columns(cfg))
    for r in results:
        rep = r.rho_report
        rho = rep.rho if rep is not None else [math.nan] * len(ks)
        writer.writerow(
            [r.method, r.seed, r.status, _fmt(r.task_b_loss_init), _fmt(r.task_b_loss),
             _fmt(r.task_a_loss_before), _fmt(r.task_a_loss_after), _fmt(r.forgetting)]
            + [_fmt(v) for v in rho]
            + [_fmt(rep.update_norm if rep else math.nan),
               _fmt(rep.preservation_residual if rep else math.nan), r.message]
        )
    return buf.getvalue()


def _median(values):
    vals = [v for v in values if math.isfinite(v)]
    return float(np.median(vals)) if vals else None


def _mean(values):
    vals = [v for v in values if math.isfinite(v)]
    return float(np.mean(vals)) if vals else None


def summarize(cfg, results):
    """Per-method medians of losses and forgetting, plus per-k median and mean rho."""
    ks = clip_k_values(cfg.k_sweep, (cfg.task_a.d_out, cfg.task_a.d_in))
    out = {}
    for label in cfg.labels:
        rs = [r for r in results if r.method == label]
        ok = [r for r in rs if r.status == "ok"]
        rho_cols = {k: [r.rho_report.rho[i] for r in ok if r.rho_report] for i, k in enumerate(ks)}
        out[label] = {
            "n_runs": len(rs),
            "n_failed": len(rs) - len(ok),
            "median_task_b_loss": _median([r.task_b_loss for r in ok]),
            "median_task_a_loss_after": _median([r.task_a_loss_after for r in ok]),
            "median_forgetting": _median([r.forgetting for r in ok]),
            "median_rho": {str(k): _median(v) for k, v in rho_cols.items()},
            "mean_rho": {str(k): _mean(v) for k, v in rho_cols.items()},
        }
    return {"methods": out, "seeds": list(cfg.seeds), "k_sweep": ks}


def summary_json(cfg, results):
    return json.dumps(summarize(cfg, results), indent=2, sort_keys=True) + "\n"

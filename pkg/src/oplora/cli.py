"""
Command-line entry point.

Exit codes: 0 success, 1 runtime error, 2 usage error (including unreadable
inputs), 3 a requested check failed.
"""
import argparse
import json
import os
import sys

import numpy as np

from . import adapter as adapter_mod
from .densela import svd_exact, svd_randomized
from .errors import (
    DimensionError,
    FingerprintError,
    FormatError,
    OploraError,
    ParameterError,
    SizeError,
    UndefinedMetricError,
)
from .experiment import default_config, load_config, results_csv, run_experiment, summary_json
from .io import read_matrix, write_matrix
from .metrics import DEFAULT_K_VALUES, is_degenerate, preservation_check, rho_sweep

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _read(path):
    try:
        return read_matrix(path)
    except (OSError, FormatError) as exc:
        raise UsageError(f"cannot read matrix {path}: {exc}") from exc


def _load_checkpoint(path):
    try:
        return adapter_mod.load_checkpoint(path)
    except FormatError as exc:
        raise UsageError(f"bad checkpoint {path}: {exc}") from exc
    except OSError as exc:
        raise UsageError(f"cannot read checkpoint {path}: {exc}") from exc


def _write_text(out_dir, name, text):
    if out_dir is None:
        return None
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def _parse_ks(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"bad k list {text!r}") from None


def cmd_svd(args):
    m = _read(args.input)
    k = args.k
    if not 1 <= k <= min(m.shape):
        raise UsageError(f"--k must lie in [1, {min(m.shape)}]")
    if args.mode == "exact":
        try:
            f = svd_exact(m)
        except SizeError as exc:
            print(f"error: {exc}\nhint: rerun with --mode randomized --seed N", file=sys.stderr)
            return EXIT_RUNTIME
        sigma = f.sigma
        total = float(np.sum(sigma ** 2))
    else:
        if args.seed is None:
            raise UsageError("--mode randomized requires --seed")
        rank = min(k + 1, min(m.shape))
        f = svd_randomized(m, rank, args.oversample, args.power_iters, seed=args.seed)
        sigma = f.sigma
        total = float(np.sum(m * m))
    energy = float(np.sum(sigma[:k] ** 2)) / total if total > 0 else 0.0
    report = {
        "sigma": [float(s) for s in sigma],
        "k": k,
        "mode": args.mode,
        "energy_fraction_at_k": energy,
        "degenerate_flag": is_degenerate(sigma, k),
    }
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    _write_text(args.out_dir, "svd.json", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_rho(args):
    w0 = _read(args.w0)
    if (args.delta is None) == (args.checkpoint is None):
        raise UsageError("give exactly one of --delta or --checkpoint")
    if args.delta is not None:
        delta = _read(args.delta)
    else:
        state = _load_checkpoint(args.checkpoint)
        if state.w0.shape != w0.shape or not np.array_equal(state.w0, w0):
            raise FingerprintError("checkpoint was trained on a different w0")
        delta = adapter_mod.effective_update(state)
    if delta.shape != w0.shape:
        raise UsageError(f"shape mismatch: w0 {w0.shape} vs delta {delta.shape}")
    ks = [args.k] if args.k is not None else (_parse_ks(args.k_sweep) if args.k_sweep else list(DEFAULT_K_VALUES))
    report = rho_sweep(w0, delta, ks, layer_name=args.layer)
    _write_text(args.out_dir, "rho.json", report.to_json())
    _write_text(args.out_dir, "rho.csv", report.to_csv())
    sys.stdout.write(report.to_csv())
    if args.assert_max_rho is not None and max(report.rho) > args.assert_max_rho:
        print(f"check failed: max rho {max(report.rho):.3e} > {args.assert_max_rho:.3e}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_experiment(args):
    if args.config is None:
        cfg = default_config()
    else:
        try:
            cfg = load_config(args.config)
        except (OSError, json.JSONDecodeError, TypeError, ParameterError) as exc:
            raise UsageError(f"bad experiment config {args.config}: {exc}") from exc
    results = run_experiment(cfg, jobs=args.jobs)
    out_dir = args.out_dir or "."
    csv_path = _write_text(out_dir, "runs.csv", results_csv(cfg, results))
    _write_text(out_dir, "summary.json", summary_json(cfg, results))
    timings = {f"{r.method}/{r.seed}": r.wall_time_ms for r in results}
    _write_text(out_dir, "timings.json", json.dumps(timings, indent=2) + "\n")
    failed = sum(r.status != "ok" for r in results)
    print(f"{len(results)} runs ({failed} failed) -> {csv_path}")
    return EXIT_OK


def _residual(state, w_prime, k):
    if k is None:
        k = state.config.k
    if not k:
        raise UsageError("--k is required for checkpoints without a projection rank")
    return preservation_check(state.w0, w_prime, k), k


def _gated(state, args):
    explicit = args.tolerance is not None
    exact_oplora = state.config.method == "oplora" and state.config.mode == "exact"
    return explicit or exact_oplora, (args.tolerance if explicit else 1e-9)


def cmd_merge(args):
    state = _load_checkpoint(args.checkpoint)
    merged = adapter_mod.merge(state)
    if args.out:
        write_matrix(args.out, merged)
    residual, k = _residual(state, merged, args.k)
    print(json.dumps({"k": k, "preservation_residual": residual, "merged": args.out}))
    gated, tol = _gated(state, args)
    if gated and residual > tol:
        print(f"check failed: residual {residual:.3e} > {tol:.3e}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_check(args):
    state = _load_checkpoint(args.checkpoint)
    if args.w_prime is not None:
        w_prime = _read(args.w_prime)
        if w_prime.shape != state.w0.shape:
            raise UsageError(f"w' shape {w_prime.shape} != w0 shape {state.w0.shape}")
    else:
        w_prime = adapter_mod.merge(state)
    residual, k = _residual(state, w_prime, args.k)
    print(json.dumps({"k": k, "preservation_residual": residual}))
    gated, tol = _gated(state, args)
    if gated and residual > tol:
        print(f"check failed: residual {residual:.3e} > {tol:.3e}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_init(args):
    if args.seed is None:
        raise UsageError("--seed is required")
    w0 = _read(args.w0)
    config = adapter_mod.AdapterConfig(
        r=args.r, alpha=args.alpha, k=args.k or 0, method=args.method, seed=args.seed,
        mode=args.mode, oversample=args.oversample, power_iters=args.power_iters,
    )
    try:
        state = adapter_mod.init_adapter(w0, config)
    except ParameterError as exc:
        raise UsageError(str(exc)) from exc
    adapter_mod.save_checkpoint(state, args.out_dir)
    print(f"wrote {args.method} checkpoint to {args.out_dir}")
    return EXIT_OK


def _svd_flags(p):
    p.add_argument("--mode", choices=["exact", "randomized"], default="exact")
    p.add_argument("--oversample", type=int, default=8)
    p.add_argument("--power-iters", type=int, default=2)
    p.add_argument("--seed", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="oplora", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("svd", help="singular spectrum of an OPLR1 matrix")
    p.add_argument("input")
    p.add_argument("--k", type=int, required=True)
    _svd_flags(p)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_svd)

    p = sub.add_parser("rho", help="rho_k sweep of an update against w0")
    p.add_argument("--w0", required=True)
    p.add_argument("--delta")
    p.add_argument("--checkpoint")
    p.add_argument("--k", type=int)
    p.add_argument("--k-sweep", help="comma-separated k values")
    p.add_argument("--layer", default="layer")
    p.add_argument("--assert-max-rho", type=float)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_rho)

    p = sub.add_parser("experiment", help="run the continual-learning comparison")
    p.add_argument("--config", help="run config JSON (default: bundled 10-seed config)")
    p.add_argument("--out-dir")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_experiment)

    for name, func in (("merge", cmd_merge), ("check", cmd_check)):
        p = sub.add_parser(name, help=f"{name} a checkpoint and report the preservation residual")
        p.add_argument("checkpoint")
        p.add_argument("--k", type=int)
        p.add_argument("--tolerance", type=float)
        if name == "merge":
            p.add_argument("--out", help="merged weight output (OPLR1)")
        else:
            p.add_argument("--w-prime", help="check this weight instead of the merged checkpoint")
        p.set_defaults(func=func)

    p = sub.add_parser("init", help="initialize an adapter checkpoint")
    p.add_argument("--w0", required=True)
    p.add_argument("--method", choices=list(adapter_mod.METHODS), required=True)
    p.add_argument("--r", type=int, default=8)
    p.add_argument("--alpha", type=float, default=16.0)
    p.add_argument("--k", type=int)
    _svd_flags(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_init)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UndefinedMetricError as exc:
        print(f"error: undefined metric: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except DimensionError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FingerprintError, OploraError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

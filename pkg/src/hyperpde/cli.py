"""Command-line interface.

Subcommands: generate, pretrain, finetune, evaluate, analyze. Exit codes:
0 success, 2 configuration problems, 3 numerical failures (solver blow-up,
training divergence), 4 I/O problems. Heavy numerical imports happen after
the LFR_THREADS environment variable (if set) is propagated to the BLAS
thread knobs, so the cap actually takes effect.

Training configs are JSON with an explicit schema_version; unknown keys
are rejected rather than ignored.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS")

CONFIG_SCHEMA_VERSION = 1
_EXTRA_KEYS = {"schema_version", "dataset", "n_train"}


def _apply_thread_env():
    raw = os.environ.get("LFR_THREADS")
    if raw is None:
        return
    from .exceptions import ConfigError
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"LFR_THREADS={raw!r} is not an integer") from None
    if n < 1:
        raise ConfigError("LFR_THREADS must be >= 1")
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def load_train_config(path: str, overrides: dict | None = None):
    """Parse and validate a config file; returns (TrainConfig, extras)."""
    import dataclasses

    from .exceptions import ConfigError
    from .training import TrainConfig

    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    version = data.pop("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(
            f"{path}: schema_version {version} unsupported "
            f"(expected {CONFIG_SCHEMA_VERSION})")
    extras = {k: data.pop(k) for k in ("dataset", "n_train") if k in data}
    allowed = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {unknown}")
    merged = dict(data)
    for key, val in (overrides or {}).items():
        if val is not None:
            merged[key] = val
    try:
        cfg = TrainConfig(**merged)
    except TypeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return cfg, extras


def _parse_indices(text: str, n: int) -> list[int]:
    from .exceptions import ConfigError
    text = text.strip()
    try:
        if ":" in text:
            lo_s, hi_s = text.split(":", 1)
            lo = int(lo_s) if lo_s else 0
            hi = int(hi_s) if hi_s else n
            idx = list(range(lo, hi))
        else:
            idx = [int(p) for p in text.split(",") if p]
    except ValueError:
        raise ConfigError(f"cannot parse indices {text!r}") from None
    if not idx or min(idx) < 0 or max(idx) >= n:
        raise ConfigError(f"indices {text!r} out of range for {n} samples")
    return idx


def _say(args, msg):
    if not getattr(args, "quiet", False):
        print(msg)


def _load_dataset_for(cfg_extras: dict, override: str | None):
    from .exceptions import ConfigError
    from .problems import load_dataset
    path = override or cfg_extras.get("dataset")
    if not path:
        raise ConfigError("no dataset given (config key 'dataset' or --dataset)")
    return load_dataset(path)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    from .fileio import atomic_write_json
    from .problems import generate_dataset, save_dataset

    ds = generate_dataset(args.benchmark, args.n_samples, args.seed, args.m)
    save_dataset(ds, args.out)
    manifest = {
        "benchmark": ds.benchmark,
        "n_samples": ds.n_samples,
        "seed": args.seed,
        "m": args.m,
        "grid": {"nt": int(ds.fields.shape[1]), "nx": int(ds.fields.shape[2])},
        "solvers": {
            "antiderivative": "rk45 quadrature",
            "advection": "upwind fd, cfl 0.5, nx 513",
            "burgers": "pseudo-spectral rk4, 2/3 dealiased, 256 modes",
            "diffusion": "crank-nicolson + explicit reaction, 397 nodes",
        }[ds.benchmark],
    }
    atomic_write_json(args.out + ".json", manifest)
    _say(args, f"wrote {ds.n_samples} samples to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    from .fileio import atomic_write_json
    from .training import pretrain

    overrides = {"seed": args.seed, "epochs": args.epochs, "mode": args.mode}
    cfg, extras = load_train_config(args.config, overrides)
    ds = _load_dataset_for(extras, args.dataset)
    if ds.benchmark != cfg.benchmark:
        from .exceptions import ConfigError
        raise ConfigError(
            f"dataset holds {ds.benchmark!r}, config says {cfg.benchmark!r}")
    n_train = extras.get("n_train") or ds.n_samples
    etas = ds.etas[: int(n_train)]
    log = None if args.quiet else (lambda msg: print(msg))
    result = pretrain(etas, cfg, out_dir=args.out, log=log)
    atomic_write_json(os.path.join(args.out, "run.json"), {
        "benchmark": cfg.benchmark, "mode": cfg.mode, "seed": cfg.seed,
        "epochs": cfg.epochs, "n_train": int(n_train),
        "n_theta": int(result.spec.n_theta()),
        "final_loss": result.records[-1][2] if result.records else None,
    })
    _say(args, f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_finetune(args) -> int:
    from .fileio import atomic_write_json
    from .analysis import relative_l2
    from .training import (TrainConfig, finetune, load_pretrain_checkpoint,
                           predict_field)

    cfg, extras = load_train_config(args.config,
                                    {"finetune_epochs": args.epochs})
    benchmark, spec, theta, _, _, _, _ = load_pretrain_checkpoint(args.checkpoint)
    if benchmark != cfg.benchmark:
        from .exceptions import ConfigError
        raise ConfigError(
            f"checkpoint holds {benchmark!r}, config says {cfg.benchmark!r}")
    ds = _load_dataset_for(extras, args.dataset)
    idx = args.eta_index
    if not 0 <= idx < ds.n_samples:
        from .exceptions import ConfigError
        raise ConfigError(f"--eta-index {idx} out of range")
    result = finetune(spec, theta, ds.etas[idx], cfg, out_dir=args.out)

    truth = ds.fields[idx]
    zs = predict_field(result.zero_shot, cfg.activation, benchmark, cfg.m)
    ft = predict_field(result.weights, cfg.activation, benchmark, cfg.m)
    metrics = {
        "eta_index": idx,
        "epochs": cfg.finetune_epochs,
        "zero_shot_rel_l2": relative_l2(zs, truth),
        "finetuned_rel_l2": relative_l2(ft, truth),
    }
    atomic_write_json(os.path.join(args.out, "finetune_metrics.json"), metrics)
    _say(args, f"zero-shot {metrics['zero_shot_rel_l2']:.4f} "
               f"-> finetuned {metrics['finetuned_rel_l2']:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    from .analysis import evaluate_dataset, relative_l2
    from .exceptions import FormatError
    from .fileio import atomic_write_json
    from .problems import load_dataset
    from .training import (load_pretrain_checkpoint, load_weights_checkpoint,
                           predict_field, read_checkpoint)

    ds = load_dataset(args.dataset)
    idx = _parse_indices(args.indices, ds.n_samples)
    mode, _ = read_checkpoint(args.checkpoint)
    if mode == "weights":
        benchmark, activation, weights = load_weights_checkpoint(args.checkpoint)
        if benchmark != ds.benchmark:
            raise FormatError(
                f"checkpoint is {benchmark!r}, dataset is {ds.benchmark!r}")
        pred = predict_field(weights, activation, benchmark, ds.etas.shape[1])
        errors = [relative_l2(pred, ds.fields[i]) for i in idx]
        metrics = {"per_sample": errors, "mean": sum(errors) / len(errors),
                   "indices": idx, "checkpoint_kind": "weights"}
    else:
        benchmark, spec, theta, _, _, _, _ = load_pretrain_checkpoint(
            args.checkpoint)
        if benchmark != ds.benchmark:
            raise FormatError(
                f"checkpoint is {benchmark!r}, dataset is {ds.benchmark!r}")
        metrics = evaluate_dataset(spec, theta, ds, idx, spec.activation)
        metrics["checkpoint_kind"] = "pretrain"
    atomic_write_json(args.out, metrics)
    _say(args, f"mean relative L2 over {len(idx)} samples: {metrics['mean']:.5f}")
    return 0


def cmd_analyze(args) -> int:
    handler = globals()[f"_analyze_{args.kind.replace('-', '_')}"]
    return handler(args)


def _analyze_spectrum(args) -> int:
    from .analysis import write_spectrum_csv
    from .problems import load_dataset
    from .training import (load_pretrain_checkpoint, load_weights_checkpoint,
                           read_checkpoint)

    mode, _ = read_checkpoint(args.checkpoint)
    if mode == "weights":
        _, _, weights = load_weights_checkpoint(args.checkpoint)
    else:
        _, spec, theta, _, _, _, _ = load_pretrain_checkpoint(args.checkpoint)
        if args.dataset is None:
            from .exceptions import ConfigError
            raise ConfigError(
                "--dataset is required for a pretrain checkpoint "
                "(weights are generated from a task's sensor values)")
        ds = load_dataset(args.dataset)
        weights = spec.generate_weights(theta, ds.etas[args.index])
    write_spectrum_csv(weights, args.out)
    return 0


def _analyze_freq_error(args) -> int:
    from .analysis import freq_error_trace, write_freq_error_csv

    cfg, extras = load_train_config(args.config, {"seed": args.seed})
    ds = _load_dataset_for(extras, args.dataset)
    n_train = extras.get("n_train")
    if n_train:
        from .problems import Dataset
        ds = Dataset(ds.benchmark, ds.sensors, ds.etas[: int(n_train)],
                     ds.fields[: int(n_train)])
    records = freq_error_trace(ds, cfg, args.index, args.stride)
    write_freq_error_csv(records, args.out)
    return 0


def _analyze_theorem1(args) -> int:
    import numpy as np

    from .analysis import truncation_errors, verify_theorem1
    from .fileio import atomic_write_json
    from .rng import stream

    rng = stream(args.seed, "theorem1-cli")
    sizes = [int(s) for s in args.sizes.split(",")]
    report = {}
    for n in sizes:
        p_mins, monotone = [], True
        for _ in range(args.n):
            w = rng.standard_normal(n)
            errs = truncation_errors(w)
            monotone &= bool(np.all(np.diff(errs) <= 1e-12))
            p_mins.append(verify_theorem1(w, args.eps))
        report[str(n)] = {
            "p_min_mean": float(np.mean(p_mins)),
            "p_min_max": int(max(p_mins)),
            "errors_monotone": monotone,
        }
    atomic_write_json(args.out, report)
    return 0


def _analyze_theorem2(args) -> int:
    from .analysis import run_theorem2_sweep
    from .fileio import atomic_write_json

    summary = run_theorem2_sweep(args.n, args.units, args.eps,
                                 args.alpha_scale, args.seed)
    atomic_write_json(args.out, summary)
    _say(args, f"{summary['n_hold']}/{summary['n']} instances hold")
    return 0


def _analyze_params(args) -> int:
    from .fileio import atomic_write_json
    from .hypernet import parameter_count

    cfg, _ = load_train_config(args.config)
    spec = cfg.model_spec()
    counts = {mode: parameter_count(spec, mode)
              for mode in ("fourier_reduced", "full_spectrum", "single_hyper")}
    report = {
        "counts": counts,
        "ratio_fourier_to_full": counts["fourier_reduced"] / counts["full_spectrum"],
        "main_net_params": spec.arch.n_params(),
        "truncations": spec.truncations(),
    }
    atomic_write_json(args.out, report)
    _say(args, f"fourier/full parameter ratio: "
               f"{report['ratio_fourier_to_full']:.4f}")
    return 0


def _analyze_continuity(args) -> int:
    from .analysis import continuity_study
    from .fileio import atomic_write_json

    x0s = tuple(float(v) for v in args.x0.split(","))
    report = continuity_study(x0s, seed=args.seed, steps=args.steps,
                              lr=args.lr, target_loss=args.target_loss)
    os.makedirs(args.out, exist_ok=True)
    report.to_csv(os.path.join(args.out, "continuity.csv"))
    atomic_write_json(os.path.join(args.out, "continuity.json"), {
        "x0s": list(report.x0s),
        "d12": report.d12,
        "d23": report.d23,
        "final_losses": report.final_losses,
        "reached_target": report.reached_target,
        "majority_closer": report.majority_closer,
    })
    _say(args, f"majority of layers closer for nearby tasks: "
               f"{report.majority_closer}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hyperpde",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample tasks and solve references")
    g.add_argument("--benchmark", required=True)
    g.add_argument("--n-samples", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--m", type=int, default=100)
    g.add_argument("--out", required=True)
    g.add_argument("--quiet", action="store_true")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("pretrain", help="fit hypernetworks over a dataset")
    t.add_argument("--config", required=True)
    t.add_argument("--dataset", help="override the config's dataset path")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--mode", choices=["fourier_reduced", "full_spectrum",
                                      "single_hyper"])
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_pretrain)

    f = sub.add_parser("finetune", help="adapt generated weights to one task")
    f.add_argument("--config", required=True)
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--dataset", help="override the config's dataset path")
    f.add_argument("--eta-index", type=int, required=True)
    f.add_argument("--epochs", type=int, help="override finetune_epochs")
    f.add_argument("--out", required=True)
    f.add_argument("--quiet", action="store_true")
    f.set_defaults(func=cmd_finetune)

    e = sub.add_parser("evaluate", help="relative L2 against a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--indices", default="0:1",
                   help="comma list or lo:hi slice of sample indices")
    e.add_argument("--out", required=True)
    e.add_argument("--quiet", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("analyze", help="diagnostics and theorem checks")
    asub = a.add_subparsers(dest="kind", required=True)

    sp = asub.add_parser("spectrum", help="per-layer weight spectra CSV")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--dataset")
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_analyze)

    fe = asub.add_parser("freq-error", help="training-time spectral error")
    fe.add_argument("--config", required=True)
    fe.add_argument("--dataset")
    fe.add_argument("--index", type=int, default=0)
    fe.add_argument("--stride", type=int, default=10)
    fe.add_argument("--seed", type=int)
    fe.add_argument("--out", required=True)
    fe.set_defaults(func=cmd_analyze)

    t1 = asub.add_parser("theorem1", help="codec truncation error check")
    t1.add_argument("--n", type=int, default=100)
    t1.add_argument("--sizes", default="65,128,4160")
    t1.add_argument("--eps", type=float, default=1e-3)
    t1.add_argument("--seed", type=int, default=0)
    t1.add_argument("--out", required=True)
    t1.set_defaults(func=cmd_analyze)

    t2 = asub.add_parser("theorem2", help="gradient dominance sweep")
    t2.add_argument("--n", type=int, default=1000)
    t2.add_argument("--units", type=int, default=8)
    t2.add_argument("--eps", type=float, default=1e-6)
    t2.add_argument("--alpha-scale", type=float, default=1.0)
    t2.add_argument("--seed", type=int, default=0)
    t2.add_argument("--out", required=True)
    t2.add_argument("--quiet", action="store_true")
    t2.set_defaults(func=cmd_analyze)

    pa = asub.add_parser("params", help="parameter counts per mode")
    pa.add_argument("--config", required=True)
    pa.add_argument("--out", required=True)
    pa.add_argument("--quiet", action="store_true")
    pa.set_defaults(func=cmd_analyze)

    co = asub.add_parser("continuity", help="weight distance across tasks")
    co.add_argument("--x0", default="0.4,0.5,2.0")
    co.add_argument("--seed", type=int, default=0)
    co.add_argument("--steps", type=int, default=1500)
    co.add_argument("--lr", type=float, default=1e-3)
    co.add_argument("--target-loss", type=float, default=1e-3)
    co.add_argument("--out", required=True)
    co.add_argument("--quiet", action="store_true")
    co.set_defaults(func=cmd_analyze)

    return p


def main(argv=None) -> int:
    from .exceptions import (ConfigError, FormatError, HyperPdeError,
                             NumericalError)
    try:
        _apply_thread_env()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except (FormatError, OSError) as e:
        print(f"i/o failure: {e}", file=sys.stderr)
        return 4
    except HyperPdeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

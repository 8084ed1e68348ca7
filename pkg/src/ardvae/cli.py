"""Command-line entry point: ``ardvae {train,eval,gradcheck,report,synth}``.

Exit status is 0 on success, 2 on usage or validation errors and 1 on
runtime failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .checkpoint import CheckpointVersionError, load_checkpoint, save_checkpoint
from .config import PRESETS, ConfigError, TrainConfig, preset
from .data import DataFormatError, SplitSpec, Standardizer, load_matrix_file, split, synth_generate, write_flat
from .gradcheck import check_gradients, toy_problem
from .models import Variant, estimate_test_score, trailing_mean
from .numerics import RngStream, deterministic_mode
from .optim import Trainer, kl_w_scale_for

OUT_DIR_ENV = "ARDVAE_OUT_DIR"
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("ardvae")


class UsageError(Exception):
    pass


def _out_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUT_DIR_ENV) or "runs")


def _resolve_data(path_str: str, base: Path | None) -> Path:
    if not path_str:
        raise UsageError("data_path: no data file configured (set data_path or pass --data)")
    p = Path(path_str)
    if not p.is_absolute() and not p.exists() and base is not None and (base / p).exists():
        p = base / p
    if not p.exists():
        raise UsageError(f"data file not found: {p}")
    return p


def _load_data(path: Path, fmt: str):
    try:
        return load_matrix_file(path, fmt or None)
    except DataFormatError as exc:
        raise UsageError(str(exc)) from None


class _MetricsSink:
    def __init__(self, path: Path, append: bool):
        self.path = path
        new = not append or not path.exists()
        self.fh = open(path, "a" if not new else "w", newline="")
        if new:
            self.fh.write(",".join(analysis.METRIC_FIELDS) + "\n")

    def __call__(self, row: analysis.RunMetrics):
        self.fh.write(",".join(analysis.format_cell(getattr(row, f)) for f in analysis.METRIC_FIELDS) + "\n")

    def close(self):
        self.fh.close()


def cmd_train(args) -> int:
    base = None
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        config = ckpt.config
    elif args.preset:
        config = preset(args.preset)
    elif args.config:
        cpath = Path(args.config)
        if not cpath.exists():
            raise UsageError(f"config file not found: {cpath}")
        config = TrainConfig.load(cpath)
        base = cpath.parent
    else:
        raise UsageError("one of --config, --preset or --resume is required")
    if args.seed is not None:
        config.seed = args.seed
    if args.deterministic is not None:
        config.deterministic = args.deterministic
    if args.data:
        config.data_path = args.data
    if args.iterations is not None:
        config.iterations, config.epochs = args.iterations, 0
    config.validate()
    if args.dry_run:
        sys.stdout.write(config.dumps())
        return EXIT_OK

    data = _load_data(_resolve_data(config.data_path, base), config.data_format)
    if config.train_count:
        train_set, test_set = split(data, SplitSpec(config.train_count, config.test_count, config.split_seed))
    else:
        train_set, test_set = data, None
    scaler = Standardizer.fit(train_set.X, config.standardize)
    train_set.X = scaler.transform(train_set.X)
    if test_set is not None:
        test_set.X = scaler.transform(test_set.X)

    out = _out_dir(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    rng = RngStream(config.seed)
    if args.resume:
        if ckpt.data_dim != train_set.dim:
            raise UsageError(f"checkpoint expects {ckpt.data_dim} columns, data has {train_set.dim}")
        trainer = Trainer(config, train_set, rng, test_set, ckpt.state, ckpt.opt, ckpt.loop)
    else:
        trainer = Trainer(config, train_set, rng, test_set)

    ckpt_root = out / "checkpoints"

    def on_checkpoint(t: Trainer):
        save_checkpoint(ckpt_root / f"iter-{t.loop.iteration:07d}", config, t.state, t.opt, t.loop, scaler.to_dict())

    sink = _MetricsSink(out / "metrics.csv", append=bool(args.resume))
    try:
        trainer.run(on_metrics=sink, on_checkpoint=on_checkpoint)
    except OSError as exc:
        sink.close()
        try:
            on_checkpoint(trainer)
            log.error("I/O failure (%s); checkpoint written before abort", exc)
        except OSError:
            log.error("I/O failure (%s); checkpoint could not be written", exc)
        return EXIT_RUNTIME
    sink.close()

    final_dir = save_checkpoint(out / "final", config, trainer.state, trainer.opt, trainer.loop, scaler.to_dict())
    report = analysis.relevance_report(trainer.state, config.retention_rule, config.retention_threshold)
    (out / "report.txt").write_text(report.dumps())
    train_bd = trainer.evaluate(train_set, "final-train")
    print(f"final checkpoint: {final_dir}")
    print(f"train bound: {train_bd.total:.4f} nats/datapoint "
          f"(recon {train_bd.recon:.4f}, kl_z {train_bd.kl_z:.4f}, kl_w {train_bd.kl_w:.6f})")
    if trainer.loop.test_scores:
        print(f"test bound (mean of last {min(config.eval_window, len(trainer.loop.test_scores))} evaluations): "
              f"{trailing_mean(trainer.loop.test_scores, config.eval_window):.4f} nats/datapoint")
    print(f"retained latent dimensions: {report.retained_count} of {trainer.state.latent_dim}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    data = _load_data(_resolve_data(args.data, None), args.format or "")
    if data.dim != ckpt.data_dim:
        raise UsageError(f"data has {data.dim} columns, checkpoint model expects {ckpt.data_dim}")
    X = data.X
    if ckpt.standardizer:
        s = ckpt.standardizer
        X = Standardizer(np.array(s["offset"]), np.array(s["scale"]), s["mode"]).transform(X)
    n_train = ckpt.config.train_count or data.n
    rng = ckpt.rng().split("cli-eval").split(args.seed)
    with deterministic_mode(ckpt.config.deterministic):
        mean, se = estimate_test_score(ckpt.state, X, args.window, rng, n_w=ckpt.config.n_w, n_z=ckpt.config.n_z,
                                       kl_w_scale=kl_w_scale_for(ckpt.config, n_train))
    print(f"checkpoint iteration: {ckpt.iteration}")
    print(f"bound over {args.window} evaluations: {mean:.6f} +- {se:.6f} nats/datapoint "
          f"({mean / data.dim:.6f} per dimension)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    sizes = tuple(int(s) for s in args.sizes.split(","))
    if len(sizes) != 3:
        raise UsageError("--sizes takes input,hidden,latent")
    variant = Variant.parse(args.variant)
    state, x, noise = toy_problem(variant, sizes, batch=args.batch, seed=args.seed, n_w=args.n_w, n_z=args.n_z)
    kw = {"n_w": args.n_w, "n_z": args.n_z, "kl_w_scale": 0.5} if variant is Variant.SGVB_ARD else {}
    results = check_gradients(state, x, noise, corrupt=args.corrupt, **kw)
    ok = True
    print(f"{'block':<24} {'max rel err':>12} {'checked':>8} {'skipped':>8}")
    for r in results:
        ok &= r.ok
        print(f"{r.name:<24} {r.max_rel_error:>12.3e} {r.checked:>8d} {r.skipped:>8d}{'' if r.ok else '  FAIL'}")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_report(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    rule = args.rule or ckpt.config.retention_rule
    threshold = args.threshold if args.threshold is not None else ckpt.config.retention_threshold
    report = analysis.relevance_report(ckpt.state, rule, threshold)
    norms = analysis.weight_col_sq_norms(ckpt.state.decoder)
    out = Path(args.out_dir) if args.out_dir else Path(args.checkpoint)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.dumps())
    (out / "weight_norms.csv").write_text("dim,weight_col_sq_norm\n" + "".join(
        f"{d},{format(float(v), '.17g')}\n" for d, v in enumerate(norms)))
    if ckpt.state.ard is None:
        print(f"{'dim':>4} {'|W_d|^2':>12} retained")
        for r in report.dims:
            print(f"{r.index:>4} {r.weight_col_sq_norm:>12.4g} {'yes' if r.retained else 'no'}")
        print(f"retained {report.retained_count} of {len(report.dims)} ({report.rule}, threshold {threshold:g})")
    else:
        print(report.table())
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.k > args.D:
        raise UsageError(f"k={args.k} exceeds D={args.D}")
    if args.n < 1:
        raise UsageError("n must be >= 1")
    d = synth_generate(args.k, args.D, args.n, args.noise, args.nonlinearity, rng=RngStream(args.seed))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_flat(out, d.X)
    meta = dict(d.meta, format="flat_f32", ground_truth_latent_dim=args.k)
    Path(str(out) + ".meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"wrote {out} ({d.n} x {d.dim}), metadata {out}.meta.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ardvae", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file or preset")
    t.add_argument("--config")
    t.add_argument("--preset", choices=sorted(PRESETS))
    t.add_argument("--resume", help="checkpoint directory to continue from")
    t.add_argument("--data", help="override data_path")
    t.add_argument("--seed", type=int)
    t.add_argument("--iterations", type=int)
    t.add_argument("--out-dir")
    t.add_argument("--deterministic", dest="deterministic", action="store_true", default=None)
    t.add_argument("--no-deterministic", dest="deterministic", action="store_false")
    t.add_argument("--dry-run", action="store_true", help="validate and print the resolved config")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="average the bound of a checkpoint over repeated evaluations")
    e.add_argument("checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--format", choices=["csv", "flat_f32"])
    e.add_argument("--window", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of the bound gradients")
    g.add_argument("--variant", default="sgvb", choices=[v.value for v in Variant])
    g.add_argument("--sizes", default="6,8,3", help="input,hidden,latent")
    g.add_argument("--batch", type=int, default=4)
    g.add_argument("--n-w", type=int, default=1)
    g.add_argument("--n-z", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)

    r = sub.add_parser("report", help="relevance table and decoder weight norms of a checkpoint")
    r.add_argument("checkpoint")
    r.add_argument("--rule", choices=["ard_mass", "weight_norm"])
    r.add_argument("--threshold", type=float)
    r.add_argument("--out-dir")
    r.set_defaults(func=cmd_report)

    s = sub.add_parser("synth", help="write a synthetic dataset with known latent dimensionality")
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--D", type=int, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--nonlinearity", default="linear", choices=["linear", "tanh-mlp"])
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, CheckpointVersionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FloatingPointError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

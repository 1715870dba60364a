"""Command-line experiment runner.

Subcommands: ``train``, ``eval``, ``ablate``, ``gen-synthetic``.
Exit codes: 0 ok, 1 config error, 2 dataset error, 3 divergence,
4 checkpoint or dimension mismatch.
"""

import argparse
import sys
from pathlib import Path

from .config import format_config, load_config, parse_config_text
from .data import generate_synthetic, parse_feature_csv, write_feature_csv
from .errors import CheckpointError, ConfigError, DatasetError, DivergenceDetected, SphereReIDError
from .estimator import SphereReID
from .sampler import AuditReport
from .train import evaluate_model, fit_experiment

EXIT_OK, EXIT_CONFIG, EXIT_DATASET, EXIT_DIVERGED, EXIT_CHECKPOINT = 0, 1, 2, 3, 4

AXES = ("structure", "sampling", "warmup", "dropout", "bias")
DROPOUT_RATIOS = (0.0, 0.25, 0.5, 0.75)


def _exit_code(exc):
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DatasetError):
        return EXIT_DATASET
    if isinstance(exc, DivergenceDetected):
        return EXIT_DIVERGED
    return EXIT_CHECKPOINT


def _resolve_config(args):
    config = load_config(args.config)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "eval_every", None) is not None:
        changes["eval_every"] = args.eval_every
    if getattr(args, "no_camera_exclusion", False):
        changes["camera_exclusion"] = False
    if getattr(args, "synthetic", None) not in (None, "default"):
        try:
            text = Path(args.synthetic).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read synthetic spec {args.synthetic}: {exc}") from exc
        changes["synthetic"] = parse_config_text(text, base=config).synthetic
    return config.replace(**changes) if changes else config


def _load_dataset(args, config):
    if getattr(args, "dataset", None):
        return parse_feature_csv(args.dataset)
    return generate_synthetic(config.synthetic)


def _write_report(out, report):
    (out / "metrics.txt").write_text(report.to_text())
    (out / "cmc.csv").write_text(report.cmc_csv())


def _audit_text(model):
    if model.sampling == "balanced":
        header = f"sampling=balanced P={model.P} K={model.K}\n"
        return header + model.audit_.to_text()
    counts = {int(c): int(n) for c, n in zip(model.classes_, model.class_counts_)}
    report = AuditReport(counts=counts, appearances=dict(model.exposure_),
                         epochs=len(model.log_))
    return f"sampling=imbalanced batch_size={model.batch_size}\n" + report.to_text()


def _train_one(config, dataset, out):
    out.mkdir(parents=True, exist_ok=True)
    model = fit_experiment(config, dataset)
    report = evaluate_model(model, dataset, config)
    (out / "config.txt").write_text(format_config(config))
    (out / "train_log.csv").write_text(model.log_.to_csv())
    (out / "timing.csv").write_text(model.log_.to_csv(include_time=True))
    model.save(out / "checkpoint.npz")
    model.log_.checkpoint = str(out / "checkpoint.npz")
    (out / "sampler_audit.txt").write_text(_audit_text(model))
    _write_report(out, report)
    return model, report


def cmd_train(args):
    try:
        config = _resolve_config(args)
        dataset = _load_dataset(args, config)
        _, report = _train_one(config, dataset, Path(args.out))
    except SphereReIDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_eval(args):
    try:
        config = _resolve_config(args)
        try:
            model = SphereReID.load(args.checkpoint)
        except (OSError, TypeError) as exc:
            raise CheckpointError(f"cannot load checkpoint {args.checkpoint}: {exc}") from exc
        dataset = _load_dataset(args, config)
        if dataset.dim != model.n_features_in_:
            raise CheckpointError(
                f"dataset has {dataset.dim} features, checkpoint expects {model.n_features_in_}"
            )
        report = evaluate_model(model, dataset, config, metric=args.metric)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_report(out, report)
    except SphereReIDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    print(report.to_text(), end="")
    return EXIT_OK


def ablation_cells(config, axis):
    """``(row, column, config)`` triples laid out like the published tables."""
    if axis == "structure":
        return [
            (f"network-{v}", loss,
             config.replace(variant=v, loss=loss, dropout=0.5 if v == "D" else config.dropout))
            for v in "ABCD" for loss in ("sphere", "softmax")
        ]
    if axis in ("sampling", "warmup"):
        imbalanced = config.replace(sampling="imbalanced", warmup=True,
                                    batch_size=config.P * config.K)
        return [
            ("balanced, w/ warming-up", "", config.replace(sampling="balanced", warmup=True)),
            ("imbalanced, w/ warming-up", "", imbalanced),
            ("balanced, w/o warming-up", "", config.replace(sampling="balanced", warmup=False)),
        ]
    if axis == "dropout":
        return [(f"{r:g}", "", config.replace(dropout=r)) for r in DROPOUT_RATIOS]
    if axis == "bias":
        return [("w/ bias", "", config.replace(bias=True)),
                ("w/o bias", "", config.replace(bias=False))]
    raise ConfigError(f"axis must be one of {AXES}, got {axis!r}")


def _fmt_cell(result):
    if isinstance(result, Exception):
        return f"{'failed':>8} {'':>8}"
    return f"{result.rank1:8.4f} {result.map:8.4f}"


def format_ablation(axis, cells, results):
    """Text table: one row per setting, rank-1 and mAP per column group."""
    columns = list(dict.fromkeys(col for _, col, _ in cells))
    rows = list(dict.fromkeys(row for row, _, _ in cells))
    width = max(len(r) for r in rows + [axis])
    head1 = f"{axis:<{width}}" + "".join(f" | {col or 'result':^17}" for col in columns)
    head2 = f"{'':<{width}}" + "".join(f" | {'rank-1':>8} {'mAP':>8}" for _ in columns)
    lines = [head1, head2, "-" * len(head1)]
    for row in rows:
        line = f"{row:<{width}}"
        for col in columns:
            line += " | " + _fmt_cell(results.get((row, col)))
        lines.append(line)
    return "\n".join(lines) + "\n"


def ablation_expectations(axis, results):
    """Soft orderings from the published ablations, as report lines."""
    def ok(a, b):
        ra, rb = results.get(a), results.get(b)
        if ra is None or rb is None or isinstance(ra, Exception) or isinstance(rb, Exception):
            return "unavailable"
        return "holds" if ra.rank1 >= rb.rank1 else "does not hold"

    if axis == "structure":
        return [f"expectation sphere >= softmax rank-1 (network-D): "
                f"{ok(('network-D', 'sphere'), ('network-D', 'softmax'))}"]
    if axis in ("sampling", "warmup"):
        best = ("balanced, w/ warming-up", "")
        return [
            f"expectation balanced+warmup >= imbalanced rank-1: "
            f"{ok(best, ('imbalanced, w/ warming-up', ''))}",
            f"expectation balanced+warmup >= no-warmup rank-1: "
            f"{ok(best, ('balanced, w/o warming-up', ''))}",
        ]
    return []


def run_ablation(config, dataset, axis, out=None):
    """Run every cell of ``axis``; failed cells hold their exception."""
    results = {}
    cells = ablation_cells(config, axis)
    for row, col, cell_config in cells:
        name = "_".join(part for part in (row, col) if part)
        safe = "".join(ch if ch.isalnum() or ch in "-." else "_" for ch in name)
        try:
            if out is not None:
                _, report = _train_one(cell_config, dataset, out / safe)
            else:
                report = evaluate_model(fit_experiment(cell_config, dataset), dataset, cell_config)
            results[(row, col)] = report
        except SphereReIDError as exc:
            results[(row, col)] = exc
    return cells, results


def cmd_ablate(args):
    try:
        config = _resolve_config(args)
        dataset = _load_dataset(args, config)
        ablation_cells(config, args.axis)
    except SphereReIDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cells, results = run_ablation(config, dataset, args.axis, out)
    text = format_ablation(args.axis, cells, results)
    text += "".join(line + "\n" for line in ablation_expectations(args.axis, results))
    (out / f"ablation_{args.axis}.txt").write_text(text)
    print(text, end="")
    failures = [r for r in results.values() if isinstance(r, Exception)]
    for exc in failures:
        print(f"error: {exc}", file=sys.stderr)
    return _exit_code(failures[0]) if failures else EXIT_OK


def cmd_gen_synthetic(args):
    try:
        config = _resolve_config(args)
        dataset = generate_synthetic(config.synthetic)
    except SphereReIDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_feature_csv(dataset, out)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="spherereid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=True):
        p.add_argument("--config", help="config file, or preset name: reference (default), desk")
        if dataset:
            src = p.add_mutually_exclusive_group()
            src.add_argument("--dataset", help="feature CSV with train/query/gallery splits")
            src.add_argument("--synthetic", nargs="?", const="default",
                             help="generate the synthetic set (optionally from a spec file)")
        else:
            p.add_argument("--synthetic", nargs="?", const="default",
                           help="synthetic spec file (synthetic.* keys)")
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train, evaluate and write run artefacts")
    common(p)
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.add_argument("--no-camera-exclusion", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on query/gallery")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--metric", choices=("cosine", "euclidean"))
    p.add_argument("--no-camera-exclusion", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run one ablation axis")
    common(p)
    p.add_argument("--axis", required=True, choices=AXES)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gen-synthetic", help="write the synthetic dataset as CSV")
    common(p, dataset=False)
    p.set_defaults(func=cmd_gen_synthetic)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

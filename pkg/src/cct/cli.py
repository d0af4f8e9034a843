"""``cct`` command line: plan, split, train, eval, cv, report, synth.

Exit codes: 0 success, 2 usage, 3 data, 4 geometry/config, 5 numeric.
Every output file carries a run manifest (inputs with their SHA-256,
seeds, tool versions) so that any result can be replayed.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import platform
import sys
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, metrics, plots
from .datasplit import (
    LabeledDataset, SplitPlan, ingest, merge, policy1, policy2, policy3, size_table,
)
from .errors import ConfigError, CctError, DataError, NumericError, UsageError
from .model import CctConfig, count_params, load_preset, plan_tokenizer
from .model.checkpoint import load_checkpoint, save_checkpoint
from .model.config import PRESET_NAMES
from .numerics import set_nan_check
from .synthetic import write_task
from .trainer import (
    ImageStore, TrainConfig, TrainHistory, evaluate, format_epoch, run_policy2, train,
)

# -- run config ----------------------------------------------------------------

@dataclass(frozen=True)
class DataConfig:
    train_manifest: Path | None = None
    test_manifest: Path | None = None
    channels: int | None = None
    normalize: dict | None = None


@dataclass(frozen=True)
class RunConfig:
    model: CctConfig
    train: TrainConfig
    data: DataConfig
    source: str


def _run_config_schema() -> dict:
    text = resources.files("cct.schemas").joinpath("run_config.schema.json").read_text()
    return json.loads(text)


def load_run_config(spec: str) -> RunConfig:
    """Read a run-config JSON file, or a shipped preset by name."""
    path = Path(spec)
    if path.is_file():
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{spec}: invalid JSON ({exc})") from None
        base = path.parent
    elif Path(spec).stem in PRESET_NAMES and not path.exists():
        doc = load_preset(Path(spec).stem)
        base = Path.cwd()
    else:
        raise ConfigError(f"config {spec!r} is neither a file nor a shipped preset "
                          f"({', '.join(PRESET_NAMES)})")
    try:
        jsonschema.validate(doc, _run_config_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{spec}: {where}: {exc.message}") from None
    model = CctConfig.from_dict(doc.get("model", {}))
    tconf = TrainConfig.from_dict(doc.get("train", {}))
    data = dict(doc.get("data", {}))
    for key in ("train_manifest", "test_manifest"):
        if data.get(key) is not None:
            data[key] = base / data[key]
    dconf = DataConfig(**data)
    if dconf.channels is not None and dconf.channels != model.in_channels:
        raise ConfigError(f"data.channels {dconf.channels} disagrees with model.in_channels "
                          f"{model.in_channels}")
    return RunConfig(model, tconf, dconf, spec)


# -- helpers -------------------------------------------------------------------

def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_manifest(command: str, inputs: dict, **extra) -> dict:
    """Inputs with digests, seeds and versions; embedded in every output."""
    return {
        "tool": "cct", "version": __version__, "command": command,
        "python": platform.python_version(), "numpy": np.__version__,
        "inputs": {k: {"path": str(v), "sha256": _sha256(v)} for k, v in sorted(inputs.items())
                   if v is not None},
        **extra,
    }


def _write(path, text: str) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonneg_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _datasets(args, rc: RunConfig | None) -> LabeledDataset:
    """Samples that plan ids resolve against: --data manifests or the config's."""
    manifests = list(args.data or [])
    if not manifests and rc is not None:
        manifests = [m for m in (rc.data.train_manifest, rc.data.test_manifest) if m is not None]
    if not manifests:
        raise UsageError("no data: pass --data MANIFEST... or set data.train_manifest in the config")
    return merge(*[ingest(m) for m in manifests]), manifests


def _store(dataset: LabeledDataset, model: CctConfig, rc: RunConfig | None, precision: str):
    normalize = rc.data.normalize if rc is not None else None
    return ImageStore(dataset, model.image_size, model.in_channels, normalize, precision)


def _report_schema() -> dict:
    return json.loads(resources.files("cct.schemas").joinpath("report.schema.json").read_text())


def validate_report(doc: dict) -> None:
    try:
        jsonschema.validate(doc, _report_schema())
    except jsonschema.ValidationError as exc:
        raise DataError(f"report does not match schema: {exc.message}") from None


def _print_report(report: metrics.MetricsReport, out) -> None:
    cm = report.confusion
    print(f"confusion: tp={cm.tp} fp={cm.fp} fn={cm.fn} tn={cm.tn}", file=out)
    cells = []
    for name in metrics.SCALAR_NAMES:
        value = getattr(report, name)
        cells.append(f"{name} {'n/a' if value is None else metrics.percent_str(value)}")
    print(" | ".join(cells), file=out)


# -- commands ------------------------------------------------------------------

def cmd_plan(args, out) -> int:
    rc = load_run_config(args.config)
    try:
        plan = plan_tokenizer(rc.model)
    except CctError as exc:
        print(f"tokenizer geometry ({rc.source}):", file=sys.stderr)
        raise exc
    print(f"config: {rc.source} (variant {rc.model.variant})", file=out)
    print(plan.table(), file=out)
    print(f"parameters = {count_params(rc.model)}", file=out)
    return 0


def cmd_split(args, out) -> int:
    train_ds = ingest(args.train_manifest, "official_train")
    test_ds = ingest(args.test_manifest, "official_test")
    run = run_manifest("split", {"train_manifest": args.train_manifest,
                                 "test_manifest": args.test_manifest}, seed=args.seed)
    stratify = not args.no_stratify
    if args.policy == "policy1":
        plans = [policy1(train_ds, test_ds, args.val_fraction, args.seed)]
        names = ["policy1.json"]
    elif args.policy == "policy3":
        plans = [policy3(train_ds, test_ds, args.ratio, args.seed, stratify)]
        names = ["policy3.json"]
    else:
        plans = policy2(train_ds, test_ds, args.k, args.seed, stratify)
        names = [f"policy2_fold{i:02d}.json" for i in range(len(plans))]
        _verify_folds(plans, merge(train_ds, test_ds))
    everything = merge(train_ds, test_ds)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, plan in zip(names, plans):
        plan.params["run"] = run
        _write(out_dir / name, plan.to_json())
    if args.policy == "policy2":
        print(f"{args.policy}: {len(plans)} folds, test sizes "
              f"{sorted({len(p.test_ids) for p in plans})}", file=out)
        print(size_table(plans[0], everything), file=out)
    else:
        print(f"{args.policy}:", file=out)
        print(size_table(plans[0], everything), file=out)
    print(f"wrote {len(plans)} plan file(s) to {out_dir}", file=out)
    return 0


def _verify_folds(plans, merged: LabeledDataset) -> None:
    seen = set()
    for p in plans:
        fold = set(p.test_ids)
        if seen & fold:
            raise DataError("policy2 folds overlap")
        seen |= fold
        if p.all_ids != set(merged.ids):
            raise DataError(f"policy2 fold {p.fold} does not cover the merged dataset")
    if seen != set(merged.ids):
        raise DataError("policy2 test folds do not cover the merged dataset")


def cmd_train(args, out) -> int:
    rc = load_run_config(args.config)
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.seed is not None:
        overrides["seed"] = args.seed
    tconf = dataclasses.replace(rc.train, **overrides) if overrides else rc.train
    plan = SplitPlan.load(args.plan)
    dataset, manifests = _datasets(args, rc)
    store = _store(dataset, rc.model, rc, tconf.precision)
    val_ids = plan.test_ids if args.validate_on == "test" else plan.val_ids
    inputs = {"config": args.config if Path(args.config).is_file() else None, "plan": args.plan}
    inputs.update({f"manifest{i}": m for i, m in enumerate(manifests)})
    run = run_manifest("train", inputs, seed=tconf.seed, validate_on=args.validate_on)
    log = (lambda line: print(line, file=out)) if args.verbose else None
    params, history = train(rc.model, tconf, plan, store, val_ids=val_ids,
                            record_time=args.record_time, log=log)
    history.run = dict(run, **history.run)
    _write(args.history, history.to_csv())
    if args.history_json:
        _write(args.history_json, history.to_json())
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, rc.model, args.out, run=run)
    if not args.verbose:
        print(format_epoch(history.records[-1]), file=out)
    if history.stopped_early:
        print(f"stopped early after epoch {history.records[-1].epoch}", file=out)
    return 0


def cmd_eval(args, out) -> int:
    params, model = load_checkpoint(args.checkpoint)
    rc = load_run_config(args.config) if args.config else None
    if rc is not None and rc.model != model:
        diff = sorted(k for k, v in rc.model.to_dict().items() if model.to_dict()[k] != v)
        raise ConfigError(f"checkpoint model config differs from {args.config} in: {', '.join(diff)}")
    plan = SplitPlan.load(args.plan)
    dataset, manifests = _datasets(args, rc)
    ids = {"test": plan.test_ids, "val": plan.val_ids, "train": plan.train_ids}[args.split]
    store = _store(dataset, model, rc, "fp64")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report, roc = evaluate(params, model, store, ids, with_macro=True)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    inputs = {"checkpoint": args.checkpoint, "plan": args.plan}
    inputs.update({f"manifest{i}": m for i, m in enumerate(manifests)})
    run = run_manifest("eval", inputs, split=args.split)
    doc = report.to_dict(run=run)
    validate_report(doc)
    _write(args.report, json.dumps(doc, indent=1, sort_keys=True) + "\n")
    if args.roc:
        if roc is None:
            print("warning: ROC CSV not written (single-category subset)", file=sys.stderr)
        else:
            _write(args.roc, roc.to_csv())
    _print_report(report, out)
    return 0


def cmd_cv(args, out) -> int:
    rc = load_run_config(args.config)
    train_m = args.train_manifest or rc.data.train_manifest
    test_m = args.test_manifest or rc.data.test_manifest
    if train_m is None or test_m is None:
        raise UsageError("cv needs --train-manifest and --test-manifest (or both in the config)")
    tconf = rc.train if args.epochs is None else dataclasses.replace(rc.train, epochs=args.epochs)
    train_ds, test_ds = ingest(train_m, "official_train"), ingest(test_m, "official_test")
    store = _store(merge(train_ds, test_ds), rc.model, rc, tconf.precision)
    reports, average = run_policy2(rc.model, tconf, train_ds, test_ds, args.k, args.seed,
                                   args.jobs, not args.no_stratify, store)
    run = run_manifest("cv", {"train_manifest": train_m, "test_manifest": test_m},
                       seed=args.seed, train_seed=tconf.seed, k=args.k)
    print(f"{'fold':>7}  {'accuracy':>8}  {'precision':>9}  {'recall':>6}  {'f1':>6}  {'auc':>6}",
          file=out)
    for i, r in enumerate(reports + [average]):
        label = "average" if i == len(reports) else str(i + 1)
        auc = "n/a" if r.auc_roc is None else metrics.percent_str(r.auc_roc)
        print(f"{label:>7}  {metrics.percent_str(r.accuracy):>8}  {metrics.percent_str(r.precision):>9}"
              f"  {metrics.percent_str(r.recall):>6}  {metrics.percent_str(r.f1):>6}  {auc:>6}", file=out)
    if args.report:
        doc = average.to_dict(run=run)
        doc["fold_reports"] = [r.to_dict() for r in reports]
        validate_report(doc)
        _write(args.report, json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return 0


def cmd_report(args, out) -> int:
    if not (args.history or args.roc or args.cm):
        raise UsageError("report needs at least one of --history, --roc, --cm")
    svg_dir = Path(args.svg_dir)
    svg_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if args.history:
        hist = TrainHistory.from_csv(Path(args.history).read_text(encoding="utf-8"), args.history)
        run = run_manifest("report", {"history": args.history}, source=hist.run or None)
        _write(svg_dir / "accuracy.svg", plots.accuracy_plot(hist, run))
        _write(svg_dir / "loss.svg", plots.loss_plot(hist, run))
        written += ["accuracy.svg", "loss.svg"]
    if args.roc:
        curve = metrics.RocCurve.from_csv(Path(args.roc).read_text(encoding="utf-8"), args.roc)
        run = run_manifest("report", {"roc": args.roc})
        _write(svg_dir / "roc.svg", plots.roc_plot(curve, metrics.auc(curve), run))
        written.append("roc.svg")
    if args.cm:
        try:
            doc = json.loads(Path(args.cm).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{args.cm}: invalid JSON ({exc})") from None
        try:
            cm = metrics.ConfusionMatrix(doc["tp"], doc["fp"], doc["fn"], doc["tn"])
        except (KeyError, TypeError, UsageError) as exc:
            raise DataError(f"{args.cm}: needs integer tp/fp/fn/tn fields ({exc})") from None
        run = run_manifest("report", {"cm": args.cm})
        _write(svg_dir / "confusion.svg", plots.confusion_heatmap(cm, run))
        written.append("confusion.svg")
    print(f"wrote {', '.join(written)} to {svg_dir}", file=out)
    return 0


def cmd_synth(args, out) -> int:
    paths = write_task(args.out_dir, args.seed, args.n_train, args.n_test, args.size)
    print(f"wrote {paths['train']} and {paths['test']}", file=out)
    return 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cct",
        description="Compact Convolutional Transformer toolkit for binary image classification.",
        epilog="Exit codes: 0 success, 2 usage, 3 data, 4 geometry/config, 5 numeric failure. "
               "Set CCT_NAN_CHECK=1 (or pass --nan-check) to assert finiteness after every op.")
    parser.add_argument("--version", action="version", version=f"cct {__version__}")
    parser.add_argument("--nan-check", action="store_true",
                        help="fail with exit code 5 as soon as any op produces NaN/Inf")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    config_help = f"run-config JSON file or shipped preset name ({', '.join(PRESET_NAMES)})"

    p = sub.add_parser("plan", help="print the tokenizer geometry and parameter count")
    p.add_argument("--config", required=True, help=config_help)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("split", help="write train/val/test split plan JSON files")
    p.add_argument("--policy", required=True, choices=("policy1", "policy2", "policy3"),
                   help="policy1: official split; policy2: merged k-fold; "
                        "policy3: move training samples into test")
    p.add_argument("--train-manifest", required=True, help="official training manifest (path,label CSV)")
    p.add_argument("--test-manifest", required=True, help="official test manifest (path,label CSV)")
    p.add_argument("--seed", type=_nonneg_int, default=0, help="split seed (default 0)")
    p.add_argument("--k", type=_positive_int, default=10, help="policy2 fold count (default 10)")
    p.add_argument("--ratio", type=float, default=0.1,
                   help="policy3 target test/train ratio (default 0.1)")
    p.add_argument("--val-fraction", type=float, default=0.1,
                   help="policy1 stratified validation fraction of official train (default 0.1)")
    p.add_argument("--no-stratify", action="store_true",
                   help="policy2/3: ignore labels when assigning folds or moved samples")
    p.add_argument("--out-dir", required=True, help="directory for the plan file(s)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model on a split plan")
    p.add_argument("--config", required=True, help=config_help)
    p.add_argument("--plan", required=True, help="split plan JSON")
    p.add_argument("--data", nargs="+", metavar="MANIFEST",
                   help="manifests resolving the plan ids (default: the config's data section)")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--history", required=True, help="per-epoch history CSV output path")
    p.add_argument("--history-json", help="also write the history as JSON")
    p.add_argument("--epochs", type=_positive_int, help="override train.epochs")
    p.add_argument("--seed", type=_nonneg_int, help="override train.seed")
    p.add_argument("--validate-on", choices=("val", "test"), default="val",
                   help="ids used for the per-epoch validation pass (default: the plan's val ids)")
    p.add_argument("--record-time", action="store_true",
                   help="fill the history 'seconds' column (makes the CSV vary between runs)")
    p.add_argument("--verbose", action="store_true", help="print every epoch, not only the last")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a plan's test ids")
    p.add_argument("--checkpoint", required=True, help="checkpoint written by 'cct train'")
    p.add_argument("--plan", required=True, help="split plan JSON")
    p.add_argument("--data", nargs="+", metavar="MANIFEST",
                   help="manifests resolving the plan ids (default: the config's data section)")
    p.add_argument("--config", help="run config; its model section must match the checkpoint")
    p.add_argument("--split", choices=("test", "val", "train"), default="test",
                   help="which plan ids to evaluate (default test)")
    p.add_argument("--report", required=True, help="metrics report JSON output path")
    p.add_argument("--roc", help="ROC CSV output path (threshold,fpr,tpr)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="k-fold cross-validation over merged train+test (policy2)")
    p.add_argument("--config", required=True, help=config_help)
    p.add_argument("--train-manifest", help="official training manifest")
    p.add_argument("--test-manifest", help="official test manifest")
    p.add_argument("--k", type=_positive_int, default=10, help="fold count (default 10)")
    p.add_argument("--seed", type=_nonneg_int, default=0, help="fold assignment seed (default 0)")
    p.add_argument("--epochs", type=_positive_int, help="override train.epochs")
    p.add_argument("--jobs", type=_positive_int, default=1,
                   help="train folds in N worker processes; results do not depend on N")
    p.add_argument("--no-stratify", action="store_true", help="unstratified folds")
    p.add_argument("--report", help="aggregate + per-fold report JSON output path")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("report", help="render SVG plots from history, ROC and report files")
    p.add_argument("--history", help="history CSV from 'cct train'")
    p.add_argument("--roc", help="ROC CSV from 'cct eval'")
    p.add_argument("--cm", help="report JSON holding tp/fp/fn/tn")
    p.add_argument("--svg-dir", required=True, help="output directory for the SVG files")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="write the synthetic stripes task (PNG files + manifests)")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument("--seed", type=_nonneg_int, default=0, help="generator seed (default 0)")
    p.add_argument("--n-train", type=_positive_int, default=64, help="training images (default 64)")
    p.add_argument("--n-test", type=_positive_int, default=32, help="test images (default 32)")
    p.add_argument("--size", type=_positive_int, default=32, help="image side length (default 32)")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.nan_check:
        set_nan_check(True)
    try:
        with np.errstate(over="ignore", under="ignore"):
            return args.func(args, out)
    except CctError as exc:
        print(f"cct {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"cct {args.command}: numeric error: {exc}", file=sys.stderr)
        return NumericError.exit_code
    except OSError as exc:
        print(f"cct {args.command}: error: {exc}", file=sys.stderr)
        return DataError.exit_code


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()

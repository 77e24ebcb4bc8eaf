"""Operator surface: dataset tooling, staged runs, and report export.

Subcommands
    make-data   materialize one dataset container from a config
    run         execute pipeline stage(s) into an output directory
    report      collect run summaries into a comparison CSV

A run directory receives the resolved config (config.txt), per-epoch
metrics (metrics.jsonl), terminal numbers (summary.json), and the stage
artifacts downstream stages reload: contrast_params.npz,
classifier_params.npz + pseudo_labels.csv, final_params.npz +
selection.csv, bootstrap_params.npz. Exit codes: 0 ok, 2 config error,
3 io error, 4 numeric failure. On failure a machine-readable record
goes to stderr (and error.json in the run directory when one exists).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .config import (STAGES, RunConfig, build_dataset, build_phase_config,
                     load, render)
from .data import generate_synthetic, load_dataset, noise_accuracy, save_dataset
from .errors import (FormatError, InvalidArgument, NlabError, NumericFailure)
from .network import Network, init_params
from .pipeline import (STREAM_CLASSIFY, STREAM_PRETRAIN, ExperimentResult,
                       evaluate_top1, pretrain_contrastive,
                       run_bootstrap_variant, run_finetuning_phase,
                       train_classifier)
from .selection import (PseudoLabels, export_selection_csv,
                        generate_pseudo_labels)

CONTRAST_PARAMS = "contrast_params.npz"
CLASSIFIER_PARAMS = "classifier_params.npz"
FINAL_PARAMS = "final_params.npz"
BOOTSTRAP_PARAMS = "bootstrap_params.npz"
PSEUDO_LABELS_CSV = "pseudo_labels.csv"
SELECTION_CSV = "selection.csv"
METRICS_FILE = "metrics.jsonl"
SUMMARY_FILE = "summary.json"
CONFIG_ECHO = "config.txt"
ERROR_FILE = "error.json"

REPORT_COLUMNS = ("run_dir", "status", "stage", "seed", "loss", "noise_type",
                  "noise_ratio", "pretrained", "pseudo_label_accuracy",
                  "classify_test_top1", "final_test_top1",
                  "bootstrap_test_top1", "clean_subset_size",
                  "clean_subset_accuracy")

# threadpool_limits reverts its cap when garbage collected, so the
# controller object must outlive the command.
_thread_limiter = None


def _apply_thread_cap() -> None:
    global _thread_limiter
    raw = os.environ.get("NLAB_THREADS", "").strip()
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise InvalidArgument(f"NLAB_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise InvalidArgument("NLAB_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits
    _thread_limiter = threadpool_limits(limits=n)


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _save_params(path: str, params: dict) -> None:
    np.savez(path, **params)


def _load_params(path: str, stage: str, producer: str) -> dict:
    if not os.path.exists(path):
        raise FileNotFoundError(
            f"stage {stage!r} requires {os.path.basename(path)} "
            f"(produced by stage {producer!r}); not found at {path}")
    with np.load(path) as archive:
        return {k: np.array(archive[k], dtype=np.float64) for k in archive.files}


def _network_from_params(spec, params: dict) -> Network:
    reference = init_params(spec, np.random.default_rng(0))
    if set(reference) != set(params):
        raise FormatError(
            "saved parameters do not match the configured architecture")
    return Network(spec, params=params)


def _write_pseudo_csv(path: str, labels: np.ndarray, dataset) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_index", "pseudo_label", "noisy_label",
                         "clean_label"])
        for i, lab in enumerate(labels):
            writer.writerow([i, int(lab), int(dataset.noisy_labels[i]),
                             int(dataset.clean_labels[i])])


def _read_csv_column(path: str, column: str, stage: str, producer: str,
                     dtype=float) -> np.ndarray:
    if not os.path.exists(path):
        raise FileNotFoundError(
            f"stage {stage!r} requires {os.path.basename(path)} "
            f"(produced by stage {producer!r}); not found at {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or column not in rows[0]:
        raise FormatError(f"{path} has no {column!r} column")
    return np.array([dtype(r[column]) for r in rows])


def _load_train(cfg: RunConfig):
    path = cfg.get("data.path")
    if path:
        return load_dataset(path)
    return build_dataset(cfg)


def _load_test(cfg: RunConfig):
    """Clean evaluation set: explicit container, or a fresh synthetic draw.

    The synthetic fallback offsets the sample seed by one; class templates
    do not depend on it, so train and test share the same structure.
    """
    path = cfg.get("data.test_path")
    if path:
        return load_dataset(path)
    return generate_synthetic(kind=cfg.get("data.kind"),
                              classes=cfg.get("data.classes"),
                              samples=cfg.get("data.samples"),
                              separation=cfg.get("data.separation"),
                              seed=cfg.get("data.seed") + 1)


def cmd_make_data(cfg: RunConfig, out_path: str) -> int:
    """Generate (and optionally corrupt) one dataset, write the container."""
    dataset = build_dataset(cfg)
    parent = os.path.dirname(os.path.abspath(out_path))
    os.makedirs(parent, exist_ok=True)
    save_dataset(dataset, out_path)
    print(f"n={len(dataset)} classes={dataset.class_count} "
          f"noise_accuracy={noise_accuracy(dataset):.6f}")
    return 0


def _stage_pretrain(ctx: dict) -> None:
    network, _ = pretrain_contrastive(
        ctx["train"], ctx["phase"], ctx["seed"], "unsupervised",
        result=ctx["result"], phase="contrastive", stream=STREAM_PRETRAIN)
    _save_params(os.path.join(ctx["out"], CONTRAST_PARAMS), network.params)
    ctx["contrast"] = network


def _stage_classify(ctx: dict) -> None:
    encoder_init = None
    if ctx["cfg"].get("run.pretrained"):
        if "contrast" in ctx:
            encoder_init = ctx["contrast"].params
        else:
            encoder_init = _load_params(
                os.path.join(ctx["out"], CONTRAST_PARAMS),
                stage="classify", producer="pretrain")
    network, _ = train_classifier(
        ctx["train"], ctx["train"].noisy_labels, ctx["phase"], ctx["seed"],
        encoder_init=encoder_init, test_dataset=ctx["test"],
        result=ctx["result"], phase="classifier", stream=STREAM_CLASSIFY)
    pseudo = generate_pseudo_labels(network, ctx["train"],
                                    source_epoch=ctx["phase"].classifier.epochs)
    ctx["result"].pseudo_labels = pseudo.labels
    ctx["result"].summary["pseudo_label_accuracy"] = pseudo.accuracy_vs_clean
    if ctx["test"] is not None:
        ctx["result"].summary["classify_test_top1"] = evaluate_top1(
            network, ctx["test"])
    _save_params(os.path.join(ctx["out"], CLASSIFIER_PARAMS), network.params)
    _write_pseudo_csv(os.path.join(ctx["out"], PSEUDO_LABELS_CSV),
                      pseudo.labels, ctx["train"])
    ctx["classifier"] = network
    ctx["pseudo"] = pseudo


def _stage_finetune(ctx: dict) -> None:
    if "classifier" in ctx:
        phase_a = ctx["classifier"]
        pseudo = ctx["pseudo"]
    else:
        params = _load_params(os.path.join(ctx["out"], CLASSIFIER_PARAMS),
                              stage="finetune", producer="classify")
        phase_a = _network_from_params(
            ctx["phase"].network_spec(ctx["train"]), params)
        labels = _read_csv_column(
            os.path.join(ctx["out"], PSEUDO_LABELS_CSV), "pseudo_label",
            stage="finetune", producer="classify", dtype=int).astype(np.int64)
        acc = float((labels == ctx["train"].clean_labels).mean())
        pseudo = PseudoLabels(labels, ctx["phase"].classifier.epochs, acc)
    network, result = run_finetuning_phase(
        ctx["train"], pseudo, phase_a, ctx["phase"], ctx["seed"],
        test_dataset=ctx["test"], result=ctx["result"])
    _save_params(os.path.join(ctx["out"], FINAL_PARAMS), network.params)
    export_selection_csv(os.path.join(ctx["out"], SELECTION_CSV),
                         result.weights, pseudo.labels, ctx["train"])


def _stage_bootstrap(ctx: dict) -> None:
    encoder_init = None
    if ctx["cfg"].get("run.pretrained"):
        encoder_init = _load_params(
            os.path.join(ctx["out"], CONTRAST_PARAMS),
            stage="bootstrap", producer="pretrain")
    selection_path = os.path.join(ctx["out"], SELECTION_CSV)
    weights = None
    if os.path.exists(selection_path):
        weights = _read_csv_column(selection_path, "weight",
                                   stage="bootstrap", producer="finetune")
    network, result = run_bootstrap_variant(
        ctx["train"], ctx["train"].noisy_labels, weights, ctx["phase"],
        ctx["seed"], encoder_init=encoder_init, test_dataset=ctx["test"],
        result=ctx["result"])
    if ctx["test"] is not None:
        result.summary["bootstrap_test_top1"] = evaluate_top1(
            network, ctx["test"])
    _save_params(os.path.join(ctx["out"], BOOTSTRAP_PARAMS), network.params)


def cmd_run(cfg: RunConfig, out_dir: str) -> int:
    """Execute the configured stage(s); always leave metrics behind.

    metrics.jsonl and summary.json are written even when a stage raises,
    so a numeric failure mid-run preserves the records gathered so far.
    """
    stage = cfg.get("run.stage")
    if stage not in STAGES:
        raise InvalidArgument(f"run.stage must be one of {STAGES}, got {stage!r}")
    os.makedirs(out_dir, exist_ok=True)
    _write_text(os.path.join(out_dir, CONFIG_ECHO), render(cfg))

    seed = cfg.get("run.seed")
    train = _load_train(cfg)
    test = _load_test(cfg)
    phase = build_phase_config(cfg)
    result = ExperimentResult(seed)
    result.summary.update({
        "stage": stage,
        "seed": seed,
        "loss": cfg.get("classifier.loss"),
        "noise_type": cfg.get("noise.type"),
        "noise_ratio": cfg.get("noise.ratio"),
        "pretrained": cfg.get("run.pretrained"),
        "train_noise_accuracy": noise_accuracy(train),
    })
    ctx = {"cfg": cfg, "out": out_dir, "seed": seed, "train": train,
           "test": test, "phase": phase, "result": result}
    try:
        if stage == "pretrain" or (stage == "all" and cfg.get("run.pretrained")):
            _stage_pretrain(ctx)
        if stage in ("classify", "all"):
            _stage_classify(ctx)
        if stage in ("finetune", "all"):
            _stage_finetune(ctx)
        if stage == "bootstrap":
            _stage_bootstrap(ctx)
    finally:
        _write_text(os.path.join(out_dir, METRICS_FILE), result.to_jsonl())
        _write_text(os.path.join(out_dir, SUMMARY_FILE),
                    json.dumps(result.summary, sort_keys=True, indent=2) + "\n")
    shown = {k: result.summary[k] for k in
             ("pseudo_label_accuracy", "classify_test_top1", "final_test_top1",
              "bootstrap_test_top1") if k in result.summary}
    print(f"stage={stage} seed={seed} out={out_dir} " +
          " ".join(f"{k}={v:.4f}" for k, v in shown.items() if v is not None))
    return 0


def _report_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def cmd_report(run_dirs: list[str], out_path: str | None = None) -> int:
    """One CSV row per run directory; malformed directories get a warning row."""
    rows = []
    for run_dir in run_dirs:
        row = {k: "" for k in REPORT_COLUMNS}
        row["run_dir"] = run_dir
        try:
            with open(os.path.join(run_dir, SUMMARY_FILE), encoding="utf-8") as fh:
                summary = json.load(fh)
            if not isinstance(summary, dict):
                raise FormatError("summary.json is not an object")
            row["status"] = "ok"
            for key in REPORT_COLUMNS[2:]:
                if key in summary:
                    row[key] = _report_cell(summary[key])
        except (OSError, ValueError) as exc:
            row["status"] = f"warning: {exc.__class__.__name__}: {exc}"
        rows.append(row)

    sink = open(out_path, "w", newline="") if out_path else sys.stdout
    try:
        writer = csv.DictWriter(sink, fieldnames=list(REPORT_COLUMNS))
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if out_path:
            sink.close()
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlab",
        description="Noisy-label learning laboratory: data tooling, "
                    "staged training runs, and report export.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="write one dataset container")
    p.add_argument("--config", required=True, help="config file path")
    p.add_argument("--seed", type=int, default=None,
                   help="override data.seed")
    p.add_argument("--out", required=True, help="output container path")

    p = sub.add_parser("run", help="execute pipeline stage(s)")
    p.add_argument("--config", required=True, help="config file path")
    p.add_argument("--seed", type=int, default=None,
                   help="override run.seed")
    p.add_argument("--stage", default=None, choices=STAGES,
                   help="override run.stage")
    p.add_argument("--out", required=True, help="run output directory")

    p = sub.add_parser("report", help="summarize run directories as CSV")
    p.add_argument("run_dirs", nargs="*", help="completed run directories")
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    return parser


def _emit_error(code: int, exc: Exception, out_dir: str | None) -> int:
    record = {"error": exc.__class__.__name__, "message": str(exc),
              "exit_code": code}
    sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")
    if out_dir and os.path.isdir(out_dir):
        try:
            _write_text(os.path.join(out_dir, ERROR_FILE),
                        json.dumps(record, sort_keys=True, indent=2) + "\n")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    out_dir = getattr(args, "out", None) if args.command == "run" else None
    try:
        _apply_thread_cap()
        if args.command == "make-data":
            cfg = load(args.config)
            if args.seed is not None:
                cfg.set("data.seed", args.seed)
            return cmd_make_data(cfg, args.out)
        if args.command == "run":
            cfg = load(args.config)
            if args.seed is not None:
                cfg.set("run.seed", args.seed)
            if args.stage is not None:
                cfg.set("run.stage", args.stage)
            return cmd_run(cfg, args.out)
        return cmd_report(args.run_dirs, args.out)
    except NumericFailure as exc:
        return _emit_error(4, exc, out_dir)
    except FormatError as exc:
        return _emit_error(3, exc, out_dir)
    except OSError as exc:
        return _emit_error(3, exc, out_dir)
    except (NlabError, ValueError) as exc:
        return _emit_error(2, exc, out_dir)


if __name__ == "__main__":
    sys.exit(main())

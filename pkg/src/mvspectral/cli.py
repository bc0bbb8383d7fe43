"""Command-line experiment runner.

Verbs: gen-data, train, embed, eval, oracle-check, robustness-sweep.
Every command is deterministic given its config document (seed included),
writes a manifest sufficient to re-run it, and never mutates its inputs.
Failures exit nonzero with one categorized ``error[...]`` line on stderr.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as mvdata
from . import metrics, model, pipeline
from .config import RunConfig, config_to_text, load_config
from .errors import (
    DataFormatError,
    DegenerateDataError,
    IllConditionedBatchError,
    OptimizerError,
    StateError,
    TrainingError,
)

_ERROR_CATEGORIES = [
    (DataFormatError, "format"),
    (TrainingError, "training"),
    (OptimizerError, "optimizer"),
    (DegenerateDataError, "degenerate-data"),
    (IllConditionedBatchError, "ill-conditioned-batch"),
    (StateError, "state"),
    (ValueError, "parameter"),
    (OSError, "io"),
]


def _categorize(err):
    for cls, name in _ERROR_CATEGORIES:
        if isinstance(err, cls):
            return name
    return "internal"


def _load_run_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "fusion_mode", None):
        cfg.fusion_mode = args.fusion_mode
    if getattr(args, "epochs", None) is not None:
        cfg.epochs = args.epochs
    return cfg


def _write_run_files(out_dir, cfg, manifest):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(config_to_text(cfg))
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return out_dir


def cmd_gen_data(args):
    cfg = _load_run_config(args)
    ds = pipeline.build_dataset(cfg)
    train_ds, val_ds, test_ds = pipeline.split_dataset(ds, cfg)
    out = Path(args.out)
    for name, part in (("train", train_ds), ("val", val_ds), ("test", test_ds)):
        mvdata.save_dataset(out / name, part)
    mask = ds.mask_or_false()
    manifest = {
        "command": "gen-data",
        "n_views": ds.n_views,
        "view_dims": ds.dims,
        "rows": {"train": train_ds.n, "val": val_ds.n, "test": test_ds.n},
        "contaminated_rows_per_view": mask.sum(axis=0).tolist(),
        "seed": cfg.seed,
    }
    _write_run_files(out, cfg, manifest)
    print(f"wrote dataset splits under {out}")
    return 0


def cmd_train(args):
    cfg = _load_run_config(args)
    data_dir = Path(args.data)
    train_ds = mvdata.load_dataset(data_dir / "train")
    val_ds = mvdata.load_dataset(data_dir / "val")

    hook_builder = None
    if cfg.track_subspace_distance:
        hook_builder = pipeline.grassmann_hook(val_ds, cfg)
    mdl, contexts, history = pipeline.fit(
        train_ds, val_ds, cfg, epoch_hook_builder=hook_builder
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.npz"
    model.save_checkpoint(ckpt, mdl, contexts, {"source": str(data_dir)})
    _write_history_csv(out / "history.csv", history)
    manifest = {
        "command": "train",
        "data": str(data_dir),
        "checkpoint": str(ckpt),
        "epochs_run": len(history["val_loss"]),
        "stopped_early": bool(history.get("stopped_early", False)),
        "final_val_loss": history["val_loss"][-1] if history["val_loss"] else None,
        "seed": cfg.seed,
    }
    _write_run_files(out, cfg, manifest)
    print(f"trained {len(history['val_loss'])} epochs; checkpoint at {ckpt}")
    return 0


def _write_history_csv(path, history):
    cols = ["train_loss", "val_loss", "lr"]
    if history["hook"]:
        cols.append("grassmann_dist_sq")
    lines = ["epoch," + ",".join(cols)]
    for i in range(len(history["val_loss"])):
        row = [str(i)]
        for col in cols:
            key = "hook" if col == "grassmann_dist_sq" else col
            row.append(f"{history[key][i]:.10g}")
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_embed(args):
    mdl, _, _ = model.load_checkpoint(args.checkpoint)
    ds = mvdata.load_dataset(args.data)
    outputs, alpha = model.embed_with_weights(mdl, ds.views)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mvdata.save_matrix_csv(out / "embeddings.csv", outputs)
    if alpha is not None:
        mvdata.save_matrix_csv(out / "weights.csv", alpha)
    print(f"wrote {outputs.shape[0]} embeddings to {out / 'embeddings.csv'}")
    return 0


def cmd_eval(args):
    cfg = _load_run_config(args)
    outputs = mvdata._read_matrix_csv(args.embeddings)
    labels = mvdata._read_labels_csv(args.labels)
    if outputs.shape[0] != labels.shape[0]:
        raise ValueError("embeddings and labels disagree on the row count")
    num_clusters = args.clusters or len(np.unique(labels))
    pred, _ = metrics.kmeans(
        outputs, num_clusters, seed=cfg.seed, restarts=cfg.kmeans_restarts
    )
    report = metrics.EvalReport(
        acc=metrics.clustering_accuracy(pred, labels),
        nmi=metrics.nmi(pred, labels),
        ari=metrics.ari(pred, labels),
        seed=cfg.seed,
        config_echo={"clusters": num_clusters},
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_text())
    np.savetxt(out / "labels_pred.csv", pred, fmt="%d")
    print(report.to_text(), end="")
    return 0


def cmd_oracle_check(args):
    cfg = _load_run_config(args)
    mdl, contexts, _ = model.load_checkpoint(args.checkpoint)
    ds = mvdata.load_dataset(args.data)
    cfg.embed_dim = mdl.embed_dim
    dist, ratios = pipeline.oracle_distance(mdl, ds, contexts, cfg)
    lines = [f"grassmann_dist_sq: {dist:.10f}"]
    for v, r in enumerate(ratios):
        lines.append(f"offdiag_ratio_{v}: {r:.10f}")
    lines.append(f"embed_dim: {mdl.embed_dim}")
    text = "\n".join(lines) + "\n"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "oracle_check.txt").write_text(text)
    print(text, end="")
    return 0


def cmd_robustness_sweep(args):
    cfg = _load_run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for mode in cfg.sweep_fusion_modes:
        for repeat in range(cfg.sweep_repeats):
            seed = cfg.seed + repeat
            clean_acc = _sweep_cell(cfg, mode, "none", 0.0, seed)
            rows.append((mode, 0.0, repeat, clean_acc, 0.0))
            for ratio in cfg.sweep_ratios:
                acc = _sweep_cell(
                    cfg, mode, cfg.contamination_kind or "outlier", ratio, seed
                )
                deg = metrics.relative_degradation(clean_acc, acc)
                rows.append((mode, ratio, repeat, acc, deg))

    lines = ["fusion_mode,ratio,repeat,acc,degradation_pct"]
    for mode, ratio, repeat, acc, deg in rows:
        lines.append(f"{mode},{ratio:g},{repeat},{acc:.6f},{deg:.6f}")
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")

    summary = ["fusion_mode,ratio,acc_mean,acc_std,degradation_mean,degradation_std"]
    keys = sorted({(m, r) for m, r, *_ in rows}, key=lambda t: (t[0], t[1]))
    for mode, ratio in keys:
        accs = [a for m, r, _, a, _ in rows if (m, r) == (mode, ratio)]
        degs = [d for m, r, _, _, d in rows if (m, r) == (mode, ratio)]
        summary.append(
            f"{mode},{ratio:g},{np.mean(accs):.6f},{np.std(accs):.6f},"
            f"{np.mean(degs):.6f},{np.std(degs):.6f}"
        )
    (out / "sweep_summary.csv").write_text("\n".join(summary) + "\n")
    _write_run_files(out, cfg, {"command": "robustness-sweep", "cells": len(rows)})
    print(f"wrote sweep results to {out / 'sweep.csv'}")
    return 0


def _sweep_cell(cfg, fusion_mode, kind, ratio, seed):
    """Train and evaluate one sweep cell; returns test clustering accuracy."""
    import copy

    cell = copy.deepcopy(cfg)
    cell.fusion_mode = fusion_mode
    cell.seed = seed
    cell.contamination_kind = kind if ratio > 0 else "none"
    cell.contamination_ratio = ratio if ratio > 0 else 0.0
    ds = pipeline.build_dataset(cell)
    train_ds, val_ds, test_ds = pipeline.split_dataset(ds, cell)
    mdl, _, _ = pipeline.fit(train_ds, val_ds, cell)
    outputs = model.embed(mdl, test_ds.views)
    report = pipeline.evaluate_embeddings(outputs, test_ds.labels, cell)
    return report.acc


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mvspectral",
        description="Multi-view spectral embedding: train, embed, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=True, seed=True):
        if config:
            p.add_argument("--config", help="key = value config document")
        if seed:
            p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("gen-data", help="generate/contaminate/split a dataset")
    add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="siamese pretraining + model training")
    add_common(p)
    p.add_argument("--data", required=True, help="dataset directory (gen-data)")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--fusion-mode", dest="fusion_mode",
                   choices=list(model.FUSION_MODES))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="embed a dataset split with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="split directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("eval", help="k-means + clustering metrics on embeddings")
    add_common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--clusters", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle-check",
                       help="compare a checkpoint against the exact eigenvectors")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="split directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("robustness-sweep",
                       help="degradation table over contamination ratios and fusion modes")
    add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_robustness_sweep)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as err:  # noqa: BLE001 - single reporting point
        print(f"error[{_categorize(err)}]: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

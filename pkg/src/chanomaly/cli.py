"""Command-line entry point.

Subcommands: synth-data, train, score, eval, sweep, report,
augment-preview. Options come from a TOML config file with flat sections
(``[data]``, ``[train]``, ``[eval]``, ``[sweep]``) and are
overridable by flags; the effective configuration is echoed into every
output directory. Exit codes: 0 success, 2 configuration or input error,
3 numeric failure during training.
"""

from __future__ import annotations

import argparse
import csv
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .augment import PixelSelection, randomise_channels
from .datasets import (
    DatasetManifest,
    ManifestError,
    SynthConfig,
    load_images,
    load_manifest,
    synth_config_from_toml,
    synth_generate,
)
from .detector import EmbeddingSet, embed, hist_embed, knn_score_batch
from .imagecore import DecodeError, ImageError, decode, encode_ppm
from .metrics import (
    LabelledScores,
    MetricError,
    aggregate_runs,
    auc_pr,
    auc_roc,
    format_mean_std,
    pearson,
)
from .nn import CheckpointError, TrainingError, load_checkpoint, save_checkpoint
from .pretext import PretextSpec, train

__all__ = ["main", "RunConfig", "ConfigError"]


class ConfigError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Every knob of the pipeline, validated before any work starts."""

    data_root: str = ""
    out_dir: str = "out"
    task: str = "ch_rand"
    selection: str = "all"
    input_side: int = 64
    widths: str = "full"
    epochs: int = 1500
    batch_size: int = 64
    learning_rate: float = 1e-4
    val_acc_target: float = 0.95
    seeds: tuple[int, ...] = (0, 1, 2)
    k_values: tuple[int, ...] = (1, 5, 10)
    feature_layer: str = "fc6"
    hist_baseline: bool = True
    snapshot_every: int = 0
    sweep_tasks: tuple[str, ...] = ("ch_rand",)
    sweep_selections: tuple[str, ...] = ("all",)
    sweep_sizes: tuple[int, ...] = (32,)
    sweep_layers: tuple[str, ...] = ("conv5",)

    def pretext_spec(self, task=None, selection=None, input_side=None, layer=None) -> PretextSpec:
        task = task or self.task
        sel_text = selection or self.selection
        return PretextSpec(
            task=task,
            selection=PixelSelection.parse(sel_text) if task.startswith("ch_") else None,
            feature_layer=layer or self.feature_layer,
            input_side=input_side or self.input_side,
            widths=self.widths,
            epochs_max=self.epochs,
            val_acc_target=self.val_acc_target,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
        )


_SECTION_FIELDS = {
    "data": {"root": "data_root", "out_dir": "out_dir"},
    "train": {
        "task": "task",
        "selection": "selection",
        "input_side": "input_side",
        "widths": "widths",
        "epochs": "epochs",
        "batch_size": "batch_size",
        "learning_rate": "learning_rate",
        "val_acc_target": "val_acc_target",
        "seeds": "seeds",
        "snapshot_every": "snapshot_every",
    },
    "eval": {
        "k": "k_values",
        "feature_layer": "feature_layer",
        "hist_baseline": "hist_baseline",
    },
    "sweep": {
        "tasks": "sweep_tasks",
        "selections": "sweep_selections",
        "sizes": "sweep_sizes",
        "layers": "sweep_layers",
    },
}


def load_run_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    values: dict = {}
    if path:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for section, entries in raw.items():
            if section not in _SECTION_FIELDS:
                raise ConfigError(f"unknown config section [{section}]")
            if not isinstance(entries, dict):
                raise ConfigError(f"section [{section}] must be a table")
            for key, value in entries.items():
                if key not in _SECTION_FIELDS[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                values[_SECTION_FIELDS[section][key]] = value
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    for key in ("seeds", "k_values", "sweep_tasks", "sweep_selections", "sweep_sizes", "sweep_layers"):
        if key in values and not isinstance(values[key], tuple):
            values[key] = tuple(values[key])
    try:
        return RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def _echo_config(cfg: RunConfig, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for section, entries in _SECTION_FIELDS.items():
        lines.append(f"[{section}]")
        for key, attr in entries.items():
            value = getattr(cfg, attr)
            if isinstance(value, str):
                lines.append(f'{key} = "{value}"')
            elif isinstance(value, bool):
                lines.append(f"{key} = {str(value).lower()}")
            elif isinstance(value, tuple):
                lines.append(f"{key} = [{', '.join(map(repr, value))}]")
            else:
                lines.append(f"{key} = {value}")
        lines.append("")
    (out_dir / "effective_config.toml").write_text("\n".join(lines))


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _manifest(cfg: RunConfig) -> DatasetManifest:
    if not cfg.data_root:
        raise ConfigError("no dataset path configured ([data] root or --data)")
    return load_manifest(cfg.data_root)


def _split_images(manifest: DatasetManifest, paths):
    loaded = load_images(manifest, paths)
    return [rel for rel, _ in loaded], [img for _, img in loaded]


def _write_csv(path: Path, header: list[str], rows: list[list]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _evaluate_checkpoint(ckpt, manifest, layer, k_values):
    """AUC metrics of one trained model on the manifest's test split."""
    model = ckpt.to_model()
    train_ids, train_imgs = _split_images(manifest, manifest.train)
    reference = embed(model, train_imgs, layer, ids=train_ids)
    test_ids, test_imgs = _split_images(manifest, manifest.test_normal)
    anom_ids, anom_imgs = _split_images(manifest, manifest.test_anomalous)
    queries = embed(model, test_imgs + anom_imgs, layer, ids=test_ids + anom_ids)
    labels = np.r_[np.zeros(len(test_ids), dtype=int), np.ones(len(anom_ids), dtype=int)]
    out = {}
    for k in k_values:
        scores = np.array([r.score for r in knn_score_batch(reference, queries, k)])
        ls = LabelledScores(scores, labels)
        out[k] = {"auc_roc": auc_roc(ls), "auc_pr": auc_pr(ls)}
    return out


def _evaluate_hist(manifest, k_values):
    _, train_imgs = _split_images(manifest, manifest.train)
    train_ids, _ = _split_images(manifest, manifest.train)
    reference = hist_embed(train_imgs, ids=train_ids)
    test_ids, test_imgs = _split_images(manifest, manifest.test_normal)
    anom_ids, anom_imgs = _split_images(manifest, manifest.test_anomalous)
    queries = hist_embed(test_imgs + anom_imgs, ids=test_ids + anom_ids)
    labels = np.r_[np.zeros(len(test_ids), dtype=int), np.ones(len(anom_ids), dtype=int)]
    out = {}
    for k in k_values:
        scores = np.array([r.score for r in knn_score_batch(reference, queries, k)])
        ls = LabelledScores(scores, labels)
        out[k] = {"auc_roc": auc_roc(ls), "auc_pr": auc_pr(ls)}
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth_data(args) -> int:
    if args.config:
        scfg = synth_config_from_toml(args.config)
    else:
        scfg = SynthConfig()
    if args.seed is not None:
        scfg = replace(scfg, seed=args.seed)
    if args.out:
        scfg = replace(scfg, out_dir=args.out)
    manifest = synth_generate(scfg)
    print(f"generated {manifest.counts()} under {manifest.root}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    manifest = _manifest(cfg)
    out_dir = Path(cfg.out_dir)
    _echo_config(cfg, out_dir)
    _, train_imgs = _split_images(manifest, manifest.train)
    _, val_imgs = _split_images(manifest, manifest.val)
    spec = cfg.pretext_spec()
    for seed in cfg.seeds:
        rows = []

        def progress(epoch, loss, acc):
            rows.append([epoch, f"{loss:.6f}", f"{acc:.6f}"])
            if args.verbose:
                print(f"seed {seed} epoch {epoch}: loss {loss:.4f} val_acc {acc:.4f}")

        run = train(spec, train_imgs, val_imgs, seed=seed, progress=progress,
                    snapshot_every=cfg.snapshot_every)
        ckpt_path = out_dir / f"checkpoint_seed{seed}.ckpt"
        save_checkpoint(run.checkpoint, ckpt_path)
        _write_csv(out_dir / f"epochs_seed{seed}.csv", ["epoch", "loss", "val_acc"], rows)
        for epoch, snap in run.snapshots:
            save_checkpoint(snap, out_dir / f"snapshot_seed{seed}_epoch{epoch:04d}.ckpt")
        print(
            f"seed {seed}: stopped at epoch {len(run.val_accuracies)} "
            f"({run.stop_reason}), deployed epoch {run.deployed_epoch}, "
            f"checkpoint {ckpt_path}"
        )
    return 0


def cmd_score(args, cfg: RunConfig) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    manifest = _manifest(cfg)
    model = ckpt.to_model()
    train_ids, train_imgs = _split_images(manifest, manifest.train)
    reference = embed(model, train_imgs, cfg.feature_layer, ids=train_ids)
    image_dir = Path(args.images)
    paths = sorted(
        p for p in image_dir.rglob("*") if p.suffix.lower() in (".ppm", ".png")
    )
    if not paths:
        raise ConfigError(f"no images found under {image_dir}")
    imgs = [decode(p.read_bytes()) for p in paths]
    ids = [str(p.relative_to(image_dir)) for p in paths]
    queries = embed(model, imgs, cfg.feature_layer, ids=ids)
    k = args.k if args.k is not None else cfg.k_values[0]
    results = knn_score_batch(reference, queries, k)
    out_path = Path(args.out or (Path(cfg.out_dir) / "scores.csv"))
    _write_csv(
        out_path,
        ["path", "score"] + [f"neighbour_{i + 1}" for i in range(k)],
        [[r.image_id, f"{r.score:.9g}", *r.neighbour_ids] for r in results],
    )
    print(f"wrote {out_path}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    manifest = _manifest(cfg)
    out_dir = Path(cfg.out_dir)
    _echo_config(cfg, out_dir)
    ckpt_dir = Path(args.checkpoints or cfg.out_dir)
    rows = []
    per_k_runs: dict[int, list[dict]] = {k: [] for k in cfg.k_values}
    for seed in cfg.seeds:
        path = ckpt_dir / f"checkpoint_seed{seed}.ckpt"
        if not path.exists():
            raise ConfigError(f"missing checkpoint {path}")
        metrics = _evaluate_checkpoint(load_checkpoint(path), manifest, cfg.feature_layer, cfg.k_values)
        for k, m in metrics.items():
            rows.append([f"model_seed{seed}", k, f"{m['auc_roc']:.6f}", f"{m['auc_pr']:.6f}"])
            per_k_runs[k].append(m)
    for k, runs in per_k_runs.items():
        summary = aggregate_runs(runs)
        rows.append(
            [
                "model_mean_std",
                k,
                f"{summary['auc_roc'][0]:.6f}+/-{summary['auc_roc'][1]:.6f}",
                f"{summary['auc_pr'][0]:.6f}+/-{summary['auc_pr'][1]:.6f}",
            ]
        )
    if cfg.hist_baseline:
        for k, m in _evaluate_hist(manifest, cfg.k_values).items():
            rows.append(["hist", k, f"{m['auc_roc']:.6f}", f"{m['auc_pr']:.6f}"])
    _write_csv(out_dir / "eval.csv", ["model", "k", "auc_roc", "auc_pr"], rows)
    print(f"wrote {out_dir / 'eval.csv'}")
    return 0


def cmd_sweep(args, cfg: RunConfig) -> int:
    manifest = _manifest(cfg)
    out_dir = Path(cfg.out_dir)
    _echo_config(cfg, out_dir)
    if not (cfg.sweep_tasks and cfg.sweep_selections and cfg.sweep_sizes and cfg.sweep_layers):
        raise ConfigError("sweep grid is empty")
    _, train_imgs = _split_images(manifest, manifest.train)
    _, val_imgs = _split_images(manifest, manifest.val)
    rows = []
    corr_rows = []
    pooled_pairs: list[tuple[float, float]] = []
    final_pairs: list[tuple[float, float]] = []
    for task in cfg.sweep_tasks:
        for sel in cfg.sweep_selections if task.startswith("ch_") else ("-",):
            for size in cfg.sweep_sizes:
                for layer in cfg.sweep_layers:
                    cell_metrics = []
                    for seed in cfg.seeds:
                        spec = cfg.pretext_spec(
                            task=task,
                            selection=sel if sel != "-" else None,
                            input_side=size,
                            layer=layer,
                        )
                        run = train(spec, train_imgs, val_imgs, seed=seed,
                                    snapshot_every=cfg.snapshot_every)
                        metrics = _evaluate_checkpoint(run.checkpoint, manifest, layer, (1,))[1]
                        cell_metrics.append(metrics)
                        final_pairs.append((run.val_accuracies[-1], metrics["auc_roc"]))
                        if run.snapshots:
                            pairs = []
                            for epoch, snap in run.snapshots:
                                snap_roc = _evaluate_checkpoint(snap, manifest, layer, (1,))[1]["auc_roc"]
                                va = float(snap.metadata["val_acc"])
                                pairs.append((va, snap_roc))
                                pooled_pairs.append((va, snap_roc))
                            if len(pairs) >= 2:
                                try:
                                    r = pearson([p[0] for p in pairs], [p[1] for p in pairs])
                                    corr_rows.append(
                                        [task, str(sel), size, layer, seed, "within_run", f"{r:.6f}"]
                                    )
                                except MetricError:
                                    pass
                    summary = aggregate_runs(cell_metrics)
                    rows.append(
                        [
                            task,
                            str(sel),
                            size,
                            layer,
                            f"{summary['auc_roc'][0]:.6f}",
                            f"{summary['auc_roc'][1]:.6f}",
                            f"{summary['auc_pr'][0]:.6f}",
                            f"{summary['auc_pr'][1]:.6f}",
                        ]
                    )
    _write_csv(
        out_dir / "sweep.csv",
        ["task", "selection", "size", "layer", "auc_roc_mean", "auc_roc_std", "auc_pr_mean", "auc_pr_std"],
        rows,
    )
    for name, pairs in (("pooled_checkpoints", pooled_pairs), ("across_seeds_final", final_pairs)):
        if len(pairs) >= 2:
            try:
                r = pearson([p[0] for p in pairs], [p[1] for p in pairs])
                corr_rows.append(["-", "-", "-", "-", "-", name, f"{r:.6f}"])
            except MetricError:
                pass
    _write_csv(
        out_dir / "correlation.csv",
        ["task", "selection", "size", "layer", "seed", "kind", "pearson_r"],
        corr_rows,
    )
    print(f"wrote {out_dir / 'sweep.csv'} and {out_dir / 'correlation.csv'}")
    return 0


def cmd_report(args, cfg: RunConfig) -> int:
    labels = {}
    for line in Path(args.labels).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("path,"):
            continue
        path_part, _, label_part = line.rpartition(",")
        labels[path_part] = int(label_part)
    runs = []
    for score_csv in args.scores:
        with open(score_csv) as fh:
            reader = csv.DictReader(fh)
            scores, ys = [], []
            for row in reader:
                if row["path"] not in labels:
                    raise ConfigError(f"no label for {row['path']} in {args.labels}")
                scores.append(float(row["score"]))
                ys.append(labels[row["path"]])
        ls = LabelledScores(np.array(scores), np.array(ys))
        runs.append({"auc_roc": auc_roc(ls), "auc_pr": auc_pr(ls)})
    summary = aggregate_runs(runs)
    out_dir = Path(cfg.out_dir)
    rows = [[Path(p).name, f"{r['auc_roc']:.6f}", f"{r['auc_pr']:.6f}"] for p, r in zip(args.scores, runs)]
    _write_csv(out_dir / "report.csv", ["run", "auc_roc", "auc_pr"], rows)
    text = format_mean_std(summary)
    (out_dir / "report.txt").write_text(text + "\n")
    print(text)
    return 0


def cmd_augment_preview(args) -> int:
    img = decode(Path(args.image).read_bytes())
    rng = np.random.default_rng(args.seed)
    sel = PixelSelection.parse(args.selection)
    out_img, cmap, mask = randomise_channels(img, sel, args.mode, rng)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_bytes(encode_ppm(out_img))
    sidecar = out_path.with_suffix(".txt")
    sidecar.write_text(
        f"map: {cmap.name}\nmode: {args.mode}\nselection: {sel}\n"
        f"mask_pixels: {int(mask.sum())}\nseed: {args.seed}\n"
    )
    print(f"wrote {out_path} and {sidecar}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--data", help="dataset root directory")
    p.add_argument("--out-dir", help="output directory")
    p.add_argument("--seeds", help="comma-separated seed list")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chanomaly")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate the synthetic benchmark dataset")
    p.add_argument("--config", help="TOML synthetic-dataset config")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train a pretext classifier")
    _add_common(p)
    p.add_argument("--task", choices=["ch_rand", "ch_perm", "ch_split", "rot", "cutpaste"])
    p.add_argument("--selection", help="all | patch | sobel | thX | spX")
    p.add_argument("--input-side", type=int, choices=[32, 64, 96])
    p.add_argument("--widths", choices=["full", "desk"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("score", help="score an image directory against a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--out")

    p = sub.add_parser("eval", help="AUC evaluation of trained checkpoints")
    _add_common(p)
    p.add_argument("--checkpoints", help="directory of checkpoint_seedN.ckpt files")

    p = sub.add_parser("sweep", help="ablation grid over tasks/selections/sizes/layers")
    _add_common(p)

    p = sub.add_parser("report", help="metrics from score CSVs and a label manifest")
    _add_common(p)
    p.add_argument("--scores", nargs="+", required=True)
    p.add_argument("--labels", required=True, help="CSV of path,label rows")

    p = sub.add_parser("augment-preview", help="write one augmented image + sidecar")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default="rand", choices=["rand", "perm", "split"])
    p.add_argument("--selection", default="all")
    p.add_argument("--seed", type=int, default=0)

    return parser


def _config_from_args(args) -> RunConfig:
    overrides = {
        "data_root": getattr(args, "data", None),
        "out_dir": getattr(args, "out_dir", None),
        "task": getattr(args, "task", None),
        "selection": getattr(args, "selection", None),
        "input_side": getattr(args, "input_side", None),
        "widths": getattr(args, "widths", None),
        "epochs": getattr(args, "epochs", None),
    }
    seeds = getattr(args, "seeds", None)
    if seeds:
        overrides["seeds"] = tuple(int(s) for s in seeds.split(","))
    return load_run_config(getattr(args, "config", None), overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth-data":
            return cmd_synth_data(args)
        if args.command == "augment-preview":
            return cmd_augment_preview(args)
        cfg = _config_from_args(args)
        if args.command == "train":
            return cmd_train(args, cfg)
        if args.command == "score":
            return cmd_score(args, cfg)
        if args.command == "eval":
            return cmd_eval(args, cfg)
        if args.command == "sweep":
            return cmd_sweep(args, cfg)
        if args.command == "report":
            return cmd_report(args, cfg)
        raise ConfigError(f"unknown command {args.command}")
    except (ConfigError, ManifestError, CheckpointError, MetricError, ImageError,
            DecodeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

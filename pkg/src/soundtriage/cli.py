"""Command-line interface.

Subcommands: ``synth``, ``train``, ``infer``, ``eval``, ``sweep``, ``tune``.
Every command writes a ``manifest.json`` run manifest into its output
directory. Exit codes: 0 success, 2 usage error, 1 runtime error.

A JSON config file (``--config``) may preset training and feature fields::

    {"train": {"epochs": 30, "loss_kind": "set_a"}, "features": {"n_mels": 64}}

Explicit command-line flags override config-file values.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (ClipAnnotation, FeatureConfig, default_class_names,
                     prepare_clips, read_annotations, read_dataset, rasterize,
                     synthesize_dataset, write_dataset)
from .inference import (DEFAULT_MEDIAN_GRID, DEFAULT_THRESHOLD_GRID,
                        DEFAULT_WEIGHT_GRID, PostprocessConfig, TuneResult,
                        binarize, events_from_probs, extract_events, median_smooth,
                        predict, tune_postprocessing, write_predictions)
from .metrics import EventInstance, IntersectionConfig, build_report
from .training import (Checkpoint, CheckpointError, TrainConfig, load_checkpoint,
                       save_checkpoint, train)
from .triage import TriageWeights, make_inference_weights, parse_lambda

POOL_FACTOR = 32

TRAIN_DEFAULTS = {"batch_size": 64, "epochs": 100, "learning_rate": 1e-3,
                  "loss_kind": "set_a", "dirichlet_alpha": 0.1, "seed": 0,
                  "identity_film": False}
FEATURE_DEFAULTS = {"sample_rate": 16000, "window": 0.04, "hop": 0.02,
                    "n_mels": 64, "log_floor": 1e-10}


@dataclass
class RunManifest:
    """Everything needed to reproduce one CLI invocation."""

    command: str
    config: dict
    seed: int | None
    inputs: dict
    outputs: list = field(default_factory=list)
    tool_version: str = __version__
    wall_clock_seconds: float = 0.0

    def write(self, out_dir: Path) -> None:
        path = out_dir / "manifest.json"
        path.write_text(json.dumps({
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "tool_version": self.tool_version,
            "wall_clock_seconds": round(self.wall_clock_seconds, 3),
        }, sort_keys=True, indent=2) + "\n")


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    config = json.loads(Path(path).read_text())
    if not isinstance(config, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    return config


def _merge(defaults: dict, config_section: dict, cli_values: dict) -> dict:
    """defaults < config file < explicit CLI flags (None = not given)."""
    merged = dict(defaults)
    for key, value in config_section.items():
        if key not in merged:
            raise ValueError(f"unknown config key {key!r}")
        merged[key] = value
    for key, value in cli_values.items():
        if value is not None:
            merged[key] = value
    return merged


def _feature_config(args, file_config: dict) -> FeatureConfig:
    merged = _merge(
        FEATURE_DEFAULTS,
        file_config.get("features", {}),
        {"sample_rate": args.sample_rate, "window": args.window,
         "hop": args.hop, "n_mels": args.n_mels},
    )
    return FeatureConfig(**merged)


def _weights_from_args(args, n_classes: int) -> TriageWeights:
    if getattr(args, "lam", None):
        weights = parse_lambda(args.lam)
        if weights.n_classes != n_classes:
            raise ValueError(
                f"--lambda has {weights.n_classes} entries, checkpoint expects {n_classes}"
            )
        return weights
    if getattr(args, "target", None) is not None:
        return make_inference_weights(args.target, args.weight, n_classes)
    return TriageWeights.uniform(n_classes)


def _postprocess_from_args(args, n_classes: int) -> PostprocessConfig:
    if getattr(args, "postproc", None):
        return TuneResult.load(args.postproc).postprocess
    threshold = getattr(args, "threshold", None) or 0.5
    median = getattr(args, "median", None) or 1
    return PostprocessConfig.uniform(n_classes, threshold, median)


def _prepare_dir(ckpt: Checkpoint, data_dir: str):
    clips, class_names, sample_rate = read_dataset(data_dir)
    if sample_rate != ckpt.feature_config.sample_rate:
        raise ValueError(
            f"dataset sample rate {sample_rate} != checkpoint's "
            f"{ckpt.feature_config.sample_rate}"
        )
    prepared = prepare_clips(clips, ckpt.n_classes, ckpt.feature_config, POOL_FACTOR)
    return prepared, class_names


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args) -> int:
    started = time.monotonic()
    out = _out_dir(args)
    clips = synthesize_dataset(args.clips, args.classes, args.duration,
                               seed=args.seed, sample_rate=args.sample_rate or 16000)
    write_dataset(out, clips, default_class_names(args.classes),
                  args.sample_rate or 16000)
    manifest = RunManifest(
        command="synth",
        config={"clips": args.clips, "classes": args.classes,
                "duration": args.duration, "sample_rate": args.sample_rate or 16000},
        seed=args.seed,
        inputs={},
        outputs=[str(out / "annotations.jsonl"), str(out / "classes.json"),
                 str(out / "clips")],
        wall_clock_seconds=time.monotonic() - started,
    )
    manifest.write(out)
    print(f"wrote {args.clips} clips to {out}")
    return 0


def cmd_train(args) -> int:
    started = time.monotonic()
    file_config = _load_config_file(args.config)
    out = _out_dir(args)
    feature_config = _feature_config(args, file_config)
    merged = _merge(
        TRAIN_DEFAULTS,
        file_config.get("train", {}),
        {"batch_size": args.batch_size, "epochs": args.epochs,
         "learning_rate": args.lr, "loss_kind": args.loss,
         "dirichlet_alpha": args.alpha, "seed": args.seed,
         "identity_film": True if args.identity_film else None},
    )
    train_config = TrainConfig(**merged)

    clips, class_names, sample_rate = read_dataset(args.data)
    if sample_rate != feature_config.sample_rate:
        raise ValueError(
            f"dataset sample rate {sample_rate} != configured "
            f"{feature_config.sample_rate}; pass --sample-rate {sample_rate}"
        )
    n_classes = len(class_names)
    prepared = prepare_clips(clips, n_classes, feature_config, POOL_FACTOR)
    if args.val_data:
        val_clips_raw, _, _ = read_dataset(args.val_data)
        val_prepared = prepare_clips(val_clips_raw, n_classes, feature_config,
                                     POOL_FACTOR)
        train_prepared = prepared
    else:
        rng = np.random.default_rng(train_config.seed)
        order = rng.permutation(len(prepared))
        n_val = max(1, int(round(args.val_fraction * len(prepared))))
        if n_val >= len(prepared):
            raise ValueError("validation split leaves no training clips")
        val_idx = set(order[:n_val].tolist())
        train_prepared = [c for i, c in enumerate(prepared) if i not in val_idx]
        val_prepared = [c for i, c in enumerate(prepared) if i in val_idx]

    ckpt_path = out / "checkpoint.pt"
    log_path = out / "train_log.tsv"
    ckpt = train(train_prepared, val_prepared, train_config, feature_config,
                 class_names=class_names, log_path=log_path)
    save_checkpoint(ckpt, ckpt_path)

    manifest = RunManifest(
        command="train",
        config={"train": train_config.to_dict(), "features": feature_config.to_dict(),
                "val_data": args.val_data, "val_fraction": args.val_fraction},
        seed=train_config.seed,
        inputs={"data": str(args.data)},
        outputs=[str(ckpt_path), str(log_path)],
        wall_clock_seconds=time.monotonic() - started,
    )
    manifest.write(out)
    print(f"best epoch {ckpt.epoch}: validation frame-F {ckpt.val_score:.4f}")
    print(f"checkpoint -> {ckpt_path}")
    return 0


def cmd_infer(args) -> int:
    started = time.monotonic()
    out = _out_dir(args)
    ckpt = load_checkpoint(args.ckpt)
    prepared, _ = _prepare_dir(ckpt, args.data)
    weights = _weights_from_args(args, ckpt.n_classes)
    postprocess = _postprocess_from_args(args, ckpt.n_classes)

    events_per_clip = []
    for clip in prepared:
        probs = predict(ckpt, clip.features, weights)
        events_per_clip.append(events_from_probs(probs, postprocess,
                                                 ckpt.feature_config.hop))
    pred_path = out / "predictions.jsonl"
    write_predictions(pred_path, [c.clip_id for c in prepared],
                      [weights] * len(prepared), events_per_clip)

    manifest = RunManifest(
        command="infer",
        config={"lambda": [float(x) for x in weights.raw],
                "postprocess": postprocess.to_dict()},
        seed=None,
        inputs={"ckpt": str(args.ckpt), "data": str(args.data)},
        outputs=[str(pred_path)],
        wall_clock_seconds=time.monotonic() - started,
    )
    manifest.write(out)
    print(f"predictions -> {pred_path}")
    return 0


def _read_event_file(path: str) -> dict[str, list[EventInstance]]:
    """Read events keyed by clip id from annotations/predictions jsonl."""
    by_clip: dict[str, list[EventInstance]] = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        by_clip[obj["clip_id"]] = [
            EventInstance(class_index=int(e["class"]), onset=float(e["onset"]),
                          offset=float(e["offset"]))
            for e in obj["events"]
        ]
    return by_clip


def _eval_files(args, out: Path, started: float) -> int:
    ref_annotations = read_annotations(args.ref)
    pred_by_clip = _read_event_file(args.pred)
    if args.classes:
        class_names = json.loads(Path(args.classes).read_text())
    else:
        highest = max((e.class_index for events in pred_by_clip.values()
                       for e in events), default=-1)
        for ann in ref_annotations:
            for cls, _, _ in ann.events:
                highest = max(highest, cls)
        class_names = default_class_names(highest + 1)
    n_classes = len(class_names)
    hop = args.hop or 0.02

    pred_rolls, ref_rolls, pred_events, ref_events = [], [], [], []
    for ann in ref_annotations:
        n_frames = max(1, int(np.ceil(ann.duration / hop)))
        ref_roll = rasterize(ann, n_frames, hop, n_classes)
        events = pred_by_clip.get(ann.clip_id, [])
        pred_ann_events = [(e.class_index, e.onset, e.offset) for e in events]
        pred_roll = rasterize(
            ClipAnnotation(clip_id=ann.clip_id, duration=ann.duration,
                           events=[(c, on, min(off, ann.duration))
                                   for c, on, off in pred_ann_events]),
            n_frames, hop, n_classes)
        pred_rolls.append(pred_roll)
        ref_rolls.append(ref_roll)
        pred_events.append(events)
        ref_events.append([EventInstance(class_index=c, onset=on, offset=off)
                           for c, on, off in ann.events])

    report = build_report(pred_rolls, ref_rolls, pred_events, ref_events,
                          class_names, IntersectionConfig(args.dtc, args.gtc))
    report_path = out / "report.json"
    report_path.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    print(report.to_tsv())
    manifest = RunManifest(
        command="eval",
        config={"dtc": args.dtc, "gtc": args.gtc, "hop": hop},
        seed=None,
        inputs={"pred": str(args.pred), "ref": str(args.ref)},
        outputs=[str(report_path)],
        wall_clock_seconds=time.monotonic() - started,
    )
    manifest.write(out)
    return 0


def _evaluate_checkpoint(ckpt: Checkpoint, prepared, weights, postprocess,
                         dtc: float, gtc: float):
    pred_rolls, ref_rolls, pred_events, ref_events = [], [], [], []
    hop = ckpt.feature_config.hop
    for clip in prepared:
        probs = predict(ckpt, clip.features, weights)
        roll = median_smooth(binarize(probs, postprocess.thresholds, hop),
                             postprocess.median_sizes)
        pred_rolls.append(roll)
        ref_rolls.append(clip.roll)
        pred_events.append(extract_events(roll))
        ref_events.append([EventInstance(class_index=c, onset=on, offset=off)
                           for c, on, off in clip.annotation.events])
    return build_report(pred_rolls, ref_rolls, pred_events, ref_events,
                        ckpt.class_names, IntersectionConfig(dtc, gtc))


def cmd_eval(args) -> int:
    started = time.monotonic()
    out = _out_dir(args)
    if args.pred or args.ref:
        if not (args.pred and args.ref):
            raise ValueError("file evaluation needs both --pred and --ref")
        return _eval_files(args, out, started)
    if not (args.ckpt and args.data):
        raise ValueError("eval needs either --ckpt and --data, or --pred and --ref")

    ckpt = load_checkpoint(args.ckpt)
    prepared, _ = _prepare_dir(ckpt, args.data)
    weights = _weights_from_args(args, ckpt.n_classes)
    postprocess = _postprocess_from_args(args, ckpt.n_classes)
    report = _evaluate_checkpoint(ckpt, prepared, weights, postprocess,
                                  args.dtc, args.gtc)
    report_path = out / "report.json"
    report_path.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    print(report.to_tsv())
    manifest = RunManifest(
        command="eval",
        config={"lambda": [float(x) for x in weights.raw],
                "postprocess": postprocess.to_dict(),
                "dtc": args.dtc, "gtc": args.gtc},
        seed=None,
        inputs={"ckpt": str(args.ckpt), "data": str(args.data)},
        outputs=[str(report_path)],
        wall_clock_seconds=time.monotonic() - started,
    )
    manifest.write(out)
    return 0


def cmd_sweep(args) -> int:
    started = time.monotonic()
    out = _out_dir(args)
    ckpt = load_checkpoint(args.ckpt)
    prepared, _ = _prepare_dir(ckpt, args.data)
    postprocess = _postprocess_from_args(args, ckpt.n_classes)
    weight_grid = [float(w) for w in args.weights.split(",")]
    if not weight_grid:
        raise ValueError("--weights must list at least one value")

    rows = []
    for cls in range(ckpt.n_classes):
        for weight in weight_grid:
            weights = make_inference_weights(cls, weight, ckpt.n_classes)
            report = _evaluate_checkpoint(ckpt, prepared, weights, postprocess,
                                          args.dtc, args.gtc)
            rows.append({
                "class_index": cls,
                "class_name": ckpt.class_names[cls],
                "weight": weight,
                "frame_f1": report.frame_f1[cls],
                "intersection_f1": report.intersection_f1[cls],
                "insertion_rate": report.insertion_rate[cls],
                "deletion_rate": report.deletion_rate[cls],
            })

    csv_path = out / "sweep.csv"
    header = ["class_index", "class_name", "weight", "frame_f1",
              "intersection_f1", "insertion_rate", "deletion_rate"]
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(row[h]) for h in header))
    csv_path.write_text("\n".join(lines) + "\n")
    outputs = [str(csv_path)]

    if args.plot:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(7, 4))
        for cls in range(ckpt.n_classes):
            xs = [r["weight"] for r in rows if r["class_index"] == cls]
            ys = [r["frame_f1"] for r in rows if r["class_index"] == cls]
            ax.plot(xs, ys, marker="o", label=ckpt.class_names[cls])
        ax.set_xlabel("target priority weight")
        ax.set_ylabel("frame F-score of target class")
        ax.legend(fontsize=8)
        fig.tight_layout()
        plot_path = out / "sweep.png"
        fig.savefig(plot_path, dpi=120)
        plt.close(fig)
        outputs.append(str(plot_path))

    manifest = RunManifest(
        command="sweep",
        config={"weights": weight_grid, "postprocess": postprocess.to_dict(),
                "dtc": args.dtc, "gtc": args.gtc},
        seed=None,
        inputs={"ckpt": str(args.ckpt), "data": str(args.data)},
        outputs=outputs,
        wall_clock_seconds=time.monotonic() - started,
    )
    manifest.write(out)
    print(f"sweep -> {csv_path}")
    return 0


def cmd_tune(args) -> int:
    started = time.monotonic()
    out = _out_dir(args)
    ckpt = load_checkpoint(args.ckpt)
    prepared, _ = _prepare_dir(ckpt, args.data)
    weight_grid = ([float(w) for w in args.weights.split(",")]
                   if args.weights else list(DEFAULT_WEIGHT_GRID))
    threshold_grid = ([float(t) for t in args.thresholds.split(",")]
                      if args.thresholds else list(DEFAULT_THRESHOLD_GRID))
    median_grid = ([int(m) for m in args.medians.split(",")]
                   if args.medians else list(DEFAULT_MEDIAN_GRID))
    metric_kind = "frame_f1" if args.metric == "frame" else "intersection_f1"

    result = tune_postprocessing(
        ckpt, prepared, weight_grid=weight_grid, metric_kind=metric_kind,
        threshold_grid=threshold_grid, median_grid=median_grid,
        intersection=IntersectionConfig(args.dtc, args.gtc))
    tune_path = out / "postproc.json"
    result.save(tune_path)

    manifest = RunManifest(
        command="tune",
        config={"metric": metric_kind, "weights": weight_grid,
                "thresholds": threshold_grid, "medians": median_grid,
                "dtc": args.dtc, "gtc": args.gtc},
        seed=None,
        inputs={"ckpt": str(args.ckpt), "data": str(args.data)},
        outputs=[str(tune_path)],
        wall_clock_seconds=time.monotonic() - started,
    )
    manifest.write(out)
    print(f"tuning -> {tune_path}")
    for cls, name in enumerate(ckpt.class_names):
        print(f"{name}\tthreshold={result.postprocess.thresholds[cls]:.2f}"
              f"\tmedian={result.postprocess.median_sizes[cls]}"
              f"\tweight={result.target_weights[cls]:g}"
              f"\tscore={result.scores[cls]:.4f}")
    return 0


def _add_weight_flags(sub):
    sub.add_argument("--target", type=int, default=None,
                     help="single target class index")
    sub.add_argument("--weight", type=float, default=1.0,
                     help="raw priority weight of the target class")
    sub.add_argument("--lambda", dest="lam", type=str, default=None,
                     help="comma-separated raw priority vector")


def _add_postproc_flags(sub):
    sub.add_argument("--postproc", type=str, default=None,
                     help="postproc.json produced by the tune command")
    sub.add_argument("--threshold", type=float, default=None,
                     help="uniform detection threshold (default 0.5)")
    sub.add_argument("--median", type=int, default=None,
                     help="uniform median filter size (odd, default 1)")


def _add_metric_flags(sub):
    sub.add_argument("--dtc", type=float, default=0.5,
                     help="detection tolerance overlap ratio")
    sub.add_argument("--gtc", type=float, default=0.5,
                     help="ground-truth intersection overlap ratio")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="soundtriage",
        description="Priority-conditioned polyphonic sound event detection.")
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="generate a synthetic dataset")
    synth.add_argument("--out", required=True)
    synth.add_argument("--clips", type=int, required=True)
    synth.add_argument("--classes", type=int, required=True)
    synth.add_argument("--duration", type=float, default=10.0)
    synth.add_argument("--sample-rate", type=int, default=None)
    synth.add_argument("--seed", type=int, default=0)
    synth.set_defaults(func=cmd_synth)

    tr = commands.add_parser("train", help="train a detector")
    tr.add_argument("--data", required=True, help="training dataset directory")
    tr.add_argument("--val-data", default=None, help="validation dataset directory")
    tr.add_argument("--val-fraction", type=float, default=0.2)
    tr.add_argument("--out", required=True)
    tr.add_argument("--config", default=None, help="JSON config file")
    tr.add_argument("--loss", choices=["sed", "set_ai", "set_a"], default=None)
    tr.add_argument("--alpha", type=float, default=None)
    tr.add_argument("--epochs", type=int, default=None)
    tr.add_argument("--batch-size", type=int, default=None)
    tr.add_argument("--lr", type=float, default=None)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--identity-film", action="store_true",
                    help="baseline mode: constant identity modulation")
    tr.add_argument("--sample-rate", type=int, default=None)
    tr.add_argument("--window", type=float, default=None)
    tr.add_argument("--hop", type=float, default=None)
    tr.add_argument("--n-mels", type=int, default=None)
    tr.set_defaults(func=cmd_train)

    inf = commands.add_parser("infer", help="write event predictions")
    inf.add_argument("--ckpt", required=True)
    inf.add_argument("--data", required=True)
    inf.add_argument("--out", required=True)
    _add_weight_flags(inf)
    _add_postproc_flags(inf)
    inf.set_defaults(func=cmd_infer)

    ev = commands.add_parser("eval", help="score a checkpoint or event files")
    ev.add_argument("--ckpt", default=None)
    ev.add_argument("--data", default=None)
    ev.add_argument("--pred", default=None, help="predictions jsonl")
    ev.add_argument("--ref", default=None, help="reference annotations jsonl")
    ev.add_argument("--classes", default=None, help="classes.json for file mode")
    ev.add_argument("--hop", type=float, default=None,
                    help="frame hop for file-mode rasterization")
    ev.add_argument("--out", required=True)
    _add_weight_flags(ev)
    _add_postproc_flags(ev)
    _add_metric_flags(ev)
    ev.set_defaults(func=cmd_eval)

    sw = commands.add_parser("sweep", help="per-class metric vs. priority weight")
    sw.add_argument("--ckpt", required=True)
    sw.add_argument("--data", required=True)
    sw.add_argument("--out", required=True)
    sw.add_argument("--weights", default="1,5,10,15,20,25")
    sw.add_argument("--plot", action="store_true", help="also write sweep.png")
    _add_postproc_flags(sw)
    _add_metric_flags(sw)
    sw.set_defaults(func=cmd_sweep)

    tu = commands.add_parser("tune", help="grid-search post-processing per class")
    tu.add_argument("--ckpt", required=True)
    tu.add_argument("--data", required=True, help="validation dataset directory")
    tu.add_argument("--out", required=True)
    tu.add_argument("--metric", choices=["frame", "intersection"], default="frame")
    tu.add_argument("--weights", default=None)
    tu.add_argument("--thresholds", default=None)
    tu.add_argument("--medians", default=None)
    _add_metric_flags(tu)
    tu.set_defaults(func=cmd_tune)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, CheckpointError, OSError,
            json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

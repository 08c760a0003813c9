"""Inference under a chosen priority vector, plus post-processing and tuning.

The detector's output rate is 1/32 of the feature rate, so probabilities are
repeat-upsampled back to the 20 ms grid before thresholding. Binarization
uses a strict per-class threshold, smoothing is a per-class binary median
filter with edge replication, and maximal active runs become event
instances. ``tune_postprocessing`` grid-searches thresholds, filter sizes,
and single-target priority weights per class against a validation set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import forward_clip
from .dataio import EventRoll, FeatureGrid, PreparedClip, repeat_upsample
from .metrics import EventInstance, IntersectionConfig, frame_f1, intersection_f1
from .training import Checkpoint
from .triage import TriageWeights, make_inference_weights

DEFAULT_THRESHOLD_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))
DEFAULT_MEDIAN_GRID = tuple(range(1, 32, 2))
DEFAULT_WEIGHT_GRID = (1.0, 5.0, 10.0, 15.0, 20.0, 25.0)

METRIC_KINDS = ("frame_f1", "intersection_f1")


@dataclass
class PostprocessConfig:
    """Per-class detection thresholds and median filter sizes."""

    thresholds: np.ndarray
    median_sizes: np.ndarray

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        self.median_sizes = np.asarray(self.median_sizes, dtype=np.int64)
        if self.thresholds.shape != self.median_sizes.shape or self.thresholds.ndim != 1:
            raise ValueError("thresholds and median_sizes must be equal-length vectors")
        if ((self.thresholds <= 0) | (self.thresholds >= 1)).any():
            raise ValueError("all thresholds must lie strictly inside (0, 1)")
        if (self.median_sizes < 1).any() or (self.median_sizes % 2 == 0).any():
            raise ValueError("all median sizes must be odd and >= 1")

    @classmethod
    def uniform(cls, n_classes: int, threshold: float = 0.5,
                median_size: int = 1) -> "PostprocessConfig":
        return cls(thresholds=np.full(n_classes, threshold),
                   median_sizes=np.full(n_classes, median_size, dtype=np.int64))

    def to_dict(self) -> dict:
        return {"thresholds": self.thresholds.tolist(),
                "median_sizes": self.median_sizes.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PostprocessConfig":
        return cls(thresholds=d["thresholds"], median_sizes=d["median_sizes"])


def predict(ckpt: Checkpoint, features: FeatureGrid,
            weights: TriageWeights | None = None) -> np.ndarray:
    """Class-activity probabilities ``[N, T_frames]`` at the feature rate.

    Runs the detector conditioned on ``weights`` (uniform if None), applies
    the sigmoid, and repeat-upsamples from the output rate back to the
    feature frame rate. Clips are always processed one at a time, so
    results never depend on how callers group them.
    """
    film = ckpt.film_for(weights)
    grid = FeatureGrid(values=ckpt.standardize(features.values),
                       frame_hop=features.frame_hop)
    posterior = forward_clip(ckpt.backbone, grid, film)
    probs = posterior.probabilities
    return repeat_upsample(probs, ckpt.backbone.config.pool_factor, features.n_frames)


def binarize(probs: np.ndarray, thresholds: np.ndarray,
             frame_hop: float) -> EventRoll:
    """Active iff probability strictly exceeds the class threshold."""
    probs = np.asarray(probs)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if probs.ndim != 2 or thresholds.shape != (probs.shape[0],):
        raise ValueError(
            f"need [N, T] probabilities and N thresholds, got {probs.shape} "
            f"and {thresholds.shape}"
        )
    if ((thresholds <= 0) | (thresholds >= 1)).any():
        raise ValueError("all thresholds must lie strictly inside (0, 1)")
    active = (probs > thresholds[:, None]).astype(np.uint8)
    return EventRoll(active=active, frame_hop=frame_hop)


def _median_binary(row: np.ndarray, size: int) -> np.ndarray:
    """Sliding binary median with edge replication; size must be odd."""
    if size == 1:
        return row.copy()
    half = size // 2
    padded = np.concatenate([np.repeat(row[:1], half), row, np.repeat(row[-1:], half)])
    csum = np.concatenate([[0], np.cumsum(padded)])
    window_sum = csum[size:] - csum[:-size]
    return (window_sum >= half + 1).astype(np.uint8)


def median_smooth(roll: EventRoll, sizes: np.ndarray) -> EventRoll:
    """Per-class binary median filter; size 1 is the identity."""
    sizes = np.asarray(sizes, dtype=np.int64)
    if sizes.shape != (roll.n_classes,):
        raise ValueError(
            f"need one filter size per class ({roll.n_classes}), got shape {sizes.shape}"
        )
    if (sizes < 1).any() or (sizes % 2 == 0).any():
        raise ValueError("median filter sizes must be odd and >= 1")
    smoothed = np.stack([
        _median_binary(roll.active[n], int(sizes[n])) for n in range(roll.n_classes)
    ])
    return EventRoll(active=smoothed, frame_hop=roll.frame_hop)


def extract_events(roll: EventRoll) -> list[EventInstance]:
    """Maximal active runs become instances on the clip's time axis."""
    events = []
    hop = roll.frame_hop
    for cls in range(roll.n_classes):
        row = roll.active[cls]
        changes = np.flatnonzero(np.diff(np.concatenate([[0], row, [0]])))
        for start, stop in zip(changes[::2], changes[1::2]):
            events.append(EventInstance(class_index=cls, onset=start * hop,
                                        offset=stop * hop))
    events.sort(key=lambda e: (e.onset, e.class_index))
    return events


def events_from_probs(probs: np.ndarray, postprocess: PostprocessConfig,
                      frame_hop: float) -> list[EventInstance]:
    """Full post-processing chain: threshold, median-smooth, extract runs."""
    roll = binarize(probs, postprocess.thresholds, frame_hop)
    return extract_events(median_smooth(roll, postprocess.median_sizes))


@dataclass
class TuneResult:
    """Validation-tuned post-processing plus per-class best target weights."""

    postprocess: PostprocessConfig
    target_weights: np.ndarray
    scores: np.ndarray
    metric_kind: str

    def to_dict(self) -> dict:
        return {
            "postprocess": self.postprocess.to_dict(),
            "target_weights": self.target_weights.tolist(),
            "scores": self.scores.tolist(),
            "metric_kind": self.metric_kind,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TuneResult":
        return cls(postprocess=PostprocessConfig.from_dict(d["postprocess"]),
                   target_weights=np.asarray(d["target_weights"], dtype=np.float64),
                   scores=np.asarray(d["scores"], dtype=np.float64),
                   metric_kind=d["metric_kind"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TuneResult":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _reference_events(clip: PreparedClip, cls: int) -> list[EventInstance]:
    return [EventInstance(class_index=0, onset=onset, offset=offset)
            for c, onset, offset in clip.annotation.events if c == cls]


def _class_score(rows: list[np.ndarray], clips: list[PreparedClip], cls: int,
                 threshold: float, median_size: int, metric_kind: str,
                 frame_hop: float, intersection: IntersectionConfig) -> float:
    """Score one class at one operating point over the whole clip list."""
    pred_rolls, ref_rolls = [], []
    pred_events, ref_events = [], []
    for row, clip in zip(rows, clips):
        binary = (row > threshold).astype(np.uint8)
        smoothed = _median_binary(binary, median_size) if median_size > 1 else binary
        if metric_kind == "frame_f1":
            pred_rolls.append(smoothed[None, :])
            ref_rolls.append(clip.roll.active[cls][None, :])
        else:
            roll = EventRoll(active=smoothed[None, :], frame_hop=frame_hop)
            pred_events.append(extract_events(roll))
            ref_events.append(_reference_events(clip, cls))
    if metric_kind == "frame_f1":
        per_class, _ = frame_f1(pred_rolls, ref_rolls)
    else:
        per_class, _ = intersection_f1(pred_events, ref_events, intersection, 1)
    return float(per_class[0])


def tune_postprocessing(ckpt: Checkpoint, val_set: list[PreparedClip],
                        weight_grid=DEFAULT_WEIGHT_GRID,
                        metric_kind: str = "frame_f1",
                        threshold_grid=DEFAULT_THRESHOLD_GRID,
                        median_grid=DEFAULT_MEDIAN_GRID,
                        intersection: IntersectionConfig | None = None,
                        ) -> TuneResult:
    """Exhaustive per-class grid search over thresholds, filters, and weights.

    For each class the chosen triple maximizes that class's metric on the
    validation set; ties break toward the smallest threshold, then the
    smallest filter, then the smallest weight. Returned values are the exact
    grid argmax.
    """
    if not val_set:
        raise ValueError("validation set must be nonempty")
    # ascending grids make the first argmax the smallest-value tie-break
    weight_grid = sorted({float(w) for w in weight_grid})
    threshold_grid = sorted({float(t) for t in threshold_grid})
    median_grid = sorted({int(m) for m in median_grid})
    if not weight_grid or not threshold_grid or not median_grid:
        raise ValueError("all tuning grids must be nonempty")
    if metric_kind not in METRIC_KINDS:
        raise ValueError(f"metric_kind must be one of {METRIC_KINDS}")
    intersection = intersection or IntersectionConfig()

    n_classes = ckpt.n_classes
    frame_hop = ckpt.feature_config.hop
    probs_cache: dict[tuple, list[np.ndarray]] = {}

    def probs_for(weights: TriageWeights) -> list[np.ndarray]:
        key = tuple(np.round(weights.normalized, 12))
        if key not in probs_cache:
            probs_cache[key] = [predict(ckpt, clip.features, weights)
                                for clip in val_set]
        return probs_cache[key]

    best_thresholds = np.empty(n_classes)
    best_medians = np.empty(n_classes, dtype=np.int64)
    best_weights = np.empty(n_classes)
    best_scores = np.full(n_classes, -1.0)
    for cls in range(n_classes):
        # grid order fixes the tie-break: threshold, then filter, then weight
        scores = np.empty((len(threshold_grid), len(median_grid), len(weight_grid)))
        for wi, weight in enumerate(weight_grid):
            lam = make_inference_weights(cls, weight, n_classes)
            rows = [p[cls] for p in probs_for(lam)]
            for ti, threshold in enumerate(threshold_grid):
                for mi, median_size in enumerate(median_grid):
                    scores[ti, mi, wi] = _class_score(
                        rows, val_set, cls, threshold, median_size,
                        metric_kind, frame_hop, intersection)
        flat = int(np.argmax(scores))  # first max in C order = the tie-break order
        ti, mi, wi = np.unravel_index(flat, scores.shape)
        best_thresholds[cls] = threshold_grid[ti]
        best_medians[cls] = median_grid[mi]
        best_weights[cls] = weight_grid[wi]
        best_scores[cls] = scores[ti, mi, wi]

    return TuneResult(
        postprocess=PostprocessConfig(thresholds=best_thresholds,
                                      median_sizes=best_medians),
        target_weights=best_weights,
        scores=best_scores,
        metric_kind=metric_kind,
    )


def write_predictions(path: str | Path, clip_ids: list[str],
                      weights_used: list[TriageWeights],
                      events_per_clip: list[list[EventInstance]]) -> None:
    """Write predictions.jsonl: clip id, the priority vector, and events."""
    lines = []
    for clip_id, weights, events in zip(clip_ids, weights_used, events_per_clip):
        lines.append(json.dumps({
            "clip_id": clip_id,
            "lambda": [float(x) for x in weights.raw],
            "events": [{"class": e.class_index, "onset": e.onset, "offset": e.offset}
                       for e in events],
        }, sort_keys=True))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))

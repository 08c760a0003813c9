"""Detection quality metrics.

Three views of agreement between predictions and reference:

- frame-based F-score over per-frame binary decisions,
- frame-based insertion/deletion rates (excess FP / FN per frame,
  normalized by the count of reference-active frames),
- intersection-based F-score over event instances, where a prediction
  counts once it overlaps references enough (detection tolerance
  criterion) and a reference counts as detected once enough of it is
  covered by valid predictions (ground-truth intersection criterion).

Per-class scores are averaged unweighted into macro scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataio import EventRoll


@dataclass(frozen=True)
class EventInstance:
    """One detected or annotated event: class index plus onset/offset seconds."""

    class_index: int
    onset: float
    offset: float

    def __post_init__(self):
        if not self.onset < self.offset:
            raise ValueError(
                f"event instance must have onset < offset, got "
                f"({self.onset}, {self.offset})"
            )
        if self.class_index < 0:
            raise ValueError(f"negative class index {self.class_index}")

    @property
    def duration(self) -> float:
        return self.offset - self.onset


@dataclass(frozen=True)
class IntersectionConfig:
    """Overlap-ratio thresholds for instance matching, both in (0, 1]."""

    dtc: float = 0.5
    gtc: float = 0.5

    def __post_init__(self):
        for name, value in (("dtc", self.dtc), ("gtc", self.gtc)):
            if not 0 < value <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {value}")


def _roll_pairs(pred, ref) -> list[tuple[np.ndarray, np.ndarray]]:
    """Normalize (pred, ref) into a list of matching binary array pairs."""
    def as_array(r):
        return r.active if isinstance(r, EventRoll) else np.asarray(r)

    if isinstance(pred, (EventRoll, np.ndarray)) != isinstance(ref, (EventRoll, np.ndarray)):
        raise ValueError("prediction and reference must both be rolls or both be lists")
    if isinstance(pred, (EventRoll, np.ndarray)):
        pred, ref = [pred], [ref]
    if len(pred) != len(ref):
        raise ValueError(f"{len(pred)} predictions vs {len(ref)} references")
    pairs = []
    for p, r in zip(pred, ref):
        p, r = as_array(p), as_array(r)
        if p.shape != r.shape:
            raise ValueError(
                f"prediction shape {p.shape} does not match reference {r.shape}"
            )
        pairs.append((p.astype(np.int64), r.astype(np.int64)))
    if not pairs:
        raise ValueError("no clips to evaluate")
    n_classes = pairs[0][0].shape[0]
    if any(p.shape[0] != n_classes for p, _ in pairs):
        raise ValueError("all clips must share one class count")
    return pairs


def frame_f1(pred, ref) -> tuple[np.ndarray, float]:
    """Per-class and macro frame-based F-score.

    Accepts single rolls or equal-length lists of rolls; counts pool over
    all frames of all clips. A class whose denominator is zero scores 0.
    """
    pairs = _roll_pairs(pred, ref)
    n_classes = pairs[0][0].shape[0]
    tp = np.zeros(n_classes, dtype=np.int64)
    fp = np.zeros(n_classes, dtype=np.int64)
    fn = np.zeros(n_classes, dtype=np.int64)
    for p, r in pairs:
        tp += ((p == 1) & (r == 1)).sum(axis=1)
        fp += ((p == 1) & (r == 0)).sum(axis=1)
        fn += ((p == 0) & (r == 1)).sum(axis=1)
    denom = 2 * tp + fp + fn
    per_class = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    return per_class, float(per_class.mean())


def insertion_deletion(pred, ref) -> tuple[np.ndarray, np.ndarray]:
    """Per-class insertion and deletion rates.

    Per frame, insertion is excess false positive (``max(0, FP - FN)``) and
    deletion is excess false negative; rates divide by the number of
    reference-active frames. Classes never active in the reference have no
    defined rate and come back as NaN (excluded from any averaging).
    """
    pairs = _roll_pairs(pred, ref)
    n_classes = pairs[0][0].shape[0]
    ins = np.zeros(n_classes, dtype=np.int64)
    dele = np.zeros(n_classes, dtype=np.int64)
    act = np.zeros(n_classes, dtype=np.int64)
    for p, r in pairs:
        fp = ((p == 1) & (r == 0)).astype(np.int64)
        fn = ((p == 0) & (r == 1)).astype(np.int64)
        ins += np.maximum(0, fp - fn).sum(axis=1)
        dele += np.maximum(0, fn - fp).sum(axis=1)
        act += r.sum(axis=1)
    with np.errstate(invalid="ignore"):
        ir = np.where(act > 0, ins / np.maximum(act, 1), np.nan)
        dr = np.where(act > 0, dele / np.maximum(act, 1), np.nan)
    return ir, dr


def _merge_intervals(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    if not intervals:
        return []
    merged = []
    for start, stop in sorted(intervals):
        if merged and start <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], stop))
        else:
            merged.append((start, stop))
    return merged


def _overlap(start: float, stop: float, merged: list[tuple[float, float]]) -> float:
    total = 0.0
    for a, b in merged:
        total += max(0.0, min(stop, b) - max(start, a))
    return total


def _event_lists(events) -> list[list[EventInstance]]:
    """Normalize to per-clip lists; a flat list of instances is one clip."""
    if all(isinstance(e, EventInstance) for e in events):
        return [list(events)]
    return [list(clip) for clip in events]


def intersection_f1(pred_events, ref_events, config: IntersectionConfig,
                    n_classes: int) -> tuple[np.ndarray, float]:
    """Per-class and macro instance-level F-score under DTC/GTC matching.

    ``pred_events`` and ``ref_events`` are per-clip lists of
    :class:`EventInstance` (a flat list is treated as a single clip);
    instances never match across clips. A prediction is valid if the merged
    same-class references cover at least ``dtc`` of its duration; a
    reference is detected if valid predictions cover at least ``gtc`` of
    its duration. TP = detected references, FN = the rest, FP = invalid
    predictions.
    """
    preds_by_clip = _event_lists(pred_events)
    refs_by_clip = _event_lists(ref_events)
    if len(preds_by_clip) != len(refs_by_clip):
        raise ValueError(
            f"{len(preds_by_clip)} prediction clips vs {len(refs_by_clip)} reference clips"
        )
    tp = np.zeros(n_classes, dtype=np.int64)
    fp = np.zeros(n_classes, dtype=np.int64)
    fn = np.zeros(n_classes, dtype=np.int64)
    for preds, refs in zip(preds_by_clip, refs_by_clip):
        for ev in list(preds) + list(refs):
            if ev.class_index >= n_classes:
                raise ValueError(
                    f"event class {ev.class_index} out of range for {n_classes} classes"
                )
        for cls in range(n_classes):
            p_cls = [e for e in preds if e.class_index == cls]
            r_cls = [e for e in refs if e.class_index == cls]
            ref_union = _merge_intervals([(e.onset, e.offset) for e in r_cls])
            valid = [e for e in p_cls
                     if _overlap(e.onset, e.offset, ref_union) / e.duration >= config.dtc]
            valid_union = _merge_intervals([(e.onset, e.offset) for e in valid])
            detected = sum(
                1 for e in r_cls
                if _overlap(e.onset, e.offset, valid_union) / e.duration >= config.gtc
            )
            tp[cls] += detected
            fn[cls] += len(r_cls) - detected
            fp[cls] += len(p_cls) - len(valid)
    denom = 2 * tp + fp + fn
    per_class = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    return per_class, float(per_class.mean())


@dataclass
class MetricsReport:
    """Per-class and macro-averaged scores, serializable to report.json."""

    class_names: list[str]
    frame_f1: np.ndarray
    intersection_f1: np.ndarray
    insertion_rate: np.ndarray
    deletion_rate: np.ndarray

    def macro(self, values: np.ndarray) -> float:
        defined = values[~np.isnan(values)]
        return float(defined.mean()) if defined.size else float("nan")

    def to_dict(self) -> dict:
        def clean(x: float):
            return None if math.isnan(x) else float(x)

        per_class = {
            name: {
                "frame_f1": clean(self.frame_f1[i]),
                "intersection_f1": clean(self.intersection_f1[i]),
                "insertion_rate": clean(self.insertion_rate[i]),
                "deletion_rate": clean(self.deletion_rate[i]),
            }
            for i, name in enumerate(self.class_names)
        }
        macro = {
            "frame_f1": clean(self.macro(self.frame_f1)),
            "intersection_f1": clean(self.macro(self.intersection_f1)),
            "insertion_rate": clean(self.macro(self.insertion_rate)),
            "deletion_rate": clean(self.macro(self.deletion_rate)),
        }
        return {"classes": list(self.class_names), "per_class": per_class, "macro": macro}

    def to_tsv(self) -> str:
        """Tab-separated summary, one line per class plus a macro line."""
        def cell(x: float) -> str:
            return "nan" if math.isnan(x) else f"{x:.4f}"

        lines = ["class\tframe_f1\tintersection_f1\tinsertion_rate\tdeletion_rate"]
        for i, name in enumerate(self.class_names):
            lines.append("\t".join([
                name, cell(self.frame_f1[i]), cell(self.intersection_f1[i]),
                cell(self.insertion_rate[i]), cell(self.deletion_rate[i]),
            ]))
        lines.append("\t".join([
            "macro",
            cell(self.macro(self.frame_f1)),
            cell(self.macro(self.intersection_f1)),
            cell(self.macro(self.insertion_rate)),
            cell(self.macro(self.deletion_rate)),
        ]))
        return "\n".join(lines)


def build_report(pred_rolls, ref_rolls, pred_events, ref_events,
                 class_names: list[str],
                 config: IntersectionConfig | None = None) -> MetricsReport:
    """Assemble the full report from per-clip rolls and event lists."""
    config = config or IntersectionConfig()
    n_classes = len(class_names)
    f1, _ = frame_f1(pred_rolls, ref_rolls)
    ir, dr = insertion_deletion(pred_rolls, ref_rolls)
    inter, _ = intersection_f1(pred_events, ref_events, config, n_classes)
    return MetricsReport(class_names=list(class_names), frame_f1=f1,
                         intersection_f1=inter, insertion_rate=ir, deletion_rate=dr)

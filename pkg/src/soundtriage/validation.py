"""Input validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

from .dataio import ClipAnnotation


def check_waveform(x, sample_rate: int, min_samples: int = 1) -> np.ndarray:
    """Coerce to a finite mono float64 waveform of at least ``min_samples``."""
    wave = np.asarray(x, dtype=np.float64)
    if wave.ndim != 1:
        raise ValueError(f"waveform must be 1-D mono, got shape {wave.shape}")
    if wave.size < min_samples:
        raise ValueError(
            f"waveform has {wave.size} samples; at least {min_samples} required "
            f"at {sample_rate} Hz"
        )
    if not np.all(np.isfinite(wave)):
        raise ValueError("waveform contains non-finite samples")
    return wave


def check_annotation(y, clip_id: str, duration: float) -> ClipAnnotation:
    """Coerce an event list (or ClipAnnotation) into a validated ClipAnnotation."""
    if isinstance(y, ClipAnnotation):
        return y
    events = []
    for item in y:
        if len(item) != 3:
            raise ValueError(
                f"each event must be (class_index, onset, offset), got {item!r}"
            )
        cls, onset, offset = item
        events.append((int(cls), float(onset), float(offset)))
    return ClipAnnotation(clip_id=clip_id, duration=duration, events=events)


def check_paired_lists(X, y) -> None:
    if len(X) != len(y):
        raise ValueError(f"X has {len(X)} clips but y has {len(y)} annotation lists")
    if len(X) == 0:
        raise ValueError("need at least one clip")


def infer_n_classes(annotations: list[ClipAnnotation]) -> int:
    """Smallest class count covering every annotated event."""
    highest = -1
    for ann in annotations:
        for cls, _, _ in ann.events:
            highest = max(highest, cls)
    if highest < 0:
        raise ValueError("no events found in y; cannot infer the class count")
    return highest + 1


def check_fitted(estimator, attribute: str = "checkpoint_") -> None:
    if not hasattr(estimator, attribute):
        raise RuntimeError(
            f"{type(estimator).__name__} instance is not fitted yet; call fit first"
        )

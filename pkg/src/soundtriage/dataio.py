"""Synthetic soundscape generation, log-mel features, and frame-aligned labels.

The dataset layout on disk is:

    <root>/
      clips/<clip_id>.wav     PCM 16-bit mono
      annotations.jsonl       one JSON object per clip
      classes.json            array of class names, index = class id

Annotation objects look like
``{"clip_id": str, "duration": float, "events": [{"class": int, "onset": float, "offset": float}]}``.
Events of one class may overlap each other and events of other classes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile


@dataclass(frozen=True)
class ClipAnnotation:
    """Ground-truth events of a single clip.

    ``events`` holds ``(class_index, onset, offset)`` triples in seconds.
    Polyphony is allowed: events may overlap arbitrarily.
    """

    clip_id: str
    duration: float
    events: list[tuple[int, float, float]] = field(default_factory=list)

    def __post_init__(self):
        for cls, onset, offset in self.events:
            if not (0.0 <= onset < offset <= self.duration):
                raise ValueError(
                    f"clip {self.clip_id!r}: event ({cls}, {onset}, {offset}) "
                    f"violates 0 <= onset < offset <= duration={self.duration}"
                )
            if cls < 0:
                raise ValueError(f"clip {self.clip_id!r}: negative class index {cls}")


@dataclass(frozen=True)
class FeatureConfig:
    """Log-mel front-end parameters."""

    sample_rate: int = 44100
    window: float = 0.040
    hop: float = 0.020
    n_mels: int = 64
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.hop > self.window:
            raise ValueError(f"hop ({self.hop}) must be <= window ({self.window})")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    @property
    def window_samples(self) -> int:
        return int(round(self.window * self.sample_rate))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop * self.sample_rate))

    def n_frames(self, n_samples: int) -> int:
        """Frame count for a waveform of ``n_samples`` samples."""
        return (n_samples - self.window_samples) // self.hop_samples + 1

    def to_dict(self) -> dict:
        return {
            "sample_rate": self.sample_rate,
            "window": self.window,
            "hop": self.hop,
            "n_mels": self.n_mels,
            "log_floor": self.log_floor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(**d)


@dataclass
class FeatureGrid:
    """Time-major matrix of log-mel energies, shape ``[T_frames, n_mels]``."""

    values: np.ndarray
    frame_hop: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"feature grid must be 2-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature grid contains non-finite values")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]


@dataclass
class EventRoll:
    """Binary class-activity matrix, shape ``[N_classes, T_frames]``."""

    active: np.ndarray
    frame_hop: float

    def __post_init__(self):
        self.active = np.asarray(self.active)
        if self.active.ndim != 2:
            raise ValueError(f"event roll must be 2-D, got shape {self.active.shape}")
        if self.active.size and not np.isin(self.active, (0, 1)).all():
            raise ValueError("event roll entries must be 0 or 1")
        self.active = self.active.astype(np.uint8)

    @property
    def n_classes(self) -> int:
        return self.active.shape[0]

    @property
    def n_frames(self) -> int:
        return self.active.shape[1]


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular mel filterbank, shape ``[n_mels, n_fft // 2 + 1]``.

    Filters are triangles with unit peak on the mel scale
    (``2595 * log10(1 + f / 700)``) between ``fmin`` and ``fmax``
    (defaults to Nyquist).
    """
    if fmax is None:
        fmax = sample_rate / 2.0

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)

    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_fft // 2 + 1)

    bank = np.zeros((n_mels, fft_freqs.size))
    for m in range(n_mels):
        left, center, right = edges[m], edges[m + 1], edges[m + 2]
        rise = (fft_freqs - left) / max(center - left, 1e-12)
        fall = (right - fft_freqs) / max(right - center, 1e-12)
        bank[m] = np.clip(np.minimum(rise, fall), 0.0, None)
    return bank


def extract_logmel(waveform: np.ndarray, config: FeatureConfig) -> FeatureGrid:
    """Compute a log-mel feature grid from a mono waveform.

    Frames of ``config.window`` seconds are taken every ``config.hop``
    seconds, Hann-windowed, and mapped to ``n_mels`` mel-band energies.
    The output is ``log(mel_energy + log_floor)``, finite everywhere.
    """
    wave = np.asarray(waveform, dtype=np.float64)
    if wave.ndim != 1:
        raise ValueError(f"waveform must be mono 1-D, got shape {wave.shape}")
    win = config.window_samples
    hop = config.hop_samples
    if wave.size < win:
        raise ValueError(
            f"waveform has {wave.size} samples but at least {win} "
            f"(one {config.window}-s window at {config.sample_rate} Hz) are required"
        )

    n_frames = config.n_frames(wave.size)
    n_fft = 1 << max(win - 1, 1).bit_length()  # next power of two >= win
    window_fn = np.hanning(win)
    bank = mel_filterbank(config.sample_rate, n_fft, config.n_mels)

    starts = np.arange(n_frames) * hop
    frames = wave[starts[:, None] + np.arange(win)[None, :]] * window_fn
    spectrum = np.fft.rfft(frames, n=n_fft, axis=1)
    power = np.abs(spectrum) ** 2
    mel_energy = power @ bank.T
    return FeatureGrid(values=np.log(mel_energy + config.log_floor), frame_hop=config.hop)


def rasterize(annotation: ClipAnnotation, n_frames: int, frame_hop: float,
              n_classes: int) -> EventRoll:
    """Turn an event list into a binary class x frame roll.

    Frame ``t`` covers ``[t * hop, (t + 1) * hop)`` and is active for class
    ``n`` iff it overlaps any of that class's events. Overlapping instances
    of one class union.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    active = np.zeros((n_classes, n_frames), dtype=np.uint8)
    for cls, onset, offset in annotation.events:
        if cls >= n_classes:
            raise ValueError(
                f"clip {annotation.clip_id!r}: class index {cls} out of range "
                f"for {n_classes} classes"
            )
        # strict overlap with [t*hop, t*hop + hop): onset < end and offset > start
        first = 0
        while first < n_frames and (first + 1) * frame_hop <= onset:
            first += 1
        t = first
        while t < n_frames and offset > t * frame_hop:
            active[cls, t] = 1
            t += 1
    return EventRoll(active=active, frame_hop=frame_hop)


def pool_labels(roll: EventRoll, factor: int) -> EventRoll:
    """Max-pool a roll along time by ``factor``; the last partial window is
    maxed over the remaining frames. Output has ``ceil(T / factor)`` frames."""
    if factor < 1:
        raise ValueError("pooling factor must be >= 1")
    if factor == 1:
        return EventRoll(active=roll.active.copy(), frame_hop=roll.frame_hop)
    n_out = -(-roll.n_frames // factor)
    pooled = np.zeros((roll.n_classes, n_out), dtype=np.uint8)
    for t in range(n_out):
        pooled[:, t] = roll.active[:, t * factor:(t + 1) * factor].max(axis=1)
    return EventRoll(active=pooled, frame_hop=roll.frame_hop * factor)


def repeat_upsample(values: np.ndarray, factor: int, n_frames: int) -> np.ndarray:
    """Repeat each column ``factor`` times along the last axis, then truncate
    to ``n_frames``. Inverse of the model's temporal pooling for evaluation."""
    if factor < 1:
        raise ValueError("upsampling factor must be >= 1")
    out = np.repeat(values, factor, axis=-1)
    if out.shape[-1] < n_frames:
        raise ValueError(
            f"cannot upsample {values.shape[-1]} frames by {factor} to {n_frames}"
        )
    return out[..., :n_frames]


def class_tone_frequencies(n_classes: int, sample_rate: int) -> np.ndarray:
    """Per-class fundamental frequencies, log-spaced and clear of Nyquist."""
    fmax = min(0.3 * sample_rate, 6000.0)
    return np.geomspace(300.0, fmax, n_classes)


def synthesize_dataset(n_clips: int, n_classes: int, duration: float, seed: int,
                       sample_rate: int = 16000,
                       events_per_clip: tuple[int, int] = (1, 4),
                       event_duration: tuple[float, float] = (0.4, 1.5),
                       amp_range: tuple[float, float] = (0.012, 0.15),
                       noise_level: float = 0.08,
                       amp_decay: float = 1.0,
                       ) -> list[tuple[np.ndarray, ClipAnnotation]]:
    """Generate deterministic synthetic soundscapes with annotations.

    Each class has a fixed two-partial tone signature at a class-specific
    fundamental; events are placed at random onsets with per-event amplitudes
    drawn log-uniformly from ``amp_range`` over Gaussian background noise.
    The default amplitude span reaches down to the noise floor, so some
    events are genuinely hard to detect. ``amp_decay`` < 1 additionally makes
    higher class indices uniformly fainter (geometric per-class gain from
    1.0 down to ``amp_decay``). Identical seeds reproduce bit-identical
    waveforms and annotations.
    """
    if n_clips < 0:
        raise ValueError("n_clips must be >= 0")
    if n_classes < 1:
        raise ValueError("n_classes must be >= 1")
    if duration <= 0:
        raise ValueError("duration must be positive")
    lo_d, hi_d = event_duration
    if not (0 < lo_d <= hi_d):
        raise ValueError("event_duration bounds must satisfy 0 < lo <= hi")
    hi_d = min(hi_d, duration)
    lo_d = min(lo_d, hi_d)

    if not 0 < amp_decay <= 1:
        raise ValueError("amp_decay must lie in (0, 1]")

    rng = np.random.default_rng(seed)
    freqs = class_tone_frequencies(n_classes, sample_rate)
    class_gain = (np.geomspace(1.0, amp_decay, n_classes) if n_classes > 1
                  else np.ones(1))
    n_samples = int(round(duration * sample_rate))
    t_axis = np.arange(n_samples) / sample_rate
    ramp = int(round(0.02 * sample_rate))

    clips = []
    for i in range(n_clips):
        wave = rng.normal(0.0, noise_level, n_samples)
        events = []
        for _ in range(int(rng.integers(events_per_clip[0], events_per_clip[1] + 1))):
            cls = int(rng.integers(0, n_classes))
            dur = float(rng.uniform(lo_d, hi_d))
            onset = float(rng.uniform(0.0, duration - dur))
            amp = float(np.exp(rng.uniform(np.log(amp_range[0]), np.log(amp_range[1]))))
            amp *= float(class_gain[cls])
            phase = float(rng.uniform(0.0, 2 * np.pi))

            start = int(round(onset * sample_rate))
            stop = min(int(round((onset + dur) * sample_rate)), n_samples)
            seg_t = t_axis[start:stop]
            f0 = freqs[cls]
            tone = np.sin(2 * np.pi * f0 * seg_t + phase)
            if 1.5 * f0 < sample_rate / 2:
                tone = tone + 0.5 * np.sin(2 * np.pi * 1.5 * f0 * seg_t + phase)
            env = np.ones(seg_t.size)
            k = min(ramp, seg_t.size // 2)
            if k > 0:
                fade = 0.5 * (1 - np.cos(np.pi * np.arange(k) / k))
                env[:k] = fade
                env[-k:] = fade[::-1]
            wave[start:stop] += amp * tone * env
            events.append((cls, onset, round(onset + dur, 6)))

        events.sort(key=lambda e: (e[1], e[0]))
        wave = np.clip(wave, -1.0, 1.0)
        clips.append((wave, ClipAnnotation(clip_id=f"clip_{i:05d}",
                                           duration=duration, events=events)))
    return clips


def default_class_names(n_classes: int) -> list[str]:
    return [f"class_{i}" for i in range(n_classes)]


def write_dataset(root: str | Path, clips: list[tuple[np.ndarray, ClipAnnotation]],
                  class_names: list[str], sample_rate: int) -> Path:
    """Write clips + annotations in the on-disk dataset layout."""
    root = Path(root)
    (root / "clips").mkdir(parents=True, exist_ok=True)
    lines = []
    for wave, ann in clips:
        pcm = np.clip(np.round(np.asarray(wave) * 32767.0), -32768, 32767).astype(np.int16)
        wavfile.write(root / "clips" / f"{ann.clip_id}.wav", sample_rate, pcm)
        lines.append(json.dumps({
            "clip_id": ann.clip_id,
            "duration": ann.duration,
            "events": [{"class": c, "onset": on, "offset": off}
                       for c, on, off in ann.events],
        }, sort_keys=True))
    (root / "annotations.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))
    (root / "classes.json").write_text(json.dumps(class_names) + "\n")
    return root


def read_annotations(path: str | Path) -> list[ClipAnnotation]:
    """Read a line-delimited annotation file (the dataset format)."""
    annotations = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        annotations.append(ClipAnnotation(
            clip_id=obj["clip_id"],
            duration=float(obj["duration"]),
            events=[(int(e["class"]), float(e["onset"]), float(e["offset"]))
                    for e in obj["events"]],
        ))
    return annotations


def read_dataset(root: str | Path) -> tuple[list[tuple[np.ndarray, ClipAnnotation]], list[str], int]:
    """Read a dataset directory; returns (clips, class_names, sample_rate)."""
    root = Path(root)
    annotations = read_annotations(root / "annotations.jsonl")
    class_names = json.loads((root / "classes.json").read_text())
    clips = []
    sample_rate = None
    for ann in annotations:
        rate, pcm = wavfile.read(root / "clips" / f"{ann.clip_id}.wav")
        if sample_rate is None:
            sample_rate = rate
        elif rate != sample_rate:
            raise ValueError(f"mixed sample rates in dataset: {sample_rate} vs {rate}")
        clips.append((pcm.astype(np.float64) / 32767.0, ann))
    if sample_rate is None:
        raise ValueError(f"dataset at {root} contains no clips")
    return clips, class_names, int(sample_rate)


@dataclass
class PreparedClip:
    """A clip readied for training/evaluation: features plus aligned labels."""

    clip_id: str
    features: FeatureGrid
    roll: EventRoll         # at the feature frame rate
    roll_pooled: EventRoll  # at the model output rate
    annotation: ClipAnnotation


def prepare_clips(clips: list[tuple[np.ndarray, ClipAnnotation]], n_classes: int,
                  config: FeatureConfig, pool_factor: int) -> list[PreparedClip]:
    """Extract features and rasterize labels for a list of (waveform, annotation)."""
    prepared = []
    for wave, ann in clips:
        features = extract_logmel(wave, config)
        roll = rasterize(ann, features.n_frames, config.hop, n_classes)
        prepared.append(PreparedClip(
            clip_id=ann.clip_id,
            features=features,
            roll=roll,
            roll_pooled=pool_labels(roll, pool_factor),
            annotation=ann,
        ))
    return prepared

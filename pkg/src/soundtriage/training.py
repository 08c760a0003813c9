"""Training loop: per-batch priority sampling, FiLM conditioning, and the
class-weighted losses, plus checkpoint save/load.

Every batch draws one priority vector; the very same vector conditions the
network (through the FiLM MLPs) and weights the loss. Validation after each
epoch runs at uniform priorities, and the best-validation parameters are the
ones returned.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import losses as losses_mod
from .backbone import BackboneConfig, DetectorBackbone
from .conditioning import FilmParams, TriageConditioner, identity_film
from .dataio import FeatureConfig, PreparedClip, repeat_upsample
from .metrics import frame_f1
from .triage import DirichletConfig, TriageWeights, sample_triage, scale_for_conditioning

CHECKPOINT_FORMAT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss goes non-finite."""


class CheckpointError(RuntimeError):
    """Raised for unreadable, corrupt, or version-mismatched checkpoints."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings for one training run."""

    batch_size: int = 64
    epochs: int = 100
    learning_rate: float = 1e-3
    loss_kind: str = "set_a"
    dirichlet_alpha: float = 0.1
    seed: int = 0
    identity_film: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.dirichlet_alpha <= 0:
            raise ValueError("dirichlet_alpha must be positive")
        if self.loss_kind not in losses_mod.LOSS_KINDS:
            raise ValueError(
                f"loss_kind must be one of {losses_mod.LOSS_KINDS}, got {self.loss_kind!r}"
            )

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "loss_kind": self.loss_kind,
            "dirichlet_alpha": self.dirichlet_alpha,
            "seed": self.seed,
            "identity_film": self.identity_film,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class Checkpoint:
    """A trained detector plus everything needed to run it again."""

    backbone: DetectorBackbone
    conditioner: TriageConditioner | None
    train_config: TrainConfig
    feature_config: FeatureConfig
    class_names: list[str]
    epoch: int
    val_score: float
    feature_mean: np.ndarray
    feature_std: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.backbone.config.n_classes

    @property
    def identity_film(self) -> bool:
        return self.conditioner is None

    def standardize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.feature_mean) / self.feature_std

    def film_for(self, weights: TriageWeights | None) -> FilmParams:
        """FiLM parameters for a priority vector (None means uniform)."""
        if self.conditioner is None:
            dtype = next(self.backbone.parameters()).dtype
            return identity_film(self.backbone.n_channels, dtype=dtype)
        if weights is None:
            weights = TriageWeights.uniform(self.n_classes)
        if weights.n_classes != self.n_classes:
            raise ValueError(
                f"priority vector has {weights.n_classes} entries, "
                f"model expects {self.n_classes}"
            )
        dtype = next(self.conditioner.parameters()).dtype
        scaled = torch.as_tensor(scale_for_conditioning(weights), dtype=dtype)
        with torch.no_grad():
            return self.conditioner(scaled)


def _feature_stats(clips: list[PreparedClip]) -> tuple[np.ndarray, np.ndarray]:
    stacked = np.concatenate([c.features.values for c in clips], axis=0)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), 1e-5)
    return mean, std


def _clip_tensors(clips: list[PreparedClip], mean: np.ndarray, std: np.ndarray,
                  dtype: torch.dtype) -> tuple[list[torch.Tensor], list[torch.Tensor]]:
    feats, targets = [], []
    for clip in clips:
        x = (clip.features.values - mean) / std
        feats.append(torch.as_tensor(x, dtype=dtype).unsqueeze(0))   # [1, T, F]
        targets.append(torch.as_tensor(clip.roll_pooled.active, dtype=dtype))
    return feats, targets


def _group_by_length(indices, feats) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i in indices:
        groups.setdefault(feats[i].shape[1], []).append(i)
    return groups


def _forward_grouped(model, film, feats, indices, chunk: int = 32):
    """Yield (index_list, logits) for same-length chunks, deterministic order."""
    for _, idx in _group_by_length(indices, feats).items():
        for k in range(0, len(idx), chunk):
            part = idx[k:k + chunk]
            x = torch.stack([feats[i] for i in part])
            yield part, model(x, film)


def _validate(model, film, feats, clips) -> float:
    """Macro frame-F at 20 ms resolution, threshold 0.5."""
    model.eval()
    factor = model.config.pool_factor
    preds, refs = [], []
    with torch.no_grad():
        for part, logits in _forward_grouped(model, film, feats, range(len(feats))):
            probs = torch.sigmoid(logits).cpu().numpy().astype(np.float64)
            for row, i in enumerate(part):
                n_frames = clips[i].roll.n_frames
                up = repeat_upsample(probs[row], factor, n_frames)
                preds.append((up > 0.5).astype(np.uint8))
                refs.append(clips[i].roll.active)
    model.train()
    _, macro = frame_f1(preds, refs)
    return macro


def train(train_set: list[PreparedClip], val_set: list[PreparedClip],
          config: TrainConfig, feature_config: FeatureConfig,
          class_names: list[str] | None = None,
          log_path: str | Path | None = None,
          sampler=None) -> Checkpoint:
    """Train a detector and return the best-validation checkpoint.

    ``sampler(rng) -> TriageWeights`` may replace the Dirichlet draw (one
    call per batch). The run is fully reproducible for a fixed config seed.
    One epoch log line is ``epoch<TAB>train_loss<TAB>val_frame_f1``.
    """
    if not train_set or not val_set:
        raise ValueError("train and validation sets must be nonempty")
    n_classes = train_set[0].roll.n_classes
    for clip in list(train_set) + list(val_set):
        if clip.roll.n_classes != n_classes:
            raise ValueError("inconsistent class counts across clips")
    if class_names is None:
        class_names = [f"class_{i}" for i in range(n_classes)]

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    backbone = DetectorBackbone(BackboneConfig(
        n_mels=feature_config.n_mels, n_classes=n_classes))
    conditioner = None
    if not config.identity_film:
        conditioner = TriageConditioner(n_classes, backbone.n_channels)
    params = list(backbone.parameters())
    if conditioner is not None:
        params += list(conditioner.parameters())
    optimizer = torch.optim.Adam(params, lr=config.learning_rate)

    mean, std = _feature_stats(train_set)
    dtype = torch.float32
    feats, targets = _clip_tensors(train_set, mean, std, dtype)
    val_feats, _ = _clip_tensors(val_set, mean, std, dtype)
    dirichlet = DirichletConfig.symmetric(n_classes, config.dirichlet_alpha)
    if sampler is None:
        sampler = lambda generator: sample_triage(dirichlet, generator)
    uniform_input = torch.as_tensor(
        scale_for_conditioning(TriageWeights.uniform(n_classes)), dtype=dtype)

    best_score = -1.0
    best_state = None
    best_epoch = 0
    log_lines = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = [int(i) for i in order[start:start + config.batch_size]]
            weights = sampler(rng)
            if conditioner is not None:
                film = conditioner(torch.as_tensor(
                    scale_for_conditioning(weights), dtype=dtype))
            else:
                film = identity_film(backbone.n_channels, dtype=dtype)

            optimizer.zero_grad()
            total = torch.zeros((), dtype=dtype)
            for part, logits in _forward_grouped(backbone, film, feats, batch):
                y = torch.stack([targets[i] for i in part])
                part_loss = losses_mod.batch_loss(config.loss_kind, logits, y, weights)
                total = total + part_loss * (len(part) / len(batch))
            value = float(total.detach())
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite training loss {value} at epoch {epoch}, "
                    f"batch {n_batches + 1}"
                )
            total.backward()
            optimizer.step()
            epoch_loss += value
            n_batches += 1

        if conditioner is not None:
            conditioner.eval()
            with torch.no_grad():
                val_film = conditioner(uniform_input)
            conditioner.train()
        else:
            val_film = identity_film(backbone.n_channels, dtype=dtype)
        val_score = _validate(backbone, val_film, val_feats, val_set)
        log_lines.append(f"{epoch}\t{epoch_loss / n_batches:.6f}\t{val_score:.6f}")

        if val_score > best_score:
            best_score = val_score
            best_epoch = epoch
            best_state = (
                copy.deepcopy(backbone.state_dict()),
                copy.deepcopy(conditioner.state_dict()) if conditioner else None,
            )

    if log_path is not None:
        Path(log_path).write_text("\n".join(log_lines) + "\n")

    backbone.load_state_dict(best_state[0])
    if conditioner is not None:
        conditioner.load_state_dict(best_state[1])
    backbone.eval()
    if conditioner is not None:
        conditioner.eval()
    return Checkpoint(
        backbone=backbone,
        conditioner=conditioner,
        train_config=config,
        feature_config=feature_config,
        class_names=class_names,
        epoch=best_epoch,
        val_score=best_score,
        feature_mean=mean,
        feature_std=std,
    )


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Serialize a checkpoint; the round trip preserves parameters exactly."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "backbone_config": ckpt.backbone.config.to_dict(),
        "backbone_state": ckpt.backbone.state_dict(),
        "conditioner_state": ckpt.conditioner.state_dict() if ckpt.conditioner else None,
        "train_config": ckpt.train_config.to_dict(),
        "feature_config": ckpt.feature_config.to_dict(),
        "class_names": list(ckpt.class_names),
        "epoch": ckpt.epoch,
        "val_score": ckpt.val_score,
        "feature_mean": torch.as_tensor(ckpt.feature_mean),
        "feature_std": torch.as_tensor(ckpt.feature_std),
    }
    torch.save(payload, str(path))


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Load a checkpoint saved by :func:`save_checkpoint`."""
    try:
        payload = torch.load(str(path), map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"{path} is not a detector checkpoint")
    version = payload["format_version"]
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} is not supported "
            f"(this build reads version {CHECKPOINT_FORMAT_VERSION})"
        )

    backbone = DetectorBackbone(BackboneConfig.from_dict(payload["backbone_config"]))
    backbone.load_state_dict(payload["backbone_state"])
    backbone.eval()
    conditioner = None
    if payload["conditioner_state"] is not None:
        conditioner = TriageConditioner(backbone.config.n_classes, backbone.n_channels)
        conditioner.load_state_dict(payload["conditioner_state"])
        conditioner.eval()
    return Checkpoint(
        backbone=backbone,
        conditioner=conditioner,
        train_config=TrainConfig.from_dict(payload["train_config"]),
        feature_config=FeatureConfig.from_dict(payload["feature_config"]),
        class_names=list(payload["class_names"]),
        epoch=int(payload["epoch"]),
        val_score=float(payload["val_score"]),
        feature_mean=payload["feature_mean"].numpy().astype(np.float64),
        feature_std=payload["feature_std"].numpy().astype(np.float64),
    )

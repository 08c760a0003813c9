"""Priority (triage) weight vectors: sampling, normalization, construction.

A triage vector assigns one nonnegative priority per event class. During
training, vectors are drawn from a symmetric Dirichlet so that a single
network sees the whole range of priority trade-offs; at inference the user
picks any vector they like.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TriageWeights:
    """Per-class priority vector with raw and simplex-normalized views."""

    raw: np.ndarray
    normalized: np.ndarray = field(init=False)

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=np.float64)
        if raw.ndim != 1:
            raise ValueError(f"triage weights must be a vector, got shape {raw.shape}")
        if raw.size == 0:
            raise ValueError("triage weights must be non-empty")
        if (raw < 0).any():
            raise ValueError("triage weights must be nonnegative")
        total = raw.sum()
        if total <= 0:
            raise ValueError("at least one triage weight must be positive")
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "normalized", raw / total)

    @property
    def n_classes(self) -> int:
        return self.raw.size

    @classmethod
    def uniform(cls, n_classes: int) -> "TriageWeights":
        return cls(raw=np.ones(n_classes))


@dataclass(frozen=True)
class DirichletConfig:
    """Symmetric or general Dirichlet shape over the class simplex."""

    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=np.float64))
        if (alpha <= 0).any():
            raise ValueError("all Dirichlet shape parameters must be positive")
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def symmetric(cls, n_classes: int, alpha: float) -> "DirichletConfig":
        return cls(alpha=np.full(n_classes, float(alpha)))

    @property
    def n_classes(self) -> int:
        return self.alpha.size


def sample_triage(config: DirichletConfig, rng: np.random.Generator) -> TriageWeights:
    """Draw one priority vector from Dirichlet(alpha) as normalized gammas.

    The draw lands on the simplex directly, so raw == normalized.
    Deterministic for a fixed generator state.
    """
    gammas = rng.standard_gamma(config.alpha)
    total = gammas.sum()
    if total <= 0:
        # possible only through extreme underflow of every component
        gammas = np.full(config.n_classes, 1.0)
        total = float(config.n_classes)
    return TriageWeights(raw=gammas / total)


def make_inference_weights(target: int, target_weight: float, n_classes: int) -> TriageWeights:
    """Single-target priority vector: all classes at 1.0 except the target.

    ``raw = (1, ..., target_weight, ..., 1)``; the normalized view divides by
    ``target_weight + n_classes - 1``.
    """
    if not 0 <= target < n_classes:
        raise ValueError(f"target class {target} out of range for {n_classes} classes")
    if target_weight <= 0:
        raise ValueError("target weight must be positive")
    raw = np.ones(n_classes)
    raw[target] = target_weight
    return TriageWeights(raw=raw)


def scale_for_conditioning(weights: TriageWeights) -> np.ndarray:
    """Scale the normalized vector by the class count before conditioning.

    Uniform priorities map to the all-ones vector, so the conditioning input
    is O(1) regardless of how many classes there are.
    """
    return weights.n_classes * weights.normalized


def parse_lambda(text: str) -> TriageWeights:
    """Parse a comma-separated raw weight vector, e.g. ``"5,1,1,1,1"``."""
    try:
        raw = np.array([float(part) for part in text.split(",")])
    except ValueError as exc:
        raise ValueError(f"cannot parse triage weights from {text!r}: {exc}") from None
    return TriageWeights(raw=raw)

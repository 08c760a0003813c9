"""Map priority vectors to per-channel feature modulation (FiLM).

Two independent MLPs turn the scaled priority vector into a shift vector
``mu`` and a scale vector ``sigma``, one entry per CNN channel. A feature
map value at location (i, j) of channel c becomes ``value * sigma[c] + mu[c]``;
the same pair modulates every CNN block of the detector.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class FilmParams:
    """Per-channel affine modulation: ``sigma`` multiplies, ``mu`` shifts."""

    mu: torch.Tensor
    sigma: torch.Tensor

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape or self.mu.ndim != 1:
            raise ValueError(
                f"mu and sigma must be equal-length vectors, got "
                f"{tuple(self.mu.shape)} and {tuple(self.sigma.shape)}"
            )

    @property
    def n_channels(self) -> int:
        return self.mu.shape[0]


def identity_film(n_channels: int, dtype: torch.dtype = torch.float32) -> FilmParams:
    """The no-op modulation: sigma = 1, mu = 0."""
    return FilmParams(mu=torch.zeros(n_channels, dtype=dtype),
                      sigma=torch.ones(n_channels, dtype=dtype))


def _mlp(in_dim: int, hidden_dims: tuple[int, ...], out_dim: int) -> nn.Sequential:
    layers: list[nn.Module] = []
    prev = in_dim
    for width in hidden_dims:
        layers += [nn.Linear(prev, width), nn.LeakyReLU()]
        prev = width
    layers.append(nn.Linear(prev, out_dim))  # linear output, no activation
    return nn.Sequential(*layers)


class TriageConditioner(nn.Module):
    """Two parallel MLPs producing the FiLM shift and scale vectors.

    Hidden widths default to (64, 256, 128) with leaky-ReLU activations and a
    linear output layer of one unit per CNN channel. The scale head's output
    bias starts at 1 so training begins near the identity modulation.
    """

    def __init__(self, n_classes: int, n_channels: int = 64,
                 hidden_dims: tuple[int, ...] = (64, 256, 128)):
        super().__init__()
        self.n_classes = n_classes
        self.n_channels = n_channels
        self.shift_mlp = _mlp(n_classes, hidden_dims, n_channels)
        self.scale_mlp = _mlp(n_classes, hidden_dims, n_channels)
        with torch.no_grad():
            self.scale_mlp[-1].bias.fill_(1.0)

    def forward(self, scaled_weights: torch.Tensor) -> FilmParams:
        """Condition on an already class-count-scaled priority vector."""
        if scaled_weights.ndim != 1 or scaled_weights.shape[0] != self.n_classes:
            raise ValueError(
                f"conditioner expects a vector of length {self.n_classes}, "
                f"got shape {tuple(scaled_weights.shape)}"
            )
        return FilmParams(mu=self.shift_mlp(scaled_weights),
                          sigma=self.scale_mlp(scaled_weights))


def apply_film(feature_map: torch.Tensor, film: FilmParams) -> torch.Tensor:
    """Modulate a ``[C, I, J]`` or ``[B, C, I, J]`` feature map per channel."""
    if feature_map.ndim == 3:
        channels = feature_map.shape[0]
        shape = (channels, 1, 1)
    elif feature_map.ndim == 4:
        channels = feature_map.shape[1]
        shape = (1, channels, 1, 1)
    else:
        raise ValueError(f"feature map must be 3-D or 4-D, got {feature_map.ndim}-D")
    if channels != film.n_channels:
        raise ValueError(
            f"feature map has {channels} channels but film has {film.n_channels}"
        )
    return feature_map * film.sigma.view(shape) + film.mu.view(shape)

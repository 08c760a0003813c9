"""CRNN detector: 3 modulated CNN blocks, a BiGRU, and 2 FC layers.

Each CNN block is conv(3x3, same padding) -> leaky ReLU -> FiLM -> max pool.
Pooling shrinks only the time axis, by 8, 2, and 2, so the output rate is
1/32 of the feature frame rate (ceil division). The 64-channel map is
flattened per time step into the BiGRU; two FC layers produce one logit per
class and output step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .conditioning import FilmParams, apply_film
from .dataio import FeatureGrid


@dataclass(frozen=True)
class BackboneConfig:
    """Architecture hyperparameters of the detection network."""

    n_mels: int = 64
    n_classes: int = 10
    cnn_channels: tuple[int, int, int] = (64, 64, 64)
    kernel: int = 3
    time_pools: tuple[int, int, int] = (8, 2, 2)
    gru_units: int = 64
    fc_units: int = 32

    @property
    def pool_factor(self) -> int:
        return int(np.prod(self.time_pools))

    def n_output_frames(self, n_frames: int) -> int:
        return -(-n_frames // self.pool_factor)

    def to_dict(self) -> dict:
        return {
            "n_mels": self.n_mels,
            "n_classes": self.n_classes,
            "cnn_channels": list(self.cnn_channels),
            "kernel": self.kernel,
            "time_pools": list(self.time_pools),
            "gru_units": self.gru_units,
            "fc_units": self.fc_units,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        d = dict(d)
        d["cnn_channels"] = tuple(d["cnn_channels"])
        d["time_pools"] = tuple(d["time_pools"])
        return cls(**d)


@dataclass
class PosteriorGrid:
    """Per-class, per-frame logits and sigmoid probabilities, ``[N, T_out]``."""

    logits: np.ndarray
    frame_hop_out: float

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 2:
            raise ValueError(f"logits must be 2-D, got shape {self.logits.shape}")

    @property
    def probabilities(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.logits))

    @property
    def n_classes(self) -> int:
        return self.logits.shape[0]

    @property
    def n_frames(self) -> int:
        return self.logits.shape[1]


class DetectorBackbone(nn.Module):
    """The CRNN detection network with FiLM hooks in every CNN block."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        channels = config.cnn_channels
        if len(set(channels)) != 1:
            raise ValueError("all CNN blocks must share one channel count for FiLM")
        self.n_channels = channels[0]

        convs, pools = [], []
        in_ch = 1
        for out_ch, pool in zip(channels, config.time_pools):
            convs.append(nn.Conv2d(in_ch, out_ch, config.kernel,
                                   padding=config.kernel // 2))
            pools.append(nn.MaxPool2d((pool, 1), ceil_mode=True))
            in_ch = out_ch
        self.convs = nn.ModuleList(convs)
        self.pools = nn.ModuleList(pools)
        self.act = nn.LeakyReLU()
        self.gru = nn.GRU(channels[-1] * config.n_mels, config.gru_units,
                          batch_first=True, bidirectional=True)
        self.fc1 = nn.Linear(2 * config.gru_units, config.fc_units)
        self.fc2 = nn.Linear(config.fc_units, config.n_classes)

    def forward(self, x: torch.Tensor, film: FilmParams) -> torch.Tensor:
        """``[B, 1, T, n_mels]`` features -> ``[B, n_classes, T_out]`` logits.

        The same modulation pair is applied after every conv activation,
        before pooling.
        """
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[3] != self.config.n_mels:
            raise ValueError(
                f"expected input of shape [B, 1, T, {self.config.n_mels}], "
                f"got {tuple(x.shape)}"
            )
        for conv, pool in zip(self.convs, self.pools):
            x = pool(apply_film(self.act(conv(x)), film))
        # [B, C, T', F] -> [B, T', C*F]
        b, c, t, f = x.shape
        x = x.permute(0, 2, 1, 3).reshape(b, t, c * f)
        x, _ = self.gru(x)
        x = self.act(self.fc1(x))
        logits = self.fc2(x)          # [B, T', N]
        return logits.permute(0, 2, 1)


def forward_clip(model: DetectorBackbone, features: FeatureGrid,
                 film: FilmParams) -> PosteriorGrid:
    """Run the detector on a single clip's feature grid."""
    if features.n_mels != model.config.n_mels:
        raise ValueError(
            f"feature grid has {features.n_mels} mel bands, "
            f"model expects {model.config.n_mels}"
        )
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(features.values, dtype=dtype).unsqueeze(0).unsqueeze(0)
    with torch.no_grad():
        logits = model(x, film)[0]
    return PosteriorGrid(logits=logits.cpu().numpy(),
                         frame_hop_out=features.frame_hop * model.config.pool_factor)

"""Speech-production stage: visual-dominant fusion of the preliminary estimate's
log-mel with lip embeddings, three 1-D convolutions, and a per-hop waveform head."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import signal
from .errors import InvalidArgumentError
from .fusion import VISUAL_DOMINANT, DominanceConfig, FusionLayer, FusionStrategy, sinusoidal_positions


@dataclass
class SynthesizerConfig:
    proj_dim: int = 256
    conv_channels: tuple = (256, 128, 160)
    conv_kernel: int = 7
    n_mels: int = signal.N_MELS
    video_dim: int = 768
    ff_dim: int = 1024
    # std of the final convolution's initial weights; small so s_res starts near zero
    head_init_std: float = 1e-3

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        if len(self.conv_channels) != 3 or min(self.conv_channels) <= 0:
            raise InvalidArgumentError("synthesizer.conv_channels must be three positive ints")
        if self.conv_channels[-1] != signal.HOP_SAMPLES:
            raise InvalidArgumentError(
                f"last conv channel count must equal the hop size ({signal.HOP_SAMPLES})"
            )
        if self.conv_kernel % 2 == 0:
            raise InvalidArgumentError("synthesizer.conv_kernel must be odd")
        if min(self.proj_dim, self.n_mels, self.video_dim, self.ff_dim) <= 0:
            raise InvalidArgumentError("synthesizer dimensions must be positive")

    @classmethod
    def toy(cls, video_dim: int = 64) -> "SynthesizerConfig":
        return cls(64, (64, 64, 160), 7, signal.N_MELS, video_dim, 256)


class Synthesizer(nn.Module):
    def __init__(
        self,
        config: SynthesizerConfig,
        strategy: FusionStrategy = FusionStrategy.CROSS_ATTENTION,
        dominance: DominanceConfig = VISUAL_DOMINANT,
    ):
        super().__init__()
        self.config = config
        p = config.proj_dim
        c1, c2, c3 = config.conv_channels
        pad = config.conv_kernel // 2
        self.mel_proj = nn.Linear(config.n_mels, p)
        self.video_proj = nn.Linear(config.video_dim, p)
        self.fusion = FusionLayer(p, config.ff_dim, strategy, dominance)
        self.conv1 = nn.Conv1d(p, c1, config.conv_kernel, padding=pad)
        self.conv2 = nn.Conv1d(c1, c2, config.conv_kernel, padding=pad)
        self.conv3 = nn.Conv1d(c2, c3, config.conv_kernel, padding=pad)
        nn.init.normal_(self.conv3.weight, std=config.head_init_std)
        nn.init.zeros_(self.conv3.bias)

    @property
    def dominance(self) -> DominanceConfig:
        return self.fusion.dominance

    def frames(self, mel: torch.Tensor, f_v: torch.Tensor, video_rate: float = signal.VIDEO_RATE):
        """Return the ``[B, 160, T_mel]`` per-hop sample frames before folding."""
        ratio = signal.MEL_RATE / video_rate
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise InvalidArgumentError(
                f"video rate {video_rate} Hz does not divide the mel rate {signal.MEL_RATE} Hz"
            )
        ratio = int(round(ratio))
        t_mel = mel.shape[-1]
        if abs(f_v.shape[-1] * ratio - t_mel) > ratio:
            raise InvalidArgumentError(
                f"{f_v.shape[-1]} video frames do not cover {t_mel} mel frames"
            )
        v = signal.repeat_frames(f_v, ratio, t_mel)
        pe = sinusoidal_positions(t_mel, self.config.proj_dim, mel.dtype, mel.device)
        a = self.mel_proj(mel.transpose(1, 2)) + pe
        v = self.video_proj(v.transpose(1, 2)) + pe
        h = self.fusion(a, v).transpose(1, 2)
        h = F.relu(self.conv1(h))
        h = F.relu(self.conv2(h))
        return self.conv3(h)

    def forward(self, mel: torch.Tensor, f_v: torch.Tensor, video_rate: float = signal.VIDEO_RATE):
        """``mel: [B, 80, T_mel]``, ``f_v: [B, D_v, F]`` -> ``[B, 160 * T_mel]``."""
        return signal.fold(self.frames(mel, f_v, video_rate))


def synthesize_residual(
    s_pre: signal.MelSpec, f_v: signal.EmbeddingSeq, params: Synthesizer
) -> signal.Waveform:
    out = params(s_pre.data.unsqueeze(0), f_v.data.unsqueeze(0), f_v.frame_rate)[0]
    return signal.Waveform(out)


def produce_tensor(s_pre: torch.Tensor, s_res: torch.Tensor) -> torch.Tensor:
    """``s_pre + s_res`` after trimming / zero-padding ``s_res`` by less than one hop."""
    gap = s_res.shape[-1] - s_pre.shape[-1]
    if abs(gap) >= signal.HOP_SAMPLES:
        raise InvalidArgumentError(
            f"residual length {s_res.shape[-1]} differs from {s_pre.shape[-1]} by a hop or more"
        )
    if gap > 0:
        s_res = s_res[..., : s_pre.shape[-1]]
    elif gap < 0:
        s_res = F.pad(s_res, (0, -gap))
    return s_pre + s_res


def produce(s_pre: signal.Waveform, s_res: signal.Waveform) -> signal.Waveform:
    return signal.Waveform(produce_tensor(s_pre.samples, s_res.samples), s_pre.sample_rate)

"""Speech-perception stage: a dual-path transformer separator conditioned on lips.

Pipeline: conv encoder -> chunking -> audio-dominant cross-modal fusion ->
``n_repeats`` x (intra blocks, inter blocks) -> sigmoid mask on the encoded
mixture -> overlap-add -> transposed-conv decoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import signal
from .errors import InvalidArgumentError
from .fusion import AUDIO_DOMINANT, DominanceConfig, FusionLayer, FusionStrategy, sinusoidal_positions


@dataclass
class SeparatorConfig:
    n_channels: int = 256
    chunk_len: int = 160
    n_intra: int = 8
    n_inter: int = 7
    n_repeats: int = 2
    encoder_kernel: int = 16
    encoder_stride: int = 8
    n_heads: int = 4
    ff_dim: int = 1024
    video_dim: int = 768

    def __post_init__(self):
        for name, value in vars(self).items():
            if int(value) <= 0:
                raise InvalidArgumentError(f"separator.{name} must be positive")
        if self.chunk_len % 2:
            raise InvalidArgumentError("separator.chunk_len must be even")
        if self.encoder_stride > self.encoder_kernel:
            raise InvalidArgumentError("separator.encoder_stride must not exceed the kernel")
        if self.n_channels % self.n_heads:
            raise InvalidArgumentError("separator.n_channels must be divisible by n_heads")

    @classmethod
    def toy(cls, video_dim: int = 64) -> "SeparatorConfig":
        return cls(64, 40, 2, 2, 1, 16, 8, 4, 256, video_dim)


def encoded_length(n_samples: int, kernel: int, stride: int) -> int:
    return (n_samples - kernel) // stride + 1


class DualPathBlock(nn.Module):
    """A stack of transformer encoder layers run along one axis of ``[B, N, K, S]``.

    ``kind="intra"`` attends within each chunk (over K), ``kind="inter"`` across
    chunks (over S) for every intra-chunk position. Sinusoidal positions are
    added along the processed axis, and a skip connection wraps the stack.
    """

    def __init__(self, kind: str, n_layers: int, dim: int, n_heads: int, ff_dim: int):
        super().__init__()
        if kind not in ("intra", "inter"):
            raise InvalidArgumentError(f"kind must be 'intra' or 'inter', got {kind!r}")
        self.kind = kind
        self.layers = nn.ModuleList(
            nn.TransformerEncoderLayer(
                dim, n_heads, ff_dim, dropout=0.0, batch_first=True, norm_first=True
            )
            for _ in range(n_layers)
        )
        self.norm = nn.LayerNorm(dim)

    def sequence_model(self, seq: torch.Tensor) -> torch.Tensor:
        """Apply the block to plain sequences ``[batch, length, dim]``."""
        h = seq + sinusoidal_positions(seq.shape[1], seq.shape[2], seq.dtype, seq.device)
        for layer in self.layers:
            h = layer(h)
        return seq + self.norm(h)

    def forward(self, xc: torch.Tensor) -> torch.Tensor:
        b, n, k, s = xc.shape
        if self.kind == "intra":
            seq = xc.permute(0, 3, 2, 1).reshape(b * s, k, n)
            out = self.sequence_model(seq)
            return out.reshape(b, s, k, n).permute(0, 3, 2, 1)
        seq = xc.permute(0, 2, 3, 1).reshape(b * k, s, n)
        out = self.sequence_model(seq)
        return out.reshape(b, k, s, n).permute(0, 3, 1, 2)


def dual_path_block(cf: signal.ChunkedFeature, params: DualPathBlock) -> signal.ChunkedFeature:
    """Typed wrapper: run one block on an unbatched ``[N, K, S]`` chunked feature."""
    return signal.ChunkedFeature(params(cf.data.unsqueeze(0))[0], cf.original_time)


class Separator(nn.Module):
    """Lip-conditioned mask-estimation separator producing the preliminary estimate."""

    def __init__(
        self,
        config: SeparatorConfig,
        strategy: FusionStrategy = FusionStrategy.CROSS_ATTENTION,
        dominance: DominanceConfig = AUDIO_DOMINANT,
    ):
        super().__init__()
        self.config = config
        n = config.n_channels
        self.encoder = nn.Conv1d(1, n, config.encoder_kernel, config.encoder_stride, bias=False)
        self.input_norm = nn.GroupNorm(1, n)
        self.video_proj = nn.Linear(config.video_dim, n)
        self.fusion = FusionLayer(n, config.ff_dim, strategy, dominance)
        blocks = []
        for _ in range(config.n_repeats):
            blocks.append(DualPathBlock("intra", config.n_intra, n, config.n_heads, config.ff_dim))
            blocks.append(DualPathBlock("inter", config.n_inter, n, config.n_heads, config.ff_dim))
        self.blocks = nn.ModuleList(blocks)
        self.mask_act = nn.PReLU()
        self.mask_conv = nn.Conv2d(n, n, 1)
        self.decoder = nn.ConvTranspose1d(
            n, 1, config.encoder_kernel, config.encoder_stride, bias=False
        )

    @property
    def dominance(self) -> DominanceConfig:
        return self.fusion.dominance

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """``[B, T_a] -> [B, N_a, T_X]`` with a rectified strided convolution."""
        if x.shape[-1] < self.config.encoder_kernel:
            raise InvalidArgumentError(
                f"input of {x.shape[-1]} samples is shorter than the encoder kernel"
            )
        return F.relu(self.encoder(x.unsqueeze(1)))

    def align_video(self, f_v: torch.Tensor, n_chunks: int) -> torch.Tensor:
        """``[B, D_v, F] -> [B, N_a, K, S]``: project, resample to S, replicate over K."""
        if f_v.shape[-1] == 0:
            raise InvalidArgumentError("empty video embedding")
        v = self.video_proj(f_v.transpose(1, 2)).transpose(1, 2)
        v = signal.interpolate_frames(v, n_chunks)
        return v.unsqueeze(2).expand(-1, -1, self.config.chunk_len, -1)

    def _fuse(self, xc: torch.Tensor, vc: torch.Tensor) -> torch.Tensor:
        # attention runs per chunk over the intra-chunk axis
        b, n, k, s = xc.shape
        pe = sinusoidal_positions(k, n, xc.dtype, xc.device)
        a = xc.permute(0, 3, 2, 1).reshape(b * s, k, n) + pe
        v = vc.permute(0, 3, 2, 1).reshape(b * s, k, n) + pe
        h = self.fusion(a, v)
        return h.reshape(b, s, k, n).permute(0, 3, 2, 1)

    def check_durations(self, n_samples: int, n_video_frames: int, video_rate: float):
        samples_per_frame = signal.SAMPLE_RATE / video_rate
        if abs(n_samples - n_video_frames * samples_per_frame) > samples_per_frame:
            raise InvalidArgumentError(
                f"audio ({n_samples} samples) and video ({n_video_frames} frames) "
                "cover different durations"
            )

    def estimate_mask(self, x: torch.Tensor, f_v: torch.Tensor):
        """Return ``(mask, encoded_chunks, T_X)``; mask and chunks are ``[B, N, K, S]``."""
        enc = self.encode(x)
        t_x = enc.shape[-1]
        xc = signal.segment(enc, self.config.chunk_len)
        hc = signal.segment(self.input_norm(enc), self.config.chunk_len)
        vc = self.align_video(f_v, xc.shape[-1])
        h = self._fuse(hc, vc)
        for block in self.blocks:
            h = block(h)
        mask = torch.sigmoid(self.mask_conv(self.mask_act(h)))
        return mask, xc, t_x

    def forward(self, x: torch.Tensor, f_v: torch.Tensor, video_rate: float = signal.VIDEO_RATE):
        """``x: [B, T_a]``, ``f_v: [B, D_v, F]`` -> ``s_pre: [B, T_a]``."""
        self.check_durations(x.shape[-1], f_v.shape[-1], video_rate)
        mask, xc, t_x = self.estimate_mask(x, f_v)
        masked = signal.overlap_add(mask * xc, t_x)
        out = self.decoder(masked).squeeze(1)
        return _fit_length(out, x.shape[-1])


def _fit_length(w: torch.Tensor, length: int) -> torch.Tensor:
    if w.shape[-1] >= length:
        return w[..., :length]
    return F.pad(w, (0, length - w.shape[-1]))


def separate(x: signal.Waveform, f_v: signal.EmbeddingSeq, params: Separator) -> signal.Waveform:
    """Typed single-example wrapper around :class:`Separator`."""
    s_pre = params(x.samples.unsqueeze(0), f_v.data.unsqueeze(0), f_v.frame_rate)[0]
    return signal.Waveform(s_pre, x.sample_rate)

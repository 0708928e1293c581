"""Cross-modal fusion: scaled dot-product cross attention and its baselines.

All feature tensors are time-major, ``[..., T, d]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import torch
import torch.nn as nn

from .errors import InvalidArgumentError


class Modality(str, Enum):
    AUDIO = "audio"
    VIDEO = "video"


class FusionStrategy(str, Enum):
    CROSS_ATTENTION = "cross_attention"
    CONCATENATION = "concatenation"
    SUMMATION = "summation"


@dataclass(frozen=True)
class DominanceConfig:
    """Which modality forms the queries and which supplies keys/values.

    The key/value side is the dominant modality (its content is what the
    attention output is built from); the query side only conditions it.
    """

    query_modality: Modality
    kv_modality: Modality

    def __post_init__(self):
        object.__setattr__(self, "query_modality", Modality(self.query_modality))
        object.__setattr__(self, "kv_modality", Modality(self.kv_modality))
        if self.query_modality == self.kv_modality:
            raise InvalidArgumentError("query and key/value modalities must differ")

    @classmethod
    def parse(cls, text: str) -> "DominanceConfig":
        """Parse ``"video/audio"`` as query=video, kv=audio."""
        try:
            q, kv = text.split("/")
        except ValueError:
            raise InvalidArgumentError(f"expected 'query/kv', got {text!r}") from None
        try:
            return cls(Modality(q.strip()), Modality(kv.strip()))
        except ValueError as e:
            raise InvalidArgumentError(str(e)) from None

    def __str__(self) -> str:
        return f"{self.query_modality.value}/{self.kv_modality.value}"


AUDIO_DOMINANT = DominanceConfig(Modality.VIDEO, Modality.AUDIO)
VISUAL_DOMINANT = DominanceConfig(Modality.AUDIO, Modality.VIDEO)

# (perception stage, production stage) pairs; the first one is the default chain.
DOMINANCE_GRID = (
    (AUDIO_DOMINANT, VISUAL_DOMINANT),
    (VISUAL_DOMINANT, VISUAL_DOMINANT),
    (AUDIO_DOMINANT, AUDIO_DOMINANT),
    (VISUAL_DOMINANT, AUDIO_DOMINANT),
)


def attention_weights(query, kv, w_q, w_k):
    """Row-stochastic ``[..., T_q, T_kv]`` attention map."""
    if query.shape[-1] != kv.shape[-1]:
        raise InvalidArgumentError(
            f"inner dimensions differ: query {query.shape[-1]} vs kv {kv.shape[-1]}"
        )
    d = query.shape[-1]
    if w_q.shape != (d, d) or w_k.shape != (d, d):
        raise InvalidArgumentError(f"projection matrices must be {d}x{d}")
    if query.shape[-2] < 1 or kv.shape[-2] < 1:
        raise InvalidArgumentError("attention needs at least one query and one key")
    scores = (query @ w_q) @ (kv @ w_k).transpose(-1, -2) / math.sqrt(d)
    return torch.softmax(scores, dim=-1)


def cross_modal_attention(query, kv, w_q, w_k, w_v):
    """``Softmax(Q K^T / sqrt(d)) V`` with Q, K, V linear maps of the two streams."""
    if w_v.shape != (kv.shape[-1], kv.shape[-1]):
        raise InvalidArgumentError("value projection must be d x d")
    return attention_weights(query, kv, w_q, w_k) @ (kv @ w_v)


class CrossModalAttention(nn.Module):
    """Single-head, bias-free cross attention with learnable ``W_Q, W_K, W_V``."""

    def __init__(self, dim: int):
        super().__init__()
        scale = 1.0 / math.sqrt(dim)
        self.w_q = nn.Parameter(torch.randn(dim, dim) * scale)
        self.w_k = nn.Parameter(torch.randn(dim, dim) * scale)
        self.w_v = nn.Parameter(torch.randn(dim, dim) * scale)

    def forward(self, query, kv):
        return cross_modal_attention(query, kv, self.w_q, self.w_k, self.w_v)

    def weights(self, query, kv):
        return attention_weights(query, kv, self.w_q, self.w_k)


class Fusion(nn.Module):
    """Combine an audio and a video stream under a strategy and dominance setting.

    * ``cross_attention`` -- queries from ``dominance.query_modality``, keys and
      values from ``dominance.kv_modality``; any lengths.
    * ``concatenation`` -- ``[kv ; query]`` stacked on channels, projected to d.
    * ``summation`` -- ``kv + P(query)`` with P a learnable d x d map.

    The last two need time-aligned inputs.
    """

    def __init__(
        self,
        dim: int,
        strategy: FusionStrategy = FusionStrategy.CROSS_ATTENTION,
        dominance: DominanceConfig = AUDIO_DOMINANT,
    ):
        super().__init__()
        self.dim = dim
        self.strategy = FusionStrategy(strategy)
        self.dominance = dominance
        if self.strategy is FusionStrategy.CROSS_ATTENTION:
            self.attention = CrossModalAttention(dim)
        elif self.strategy is FusionStrategy.CONCATENATION:
            self.proj = nn.Linear(2 * dim, dim, bias=False)
        else:
            self.proj = nn.Linear(dim, dim, bias=False)

    def split(self, audio, video):
        """Return ``(query_stream, kv_stream)`` for the configured dominance."""
        if self.dominance.query_modality is Modality.AUDIO:
            return audio, video
        return video, audio

    def forward(self, audio, video):
        query, kv = self.split(audio, video)
        if self.strategy is FusionStrategy.CROSS_ATTENTION:
            return self.attention(query, kv)
        if query.shape[:-1] != kv.shape[:-1]:
            raise InvalidArgumentError(
                f"{self.strategy.value} needs aligned streams, got {tuple(query.shape)}"
                f" and {tuple(kv.shape)}"
            )
        if self.strategy is FusionStrategy.CONCATENATION:
            return self.proj(torch.cat([kv, query], dim=-1))
        return kv + self.proj(query)


def fuse(audio, video, strategy, dominance, params: Fusion):
    """Functional entry point mirroring :class:`Fusion`; ``params`` supplies weights."""
    if FusionStrategy(strategy) is not params.strategy or dominance != params.dominance:
        raise InvalidArgumentError("parameters were built for a different fusion setting")
    return params(audio, video)


class FusionLayer(nn.Module):
    """Fusion wrapped as a pre-norm transformer sub-layer on aligned streams.

    ``h = skip + Fusion(LN(audio), LN(video))`` then ``h + FF(LN(h))``. For cross
    attention the skip is the key/value (dominant) stream; concatenation and
    summation already carry that stream inside their output, so skip is zero.
    """

    def __init__(self, dim, ff_dim, strategy=FusionStrategy.CROSS_ATTENTION, dominance=AUDIO_DOMINANT):
        super().__init__()
        self.fusion = Fusion(dim, strategy, dominance)
        self.norm_audio = nn.LayerNorm(dim)
        self.norm_video = nn.LayerNorm(dim)
        self.norm_ff = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ff_dim), nn.ReLU(), nn.Linear(ff_dim, dim))

    @property
    def dominance(self) -> DominanceConfig:
        return self.fusion.dominance

    @property
    def strategy(self) -> FusionStrategy:
        return self.fusion.strategy

    def forward(self, audio, video):
        h = self.fusion(self.norm_audio(audio), self.norm_video(video))
        if self.strategy is FusionStrategy.CROSS_ATTENTION:
            h = h + self.fusion.split(audio, video)[1]
        return h + self.ff(self.norm_ff(h))


def sinusoidal_positions(length: int, dim: int, dtype=torch.float32, device=None):
    """Standard ``[length, dim]`` sine/cosine position table."""
    pos = torch.arange(length, dtype=torch.float64, device=device)[:, None]
    freq = torch.exp(
        torch.arange(0, dim, 2, dtype=torch.float64, device=device) * (-math.log(10000.0) / dim)
    )
    table = torch.zeros(length, dim, dtype=torch.float64, device=device)
    table[:, 0::2] = torch.sin(pos * freq)
    table[:, 1::2] = torch.cos(pos * freq[: dim // 2])
    return table.to(dtype)

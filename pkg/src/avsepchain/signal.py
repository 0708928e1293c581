"""Deterministic signal primitives: chunking, overlap-add, log-mel, frame alignment.

Two layers live here. The tensor functions (``segment``, ``overlap_add``,
``log_mel_spectrogram``, ...) accept arbitrary leading batch dimensions and are
what the networks call inside autograd. The typed wrappers (``chunk``,
``unchunk``, ``log_mel``, ...) operate on the small dataclasses below and
validate their contracts.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InvalidArgumentError, InvalidStateError

SAMPLE_RATE = 16000
HOP_SAMPLES = 160  # 10 ms
WIN_SAMPLES = 640  # 40 ms
N_FFT = 1024
N_MELS = 80
MEL_FLOOR = 1e-10
MEL_RATE = SAMPLE_RATE / HOP_SAMPLES  # 100 Hz
VIDEO_RATE = 25.0


def _check_finite(t: torch.Tensor, what: str) -> None:
    if not torch.isfinite(t).all():
        raise InvalidArgumentError(f"{what} contains non-finite values")


@dataclass
class Waveform:
    samples: torch.Tensor
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.samples.dim() != 1 or self.samples.numel() == 0:
            raise InvalidArgumentError("waveform must be a non-empty 1-D tensor")
        if self.sample_rate <= 0:
            raise InvalidArgumentError("sample_rate must be positive")
        _check_finite(self.samples, "waveform")

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass
class FeatureMap:
    """[channels x time] latent feature."""

    data: torch.Tensor

    def __post_init__(self):
        if self.data.dim() != 2 or min(self.data.shape) == 0:
            raise InvalidArgumentError("FeatureMap must be a non-empty 2-D tensor")
        _check_finite(self.data, "FeatureMap")


@dataclass
class ChunkedFeature:
    """[channels x chunk_len x num_chunks] with the pre-padding length."""

    data: torch.Tensor
    original_time: int

    @property
    def chunk_len(self) -> int:
        return self.data.shape[-2]

    @property
    def num_chunks(self) -> int:
        return self.data.shape[-1]

    def padded_time(self) -> int:
        k, s = self.chunk_len, self.num_chunks
        return k + (s - 1) * (k // 2)


@dataclass
class MelSpec:
    data: torch.Tensor
    hop_seconds: float = HOP_SAMPLES / SAMPLE_RATE
    win_seconds: float = WIN_SAMPLES / SAMPLE_RATE


@dataclass
class EmbeddingSeq:
    """[dim x frames] sequence tagged with its frame rate in Hz."""

    data: torch.Tensor
    frame_rate: float

    def __post_init__(self):
        if self.data.dim() != 2 or self.data.shape[0] == 0:
            raise InvalidArgumentError("EmbeddingSeq must be [dim x frames] with dim > 0")
        if not self.frame_rate > 0:
            raise InvalidArgumentError("frame_rate must be positive")
        _check_finite(self.data, "EmbeddingSeq")

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[1]


# --------------------------------------------------------------------------
# chunking


def num_chunks(time: int, chunk_len: int) -> int:
    hop = chunk_len // 2
    return max(1, math.ceil((time - chunk_len) / hop) + 1)


def _check_chunk_len(chunk_len: int) -> None:
    if chunk_len < 2 or chunk_len % 2:
        raise InvalidArgumentError(f"chunk_len must be even and >= 2, got {chunk_len}")


def segment(x: torch.Tensor, chunk_len: int) -> torch.Tensor:
    """Split ``[..., T]`` into half-overlapping chunks ``[..., K, S]``.

    The input is right-padded with zeros to ``K + (S-1) * K/2``.
    """
    _check_chunk_len(chunk_len)
    time = x.shape[-1]
    hop = chunk_len // 2
    s = num_chunks(time, chunk_len)
    padded = chunk_len + (s - 1) * hop
    x = F.pad(x, (0, padded - time))
    # unfold -> [..., S, K]
    return x.unfold(-1, chunk_len, hop).transpose(-1, -2)


def overlap_add(xc: torch.Tensor, original_time: int) -> torch.Tensor:
    """Coverage-normalised inverse of :func:`segment`; ``[..., K, S] -> [..., T]``."""
    k, s = xc.shape[-2], xc.shape[-1]
    hop = k // 2
    padded = k + (s - 1) * hop
    if original_time < 1 or original_time > padded:
        raise InvalidStateError(
            f"original_time={original_time} incompatible with {s} chunks of {k}"
        )
    lead = xc.shape[:-2]
    flat = xc.reshape(-1, k, s)
    summed = F.fold(flat, output_size=(1, padded), kernel_size=(1, k), stride=(1, hop))
    ones = torch.ones(1, k, s, dtype=xc.dtype, device=xc.device)
    coverage = F.fold(ones, output_size=(1, padded), kernel_size=(1, k), stride=(1, hop))
    out = (summed / coverage).reshape(*lead, padded)
    return out[..., :original_time]


def chunk(feat: FeatureMap, chunk_len: int) -> ChunkedFeature:
    return ChunkedFeature(segment(feat.data, chunk_len), feat.data.shape[-1])


def unchunk(cf: ChunkedFeature) -> FeatureMap:
    if cf.chunk_len % 2:
        raise InvalidStateError("chunk_len of a ChunkedFeature must be even")
    return FeatureMap(overlap_add(cf.data, cf.original_time))


# --------------------------------------------------------------------------
# log-mel


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=8)
def mel_filterbank(
    n_mels: int = N_MELS,
    n_fft: int = N_FFT,
    sample_rate: int = SAMPLE_RATE,
    f_min: float = 0.0,
    f_max: float = SAMPLE_RATE / 2,
) -> np.ndarray:
    """Triangular (HTK-scale) filters, shape ``[n_mels, n_fft // 2 + 1]``, unit peak."""
    bins = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (bins[None, :] - lo) / (mid - lo)
    down = (hi - bins[None, :]) / (hi - mid)
    fb = np.clip(np.minimum(up, down), 0.0, None)
    fb.setflags(write=False)
    return fb


def log_mel_spectrogram(w: torch.Tensor) -> torch.Tensor:
    """``[..., T]`` at 16 kHz -> ``[..., 80, T // 160]`` log-mel power."""
    time = w.shape[-1]
    if time < WIN_SAMPLES:
        raise InvalidArgumentError(f"need at least {WIN_SAMPLES} samples, got {time}")
    lead = w.shape[:-1]
    window = torch.hann_window(WIN_SAMPLES, dtype=w.dtype, device=w.device)
    spec = torch.stft(
        w.reshape(-1, time),
        n_fft=N_FFT,
        hop_length=HOP_SAMPLES,
        win_length=WIN_SAMPLES,
        window=window,
        center=True,
        pad_mode="reflect",
        return_complex=True,
    )
    power = spec.real**2 + spec.imag**2
    fb = torch.tensor(mel_filterbank(), dtype=w.dtype, device=w.device)
    mel = torch.matmul(fb, power)[..., : time // HOP_SAMPLES]
    return torch.log(torch.clamp(mel, min=MEL_FLOOR)).reshape(*lead, N_MELS, -1)


def log_mel(w: Waveform) -> MelSpec:
    if w.sample_rate != SAMPLE_RATE:
        raise InvalidArgumentError(f"log_mel expects {SAMPLE_RATE} Hz audio")
    return MelSpec(log_mel_spectrogram(w.samples))


# --------------------------------------------------------------------------
# frame-rate alignment


def interpolate_frames(e: torch.Tensor, target_frames: int) -> torch.Tensor:
    """Linear resampling of ``[..., D, F]`` along the last axis, endpoints kept."""
    if target_frames < 1:
        raise InvalidArgumentError("target_frames must be >= 1")
    if e.shape[-1] == 0:
        raise InvalidArgumentError("cannot resample an empty sequence")
    if e.shape[-1] == target_frames:
        return e
    if e.shape[-1] == 1:
        return e.expand(*e.shape[:-1], target_frames)
    lead = e.shape[:-1]
    flat = e.reshape(1, -1, e.shape[-1])
    out = F.interpolate(flat, size=target_frames, mode="linear", align_corners=True)
    return out.reshape(*lead, target_frames)


def resample_embedding(e: EmbeddingSeq, target_frames: int) -> EmbeddingSeq:
    out = interpolate_frames(e.data, target_frames)
    rate = e.frame_rate * target_frames / e.frames
    return EmbeddingSeq(out, rate)


def repeat_frames(e: torch.Tensor, factor: int, target_frames: int) -> torch.Tensor:
    """Nearest-neighbour upsampling by ``factor`` then trim / edge-pad to length."""
    out = torch.repeat_interleave(e, factor, dim=-1)
    have = out.shape[-1]
    if have >= target_frames:
        return out[..., :target_frames]
    return torch.cat([out, out[..., -1:].expand(*out.shape[:-1], target_frames - have)], -1)


def upsample_to_mel(e: EmbeddingSeq, mel_frames: int) -> EmbeddingSeq:
    ratio = MEL_RATE / e.frame_rate
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise InvalidArgumentError(
            f"video rate {e.frame_rate} Hz does not divide the mel rate {MEL_RATE} Hz"
        )
    return EmbeddingSeq(repeat_frames(e.data, int(round(ratio)), mel_frames), MEL_RATE)


# --------------------------------------------------------------------------
# waveform head


def fold(f: torch.Tensor) -> torch.Tensor:
    """``[..., hop, T] -> [..., hop * T]``; column t fills samples [hop*t, hop*(t+1))."""
    return f.transpose(-1, -2).reshape(*f.shape[:-2], -1)


def unfold(w: torch.Tensor, hop: int = HOP_SAMPLES) -> torch.Tensor:
    if w.shape[-1] % hop:
        raise InvalidArgumentError(f"length {w.shape[-1]} is not a multiple of {hop}")
    return w.reshape(*w.shape[:-1], -1, hop).transpose(-1, -2)


def fold_frames(f: FeatureMap) -> Waveform:
    if f.data.shape[0] != HOP_SAMPLES:
        raise InvalidArgumentError(
            f"fold_frames expects {HOP_SAMPLES} channels, got {f.data.shape[0]}"
        )
    return Waveform(fold(f.data))

"""Frozen embedding front-ends (pseudo-phonemes from audio, pseudo-visemes from
lip units) and the binary container for externally precomputed embeddings.

Front-end tensors are registered as buffers, never as parameters, so no
optimizer can see them. Gradients still flow through the audio front-end to
its input waveform.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch
import torch.nn as nn

from . import signal
from .errors import FormatError, InvalidArgumentError

FRAME_SAMPLES = 640  # 40 ms, one video frame
AUDIO_EMBED_RATE = signal.SAMPLE_RATE / FRAME_SAMPLES  # 25 Hz
N_BANDS = 16
ENERGY_FLOOR = 1e-6

MAGIC = b"AVSE"
CONTAINER_VERSION = 1
_HEADER = struct.Struct("<4sIIIf")


class FrontendKind(str, Enum):
    ORACLE_AUDIO = "oracle_audio"
    ORACLE_VIDEO = "oracle_video"
    PRECOMPUTED = "precomputed"


@dataclass(frozen=True)
class FrontendSpec:
    kind: FrontendKind
    embed_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", FrontendKind(self.kind))
        if self.embed_dim <= 0:
            raise InvalidArgumentError("embed_dim must be positive")


@dataclass
class VisemeStream:
    unit_ids: np.ndarray
    n_units: int = 12
    frame_rate: float = signal.VIDEO_RATE

    def __post_init__(self):
        self.unit_ids = np.asarray(self.unit_ids, dtype=np.int64)
        if self.unit_ids.ndim != 1:
            raise InvalidArgumentError("unit_ids must be 1-D")
        if self.unit_ids.size and (self.unit_ids.min() < 0 or self.unit_ids.max() >= self.n_units):
            raise InvalidArgumentError(f"unit ids must lie in [0, {self.n_units})")

    def __len__(self) -> int:
        return self.unit_ids.shape[0]


def band_filterbank(n_bands: int = N_BANDS, n_fft: int = FRAME_SAMPLES) -> np.ndarray:
    """Mel-spaced triangular bandpass filters over 0-8 kHz, ``[n_bands, n_fft//2 + 1]``."""
    return np.array(signal.mel_filterbank(n_bands, n_fft))


class AudioFrontend(nn.Module):
    """Seeded stand-in for a frozen speech encoder.

    Per 40 ms frame: Hann-windowed power spectrum, log energies in 16 fixed
    bands, centred across bands (spectral shape, not level), then a fixed
    random linear map to ``embed_dim``.
    """

    def __init__(self, spec: FrontendSpec = FrontendSpec(FrontendKind.ORACLE_AUDIO)):
        super().__init__()
        if spec.kind is not FrontendKind.ORACLE_AUDIO:
            raise InvalidArgumentError(f"AudioFrontend cannot be built from kind {spec.kind.value}")
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        proj = rng.standard_normal((spec.embed_dim, N_BANDS)) / np.sqrt(N_BANDS)
        self.register_buffer("bands", torch.tensor(band_filterbank(), dtype=torch.float32))
        self.register_buffer("proj", torch.tensor(proj, dtype=torch.float32))
        self.register_buffer("window", torch.hann_window(FRAME_SAMPLES))
        self.frame_rate = AUDIO_EMBED_RATE

    def band_log_energies(self, w: torch.Tensor) -> torch.Tensor:
        """``[..., T] -> [..., 16, T // 640]``."""
        n_frames = w.shape[-1] // FRAME_SAMPLES
        if n_frames == 0:
            raise InvalidArgumentError(f"need at least {FRAME_SAMPLES} samples")
        frames = w[..., : n_frames * FRAME_SAMPLES].reshape(*w.shape[:-1], n_frames, FRAME_SAMPLES)
        spec = torch.fft.rfft(frames * self.window.to(w.dtype), dim=-1)
        power = spec.real**2 + spec.imag**2
        energy = power @ self.bands.to(w.dtype).T
        return torch.log(energy + ENERGY_FLOOR).transpose(-1, -2)

    def forward(self, w: torch.Tensor) -> torch.Tensor:
        """``[..., T] -> [..., embed_dim, T // 640]``."""
        loge = self.band_log_energies(w)
        shape = loge - loge.mean(dim=-2, keepdim=True)
        return self.proj.to(w.dtype) @ shape


class VideoFrontend(nn.Module):
    """Frozen lookup table from lip unit ids to embeddings."""

    def __init__(self, table: torch.Tensor):
        super().__init__()
        if table.dim() != 2:
            raise InvalidArgumentError("viseme table must be [n_units x embed_dim]")
        self.register_buffer("table", table.detach().clone().float())
        self.frame_rate = signal.VIDEO_RATE

    @classmethod
    def seeded(cls, spec: FrontendSpec, n_units: int = 12) -> "VideoFrontend":
        rng = np.random.default_rng(spec.seed)
        table = rng.standard_normal((n_units, spec.embed_dim)) / np.sqrt(spec.embed_dim)
        return cls(torch.tensor(table, dtype=torch.float32))

    @property
    def n_units(self) -> int:
        return self.table.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.table.shape[1]

    def forward(self, unit_ids: torch.Tensor) -> torch.Tensor:
        """``[..., F]`` integer ids -> ``[..., embed_dim, F]``."""
        if unit_ids.numel() and (int(unit_ids.min()) < 0 or int(unit_ids.max()) >= self.n_units):
            raise InvalidArgumentError(f"unit id outside [0, {self.n_units})")
        return self.table[unit_ids.long()].transpose(-1, -2)


def embed_audio(w: signal.Waveform, frontend: AudioFrontend) -> signal.EmbeddingSeq:
    if w.sample_rate != signal.SAMPLE_RATE:
        raise InvalidArgumentError("embed_audio expects 16 kHz audio")
    return signal.EmbeddingSeq(frontend(w.samples), frontend.frame_rate)


def embed_video(v: VisemeStream, frontend: VideoFrontend) -> signal.EmbeddingSeq:
    if v.n_units > frontend.n_units:
        raise InvalidArgumentError("stream alphabet larger than the viseme table")
    return signal.EmbeddingSeq(frontend(torch.as_tensor(v.unit_ids)), v.frame_rate)


# --------------------------------------------------------------------------
# embedding container


def save_embedding(path, e: signal.EmbeddingSeq) -> None:
    """Write ``e`` as little-endian: header then frame-major float32 values."""
    data = e.data.detach().cpu().numpy().astype("<f4")
    dim, frames = data.shape
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, CONTAINER_VERSION, dim, frames, e.frame_rate))
        fh.write(np.ascontiguousarray(data.T).tobytes())
    os.replace(tmp, path)


def load_precomputed(path) -> signal.EmbeddingSeq:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, dim, frames, rate = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CONTAINER_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dim == 0 or frames == 0 or not rate > 0:
        raise FormatError(f"{path}: empty or invalid header (dim={dim}, frames={frames})")
    payload = blob[_HEADER.size :]
    if len(payload) != 4 * dim * frames:
        raise FormatError(
            f"{path}: expected {4 * dim * frames} payload bytes, found {len(payload)}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(frames, dim).T
    if not np.isfinite(values).all():
        raise FormatError(f"{path}: non-finite values")
    return signal.EmbeddingSeq(torch.from_numpy(values.astype(np.float32)), float(rate))

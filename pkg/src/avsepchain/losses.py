"""Training losses and evaluation metrics.

Every function is batched over leading dimensions and differentiable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import DegenerateInputError, InvalidArgumentError, NumericError

EPS = 1e-8


@dataclass
class LossWeights:
    lam: float = 1.0
    margin: float = 0.5
    eps: float = EPS
    clamp_db: float = 30.0

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidArgumentError("lambda must be >= 0")
        if self.margin < 0:
            raise InvalidArgumentError("margin must be >= 0")
        if not self.eps > 0:
            raise InvalidArgumentError("epsilon must be > 0")
        if not self.clamp_db > 0:
            raise InvalidArgumentError("clamp_db must be > 0")


def _check_pair(u: torch.Tensor, u_hat: torch.Tensor) -> None:
    if u.shape != u_hat.shape:
        raise InvalidArgumentError(f"length mismatch: {tuple(u.shape)} vs {tuple(u_hat.shape)}")


def si_snr_loss(u: torch.Tensor, u_hat: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Negative scale-invariant SNR in dB (lower is better), per signal.

    ``u`` is the reference, ``u_hat`` the estimate; both ``[..., T]``.
    """
    _check_pair(u, u_hat)
    u = u - u.mean(dim=-1, keepdim=True)
    u_hat = u_hat - u_hat.mean(dim=-1, keepdim=True)
    energy = (u * u).sum(dim=-1, keepdim=True)
    if bool((energy == 0).any()):
        raise DegenerateInputError("reference signal is identically zero after mean removal")
    s_t = (u_hat * u).sum(dim=-1, keepdim=True) / (energy + eps) * u
    e = u_hat - s_t
    ratio = ((s_t * s_t).sum(-1) + eps) / ((e * e).sum(-1) + eps)
    return -10.0 * torch.log10(ratio)


def si_snr(ref: torch.Tensor, est: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    return -si_snr_loss(ref, est, eps)


def sdr(ref: torch.Tensor, est: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Plain SDR in dB after mean removal (no allowed-distortion projection)."""
    _check_pair(ref, est)
    ref = ref - ref.mean(dim=-1, keepdim=True)
    est = est - est.mean(dim=-1, keepdim=True)
    num = (ref * ref).sum(-1)
    if bool((num == 0).any()):
        raise DegenerateInputError("reference signal is identically zero after mean removal")
    return 10.0 * torch.log10(num / (((ref - est) ** 2).sum(-1) + eps))


def si_snri(mix, est, ref, eps: float = EPS, clamp_db: float = 30.0) -> torch.Tensor:
    """SI-SNR improvement of ``est`` over ``mix``, clamped to +-``clamp_db``."""
    _check_pair(mix, est)
    gain = si_snr(ref, est, eps) - si_snr(ref, mix, eps)
    return gain.clamp(-clamp_db, clamp_db)


def sdri(mix, est, ref, eps: float = EPS, clamp_db: float = 30.0) -> torch.Tensor:
    _check_pair(mix, est)
    gain = sdr(ref, est, eps) - sdr(ref, mix, eps)
    return gain.clamp(-clamp_db, clamp_db)


# --------------------------------------------------------------------------
# semantic matching


def align_by_rate(f_v: torch.Tensor, f_a: torch.Tensor, video_rate: float, audio_rate: float):
    """Index the faster stream onto the slower one's frames; both ``[..., D, F]``.

    With audio at ``r`` times the video rate, video frame t is paired with
    audio frame ``t * r``. The shorter sequence bounds the result.
    """
    if video_rate <= 0 or audio_rate <= 0:
        raise InvalidArgumentError("frame rates must be positive")
    if audio_rate >= video_rate:
        r = audio_rate / video_rate
        step = round(r)
        if abs(r - step) > 1e-9:
            raise InvalidArgumentError(f"rate ratio {r} is not an integer")
        f_a = f_a[..., ::step]
    else:
        r = video_rate / audio_rate
        step = round(r)
        if abs(r - step) > 1e-9:
            raise InvalidArgumentError(f"rate ratio {r} is not an integer")
        f_v = f_v[..., ::step]
    n = min(f_v.shape[-1], f_a.shape[-1])
    return f_v[..., :n], f_a[..., :n]


def frame_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean over frames of the L2 distance between L2-normalised frame vectors."""
    na = F.normalize(a, dim=-2)
    nb = F.normalize(b, dim=-2)
    return torch.linalg.vector_norm(na - nb, dim=-2).mean(dim=-1)


def hinge(d_pos, d_neg, margin: float):
    return torch.clamp(d_pos - d_neg + margin, min=0.0)


def matching_loss(
    f_v: torch.Tensor,
    f_a: torch.Tensor,
    f_a_neg: torch.Tensor,
    margin: float = 0.5,
    video_rate: float = 25.0,
    audio_rate: float = 25.0,
) -> torch.Tensor:
    """Contrastive hinge pulling ``f_a`` toward ``f_v`` and pushing ``f_a_neg`` away.

    All embeddings are ``[..., D, F]``; ``f_a`` and ``f_a_neg`` share ``audio_rate``.
    Returns one value per leading index.
    """
    if f_a.shape != f_a_neg.shape:
        raise InvalidArgumentError("positive and negative audio embeddings differ in shape")
    v, a = align_by_rate(f_v, f_a, video_rate, audio_rate)
    _, a_neg = align_by_rate(f_v, f_a_neg, video_rate, audio_rate)
    return hinge(frame_distance(v, a), frame_distance(v, a_neg), margin)


def total_loss(l_per, l_syn, l_mat, weights: LossWeights):
    parts = {"L_per": l_per, "L_syn": l_syn, "L_mat": l_mat}
    for name, value in parts.items():
        v = float(value.detach()) if torch.is_tensor(value) else float(value)
        if not math.isfinite(v):
            raise NumericError(f"{name} is not finite ({v})")
    return l_per + l_syn + weights.lam * l_mat

"""The two-stage chain: separator -> log-mel -> synthesizer -> residual addition,
with the joint objective."""

from __future__ import annotations

import dataclasses

import torch
import torch.nn as nn

from . import signal
from .config import ExperimentConfig
from .data import coherent_video_frontend
from .frontends import AudioFrontend, FrontendKind, VideoFrontend
from .losses import matching_loss, si_snr_loss, total_loss
from .separator import Separator
from .synthesizer import Synthesizer, produce_tensor


class AVSepChain(nn.Module):
    def __init__(self, config: ExperimentConfig):
        super().__init__()
        self.config = config
        self.separator = Separator(config.separator, config.strategy, config.sep_dominance)
        self.synthesizer = (
            Synthesizer(config.synthesizer, config.strategy, config.syn_dominance)
            if config.use_synthesizer
            else None
        )
        self.audio_frontend = AudioFrontend(config.audio_frontend)
        if config.video_frontend.kind is FrontendKind.ORACLE_VIDEO:
            self.video_frontend = coherent_video_frontend(
                self.audio_frontend, config.n_units, config.video_frontend.seed
            )
        else:
            self.video_frontend = None  # embeddings come precomputed with each example

    def frontend_state(self) -> dict:
        """Every frozen front-end tensor, keyed by name."""
        out = {f"audio_frontend.{k}": v for k, v in self.audio_frontend.state_dict().items()}
        if self.video_frontend is not None:
            out.update({f"video_frontend.{k}": v for k, v in self.video_frontend.state_dict().items()})
        return out

    def trainable_parameters(self, separator_only: bool = False):
        if separator_only or self.synthesizer is None:
            return list(self.separator.parameters())
        return list(self.separator.parameters()) + list(self.synthesizer.parameters())

    def embed_video(self, unit_ids: torch.Tensor) -> torch.Tensor:
        if self.video_frontend is None:
            raise RuntimeError("video embeddings are precomputed for this configuration")
        return self.video_frontend(unit_ids)

    def forward(self, x: torch.Tensor, f_v: torch.Tensor, separator_only: bool = False) -> dict:
        """``x: [B, T]``, ``f_v: [B, D, F]`` -> dict with ``s_pre``, ``s_res``, ``s_fin``."""
        s_pre = self.separator(x, f_v)
        if self.synthesizer is None or separator_only:
            return {"s_pre": s_pre, "s_res": None, "s_fin": s_pre}
        mel = signal.log_mel_spectrogram(s_pre)
        out = self.synthesizer(mel, f_v)
        if self.config.predict_complete:
            s_fin = produce_tensor(torch.zeros_like(s_pre), out)
            return {"s_pre": s_pre, "s_res": None, "s_fin": s_fin}
        return {"s_pre": s_pre, "s_res": out, "s_fin": produce_tensor(s_pre, out)}

    def losses(self, x, s, f_v, separator_only: bool = False) -> dict:
        """Per-batch loss components (batch means) and the total objective."""
        cfg = self.config
        out = self(x, f_v, separator_only)
        l_per = si_snr_loss(s, out["s_pre"], cfg.weights.eps).mean()
        result = {"L_per": l_per, "L_syn": None, "L_mat": None, **out}
        if self.synthesizer is None or separator_only:
            result["total"] = total_loss(l_per, 0.0, 0.0, cfg.weights)
            return result
        s_fin = out["s_fin"]
        l_syn = si_snr_loss(s, s_fin, cfg.weights.eps).mean()
        lam = cfg.matching_weight
        if lam > 0:
            f_a = self.audio_frontend(s_fin)
            f_neg = self.audio_frontend(x - s_fin)
            l_mat = matching_loss(
                f_v, f_a, f_neg, cfg.weights.margin,
                video_rate=signal.VIDEO_RATE, audio_rate=self.audio_frontend.frame_rate,
            ).mean()
        else:
            l_mat = torch.zeros((), dtype=x.dtype)
        result.update(L_syn=l_syn, L_mat=l_mat)
        result["total"] = total_loss(l_per, l_syn, l_mat, dataclasses.replace(cfg.weights, lam=lam))
        return result

"""Joint training, evaluation, checkpointing and the ablation runner."""

from __future__ import annotations

import json
import logging
import math
import os
import statistics
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import losses
from .config import ExperimentConfig
from .data import Manifest, load_example
from .errors import IncompatibleCheckpointError, InvalidArgumentError, NumericError
from .frontends import FRAME_SAMPLES, FrontendKind, load_precomputed
from .fusion import DOMINANCE_GRID, FusionStrategy
from .model import AVSepChain

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class PlateauSchedule:
    """Halve the learning rate after ``plateau_patience`` epochs without improvement;
    stop after ``stop_patience``.

    An epoch improves when its validation loss is lower than the best so far
    by at least ``min_improvement``.
    """

    def __init__(self, lr, plateau_patience=3, stop_patience=5, factor=0.5, min_improvement=1e-4):
        self.lr = lr
        self.plateau_patience = plateau_patience
        self.stop_patience = stop_patience
        self.factor = factor
        self.min_improvement = min_improvement
        self.best = math.inf
        self.bad_epochs = 0
        self.should_stop = False

    def step(self, val_loss: float) -> bool:
        """Record one epoch; returns True when it is a new best."""
        if val_loss < self.best - self.min_improvement:
            self.best = val_loss
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        if self.bad_epochs % self.plateau_patience == 0:
            self.lr *= self.factor
        if self.bad_epochs >= self.stop_patience:
            self.should_stop = True
        return False

    def state_dict(self) -> dict:
        return dict(vars(self))

    def load_state_dict(self, state: dict) -> None:
        vars(self).update(state)


# --------------------------------------------------------------------------
# data


@dataclass
class SplitTensors:
    ids: list
    x: torch.Tensor
    s: torch.Tensor
    f_v: torch.Tensor

    def __len__(self) -> int:
        return len(self.ids)

    def take(self, idx) -> "SplitTensors":
        idx = list(idx)
        return SplitTensors([self.ids[i] for i in idx], self.x[idx], self.s[idx], self.f_v[idx])


def load_split(manifest: Manifest, split: str, model: AVSepChain) -> SplitTensors:
    rows = manifest.split(split)
    if not rows:
        raise InvalidArgumentError(f"split {split!r} is empty")
    xs, ss, fvs, ids = [], [], [], []
    for row in rows:
        ex = load_example(row, manifest.root)
        xs.append(ex.mixture.samples.float())
        ss.append(ex.target.samples.float())
        if model.config.video_frontend.kind is FrontendKind.PRECOMPUTED:
            if "video_embedding" not in row:
                raise InvalidArgumentError(f"{ex.example_id}: no 'video_embedding' path")
            fvs.append(load_precomputed(manifest.root / row["video_embedding"]).data.float())
        else:
            with torch.no_grad():
                fvs.append(model.embed_video(torch.as_tensor(ex.visemes.unit_ids)))
        ids.append(ex.example_id)
    return SplitTensors(ids, torch.stack(xs), torch.stack(ss), torch.stack(fvs))


def _crop(batch: SplitTensors, frames: int, rng: np.random.Generator) -> SplitTensors:
    total = batch.f_v.shape[-1]
    if frames <= 0 or frames >= total:
        return batch
    start = int(rng.integers(0, total - frames + 1))
    a, b = start * FRAME_SAMPLES, (start + frames) * FRAME_SAMPLES
    return SplitTensors(batch.ids, batch.x[:, a:b], batch.s[:, a:b], batch.f_v[..., start : start + frames])


# --------------------------------------------------------------------------
# checkpoints


def _atomic_torch_save(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        torch.save(obj, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, model: AVSepChain, optimizer=None, schedule=None, epoch=0, best=math.inf):
    state = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_flat(),
        "config_hash": model.config.structural_hash(),
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "schedule": schedule.state_dict() if schedule is not None else None,
        "epoch": epoch,
        "best_valid_loss": best,
    }
    _atomic_torch_save(state, Path(path))


def load_checkpoint(path, config: ExperimentConfig | None = None):
    """Rebuild the model stored at ``path``; returns ``(model, checkpoint_dict)``.

    If ``config`` is given its structural hash must match the checkpoint's.
    """
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if ckpt.get("format_version") != CHECKPOINT_VERSION:
        raise IncompatibleCheckpointError(f"{path}: unsupported checkpoint format")
    stored = ExperimentConfig.from_flat(ckpt["config"])
    if stored.structural_hash() != ckpt["config_hash"]:
        raise IncompatibleCheckpointError(f"{path}: stored config does not match its hash")
    if config is not None and config.structural_hash() != ckpt["config_hash"]:
        raise IncompatibleCheckpointError(
            f"{path}: checkpoint hash {ckpt['config_hash']} != config hash {config.structural_hash()}"
        )
    model = AVSepChain(stored)
    model.load_state_dict(ckpt["model"])
    model.eval()
    return model, ckpt


# --------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    checkpoint: Path
    history: list = field(default_factory=list)
    epochs: int = 0
    steps: int = 0
    best_valid_loss: float = math.inf


def _scalar(v):
    if v is None:
        return None
    return float(v.detach()) if torch.is_tensor(v) else float(v)


def _dump_batch(out_dir: Path, step: int, epoch: int, batch: SplitTensors, reason: str) -> None:
    dump = {"step": step, "epoch": epoch, "batch": batch.ids, "reason": reason}
    (out_dir / "nonfinite_batch.json").write_text(json.dumps(dump, indent=2))


def validation_loss(model: AVSepChain, data: SplitTensors, batch_size: int, separator_only=False) -> float:
    was_training = model.training
    model.eval()
    total, n = 0.0, 0
    with torch.no_grad():
        for i in range(0, len(data), batch_size):
            b = data.take(range(i, min(i + batch_size, len(data))))
            out = model.losses(b.x, b.s, b.f_v, separator_only)
            total += float(out["total"]) * len(b)
            n += len(b)
    model.train(was_training)
    return total / n


def train(config: ExperimentConfig, manifest: Manifest, out_dir, on_record=None) -> TrainResult:
    """Train the chain on ``manifest``'s train split, selecting on its valid split.

    Writes ``best.pt`` and ``metrics.jsonl`` into ``out_dir``. Every optimizer
    step appends ``{step, epoch, L_per, L_syn, L_mat, total, lr}``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(config.seed)
    model = AVSepChain(config)
    train_set = load_split(manifest, "train", model)
    valid_set = load_split(manifest, "valid", model)
    opt_cfg = config.optimizer
    optimizer = torch.optim.Adam(model.trainable_parameters(), lr=opt_cfg.initial_lr)
    schedule = PlateauSchedule(
        opt_cfg.initial_lr, opt_cfg.plateau_patience, opt_cfg.stop_patience,
        opt_cfg.halving_factor, opt_cfg.min_improvement,
    )
    ckpt_path = out_dir / "best.pt"
    metrics_path = out_dir / "metrics.jsonl"
    result = TrainResult(ckpt_path)
    step = 0
    model.train()

    def run_validation(epoch: int, separator_only: bool) -> None:
        val = validation_loss(model, valid_set, config.batch_size, separator_only)
        improved = schedule.step(val)
        for group in optimizer.param_groups:
            group["lr"] = schedule.lr
        log.info("epoch %d step %d valid %.4f lr %.3g", epoch, step, val, schedule.lr)
        if improved:
            result.best_valid_loss = val
            save_checkpoint(ckpt_path, model, optimizer, schedule, epoch, val)

    with open(metrics_path, "w", encoding="utf-8") as metrics:
        for epoch in range(config.max_epochs):
            separator_only = epoch < config.warm_start_epochs
            rng = np.random.default_rng([config.seed, epoch])
            order = rng.permutation(len(train_set))
            for start in range(0, len(order) - config.batch_size + 1, config.batch_size):
                batch = _crop(train_set.take(order[start : start + config.batch_size]),
                              config.train_crop_frames, rng)
                step += 1
                try:
                    out = model.losses(batch.x, batch.s, batch.f_v, separator_only)
                except NumericError as e:
                    _dump_batch(out_dir, step, epoch, batch, str(e))
                    raise NumericError(f"step {step}: {e}; batch dumped to {out_dir}") from e
                record = {
                    "step": step,
                    "epoch": epoch,
                    **{k: _scalar(out[k]) for k in ("L_per", "L_syn", "L_mat", "total")},
                    "lr": optimizer.param_groups[0]["lr"],
                }
                optimizer.zero_grad()
                out["total"].backward()
                if opt_cfg.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(model.trainable_parameters(), opt_cfg.grad_clip)
                optimizer.step()
                metrics.write(json.dumps(record) + "\n")
                result.history.append(record)
                if on_record is not None:
                    on_record(record)
                if config.eval_every and step % config.eval_every == 0:
                    run_validation(epoch, separator_only)
                if config.max_steps and step >= config.max_steps:
                    break
            metrics.flush()
            result.epochs = epoch + 1
            if not (config.eval_every and step % config.eval_every == 0):
                run_validation(epoch, separator_only)
            if schedule.should_stop or (config.max_steps and step >= config.max_steps):
                break
    result.steps = step
    return result


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    records: list
    split: str

    @property
    def mean_si_snri(self) -> float:
        return statistics.fmean(r["si_snri"] for r in self.records)

    @property
    def mean_sdri(self) -> float:
        return statistics.fmean(r["sdri"] for r in self.records)

    @property
    def median_si_snri(self) -> float:
        return statistics.median(r["si_snri"] for r in self.records)

    def table(self) -> str:
        width = max(len("example_id"), *(len(r["example_id"]) for r in self.records))
        lines = [f"{'example_id':<{width}}  {'SI-SNRi':>8}  {'SDRi':>8}"]
        for r in self.records:
            lines.append(f"{r['example_id']:<{width}}  {r['si_snri']:8.3f}  {r['sdri']:8.3f}")
        lines.append(f"{'mean':<{width}}  {self.mean_si_snri:8.3f}  {self.mean_sdri:8.3f}")
        return "\n".join(lines)

    def jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records)


def evaluate_estimator(estimate, data: SplitTensors, split: str, batch_size: int = 10,
                       clamp_db: float = 30.0) -> EvalReport:
    """Score ``estimate(x, f_v) -> est`` over ``data``; one record per example."""
    records = []
    with torch.no_grad():
        for i in range(0, len(data), batch_size):
            b = data.take(range(i, min(i + batch_size, len(data))))
            est = estimate(b.x, b.f_v)
            x, s, est = b.x.double(), b.s.double(), est.double()
            si = losses.si_snri(x, est, s, clamp_db=clamp_db)
            sd = losses.sdri(x, est, s, clamp_db=clamp_db)
            for j, ex_id in enumerate(b.ids):
                records.append({"example_id": ex_id, "si_snri": float(si[j]), "sdri": float(sd[j])})
    return EvalReport(records, split)


def model_estimator(model: AVSepChain):
    model.eval()
    return lambda x, f_v: model(x, f_v)["s_fin"]


def evaluate(checkpoint, manifest: Manifest, split: str = "test",
             config: ExperimentConfig | None = None) -> EvalReport:
    model, _ = load_checkpoint(checkpoint, config)
    data = load_split(manifest, split, model)
    return evaluate_estimator(model_estimator(model), data, split,
                              clamp_db=model.config.weights.clamp_db)


# --------------------------------------------------------------------------
# ablations


def ablation_variants(suite: str, base: ExperimentConfig) -> list:
    """``(row_name, config)`` pairs for one of the three ablation suites."""
    if suite == "stage_ablation":
        return [
            ("AVSepChain", base.replace(use_synthesizer=True, use_matching_loss=True, predict_complete=False)),
            ("w/o AV-Synthesizer", base.replace(use_synthesizer=False, predict_complete=False)),
            ("w/o L_mat", base.replace(use_synthesizer=True, use_matching_loss=False, predict_complete=False)),
            ("Predict complete signal", base.replace(use_synthesizer=True, predict_complete=True)),
        ]
    if suite == "fusion_ablation":
        names = {"cross_attention": "Cross-attention", "concatenation": "Concatenation",
                 "summation": "Summation"}
        return [(names[s.value], base.replace(fusion_strategy=s.value)) for s in FusionStrategy]
    if suite == "dominance_ablation":
        rows = []
        for sep, syn in DOMINANCE_GRID:
            name = f"perception {sep} | production {syn}"
            rows.append((name, base.replace(separator_dominance=str(sep), synthesizer_dominance=str(syn))))
        return rows
    raise InvalidArgumentError(
        f"unknown suite {suite!r}; expected stage_ablation, fusion_ablation or dominance_ablation"
    )


@dataclass
class AblationRow:
    name: str
    mean_si_snri: float
    mean_sdri: float
    median_si_snri: float
    checkpoint: str


def format_ablation(rows: list) -> str:
    width = max(len("variant"), *(len(r.name) for r in rows))
    lines = [f"{'variant':<{width}}  {'SI-SNRi':>8}  {'SDRi':>8}  {'median':>8}"]
    for r in rows:
        lines.append(f"{r.name:<{width}}  {r.mean_si_snri:8.3f}  {r.mean_sdri:8.3f}  {r.median_si_snri:8.3f}")
    return "\n".join(lines)


def ablate(suite: str, base: ExperimentConfig, manifest: Manifest, out_dir) -> list:
    """Train and test every variant of ``suite`` with the same seed and data order."""
    variants = ablation_variants(suite, base)
    out_dir = Path(out_dir)
    rows = []
    for i, (name, cfg) in enumerate(variants):
        started = time.time()
        result = train(cfg, manifest, out_dir / f"variant{i}")
        report = evaluate(result.checkpoint, manifest, "test")
        log.info("%s: %.2f dB in %.0fs", name, report.mean_si_snri, time.time() - started)
        rows.append(AblationRow(name, report.mean_si_snri, report.mean_sdri,
                                report.median_si_snri, str(result.checkpoint)))
    return rows

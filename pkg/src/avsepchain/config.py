"""Experiment configuration and its flat ``key = value`` file format.

Example file::

    # toy run
    preset = toy
    seed = 7
    separator.n_channels = 64
    optimizer.initial_lr = 1e-3
    fusion_strategy = concatenation

``preset`` (``toy`` or ``full``) must come first if present; every other key
overrides a field of the preset. Unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .errors import ConfigError, InvalidArgumentError
from .frontends import FrontendKind, FrontendSpec
from .fusion import AUDIO_DOMINANT, VISUAL_DOMINANT, DominanceConfig, FusionStrategy
from .losses import LossWeights
from .separator import SeparatorConfig
from .synthesizer import SynthesizerConfig


@dataclass
class OptimizerConfig:
    initial_lr: float = 1.5e-4
    plateau_patience: int = 3
    halving_factor: float = 0.5
    stop_patience: int = 5
    min_improvement: float = 1e-4
    grad_clip: float = 5.0

    def __post_init__(self):
        if not self.initial_lr > 0:
            raise InvalidArgumentError("optimizer.initial_lr must be > 0")
        if self.plateau_patience < 1 or self.stop_patience < 1:
            raise InvalidArgumentError("optimizer patiences must be >= 1")
        if not 0 < self.halving_factor < 1:
            raise InvalidArgumentError("optimizer.halving_factor must be in (0, 1)")


# fields that change the network's structure; hashed into checkpoints
_STRUCTURAL = (
    "separator", "synthesizer", "audio_frontend", "video_frontend", "n_units",
    "use_synthesizer", "predict_complete", "fusion_strategy",
    "separator_dominance", "synthesizer_dominance",
)


@dataclass
class ExperimentConfig:
    separator: SeparatorConfig = field(default_factory=SeparatorConfig)
    synthesizer: SynthesizerConfig = field(default_factory=SynthesizerConfig)
    audio_frontend: FrontendSpec = FrontendSpec(FrontendKind.ORACLE_AUDIO, 768, 0)
    video_frontend: FrontendSpec = FrontendSpec(FrontendKind.ORACLE_VIDEO, 768, 0)
    weights: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_size: int = 8
    max_epochs: int = 100
    seed: int = 0
    n_units: int = 12
    use_synthesizer: bool = True
    use_matching_loss: bool = True
    predict_complete: bool = False
    fusion_strategy: str = FusionStrategy.CROSS_ATTENTION.value
    separator_dominance: str = str(AUDIO_DOMINANT)
    synthesizer_dominance: str = str(VISUAL_DOMINANT)
    # separator-only epochs before joint training (0 = joint from the start)
    warm_start_epochs: int = 0
    # random training crops of this many video frames (0 = whole examples)
    train_crop_frames: int = 0
    # hard cap on optimizer steps (0 = none)
    max_steps: int = 0
    # validate every this many steps in addition to epoch ends (0 = epoch ends only)
    eval_every: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.batch_size < 1 or self.max_epochs < 1:
            raise InvalidArgumentError("batch_size and max_epochs must be >= 1")
        if self.predict_complete and not self.use_synthesizer:
            raise InvalidArgumentError("predict_complete requires use_synthesizer")
        FusionStrategy(self.fusion_strategy)
        DominanceConfig.parse(self.separator_dominance)
        DominanceConfig.parse(self.synthesizer_dominance)
        if self.audio_frontend.kind is not FrontendKind.ORACLE_AUDIO:
            raise InvalidArgumentError("audio_frontend.kind must be oracle_audio")
        if self.video_frontend.kind is FrontendKind.ORACLE_AUDIO:
            raise InvalidArgumentError("video_frontend.kind cannot be oracle_audio")
        if self.audio_frontend.embed_dim != self.video_frontend.embed_dim:
            raise InvalidArgumentError("audio and video embeddings must share a dimension")
        if self.separator.video_dim != self.video_frontend.embed_dim:
            raise InvalidArgumentError("separator.video_dim must equal the video embed_dim")
        if self.synthesizer.video_dim != self.video_frontend.embed_dim:
            raise InvalidArgumentError("synthesizer.video_dim must equal the video embed_dim")
        if self.n_units < 1 or self.train_crop_frames < 0 or self.max_steps < 0:
            raise InvalidArgumentError("n_units, train_crop_frames, max_steps out of range")

    @property
    def strategy(self) -> FusionStrategy:
        return FusionStrategy(self.fusion_strategy)

    @property
    def sep_dominance(self) -> DominanceConfig:
        return DominanceConfig.parse(self.separator_dominance)

    @property
    def syn_dominance(self) -> DominanceConfig:
        return DominanceConfig.parse(self.synthesizer_dominance)

    @property
    def matching_weight(self) -> float:
        return self.weights.lam if self.use_matching_loss else 0.0

    @classmethod
    def toy(cls, **overrides) -> "ExperimentConfig":
        d = 64
        base = dict(
            separator=SeparatorConfig.toy(d),
            synthesizer=SynthesizerConfig.toy(d),
            audio_frontend=FrontendSpec(FrontendKind.ORACLE_AUDIO, d, 0),
            video_frontend=FrontendSpec(FrontendKind.ORACLE_VIDEO, d, 0),
            batch_size=8,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def full(cls, **overrides) -> "ExperimentConfig":
        return cls(**overrides)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # ------------------------------------------------------------------ flat io

    def to_flat(self) -> dict:
        flat = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                for sub in dataclasses.fields(value):
                    flat[f"{f.name}.{sub.name}"] = _plain(getattr(value, sub.name))
            else:
                flat[f.name] = _plain(value)
        return flat

    @classmethod
    def from_flat(cls, flat: dict, preset: str = "toy") -> "ExperimentConfig":
        base = {"toy": cls.toy, "full": cls.full}.get(preset)
        if base is None:
            raise ConfigError(f"unknown preset {preset!r}")
        cfg = base()
        groups: dict = {}
        top: dict = {}
        for key, value in flat.items():
            if "." in key:
                group, name = key.split(".", 1)
                sub = getattr(cfg, group, None) if group in _group_names() else None
                if sub is None or name not in {f.name for f in dataclasses.fields(sub)}:
                    raise ConfigError(f"unknown config key {key!r}")
                groups.setdefault(group, {})[name] = _coerce(value, getattr(sub, name), key)
            else:
                if key not in _top_names():
                    raise ConfigError(f"unknown config key {key!r}")
                top[key] = _coerce(value, getattr(cfg, key), key)
        try:
            for group, changes in groups.items():
                top[group] = dataclasses.replace(getattr(cfg, group), **changes)
            return dataclasses.replace(cfg, **top)
        except (InvalidArgumentError, ValueError) as e:
            raise ConfigError(str(e)) from e

    def structural_hash(self) -> str:
        flat = self.to_flat()
        keep = {k: v for k, v in flat.items() if k.split(".")[0] in _STRUCTURAL}
        blob = json.dumps(keep, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def dumps(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.to_flat().items())


def _group_names():
    return {f.name for f in dataclasses.fields(ExperimentConfig) if f.name in (
        "separator", "synthesizer", "audio_frontend", "video_frontend", "weights", "optimizer")}


def _top_names():
    return {f.name for f in dataclasses.fields(ExperimentConfig)} - _group_names()


def _plain(v):
    if isinstance(v, tuple):
        return list(v)
    if hasattr(v, "value"):
        return v.value
    return v


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ", ".join(str(x) for x in v)
    return str(v)


def _coerce(raw, default, key):
    """Convert ``raw`` (string from a file, or already-typed) to the type of ``default``."""
    try:
        if isinstance(default, bool):
            if isinstance(raw, bool):
                return raw
            text = str(raw).strip().lower()
            if text not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"not a boolean: {raw!r}")
            return text in ("true", "1", "yes")
        if isinstance(default, int) and not hasattr(default, "value"):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = raw if isinstance(raw, (list, tuple)) else str(raw).split(",")
            return tuple(int(x) for x in items)
        if hasattr(default, "value"):
            return type(default)(str(raw).strip())
        return str(raw).strip()
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{key}: {e}") from e


def parse_config_text(text: str) -> ExperimentConfig:
    flat, preset = {}, "toy"
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "preset":
            if flat:
                raise ConfigError("'preset' must precede all other keys")
            preset = value
            continue
        if key in flat:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        flat[key] = value
    return ExperimentConfig.from_flat(flat, preset)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"{path}: {e}") from e
    return parse_config_text(text)

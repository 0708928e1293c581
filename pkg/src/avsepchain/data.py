"""Synthetic audio-visual corpus: toy speakers, unit rendering, mixtures, manifests.

A toy speaker is a harmonic source (speaker-specific f0 and harmonic weights).
Each 40 ms frame carries one content unit, rendered by passing the source
through a second-order resonance whose centre depends only on the unit. Unit
ids double as the lip (viseme) stream, so content is shared across speakers
while voice is not.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.io import wavfile
from scipy.signal import iirpeak, lfilter

from . import signal
from .errors import DegenerateInputError, FormatError, InvalidArgumentError
from .frontends import FRAME_SAMPLES, AudioFrontend, VideoFrontend, VisemeStream

N_UNITS = 12
UNIT_LOW_HZ = 300.0
UNIT_HIGH_HZ = 4000.0
RESONANCE_Q = 4.0
FADE_SAMPLES = 80  # 5 ms
PEAK = 0.5
N_HARMONIC_WEIGHTS = 96
SNR_RANGE = (-5.0, 5.0)
SPLITS = ("train", "valid", "test")
PCM_SCALE = 32768.0


def unit_centers(n_units: int = N_UNITS) -> np.ndarray:
    return np.geomspace(UNIT_LOW_HZ, UNIT_HIGH_HZ, n_units)


@dataclass
class ToySpeakerSpec:
    speaker_id: int
    f0: float
    timbre_weights: np.ndarray
    seed: int

    @classmethod
    def from_seed(cls, speaker_id: int, seed: int) -> "ToySpeakerSpec":
        rng = np.random.default_rng([seed, speaker_id, 0x5EED])
        f0 = float(rng.uniform(90.0, 300.0))
        k = np.arange(1, N_HARMONIC_WEIGHTS + 1)
        weights = rng.uniform(0.4, 1.0, N_HARMONIC_WEIGHTS) / np.sqrt(k)
        return cls(speaker_id, f0, weights, seed)


def _harmonic_source(spk: ToySpeakerSpec, n_samples: int, sample_rate: int) -> np.ndarray:
    rng = np.random.default_rng([spk.seed, spk.speaker_id, 0xF0])
    n_harm = min(len(spk.timbre_weights), int((0.95 * sample_rate / 2) // spk.f0))
    phases = rng.uniform(0, 2 * np.pi, n_harm)
    t = np.arange(n_samples) / sample_rate
    k = np.arange(1, n_harm + 1)[:, None]
    return (spk.timbre_weights[:n_harm, None] * np.sin(2 * np.pi * spk.f0 * k * t + phases[:, None])).sum(0)


def _crossfade_gates(unit_ids: np.ndarray, n_units: int) -> np.ndarray:
    """Per-unit gains ``[n_units, T]`` with linear fades at frame boundaries; columns sum to 1."""
    per_sample = np.repeat(unit_ids, FRAME_SAMPLES)
    hard = (per_sample[None, :] == np.arange(n_units)[:, None]).astype(np.float64)
    half = FADE_SAMPLES // 2
    padded = np.pad(hard, ((0, 0), (half, half - 1)), mode="edge")
    kernel = np.ones(FADE_SAMPLES) / FADE_SAMPLES
    return np.stack([np.convolve(row, kernel, mode="valid") for row in padded])


def render_units(
    units: VisemeStream, spk: ToySpeakerSpec, sample_rate: int = signal.SAMPLE_RATE
) -> signal.Waveform:
    """Render one unit per 40 ms frame; output is peak-normalised to 0.5."""
    ids = units.unit_ids
    if ids.size == 0:
        raise InvalidArgumentError("empty unit stream")
    n = ids.size * FRAME_SAMPLES
    source = _harmonic_source(spk, n, sample_rate)
    gates = _crossfade_gates(ids, units.n_units)
    centers = unit_centers(units.n_units)
    out = np.zeros(n)
    for u in np.unique(ids):
        b, a = iirpeak(centers[u], RESONANCE_Q, fs=sample_rate)
        out += gates[u] * lfilter(b, a, source)
    peak = np.abs(out).max()
    if peak > 0:
        out *= PEAK / peak
    return signal.Waveform(torch.from_numpy(out), sample_rate)


def interferer_gain(s1: np.ndarray, s2: np.ndarray, snr_db: float) -> float:
    """Gain g such that ``10 log10(|s1|^2 / |g s2|^2) = snr_db``."""
    if not SNR_RANGE[0] <= snr_db <= SNR_RANGE[1]:
        raise InvalidArgumentError(f"snr_db must lie in {SNR_RANGE}, got {snr_db}")
    p1 = float(np.dot(s1, s1))
    p2 = float(np.dot(s2, s2))
    if p1 == 0 or p2 == 0:
        raise DegenerateInputError("cannot mix a zero-power signal")
    return float(np.sqrt(p1 / (p2 * 10.0 ** (snr_db / 10.0))))


def make_mixture(s1: signal.Waveform, s2: signal.Waveform, snr_db: float) -> signal.Waveform:
    if len(s1) != len(s2):
        raise InvalidArgumentError("mixture sources must have equal lengths")
    a = s1.samples.detach().cpu().numpy().astype(np.float64)
    b = s2.samples.detach().cpu().numpy().astype(np.float64)
    g = interferer_gain(a, b, snr_db)
    return signal.Waveform(torch.from_numpy(a + g * b), s1.sample_rate)


# --------------------------------------------------------------------------
# prototypes for the lip front-end


def unit_prototypes(
    n_units: int = N_UNITS, n_voices: int = 8, n_frames: int = 10, seed: int = 0
) -> torch.Tensor:
    """Constant-unit renderings by several voices, ``[n_units, n_voices, n_frames*640]``."""
    out = np.zeros((n_units, n_voices, n_frames * FRAME_SAMPLES))
    for v in range(n_voices):
        spk = ToySpeakerSpec.from_seed(10_000 + v, seed)
        for u in range(n_units):
            stream = VisemeStream(np.full(n_frames, u), n_units)
            out[u, v] = render_units(stream, spk).samples.numpy()
    return torch.from_numpy(out)


def coherent_video_frontend(audio: AudioFrontend, n_units: int = N_UNITS, seed: int = 0) -> VideoFrontend:
    """Viseme table whose row u is the mean audio embedding of unit u across voices.

    This puts pseudo-visemes and pseudo-phonemes in one embedding space, which
    is the property the contrastive matching loss relies on.
    """
    protos = unit_prototypes(n_units, seed=seed).float()
    with torch.no_grad():
        emb = audio(protos)  # [U, V, D, F]
    return VideoFrontend(emb.mean(dim=(1, 3)))


# --------------------------------------------------------------------------
# corpus


@dataclass
class MixtureExample:
    mixture: signal.Waveform
    target: signal.Waveform
    interferer: signal.Waveform
    visemes: VisemeStream
    snr_db: float
    example_id: str


@dataclass
class Manifest:
    rows: list = field(default_factory=list)
    root: Path = Path(".")

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise InvalidArgumentError(f"unknown split {name!r}")
        return [r for r in self.rows if r["split"] == name]

    def speakers(self, name: str) -> set:
        return {s for r in self.split(name) for s in (r["target_speaker"], r["interferer_speaker"])}

    def write(self, path) -> None:
        path = Path(path)
        text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.rows)
        _atomic_write(path, text.encode("utf-8"))

    @classmethod
    def read(cls, path) -> "Manifest":
        path = Path(path)
        rows = []
        try:
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rows.append(json.loads(line))
        except (OSError, json.JSONDecodeError) as e:
            raise FormatError(f"{path}: {e}") from e
        ids = [r.get("example_id") for r in rows]
        if len(set(ids)) != len(ids):
            raise FormatError(f"{path}: duplicate example ids")
        return cls(rows, path.parent)


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def partition_speakers(n_speakers: int, counts: dict, seed: int) -> dict:
    """Disjoint speaker sets; every non-empty split gets at least two speakers.

    Held-out splits get ``max(2, round(0.2 * n_speakers))`` each; train keeps the rest.
    """
    if n_speakers < 4:
        raise InvalidArgumentError("need at least 4 speakers")
    order = np.random.default_rng([seed, 0x5B1]).permutation(n_speakers).tolist()
    held = max(2, round(0.2 * n_speakers))
    sizes = {name: (held if counts.get(name, 0) > 0 else 0) for name in ("valid", "test")}
    sizes["train"] = n_speakers - sizes["valid"] - sizes["test"]
    if counts.get("train", 0) > 0 and sizes["train"] < 2:
        raise InvalidArgumentError(
            f"{n_speakers} speakers cannot give disjoint train/valid/test sets of >= 2"
        )
    out, start = {}, 0
    for name in SPLITS:
        out[name] = sorted(order[start : start + sizes[name]])
        start += sizes[name]
    return out


def _pcm(x: np.ndarray) -> np.ndarray:
    return np.round(x * PCM_SCALE).astype(np.int16)


def render_example(
    speakers: list,
    rng: np.random.Generator,
    n_frames: int,
    n_units: int,
    noise_db: float | None = None,
) -> tuple:
    """Draw one two-speaker example; returns ``(x_pcm, s_pcm, i_pcm, units, snr, ids)``."""
    t_spk, i_spk = rng.choice(speakers, size=2, replace=False)
    t_units = rng.integers(0, n_units, n_frames)
    i_units = rng.integers(0, n_units, n_frames)
    snr = float(rng.uniform(*SNR_RANGE))
    s = render_units(VisemeStream(t_units, n_units), t_spk).samples.numpy()
    i = render_units(VisemeStream(i_units, n_units), i_spk).samples.numpy()
    interferer = interferer_gain(s, i, snr) * i
    if noise_db is not None:
        # additive white noise at noise_db below the target; travels with the interferer track
        p = np.mean(s**2) * 10.0 ** (-noise_db / 10.0)
        interferer = interferer + rng.standard_normal(s.size) * np.sqrt(p)
    peak = np.abs(s + interferer).max()
    scale = min(1.0, 0.95 / peak)
    s_pcm = _pcm(s * scale)
    i_pcm = _pcm(interferer * scale)
    x_pcm = (s_pcm.astype(np.int32) + i_pcm.astype(np.int32)).astype(np.int16)
    return x_pcm, s_pcm, i_pcm, t_units, snr, (int(t_spk.speaker_id), int(i_spk.speaker_id))


def _write_units_csv(path: Path, units: np.ndarray) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame", "unit_id"])
    w.writerows((t, int(u)) for t, u in enumerate(units))
    _atomic_write(path, buf.getvalue().encode("utf-8"))


def read_units_csv(path) -> np.ndarray:
    try:
        with open(path, encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise FormatError(f"{path}: {e}") from e
    if not rows or rows[0] != ["frame", "unit_id"]:
        raise FormatError(f"{path}: missing 'frame,unit_id' header")
    try:
        pairs = [(int(a), int(b)) for a, b in rows[1:]]
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e
    if [p[0] for p in pairs] != list(range(len(pairs))):
        raise FormatError(f"{path}: frames are not consecutive from 0")
    return np.array([p[1] for p in pairs], dtype=np.int64)


def build_corpus(
    out_dir,
    n_speakers: int = 8,
    n_train: int = 500,
    n_valid: int = 50,
    n_test: int = 50,
    seed: int = 7,
    duration_s: float = 2.0,
    n_units: int = N_UNITS,
    noise_db: float | None = None,
) -> Manifest:
    """Render a full corpus under ``out_dir`` and write ``out_dir/manifest.jsonl``.

    Every example is seeded from ``(seed, split, index)``, so content depends
    only on the arguments.
    """
    n_frames = int(round(duration_s * signal.VIDEO_RATE))
    if n_frames < 1:
        raise InvalidArgumentError("duration too short")
    counts = {"train": n_train, "valid": n_valid, "test": n_test}
    split_speakers = partition_speakers(n_speakers, counts, seed)
    speakers = {i: ToySpeakerSpec.from_seed(i, seed) for i in range(n_speakers)}
    out = Path(out_dir)
    try:
        (out / "audio").mkdir(parents=True, exist_ok=True)
        (out / "visemes").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create corpus directory {out}: {e}") from e

    rows = []
    for split_idx, split in enumerate(SPLITS):
        pool = [speakers[i] for i in split_speakers[split]]
        for k in range(counts[split]):
            ex_id = f"{split}-{k:05d}"
            rng = np.random.default_rng([seed, split_idx, k])
            x, s, i, units, snr, (t_id, i_id) = render_example(
                pool, rng, n_frames, n_units, noise_db
            )
            paths = {}
            for name, data in (("mixture", x), ("target", s), ("interferer", i)):
                rel = f"audio/{ex_id}_{name}.wav"
                buf = io.BytesIO()
                wavfile.write(buf, signal.SAMPLE_RATE, data)
                _atomic_write(out / rel, buf.getvalue())
                paths[name] = rel
            vrel = f"visemes/{ex_id}.csv"
            _write_units_csv(out / vrel, units)
            rows.append(
                {
                    "example_id": ex_id,
                    "split": split,
                    "snr_db": snr,
                    "visemes": vrel,
                    "n_units": n_units,
                    "target_speaker": t_id,
                    "interferer_speaker": i_id,
                    **paths,
                }
            )
    manifest = Manifest(rows, out)
    manifest.write(out / "manifest.jsonl")
    return manifest


def _read_wav(path: Path) -> torch.Tensor:
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as e:
        raise FormatError(f"{path}: {e}") from e
    if rate != signal.SAMPLE_RATE or data.dtype != np.int16 or data.ndim != 1:
        raise FormatError(f"{path}: expected 16-bit mono PCM at {signal.SAMPLE_RATE} Hz")
    return torch.from_numpy(data.astype(np.float64) / PCM_SCALE)


def load_example(row: dict, root=".") -> MixtureExample:
    root = Path(root)
    x = _read_wav(root / row["mixture"])
    s = _read_wav(root / row["target"])
    i = _read_wav(root / row["interferer"])
    if not (x.shape == s.shape == i.shape):
        raise FormatError(f"{row['example_id']}: track lengths differ")
    if (x - s - i).abs().max() > 1e-6:
        raise FormatError(f"{row['example_id']}: mixture != target + interferer")
    vpath = root / row["visemes"]
    if str(vpath).endswith(".avse"):
        from .frontends import load_precomputed

        units = load_precomputed(vpath).data[0].numpy().astype(np.int64)
    else:
        units = read_units_csv(vpath)
    if units.size * FRAME_SAMPLES != x.shape[0]:
        raise FormatError(
            f"{row['example_id']}: {units.size} viseme frames do not match {x.shape[0]} samples"
        )
    n_units = int(row.get("n_units", N_UNITS))
    try:
        visemes = VisemeStream(units, n_units)
    except InvalidArgumentError as e:
        raise FormatError(f"{row['example_id']}: {e}") from e
    return MixtureExample(
        signal.Waveform(x), signal.Waveform(s), signal.Waveform(i), visemes,
        float(row["snr_db"]), row["example_id"],
    )

"""Multimodal dataset handling: in-memory types, file format, synthesis, splits.

A dataset is a dims manifest plus an ordered list of samples, each carrying a
binary label and four per-timestep feature sequences (text, audio, visual,
sentiment-structural).  On disk a dataset is line-delimited JSON with a `.mmjl`
extension: line 1 is the manifest, every following line is one sample.  Floats
are serialized with shortest round-trip decimal repr, so load(write(ds)) is
bit-exact.

The synthetic generator replaces the (access-restricted) clinical corpora: it
draws Gaussian timestep vectors whose class means sit +/- s/2 apart along a
fixed random unit direction per modality, optionally correlates modalities
through a shared per-sample latent factor, and can turn any modality into
pure signal-free noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Array, tensor2
from .errors import ConfigError, DataError

MODALITIES = ("text", "audio", "visual", "sentiment")

FORMAT_VERSION = 1


@dataclass
class Sample:
    """One subject: id, binary label, four raw feature sequences (T_m x dim_m)."""

    id: str
    label: int
    text: Array
    audio: Array
    visual: Array
    sentiment: Array

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataError(f"sample {self.id!r}: label must be 0 or 1, got {self.label}")
        for name in MODALITIES:
            seq = tensor2(getattr(self, name))
            if seq.shape[0] < 1 or seq.shape[1] < 1:
                raise DataError(f"sample {self.id!r}: empty {name} sequence")
            setattr(self, name, seq)

    def seq(self, modality: str) -> Array:
        return getattr(self, modality)


@dataclass
class Dataset:
    """Ordered samples plus the per-modality feature-dimension manifest."""

    dims: dict[str, int]
    samples: list[Sample] = field(default_factory=list)

    def __post_init__(self):
        for name in MODALITIES:
            if name not in self.dims:
                raise DataError(f"manifest missing dims for {name!r}")
        seen: set[str] = set()
        for s in self.samples:
            if s.id in seen:
                raise DataError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)
            self._check_dims(s)

    def _check_dims(self, s: Sample) -> None:
        for name in MODALITIES:
            want = self.dims[name]
            got = s.seq(name).shape[1]
            if got != want:
                raise DataError(
                    f"sample {s.id!r}: {name} dim {got} != manifest dim {want}"
                )

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> list[int]:
        return [s.label for s in self.samples]

    def class_counts(self) -> tuple[int, int]:
        pos = sum(s.label for s in self.samples)
        return len(self.samples) - pos, pos


@dataclass
class SynthSpec:
    """Controls for the synthetic multimodal generator.

    `separation` is the distance between class means in units of within-class
    standard deviation along the class direction; `correlation` in [0, 1] is
    the weight of the per-sample latent factor shared across modalities;
    `noise_modalities` lists modalities that carry no class signal at all.
    """

    n_samples: int = 300
    positive_rate: float = 0.5
    text_dim: int = 16
    audio_dim: int = 12
    visual_dim: int = 14
    sentiment_dim: int = 8
    min_len: int = 4
    max_len: int = 10
    separation: float = 8.0
    correlation: float = 0.5
    noise_modalities: tuple[str, ...] = ()
    seed: int = 0

    def dims(self) -> dict[str, int]:
        return {
            "text": self.text_dim,
            "audio": self.audio_dim,
            "visual": self.visual_dim,
            "sentiment": self.sentiment_dim,
        }

    def validate(self) -> None:
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be >= 1, got {self.n_samples}")
        if not 0.0 < self.positive_rate < 1.0:
            raise ConfigError(f"positive_rate must be in (0,1), got {self.positive_rate}")
        for name, dim in self.dims().items():
            if dim < 1:
                raise ConfigError(f"{name} dim must be >= 1, got {dim}")
        if self.min_len < 1 or self.max_len < self.min_len:
            raise ConfigError(
                f"need 1 <= min_len <= max_len, got {self.min_len}..{self.max_len}"
            )
        if self.separation < 0:
            raise ConfigError(f"separation must be >= 0, got {self.separation}")
        if not 0.0 <= self.correlation <= 1.0:
            raise ConfigError(f"correlation must be in [0,1], got {self.correlation}")
        for name in self.noise_modalities:
            if name not in MODALITIES:
                raise ConfigError(f"unknown modality {name!r} in noise mask")


def _unit_direction(rng: np.random.Generator, dim: int) -> Array:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def generate(spec: SynthSpec) -> Dataset:
    """Draw a dataset deterministically from `spec`.

    Each sample gets its own random stream derived as seed XOR sample index,
    so parallel per-sample generation would agree byte-for-byte with this
    serial loop.  Class-mean directions come from a separate dataset-level
    stream ([seed, 0xD15C]) that no per-sample stream can collide with.
    """
    spec.validate()
    dataset_rng = np.random.default_rng([spec.seed, 0xD15C])
    directions = {
        name: _unit_direction(dataset_rng, dim) for name, dim in spec.dims().items()
    }
    rho = spec.correlation
    half_sep = spec.separation / 2.0
    samples = []
    for i in range(spec.n_samples):
        rng = np.random.default_rng(spec.seed ^ i)
        label = int(rng.random() < spec.positive_rate)
        sign = 1.0 if label == 1 else -1.0
        shared = rng.standard_normal()  # latent factor common to all modalities
        seqs = {}
        for name, dim in spec.dims().items():
            t = int(rng.integers(spec.min_len, spec.max_len + 1))
            noise = rng.standard_normal((t, dim))
            if name in spec.noise_modalities:
                seqs[name] = noise
                continue
            u = directions[name]
            # Replace the along-direction noise coefficient with a mixture of
            # the shared factor and fresh per-timestep noise; the marginal
            # stays N(0,1) so `separation` keeps its within-class-std units.
            coef = math.sqrt(rho) * shared + math.sqrt(1.0 - rho) * rng.standard_normal(t)
            along = noise @ u
            seqs[name] = (
                noise
                + np.outer(coef - along, u)
                + sign * half_sep * u[None, :]
            )
        samples.append(Sample(id=f"s{i:05d}", label=label, **seqs))
    return Dataset(dims=spec.dims(), samples=samples)


# ---------------------------------------------------------------------------
# On-disk format (.mmjl: manifest line + one JSON record per sample)
# ---------------------------------------------------------------------------


def _manifest_record(ds: Dataset) -> dict:
    rec = {"version": FORMAT_VERSION}
    for name in MODALITIES:
        rec[f"dims.{name}"] = ds.dims[name]
    return rec


def write_dataset(ds: Dataset, path: str | Path) -> None:
    """Write `ds` losslessly; same dataset always produces identical bytes."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(_manifest_record(ds), separators=(",", ":")) + "\n")
        for s in ds.samples:
            rec = {"id": s.id, "label": s.label}
            for name in MODALITIES:
                rec[name] = s.seq(name).tolist()
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    """Parse a `.mmjl` file; errors cite the offending line or sample id."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty file (no manifest line)")
    manifest = _parse_record(lines[0], path, 1)
    if manifest.get("version") != FORMAT_VERSION:
        raise DataError(
            f"{path}: line 1: unsupported format version {manifest.get('version')!r}"
        )
    try:
        dims = {name: int(manifest[f"dims.{name}"]) for name in MODALITIES}
    except KeyError as exc:
        raise DataError(f"{path}: line 1: manifest missing key {exc}") from exc
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            raise DataError(f"{path}: line {lineno}: blank record")
        rec = _parse_record(line, path, lineno)
        try:
            sample = Sample(
                id=str(rec["id"]),
                label=int(rec["label"]),
                **{name: np.array(rec[name], dtype=np.float64) for name in MODALITIES},
            )
        except KeyError as exc:
            raise DataError(f"{path}: line {lineno}: missing field {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from exc
        samples.append(sample)
    try:
        return Dataset(dims=dims, samples=samples)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc


def _parse_record(line: str, path: Path, lineno: int) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: line {lineno}: malformed record: {exc.msg}") from exc
    if not isinstance(rec, dict):
        raise DataError(f"{path}: line {lineno}: record is not an object")
    return rec


def stratified_split(
    ds: Dataset, train_fraction: float, seed: int
) -> tuple[Dataset, Dataset]:
    """Split into disjoint train/test preserving per-class ratios within +/-1.

    Membership is drawn from a seeded shuffle per class; each split keeps the
    original dataset order.  Requires both classes present.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must be in (0,1), got {train_fraction}")
    neg, pos = ds.class_counts()
    if neg == 0 or pos == 0:
        raise DataError("stratified_split needs both classes present")
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    for cls in (0, 1):
        idx = [i for i, s in enumerate(ds.samples) if s.label == cls]
        order = rng.permutation(len(idx))
        n_train = int(train_fraction * len(idx) + 0.5)  # round half up
        n_train = min(max(n_train, 0), len(idx))
        train_idx.extend(idx[j] for j in order[:n_train])
    chosen = set(train_idx)
    train = [s for i, s in enumerate(ds.samples) if i in chosen]
    test = [s for i, s in enumerate(ds.samples) if i not in chosen]
    return Dataset(dims=dict(ds.dims), samples=train), Dataset(
        dims=dict(ds.dims), samples=test
    )

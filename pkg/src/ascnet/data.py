"""Progress-level samples, the ASCF feature container and a synthetic generator.

A video is split into ``N`` uniform segments; the partial video at progress
level ``n`` is the first ``n`` segments.  Upstream feature extraction must
produce one pooled feature row per partial video, so a sample here is an
``N x D`` matrix whose row ``n`` describes partial video ``n``.

ASCF layout (little-endian)::

    header  : b"ASCF" | u32 version=1 | u32 sample_count | u32 N | u32 D | u32 n_classes
    record  : u32 label | 8-byte source-id hash | N*D float32, row-major
"""

from __future__ import annotations

import enum
import hashlib
import os
import re
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (BadMagicError, FormatError, LabelRangeError, ParameterError,
                     TruncatedFileError, UnsupportedVersionError)

MAGIC = b"ASCF"
VERSION = 1
HEADER = struct.Struct("<4sIIIII")
RECORD_PREFIX = struct.Struct("<I8s")
_HEX_ID = re.compile(r"^[0-9a-f]{16}$")


def progress_ratio(n: int, n_levels: int) -> float:
    """Observation ratio ``n / N`` of progress level ``n``."""
    if n_levels < 1 or not 1 <= n <= n_levels:
        raise ParameterError(f"progress level must lie in 1..{n_levels}, got {n}")
    return n / n_levels


class Split(enum.Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass
class VideoSample:
    features: np.ndarray
    label: int
    source_id: str = ""


@dataclass
class Dataset:
    samples: list[VideoSample]
    n_classes: int
    n_levels: int
    feat_dim: int
    split: Split = Split.TRAIN
    _stack: np.ndarray | None = field(default=None, repr=False, compare=False)
    _labels: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for k, s in enumerate(self.samples):
            if s.features.shape != (self.n_levels, self.feat_dim):
                raise ParameterError(
                    f"sample {k} has shape {s.features.shape}, expected {(self.n_levels, self.feat_dim)}")
            if not 0 <= s.label < self.n_classes:
                raise ParameterError(f"sample {k} label {s.label} outside 0..{self.n_classes - 1}")
            if not np.isfinite(s.features).all():
                raise ParameterError(f"sample {k} has non-finite features")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def features(self) -> np.ndarray:
        """All features as a ``(count, N, D)`` array."""
        if self._stack is None:
            if self.samples:
                self._stack = np.stack([s.features for s in self.samples])
            else:
                self._stack = np.zeros((0, self.n_levels, self.feat_dim))
        return self._stack

    @property
    def labels(self) -> np.ndarray:
        if self._labels is None:
            self._labels = np.array([s.label for s in self.samples], dtype=np.int64)
        return self._labels

    def batch(self, indices) -> tuple[np.ndarray, np.ndarray]:
        """Stack the chosen samples into ``(B*N) x D`` rows plus their labels."""
        idx = np.asarray(indices, dtype=np.int64)
        x = self.features[idx].reshape(-1, self.feat_dim)
        return x, self.labels[idx]

    def class_counts(self) -> list[int]:
        return np.bincount(self.labels, minlength=self.n_classes).tolist()


def _id_bytes(source_id: str) -> bytes:
    if _HEX_ID.match(source_id):
        return bytes.fromhex(source_id)
    return hashlib.blake2b(source_id.encode("utf-8"), digest_size=8).digest()


def encode_features(dataset: Dataset) -> bytes:
    parts = [HEADER.pack(MAGIC, VERSION, len(dataset.samples), dataset.n_levels,
                         dataset.feat_dim, dataset.n_classes)]
    for s in dataset.samples:
        parts.append(RECORD_PREFIX.pack(s.label, _id_bytes(s.source_id)))
        parts.append(np.ascontiguousarray(s.features, dtype="<f4").tobytes())
    return b"".join(parts)


def write_features(dataset: Dataset, path: str | os.PathLike) -> int:
    """Write ``dataset`` as ASCF; returns the number of bytes written."""
    blob = encode_features(dataset)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def decode_features(blob: bytes, split: Split = Split.TRAIN) -> Dataset:
    size = len(blob)
    if size < 4:
        raise TruncatedFileError("file ends inside the magic", size)
    if blob[:4] != MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}", 0)
    if size < HEADER.size:
        raise TruncatedFileError(f"header needs {HEADER.size} bytes, file has {size}", size)
    _, version, count, n, d, n_classes = HEADER.unpack_from(blob, 0)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}", 4)
    if n < 1 or d < 1 or n_classes < 1:
        raise FormatError(f"invalid dimensions N={n} D={d} classes={n_classes}", 12)
    feat_bytes = n * d * 4
    offset = HEADER.size
    samples = []
    for k in range(count):
        if offset + RECORD_PREFIX.size > size:
            raise TruncatedFileError(f"record {k} header truncated", offset)
        label, ident = RECORD_PREFIX.unpack_from(blob, offset)
        if label >= n_classes:
            raise LabelRangeError(f"record {k} label {label} >= n_classes {n_classes}", offset)
        offset += RECORD_PREFIX.size
        if offset + feat_bytes > size:
            raise TruncatedFileError(f"record {k} features truncated", offset)
        feats = np.frombuffer(blob, dtype="<f4", count=n * d, offset=offset)
        if not np.isfinite(feats).all():
            raise FormatError(f"record {k} has non-finite features", offset)
        samples.append(VideoSample(feats.astype(np.float64).reshape(n, d), int(label), ident.hex()))
        offset += feat_bytes
    if offset != size:
        raise FormatError(f"{size - offset} trailing bytes after {count} records", offset)
    return Dataset(samples, n_classes, n, d, split)


def load_features(path: str | os.PathLike, split: Split = Split.TRAIN) -> Dataset:
    with open(path, "rb") as fh:
        return decode_features(fh.read(), split)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """Class prototypes that ambiguity pairs approach from a shared midpoint.

    Row ``n`` of a sample is ``normalize((1 - a_n) * start + a_n * prototype)``
    plus Gaussian noise, with ``a_n = 1 - (1 - convergence_rate) ** n``.
    Paired classes start from the normalized midpoint of their prototypes;
    unpaired classes share the normalized mean of all prototypes.
    """

    n_classes: int = 6
    n_levels: int = 10
    feat_dim: int = 32
    samples_per_class: int = 200
    ambiguity_pairs: tuple[tuple[int, int], ...] = ((0, 1), (2, 3), (4, 5))
    noise_sigma: float = 0.15
    convergence_rate: float = 0.35
    seed: int = 0

    def validate(self) -> "SyntheticSpec":
        for name in ("n_classes", "n_levels", "feat_dim", "samples_per_class"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_classes * self.samples_per_class < 5:
            raise ParameterError("need at least 5 samples in total for the 80/20 split")
        if self.noise_sigma < 0:
            raise ParameterError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0 < self.convergence_rate <= 1:
            raise ParameterError(f"convergence_rate must lie in (0, 1], got {self.convergence_rate}")
        used: set[int] = set()
        for a, b in self.ambiguity_pairs:
            if a == b or not (0 <= a < self.n_classes and 0 <= b < self.n_classes):
                raise ParameterError(f"invalid ambiguity pair {(a, b)} for {self.n_classes} classes")
            if a in used or b in used:
                raise ParameterError(f"class appears in more than one ambiguity pair: {(a, b)}")
            used.update((a, b))
        return self


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(norms > 0, norms, 1.0)


def synthetic_prototypes(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """``(prototypes, starts)``, each ``n_classes x feat_dim``."""
    rng = np.random.default_rng([spec.seed, 0])
    protos = _normalize_rows(rng.standard_normal((spec.n_classes, spec.feat_dim)))
    shared = _normalize_rows(protos.mean(axis=0))
    starts = np.repeat(shared[None, :], spec.n_classes, axis=0)
    for a, b in spec.ambiguity_pairs:
        starts[a] = starts[b] = _normalize_rows(protos[a] + protos[b])
    return protos, starts


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> tuple[Dataset, Dataset]:
    """Deterministic ``(train, test)`` datasets; every fifth sample goes to test.

    Sample ``k`` has class ``k % n_classes``.  Features are rounded to float32
    so an ASCF round trip is lossless.
    """
    spec.validate()
    protos, starts = synthetic_prototypes(spec)
    levels = np.arange(1, spec.n_levels + 1)
    alpha = (1.0 - (1.0 - spec.convergence_rate) ** levels)[None, :, None]
    total = spec.n_classes * spec.samples_per_class
    labels = np.arange(total) % spec.n_classes
    clean = _normalize_rows((1.0 - alpha) * starts[labels][:, None, :] + alpha * protos[labels][:, None, :])
    noise_rng = np.random.default_rng([spec.seed, 1])
    feats = clean + spec.noise_sigma * noise_rng.standard_normal(clean.shape)
    feats = feats.astype(np.float32).astype(np.float64)

    train, test = [], []
    for k in range(total):
        ident = hashlib.blake2b(f"synthetic/{spec.seed}/{k}".encode(), digest_size=8).hexdigest()
        sample = VideoSample(feats[k], int(labels[k]), ident)
        (test if k % 5 == 4 else train).append(sample)
    dims = (spec.n_classes, spec.n_levels, spec.feat_dim)
    return Dataset(train, *dims, Split.TRAIN), Dataset(test, *dims, Split.TEST)

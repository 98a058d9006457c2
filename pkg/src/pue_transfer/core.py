"""Shared domain types, distances, seeded randomness and dataset I/O."""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

DEFAULT_DIM = 3


class DimensionError(ValueError):
    """Feature vectors of incompatible dimension were combined."""


class DomainError(ValueError):
    """An argument lies outside the domain of a mathematical function."""


class ConfigError(ValueError):
    """A configuration file or value is invalid."""


class DistanceMetric(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    SQUARED_EUCLIDEAN = "squared-euclidean"

    def radius(self, threshold: float) -> float:
        """Euclidean radius equivalent to a threshold expressed in this metric."""
        if self is DistanceMetric.SQUARED_EUCLIDEAN:
            return float(np.sqrt(threshold))
        return float(threshold)


def _as_features(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"features must be a 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("features must be finite")
    return arr


@dataclass(frozen=True)
class Fingerprint:
    """One observation: a feature vector and the identifier the emitter claims.

    ``truth_id`` is only populated in simulations and must never be consulted
    by the clustering path.
    """

    features: tuple[float, ...]
    claimed_id: str
    truth_id: str | None = None

    def __post_init__(self):
        arr = _as_features(self.features)
        object.__setattr__(self, "features", tuple(float(v) for v in arr))

    @property
    def dim(self) -> int:
        return len(self.features)

    def vector(self) -> np.ndarray:
        return np.asarray(self.features, dtype=np.float64)

    def stripped(self) -> "Fingerprint":
        return Fingerprint(self.features, self.claimed_id, None)


class TimeFrame:
    """The fingerprints observed during one detection round.

    Features are held as a read-only ``(S, d)`` array so the numeric code can
    work on them directly; iteration yields :class:`Fingerprint` values.
    """

    __slots__ = ("features", "claimed_ids", "truth_ids", "frame_index")

    def __init__(self, features, claimed_ids: Sequence[str],
                 truth_ids: Sequence[str | None] | None = None, frame_index: int = 0):
        feats = np.array(features, dtype=np.float64, copy=True)
        if feats.ndim != 2 or feats.shape[0] == 0:
            raise ValueError("a time frame needs a non-empty (S, d) feature array")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features must be finite")
        if len(claimed_ids) != feats.shape[0]:
            raise ValueError("claimed_ids must be parallel to features")
        if truth_ids is not None:
            truth_ids = tuple(truth_ids)
            if len(truth_ids) != feats.shape[0]:
                raise ValueError("truth_ids must be parallel to features")
            if all(t is None for t in truth_ids):
                truth_ids = None
        if frame_index < 0:
            raise ValueError("frame_index must be non-negative")
        feats.setflags(write=False)
        self.features = feats
        self.claimed_ids = tuple(str(c) for c in claimed_ids)
        self.truth_ids = truth_ids
        self.frame_index = int(frame_index)

    @classmethod
    def from_fingerprints(cls, fingerprints: Iterable[Fingerprint], frame_index: int = 0) -> "TimeFrame":
        fps = list(fingerprints)
        if not fps:
            raise ValueError("a time frame needs at least one fingerprint")
        dims = {fp.dim for fp in fps}
        if len(dims) != 1:
            raise DimensionError(f"fingerprints have mixed dimensions {sorted(dims)}")
        return cls([fp.features for fp in fps], [fp.claimed_id for fp in fps],
                   [fp.truth_id for fp in fps], frame_index)

    def __len__(self) -> int:
        return self.features.shape[0]

    def __getitem__(self, i: int) -> Fingerprint:
        truth = self.truth_ids[i] if self.truth_ids is not None else None
        return Fingerprint(tuple(self.features[i]), self.claimed_ids[i], truth)

    def __iter__(self) -> Iterator[Fingerprint]:
        for i in range(len(self)):
            yield self[i]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def stripped(self) -> "TimeFrame":
        """Copy with ground truth removed, as handed to the clustering path."""
        return TimeFrame(self.features, self.claimed_ids, None, self.frame_index)


@dataclass(frozen=True)
class Labeling:
    """Cluster labels parallel to a frame, with optional per-item confidences."""

    labels: tuple[int, ...]
    confidences: tuple[float, ...] | None = None
    label_space: frozenset = field(default=None, compare=False)

    def __post_init__(self):
        labels = tuple(int(v) for v in self.labels)
        object.__setattr__(self, "labels", labels)
        if self.confidences is not None:
            conf = tuple(float(c) for c in self.confidences)
            if len(conf) != len(labels):
                raise ValueError("confidences must be parallel to labels")
            if any(not 0.0 <= c <= 1.0 for c in conf):
                raise ValueError("confidences must lie in [0, 1]")
            object.__setattr__(self, "confidences", conf)
        object.__setattr__(self, "label_space", frozenset(labels))

    def __len__(self) -> int:
        return len(self.labels)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=np.int64)

    @property
    def n_labels(self) -> int:
        return len(self.label_space)

    def compacted(self) -> "Labeling":
        return Labeling(compact_labels(self.labels), self.confidences)


def compact_labels(labels: Iterable) -> tuple[int, ...]:
    """Rename arbitrary hashable labels to 0..K-1 in order of first appearance."""
    names: dict = {}
    return tuple(names.setdefault(lab, len(names)) for lab in labels)


def labeling_from_ids(ids: Sequence[str]) -> Labeling:
    return Labeling(compact_labels(ids))


def distance(a, b, metric: DistanceMetric = DistanceMetric.EUCLIDEAN) -> float:
    """Distance between two fingerprints (or raw feature vectors).

    Identifiers are ignored; only the feature vectors take part.
    """
    va = a.vector() if isinstance(a, Fingerprint) else np.asarray(a, dtype=np.float64)
    vb = b.vector() if isinstance(b, Fingerprint) else np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise DimensionError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    diff = va - vb
    sq = float(np.dot(diff, diff))
    if DistanceMetric(metric) is DistanceMetric.SQUARED_EUCLIDEAN:
        return sq
    return float(np.sqrt(sq))


def pairwise_distances(x: np.ndarray, y: np.ndarray, metric: DistanceMetric) -> np.ndarray:
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    diff = x[:, None, :] - y[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    if DistanceMetric(metric) is DistanceMetric.SQUARED_EUCLIDEAN:
        return sq
    return np.sqrt(sq)


def seeded_rng(seed: int, *stream: int) -> np.random.Generator:
    """Deterministic PCG64 generator for ``seed`` and an optional substream key.

    ``seeded_rng(s, trial)`` and ``seeded_rng(s, trial, purpose)`` give
    statistically independent streams that do not depend on the order in
    which they are created, so trials can run on any worker.
    """
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    if any(k < 0 for k in stream):
        raise ValueError("substream keys must be non-negative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(stream))))


# --- dataset files -----------------------------------------------------------

def write_jsonl(path, frame_or_fps) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for fp in frame_or_fps:
            rec = {"features": list(fp.features), "claimed_id": fp.claimed_id}
            if fp.truth_id is not None:
                rec["truth_id"] = fp.truth_id
            fh.write(json.dumps(rec) + "\n")


def read_jsonl(path) -> TimeFrame:
    fps = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                fps.append(Fingerprint(tuple(rec["features"]), str(rec["claimed_id"]), rec.get("truth_id")))
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad fingerprint record ({exc})") from exc
    return TimeFrame.from_fingerprints(fps)


def write_csv(path, frame_or_fps) -> None:
    fps = list(frame_or_fps)
    if not fps:
        raise ValueError("nothing to write")
    d = fps[0].dim
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{j}" for j in range(d)] + ["claimed_id", "truth_id"])
        for fp in fps:
            w.writerow([repr(v) for v in fp.features] + [fp.claimed_id, fp.truth_id or ""])


def read_csv(path) -> TimeFrame:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        fcols = [c for c in cols if c.startswith("f") and c[1:].isdigit()]
        fcols.sort(key=lambda c: int(c[1:]))
        if not fcols or "claimed_id" not in cols:
            raise ValueError(f"{path}: expected header f0,...,f{{d-1}},claimed_id,truth_id")
        fps = [Fingerprint(tuple(float(row[c]) for c in fcols), row["claimed_id"],
                           row.get("truth_id") or None)
               for row in reader]
    return TimeFrame.from_fingerprints(fps)


def read_dataset(path) -> TimeFrame:
    """Load a fingerprint dataset, choosing the format from the file suffix."""
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return read_csv(path)
    return read_jsonl(path)


def write_dataset(path, frame) -> None:
    if Path(path).suffix.lower() == ".csv":
        write_csv(path, frame)
    else:
        write_jsonl(path, frame)

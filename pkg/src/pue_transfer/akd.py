"""Abstract knowledge database: weighted, labeled fingerprints carried across frames."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .core import DimensionError, DistanceMetric, TimeFrame, pairwise_distances

SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class AkdParams:
    """Similarity, confidence and weight-bookkeeping knobs.

    ``epsilon=None`` is resolved per seeding frame by :func:`default_epsilon`.
    """

    epsilon: float | None = None
    b: float = 1.0
    c: float = 1.0
    w_init: float = 0.0
    w_step_inc: float = 2.0
    w_step_dec: float = 2.0
    w_prune: float = -3.0
    decay_amount: float = 1.0
    metric: DistanceMetric = DistanceMetric.EUCLIDEAN
    epsilon_scale: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "metric", DistanceMetric(self.metric))
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not (self.b > 0 and self.c > 0):
            raise ValueError("logistic parameters b and c must be positive")
        if not (self.w_step_inc > 0 and self.w_step_dec > 0 and self.decay_amount > 0):
            raise ValueError("weight steps and decay amount must be positive")
        if not self.w_prune < self.w_init:
            raise ValueError("w_prune must be below w_init")

    def resolved(self, features: np.ndarray) -> "AkdParams":
        if self.epsilon is not None:
            return self
        return replace(self, epsilon=default_epsilon(features, self.metric, self.epsilon_scale))

    def require_epsilon(self) -> float:
        if self.epsilon is None:
            raise ValueError("epsilon is unresolved; call AkdParams.resolved(features) first")
        return self.epsilon

    def to_dict(self) -> dict:
        out = asdict(self)
        out["metric"] = self.metric.value
        return out


def default_epsilon(features, metric: DistanceMetric = DistanceMetric.EUCLIDEAN, scale: float = 0.05) -> float:
    """``scale`` times the median pairwise distance of a frame."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(x, "sqeuclidean" if metric is DistanceMetric.SQUARED_EUCLIDEAN else "euclidean")))
    return scale * med if med > 0 else 1.0


@dataclass(frozen=True)
class AkdEntry:
    features: tuple[float, ...]
    claimed_id: str
    label: int
    weight: float

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(float(v) for v in self.features))
        object.__setattr__(self, "label", int(self.label))
        if not math.isfinite(self.weight):
            raise ValueError("entry weight must be finite")
        object.__setattr__(self, "weight", float(self.weight))


@dataclass(frozen=True)
class Suggestion:
    label: int | None
    confidence: float
    matched: bool
    entry: int | None = None

    def __post_init__(self):
        if self.matched != (self.label is not None):
            raise ValueError("a suggestion carries a label iff it matched")
        if not self.matched and self.confidence != 0.0:
            raise ValueError("unmatched suggestions have zero confidence")


UNMATCHED = Suggestion(None, 0.0, False)


class AKD:
    """Immutable snapshot of the database; every operation returns a new one."""

    __slots__ = ("entries", "dim", "_next_label")

    def __init__(self, entries: Iterable[AkdEntry] = (), dim: int | None = None, next_label: int | None = None):
        entries = tuple(entries)
        dims = {len(e.features) for e in entries}
        if dim is not None:
            dims.add(dim)
        if len(dims) > 1:
            raise DimensionError(f"entries have mixed dimensions {sorted(dims)}")
        self.entries = entries
        self.dim = dims.pop() if dims else None
        top = max((e.label for e in entries), default=-1) + 1
        self._next_label = max(top, next_label or 0)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __eq__(self, other):
        return isinstance(other, AKD) and self.entries == other.entries and self.dim == other.dim

    def __repr__(self) -> str:
        return f"AKD({len(self.entries)} entries, {len(self.labels)} labels, d={self.dim})"

    @property
    def next_label(self) -> int:
        """Smallest label never used by this database lineage."""
        return self._next_label

    @property
    def labels(self) -> set[int]:
        return {e.label for e in self.entries}

    def with_entries(self, entries: Iterable[AkdEntry]) -> "AKD":
        return AKD(entries, self.dim, self._next_label)

    def features(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, self.dim or 0))
        return np.array([e.features for e in self.entries], dtype=np.float64)

    def weights(self) -> np.ndarray:
        return np.array([e.weight for e in self.entries], dtype=np.float64)

    # --- persistence ---------------------------------------------------------

    def to_json(self, params: AkdParams | None = None) -> dict:
        return {
            "version": SNAPSHOT_VERSION,
            "d": self.dim,
            "next_label": self._next_label,
            "params": params.to_dict() if params is not None else None,
            "entries": [{"features": list(e.features), "claimed_id": e.claimed_id,
                         "label": e.label, "weight": e.weight} for e in self.entries],
        }

    def save(self, path, params: AkdParams | None = None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(params), fh, indent=1)

    @classmethod
    def from_json(cls, doc: dict, expect_dim: int | None = None) -> tuple["AKD", AkdParams | None]:
        if doc.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported AKD snapshot version {doc.get('version')!r}")
        d = doc.get("d")
        if expect_dim is not None and d is not None and d != expect_dim:
            raise DimensionError(f"snapshot has dimension {d}, expected {expect_dim}")
        entries = [AkdEntry(tuple(e["features"]), e["claimed_id"], e["label"], e["weight"])
                   for e in doc.get("entries", [])]
        if any(len(e.features) != d for e in entries):
            raise DimensionError("snapshot entries disagree with declared dimension")
        params = AkdParams(**doc["params"]) if doc.get("params") else None
        return cls(entries, d, doc.get("next_label")), params

    @classmethod
    def load(cls, path, expect_dim: int | None = None) -> tuple["AKD", AkdParams | None]:
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh), expect_dim)


def confidence(w, params: AkdParams | None = None, b: float | None = None, c: float | None = None):
    """Logistic confidence ``1 / (1 + b exp(-c w))`` of an entry weight."""
    if params is not None:
        b = params.b if b is None else b
        c = params.c if c is None else c
    b = 1.0 if b is None else b
    c = 1.0 if c is None else c
    w = np.asarray(w, dtype=np.float64)
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + b * np.exp(-c * w))
    return float(out) if out.ndim == 0 else out


def _merge_pass(group_src: list[AkdEntry], eps: float, metric: DistanceMetric):
    """One greedy pass over the entries of a single label; returns (entries, changed)."""
    n = len(group_src)
    x = np.array([e.features for e in group_src], dtype=np.float64)
    dist = pairwise_distances(x, x, metric)
    taken = np.zeros(n, dtype=bool)
    out = []
    changed = False
    for i in range(n):
        if taken[i]:
            continue
        taken[i] = True
        members = [i]
        centroid = x[i].copy()
        # pairwise closeness to the opener is necessary, so only its neighbours qualify
        for j in np.flatnonzero(dist[i, i + 1:] <= eps) + i + 1:
            if taken[j]:
                continue
            to_centroid = pairwise_distances(centroid, x[j], metric)[0, 0]
            if to_centroid <= eps and np.all(dist[j, members] <= eps):
                members.append(j)
                taken[j] = True
                centroid = x[members].mean(axis=0)
        if len(members) == 1:
            out.append(group_src[i])
        else:
            changed = True
            head = group_src[members[0]]
            out.append(AkdEntry(tuple(centroid), head.claimed_id, head.label,
                                max(group_src[m].weight for m in members)))
    return out, changed


def merge_similar(akd: AKD, params: AkdParams) -> AKD:
    """Replace groups of nearly identical same-label entries by their centroid.

    A group is grown greedily in insertion order: a later entry joins when it
    is within ``epsilon`` of the running centroid and of every member.  The
    merged entry keeps the first member's claimed id and the largest weight.
    Passes repeat until nothing merges, so the result is a fixed point.
    """
    eps = params.require_epsilon()
    if len(akd) < 2:
        return akd
    by_label: dict[int, list[AkdEntry]] = {}
    for e in akd.entries:
        by_label.setdefault(e.label, []).append(e)
    merged = []
    for label in sorted(by_label):
        group = by_label[label]
        changed = True
        while changed and len(group) > 1:
            group, changed = _merge_pass(group, eps, params.metric)
        merged.extend(group)
    return akd.with_entries(merged)


def suggest_labels(akd: AKD, frame: TimeFrame, params: AkdParams) -> list[Suggestion]:
    """Nearest-entry label and confidence for every fingerprint of ``frame``.

    Distance ties go to the heavier entry, then to the earlier one.
    """
    eps = params.require_epsilon()
    n = len(frame)
    if len(akd) == 0:
        return [UNMATCHED] * n
    if akd.dim != frame.dim:
        raise DimensionError(f"AKD has dimension {akd.dim}, frame has {frame.dim}")
    dist = pairwise_distances(frame.features, akd.features(), params.metric)
    weights = akd.weights()
    order = np.lexsort((np.arange(len(akd)), -weights))
    best = order[np.argmin(dist[:, order], axis=1)]
    out = []
    for i in range(n):
        j = int(best[i])
        if dist[i, j] <= eps:
            e = akd.entries[j]
            out.append(Suggestion(e.label, confidence(e.weight, params), True, j))
        else:
            out.append(UNMATCHED)
    return out


def decay_weights(akd: AKD, params: AkdParams) -> AKD:
    return akd.with_entries(replace(e, weight=e.weight - params.decay_amount) for e in akd.entries)


def prune(akd: AKD, params: AkdParams) -> AKD:
    return akd.with_entries(e for e in akd.entries if e.weight >= params.w_prune)


def add_entries(akd: AKD, entries: Sequence[AkdEntry]) -> AKD:
    return akd.with_entries(akd.entries + tuple(entries))

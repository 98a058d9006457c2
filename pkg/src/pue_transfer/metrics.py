"""Hit rate, attack detection, recovery and the perfect-transfer upper bound."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import Labeling, TimeFrame, compact_labels
from .transfer import map_labels


@dataclass(frozen=True)
class TrialOutcome:
    hit_rate_static: float
    hit_rate_transfer: float
    hit_rate_upper: float
    attack_present: bool
    attack_detected_static: bool = False
    attack_detected_transfer: bool = False

    @property
    def efficiency(self) -> float:
        return self.hit_rate_transfer - self.hit_rate_static

    @property
    def static_missed(self) -> bool:
        return self.attack_present and not self.attack_detected_static

    @property
    def recovered(self) -> bool:
        return self.static_missed and self.attack_detected_transfer


def hit_rate(predicted: Labeling, truth: Labeling) -> float:
    """Fraction of fingerprints labeled correctly after optimal label alignment."""
    if len(predicted) != len(truth):
        raise ValueError("labelings differ in length")
    if len(truth) == 0:
        raise ValueError("empty labeling")
    m = map_labels(predicted, truth)
    return (len(truth) - m.cost) / len(truth)


def attack_detected(final: Labeling, frame_or_ids, min_support: int = 2) -> bool:
    """True iff some claimed identifier spans two or more well-supported clusters."""
    ids = frame_or_ids.claimed_ids if isinstance(frame_or_ids, TimeFrame) else tuple(frame_or_ids)
    if len(ids) != len(final):
        raise ValueError("labels must be parallel to the frame")
    per_id: dict[str, Counter] = defaultdict(Counter)
    for cid, lab in zip(ids, final.labels):
        per_id[cid][lab] += 1
    return any(sum(1 for n in cnt.values() if n >= min_support) >= 2 for cnt in per_id.values())


@dataclass(frozen=True)
class Recovery:
    """Share of statically missed attacks that the transfer path caught."""

    rate: float
    missed: int
    recovered: int

    @property
    def no_miss(self) -> bool:
        return self.missed == 0


def transfer_recovery(outcomes: Iterable[TrialOutcome]) -> Recovery:
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("no trial outcomes")
    missed = sum(o.static_missed for o in outcomes)
    recovered = sum(o.recovered for o in outcomes)
    return Recovery(recovered / missed if missed else 0.0, missed, recovered)


def upper_bound_labeling(bayes: Labeling, seeded_indices: Sequence[int], truth: Labeling) -> Labeling:
    """Bayesian labeling with the seeded fingerprints replaced by their true labels.

    True labels are renamed into the Bayesian label space using only the
    fingerprints outside the seeded set.
    """
    if len(bayes) != len(truth):
        raise ValueError("labelings differ in length")
    seeded = set(int(i) for i in seeded_indices)
    if any(i < 0 or i >= len(bayes) for i in seeded):
        raise ValueError("seeded index outside the frame")
    truth_visible = [None if i in seeded else t for i, t in enumerate(truth.labels)]
    rename = map_labels(truth_visible, bayes).supported
    keys = []
    for i, (b, t) in enumerate(zip(bayes.labels, truth.labels)):
        if i in seeded:
            keys.append(("bayes", rename[t]) if t in rename else ("truth", t))
        else:
            keys.append(("bayes", b))
    return Labeling(compact_labels(keys))

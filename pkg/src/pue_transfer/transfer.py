"""Label-space alignment, Bayesian/AKD decision fusion and the AKD update step."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .akd import AKD, AkdEntry, AkdParams, Suggestion, decay_weights, merge_similar, prune
from .core import Labeling, TimeFrame, compact_labels


@dataclass(frozen=True)
class LabelMapping:
    """Injective map from source labels to target labels.

    ``mapping`` is the lexicographically smallest optimal assignment; source
    labels assigned to padding are absent.  ``cost`` counts disagreements over
    the fingerprints labeled on both sides.
    """

    mapping: dict
    cost: int
    agreement: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def supported(self) -> dict:
        """The pairs backed by at least one co-assigned fingerprint."""
        return {s: t for s, t in self.mapping.items() if self.agreement.get((s, t), 0) > 0}

    def vector(self, source_labels: Sequence) -> tuple:
        return tuple(self.mapping.get(s) for s in source_labels)


def _labels_of(x) -> list:
    if isinstance(x, Labeling):
        return list(x.labels)
    out = []
    for v in x:
        if isinstance(v, Suggestion):
            out.append(v.label if v.matched else None)
        else:
            out.append(v)
    return out


def _solve(mat: np.ndarray) -> tuple[np.ndarray, int]:
    if mat.size == 0:
        return np.zeros(0, dtype=np.int64), 0
    rows, cols = linear_sum_assignment(mat, maximize=True)
    assign = np.empty(mat.shape[0], dtype=np.int64)
    assign[rows] = cols
    return assign, int(mat[rows, cols].sum())


def _lexicographic_optimum(agree: np.ndarray, n_src: int) -> np.ndarray:
    """Optimal square assignment whose first ``n_src`` entries are lexicographically smallest."""
    n = agree.shape[0]
    cur, opt = _solve(agree)
    used = np.zeros(n, dtype=bool)
    fixed_value = 0
    for s in range(n_src):
        rest_rows = np.arange(s + 1, n)
        for t in range(int(cur[s])):
            if used[t]:
                continue
            cols = np.flatnonzero(~used)
            cols = cols[cols != t]
            sub = agree[np.ix_(rest_rows, cols)]
            bound = fixed_value + agree[s, t] + (sub.max(axis=1).sum() if sub.size else 0)
            if bound < opt:
                continue
            sub_assign, sub_val = _solve(sub)
            if fixed_value + agree[s, t] + sub_val == opt:
                cur = cur.copy()
                cur[s] = t
                cur[rest_rows] = cols[sub_assign]
                break
        used[cur[s]] = True
        fixed_value += int(agree[s, cur[s]])
    return cur


def map_labels(source, target) -> LabelMapping:
    """Exact minimiser of the number of disagreements between two labelings.

    Both sides are parallel sequences; ``None`` (or an unmatched
    :class:`Suggestion`) marks a fingerprint that does not take part.
    """
    src = _labels_of(source)
    tgt = _labels_of(target)
    if len(src) != len(tgt):
        raise ValueError(f"labelings differ in length: {len(src)} vs {len(tgt)}")
    src_space = sorted({s for s in src if s is not None})
    tgt_space = sorted({t for t in tgt if t is not None})
    si = {s: k for k, s in enumerate(src_space)}
    ti = {t: k for k, t in enumerate(tgt_space)}
    n = max(len(src_space), len(tgt_space))
    agree = np.zeros((n, n), dtype=np.int64)
    participating = 0
    for s, t in zip(src, tgt):
        if s is None or t is None:
            continue
        participating += 1
        agree[si[s], ti[t]] += 1
    if n == 0:
        return LabelMapping({}, 0, {})
    assign = _lexicographic_optimum(agree, len(src_space))
    mapping = {}
    agreement = {}
    total = 0
    for s in src_space:
        col = int(assign[si[s]])
        total += int(agree[si[s], col])
        if col < len(tgt_space):
            mapping[s] = tgt_space[col]
            agreement[(s, tgt_space[col])] = int(agree[si[s], col])
    return LabelMapping(mapping, participating - total, agreement)


@dataclass(frozen=True)
class DecisionPolicy:
    """Arbitration between AKD suggestions and the Bayesian labeling.

    ``tau`` is the confidence needed for a suggestion to override.
    ``align_radius`` (in units of epsilon) bounds the nearest-entry votes used
    to line the two label spaces up; 1 restricts alignment to matched
    fingerprints.
    """

    tau: float = 0.5
    align_radius: float = 8.0

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if not self.align_radius >= 1.0:
            raise ValueError("align_radius must be at least 1")


def merge_decisions(bayes: Labeling, suggestions: Sequence[Suggestion],
                    policy: DecisionPolicy = DecisionPolicy(),
                    alignment: Sequence[Suggestion] | None = None) -> Labeling:
    """Fuse the Bayesian labeling with AKD suggestions.

    Bayesian labels are first renamed into the AKD label space by an exact
    alignment against ``alignment`` (nearest-entry labels within the policy's
    alignment radius; defaults to ``suggestions``).  A fingerprint then takes
    its suggested label when the suggestion is confident enough and keeps its
    renamed Bayesian label otherwise.  Without any matched suggestion the
    Bayesian labeling is returned unchanged.
    """
    if len(bayes) != len(suggestions):
        raise ValueError("bayesian labeling and suggestions differ in length")
    if alignment is not None and len(alignment) != len(suggestions):
        raise ValueError("alignment votes must be parallel to the suggestions")
    if not any(s.matched for s in suggestions):
        return bayes.compacted()
    rename = map_labels(bayes, suggestions if alignment is None else alignment).supported
    keys = []
    for b, s in zip(bayes.labels, suggestions):
        if s.matched and s.confidence >= policy.tau:
            keys.append(("akd", s.label))
        elif b in rename:
            keys.append(("akd", rename[b]))
        else:
            keys.append(("bayes", b))
    return Labeling(compact_labels(keys))


def update_akd(akd: AKD, frame: TimeFrame, final: Labeling, suggestions: Sequence[Suggestion],
               params: AkdParams, merge: bool = True,
               alignment: Sequence[Suggestion] | None = None) -> AKD:
    """Fold one frame's final decisions back into the database.

    Matched entries gain weight when the final label agrees with them and
    lose weight otherwise (the fingerprint is then stored under its own
    label); unmatched fingerprints are stored as new entries.  All weights then
    decay, light entries are pruned and near-duplicates merged.  Final labels
    are renamed into the AKD space with the same alignment rule as
    :func:`merge_decisions`; labels left without a partner open fresh AKD
    labels.
    """
    if not (len(frame) == len(final) == len(suggestions)):
        raise ValueError("frame, final labels and suggestions must be parallel")
    if len(akd) and akd.dim != frame.dim:
        raise ValueError(f"AKD has dimension {akd.dim}, frame has {frame.dim}")
    rename = dict(map_labels(final, suggestions if alignment is None else alignment).supported)
    fresh = akd.next_label
    for lab in sorted(final.label_space):
        if lab not in rename:
            rename[lab] = fresh
            fresh += 1

    weights = [e.weight for e in akd.entries]
    added = []
    for i, (lab, s) in enumerate(zip(final.labels, suggestions)):
        target = rename[lab]
        if s.matched:
            if akd.entries[s.entry].label == target:
                weights[s.entry] += params.w_step_inc
                continue
            weights[s.entry] -= params.w_step_dec
        added.append(AkdEntry(tuple(frame.features[i]), frame.claimed_ids[i], target, params.w_init))

    entries = [replace(e, weight=w) for e, w in zip(akd.entries, weights)] + added
    out = AKD(entries, frame.dim, fresh)
    out = prune(decay_weights(out, params), params)
    if merge:
        out = merge_similar(out, params)
    return out

"""Album-grouped iterative stratified splitting.

Greedy multi-label stratification where the atomic assignment unit is a
group of documents (an album, or a singleton for album-less documents),
carrying the label multiset of its members. Repeatedly takes the label
with the fewest unassigned examples and deals that label's groups to the
split with the greatest remaining demand for it; ties fall back to the
split with the most remaining overall capacity, then to a seeded random
draw. Label-less groups are dealt last by remaining capacity.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "validation", "test")


@dataclass
class SplitExample:
    """One document as the splitter sees it: identity, album, labels.

    Labels are opaque strings; multi-task callers typically use
    "task:tag" pairs.
    """
    doc_id: str
    album_id: Optional[str]
    labels: list[str] = field(default_factory=list)


@dataclass
class Group:
    key: str
    doc_ids: list[str]
    label_counts: Counter

    @property
    def size(self) -> int:
        return len(self.doc_ids)


@dataclass
class SplitAssignment:
    assignment: dict[str, str]
    ratios: tuple[float, ...]
    label_proportions: dict[str, dict[str, float]]

    def split_of(self, doc_id: str) -> str:
        return self.assignment[doc_id]

    def doc_ids_in(self, split: str) -> list[str]:
        return [d for d, s in self.assignment.items() if s == split]

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("doc_id,split\n")
            for doc_id, split in self.assignment.items():
                fh.write(f"{doc_id},{split}\n")

    @classmethod
    def load_csv(cls, path, ratios=(0.8, 0.1, 0.1)) -> "SplitAssignment":
        assignment = {}
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline()
            if header.strip() != "doc_id,split":
                raise ValueError(f"{path}: unexpected header {header!r}")
            for line in fh:
                if not line.strip():
                    continue
                doc_id, split = line.rstrip("\n").rsplit(",", 1)
                assignment[doc_id] = split
        return cls(assignment, tuple(ratios), {})


def group_by_album(docs: Iterable[SplitExample]) -> list[Group]:
    """One group per album_id, singletons for null album_id, in first-seen
    order. Each group carries its members' combined label counts."""
    groups: dict[str, Group] = {}
    order: list[Group] = []
    for doc in docs:
        if doc.album_id is None:
            group = Group(key=f"doc::{doc.doc_id}", doc_ids=[doc.doc_id], label_counts=Counter(doc.labels))
            order.append(group)
            continue
        key = f"album::{doc.album_id}"
        group = groups.get(key)
        if group is None:
            group = groups[key] = Group(key=key, doc_ids=[], label_counts=Counter())
            order.append(group)
        group.doc_ids.append(doc.doc_id)
        group.label_counts.update(doc.labels)
    return order


def iterative_group_split(
    groups: Sequence[Group],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    split_names: tuple[str, ...] = SPLIT_NAMES,
) -> SplitAssignment:
    if not groups:
        raise ValueError("cannot split an empty group list")
    if len(ratios) != len(split_names):
        raise ValueError("one ratio per split is required")
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be positive and sum to 1, got {ratios}")

    rng = np.random.default_rng(seed)
    n_splits = len(split_names)
    total_docs = sum(g.size for g in groups)

    label_totals: Counter = Counter()
    for g in groups:
        label_totals.update(g.label_counts)

    # Desired per-split document counts, overall and per label.
    capacity = np.array([r * total_docs for r in ratios], dtype=np.float64)
    demand = {lab: np.array([r * tot for r in ratios], dtype=np.float64) for lab, tot in label_totals.items()}

    unassigned = {g.key: g for g in groups}
    assignment: dict[str, str] = {}

    def assign(group: Group, split_idx: int) -> None:
        for doc_id in group.doc_ids:
            assignment[doc_id] = split_names[split_idx]
        capacity[split_idx] -= group.size
        for lab, cnt in group.label_counts.items():
            demand[lab][split_idx] -= cnt
        del unassigned[group.key]

    def pick_split(scores: np.ndarray) -> int:
        best = scores.max()
        tied = np.flatnonzero(scores >= best - 1e-12)
        if len(tied) == 1:
            return int(tied[0])
        cap_scores = capacity[tied]
        cap_best = cap_scores.max()
        tied = tied[cap_scores >= cap_best - 1e-12]
        if len(tied) == 1:
            return int(tied[0])
        return int(rng.choice(tied))

    while True:
        remaining: Counter = Counter()
        for g in unassigned.values():
            remaining.update(g.label_counts)
        if not remaining:
            break
        # Scarcest label first; lexicographic on the name for determinism.
        label = min(remaining, key=lambda lab: (remaining[lab], lab))
        for key in sorted(unassigned):
            group = unassigned.get(key)
            if group is None or group.label_counts.get(label, 0) == 0:
                continue
            assign(group, pick_split(demand[label]))

    for group in sorted(unassigned.values(), key=lambda g: (-g.size, g.key)):
        best = capacity.max()
        tied = np.flatnonzero(capacity >= best - 1e-12)
        split_idx = int(tied[0]) if len(tied) == 1 else int(rng.choice(tied))
        assign(group, split_idx)

    proportions = _achieved_proportions(groups, assignment, split_names, label_totals)
    _warn_on_degenerate(assignment, split_names, total_docs, ratios)
    return SplitAssignment(assignment, tuple(ratios), proportions)


def _achieved_proportions(groups, assignment, split_names, label_totals) -> dict[str, dict[str, float]]:
    per_label: dict[str, Counter] = {lab: Counter() for lab in label_totals}
    for g in groups:
        split = assignment[g.doc_ids[0]]
        for lab, cnt in g.label_counts.items():
            per_label[lab][split] += cnt
    return {
        lab: {s: per_label[lab][s] / tot for s in split_names}
        for lab, tot in label_totals.items()
        if tot > 0
    }


def _warn_on_degenerate(assignment, split_names, total_docs, ratios) -> None:
    sizes = Counter(assignment.values())
    for name, ratio in zip(split_names, ratios):
        achieved = sizes.get(name, 0) / total_docs
        if abs(achieved - ratio) > 0.15:
            logger.warning(
                "split %s holds %.1f%% of documents vs a %.1f%% target "
                "(large albums force coarse assignments)",
                name, 100 * achieved, 100 * ratio,
            )


def split_corpus(
    docs: Iterable[SplitExample],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> SplitAssignment:
    """group_by_album + iterative_group_split in one call."""
    return iterative_group_split(group_by_album(docs), ratios=ratios, seed=seed)

"""Budgeted sample selection over the pool-to-test distance set.

Three strategies plus a random baseline: ``topk`` ranks pool samples by how
often they appear among each test sample's nearest neighbors; ``balance``
walks that ranking while an annotator checks relation labels to fill
per-relation quotas; ``coverage`` greedily picks the pool sample closest to a
block of still-uncovered test samples until every test sample is covered.
All strategies are deterministic: ties fall back to lower total distance
where meaningful and then to ascending sample id.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import AnnotationOracle, Sample, Schema, TripleSet
from .prompting import Demonstration
from .retriever import PairwiseDistanceSet


@dataclass(frozen=True)
class SelectionResult:
    """Chosen sample ids plus the audit trail of how they were picked."""

    strategy: str
    budget: int
    chosen: tuple[str, ...]
    checked_ids: tuple[str, ...]
    tie_break_hits: int = 0
    warnings: tuple[str, ...] = ()
    per_relation_tallies: Optional[dict[str, int]] = None
    quota_shortfall: Optional[dict[str, int]] = None
    covered_tests: Optional[dict[str, tuple[str, ...]]] = None
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if len(self.chosen) > self.budget:
            raise ValueError("chosen exceeds budget")
        if len(set(self.chosen)) != len(self.chosen):
            raise ValueError("chosen contains duplicates")
        if self.checked_count < len(self.chosen):
            raise ValueError("checked_count below number of chosen samples")

    @property
    def checked_count(self) -> int:
        return len(self.checked_ids)

    def to_json_dict(self) -> dict:
        out: dict = {
            "strategy": self.strategy,
            "budget": self.budget,
            "chosen": list(self.chosen),
            "checked_ids": sorted(self.checked_ids),
            "checked_count": self.checked_count,
            "tie_break_hits": self.tie_break_hits,
            "warnings": list(self.warnings),
        }
        if self.per_relation_tallies is not None:
            out["per_relation_tallies"] = dict(sorted(self.per_relation_tallies.items()))
        if self.quota_shortfall is not None:
            out["quota_shortfall"] = dict(sorted(self.quota_shortfall.items()))
        if self.covered_tests is not None:
            out["covered_tests"] = {k: list(v) for k, v in self.covered_tests.items()}
        if self.seed is not None:
            out["seed"] = self.seed
        return out


def _ranked_pool(P: PairwiseDistanceSet, u: int) -> tuple[list[int], np.ndarray, int]:
    """Global pool order: frequency among per-test u-nearest lists (desc),
    then total distance to the test set (asc), then id (asc)."""
    entries = P.entries
    n, m = entries.shape
    freq = np.zeros(n, dtype=np.int64)
    for j in range(m):
        nearest = sorted(range(n), key=lambda i: (entries[i, j], i))[:u]
        freq[nearest] += 1
    totals = entries.sum(axis=1)
    ranked = sorted(range(n), key=lambda i: (-freq[i], totals[i], P.unlabeled_ids[i]))
    ties = sum(1 for a, b in zip(ranked, ranked[1:]) if freq[a] == freq[b])
    return ranked, freq, ties


def select_top_k(P: PairwiseDistanceSet, u: int, B: int) -> SelectionResult:
    """Pick the B pool samples that most often sit among the u nearest
    neighbors of a test sample."""
    if u < 1 or B < 1:
        raise ValueError("u and B must be >= 1")
    ranked, _freq, ties = _ranked_pool(P, u)
    warnings: list[str] = []
    if B > P.n:
        warnings.append(f"budget {B} exceeds pool size {P.n}; returning the entire pool")
    chosen = tuple(P.unlabeled_ids[i] for i in ranked[:B])
    return SelectionResult(strategy="topk", budget=B, chosen=chosen,
                           checked_ids=chosen, tie_break_hits=ties,
                           warnings=tuple(warnings))


def select_balance(P: PairwiseDistanceSet, schema: Schema, B: int,
                   oracle: AnnotationOracle, u: int = 5) -> SelectionResult:
    """Walk the top-k ranking filling a floor(B/R)-per-relation quota.

    Each candidate costs one oracle check to reveal its gold relation labels;
    it is accepted when any of its relations is still under quota (all of its
    relations' tallies then increment).  Leftover budget is refilled from the
    remaining ranking, so the number of checked samples can exceed B even
    though at most B are annotated.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    quota = B // len(schema.relation_types)
    ranked, _freq, ties = _ranked_pool(P, u)
    ranked_ids = [P.unlabeled_ids[i] for i in ranked]

    tallies: dict[str, int] = {r: 0 for r in schema.relation_types}
    accepted: list[str] = []
    checked: list[str] = []

    def quotas_met() -> bool:
        return all(tallies[r] >= quota for r in schema.relation_types)

    for sid in ranked_ids:
        if quota == 0 or quotas_met() or len(accepted) >= B:
            break
        labels = oracle.check(sid)
        checked.append(sid)
        if any(tallies.get(r, 0) < quota for r in labels):
            accepted.append(sid)
            for r in labels:
                tallies[r] = tallies.get(r, 0) + 1

    shortfall = {r: quota - tallies[r] for r in schema.relation_types if tallies[r] < quota}
    warnings = tuple(
        f"relation {r!r} short by {missing} after exhausting the pool"
        for r, missing in sorted(shortfall.items())
    )

    chosen = list(accepted)
    for sid in ranked_ids:
        if len(chosen) >= min(B, P.n):
            break
        if sid not in chosen:
            oracle.check(sid)
            if sid not in checked:
                checked.append(sid)
            chosen.append(sid)

    return SelectionResult(
        strategy="balance", budget=B, chosen=tuple(chosen),
        checked_ids=tuple(dict.fromkeys(checked)), tie_break_hits=ties,
        warnings=warnings, per_relation_tallies=tallies,
        quota_shortfall=shortfall,
    )


def select_coverage(P: PairwiseDistanceSet, B: int) -> SelectionResult:
    """Greedy coverage: each round scores every live pool row by the sum of
    its ceil(M/B) smallest distances to still-live test columns, picks the
    minimizer, and discards that row plus the test columns it covered.  Stops
    early once every test column is covered."""
    if B < 1:
        raise ValueError("B must be >= 1")
    entries = P.entries
    n, m = P.n, P.m
    block = math.ceil(m / B)  # frozen at loop start
    live_rows = set(range(n))
    live_cols = set(range(m))
    chosen: list[str] = []
    covered: dict[str, tuple[str, ...]] = {}
    ties = 0

    for _ in range(B):
        if not live_cols or not live_rows:
            break
        best_key = None
        best_row = -1
        best_cols: list[int] = []
        tie_seen = False
        for i in sorted(live_rows):
            cols = sorted(live_cols, key=lambda j: (entries[i, j], j))[:block]
            total = float(sum(entries[i, j] for j in cols))
            key = (total, P.unlabeled_ids[i])
            if best_key is None or key < best_key:
                tie_seen = tie_seen or (best_key is not None and key[0] == best_key[0])
                best_key, best_row, best_cols = key, i, cols
            elif key[0] == best_key[0]:
                tie_seen = True
        if tie_seen:
            ties += 1
        sid = P.unlabeled_ids[best_row]
        chosen.append(sid)
        covered[sid] = tuple(P.test_ids[j] for j in best_cols)
        live_rows.discard(best_row)
        live_cols.difference_update(best_cols)

    return SelectionResult(
        strategy="coverage", budget=B, chosen=tuple(chosen),
        checked_ids=tuple(chosen), tie_break_hits=ties,
        covered_tests=covered,
    )


def select_random(pool_ids: Sequence[str], B: int, seed: int) -> SelectionResult:
    """Seeded uniform sample without replacement."""
    if B < 1:
        raise ValueError("B must be >= 1")
    if B > len(pool_ids):
        raise ValueError(f"budget {B} exceeds pool size {len(pool_ids)}")
    chosen = tuple(random.Random(seed).sample(list(pool_ids), B))
    return SelectionResult(strategy="random", budget=B, chosen=chosen,
                           checked_ids=chosen, seed=seed)


def order_demonstrations(chosen: Sequence[str], P: PairwiseDistanceSet,
                         samples_by_id: Mapping[str, Sample],
                         gold_by_id: Mapping[str, TripleSet],
                         most_similar_last: bool = True) -> list[Demonstration]:
    """Order chosen samples for prompting by mean distance to the test set.

    With ``most_similar_last`` (the default) the similarity score is the
    negated mean distance, so ascending order places the most similar
    demonstration adjacent to the query; flipping the switch negates the
    score and reverses which end the most similar sample occupies.
    """
    row = {sid: i for i, sid in enumerate(P.unlabeled_ids)}
    missing = [sid for sid in chosen if sid not in row]
    if missing:
        raise ValueError(f"chosen ids not in the distance set: {missing[:5]}")
    sign = -1.0 if most_similar_last else 1.0
    scored = sorted(
        ((sign * float(P.entries[row[sid]].mean()), sid) for sid in chosen),
        key=lambda pair: (pair[0], pair[1]),
    )
    return [
        Demonstration(sample=samples_by_id[sid], gold=gold_by_id[sid], similarity_score=score)
        for score, sid in scored
    ]

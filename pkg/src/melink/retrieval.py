"""Candidate generation by fuzzy name matching, and negative sampling.

Candidate sets come from a full linear scan with normalized edit-distance
similarity (exactness over speed at this scale).  Training negatives mix
the hardest non-gold candidates under the current model with the gold
entities of the other batch samples.
"""

from __future__ import annotations

import logging
import unicodedata
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


def _fold(s: str) -> str:
    return unicodedata.normalize("NFC", s).casefold()


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance over Unicode scalar values (two-row DP)."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    cur = [0] * (len(b) + 1)
    for i, ca in enumerate(a, start=1):
        cur[0] = i
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev, cur = cur, prev
    return prev[len(b)]


def name_similarity(a: str, b: str) -> float:
    """1 - normalized edit distance over case-folded, NFC-normalized strings."""
    fa, fb = _fold(a), _fold(b)
    return 1.0 - levenshtein(fa, fb) / max(1, max(len(fa), len(fb)))


@dataclass
class EntityIndex:
    """Immutable-after-build lookup over the entity collection."""
    entities: dict[str, object]
    by_type: dict[str, list[str]]
    normalized_names: dict[str, str]

    @classmethod
    def build(cls, entities) -> "EntityIndex":
        ents: dict[str, object] = {}
        by_type: dict[str, list[str]] = {}
        names: dict[str, str] = {}
        for e in entities:
            ents[e.entity_id] = e
            bucket = e.type if getattr(e, "type", None) else "unknown"
            by_type.setdefault(bucket, []).append(e.entity_id)
            names[e.entity_id] = _fold(e.name)
        for ids in by_type.values():
            ids.sort()
        return cls(entities=ents, by_type=by_type, normalized_names=names)

    def __len__(self) -> int:
        return len(self.entities)


@dataclass
class CandidateSet:
    mention_id: str
    candidates: list[tuple[str, float]]  # (entity_id, name similarity), score desc
    lam: int
    provided: list[str] | None = None

    def ids(self) -> list[str]:
        return [c[0] for c in self.candidates]


def _top_by_similarity(index: EntityIndex, mention: str, ids, limit: int,
                       exclude: set[str] | None = None) -> list[tuple[str, float]]:
    folded = _fold(mention)
    scored = []
    for eid in ids:
        if exclude and eid in exclude:
            continue
        name = index.normalized_names[eid]
        sim = 1.0 - levenshtein(folded, name) / max(1, max(len(folded), len(name)))
        scored.append((eid, sim))
    scored.sort(key=lambda c: (-c[1], c[0]))
    return scored[:limit]


def retrieve_candidates(index: EntityIndex, mention: str, lam: int,
                        mention_type: str | None = None,
                        provided: list[str] | None = None,
                        mention_id: str = "",
                        gold_id: str | None = None) -> CandidateSet:
    """Top-lam candidates for a mention.

    Plain mode scans every entity.  When the dataset supplies candidates
    and/or a mention type, the supplied ids are kept and the remainder is
    filled by fuzzy search inside the type bucket.  Passing `gold_id`
    (training only) force-includes the gold entity, evicting the weakest
    candidate if the set is full.
    """
    scored: list[tuple[str, float]]
    if provided is None and mention_type is None:
        scored = _top_by_similarity(index, mention, index.normalized_names.keys(), lam)
    else:
        kept: list[tuple[str, float]] = []
        seen: set[str] = set()
        for eid in (provided or [])[:lam]:
            if eid in index.entities and eid not in seen:
                kept.append((eid, name_similarity(mention, index.entities[eid].name)))
                seen.add(eid)
        bucket = index.by_type.get(mention_type, []) if mention_type else \
            list(index.normalized_names.keys())
        fill = _top_by_similarity(index, mention, bucket, lam - len(kept), exclude=seen)
        scored = kept + fill
        scored.sort(key=lambda c: (-c[1], c[0]))

    if len(scored) < lam:
        log.warning("retrieval for %r found only %d of %d requested candidates",
                    mention, len(scored), lam)

    if gold_id is not None and gold_id not in {c[0] for c in scored}:
        if gold_id in index.entities:
            gold_sim = name_similarity(mention, index.entities[gold_id].name)
            if len(scored) >= lam:
                scored = scored[:lam - 1]
            scored.append((gold_id, gold_sim))
            scored.sort(key=lambda c: (-c[1], c[0]))

    return CandidateSet(mention_id=mention_id, candidates=scored, lam=lam,
                        provided=provided)


def sample_negatives(gold_id: str, candidate_set: CandidateSet,
                     batch_gold_ids: list[str], g_eval: np.ndarray,
                     entity_unit_vecs: dict[str, np.ndarray],
                     k_hard: int = 1) -> list[str]:
    """Negative entity ids for one sample.

    Hard negatives: the k_hard non-gold candidates most similar to the
    current joint feature (cosine under a read-only parameter snapshot).
    In-batch negatives: gold ids of the other batch samples, deduplicated
    against the sample's own gold and the hard picks.
    """
    gn = np.linalg.norm(g_eval)
    ghat = (g_eval / (gn + 1e-12)).reshape(-1)
    ranked = []
    for eid, _ in candidate_set.candidates:
        if eid == gold_id:
            continue
        ranked.append((float(ghat @ entity_unit_vecs[eid].reshape(-1)), eid))
    ranked.sort(key=lambda t: (-t[0], t[1]))
    hard = [eid for _, eid in ranked[:max(0, k_hard)]]

    picked = set(hard)
    picked.add(gold_id)
    negatives = list(hard)
    for other in batch_gold_ids:
        if other not in picked and other in entity_unit_vecs:
            negatives.append(other)
            picked.add(other)
    if not negatives:
        log.warning("no negatives available for gold %r (singleton batch, "
                    "no non-gold candidates)", gold_id)
    return negatives

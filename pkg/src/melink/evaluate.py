"""Top-k ranking evaluation against retrieved candidate sets."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .data import MultimodalSample
from .model import Featurizer, eval_forward
from .optim import ParamStore
from .retrieval import EntityIndex, retrieve_candidates

log = logging.getLogger(__name__)

TOP_KS = (1, 5, 10, 20)


@dataclass
class SampleRanking:
    sample_id: str
    gold_id: str
    gold_rank: int | None               # None: gold missing from candidates
    candidates: list[tuple[str, float]]  # (entity_id, cosine), score desc


@dataclass
class RankingReport:
    split: str
    per_sample: list[SampleRanking]
    top_k: dict[int, float]
    retrieval_miss_rate: float
    n_samples: int
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "n_samples": self.n_samples,
            "top_k": {str(k): v for k, v in self.top_k.items()},
            "retrieval_miss_rate": self.retrieval_miss_rate,
            "metadata": self.metadata,
            "per_sample": [
                {"sample_id": s.sample_id, "gold_id": s.gold_id,
                 "gold_rank": s.gold_rank,
                 "candidates": [[eid, score] for eid, score in s.candidates]}
                for s in self.per_sample
            ],
        }


def score_candidates(g: np.ndarray, candidate_ids: list[str],
                     entity_unit_vecs: dict[str, np.ndarray]
                     ) -> list[tuple[str, float]]:
    """Cosine of the joint feature against each candidate, sorted by score
    descending with entity-id tie-break."""
    ghat = (g / (np.linalg.norm(g) + 1e-12)).reshape(-1)
    scored = [(eid, float(ghat @ entity_unit_vecs[eid].reshape(-1)))
              for eid in candidate_ids]
    scored.sort(key=lambda c: (-c[1], c[0]))
    return scored


def pessimistic_rank(scored: list[tuple[str, float]], gold_id: str) -> int | None:
    """1 + strictly-better count + non-gold ties; None when gold is absent."""
    gold_score = None
    for eid, s in scored:
        if eid == gold_id:
            gold_score = s
            break
    if gold_score is None:
        return None
    better = sum(1 for eid, s in scored if s > gold_score)
    ties = sum(1 for eid, s in scored if s == gold_score and eid != gold_id)
    return 1 + better + ties


def rank_sample(sample: MultimodalSample, store: ParamStore, cfg: TrainConfig,
                index: EntityIndex, lam: int, featurizer: Featurizer,
                entity_unit_vecs: dict[str, np.ndarray],
                candidate_cache: dict | None = None) -> SampleRanking:
    """Candidate retrieval + forward + scoring for one sample (eval mode:
    the gold entity is never force-included)."""
    key = (sample.mention.surface, sample.mention_type,
           tuple(sample.provided_candidates or ()), lam)
    cand = candidate_cache.get(key) if candidate_cache is not None else None
    if cand is None:
        cand = retrieve_candidates(index, sample.mention.surface, lam,
                                   mention_type=sample.mention_type,
                                   provided=sample.provided_candidates,
                                   mention_id=sample.sample_id)
        if candidate_cache is not None:
            candidate_cache[key] = cand
    feats = featurizer.sample_features(sample)
    g = eval_forward(feats, store, cfg, dtype=featurizer.dtype)
    scored = score_candidates(g, cand.ids(), entity_unit_vecs)
    return SampleRanking(
        sample_id=sample.sample_id,
        gold_id=sample.gold_entity_id,
        gold_rank=pessimistic_rank(scored, sample.gold_entity_id),
        candidates=scored,
    )


def evaluate(store: ParamStore, cfg: TrainConfig,
             samples: list[MultimodalSample], index: EntityIndex, lam: int,
             featurizer: Featurizer | None = None,
             entity_unit_vecs: dict[str, np.ndarray] | None = None,
             split: str = "all", metadata: dict | None = None,
             candidate_cache: dict | None = None) -> RankingReport:
    """Rank every sample's candidates and aggregate Top-k accuracy.

    Pure function of (parameters, dataset, lam, config): repeated calls
    give identical reports.
    """
    if featurizer is None:
        featurizer = Featurizer(cfg)
    if entity_unit_vecs is None:
        entity_unit_vecs = featurizer.entity_unit_vecs(index)

    per_sample = [rank_sample(s, store, cfg, index, lam, featurizer,
                              entity_unit_vecs, candidate_cache)
                  for s in samples]
    n = len(per_sample)
    top_k = {}
    for k in TOP_KS:
        hits = sum(1 for r in per_sample if r.gold_rank is not None and r.gold_rank <= k)
        top_k[k] = hits / n if n else 0.0
    misses = sum(1 for r in per_sample if r.gold_rank is None)

    meta = {"seed": cfg.seed, "config_hash": cfg.config_hash(),
            "lambda": lam, "sample_ids": [r.sample_id for r in per_sample]}
    if metadata:
        meta.update(metadata)
    return RankingReport(
        split=split,
        per_sample=per_sample,
        top_k=top_k,
        retrieval_miss_rate=misses / n if n else 0.0,
        n_samples=n,
        metadata=meta,
    )

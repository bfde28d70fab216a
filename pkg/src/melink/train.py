"""Training loop: batching, negative mining, optimization, periodic eval,
checkpointing, metrics log."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import TrainConfig
from .data import dataset_hash, load_dataset, split_dataset
from .errors import DataError, NumericError
from .evaluate import RankingReport, evaluate
from .model import (Featurizer, active_param_names, batch_forward,
                    eval_forward_batch, init_params)
from .optim import adamw_step
from .retrieval import retrieve_candidates, sample_negatives
from .tensor import backward

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    final_checkpoint: Path
    best_checkpoint: Path
    metrics_path: Path
    steps: int
    final_dev: RankingReport | None
    best_dev_top1: float


def _check_dims(cfg: TrainConfig, stats) -> None:
    for key, want in (("d", cfg.d), ("d_obj", cfg.d_obj), ("d_face", cfg.d_face)):
        have = stats.dims.get(key)
        if have is not None and have != want:
            raise DataError(
                f"dataset {key}={have} does not match config {key}={want}")


def train(cfg: TrainConfig, data_dir: str | Path, out_dir: str | Path) -> TrainResult:
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()

    samples, index, stats = load_dataset(data_dir)
    _check_dims(cfg, stats)
    train_s, dev_s, _ = split_dataset(samples, cfg.seed, cfg.split_train, cfg.split_dev)
    if not train_s:
        raise DataError("empty training split")

    featurizer = Featurizer(cfg)
    entity_vecs = featurizer.entity_unit_vecs(index)
    feats = [featurizer.sample_features(s) for s in train_s]
    positives = {s.sample_id: entity_vecs[s.gold_entity_id] for s in train_s}
    # retrieval is deterministic per mention, so candidate sets are built once;
    # training mode force-includes the gold entity
    cand_sets = {
        s.sample_id: retrieve_candidates(
            index, s.mention.surface, cfg.lam, mention_type=s.mention_type,
            provided=s.provided_candidates, mention_id=s.sample_id,
            gold_id=s.gold_entity_id)
        for s in train_s
    }

    store = init_params(cfg)
    active = active_param_names(store, cfg)
    active_tensors = [store[n] for n in active]

    rng_shuffle = np.random.default_rng([cfg.seed, 1])
    rng_dropout = np.random.default_rng([cfg.seed, 2])

    metrics_path = out / "metrics.jsonl"
    metrics_fh = metrics_path.open("w", encoding="utf-8")
    dset_hash = dataset_hash(data_dir)
    eval_cache: dict = {}
    best_top1 = -1.0
    best_path = out / "best.ckpt"
    final_path = out / "final.ckpt"
    loss_window: list[float] = []
    epoch_negatives: dict[str, list[str]] = {}
    last_eval_step = -1
    final_dev: RankingReport | None = None

    def mine(batch_feats, batch_gold):
        """Negative ids per sample under the current (read-only) parameters."""
        out_ids = {}
        fresh = [f for f in batch_feats
                 if not (cfg.negatives_refresh == "epoch"
                         and f.sample_id in epoch_negatives)]
        if fresh:
            g_all = eval_forward_batch(fresh, store, cfg)
            for row, f in enumerate(fresh):
                ids = sample_negatives(f.gold_id, cand_sets[f.sample_id],
                                       batch_gold, g_all[row:row + 1],
                                       entity_vecs, k_hard=cfg.k_hard)
                out_ids[f.sample_id] = ids
                if cfg.negatives_refresh == "epoch":
                    epoch_negatives[f.sample_id] = ids
        for f in batch_feats:
            if f.sample_id not in out_ids:
                out_ids[f.sample_id] = epoch_negatives[f.sample_id]
        return out_ids

    def run_dev_eval(step: int):
        nonlocal best_top1, final_dev, last_eval_step
        if not dev_s:
            return None
        report = evaluate(store, cfg, dev_s, index, cfg.lam,
                          featurizer=featurizer, entity_unit_vecs=entity_vecs,
                          split="dev", metadata={"dataset_hash": dset_hash},
                          candidate_cache=eval_cache)
        mean_loss = float(np.mean(loss_window)) if loss_window else 0.0
        record = {"step": step, "split": "dev",
                  "top1": report.top_k[1], "top5": report.top_k[5],
                  "top10": report.top_k[10], "top20": report.top_k[20],
                  "loss": mean_loss,
                  "retrieval_miss_rate": report.retrieval_miss_rate}
        metrics_fh.write(json.dumps(record, sort_keys=True) + "\n")
        metrics_fh.flush()
        loss_window.clear()
        last_eval_step = step
        if report.top_k[1] > best_top1:
            best_top1 = report.top_k[1]
            save_checkpoint(best_path, store, cfg)
        final_dev = report
        log.info("step %d: dev top1=%.3f top5=%.3f loss=%.4f",
                 step, report.top_k[1], report.top_k[5], mean_loss)
        return report

    step = 0
    stop = False
    try:
        for epoch in range(cfg.epochs):
            if stop:
                break
            epoch_negatives.clear()
            order = rng_shuffle.permutation(len(feats))
            for start in range(0, len(order), cfg.batch_size):
                batch = [feats[i] for i in order[start:start + cfg.batch_size]]
                batch_gold = [f.gold_id for f in batch]
                neg_ids = mine(batch, batch_gold)
                negatives = {
                    sid: (np.vstack([entity_vecs[e] for e in ids])
                          if ids else np.zeros((0, cfg.d), dtype=np.float32))
                    for sid, ids in neg_ids.items()
                }
                loss, parts = batch_forward(batch, store, cfg, training=True,
                                            rng=rng_dropout, positives=positives,
                                            negatives=negatives)
                if not np.isfinite(loss.data):
                    raise NumericError(
                        f"non-finite loss at step {store.step + 1}; batch sample "
                        f"ids: {[f.sample_id for f in batch]}")
                backward(loss, leaves=active_tensors)
                adamw_step(store, cfg.lr, cfg.weight_decay, active=active)
                loss_window.append(parts["total"])
                step = store.step
                if cfg.eval_every_steps > 0 and step % cfg.eval_every_steps == 0:
                    run_dev_eval(step)
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    stop = True
                    break

        if step != last_eval_step:
            run_dev_eval(step)
        save_checkpoint(final_path, store, cfg)
        if best_top1 < 0:  # no dev split: best is the final state
            save_checkpoint(best_path, store, cfg)
    finally:
        metrics_fh.close()
    log.info("training done: %d steps in %.1fs; best dev top1=%.3f",
             step, time.time() - t0, max(best_top1, 0.0))
    return TrainResult(
        final_checkpoint=final_path,
        best_checkpoint=best_path,
        metrics_path=metrics_path,
        steps=step,
        final_dev=final_dev,
        best_dev_top1=max(best_top1, 0.0),
    )

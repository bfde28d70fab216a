"""End-to-end gradient verification at 64-bit precision.

Builds a small but complete model (all three units, visual refinement,
gated fusion, full objective) on random features and compares reverse-mode
gradients against central finite differences.
"""

from __future__ import annotations

import time

import numpy as np

from .config import TrainConfig
from .encoders import encode_text
from .model import SampleFeatures, batch_forward, init_params
from .optim import ParamStore, grad_check


def build_check_setup(dim: int = 8, heads: int = 2, seed: int = 0,
                      n_queries: int = 2, batch: int = 3, n_objects: int = 2,
                      d_obj: int = 6, d_face: int = 5):
    """Returns (fn, store) for grad_check: fn is a deterministic scalar loss
    of the parameters over a fixed random batch, evaluated at float64."""
    cfg = TrainConfig(
        d=dim, d_obj=d_obj, d_face=d_face, heads=heads, n_queries=n_queries,
        dropout=0.0, seed=seed, batch_size=batch, lam=4,
    ).validate()
    rng = np.random.default_rng(seed + 17)

    words = ["veras", "lumen", "oriel", "tavik", "sorel", "nima"]
    feats = []
    positives = {}
    negatives = {}
    for i in range(batch):
        mention = words[i % len(words)]
        text = " ".join(rng.choice(words, size=4))
        m_enc = encode_text(mention, dim, seed, dtype=np.float64)
        t_enc = encode_text(text, dim, seed, dtype=np.float64)
        feats.append(SampleFeatures(
            sample_id=f"chk{i}",
            gold_id=f"g{i}",
            mention_tokens=m_enc.token_matrix * 1.5,
            mention_pooled=m_enc.pooled,
            text_tokens=t_enc.token_matrix * 1.5,
            anp_rows=rng.normal(0, 1.5, size=(2, dim)),
            objects=rng.normal(0, 1.5, size=(n_objects, d_obj)),
            faces=rng.normal(0, 1.5, size=(n_objects, d_face)),
        ))
        pos = rng.normal(0, 1, size=(1, dim))
        positives[f"chk{i}"] = pos / np.linalg.norm(pos)
        neg = rng.normal(0, 1, size=(2, dim))
        negatives[f"chk{i}"] = neg / np.linalg.norm(neg, axis=1, keepdims=True)

    def fn(store: ParamStore):
        loss, _ = batch_forward(feats, store, cfg, training=False,
                                rng=np.random.default_rng(0),
                                positives=positives, negatives=negatives,
                                dtype=np.float64)
        return loss

    store = init_params(cfg, dtype=np.float64)
    # evaluate at a generic point: at the tiny training-init scale attention
    # is near-uniform and the stage-2 query/key gradients fall below what
    # central differences can resolve at 64-bit
    prng = np.random.default_rng(seed + 101)
    for name, t in store.items():
        if name != "fusion.alpha_raw":
            t.data = prng.normal(0.0, 0.6, t.data.shape)
    return fn, store


def run_gradcheck(dim: int = 8, heads: int = 2, seed: int = 0,
                  n_queries: int = 2, batch: int = 3, n_objects: int = 2,
                  eps_fd: float = 1e-5) -> tuple[float, int, float]:
    """(max relative error, parameter count, elapsed seconds)."""
    fn, store = build_check_setup(dim=dim, heads=heads, seed=seed,
                                  n_queries=n_queries, batch=batch,
                                  n_objects=n_objects)
    n_params = sum(t.data.size for t in store.tensors())
    t0 = time.time()
    err = grad_check(fn, store, eps_fd=eps_fd)
    return err, n_params, time.time() - t0

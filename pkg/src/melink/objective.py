"""Gated fusion of the mention views and the training objective.

The joint feature blends the attribute-enhanced view into the sum of the
other views through a learnable gate, then projects.  Training combines a
cosine triplet loss over retrieved negatives with a mean-shifted
contrastive alignment between paired feature sets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .tensor import (Tensor, add, add_rowwise, add_scalar, concat_rows,
                     dropout, exp, l2_normalize_rows, log as t_log, matmul,
                     mean_all, mean_rows, mul, relu, scale, slice_cols, sub,
                     sum_cols, transpose)

log = logging.getLogger(__name__)


@dataclass
class FusionParams:
    w_g: Tensor        # (d, d)
    b_g: Tensor        # (1, d)
    alpha_raw: Tensor  # 0-d; gate = sigmoid(alpha_raw), so it stays in [0,1]


def fuse(m: Tensor, m_t: Tensor | None, m_v: Tensor | None,
         m_s: Tensor | None, w_g: Tensor, b_g: Tensor,
         alpha: Tensor | float, dropout_p: float = 0.0,
         rng: np.random.Generator | None = None,
         training: bool = False) -> Tensor:
    """Joint feature g = (g_m + alpha * (m_s - g_m)) @ W_g + b_g.

    g_m sums the available views (disabled views pass None).  alpha must
    already lie in [0,1]; when m_s is None the gate branch is skipped
    entirely.  Dropout hits g_m in training mode.
    """
    g_m = m
    for view in (m_t, m_v):
        if view is not None:
            g_m = add(g_m, view)
    if rng is None:
        rng = np.random.default_rng(0)
    g_m = dropout(g_m, dropout_p, rng, training)
    if m_s is None:
        pre = g_m
    else:
        pre = add(g_m, scale(sub(m_s, g_m), alpha))
    return add_rowwise(matmul(pre, w_g), b_g)


def _unit_rows(arr: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    return arr / (norms + 1e-12)


def triplet_loss(g: Tensor, positive: np.ndarray, negatives,
                 margin: float, invert: bool = False) -> Tensor:
    """Mean hinge over negatives: max(cos(g, neg) - cos(g, pos) + margin, 0).

    `invert` reproduces the sign-flipped variant that penalizes similarity
    to the positive instead; it exists for comparison only and does not
    train.  Empty negatives contribute 0 with a warning.
    """
    if isinstance(negatives, (list, tuple)):
        rows = [np.asarray(n, dtype=g.data.dtype).reshape(1, -1) for n in negatives]
        neg = np.vstack(rows) if rows else np.zeros((0, g.data.shape[1]),
                                                    dtype=g.data.dtype)
    else:
        neg = np.asarray(negatives, dtype=g.data.dtype)
        if neg.ndim == 1:
            neg = neg.reshape(1, -1)
    if neg.size == 0:
        log.warning("triplet_loss: no negatives; contributing 0")
        return Tensor(np.asarray(0.0, dtype=g.data.dtype))
    pos = np.asarray(positive, dtype=g.data.dtype).reshape(1, -1)
    bank = _unit_rows(np.vstack([pos, neg]))
    ghat = l2_normalize_rows(g)
    scores = matmul(ghat, Tensor(np.ascontiguousarray(bank.T)))
    pos_score = slice_cols(scores, 0, 1)
    neg_scores = slice_cols(scores, 1, bank.shape[0])
    diff = sub(neg_scores, pos_score)
    if invert:
        diff = scale(diff, -1.0)
    return mean_all(relu(add_scalar(diff, margin)))


def msc_loss(a: Tensor, b: Tensor, tau: float) -> Tensor:
    """Mean-shifted contrastive loss between row-paired feature sets.

    All rows are unit-normalized, the normalized mean of the 2n rows is
    subtracted, the shifted rows are re-normalized, and row i of `a`
    contrasts its own partner against the other shifted `b` rows at
    temperature tau.  Fewer than two pairs give 0.
    """
    if tau <= 0:
        raise ConfigError(f"msc temperature must be positive; got {tau}")
    n = a.data.shape[0]
    if a.data.shape != b.data.shape:
        raise ConfigError(
            f"msc_loss needs row-paired inputs; got {a.data.shape} and {b.data.shape}")
    if n < 2:
        return Tensor(np.asarray(0.0, dtype=a.data.dtype))
    ah = l2_normalize_rows(a)
    bh = l2_normalize_rows(b)
    center = l2_normalize_rows(mean_rows(concat_rows([ah, bh])))
    neg_center = scale(center, -1.0)
    a_shift = l2_normalize_rows(add_rowwise(ah, neg_center))
    b_shift = l2_normalize_rows(add_rowwise(bh, neg_center))
    logits = scale(matmul(a_shift, transpose(b_shift)), 1.0 / tau)
    lse = t_log(sum_cols(exp(logits)))
    eye = Tensor(np.eye(n, dtype=a.data.dtype))
    diag = sum_cols(mul(logits, eye))
    return mean_all(sub(lse, diag))


@dataclass
class SampleTerms:
    """Per-sample pieces the batch objective consumes."""
    sample_id: str
    g: Tensor
    positive: np.ndarray
    negatives: np.ndarray          # (k, d); k may be 0
    m_t: Tensor | None = None
    m_v: Tensor | None = None


@dataclass
class BatchState:
    samples: list[SampleTerms] = field(default_factory=list)
    face_rows: Tensor | None = None    # (n_objects_total, d)
    object_rows: Tensor | None = None  # (n_objects_total, d)


def total_loss(state: BatchState, margin: float, beta: float, tau: float,
               use_alignment: bool = True,
               invert_triplet: bool = False) -> tuple[Tensor, dict[str, float]]:
    """Batch objective: mean triplet loss plus beta times the alignment loss.

    Alignment covers the pooled (face, object) row pairs across the batch
    and the per-sample (text-view, vision-view) pairs; either term drops
    out when its inputs are missing or unpaired.
    """
    if not state.samples:
        raise ConfigError("total_loss on an empty batch")
    dtype = state.samples[0].g.data.dtype

    l_t: Tensor | None = None
    for s in state.samples:
        term = triplet_loss(s.g, s.positive, s.negatives, margin, invert_triplet)
        l_t = term if l_t is None else add(l_t, term)
    l_t = scale(l_t, 1.0 / len(state.samples))

    l_c = Tensor(np.asarray(0.0, dtype=dtype))
    if use_alignment and beta != 0.0:
        if state.face_rows is not None and state.object_rows is not None:
            l_c = add(l_c, msc_loss(state.face_rows, state.object_rows, tau))
        paired = [(s.m_t, s.m_v) for s in state.samples
                  if s.m_t is not None and s.m_v is not None]
        if len(paired) >= 2:
            mt = concat_rows([p[0] for p in paired])
            mv = concat_rows([p[1] for p in paired])
            l_c = add(l_c, msc_loss(mt, mv, tau))

    loss = add(l_t, scale(l_c, beta))
    parts = {"triplet": float(l_t.data), "alignment": float(l_c.data),
             "total": float(loss.data)}
    return loss, parts

"""Two-stage attention enhancer and visual-feature refinement.

Each enhancer unit runs multi-head cross-attention of the mention token
rows over a context (sentence tokens, scene-attribute rows, or refined
visual rows), then decodes the result with a small bank of learnable
queries and mean-pools to a single row.  Three units share this structure
and differ only in parameters and context.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, EmptyContextError
from .tensor import (Tensor, attention_heads, concat_cols, concat_rows,
                     dropout, matmul, mean_rows)


@dataclass
class StageParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor


@dataclass
class UnitParams:
    """Parameters of one enhancer unit.

    `out_proj` mixes the concatenated heads after both attention stages;
    `queries` is the learnable decoder query bank (n_queries, d).
    """
    stage1: StageParams
    stage2: StageParams
    out_proj: Tensor
    queries: Tensor


def cross_attention(x: Tensor, y: Tensor, stage: StageParams, out_proj: Tensor,
                    heads: int, capture: list[np.ndarray] | None = None) -> Tensor:
    """Multi-head attention of x (p,d) over context y (q,d), head-mixed
    through out_proj.  Scores scale by 1/sqrt(d/heads)."""
    if y.data.shape[0] == 0:
        raise EmptyContextError("attention over an empty context; apply the unit fallback")
    q = matmul(x, stage.wq)
    k = matmul(y, stage.wk)
    v = matmul(y, stage.wv)
    att = attention_heads(q, k, v, heads, capture=capture)
    return matmul(att, out_proj)


def decode_with_queries(h_t: Tensor, unit: UnitParams, heads: int,
                        dropout_p: float, rng: np.random.Generator,
                        training: bool,
                        capture: list[np.ndarray] | None = None) -> Tensor:
    """Decode a hidden sequence with the unit's query bank and mean-pool the
    decoded rows to (1,d); dropout applies to the pooled row when training."""
    rows = cross_attention(unit.queries, h_t, unit.stage2, unit.out_proj,
                           heads, capture=capture)
    pooled = mean_rows(rows)
    return dropout(pooled, dropout_p, rng, training)


def enhance(m_tokens: Tensor, context: Tensor, unit: UnitParams, heads: int,
            dropout_p: float = 0.0, rng: np.random.Generator | None = None,
            training: bool = False,
            capture: dict[str, list[np.ndarray]] | None = None) -> Tensor:
    """Full enhancer unit: context-attended mention rows decoded to (1,d)."""
    cap1 = capture.setdefault("stage1", []) if capture is not None else None
    cap2 = capture.setdefault("stage2", []) if capture is not None else None
    h_t = cross_attention(m_tokens, context, unit.stage1, unit.out_proj,
                          heads, capture=cap1)
    if rng is None:
        rng = np.random.default_rng(0)
    return decode_with_queries(h_t, unit, heads, dropout_p, rng, training,
                               capture=cap2)


@dataclass
class RowBlocks:
    """A stack of per-sample row blocks: `tensor` is (sum(rows), d) and
    `offsets` (length B+1) marks each sample's slice."""
    tensor: Tensor
    offsets: list[int]

    def block(self, i: int) -> Tensor:
        from .tensor import slice_rows
        return slice_rows(self.tensor, self.offsets[i], self.offsets[i + 1])

    def __len__(self) -> int:
        return len(self.offsets) - 1


_POOL_CACHE: dict[tuple[int, int, str], np.ndarray] = {}


def _group_mean_matrix(n_groups: int, group_size: int, dtype) -> np.ndarray:
    key = (n_groups, group_size, np.dtype(dtype).str)
    mat = _POOL_CACHE.get(key)
    if mat is None:
        mat = np.zeros((n_groups, n_groups * group_size), dtype=dtype)
        for i in range(n_groups):
            mat[i, i * group_size:(i + 1) * group_size] = 1.0 / group_size
        _POOL_CACHE[key] = mat
    return mat


def enhance_many(m_blocks: RowBlocks, ctx_blocks: RowBlocks, unit: UnitParams,
                 heads: int, dropout_p: float = 0.0,
                 rng: np.random.Generator | None = None,
                 training: bool = False) -> Tensor:
    """Batched enhancer: one (B, d) output row per sample.

    Mathematically the per-sample `enhance`, but every projection runs as a
    single stacked matmul across the batch; only the attention itself stays
    per-sample.  Decoder outputs are group-mean-pooled.
    """
    if len(m_blocks) != len(ctx_blocks):
        raise DataError(f"batch size mismatch: {len(m_blocks)} mention blocks "
                        f"vs {len(ctx_blocks)} context blocks")
    n = len(m_blocks)
    s1, s2 = unit.stage1, unit.stage2
    q_all = matmul(m_blocks.tensor, s1.wq)
    k_all = matmul(ctx_blocks.tensor, s1.wk)
    v_all = matmul(ctx_blocks.tensor, s1.wv)
    q_blocks = RowBlocks(q_all, m_blocks.offsets)
    k_blocks = RowBlocks(k_all, ctx_blocks.offsets)
    v_blocks = RowBlocks(v_all, ctx_blocks.offsets)

    att_parts = []
    for i in range(n):
        if ctx_blocks.offsets[i + 1] == ctx_blocks.offsets[i]:
            raise EmptyContextError(
                "attention over an empty context; apply the unit fallback")
        att_parts.append(attention_heads(q_blocks.block(i), k_blocks.block(i),
                                         v_blocks.block(i), heads))
    h_all = matmul(concat_rows(att_parts), unit.out_proj)
    h_blocks = RowBlocks(h_all, m_blocks.offsets)

    q2 = matmul(unit.queries, s2.wq)  # shared across the batch
    k2_all = matmul(h_all, s2.wk)
    v2_all = matmul(h_all, s2.wv)
    k2_blocks = RowBlocks(k2_all, m_blocks.offsets)
    v2_blocks = RowBlocks(v2_all, m_blocks.offsets)
    dec_parts = [attention_heads(q2, k2_blocks.block(i), v2_blocks.block(i), heads)
                 for i in range(n)]
    dec_all = matmul(concat_rows(dec_parts), unit.out_proj)

    n_queries = unit.queries.data.shape[0]
    pool = Tensor(_group_mean_matrix(n, n_queries, dec_all.data.dtype))
    pooled = matmul(pool, dec_all)
    if rng is None:
        rng = np.random.default_rng(0)
    return dropout(pooled, dropout_p, rng, training)


def refine_visual(objects: Tensor, faces: Tensor, proj: Tensor) -> Tensor:
    """Per-object refined rows: project [object_vec, face_vec] through the
    learned (d_obj + d_face, d) matrix.  Missing faces are zero rows."""
    if objects.data.shape[0] != faces.data.shape[0]:
        raise DataError(
            f"objects ({objects.data.shape[0]} rows) and faces "
            f"({faces.data.shape[0]} rows) must pair one-to-one")
    return matmul(concat_cols([objects, faces]), proj)

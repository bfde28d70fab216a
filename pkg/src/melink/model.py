"""Model assembly: parameter initialization, featurization, forward pass.

Parameter names are hierarchical ("enhancer.text.stage1.wq", ...); the
store iterates them lexicographically so trajectories are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .data import MultimodalSample
from .encoders import encode_text
from .enhancer import StageParams, UnitParams, enhance, refine_visual
from .errors import DataError
from .objective import BatchState, SampleTerms, fuse, total_loss
from .optim import ParamStore
from .retrieval import EntityIndex
from .tensor import (Tensor, concat_rows, matmul, no_grad, sigmoid,
                     slice_rows)

UNIT_NAMES = ("text", "attr", "vision")


def init_params(cfg: TrainConfig, dtype=np.float32) -> ParamStore:
    """All learnable tensors, initialized uniform(-1/sqrt(d), 1/sqrt(d))
    from the run seed.  Creation order is fixed, so identical seeds give
    identical initializations regardless of ablation flags."""
    rng = np.random.default_rng(cfg.seed)
    bound = 1.0 / np.sqrt(cfg.d)
    store = ParamStore()

    def uniform(shape):
        return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype))

    for unit in UNIT_NAMES:
        for stage in ("stage1", "stage2"):
            for w in ("wq", "wk", "wv"):
                store.add(f"enhancer.{unit}.{stage}.{w}", uniform((cfg.d, cfg.d)))
        store.add(f"enhancer.{unit}.out_proj", uniform((cfg.d, cfg.d)))
        store.add(f"enhancer.{unit}.queries", uniform((cfg.n_queries, cfg.d)))

    store.add("visual.proj", uniform((cfg.d_obj + cfg.d_face, cfg.d)))
    store.add("fusion.w_g", uniform((cfg.d, cfg.d)))
    store.add("fusion.b_g", Tensor(np.zeros((1, cfg.d), dtype=dtype)))
    # gate starts mostly closed (sigmoid(-2) ~ 0.12): the attribute view is
    # the noisy one the gate exists to restrain
    store.add("fusion.alpha_raw", Tensor(np.asarray(-2.0, dtype=dtype)))
    return store


def unit_params(store: ParamStore, unit: str) -> UnitParams:
    p = f"enhancer.{unit}"
    return UnitParams(
        stage1=StageParams(store[f"{p}.stage1.wq"], store[f"{p}.stage1.wk"],
                           store[f"{p}.stage1.wv"]),
        stage2=StageParams(store[f"{p}.stage2.wq"], store[f"{p}.stage2.wk"],
                           store[f"{p}.stage2.wv"]),
        out_proj=store[f"{p}.out_proj"],
        queries=store[f"{p}.queries"],
    )


def active_param_names(store: ParamStore, cfg: TrainConfig) -> list[str]:
    """Optimizer update set under the ablation flags: parameters of a
    disabled unit are excluded entirely (no decay, no moments)."""
    names = []
    for name in store.names():
        if name.startswith("enhancer.text.") and not cfg.use_mt:
            continue
        if name.startswith("enhancer.attr.") and not cfg.use_ms:
            continue
        if name.startswith("enhancer.vision.") and not cfg.use_mv:
            continue
        if name == "fusion.alpha_raw" and not cfg.use_ms:
            continue
        if name == "visual.proj" and not (
                cfg.use_mv or (cfg.use_alignment and cfg.use_face)):
            continue
        names.append(name)
    return names


@dataclass
class SampleFeatures:
    """Numpy constants for one sample; everything the forward pass reads."""
    sample_id: str
    gold_id: str
    mention_tokens: np.ndarray   # (l_m, d)
    mention_pooled: np.ndarray   # (1, d)
    text_tokens: np.ndarray      # (l_t, d)
    anp_rows: np.ndarray | None  # (n_s, d)
    objects: np.ndarray | None   # (l, d_obj)
    faces: np.ndarray | None     # (l, d_face); zero rows where absent
    face_mask: np.ndarray | None = None  # (l,) bool; which faces are real


class Featurizer:
    """Caches hashed-token encodings and entity vectors for a fixed config."""

    def __init__(self, cfg: TrainConfig, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self._text_cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self._pooled_cache: dict[str, np.ndarray] = {}

    def _encode(self, text: str) -> tuple[np.ndarray, np.ndarray]:
        hit = self._text_cache.get(text)
        if hit is None:
            enc = encode_text(text, self.cfg.d, self.cfg.encoder_seed, self.dtype)
            hit = (enc.token_matrix, enc.pooled)
            self._text_cache[text] = hit
        return hit

    def sample_features(self, sample: MultimodalSample) -> SampleFeatures:
        tok_m, pooled_m = self._encode(sample.mention.surface)
        tok_t, _ = self._encode(sample.text)

        anp_rows = None
        if sample.anp_vecs is not None and len(sample.anp_vecs) > 0:
            if sample.anp_vecs.shape[1] != self.cfg.d:
                raise DataError(
                    f"sample {sample.sample_id!r}: anp_vecs dim "
                    f"{sample.anp_vecs.shape[1]} != d={self.cfg.d}")
            anp_rows = sample.anp_vecs.astype(self.dtype)
        elif sample.anps:
            anp_rows = np.vstack([self._encode(a)[1] for a in sample.anps])

        objects = faces = None
        if sample.objects:
            objects = np.stack([o.object_vec for o in sample.objects]).astype(self.dtype)
            if objects.shape[1] != self.cfg.d_obj:
                raise DataError(
                    f"sample {sample.sample_id!r}: object dim "
                    f"{objects.shape[1]} != d_obj={self.cfg.d_obj}")
            face_rows = []
            face_mask = []
            for o in sample.objects:
                face_mask.append(o.face_vec is not None)
                if o.face_vec is None:
                    face_rows.append(np.zeros(self.cfg.d_face, dtype=self.dtype))
                else:
                    if o.face_vec.shape[0] != self.cfg.d_face:
                        raise DataError(
                            f"sample {sample.sample_id!r}: face dim "
                            f"{o.face_vec.shape[0]} != d_face={self.cfg.d_face}")
                    face_rows.append(o.face_vec.astype(self.dtype))
            faces = np.stack(face_rows)

        return SampleFeatures(
            sample_id=sample.sample_id,
            gold_id=sample.gold_entity_id,
            mention_tokens=tok_m.astype(self.dtype),
            mention_pooled=pooled_m.astype(self.dtype),
            text_tokens=tok_t.astype(self.dtype),
            anp_rows=anp_rows,
            objects=objects,
            faces=faces,
            face_mask=np.array(face_mask) if objects is not None else None,
        )

    def entity_unit_vecs(self, index: EntityIndex) -> dict[str, np.ndarray]:
        """Unit-normalized (1,d) representation per entity, cached."""
        from .encoders import encode_entity
        out = {}
        for eid in sorted(index.entities):
            vec = self._pooled_cache.get(eid)
            if vec is None:
                vec = encode_entity(index.entities[eid], self.cfg.d,
                                    self.cfg.encoder_seed, self.dtype)
                self._pooled_cache[eid] = vec
            out[eid] = vec
        return out


@dataclass
class ForwardResult:
    g: Tensor
    m_t: Tensor | None
    m_v: Tensor | None
    m_s: Tensor | None


def forward_sample(feats: SampleFeatures, store: ParamStore, cfg: TrainConfig,
                   training: bool, rng: np.random.Generator,
                   dtype=np.float32) -> ForwardResult:
    """One sample through the enabled enhancer units and gated fusion."""
    m_tok = Tensor(feats.mention_tokens)
    m = Tensor(feats.mention_pooled)
    zero_view = lambda: Tensor(np.zeros((1, cfg.d), dtype=dtype))

    m_t = m_v = m_s = None
    if cfg.use_mt:
        m_t = enhance(m_tok, Tensor(feats.text_tokens), unit_params(store, "text"),
                      cfg.heads, cfg.dropout, rng, training)
    if cfg.use_ms:
        if feats.anp_rows is None:
            m_s = zero_view()
        else:
            m_s = enhance(m_tok, Tensor(feats.anp_rows), unit_params(store, "attr"),
                          cfg.heads, cfg.dropout, rng, training)
    if cfg.use_mv:
        if feats.objects is None:
            m_v = zero_view()
        else:
            face_data = feats.faces if cfg.use_face else np.zeros_like(feats.faces)
            v_rows = refine_visual(Tensor(feats.objects), Tensor(face_data),
                                   store["visual.proj"])
            m_v = enhance(m_tok, v_rows, unit_params(store, "vision"),
                          cfg.heads, cfg.dropout, rng, training)

    alpha = sigmoid(store["fusion.alpha_raw"]) if cfg.use_ms else None
    g = fuse(m, m_t, m_v, m_s, store["fusion.w_g"], store["fusion.b_g"],
             alpha if alpha is not None else 0.0,
             cfg.dropout, rng, training)
    return ForwardResult(g=g, m_t=m_t, m_v=m_v, m_s=m_s)


def eval_forward(feats: SampleFeatures, store: ParamStore, cfg: TrainConfig,
                 dtype=np.float32) -> np.ndarray:
    """Joint feature (1,d) with dropout off and no graph recording."""
    with no_grad():
        rng = np.random.default_rng(0)
        return forward_sample(feats, store, cfg, training=False, rng=rng,
                              dtype=dtype).g.data


def _stack_rows(arrays: list[np.ndarray]) -> tuple[np.ndarray, list[int]]:
    offsets = [0]
    for a in arrays:
        offsets.append(offsets[-1] + a.shape[0])
    return np.vstack(arrays), offsets


@dataclass
class BatchViews:
    """Batched forward outputs: fused features plus per-sample view rows."""
    g: Tensor                          # (B, d)
    m_t_rows: list[Tensor | None]
    m_v_rows: list[Tensor | None]      # None where the sample has no objects
    object_rows: Tensor | None         # projected object features, batch-stacked
    face_rows: Tensor | None


def _subset_views(n: int, subset_idx: list[int], out: Tensor) -> list[Tensor | None]:
    """Spread a subset's output rows back to n per-sample slots."""
    rows: list[Tensor | None] = [None] * n
    for j, i in enumerate(subset_idx):
        rows[i] = slice_rows(out, j, j + 1)
    return rows


def forward_batch_views(batch: list[SampleFeatures], store: ParamStore,
                        cfg: TrainConfig, training: bool,
                        rng: np.random.Generator,
                        dtype=np.float32) -> BatchViews:
    """Whole-batch forward pass.

    Per-sample math is identical to `forward_sample`; projections run as
    stacked matmuls across the batch so the large GEMMs dominate.
    """
    from .enhancer import RowBlocks, enhance_many

    n = len(batch)
    m_stack, m_off = _stack_rows([f.mention_tokens for f in batch])
    mp = Tensor(np.vstack([f.mention_pooled for f in batch]))
    zero_row = lambda: Tensor(np.zeros((1, cfg.d), dtype=dtype))

    def subset_blocks(idx):
        stack, off = _stack_rows([batch[i].mention_tokens for i in idx])
        return RowBlocks(Tensor(stack), off)

    m_t_rows: list[Tensor | None] = [None] * n
    m_v_rows: list[Tensor | None] = [None] * n
    m_s_rows: list[Tensor | None] = [None] * n

    if cfg.use_mt:
        t_stack, t_off = _stack_rows([f.text_tokens for f in batch])
        m_t_all = enhance_many(RowBlocks(Tensor(m_stack), m_off),
                               RowBlocks(Tensor(t_stack), t_off),
                               unit_params(store, "text"), cfg.heads,
                               cfg.dropout, rng, training)
        m_t_rows = [slice_rows(m_t_all, i, i + 1) for i in range(n)]

    if cfg.use_ms:
        idx = [i for i, f in enumerate(batch) if f.anp_rows is not None]
        if idx:
            s_stack, s_off = _stack_rows([batch[i].anp_rows for i in idx])
            sub_out = enhance_many(subset_blocks(idx),
                                   RowBlocks(Tensor(s_stack), s_off),
                                   unit_params(store, "attr"), cfg.heads,
                                   cfg.dropout, rng, training)
            m_s_rows = _subset_views(n, idx, sub_out)

    object_rows = face_rows = None
    if cfg.use_mv or (cfg.use_alignment and cfg.use_face):
        idx = [i for i, f in enumerate(batch) if f.objects is not None]
        if idx:
            o_stack, o_off = _stack_rows([batch[i].objects for i in idx])
            f_stack, _ = _stack_rows([batch[i].faces for i in idx])
            if not cfg.use_face:
                f_stack = np.zeros_like(f_stack)
            objs_t, faces_t = Tensor(o_stack), Tensor(f_stack)
            if cfg.use_mv:
                v_all = refine_visual(objs_t, faces_t, store["visual.proj"])
                sub_out = enhance_many(subset_blocks(idx),
                                       RowBlocks(v_all, o_off),
                                       unit_params(store, "vision"), cfg.heads,
                                       cfg.dropout, rng, training)
                m_v_rows = _subset_views(n, idx, sub_out)
            if cfg.use_alignment and cfg.use_face:
                # align only objects that actually carry facial features
                mask = np.concatenate([
                    batch[i].face_mask if batch[i].face_mask is not None
                    else np.ones(batch[i].objects.shape[0], dtype=bool)
                    for i in idx])
                if int(mask.sum()) >= 2:
                    proj = store["visual.proj"]
                    o_sel = Tensor(np.ascontiguousarray(o_stack[mask]))
                    f_sel = Tensor(np.ascontiguousarray(f_stack[mask]))
                    object_rows = matmul(o_sel, slice_rows(proj, 0, cfg.d_obj))
                    face_rows = matmul(f_sel, slice_rows(proj, cfg.d_obj,
                                                         cfg.d_obj + cfg.d_face))

    def assemble(rows, enabled, fallback_zero):
        if not enabled:
            return None
        return concat_rows([r if r is not None else fallback_zero()
                            for r in rows])

    m_t_mat = assemble(m_t_rows, cfg.use_mt, zero_row)
    m_v_mat = assemble(m_v_rows, cfg.use_mv, zero_row)
    m_s_mat = assemble(m_s_rows, cfg.use_ms, zero_row)

    alpha = sigmoid(store["fusion.alpha_raw"]) if cfg.use_ms else 0.0
    g = fuse(mp, m_t_mat, m_v_mat, m_s_mat, store["fusion.w_g"],
             store["fusion.b_g"], alpha, cfg.dropout, rng, training)
    return BatchViews(g=g, m_t_rows=m_t_rows,
                      m_v_rows=m_v_rows if cfg.use_mv else [None] * n,
                      object_rows=object_rows, face_rows=face_rows)


def eval_forward_batch(batch: list[SampleFeatures], store: ParamStore,
                       cfg: TrainConfig, dtype=np.float32) -> np.ndarray:
    """Batched joint features (B, d), dropout off, no graph."""
    with no_grad():
        views = forward_batch_views(batch, store, cfg, training=False,
                                    rng=np.random.default_rng(0), dtype=dtype)
        return views.g.data


def batch_forward(batch: list[SampleFeatures], store: ParamStore,
                  cfg: TrainConfig, training: bool, rng: np.random.Generator,
                  positives: dict[str, np.ndarray],
                  negatives: dict[str, np.ndarray],
                  dtype=np.float32):
    """Forward the whole batch and assemble the training objective.

    `positives` maps sample_id to the gold entity vector, `negatives` to the
    stacked negative vectors (possibly empty).  Returns (loss, parts).
    """
    views = forward_batch_views(batch, store, cfg, training, rng, dtype)
    state = BatchState()
    for i, feats in enumerate(batch):
        has_vision = views.m_v_rows[i] is not None
        state.samples.append(SampleTerms(
            sample_id=feats.sample_id,
            g=slice_rows(views.g, i, i + 1),
            positive=positives[feats.sample_id],
            negatives=negatives.get(feats.sample_id,
                                    np.zeros((0, cfg.d), dtype=dtype)),
            m_t=views.m_t_rows[i],
            m_v=views.m_v_rows[i] if has_vision else None,
        ))
    state.object_rows = views.object_rows
    state.face_rows = views.face_rows
    return total_loss(state, cfg.margin, cfg.beta, cfg.tau,
                      use_alignment=cfg.use_alignment,
                      invert_triplet=cfg.invert_triplet)

"""Dataset records, JSONL loading with validation, synthetic data, splits.

A dataset directory holds `entities.jsonl` and `samples.jsonl`, one JSON
object per line, vectors as plain float arrays.  The loader fails fast
with the offending line number and field.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import tokenize
from .errors import DataError
from .hashing import fnv1a64, FNV_OFFSET
from .retrieval import EntityIndex

log = logging.getLogger(__name__)

ANP_VOCAB = [
    "nice clouds", "white dress", "happy man", "blue sky", "old building",
    "green field", "dark street", "bright lights", "calm water", "red curtain",
]

_SYLLABLES = ["ba", "ke", "li", "mo", "ra", "su", "ta", "ven", "or", "del",
              "fin", "gar", "hel", "is", "jun", "kor", "lam", "ner", "pol", "qui"]

_TEMPLATES = [
    "{m} pictured with {anp} at the {w} gathering near the {w2} side",
    "{m} appears by the {w} hall under {anp} toward the {w2} end",
    "a photo of {m} at the {w} gate with {anp} from the {w2} year",
    "{m} and others at the {w} ceremony, {anp} behind the {w2} stand",
]

_PLACE_WORDS = ["north", "harbor", "city", "summer", "winter", "old", "grand", "river"]


@dataclass
class EntityRecord:
    entity_id: str
    name: str
    type: str | None = None
    description_text: str | None = None
    description_vec: np.ndarray | None = None


@dataclass
class MentionSpan:
    surface: str
    span: tuple[int, int] | None = None


@dataclass
class ObjectFeature:
    object_vec: np.ndarray
    face_vec: np.ndarray | None = None


@dataclass
class MultimodalSample:
    sample_id: str
    text: str
    mention: MentionSpan
    gold_entity_id: str
    objects: list[ObjectFeature] = field(default_factory=list)
    anps: list[str] = field(default_factory=list)
    anp_vecs: np.ndarray | None = None
    provided_candidates: list[str] | None = None
    mention_type: str | None = None


@dataclass
class DatasetStats:
    n_samples: int
    n_entities: int
    n_mentions: int
    mean_text_len: float
    dims: dict[str, int | None]


def _req(obj: dict, key: str, where: str):
    if key not in obj:
        raise DataError(f"{where}: missing field {key!r}")
    return obj[key]


def _vec(value, where: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=np.float32)
    except (TypeError, ValueError) as e:
        raise DataError(f"{where}: not a numeric vector") from e
    if arr.ndim != 1:
        raise DataError(f"{where}: expected a flat vector, got shape {arr.shape}")
    return arr


def _iter_jsonl(path: Path):
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path.name} line {lineno}: invalid JSON ({e})") from e


def load_entities(path: Path) -> list[EntityRecord]:
    records = []
    seen: set[str] = set()
    for lineno, obj in _iter_jsonl(path):
        where = f"{path.name} line {lineno}"
        eid = _req(obj, "entity_id", where)
        if eid in seen:
            raise DataError(f"{where}: duplicate entity_id {eid!r}")
        seen.add(eid)
        vec = obj.get("description_vec")
        rec = EntityRecord(
            entity_id=eid,
            name=_req(obj, "name", where),
            type=obj.get("type"),
            description_text=obj.get("description_text"),
            description_vec=_vec(vec, f"{where}: field 'description_vec'")
            if vec is not None else None,
        )
        if rec.description_text is None and rec.description_vec is None:
            raise DataError(
                f"{where}: field 'description_text'/'description_vec': "
                f"entity {eid!r} needs at least one")
        records.append(rec)
    return records


def load_samples(path: Path, entity_ids: set[str]) -> list[MultimodalSample]:
    samples = []
    seen: set[str] = set()
    d_obj = d_face = d_anp = None
    for lineno, obj in _iter_jsonl(path):
        where = f"{path.name} line {lineno}"
        sid = _req(obj, "sample_id", where)
        if sid in seen:
            raise DataError(f"{where}: duplicate sample_id {sid!r}")
        seen.add(sid)
        gold = _req(obj, "gold_entity_id", where)
        if gold not in entity_ids:
            raise DataError(
                f"{where}: field 'gold_entity_id': sample {sid!r} references "
                f"unknown entity {gold!r}")
        mention_obj = _req(obj, "mention", where)
        if not isinstance(mention_obj, dict) or "surface" not in mention_obj:
            raise DataError(f"{where}: field 'mention': needs a 'surface' string")
        span = mention_obj.get("span")
        mention = MentionSpan(surface=mention_obj["surface"],
                              span=tuple(span) if span else None)

        objects = []
        for k, o in enumerate(obj.get("objects", [])):
            ov = _vec(_req(o, "object_vec", f"{where}: objects[{k}]"),
                      f"{where}: objects[{k}].object_vec")
            if d_obj is None:
                d_obj = ov.shape[0]
            elif ov.shape[0] != d_obj:
                raise DataError(
                    f"{where}: objects[{k}].object_vec: dim {ov.shape[0]} != {d_obj}")
            fv = o.get("face_vec")
            if fv is not None:
                fv = _vec(fv, f"{where}: objects[{k}].face_vec")
                if d_face is None:
                    d_face = fv.shape[0]
                elif fv.shape[0] != d_face:
                    raise DataError(
                        f"{where}: objects[{k}].face_vec: dim {fv.shape[0]} != {d_face}")
            objects.append(ObjectFeature(object_vec=ov, face_vec=fv))

        anp_vecs = obj.get("anp_vecs")
        if anp_vecs is not None:
            rows = [_vec(v, f"{where}: anp_vecs[{k}]") for k, v in enumerate(anp_vecs)]
            if rows:
                if d_anp is None:
                    d_anp = rows[0].shape[0]
                if any(r.shape[0] != d_anp for r in rows):
                    raise DataError(f"{where}: anp_vecs rows have mixed dims")
                anp_vecs = np.stack(rows)
            else:
                anp_vecs = None

        samples.append(MultimodalSample(
            sample_id=sid,
            text=_req(obj, "text", where),
            mention=mention,
            gold_entity_id=gold,
            objects=objects,
            anps=list(obj.get("anps", [])),
            anp_vecs=anp_vecs,
            provided_candidates=obj.get("provided_candidates"),
            mention_type=obj.get("mention_type"),
        ))
    return samples


def load_dataset(dir_path: str | Path) -> tuple[list[MultimodalSample], EntityIndex, DatasetStats]:
    """Load and validate a dataset directory; logs corpus statistics."""
    root = Path(dir_path)
    epath, spath = root / "entities.jsonl", root / "samples.jsonl"
    for p in (epath, spath):
        if not p.is_file():
            raise DataError(f"dataset file missing: {p}")
    entities = load_entities(epath)
    samples = load_samples(spath, {e.entity_id for e in entities})
    index = EntityIndex.build(entities)

    lens = [len(tokenize(s.text).tokens) - 2 for s in samples]
    dims = {
        "d": next((e.description_vec.shape[0] for e in entities
                   if e.description_vec is not None), None),
        "d_obj": next((o.object_vec.shape[0] for s in samples for o in s.objects), None),
        "d_face": next((o.face_vec.shape[0] for s in samples for o in s.objects
                        if o.face_vec is not None), None),
    }
    stats = DatasetStats(
        n_samples=len(samples),
        n_entities=len(entities),
        n_mentions=len(samples),
        mean_text_len=float(np.mean(lens)) if lens else 0.0,
        dims=dims,
    )
    log.info("dataset %s: %d samples, %d entities, %d mentions, "
             "mean text length %.1f", root, stats.n_samples, stats.n_entities,
             stats.n_mentions, stats.mean_text_len)
    return samples, index, stats


def dataset_hash(dir_path: str | Path) -> str:
    root = Path(dir_path)
    h = FNV_OFFSET
    for name in ("entities.jsonl", "samples.jsonl"):
        p = root / name
        if p.is_file():
            h = fnv1a64(p.read_bytes(), state=h)
    return f"{h:016x}"


def split_dataset(samples: list[MultimodalSample], seed: int,
                  train_frac: float = 0.8, dev_frac: float = 0.1
                  ) -> tuple[list[MultimodalSample], list[MultimodalSample], list[MultimodalSample]]:
    """Deterministic train/dev/test split by seeded shuffle of sample ids."""
    order = sorted(range(len(samples)), key=lambda i: samples[i].sample_id)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(samples))
    shuffled = [samples[order[i]] for i in perm]
    n = len(samples)
    n_train = int(round(n * train_frac))
    n_dev = min(int(round(n * dev_frac)), n - n_train)
    return (shuffled[:n_train], shuffled[n_train:n_train + n_dev],
            shuffled[n_train + n_dev:])


def _f32list(arr: np.ndarray) -> list[float]:
    return [float(x) for x in np.asarray(arr, dtype=np.float32)]


def _make_name(rng: np.random.Generator, used: set[str]) -> str:
    while True:
        first = "".join(rng.choice(_SYLLABLES) for _ in range(2))
        second = "".join(rng.choice(_SYLLABLES) for _ in range(int(rng.integers(2, 4))))
        name = f"{first} {second}"
        if name not in used:
            used.add(name)
            return name


def synth_generate(n_entities: int, n_samples: int, noise: float,
                   n_distractors: int, seed: int, out_dir: str | Path,
                   d: int = 512, d_obj: int = 768, d_face: int = 512) -> Path:
    """Write a synthetic dataset whose gold-signal object vector is a fixed
    projection of the gold entity's description vector plus Gaussian noise.

    Entities come in same-name pairs (the classic ambiguous-mention setup),
    and the mention is that shared name, so text alone can at best narrow a
    query to the pair; the object signal decides the member.  The gold
    object's face vector is a second projected view of the entity vector.
    Distractor objects come face-less from a fixed background pool (scenes
    recur across images, like the scene-attribute vocabulary).  Gold
    entities are drawn from a pair-aligned pool of roughly n_samples/4
    entities, so every linked entity recurs across several samples while
    the knowledge base itself stays n_entities wide.  Byte-identical output
    per seed.
    """
    if n_entities < 2:
        raise DataError(f"need at least 2 entities; got {n_entities}")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    # feature scale ~3: extractor embeddings are not unit-norm, and the
    # engine's attention value paths start at 1/sqrt(d) attenuation
    feat_scale = 3.0
    proj_obj = rng.normal(0.0, feat_scale / np.sqrt(d), size=(d, d_obj))
    proj_face = rng.normal(0.0, feat_scale / np.sqrt(d), size=(d, d_face))

    used_names: set[str] = set()
    names, vecs, types = [], [], []
    type_cycle = ["person", "location", "organization"]
    for i in range(n_entities):
        if i % 2 == 0:
            shared = _make_name(rng, used_names)
        names.append(shared)
        v = rng.normal(0.0, 1.0, size=d)
        vecs.append(v / np.linalg.norm(v))
        types.append(type_cycle[(i // 2) % len(type_cycle)])

    # linked entities: a pair-aligned pool sized so each member recurs
    pool = min(n_entities, max(2, 2 * ((n_samples + 7) // 8)))
    n_background = 32
    bg_objects = rng.normal(0.0, feat_scale / np.sqrt(d), size=(n_background, d_obj))

    ent_lines = []
    for i in range(n_entities):
        ent_lines.append(json.dumps({
            "entity_id": f"e{i:05d}",
            "name": names[i],
            "type": types[i],
            "description_vec": _f32list(vecs[i]),
        }, sort_keys=True))
    (root / "entities.jsonl").write_text("\n".join(ent_lines) + "\n", encoding="utf-8")

    samp_lines = []
    for j in range(n_samples):
        gold = int(rng.integers(0, pool))
        psi = vecs[gold]
        mention = names[gold]
        pair = gold // 2
        anps = [ANP_VOCAB[int(k)] for k in
                rng.choice(len(ANP_VOCAB), size=int(rng.integers(1, 4)), replace=False)]
        # sentence wording comes from a small shared pool, independent of the
        # entity: surface text narrows a query to the name pair, never to
        # the member; background objects recur per pair (shared contexts)
        template = _TEMPLATES[int(rng.integers(0, len(_TEMPLATES)))]
        w, w2 = (str(x) for x in rng.choice(_PLACE_WORDS, size=2, replace=False))
        text = template.format(m=mention, anp=anps[0], w=w, w2=w2)

        gold_obj = psi @ proj_obj + rng.normal(0.0, noise / np.sqrt(d_obj), size=d_obj)
        gold_face = psi @ proj_face + rng.normal(0.0, noise / np.sqrt(d_face), size=d_face)
        objects = [{"object_vec": _f32list(gold_obj), "face_vec": _f32list(gold_face)}]
        if n_distractors > 0:
            bg_rng = np.random.default_rng([seed, 7, pair])
            picks = bg_rng.choice(n_background, size=min(n_distractors, n_background),
                                  replace=False)
            for k in picks:
                # background objects are non-person: no facial features
                objects.append({
                    "object_vec": _f32list(bg_objects[int(k)]),
                    "face_vec": None,
                })
        perm = rng.permutation(len(objects))
        objects = [objects[int(k)] for k in perm]

        samp_lines.append(json.dumps({
            "sample_id": f"s{j:05d}",
            "text": text,
            "mention": {"surface": mention},
            "gold_entity_id": f"e{gold:05d}",
            "objects": objects,
            "anps": anps,
        }, sort_keys=True))
    (root / "samples.jsonl").write_text("\n".join(samp_lines) + "\n", encoding="utf-8")

    meta = {"n_entities": n_entities, "n_samples": n_samples, "noise": noise,
            "n_distractors": n_distractors, "seed": seed, "gold_pool": pool,
            "d": d, "d_obj": d_obj, "d_face": d_face}
    (root / "synth_meta.json").write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return root

"""Deterministic text featurization.

Sentences, mentions, entity descriptions, scene-attribute strings and
face-attribute prompts all go through the same path: tokenize with start/end
markers, embed each token with a seeded hash embedding, mean-pool and
normalize.  Datasets may instead ship precomputed vectors, which pass
through unchanged apart from normalization.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .hashing import fnv1a64, uniform_pm1

START_TOKEN = "<startoftext>"
END_TOKEN = "<endoftext>"

_WORD_RE = re.compile(r"[^\W_]+", re.UNICODE)

FACE_ATTR_ORDER = ("gender", "race", "age", "emotion")


@dataclass
class TokenSeq:
    tokens: list[str]
    source_text: str


@dataclass
class EncodedText:
    token_matrix: np.ndarray  # (len(tokens), d)
    pooled: np.ndarray        # (1, d), unit norm


def tokenize(text: str) -> TokenSeq:
    """Case-folded, NFC-normalized tokens split on non-alphanumeric runs,
    wrapped in start/end markers."""
    folded = unicodedata.normalize("NFC", text).casefold()
    words = _WORD_RE.findall(folded)
    return TokenSeq(tokens=[START_TOKEN, *words, END_TOKEN], source_text=text)


def hash_embed(token: str, dim: int, seed: int, dtype=np.float32) -> np.ndarray:
    """Deterministic d-vector for a token.

    FNV-1a over (seed bytes || token bytes) seeds a splitmix64 stream whose
    draws land in [-1, 1] and are scaled by 1/sqrt(d).  Identical across
    platforms and runs.
    """
    if dim < 1:
        raise DataError(f"embedding dim must be >= 1; got {dim}")
    h = fnv1a64(seed.to_bytes(8, "little") + token.encode("utf-8"))
    vec = uniform_pm1(h, dim) / np.sqrt(dim)
    return vec.astype(dtype)


def encode_text(text: str, dim: int, seed: int, dtype=np.float32) -> EncodedText:
    """Token matrix (one hash embedding per token, markers included) plus
    the normalized mean-pooled row."""
    seq = tokenize(text)
    rows = np.stack([hash_embed(tok, dim, seed, dtype) for tok in seq.tokens])
    pooled = rows.mean(axis=0, keepdims=True)
    norm = np.linalg.norm(pooled)
    pooled = pooled / (norm + 1e-12)
    return EncodedText(token_matrix=rows, pooled=pooled.astype(dtype))


def encode_entity(entity, dim: int, seed: int, dtype=np.float32) -> np.ndarray:
    """Entity representation vector (1, d), unit norm.

    Precomputed description vectors pass through (validated and
    normalized); otherwise the description text is encoded.
    """
    vec = getattr(entity, "description_vec", None)
    if vec is not None:
        arr = np.asarray(vec, dtype=dtype).reshape(1, -1)
        if arr.shape[1] != dim:
            raise DataError(
                f"entity {entity.entity_id!r}: description vector has dim "
                f"{arr.shape[1]}, expected {dim}")
        return (arr / (np.linalg.norm(arr) + 1e-12)).astype(dtype)
    text = getattr(entity, "description_text", None)
    if text is None:
        raise DataError(
            f"entity {entity.entity_id!r} has neither description text nor vector")
    return encode_text(text, dim, seed, dtype).pooled


def build_face_prompt(mention: str, attrs: dict[str, str]) -> str:
    """Canonical face-attribute prompt: 'mention, key: value, ...' with keys
    in the fixed order gender, race, age, emotion."""
    parts = [mention]
    for key in FACE_ATTR_ORDER:
        if key in attrs:
            parts.append(f"{key}: {attrs[key]}")
    return ", ".join(parts)

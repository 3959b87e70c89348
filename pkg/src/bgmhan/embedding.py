"""Hierarchical field embedding: text -> fixed ``(s, w, d)`` block.

A field is split on '.', each of the first ``s`` non-empty sentences is
tokenized and cut or zero-padded to ``w`` tokens, and missing sentences
are zero-padded.  Token ids and masks are computed once per profile
(:func:`encode_field`); the table lookup is a graph op so the table trains
end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, embedding, parameter

FIELD_ORDER = ("gcea", "gceo", "leadership", "piq")


def split_sentences(field: str) -> list[str]:
    parts = (p.strip() for p in field.split("."))
    return [p for p in parts if p]


class EmbeddingTable:
    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(dim)
        self.matrix = parameter(rng.uniform(-bound, bound, size=(vocab_size, dim)), name="embedding")

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


@dataclass
class EncodedField:
    """Token ids of one field laid out on the ``(s, w)`` grid."""

    ids: np.ndarray  # int64 (s, w); padding slots hold 0
    word_mask: np.ndarray  # bool (s, w)
    sentence_mask: np.ndarray  # bool (s,)


@dataclass
class FieldTensor:
    block: Tensor  # (s, w, d), zero at padded slots
    sentence_mask: np.ndarray
    word_mask: np.ndarray


def encode_field(field: str, tokenizer, s: int, w: int) -> EncodedField:
    ids = np.zeros((s, w), dtype=np.int64)
    word_mask = np.zeros((s, w), dtype=bool)
    for i, sentence in enumerate(split_sentences(field)[:s]):
        tokens = tokenizer.encode(sentence)[:w]
        ids[i, : len(tokens)] = tokens
        word_mask[i, : len(tokens)] = True
    # a sentence whose tokenization is empty still counts as padding
    sentence_mask = word_mask.any(axis=1)
    return EncodedField(ids, word_mask, sentence_mask)


def lookup(table: EmbeddingTable, ids: np.ndarray, word_mask: np.ndarray) -> Tensor:
    """Embed ``ids`` and zero the padded slots; works on any leading shape."""
    return embedding(table.matrix, ids) * word_mask[..., None].astype(np.float64)


def embed_field(field: str, tokenizer, table: EmbeddingTable, s: int, w: int, d: int) -> FieldTensor:
    if table.dim != d:
        raise ValueError(f"embedding table has dim {table.dim}, expected {d}")
    if table.vocab_size != tokenizer.size:
        raise ValueError(
            f"embedding table has {table.vocab_size} rows, tokenizer has {tokenizer.size} symbols"
        )
    enc = encode_field(field, tokenizer, s, w)
    return FieldTensor(lookup(table, enc.ids, enc.word_mask), enc.sentence_mask, enc.word_mask)


def encode_profile(profile, tokenizer, s: int, w: int) -> list[EncodedField]:
    return [encode_field(getattr(profile, name), tokenizer, s, w) for name in FIELD_ORDER]


def embed_profile(profile, tokenizer, table: EmbeddingTable, s: int, w: int, d: int) -> list[FieldTensor]:
    """One block per field, in the fixed order GCEA, GCEO, Leadership, PIQ."""
    return [embed_field(getattr(profile, name), tokenizer, table, s, w, d) for name in FIELD_ORDER]


@dataclass
class EncodedBatch:
    ids: np.ndarray  # (B, 4, s, w)
    word_mask: np.ndarray  # (B, 4, s, w)
    sentence_mask: np.ndarray  # (B, 4, s)
    labels: np.ndarray  # (B,) float

    def __len__(self) -> int:
        return self.ids.shape[0]

    def subset(self, index) -> "EncodedBatch":
        return EncodedBatch(self.ids[index], self.word_mask[index], self.sentence_mask[index], self.labels[index])


def encode_profiles(profiles, tokenizer, s: int, w: int) -> EncodedBatch:
    n = len(profiles)
    ids = np.zeros((n, len(FIELD_ORDER), s, w), dtype=np.int64)
    wm = np.zeros((n, len(FIELD_ORDER), s, w), dtype=bool)
    sm = np.zeros((n, len(FIELD_ORDER), s), dtype=bool)
    for i, p in enumerate(profiles):
        for j, enc in enumerate(encode_profile(p, tokenizer, s, w)):
            ids[i, j], wm[i, j], sm[i, j] = enc.ids, enc.word_mask, enc.sentence_mask
    labels = np.array([p.label for p in profiles], dtype=np.float64)
    return EncodedBatch(ids, wm, sm, labels)

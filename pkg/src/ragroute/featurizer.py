"""Hashed character n-gram text features.

Text is lowercased, wrapped in a boundary character, split into character
n-grams, and each n-gram is hashed (FNV-1a 64) into one of d_feat slots.
The resulting count vector is L2-normalized. This is a deterministic,
dependency-free stand-in for a pretrained sentence encoder: good enough
to expose surface-level query regularities to a linear layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .rng import fnv1a_64


@dataclass(frozen=True)
class FeaturizerConfig:
    d_feat: int = 2048
    ngram_n: int = 3
    boundary_char: str = "#"

    def __post_init__(self):
        if self.d_feat < 64:
            raise ValidationError(f"d_feat must be >= 64, got {self.d_feat}")
        if self.ngram_n < 2:
            raise ValidationError(f"ngram_n must be >= 2, got {self.ngram_n}")
        if len(self.boundary_char) != 1:
            raise ValidationError("boundary_char must be a single character")


@dataclass(frozen=True)
class SparseVec:
    """L2-normalized sparse vector: sorted unique indices with their values."""

    indices: np.ndarray
    values: np.ndarray
    dim: int

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim, dtype=np.float64)
        out[self.indices] = self.values
        return out


def ngram_slot(cfg: FeaturizerConfig, gram: str) -> int:
    """Hash slot of one n-gram: FNV-1a 64 of its UTF-8 bytes, mod d_feat."""
    return fnv1a_64(gram.encode("utf-8")) % cfg.d_feat


def featurize(cfg: FeaturizerConfig, text: str) -> SparseVec:
    """Map text to its hashed n-gram feature vector.

    Deterministic; raises ValidationError on text that is empty (after
    trimming) or too short to produce a single n-gram.
    """
    t = text.strip().lower()
    if not t:
        raise ValidationError("cannot featurize empty text")
    wrapped = cfg.boundary_char + t + cfg.boundary_char
    n = cfg.ngram_n
    if len(wrapped) < n:
        raise ValidationError(f"text too short for {n}-grams: {text!r}")
    counts: dict[int, float] = {}
    for i in range(len(wrapped) - n + 1):
        slot = ngram_slot(cfg, wrapped[i : i + n])
        counts[slot] = counts.get(slot, 0.0) + 1.0
    indices = np.array(sorted(counts), dtype=np.int64)
    values = np.array([counts[i] for i in indices], dtype=np.float64)
    values /= np.linalg.norm(values)
    return SparseVec(indices=indices, values=values, dim=cfg.d_feat)

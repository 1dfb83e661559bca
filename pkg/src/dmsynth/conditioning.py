"""Conditioning vectors for the denoiser.

A condition is the concatenation ``[class_part, visual_part]``. The class
part is a learned per-class token (or the learned null token for the
unconditional branch of classifier-free guidance); the visual part is the
mean encoder feature of a random handful of same-class examples, or zeros.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class ConditionTable:
    num_classes: int
    class_embeddings: np.ndarray  # (num_classes, embed_dim)
    null_embedding: np.ndarray  # (embed_dim,)
    visual_dim: int

    def __post_init__(self):
        if self.class_embeddings.shape[0] != self.num_classes:
            raise ValueError("class_embeddings must have one row per class")
        if self.null_embedding.shape != (self.class_embeddings.shape[1],):
            raise ValueError("null_embedding must match the class embedding width")
        if np.shares_memory(self.null_embedding, self.class_embeddings):
            raise ValueError("null_embedding must not alias class_embeddings")
        if not (np.all(np.isfinite(self.class_embeddings)) and np.all(np.isfinite(self.null_embedding))):
            raise ValueError("condition embeddings must be finite")

    @property
    def embed_dim(self) -> int:
        return self.class_embeddings.shape[1]

    @property
    def cond_dim(self) -> int:
        return self.embed_dim + self.visual_dim

    def copy(self) -> "ConditionTable":
        return ConditionTable(
            self.num_classes, self.class_embeddings.copy(), self.null_embedding.copy(), self.visual_dim
        )


@dataclass(frozen=True)
class Condition:
    class_part: np.ndarray
    visual_part: np.ndarray
    is_null: bool = False

    def vector(self) -> np.ndarray:
        return np.concatenate([self.class_part, self.visual_part])


def init_condition_table(num_classes: int, embed_dim: int, visual_dim: int, seed: int) -> ConditionTable:
    rng = np.random.default_rng(seed)
    emb = rng.standard_normal((num_classes + 1, embed_dim))
    return ConditionTable(num_classes, emb[:num_classes].copy(), emb[num_classes].copy(), visual_dim)


def build_condition(table: ConditionTable, label: int, visual: np.ndarray | None = None) -> Condition:
    if not 0 <= int(label) < table.num_classes:
        raise ValueError(f"label {label} out of range [0, {table.num_classes})")
    if visual is None:
        vis = np.zeros(table.visual_dim)
    else:
        vis = np.asarray(visual, dtype=float)
        if vis.shape != (table.visual_dim,):
            raise ValueError(f"visual part must have shape ({table.visual_dim},), got {vis.shape}")
    return Condition(table.class_embeddings[int(label)].copy(), vis.copy(), False)


def null_condition(table: ConditionTable) -> Condition:
    return Condition(table.null_embedding.copy(), np.zeros(table.visual_dim), True)


def drop_condition(cond: Condition, p: float, rng: np.random.Generator, table: ConditionTable) -> Condition:
    """Replace ``cond`` by the null condition with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"drop probability must lie in [0, 1], got {p}")
    if rng.random() < p:
        return null_condition(table)
    return cond


def condition_matrix(
    table: ConditionTable,
    labels: np.ndarray,
    visual: np.ndarray | None = None,
    null_mask: np.ndarray | None = None,
) -> np.ndarray:
    """Stacked condition vectors for a batch, shape (n, cond_dim).

    Rows flagged in ``null_mask`` get the null token and a zero visual slot.
    """
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 0 or labels.max() >= table.num_classes):
        raise ValueError("label out of range")
    n = labels.shape[0]
    out = np.zeros((n, table.cond_dim))
    out[:, : table.embed_dim] = table.class_embeddings[labels]
    if visual is not None:
        out[:, table.embed_dim:] = visual
    if null_mask is not None:
        out[null_mask, : table.embed_dim] = table.null_embedding
        out[null_mask, table.embed_dim:] = 0.0
    return out


def null_matrix(table: ConditionTable, n: int) -> np.ndarray:
    out = np.zeros((n, table.cond_dim))
    out[:, : table.embed_dim] = table.null_embedding
    return out


def drop_mask(n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"drop probability must lie in [0, 1], got {p}")
    return rng.random(n) < p


def embedding_grads(
    table: ConditionTable, labels: np.ndarray, null_mask: np.ndarray, cond_grad: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Route gradients w.r.t. condition rows back onto the embedding table."""
    g = cond_grad[:, : table.embed_dim]
    keep = ~null_mask
    g_cls = np.zeros_like(table.class_embeddings)
    np.add.at(g_cls, labels[keep], g[keep])
    g_null = g[null_mask].sum(axis=0) if null_mask.any() else np.zeros(table.embed_dim)
    return g_cls, g_null


def _canonical_order(x: np.ndarray) -> np.ndarray:
    return x[np.lexsort(x.T[::-1])]


def visual_guidance(
    encoder: Callable[[np.ndarray], np.ndarray] | None,
    class_samples: np.ndarray,
    m: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Mean encoder feature over ``min(m, len(class_samples))`` samples drawn
    without replacement. ``encoder=None`` means the identity map.

    Selected samples are put in lexicographic order before encoding, so the
    result does not depend on the order of ``class_samples`` when every
    sample is used.
    """
    x = np.asarray(class_samples, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("visual guidance needs a nonempty (n, d) array of class samples")
    if m < 1:
        raise ValueError("m must be >= 1")
    n = x.shape[0]
    if m < n:
        x = x[rng.choice(n, size=m, replace=False)]
    x = _canonical_order(x)
    feats = x if encoder is None else encoder(x)
    return feats.mean(axis=0)

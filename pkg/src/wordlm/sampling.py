"""Per-batch output-vocabulary sampling and exact cosine nearest neighbors.

Each training batch scores its masked positions against a restricted
vocabulary: the five specials, a uniform without-replacement sample of
non-special ids, every word present in the batch, and (when a neighbor index
is supplied) the top-k cosine neighbors of each masked target word.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .vocab import NUM_SPECIALS


class BatchVocab:
    """Sorted global word ids with the inverse global->local map."""

    def __init__(self, global_ids):
        ids = np.unique(np.asarray(global_ids, dtype=np.int64))
        self.global_ids = ids

    def __len__(self) -> int:
        return int(self.global_ids.shape[0])

    @property
    def local_of(self) -> dict[int, int]:
        return {int(g): i for i, g in enumerate(self.global_ids)}

    def __contains__(self, global_id) -> bool:
        i = np.searchsorted(self.global_ids, global_id)
        return i < len(self.global_ids) and self.global_ids[i] == global_id


def sample_batch_vocab(
    batch_word_ids,
    masked_target_ids,
    vocab_size: int,
    sample_size: int = 30_000,
    neighbor_index: "NeighborIndex | None" = None,
    k: int = 10,
    rng: np.random.Generator | None = None,
) -> BatchVocab:
    """Specials + uniform sample + batch words (+ target neighbors)."""
    if sample_size < 1:
        raise ContractError(f"sample_size must be >= 1, got {sample_size}")
    if rng is None:
        rng = np.random.default_rng()
    batch_word_ids = np.asarray(sorted(batch_word_ids), dtype=np.int64)
    masked_target_ids = np.asarray(sorted(masked_target_ids), dtype=np.int64)

    n_non_special = vocab_size - NUM_SPECIALS
    if sample_size >= n_non_special:
        return BatchVocab(np.arange(vocab_size, dtype=np.int64))

    sampled = rng.choice(n_non_special, size=sample_size, replace=False) + NUM_SPECIALS
    parts = [
        np.arange(NUM_SPECIALS, dtype=np.int64),
        sampled.astype(np.int64),
        batch_word_ids,
        masked_target_ids,
    ]
    if neighbor_index is not None and masked_target_ids.size:
        parts.append(neighbor_index.neighbors_of_many(masked_target_ids, k=k))
    return BatchVocab(np.concatenate(parts))


def remap_targets(global_targets, bv: BatchVocab) -> np.ndarray:
    """Local indices such that bv.global_ids[local] == global."""
    targets = np.asarray(global_targets, dtype=np.int64)
    local = np.searchsorted(bv.global_ids, targets)
    bad = (local >= len(bv.global_ids)) | (bv.global_ids[np.minimum(local, len(bv.global_ids) - 1)] != targets)
    if bad.any():
        missing = targets[bad][:5].tolist()
        raise ContractError(f"targets absent from batch vocabulary (sampler bug): {missing}")
    return local


class NeighborIndex:
    """Exact cosine-similarity search over an embedding table.

    Zero-norm rows never appear as neighbors; querying one is an error. Ties
    in similarity break toward the lower word id.
    """

    def __init__(self, embeddings):
        emb = np.asarray(embeddings, dtype=np.float32)
        if emb.ndim != 2:
            raise ContractError(f"embedding table must be 2-D, got shape {emb.shape}")
        norms = np.linalg.norm(emb.astype(np.float64), axis=1)
        self._zero = norms == 0.0
        safe = np.where(self._zero, 1.0, norms)
        self._unit = (emb.astype(np.float64) / safe[:, None]).astype(np.float32)
        self.size = emb.shape[0]

    def nearest_words(self, word_id: int, k: int = 10) -> np.ndarray:
        """The k ids most cosine-similar to word_id, excluding word_id."""
        if not 0 <= word_id < self.size:
            raise IndexError(f"word id {word_id} outside [0, {self.size})")
        if k >= self.size:
            raise ContractError(f"k={k} must be smaller than the vocabulary ({self.size})")
        if self._zero[word_id]:
            raise ContractError(f"word id {word_id} has a zero-norm embedding")
        sims = self._unit @ self._unit[word_id]
        sims = sims.astype(np.float64)
        sims[self._zero] = -np.inf
        sims[word_id] = -np.inf
        order = np.argsort(-sims, kind="stable")
        finite = order[np.isfinite(sims[order])]
        return finite[:k].astype(np.int64)

    def neighbors_of_many(self, word_ids, k: int = 10) -> np.ndarray:
        chunks = [self.nearest_words(int(w), k=k) for w in np.unique(word_ids)]
        if not chunks:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(chunks)

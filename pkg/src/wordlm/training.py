"""MLM masking, restricted-softmax loss, projection pretraining, train loop.

Every random decision flows from (seed, stream name, step), so a run is fully
determined by its seed and config, and training can resume from a checkpoint
without replaying earlier steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .model import WordBertModel
from .optim import Adam
from .sampling import BatchVocab, NeighborIndex, remap_targets, sample_batch_vocab
from .seeding import substream
from .tensor import Tensor
from .vocab import MASK_ID, NUM_SPECIALS, EncodedSequence, WordVocab, encode, segment_words


@dataclass
class MaskingPolicy:
    """Selection ratio and the [MASK]/random/keep corruption split."""

    mask_ratio: float = 0.15
    replace_mask: float = 0.8
    replace_random: float = 0.1
    keep_original: float = 0.1

    def validate(self):
        # ratio 1.0 admitted: the mask-everything policy is a supported degenerate case
        if not 0.0 < self.mask_ratio <= 1.0:
            raise ContractError(f"mask_ratio {self.mask_ratio} outside (0, 1]")
        total = self.replace_mask + self.replace_random + self.keep_original
        if abs(total - 1.0) > 1e-6:
            raise ContractError(f"corruption fractions sum to {total}, expected 1")


class MaskedBatch:
    """Corrupted inputs plus the positions and gold ids of every target."""

    def __init__(self, input_ids, positions_per_seq, target_global_ids):
        self.input_ids = np.asarray(input_ids, dtype=np.int64)
        self.positions_per_seq = [np.asarray(p, dtype=np.int64) for p in positions_per_seq]
        self.target_global_ids = np.asarray(target_global_ids, dtype=np.int64)

    @property
    def target_positions(self) -> list[tuple[int, int]]:
        return [
            (b, int(p))
            for b, positions in enumerate(self.positions_per_seq)
            for p in positions
        ]

    @property
    def num_targets(self) -> int:
        return int(self.target_global_ids.shape[0])

    def attention_masks(self) -> np.ndarray:
        return (self.input_ids != 0).astype(np.int64)


def apply_masking(
    batch: list[EncodedSequence],
    policy: MaskingPolicy,
    rng: np.random.Generator,
    vocab_size: int,
) -> MaskedBatch:
    """Select real-word positions at mask_ratio (min one per maskable sequence)
    and corrupt them per the policy, recording the original ids as targets."""
    if not batch:
        raise ContractError("apply_masking requires a nonempty batch")
    policy.validate()
    lengths = {seq.length for seq in batch}
    if len(lengths) != 1:
        raise ContractError(f"batch sequences must share one length, got {sorted(lengths)}")
    input_ids = np.stack([seq.ids for seq in batch]).astype(np.int64)
    positions_per_seq = []
    targets = []
    for b in range(input_ids.shape[0]):
        ids = input_ids[b]
        maskable = np.where(ids >= NUM_SPECIALS)[0]
        if maskable.size == 0:
            positions_per_seq.append(np.empty(0, dtype=np.int64))
            continue
        draws = rng.random(maskable.size)
        selected = maskable[draws < policy.mask_ratio]
        if selected.size == 0:
            selected = maskable[[rng.integers(0, maskable.size)]]
        positions_per_seq.append(selected)
        for pos in selected:
            targets.append(int(ids[pos]))
            u = rng.random()
            if u < policy.replace_mask:
                ids[pos] = MASK_ID
            elif u < policy.replace_mask + policy.replace_random:
                ids[pos] = rng.integers(NUM_SPECIALS, vocab_size)
            # else: keep the original id
    return MaskedBatch(input_ids, positions_per_seq, targets)


def mlm_loss(
    model: WordBertModel,
    masked: MaskedBatch,
    bv: BatchVocab,
    rng=None,
    training: bool = False,
) -> Tensor:
    """Mean cross-entropy over all masked positions, restricted to bv."""
    if masked.num_targets == 0:
        raise ContractError("masked batch contains no targets")
    local_targets = remap_targets(masked.target_global_ids, bv)
    hidden_flat = model.encode_batch(
        masked.input_ids, masked.attention_masks(), rng=rng, training=training
    )
    t_len = masked.input_ids.shape[1]
    flat_positions = np.concatenate(
        [pos + b * t_len for b, pos in enumerate(masked.positions_per_seq) if pos.size]
    )
    picked = T.gather_rows(hidden_flat, flat_positions)
    logits = model.mlm_logits(picked, bv)
    return T.mean(T.cross_entropy_rows(logits, local_targets))


def mlm_loss_full_vocab(model, masked, rng=None, training=False) -> Tensor:
    """Unrestricted full-softmax MLM loss (identity batch vocabulary)."""
    return mlm_loss(
        model,
        masked,
        BatchVocab(np.arange(model.config.vocab_size)),
        rng=rng,
        training=training,
    )


# ---------------------------------------------------------------------------
# projection pretraining
# ---------------------------------------------------------------------------


@dataclass
class ProjectionPair:
    """One overlapping word's source-space and target-space vectors."""

    v_in: np.ndarray
    v_out: np.ndarray


def pretrain_projection(
    pairs: list[ProjectionPair],
    lr: float = 100.0,
    epochs: int = 200,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, list[float]]:
    """Fit W minimizing mean squared error of W^T v_in against v_out.

    Full-batch gradient descent on the elementwise-mean MSE; returns the
    fitted map [E,H] and the per-epoch loss history (last entry is final).
    """
    if not pairs:
        raise ContractError("pretrain_projection requires at least one pair")
    dims = {(np.asarray(p.v_in).shape, np.asarray(p.v_out).shape) for p in pairs}
    if len(dims) != 1:
        raise ContractError(f"inconsistent pair dimensions: {sorted(dims)}")
    (e_dim,), (h_dim,) = dims.pop()
    x = Tensor(np.stack([p.v_in for p in pairs]).astype(np.float32))
    y = Tensor(np.stack([p.v_out for p in pairs]).astype(np.float32))
    if rng is None:
        rng = np.random.default_rng(0)
    w = Tensor((rng.standard_normal((e_dim, h_dim)) * 0.02).astype(np.float32), requires_grad=True)
    losses = []
    for _ in range(epochs):
        diff = T.sub(T.matmul(x, w), y)
        loss = T.mean(T.mul(diff, diff))
        w.zero_grad()
        loss.backward()
        w.data -= np.float32(lr) * w.grad
        losses.append(loss.item())
    return w, losses


def projection_mse(w: Tensor, pairs: list[ProjectionPair]) -> float:
    """Elementwise-mean squared error of the fitted map on held-out pairs."""
    x = np.stack([p.v_in for p in pairs]).astype(np.float64)
    y = np.stack([p.v_out for p in pairs]).astype(np.float64)
    pred = x @ w.data.astype(np.float64)
    return float(((pred - y) ** 2).mean())


# ---------------------------------------------------------------------------
# schedule and train loop
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    peak_lr: float = 5e-5
    warmup_steps: int = 5_000
    total_steps: int = 200_000
    batch_size: int = 32
    seed: int = 0
    sample_size: int = 30_000
    max_length: int = 512
    neighbor_k: int = 10

    def validate(self):
        problems = []
        if self.warmup_steps >= self.total_steps:
            problems.append(
                f"warmup_steps {self.warmup_steps} must be < total_steps {self.total_steps}"
            )
        for name in ("peak_lr", "warmup_steps", "total_steps", "batch_size", "sample_size", "max_length"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if problems:
            raise ContractError("; ".join(problems))


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear 0->peak over warmup_steps, then linear peak->0 at total_steps."""
    if step < 0:
        raise ContractError(f"step must be non-negative, got {step}")
    if step > cfg.total_steps:
        return 0.0
    if step <= cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    return cfg.peak_lr * (cfg.total_steps - step) / (cfg.total_steps - cfg.warmup_steps)


@dataclass
class StepRecord:
    step: int
    lr: float
    loss: float


def write_metrics(records: list[StepRecord], path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(f"{r.step}\t{r.lr!r}\t{r.loss!r}\n")


def prepare_corpus(corpus_lines, vocab: WordVocab, max_length: int) -> list[EncodedSequence]:
    """Encode every line; only sequences with at least one maskable word join
    the sampling pool."""
    pool = []
    for line in corpus_lines:
        seq = encode(segment_words(line, vocab.lowercase), vocab, max_length)
        if (seq.ids >= NUM_SPECIALS).any():
            pool.append(seq)
    if not pool:
        raise ContractError("corpus contains no maskable sequences")
    return pool


def train(
    corpus_lines,
    vocab: WordVocab,
    model: WordBertModel,
    cfg: TrainConfig,
    policy: MaskingPolicy | None = None,
    neighbor_index: NeighborIndex | None = None,
    optimizer: Adam | None = None,
    start_step: int = 0,
    num_steps: int | None = None,
    dropout_training: bool = True,
) -> tuple[list[StepRecord], Adam]:
    """Run MLM training steps [start_step, start_step + num_steps).

    Each step draws a batch, masks it, samples a batch vocabulary, takes one
    Adam step at the scheduled learning rate, and records (step, lr, loss).
    """
    cfg.validate()
    policy = policy or MaskingPolicy()
    policy.validate()
    pool = prepare_corpus(corpus_lines, vocab, cfg.max_length)
    optimizer = optimizer or Adam(model.trainable_parameters())
    if num_steps is None:
        num_steps = cfg.total_steps - start_step
    records = []
    vocab_size = model.config.vocab_size
    use_dropout = dropout_training and model.config.dropout > 0.0
    for step in range(start_step, start_step + num_steps):
        batch_rng = substream(cfg.seed, "batch", step)
        line_ids = batch_rng.integers(0, len(pool), size=cfg.batch_size)
        batch = [pool[i] for i in line_ids]
        masked = apply_masking(
            batch, policy, substream(cfg.seed, "masking", step), vocab_size
        )
        batch_word_ids = set(int(i) for i in np.unique(masked.input_ids) if i >= NUM_SPECIALS)
        target_ids = set(int(i) for i in masked.target_global_ids)
        bv = sample_batch_vocab(
            batch_word_ids | target_ids,
            target_ids,
            vocab_size=vocab_size,
            sample_size=cfg.sample_size,
            neighbor_index=neighbor_index,
            k=cfg.neighbor_k,
            rng=substream(cfg.seed, "sampling", step),
        )
        loss = mlm_loss(
            model,
            masked,
            bv,
            rng=substream(cfg.seed, "dropout", step) if use_dropout else None,
            training=use_dropout,
        )
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise RuntimeError(
                f"non-finite loss {loss_value} at step {step}, batch lines {line_ids.tolist()}"
            )
        model.zero_grad()
        loss.backward()
        optimizer.step(lr_at(step, cfg))
        model.zero_grad()
        records.append(StepRecord(step, lr_at(step, cfg), loss_value))
    return records, optimizer

"""Word-level transformer encoder with a tied MLM head.

The MLM output weights are the input embedding rows themselves (direct
variant) or their projection through the shared 300->H linear map (projected
variant); there is no separate output matrix, only a per-word bias. Sequence
labeling and span heads are small affine maps over per-position hidden states.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .sampling import BatchVocab
from .seeding import substream
from .tensor import Tensor
from .vocab import EncodedSequence

VARIANTS = ("direct", "projected")


@dataclass
class ModelConfig:
    vocab_size: int
    num_layers: int = 12
    num_heads: int = 12
    hidden: int = 768
    embed_dim: int = 768
    max_positions: int = 512
    variant: str = "direct"
    freeze_embeddings: bool = False
    dropout: float = 0.1
    gelu_approx: bool = False
    layer_norm_eps: float = 1e-5

    @property
    def ffn_dim(self) -> int:
        return 4 * self.hidden

    @property
    def head_dim(self) -> int:
        return self.hidden // self.num_heads

    def validate(self):
        problems = []
        if self.vocab_size < 5:
            problems.append(f"vocab_size {self.vocab_size} must cover the specials")
        if self.hidden % self.num_heads != 0:
            problems.append(f"hidden {self.hidden} not divisible by num_heads {self.num_heads}")
        if self.variant not in VARIANTS:
            problems.append(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "direct" and self.embed_dim != self.hidden:
            problems.append(
                f"direct variant requires embed_dim == hidden ({self.embed_dim} != {self.hidden})"
            )
        if self.variant == "projected" and not self.freeze_embeddings:
            problems.append("projected variant requires freeze_embeddings=true")
        if not 0.0 <= self.dropout < 1.0:
            problems.append(f"dropout {self.dropout} outside [0, 1)")
        if problems:
            raise ContractError("; ".join(problems))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) resampled until every draw lies within 2 std."""
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return (x * std).astype(np.float32)


def parameter_counts(config: ModelConfig) -> dict[str, int]:
    """Analytic parameter accounting, without allocating anything."""
    h, f = config.hidden, config.ffn_dim
    per_layer = 4 * (h * h + h) + 2 * (2 * h) + (h * f + f) + (f * h + h)
    counts = {
        "transformer": config.max_positions * h + config.num_layers * per_layer,
        "embedding": config.vocab_size * config.embed_dim
        + (config.embed_dim * h if config.variant == "projected" else 0),
        "mlm_head": config.vocab_size,
    }
    counts["total"] = sum(counts.values())
    return counts


class WordBertModel:
    """Embedding (direct or projected), position embeddings, L encoder layers."""

    def __init__(
        self,
        config: ModelConfig,
        seed: int = 0,
        word_vectors: np.ndarray | None = None,
        projection: np.ndarray | None = None,
    ):
        config.validate()
        self.config = config
        self.seed = seed
        rng = substream(seed, "init")
        params: dict[str, Tensor] = {}

        if config.variant == "projected":
            if word_vectors is None:
                raise ContractError("projected variant requires pretrained word_vectors")
            wv = np.asarray(word_vectors, dtype=np.float32)
            if wv.shape != (config.vocab_size, config.embed_dim):
                raise ShapeError(
                    f"word_vectors shape {wv.shape} does not match "
                    f"({config.vocab_size}, {config.embed_dim})"
                )
            params["embedding.word"] = Tensor(wv.copy(), requires_grad=not config.freeze_embeddings)
            if projection is None:
                proj = truncated_normal(rng, (config.embed_dim, config.hidden), 0.02)
            else:
                proj = np.asarray(projection, dtype=np.float32)
                if proj.shape != (config.embed_dim, config.hidden):
                    raise ShapeError(
                        f"projection shape {proj.shape} does not match "
                        f"({config.embed_dim}, {config.hidden})"
                    )
            params["embedding.projection"] = Tensor(proj.copy(), requires_grad=True)
        else:
            emb = (rng.standard_normal((config.vocab_size, config.embed_dim)) * 0.02).astype(
                np.float32
            )
            params["embedding.word"] = Tensor(emb, requires_grad=not config.freeze_embeddings)

        params["embedding.position"] = Tensor(
            truncated_normal(rng, (config.max_positions, config.hidden), 0.02),
            requires_grad=True,
        )

        h, f = config.hidden, config.ffn_dim
        for i in range(config.num_layers):
            pre = f"encoder.{i}."
            for name in ("attention.query", "attention.key", "attention.value", "attention.output"):
                params[pre + name + ".weight"] = Tensor(
                    truncated_normal(rng, (h, h), 0.02), requires_grad=True
                )
                params[pre + name + ".bias"] = Tensor(np.zeros(h, np.float32), requires_grad=True)
            params[pre + "attention.norm.gamma"] = Tensor(np.ones(h, np.float32), requires_grad=True)
            params[pre + "attention.norm.beta"] = Tensor(np.zeros(h, np.float32), requires_grad=True)
            params[pre + "ffn.inner.weight"] = Tensor(
                truncated_normal(rng, (h, f), 0.02), requires_grad=True
            )
            params[pre + "ffn.inner.bias"] = Tensor(np.zeros(f, np.float32), requires_grad=True)
            params[pre + "ffn.output.weight"] = Tensor(
                truncated_normal(rng, (f, h), 0.02), requires_grad=True
            )
            params[pre + "ffn.output.bias"] = Tensor(np.zeros(h, np.float32), requires_grad=True)
            params[pre + "ffn.norm.gamma"] = Tensor(np.ones(h, np.float32), requires_grad=True)
            params[pre + "ffn.norm.beta"] = Tensor(np.zeros(h, np.float32), requires_grad=True)

        params["mlm.bias"] = Tensor(np.zeros(config.vocab_size, np.float32), requires_grad=True)
        self.params = params
        self._head_rng = rng

    # ------------------------------------------------------------------
    # parameter bookkeeping
    # ------------------------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {k: p for k, p in self.params.items() if p.requires_grad}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.params):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.params[name].data).tobytes())
        return digest.hexdigest()

    def add_label_head(self, name: str, num_classes: int):
        """Affine [H,C] head for word-level classification."""
        w = truncated_normal(self._head_rng, (self.config.hidden, num_classes), 0.02)
        self.params[f"head.{name}.weight"] = Tensor(w, requires_grad=True)
        self.params[f"head.{name}.bias"] = Tensor(np.zeros(num_classes, np.float32), requires_grad=True)

    def add_span_head(self, name: str = "span"):
        """Start/end scoring vectors for span extraction."""
        self.params[f"head.{name}.start"] = Tensor(
            truncated_normal(self._head_rng, (self.config.hidden,), 0.02), requires_grad=True
        )
        self.params[f"head.{name}.end"] = Tensor(
            truncated_normal(self._head_rng, (self.config.hidden,), 0.02), requires_grad=True
        )

    # ------------------------------------------------------------------
    # forward passes
    # ------------------------------------------------------------------

    def embed(self, seq: EncodedSequence, rng=None, training: bool = False) -> Tensor:
        """Word (and projection) lookup plus learned position embeddings."""
        ids = np.asarray(seq.ids, dtype=np.int64)
        t_len = ids.shape[0]
        if t_len > self.config.max_positions:
            raise ShapeError(
                f"sequence length {t_len} exceeds max_positions {self.config.max_positions}"
            )
        rows = T.gather_rows(self.params["embedding.word"], ids)
        if self.config.variant == "projected":
            rows = T.matmul(rows, self.params["embedding.projection"])
        pos = T.gather_rows(self.params["embedding.position"], np.arange(t_len))
        x = T.add(rows, pos)
        if training and self.config.dropout > 0.0:
            x = T.dropout(x, self.config.dropout, rng)
        return x

    def encode_sequence(self, embeddings: Tensor, attention_mask, rng=None, training=False) -> Tensor:
        """L layers of masked multi-head self-attention + feed-forward."""
        mask = np.asarray(attention_mask, dtype=np.float32)
        t_len = embeddings.data.shape[0]
        if mask.shape != (t_len,):
            raise ShapeError(f"attention mask shape {mask.shape} does not match length {t_len}")
        # additive bias: 0 on real positions, -1e9 on padding key columns
        mask_bias = Tensor((mask - 1.0) * np.float32(1e9))
        x = embeddings
        for i in range(self.config.num_layers):
            x = self._layer(i, x, mask_bias, rng, training)
        return x

    def _layer(self, i: int, x: Tensor, mask_bias: Tensor, rng, training: bool) -> Tensor:
        cfg = self.config
        p = self.params
        pre = f"encoder.{i}."
        t_len = x.data.shape[0]
        a, d = cfg.num_heads, cfg.head_dim

        q = T.add(T.matmul(x, p[pre + "attention.query.weight"]), p[pre + "attention.query.bias"])
        k = T.add(T.matmul(x, p[pre + "attention.key.weight"]), p[pre + "attention.key.bias"])
        v = T.add(T.matmul(x, p[pre + "attention.value.weight"]), p[pre + "attention.value.bias"])
        qh = T.transpose(T.reshape(q, (t_len, a, d)), (1, 0, 2))
        kh = T.transpose(T.reshape(k, (t_len, a, d)), (1, 2, 0))
        vh = T.transpose(T.reshape(v, (t_len, a, d)), (1, 0, 2))
        scores = T.mul(T.matmul(qh, kh), 1.0 / np.sqrt(d))
        scores = T.add(scores, mask_bias)
        attn = T.softmax(scores)
        if training and cfg.dropout > 0.0:
            attn = T.dropout(attn, cfg.dropout, rng)
        ctx = T.reshape(T.transpose(T.matmul(attn, vh), (1, 0, 2)), (t_len, cfg.hidden))
        attn_out = T.add(
            T.matmul(ctx, p[pre + "attention.output.weight"]), p[pre + "attention.output.bias"]
        )
        if training and cfg.dropout > 0.0:
            attn_out = T.dropout(attn_out, cfg.dropout, rng)
        x = T.layer_norm(
            T.add(x, attn_out),
            p[pre + "attention.norm.gamma"],
            p[pre + "attention.norm.beta"],
            cfg.layer_norm_eps,
        )

        inner = T.gelu(
            T.add(T.matmul(x, p[pre + "ffn.inner.weight"]), p[pre + "ffn.inner.bias"]),
            approx=cfg.gelu_approx,
        )
        ffn_out = T.add(T.matmul(inner, p[pre + "ffn.output.weight"]), p[pre + "ffn.output.bias"])
        if training and cfg.dropout > 0.0:
            ffn_out = T.dropout(ffn_out, cfg.dropout, rng)
        return T.layer_norm(
            T.add(x, ffn_out),
            p[pre + "ffn.norm.gamma"],
            p[pre + "ffn.norm.beta"],
            cfg.layer_norm_eps,
        )

    def hidden_states(self, seq: EncodedSequence, rng=None, training=False) -> Tensor:
        return self.encode_sequence(
            self.embed(seq, rng=rng, training=training), seq.attention_mask, rng=rng,
            training=training,
        )

    def encode_batch(self, input_ids, attention_masks, rng=None, training=False) -> Tensor:
        """Whole-batch forward over equal-length sequences.

        Same math as per-sequence embed + encode_sequence, with batch and head
        axes folded so attention stays on rank-3 tensors. Returns hidden
        states flattened to [B*T, H]; position (b, t) lives at row b*T + t.
        """
        cfg = self.config
        p = self.params
        ids = np.asarray(input_ids, dtype=np.int64)
        if ids.ndim != 2:
            raise ShapeError(f"input_ids must be [batch, length], got {ids.shape}")
        b_sz, t_len = ids.shape
        if t_len > cfg.max_positions:
            raise ShapeError(f"sequence length {t_len} exceeds max_positions {cfg.max_positions}")
        mask = np.asarray(attention_masks, dtype=np.float32)
        if mask.shape != (b_sz, t_len):
            raise ShapeError(f"attention mask shape {mask.shape} does not match {ids.shape}")

        rows = T.gather_rows(p["embedding.word"], ids.reshape(-1))
        if cfg.variant == "projected":
            rows = T.matmul(rows, p["embedding.projection"])
        pos = T.gather_rows(p["embedding.position"], np.arange(t_len))
        x = T.reshape(T.add(T.reshape(rows, (b_sz, t_len, cfg.hidden)), pos), (b_sz * t_len, cfg.hidden))
        if training and cfg.dropout > 0.0:
            x = T.dropout(x, cfg.dropout, rng)

        a, d = cfg.num_heads, cfg.head_dim
        # one additive bias row per (sequence, head): 0 real, -1e9 padding keys
        bias = np.repeat((mask - 1.0) * np.float32(1e9), a, axis=0).reshape(b_sz * a, 1, t_len)
        mask_bias = Tensor(bias)

        def split_heads(t2d, transpose_to):
            return T.reshape(
                T.transpose(T.reshape(t2d, (b_sz, t_len, a, d)), transpose_to),
                (b_sz * a, t_len, d) if transpose_to == (0, 2, 1, 3) else (b_sz * a, d, t_len),
            )

        for i in range(cfg.num_layers):
            pre = f"encoder.{i}."
            q = T.add(T.matmul(x, p[pre + "attention.query.weight"]), p[pre + "attention.query.bias"])
            k = T.add(T.matmul(x, p[pre + "attention.key.weight"]), p[pre + "attention.key.bias"])
            v = T.add(T.matmul(x, p[pre + "attention.value.weight"]), p[pre + "attention.value.bias"])
            qh = split_heads(q, (0, 2, 1, 3))
            kh = split_heads(k, (0, 2, 3, 1))
            vh = split_heads(v, (0, 2, 1, 3))
            scores = T.add(T.mul(T.matmul(qh, kh), 1.0 / np.sqrt(d)), mask_bias)
            attn = T.softmax(scores)
            if training and cfg.dropout > 0.0:
                attn = T.dropout(attn, cfg.dropout, rng)
            ctx = T.reshape(
                T.transpose(T.reshape(T.matmul(attn, vh), (b_sz, a, t_len, d)), (0, 2, 1, 3)),
                (b_sz * t_len, cfg.hidden),
            )
            attn_out = T.add(
                T.matmul(ctx, p[pre + "attention.output.weight"]), p[pre + "attention.output.bias"]
            )
            if training and cfg.dropout > 0.0:
                attn_out = T.dropout(attn_out, cfg.dropout, rng)
            x = T.layer_norm(
                T.add(x, attn_out),
                p[pre + "attention.norm.gamma"],
                p[pre + "attention.norm.beta"],
                cfg.layer_norm_eps,
            )
            inner = T.gelu(
                T.add(T.matmul(x, p[pre + "ffn.inner.weight"]), p[pre + "ffn.inner.bias"]),
                approx=cfg.gelu_approx,
            )
            ffn_out = T.add(T.matmul(inner, p[pre + "ffn.output.weight"]), p[pre + "ffn.output.bias"])
            if training and cfg.dropout > 0.0:
                ffn_out = T.dropout(ffn_out, cfg.dropout, rng)
            x = T.layer_norm(
                T.add(x, ffn_out),
                p[pre + "ffn.norm.gamma"],
                p[pre + "ffn.norm.beta"],
                cfg.layer_norm_eps,
            )
        return x

    def output_rows(self, ids) -> Tensor:
        """Tied MLM output rows for the given word ids, in H-space."""
        rows = T.gather_rows(self.params["embedding.word"], ids)
        if self.config.variant == "projected":
            rows = T.matmul(rows, self.params["embedding.projection"])
        return rows

    def mlm_logits(self, hidden: Tensor, batch_vocab: BatchVocab) -> Tensor:
        """hidden [M,H] -> logits [M, |batch_vocab|] against tied rows + bias."""
        if len(batch_vocab) == 0:
            raise ContractError("batch vocabulary is empty")
        ids = batch_vocab.global_ids
        rows = self.output_rows(ids)
        bias = T.gather_rows(self.params["mlm.bias"], ids)
        return T.add(T.matmul(hidden, T.transpose(rows, (1, 0))), bias)

    def full_vocab_logits(self, hidden: Tensor) -> Tensor:
        """hidden [M,H] -> logits [M, V] over the entire vocabulary."""
        emb = self.params["embedding.word"]
        if self.config.variant == "projected":
            rows = T.matmul(emb, self.params["embedding.projection"])
        else:
            rows = emb
        return T.add(T.matmul(hidden, T.transpose(rows, (1, 0))), self.params["mlm.bias"])


def label_logits(hidden: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Per-position affine classification scores: [T,H] x [H,C] + [C]."""
    t_len, h = hidden.data.shape
    if weight.data.ndim != 2 or weight.data.shape[0] != h or bias.data.shape != (weight.data.shape[1],):
        raise ShapeError(
            f"label head shapes {weight.data.shape}/{bias.data.shape} do not fit hidden {hidden.data.shape}"
        )
    return T.add(T.matmul(hidden, weight), bias)


def span_logits(hidden: Tensor, w_start: Tensor, w_end: Tensor) -> tuple[Tensor, Tensor]:
    """Start/end scores per position; position 0 ([CLS]) encodes no-answer."""
    t_len, h = hidden.data.shape
    start = T.reshape(T.matmul(hidden, T.reshape(w_start, (h, 1))), (t_len,))
    end = T.reshape(T.matmul(hidden, T.reshape(w_end, (h, 1))), (t_len,))
    return start, end

"""Model tests: embedding, encoder vs reference, tied MLM head, task heads."""

import numpy as np
import pytest

from wordlm import tensor as T
from wordlm.errors import ContractError, ShapeError
from wordlm.model import (
    ModelConfig,
    WordBertModel,
    label_logits,
    parameter_counts,
    span_logits,
)
from wordlm.optim import Adam
from wordlm.sampling import BatchVocab
from wordlm.tensor import Tensor
from wordlm.vocab import EncodedSequence

from reference_model import params64, ref_hidden


def toy_config(**kw):
    base = dict(
        vocab_size=40,
        num_layers=2,
        num_heads=2,
        hidden=16,
        embed_dim=16,
        max_positions=24,
        variant="direct",
        dropout=0.0,
    )
    base.update(kw)
    return ModelConfig(**base)


def seq_of(ids):
    ids = np.asarray(ids, dtype=np.int64)
    mask = (ids != 0).astype(np.int64)
    return EncodedSequence(ids, mask, int((ids >= 5).sum()))


class TestConfig:
    def test_heads_must_divide_hidden(self):
        with pytest.raises(ContractError, match="divisible"):
            toy_config(num_heads=3).validate()

    def test_direct_requires_matching_dims(self):
        with pytest.raises(ContractError, match="embed_dim"):
            toy_config(embed_dim=8).validate()

    def test_projected_requires_frozen_embeddings(self):
        with pytest.raises(ContractError, match="freeze"):
            toy_config(variant="projected", embed_dim=8, freeze_embeddings=False).validate()

    def test_reference_defaults_valid(self):
        ModelConfig(vocab_size=500_005).validate()


class TestEmbed:
    def test_position_decomposition(self):
        model = WordBertModel(toy_config(), seed=1)
        out = model.embed(seq_of([7, 7])).data
        pos = model.params["embedding.position"].data
        np.testing.assert_allclose(out[1] - out[0], pos[1] - pos[0], atol=1e-6)

    def test_projected_zero_map_leaves_positions(self):
        cfg = toy_config(variant="projected", embed_dim=8, freeze_embeddings=True)
        wv = np.random.default_rng(0).standard_normal((40, 8)).astype(np.float32)
        model = WordBertModel(cfg, seed=2, word_vectors=wv, projection=np.zeros((8, 16), np.float32))
        out = model.embed(seq_of([2, 9, 3])).data
        np.testing.assert_array_equal(out, model.params["embedding.position"].data[:3])

    def test_length_error(self):
        model = WordBertModel(toy_config(), seed=3)
        with pytest.raises(ShapeError, match="max_positions"):
            model.embed(seq_of([1] * 25))

    def test_frozen_embeddings_survive_a_training_step(self):
        cfg = toy_config(variant="projected", embed_dim=8, freeze_embeddings=True)
        wv = np.random.default_rng(1).standard_normal((40, 8)).astype(np.float32)
        model = WordBertModel(cfg, seed=4, word_vectors=wv)
        emb_before = model.params["embedding.word"].data.copy()
        w_before = model.params["embedding.projection"].data.copy()

        seq = seq_of([2, 8, 9, 10, 3])
        hidden = model.hidden_states(seq)
        picked = T.gather_rows(hidden, [2])
        logits = model.mlm_logits(picked, BatchVocab(np.arange(40)))
        loss = T.mean(T.cross_entropy_rows(logits, [9]))
        loss.backward()
        opt = Adam(model.trainable_parameters())
        opt.step(lr=1e-2)

        assert model.params["embedding.word"].grad is None
        np.testing.assert_array_equal(model.params["embedding.word"].data, emb_before)
        assert np.abs(model.params["embedding.projection"].data - w_before).max() > 0
        assert model.params["embedding.projection"].grad is not None


class TestEncoder:
    def test_single_token_shape(self):
        model = WordBertModel(toy_config(), seed=5)
        emb = model.embed(seq_of([2]))
        out = model.encode_sequence(emb, [1])
        assert out.data.shape == (1, 16)

    def test_padding_does_not_change_real_positions(self):
        model = WordBertModel(toy_config(), seed=6)
        short = seq_of([2, 7, 8, 3])
        for extra in (1, 4, 9):
            longer = seq_of([2, 7, 8, 3] + [0] * extra)
            a = model.hidden_states(short).data
            b = model.hidden_states(longer).data
            assert np.abs(b[:4] - a).max() <= 1e-5

    def test_matches_straight_line_reference(self):
        model = WordBertModel(toy_config(), seed=7)
        seq = seq_of([2, 6, 7, 8, 9, 3, 0, 0])
        got = model.hidden_states(seq).data
        expected = ref_hidden(params64(model), model.config, seq.ids, seq.attention_mask)
        assert np.abs(got - expected).max() <= 1e-4

    def test_deterministic_init(self):
        a = WordBertModel(toy_config(), seed=11)
        b = WordBertModel(toy_config(), seed=11)
        assert a.checksum() == b.checksum()
        c = WordBertModel(toy_config(), seed=12)
        assert a.checksum() != c.checksum()

    def test_batched_forward_matches_per_sequence(self):
        model = WordBertModel(toy_config(), seed=16)
        seqs = [seq_of([2, 6, 7, 3, 0, 0]), seq_of([2, 9, 10, 11, 12, 3])]
        ids = np.stack([s.ids for s in seqs])
        masks = np.stack([s.attention_mask for s in seqs])
        flat = model.encode_batch(ids, masks).data
        t_len = ids.shape[1]
        for b, seq in enumerate(seqs):
            single = model.hidden_states(seq).data
            real = seq.attention_mask == 1
            got = flat[b * t_len : (b + 1) * t_len][real]
            assert np.abs(got - single[real]).max() <= 1e-5


class TestMlmLogits:
    def rand_hidden(self, model, rows=3):
        rng = np.random.default_rng(13)
        return Tensor(rng.standard_normal((rows, model.config.hidden)).astype(np.float32))

    def test_full_vocab_restriction_is_identity(self):
        model = WordBertModel(toy_config(), seed=8)
        model.params["mlm.bias"].data[:] = np.random.default_rng(14).standard_normal(40)
        hidden = self.rand_hidden(model)
        full = model.full_vocab_logits(hidden).data
        restricted = model.mlm_logits(hidden, BatchVocab(np.arange(40))).data
        np.testing.assert_array_equal(full, restricted)

    def test_zero_hidden_gives_bias(self):
        model = WordBertModel(toy_config(), seed=9)
        model.params["mlm.bias"].data[:] = np.arange(40, dtype=np.float32)
        bv = BatchVocab([0, 1, 2, 3, 4, 11, 30])
        logits = model.mlm_logits(Tensor(np.zeros((2, 16), np.float32)), bv).data
        np.testing.assert_array_equal(logits, np.tile(bv.global_ids.astype(np.float32), (2, 1)))

    def test_matches_per_word_dot_product_oracle(self):
        model = WordBertModel(toy_config(), seed=10)
        model.params["mlm.bias"].data[:] = np.random.default_rng(15).standard_normal(40)
        hidden = self.rand_hidden(model, rows=4)
        bv = BatchVocab([0, 1, 2, 3, 4, 7, 20, 33])
        got = model.mlm_logits(hidden, bv).data
        emb = model.params["embedding.word"].data.astype(np.float64)
        bias = model.params["mlm.bias"].data.astype(np.float64)
        for m in range(4):
            for j, g in enumerate(bv.global_ids):
                expected = float(hidden.data[m].astype(np.float64) @ emb[g] + bias[g])
                assert abs(got[m, j] - expected) <= 1e-5

    def test_projected_variant_shares_projection_both_sides(self):
        cfg = toy_config(variant="projected", embed_dim=8, freeze_embeddings=True)
        wv = np.random.default_rng(2).standard_normal((40, 8)).astype(np.float32)
        model = WordBertModel(cfg, seed=11, word_vectors=wv)
        hidden = self.rand_hidden(model, rows=2)
        bv = BatchVocab(np.arange(40))
        got = model.mlm_logits(hidden, bv).data
        rows = wv.astype(np.float64) @ model.params["embedding.projection"].data.astype(np.float64)
        expected = hidden.data.astype(np.float64) @ rows.T
        np.testing.assert_allclose(got, expected, atol=1e-5)

    def test_empty_batch_vocab_rejected(self):
        model = WordBertModel(toy_config(), seed=12)
        with pytest.raises(ContractError):
            model.mlm_logits(self.rand_hidden(model), BatchVocab([]))

    def test_weight_tying_single_storage(self):
        model = WordBertModel(toy_config(), seed=13)
        hidden = self.rand_hidden(model)
        seq = seq_of([2, 17, 3])
        before_logits = model.full_vocab_logits(hidden).data.copy()
        before_embed = model.embed(seq).data.copy()
        model.params["embedding.word"].data[17] += 1.0
        after_logits = model.full_vocab_logits(hidden).data
        after_embed = model.embed(seq).data
        changed = np.abs(after_logits - before_logits).max(axis=0)
        assert changed[17] > 0
        assert np.all(changed[np.arange(40) != 17] == 0)
        assert np.abs(after_embed[1] - before_embed[1]).max() > 0
        np.testing.assert_array_equal(after_embed[0], before_embed[0])


class TestTaskHeads:
    def test_zero_label_head_gives_bias(self):
        rng = np.random.default_rng(16)
        hidden = Tensor(rng.standard_normal((5, 16)).astype(np.float32))
        bias = rng.standard_normal(7).astype(np.float32)
        out = label_logits(hidden, Tensor(np.zeros((16, 7), np.float32)), Tensor(bias))
        np.testing.assert_array_equal(out.data, np.tile(bias, (5, 1)))

    def test_identity_head_reproduces_hidden(self):
        hidden = Tensor(np.random.default_rng(17).standard_normal((1, 16)).astype(np.float32))
        out = label_logits(hidden, Tensor(np.eye(16, dtype=np.float32)), Tensor(np.zeros(16, np.float32)))
        np.testing.assert_allclose(out.data, hidden.data, atol=1e-6)

    def test_label_logits_matches_matmul_oracle(self):
        rng = np.random.default_rng(18)
        hidden = rng.standard_normal((6, 16)).astype(np.float32)
        w = rng.standard_normal((16, 4)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        out = label_logits(Tensor(hidden), Tensor(w), Tensor(b)).data
        expected = hidden.astype(np.float64) @ w.astype(np.float64) + b
        assert np.abs(out - expected).max() <= 1e-5

    def test_label_head_shape_error(self):
        with pytest.raises(ShapeError):
            label_logits(
                Tensor(np.zeros((5, 16), np.float32)),
                Tensor(np.zeros((8, 4), np.float32)),
                Tensor(np.zeros(4, np.float32)),
            )

    def test_span_same_vectors_give_equal_scores(self):
        rng = np.random.default_rng(19)
        hidden = Tensor(rng.standard_normal((5, 16)).astype(np.float32))
        w = Tensor(rng.standard_normal(16).astype(np.float32))
        start, end = span_logits(hidden, w, w)
        np.testing.assert_array_equal(start.data, end.data)

    def test_span_zero_head_gives_zero_scores(self):
        hidden = Tensor(np.random.default_rng(20).standard_normal((4, 16)).astype(np.float32))
        z = Tensor(np.zeros(16, np.float32))
        start, end = span_logits(hidden, z, z)
        np.testing.assert_array_equal(start.data, np.zeros(4, np.float32))
        np.testing.assert_array_equal(end.data, np.zeros(4, np.float32))

    def test_span_matches_dot_product_oracle(self):
        rng = np.random.default_rng(21)
        hidden = rng.standard_normal((5, 16)).astype(np.float32)
        ws = rng.standard_normal(16).astype(np.float32)
        we = rng.standard_normal(16).astype(np.float32)
        start, end = span_logits(Tensor(hidden), Tensor(ws), Tensor(we))
        np.testing.assert_allclose(start.data, hidden.astype(np.float64) @ ws, atol=1e-5)
        np.testing.assert_allclose(end.data, hidden.astype(np.float64) @ we, atol=1e-5)

    def test_registered_heads_are_parameters(self):
        model = WordBertModel(toy_config(), seed=14)
        model.add_label_head("tags", 9)
        model.add_span_head()
        assert model.params["head.tags.weight"].data.shape == (16, 9)
        assert model.params["head.span.start"].data.shape == (16,)


class TestParameterCounts:
    def test_reference_config_matches_published_split(self):
        counts = parameter_counts(ModelConfig(vocab_size=500_005))
        assert abs(counts["transformer"] - 85_000_000) / 85_000_000 <= 0.02
        assert abs(counts["embedding"] - 384_000_000) / 384_000_000 <= 0.02

    def test_counts_match_allocated_toy_model(self):
        cfg = toy_config()
        model = WordBertModel(cfg, seed=15)
        counts = parameter_counts(cfg)
        actual_emb = model.params["embedding.word"].size
        actual_transformer = sum(
            t.size
            for name, t in model.params.items()
            if name.startswith("encoder.") or name == "embedding.position"
        )
        assert counts["embedding"] == actual_emb
        assert counts["transformer"] == actual_transformer
        assert counts["mlm_head"] == model.params["mlm.bias"].size

    def test_projected_counts_include_projection(self):
        cfg = ModelConfig(
            vocab_size=1_000, embed_dim=300, variant="projected", freeze_embeddings=True
        )
        counts = parameter_counts(cfg)
        assert counts["embedding"] == 1_000 * 300 + 300 * 768

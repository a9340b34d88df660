"""Embedding and BiLSTM encoder tests, including masking invariants."""

import numpy as np
import pytest

from relattn import autodiff as ad
from relattn import encoder as enc
from relattn.autodiff import Node, Parameter, Tape, finite_diff_check
from relattn.config import ModelConfig
from relattn.data import BLANK_ID, Instance


def tiny_config(**kw):
    base = dict(word_dim=4, position_dim=2, max_distance=3, time_steps=3,
                hidden_size=3, num_classes=2, precision="float64")
    base.update(kw)
    return ModelConfig(**base)


def make_instance(token_ids, head=0, tail=1, true_length=None):
    ids = np.asarray(token_ids, dtype=np.int64)
    if true_length is None:
        true_length = int((ids != BLANK_ID).sum())
    return Instance(ids, head, tail, true_length)


def tables_for(cfg, vocab_size=6, seed=0):
    rng = np.random.default_rng(seed)
    return enc.init_embedding_tables(vocab_size, cfg, rng)


class TestEmbeddings:
    def test_output_shape(self):
        cfg = tiny_config()
        tables = tables_for(cfg)
        inst = make_instance([2, 3, 4], true_length=3)
        out = enc.embed_sequence(None, inst, tables, cfg)
        assert out.shape == (6, 3)   # word_dim + position_dim rows, T columns

    def test_all_blank_columns_identical(self):
        cfg = tiny_config()
        tables = tables_for(cfg)
        inst = make_instance([BLANK_ID] * 3, true_length=0)
        out = enc.embed_sequence(None, inst, tables, cfg).value
        np.testing.assert_array_equal(out[:, 0], out[:, 1])
        np.testing.assert_array_equal(out[:, 0], out[:, 2])
        np.testing.assert_array_equal(out[:4, 0], tables.word.value[BLANK_ID])

    def test_head_position_separates_otherwise_equal_instances(self):
        cfg = tiny_config()
        tables = tables_for(cfg)
        a = enc.embed_sequence(None, make_instance([2, 3, 4], head=0, tail=2), tables, cfg).value
        b = enc.embed_sequence(None, make_instance([2, 3, 4], head=1, tail=2), tables, cfg).value
        np.testing.assert_array_equal(a[:4], b[:4])          # word rows agree
        assert not np.array_equal(a[4:5], b[4:5])            # head-position row differs
        np.testing.assert_array_equal(a[5:], b[5:])          # tail-position row agrees

    def test_id_out_of_range(self):
        cfg = tiny_config()
        tables = tables_for(cfg, vocab_size=4)
        with pytest.raises(IndexError):
            enc.embed_sequence(None, make_instance([2, 3, 9]), tables, cfg)

    def test_pretrained_substitution(self):
        cfg = tiny_config()
        vec = np.array([9.0, 8.0, 7.0, 6.0])
        tables = enc.init_embedding_tables(5, cfg, np.random.default_rng(0),
                                           pretrained={"known": vec, "absent": vec},
                                           token_ids={"known": 3})
        np.testing.assert_array_equal(tables.word.value[3], vec)
        assert np.abs(tables.word.value[2]).max() < 0.5   # untouched rows stay small


class TestLstmStep:
    def zero_direction(self, u=3, d=4):
        return enc.LstmDirection(
            w_in=Parameter("wi", np.zeros((4 * u, d))),
            w_rec=Parameter("wr", np.zeros((4 * u, u))),
            bias=Parameter("b", np.zeros((4 * u, 1))),
            hidden_size=u,
        )

    def test_zero_weights_give_zero_state(self):
        d = self.zero_direction()
        x = Node(np.ones((4, 1)))
        h, c = enc.lstm_step(None, x, Node(np.zeros((3, 1))), Node(np.zeros((3, 1))), d)
        np.testing.assert_array_equal(h.value, np.zeros((3, 1)))

    def test_open_forget_gate_retains_memory(self):
        d = self.zero_direction()
        d.bias.value[3:6] = 10.0   # forget slice
        c_prev = Node(np.random.default_rng(0).uniform(-1, 1, (3, 1)))
        _, c = enc.lstm_step(None, Node(np.ones((4, 1))), Node(np.zeros((3, 1))), c_prev, d)
        assert np.abs(c.value - c_prev.value).max() < 1e-3

    def test_three_chained_steps_match_finite_differences(self):
        rng = np.random.default_rng(1)
        u, d_in = 2, 3
        direction = enc.LstmDirection(
            w_in=Parameter("wi", rng.uniform(-0.5, 0.5, (4 * u, d_in))),
            w_rec=Parameter("wr", rng.uniform(-0.5, 0.5, (4 * u, u))),
            bias=Parameter("b", rng.uniform(-0.5, 0.5, (4 * u, 1))),
            hidden_size=u,
        )
        xs = [Node(rng.uniform(-1, 1, (d_in, 1))) for _ in range(3)]
        probe = Node(rng.uniform(-1, 1, (u, 1)))

        def f():
            tape = Tape()
            h, c = Node(np.zeros((u, 1))), Node(np.zeros((u, 1)))
            for x in xs:
                h, c = enc.lstm_step(tape, x, h, c, direction)
            return tape, ad.sum_all(tape, ad.mul(tape, h, probe))

        err = finite_diff_check(f, [direction.w_in, direction.w_rec, direction.bias])
        assert err < 1e-5

    def test_forget_bias_initialized_to_one(self):
        cfg = tiny_config()
        params = enc.init_lstm_params(cfg, np.random.default_rng(0))
        u = cfg.hidden_size
        for d in (params.fwd, params.bwd):
            np.testing.assert_array_equal(d.bias.value[u:2 * u], np.ones((u, 1)))
            np.testing.assert_array_equal(d.bias.value[:u], np.zeros((u, 1)))
            assert np.abs(d.w_in.value).max() <= 0.1
            assert np.abs(d.w_rec.value).max() <= 0.1


class TestBilstm:
    def encode(self, cfg, instance, seed=0, mask_padding=True):
        tables = tables_for(cfg, vocab_size=8, seed=seed)
        lstm = enc.init_lstm_params(cfg, np.random.default_rng(seed + 1))
        embedded = enc.embed_sequence(None, instance, tables, cfg)
        return enc.bilstm_encode(None, embedded, instance.true_length, lstm,
                                 mask_padding=mask_padding)

    def test_output_shape(self):
        cfg = tiny_config(time_steps=4)
        out = self.encode(cfg, make_instance([2, 3, 4, 5], true_length=4))
        assert out.shape == (6, 4)   # 2u rows

    def test_padded_columns_exactly_zero(self):
        cfg = tiny_config(time_steps=4)
        inst = make_instance([2, 3, BLANK_ID, BLANK_ID], true_length=2)
        out = self.encode(cfg, inst).value
        np.testing.assert_array_equal(out[:, 2:], np.zeros((6, 2)))
        assert np.abs(out[:, :2]).max() > 0

    def test_single_real_token(self):
        cfg = tiny_config(time_steps=4)
        inst = make_instance([2, BLANK_ID, BLANK_ID, BLANK_ID], true_length=1)
        out = self.encode(cfg, inst).value
        assert np.abs(out[:, 0]).max() > 0
        np.testing.assert_array_equal(out[:, 1:], np.zeros((6, 3)))

    def test_unmasked_keeps_padding_states(self):
        cfg = tiny_config(time_steps=4)
        inst = make_instance([2, 3, BLANK_ID, BLANK_ID], true_length=2)
        out = self.encode(cfg, inst, mask_padding=False).value
        assert np.abs(out[:, 2:]).max() > 0

    def test_more_padding_leaves_real_columns_unchanged(self):
        ids = [2, 3, 4]
        short_cfg = tiny_config(time_steps=3)
        long_cfg = tiny_config(time_steps=8)
        short = self.encode(short_cfg, make_instance(ids, true_length=3))
        long = self.encode(long_cfg, make_instance(ids + [BLANK_ID] * 5, true_length=3))
        np.testing.assert_allclose(short.value, long.value[:, :3], atol=1e-6)

    def test_batch_matches_single(self):
        cfg = tiny_config(time_steps=4)
        tables = tables_for(cfg, vocab_size=8)
        lstm = enc.init_lstm_params(cfg, np.random.default_rng(1))
        instances = [make_instance([2, 3, 4, 5], true_length=4),
                     make_instance([5, 2, BLANK_ID, BLANK_ID], true_length=2),
                     make_instance([3, BLANK_ID, BLANK_ID, BLANK_ID], true_length=1)]
        batch_embedded = enc.embed_batch(None, instances, tables, cfg)
        batched = enc.bilstm_encode_batch(None, batch_embedded,
                                          [i.true_length for i in instances], lstm)
        n = len(instances)
        for j, inst in enumerate(instances):
            single = enc.bilstm_encode(None, enc.embed_sequence(None, inst, tables, cfg),
                                       inst.true_length, lstm)
            cols = enc.instance_columns(n, cfg.time_steps, j)
            np.testing.assert_allclose(batched.value[:, cols], single.value, atol=1e-12)

    def test_full_encoder_gradient(self):
        cfg = tiny_config(word_dim=3, position_dim=2, hidden_size=2, time_steps=5,
                          max_distance=3)
        rng = np.random.default_rng(3)
        tables = tables_for(cfg, vocab_size=6, seed=3)
        # healthy magnitudes keep the check clear of the fd noise floor
        for p in (tables.word, tables.head_position, tables.tail_position):
            p.value[...] = rng.uniform(0.2, 0.6, p.value.shape) * rng.choice([-1, 1], p.value.shape)
        lstm = enc.init_lstm_params(cfg, rng)
        inst = make_instance([2, 3, 4, BLANK_ID, BLANK_ID], true_length=3)
        probe = Node(rng.uniform(-1, 1, (4, 5)))

        def f():
            tape = Tape()
            embedded = enc.embed_sequence(tape, inst, tables, cfg)
            hidden = enc.bilstm_encode(tape, embedded, inst.true_length, lstm)
            return tape, ad.sum_all(tape, ad.mul(tape, hidden, probe))

        params = [tables.word, tables.head_position, tables.tail_position,
                  lstm.fwd.w_in, lstm.fwd.w_rec, lstm.fwd.bias,
                  lstm.bwd.w_in, lstm.bwd.w_rec, lstm.bwd.bias]
        assert finite_diff_check(f, params) < 1e-5

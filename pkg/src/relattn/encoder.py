"""Sentence encoder: word + relative-position embeddings into a BiLSTM.

Sequences are laid out time-major when several instances are encoded at
once: the embedded batch has one column per (time step, instance) pair with
time varying slowest, so every LSTM step is a single column slice across the
whole batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Parameter, Tape
from .config import ModelConfig
from .data import Instance, relative_positions


@dataclass
class EmbeddingTables:
    word: Parameter           # [vocab x word_dim]
    head_position: Parameter  # [2*max_distance + 2 x position_dim/2]
    tail_position: Parameter


@dataclass
class LstmDirection:
    w_in: Parameter    # [4u x input_dim], gate order i, f, g, o
    w_rec: Parameter   # [4u x u]
    bias: Parameter    # [4u x 1], forget slice initialized to 1
    hidden_size: int


@dataclass
class LstmParams:
    fwd: LstmDirection
    bwd: LstmDirection


def init_embedding_tables(vocab_size: int, config: ModelConfig,
                          rng: np.random.Generator,
                          pretrained: dict[str, np.ndarray] | None = None,
                          token_ids: dict[str, int] | None = None) -> EmbeddingTables:
    """Embedding rows drawn from normal(0, 0.05); pretrained rows substituted."""
    dtype = config.dtype
    word = rng.normal(0.0, 0.05, size=(vocab_size, config.word_dim))
    if pretrained:
        if token_ids is None:
            raise ValueError("pretrained embeddings need the token -> id map")
        for token, vec in pretrained.items():
            if token in token_ids:
                if vec.shape != (config.word_dim,):
                    raise ValueError(f"embedding for {token!r} has dim {vec.shape}, "
                                     f"expected ({config.word_dim},)")
                word[token_ids[token]] = vec
    buckets = 2 * config.max_distance + 2
    half = config.position_table_dim
    return EmbeddingTables(
        word=Parameter("word_emb", word.astype(dtype)),
        head_position=Parameter("head_pos_emb",
                                rng.normal(0.0, 0.05, size=(buckets, half)).astype(dtype)),
        tail_position=Parameter("tail_pos_emb",
                                rng.normal(0.0, 0.05, size=(buckets, half)).astype(dtype)),
    )


def _init_direction(name: str, input_dim: int, u: int, rng: np.random.Generator,
                    dtype: np.dtype) -> LstmDirection:
    w_in = rng.uniform(-0.1, 0.1, size=(4 * u, input_dim))
    w_rec = rng.uniform(-0.1, 0.1, size=(4 * u, u))
    bias = np.zeros((4 * u, 1))
    bias[u:2 * u] = 1.0   # forget gate starts open
    return LstmDirection(
        w_in=Parameter(f"{name}_w_in", w_in.astype(dtype)),
        w_rec=Parameter(f"{name}_w_rec", w_rec.astype(dtype)),
        bias=Parameter(f"{name}_bias", bias.astype(dtype)),
        hidden_size=u,
    )


def init_lstm_params(config: ModelConfig, rng: np.random.Generator) -> LstmParams:
    input_dim = config.word_dim + config.position_dim
    u = config.hidden_size
    return LstmParams(
        fwd=_init_direction("lstm_fwd", input_dim, u, rng, config.dtype),
        bwd=_init_direction("lstm_bwd", input_dim, u, rng, config.dtype),
    )


def embed_batch(tape: Tape | None, instances: list[Instance], tables: EmbeddingTables,
                config: ModelConfig) -> Node:
    """Embed several instances time-major: column t*n + j is step t of instance j."""
    n = len(instances)
    t_steps = len(instances[0].token_ids)
    word_ids = np.stack([inst.token_ids for inst in instances])          # [n x T]
    head_ids = np.empty((n, t_steps), dtype=np.int64)
    tail_ids = np.empty((n, t_steps), dtype=np.int64)
    for j, inst in enumerate(instances):
        head_ids[j], tail_ids[j] = relative_positions(inst, config.max_distance)

    parts = []
    for table, ids in ((tables.word, word_ids),
                       (tables.head_position, head_ids),
                       (tables.tail_position, tail_ids)):
        rows = ad.take_rows(tape, table, ids.T.ravel())   # [(T*n) x dim], time-major
        parts.append(ad.transpose(tape, rows))
    return ad.vconcat(tape, parts)                        # [(word+pos dims) x T*n]


def embed_sequence(tape: Tape | None, instance: Instance, tables: EmbeddingTables,
                   config: ModelConfig) -> Node:
    """Column t is word embedding + head/tail position embeddings of token t."""
    return embed_batch(tape, [instance], tables, config)


def lstm_step(tape: Tape | None, x: Node, h_prev: Node, c_prev: Node,
              direction: LstmDirection) -> tuple[Node, Node]:
    """One LSTM cell update; columns of x are independent batch lanes."""
    u = direction.hidden_size
    pre = ad.add(tape, ad.add(tape, ad.matmul(tape, direction.w_in, x),
                              ad.matmul(tape, direction.w_rec, h_prev)),
                 direction.bias)
    i = ad.sigmoid_map(tape, ad.slice_rows(tape, pre, 0, u))
    f = ad.sigmoid_map(tape, ad.slice_rows(tape, pre, u, 2 * u))
    g = ad.tanh_map(tape, ad.slice_rows(tape, pre, 2 * u, 3 * u))
    o = ad.sigmoid_map(tape, ad.slice_rows(tape, pre, 3 * u, 4 * u))
    c = ad.add(tape, ad.mul(tape, f, c_prev), ad.mul(tape, i, g))
    h = ad.mul(tape, o, ad.tanh_map(tape, c))
    return h, c


def bilstm_encode_batch(tape: Tape | None, embedded: Node, lengths,
                        params: LstmParams, mask_padding: bool = True) -> Node:
    """Bidirectional encoding of a time-major embedded batch.

    The forward direction runs over every step. With ``mask_padding`` the
    reverse direction carries its state unchanged through padded steps and
    padded output columns are zeroed; without it both directions run over
    padding and all columns are kept.
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    n = lengths.size
    total = embedded.shape[1]
    if total % n != 0:
        raise ad.ShapeError(f"embedded width {total} is not a multiple of batch size {n}")
    t_steps = total // n
    u = params.fwd.hidden_size
    dtype = embedded.value.dtype

    h = Node(np.zeros((u, n), dtype=dtype))
    c = Node(np.zeros((u, n), dtype=dtype))
    fwd_states = []
    for t in range(t_steps):
        x = ad.slice_cols(tape, embedded, t * n, (t + 1) * n)
        h, c = lstm_step(tape, x, h, c, params.fwd)
        fwd_states.append(h)

    h = Node(np.zeros((u, n), dtype=dtype))
    c = Node(np.zeros((u, n), dtype=dtype))
    bwd_states: list[Node | None] = [None] * t_steps
    for t in reversed(range(t_steps)):
        x = ad.slice_cols(tape, embedded, t * n, (t + 1) * n)
        h_new, c_new = lstm_step(tape, x, h, c, params.bwd)
        if mask_padding:
            active = lengths > t
            if active.all():
                h, c = h_new, c_new
            else:
                h = ad.where_cols(tape, active, h_new, h)
                c = ad.where_cols(tape, active, c_new, c)
        else:
            h, c = h_new, c_new
        bwd_states[t] = h

    hidden = ad.vconcat(tape, [ad.hconcat(tape, fwd_states),
                               ad.hconcat(tape, bwd_states)])
    if mask_padding:
        keep = (np.arange(t_steps)[:, None] < lengths[None, :]).reshape(1, total)
        hidden = ad.mul_const(tape, hidden, keep.astype(dtype))
    return hidden


def bilstm_encode(tape: Tape | None, embedded: Node, true_length: int,
                  params: LstmParams, mask_padding: bool = True) -> Node:
    """Single-sequence encoding: column t holds forward and reverse states."""
    return bilstm_encode_batch(tape, embedded, [true_length], params, mask_padding)


def instance_columns(batch_size: int, t_steps: int, j: int) -> np.ndarray:
    """Column indices of instance j inside a time-major batch matrix."""
    return j + batch_size * np.arange(t_steps)

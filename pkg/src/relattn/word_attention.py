"""Structured word-level self-attention over the encoder states.

A learned matrix of attention rows, each a distribution over token
positions, turns the encoder output into a fixed number of differently
focused sentence views; the orthogonality penalty pushes those rows apart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Parameter, Tape
from .config import ModelConfig


@dataclass
class WordAttentionParams:
    attn_hidden: Parameter   # [attention_hidden x 2u]
    attn_rows: Parameter     # [rows x attention_hidden]
    mlp_weight: Parameter    # [mlp_size x rows*2u]
    mlp_bias: Parameter      # [mlp_size x 1]


def glorot(rng: np.random.Generator, rows: int, cols: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols)).astype(dtype)


def init_word_attention(config: ModelConfig, rng: np.random.Generator) -> WordAttentionParams:
    two_u = 2 * config.hidden_size
    r = config.word_attention_rows
    dtype = config.dtype
    return WordAttentionParams(
        attn_hidden=Parameter("word_attn_hidden",
                              glorot(rng, config.word_attention_hidden, two_u, dtype)),
        attn_rows=Parameter("word_attn_rows",
                            glorot(rng, r, config.word_attention_hidden, dtype)),
        mlp_weight=Parameter("word_mlp_weight",
                             glorot(rng, config.mlp_size, r * two_u, dtype)),
        mlp_bias=Parameter("word_mlp_bias",
                           np.zeros((config.mlp_size, 1), dtype=dtype)),
    )


def word_attention_matrix(tape: Tape | None, hidden: Node, params: WordAttentionParams,
                          valid_cols: np.ndarray | None = None) -> Node:
    """Attention rows over token positions; each row sums to 1.

    ``valid_cols`` masks padded positions out of the distributions.
    """
    logits = ad.matmul(tape, params.attn_rows,
                       ad.tanh_map(tape, ad.matmul(tape, params.attn_hidden, hidden)))
    return ad.row_softmax(tape, logits, valid_cols=valid_cols)


def weighted_sentence_matrix(tape: Tape | None, attention: Node, hidden: Node) -> Node:
    """One weighted combination of encoder states per attention row."""
    return ad.matmul(tape, attention, ad.transpose(tape, hidden))


def flatten_project(tape: Tape | None, weighted: Node, params: WordAttentionParams) -> Node:
    """Concatenate the weighted rows and project through the ReLU MLP."""
    rows, cols = weighted.shape
    flat = ad.reshape(tape, weighted, rows * cols, 1)   # row-major: row blocks stay contiguous
    return ad.relu_map(tape, ad.add(tape, ad.matmul(tape, params.mlp_weight, flat),
                                    params.mlp_bias))


def attention_penalty(tape: Tape | None, attention: Node) -> Node:
    """Squared Frobenius distance of the attention rows from orthonormality."""
    return ad.frobenius_penalty(tape, attention)

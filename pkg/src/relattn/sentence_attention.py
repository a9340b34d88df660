"""Structured sentence-level attention over a bag of instance representations.

The same structured-attention shape as the word level, applied across the
instances of one bag: attention rows are averaged into a single selection
weighting, which mixes the instance representations into one vector for
relation classification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Parameter, Tape
from .config import ModelConfig
from .word_attention import glorot


@dataclass
class SentAttentionParams:
    attn_hidden: Parameter   # [attention_hidden x mlp_size]
    attn_rows: Parameter     # [rows x attention_hidden]
    class_weight: Parameter  # [num_classes x mlp_size]
    class_bias: Parameter    # [num_classes x 1]


def init_sent_attention(config: ModelConfig, num_classes: int,
                        rng: np.random.Generator) -> SentAttentionParams:
    dtype = config.dtype
    return SentAttentionParams(
        attn_hidden=Parameter("sent_attn_hidden",
                              glorot(rng, config.sent_attention_hidden, config.mlp_size, dtype)),
        attn_rows=Parameter("sent_attn_rows",
                            glorot(rng, config.sent_attention_rows,
                                   config.sent_attention_hidden, dtype)),
        class_weight=Parameter("class_weight",
                               glorot(rng, num_classes, config.mlp_size, dtype)),
        class_bias=Parameter("class_bias", np.zeros((num_classes, 1), dtype=dtype)),
    )


def stack_bag(tape: Tape | None, representations: list[Node]) -> Node:
    """Column j is instance j's representation."""
    if not representations:
        raise ValueError("a bag must contain at least one instance representation")
    return ad.hconcat(tape, representations)


def sentence_attention_matrix(tape: Tape | None, stacked: Node,
                              params: SentAttentionParams) -> Node:
    """Attention rows over the bag's instances; each row sums to 1."""
    logits = ad.matmul(tape, params.attn_rows,
                       ad.tanh_map(tape, ad.matmul(tape, params.attn_hidden, stacked)))
    return ad.row_softmax(tape, logits)


def average_attention(tape: Tape | None, attention: Node) -> Node:
    """Mean of the attention rows: still a distribution over instances."""
    return ad.mean_rows(tape, attention)


def selection_representation(tape: Tape | None, averaged: Node, stacked: Node) -> Node:
    """Attention-weighted sum of the instance representations, as a column."""
    return ad.matmul(tape, stacked, ad.transpose(tape, averaged))


def classify(tape: Tape | None, selection: Node, params: SentAttentionParams) -> Node:
    """Probability row over relation classes."""
    logits = ad.add(tape, ad.matmul(tape, params.class_weight, ad.tanh_map(tape, selection)),
                    params.class_bias)
    return ad.row_softmax(tape, ad.transpose(tape, logits))

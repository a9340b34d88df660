"""Finite-difference verification of every backward rule.

Each check builds a tiny random graph in float64 around one operation (or a
composite pipeline), reduces it to a scalar, and compares the taped gradient
of every parameter against central differences. The final check runs the
whole model's training loss on a miniature configuration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Parameter, Tape, finite_diff_check
from .config import ModelConfig
from .data import SynthSpec, generate_synthetic
from .model import Model
from .training import total_loss

TOLERANCE = 1e-5

TINY_CONFIG = ModelConfig(
    word_dim=3, position_dim=2, max_distance=3, time_steps=5,
    hidden_size=2, word_attention_hidden=4, word_attention_rows=2,
    mlp_size=6, sent_attention_hidden=4, sent_attention_rows=2,
    num_classes=4, batch_size=2, penalty_coef=1.0, l2_coef=1e-4,
    precision="float64", seed=7,
)


@dataclass
class CheckResult:
    name: str
    error: float

    @property
    def ok(self) -> bool:
        return self.error < TOLERANCE


def _param(rng, name, rows, cols, lo=-1.0, hi=1.0):
    return Parameter(name, rng.uniform(lo, hi, size=(rows, cols)))


def _sum(tape, node):
    return ad.sum_all(tape, node)


def op_checks(seed: int = 12345) -> list[CheckResult]:
    """Finite-difference check of each primitive and composite operation."""
    rng = np.random.default_rng(seed)
    results = []

    def check(name, params, build):
        err = finite_diff_check(lambda: build(Tape()), params)
        results.append(CheckResult(name, err))

    a = _param(rng, "a", 3, 4)
    b = _param(rng, "b", 4, 2)
    check("matmul", [a, b],
          lambda t: (t, _sum(t, ad.matmul(t, a, b))))

    c = _param(rng, "c", 3, 4)
    check("add", [a, c], lambda t: (t, _sum(t, ad.add(t, a, c))))

    bias = _param(rng, "bias", 3, 1)
    check("add_broadcast_bias", [a, bias],
          lambda t: (t, _sum(t, ad.mul(t, ad.add(t, a, bias), c))))

    check("add_n", [a, c],
          lambda t: (t, _sum(t, ad.add_n(t, [a, c, a]))))

    check("mul", [a, c], lambda t: (t, _sum(t, ad.mul(t, ad.mul(t, a, c), a))))

    check("scale", [a], lambda t: (t, ad.scale(t, _sum(t, a), -2.5)))

    mask_arr = (rng.random((3, 4)) > 0.4).astype(float)
    check("mul_const", [a],
          lambda t: (t, _sum(t, ad.mul_const(t, ad.mul(t, a, a), mask_arr))))

    check("tanh_map", [a], lambda t: (t, _sum(t, ad.mul(t, ad.tanh_map(t, a), c))))
    check("sigmoid_map", [a], lambda t: (t, _sum(t, ad.mul(t, ad.sigmoid_map(t, a), c))))

    # keep inputs away from the kink at zero
    r_in = Parameter("r_in", np.where(np.abs(z := rng.uniform(-1, 1, (3, 4))) < 0.05,
                                      z + 0.2, z))
    check("relu_map", [r_in], lambda t: (t, _sum(t, ad.mul(t, ad.relu_map(t, r_in), c))))

    check("row_softmax", [a],
          lambda t: (t, _sum(t, ad.mul(t, ad.row_softmax(t, a), c))))
    valid = np.array([True, True, False, True])
    check("row_softmax_masked", [a],
          lambda t: (t, _sum(t, ad.mul(t, ad.row_softmax(t, a, valid_cols=valid), c))))

    t_probe = Node(rng.uniform(-1, 1, (4, 3)))
    check("transpose", [a],
          lambda t: (t, _sum(t, ad.mul(t, ad.transpose(t, a), t_probe))))
    check("reshape", [a],
          lambda t: (t, _sum(t, ad.mul(t, ad.reshape(t, a, 2, 6),
                                       ad.reshape(t, c, 2, 6)))))
    check("hconcat", [a, c],
          lambda t: (t, _sum(t, ad.mul(t, ad.hconcat(t, [a, c]),
                                       ad.hconcat(t, [c, a])))))
    check("vconcat", [a, c],
          lambda t: (t, _sum(t, ad.mul(t, ad.vconcat(t, [a, c]),
                                       ad.vconcat(t, [c, a])))))
    check("slice_rows", [a],
          lambda t: (t, _sum(t, ad.mul(t, ad.slice_rows(t, a, 1, 3),
                                       ad.slice_rows(t, c, 0, 2)))))
    check("slice_cols", [a],
          lambda t: (t, _sum(t, ad.mul(t, ad.slice_cols(t, a, 1, 4),
                                       ad.slice_cols(t, c, 0, 3)))))

    ids = np.array([0, 2, 2, 1, 0])   # duplicates must accumulate
    row_probe = Node(rng.uniform(-1, 1, (5, 4)))
    check("take_rows", [a],
          lambda t: (t, _sum(t, ad.mul(t, ad.take_rows(t, a, ids), row_probe))))
    col_ids = np.array([3, 0, 2])
    col_probe = Node(rng.uniform(-1, 1, (3, 3)))
    check("take_cols", [a],
          lambda t: (t, _sum(t, ad.mul(t, ad.take_cols(t, a, col_ids), col_probe))))

    wmask = np.array([True, False, True, False])
    check("where_cols", [a, c],
          lambda t: (t, _sum(t, ad.mul(t, ad.where_cols(t, wmask, a, c), c))))

    mean_probe = Node(rng.uniform(-1, 1, (1, 4)))
    check("mean_rows", [a],
          lambda t: (t, _sum(t, ad.mul(t, ad.mean_rows(t, a), mean_probe))))
    check("sum_squares", [a], lambda t: (t, ad.sum_squares(t, a)))

    pen = _param(rng, "pen", 2, 5)
    check("frobenius_penalty", [pen], lambda t: (t, ad.frobenius_penalty(t, pen)))

    logits = _param(rng, "logits", 1, 4)
    check("cross_entropy", [logits],
          lambda t: (t, ad.cross_entropy(t, ad.row_softmax(t, logits), 2)))

    results.extend(pipeline_checks(seed))
    return results


def pipeline_checks(seed: int = 54321) -> list[CheckResult]:
    """Composite checks: chained LSTM steps and both attention pipelines."""
    from . import encoder as enc
    from . import sentence_attention as sa
    from . import word_attention as wa

    rng = np.random.default_rng(seed)
    results = []
    u, d_in = 2, 3

    direction = enc.LstmDirection(
        w_in=_param(rng, "w_in", 4 * u, d_in, -0.5, 0.5),
        w_rec=_param(rng, "w_rec", 4 * u, u, -0.5, 0.5),
        bias=_param(rng, "bias", 4 * u, 1, -0.5, 0.5),
        hidden_size=u,
    )
    xs = [Node(rng.uniform(-1, 1, (d_in, 1))) for _ in range(3)]
    weight = Node(rng.uniform(-1, 1, (u, 1)))

    def lstm_chain(tape):
        h = Node(np.zeros((u, 1)))
        c = Node(np.zeros((u, 1)))
        for x in xs:
            h, c = enc.lstm_step(tape, x, h, c, direction)
        return tape, _sum(tape, ad.mul(tape, h, weight))

    err = finite_diff_check(lambda: lstm_chain(Tape()),
                            [direction.w_in, direction.w_rec, direction.bias])
    results.append(CheckResult("lstm_three_steps", err))

    r1, da1, v, t_len = 2, 3, 4, 5
    word = wa.WordAttentionParams(
        attn_hidden=_param(rng, "wah", da1, 2 * u, -0.7, 0.7),
        attn_rows=_param(rng, "war", r1, da1, -0.7, 0.7),
        mlp_weight=_param(rng, "wmw", v, r1 * 2 * u, -0.7, 0.7),
        mlp_bias=_param(rng, "wmb", v, 1, 0.1, 0.4),
    )
    hidden_const = Node(rng.uniform(-1, 1, (2 * u, t_len)))
    probe = Node(rng.uniform(-1, 1, (v, 1)))
    valid = np.array([True, True, True, False, False])

    def word_pipeline(tape):
        attn = wa.word_attention_matrix(tape, hidden_const, word, valid_cols=valid)
        weighted = wa.weighted_sentence_matrix(tape, attn, hidden_const)
        rep = wa.flatten_project(tape, weighted, word)
        loss = ad.add(tape, _sum(tape, ad.mul(tape, rep, probe)),
                      wa.attention_penalty(tape, attn))
        return tape, loss

    err = finite_diff_check(lambda: word_pipeline(Tape()),
                            [word.attn_hidden, word.attn_rows, word.mlp_weight, word.mlp_bias])
    results.append(CheckResult("word_attention_pipeline", err))

    r2, da2, classes, j = 2, 3, 4, 3
    sent = sa.SentAttentionParams(
        attn_hidden=_param(rng, "sah", da2, v, -0.7, 0.7),
        attn_rows=_param(rng, "sar", r2, da2, -0.7, 0.7),
        class_weight=_param(rng, "scw", classes, v, -0.7, 0.7),
        class_bias=_param(rng, "scb", classes, 1, -0.3, 0.3),
    )
    reps = [Node(rng.uniform(0, 1, (v, 1))) for _ in range(j)]

    def sent_pipeline(tape):
        stacked = sa.stack_bag(tape, reps)
        attn = sa.sentence_attention_matrix(tape, stacked, sent)
        averaged = sa.average_attention(tape, attn)
        selection = sa.selection_representation(tape, averaged, stacked)
        probs = sa.classify(tape, selection, sent)
        return tape, ad.cross_entropy(tape, probs, 1)

    err = finite_diff_check(lambda: sent_pipeline(Tape()),
                            [sent.attn_hidden, sent.attn_rows, sent.class_weight, sent.class_bias])
    results.append(CheckResult("sentence_attention_pipeline", err))
    return results


def tiny_model_and_batch(config: ModelConfig = TINY_CONFIG,
                         ) -> tuple[Model, list]:
    """Miniature model plus a two-bag batch (J=3 and J=1) for full-loss checks."""
    spec = SynthSpec(num_relations=config.num_classes, vocab_size=40,
                     bags_per_relation=1, max_bag_size=3, noise_ratio=0.3, seed=5)
    dataset = generate_synthetic(spec, config)
    by_size = sorted(dataset.bags, key=lambda b: -len(b.instances))
    bags = [by_size[0], by_size[-1]]
    while len(bags[0].instances) < 3:   # guarantee a J=3 bag
        bags[0].instances.append(bags[0].instances[0])
    bags[0].instances = bags[0].instances[:3]
    rng = np.random.default_rng(config.seed)
    model = Model(config, len(dataset.vocab), config.num_classes, rng=rng)
    return model, bags


def full_loss_check(h: float = 1e-6, point_seed: int = 15) -> CheckResult:
    """Gradient of the complete training loss on the miniature configuration.

    The check evaluates at a test point whose parameter entries all have
    magnitude in [0.2, 0.6]: with magnitudes that close to zero excluded, no
    true gradient coordinate falls so near zero that central-difference
    rounding noise (about 1e-9 at this loss scale) dominates the relative
    error. Wrong backward rules still show up as order-one errors at any
    test point.
    """
    model, bags = tiny_model_and_batch()
    rng = np.random.default_rng(point_seed)
    for p in model.parameters():
        mag = rng.uniform(0.2, 0.6, size=p.value.shape)
        sign = rng.choice([-1.0, 1.0], size=p.value.shape)
        p.value[...] = mag * sign

    def build():
        tape = Tape()
        loss, _ = total_loss(tape, bags, model)
        return tape, loss

    err = finite_diff_check(build, model.parameters(), h=h)
    return CheckResult("full_model_total_loss", err)


def run_all(verbose: bool = True) -> list[CheckResult]:
    results = op_checks() + [full_loss_check()]
    if verbose:
        width = max(len(r.name) for r in results)
        for r in results:
            status = "ok" if r.ok else "FAIL"
            print(f"{r.name:<{width}}  max rel err {r.error:.3e}  {status}")
        worst = max(results, key=lambda r: r.error)
        print(f"worst: {worst.name} at {worst.error:.3e} (tolerance {TOLERANCE})")
    return results

"""Loss assembly, Adam optimization, the training loop, and checkpoints.

The loss over a batch is the mean bag cross-entropy, plus the word-attention
orthogonality penalty summed over the batch's instances and divided by the
bag count, plus L2 decay on the weight matrices. Bags are processed in
sorted-bag-id order inside a batch so the loss value does not depend on how
the batch was assembled.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Parameter, Tape
from .config import ModelConfig
from .data import Bag, Dataset, Vocab, make_batches
from .model import Model

CHECKPOINT_MAGIC = "relattn-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Loss became non-finite."""


class CheckpointError(ValueError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


@dataclass
class LogRow:
    epoch: int
    batch: int
    loss: float
    penalty: float
    ce: float
    l2: float


@dataclass
class TrainResult:
    model: Model
    log: list[LogRow]
    rng: np.random.Generator   # init/dropout stream, persisted into checkpoints


def total_loss(tape: Tape | None, bags: Sequence[Bag], model: Model,
               dropout_rng: np.random.Generator | None = None,
               ) -> tuple[Node, dict[str, float]]:
    """Differentiable batch loss plus the values of its three terms."""
    if not bags:
        raise ValueError("total_loss needs a non-empty batch")
    cfg = model.config
    ordered = sorted(bags, key=lambda b: b.bag_id)
    instances = [inst for bag in ordered for inst in bag.instances]
    reps, _, penalties = model.instance_outputs(tape, instances, dropout_rng=dropout_rng)

    ce_terms = []
    offset = 0
    for bag in ordered:
        j = len(bag.instances)
        out = model.bag_outputs(tape, reps[offset:offset + j])
        ce_terms.append(ad.cross_entropy(tape, out.probabilities, bag.relation_id))
        offset += j

    n_bags = len(ordered)
    ce = ad.scale(tape, ad.add_n(tape, ce_terms), 1.0 / n_bags)
    loss = ce
    parts = {"ce": ce.value.item(), "penalty": 0.0, "l2": 0.0}
    if cfg.penalty_coef != 0.0:
        penalty = ad.scale(tape, ad.add_n(tape, penalties), cfg.penalty_coef / n_bags)
        loss = ad.add(tape, loss, penalty)
        parts["penalty"] = penalty.value.item()
    if cfg.l2_coef != 0.0:
        l2 = ad.scale(tape, ad.add_n(tape, [ad.sum_squares(tape, w)
                                            for w in model.l2_parameters()]), cfg.l2_coef)
        loss = ad.add(tape, loss, l2)
        parts["l2"] = l2.value.item()
    return loss, parts


def clip_gradients(parameters: Sequence[Parameter], max_norm: float) -> float:
    """Scale all gradients down to the given global norm; returns the norm."""
    total = float(sum((p.grad * p.grad).sum() for p in parameters))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for p in parameters:
            p.grad *= factor
    return norm


def adam_step(parameters: Sequence[Parameter], config: ModelConfig) -> None:
    """Adam with bias correction; each parameter advances its own step count."""
    b1, b2, eps, lr = config.adam_beta1, config.adam_beta2, config.adam_eps, config.learning_rate
    for p in parameters:
        p.step += 1
        g = p.grad
        p.m *= b1
        p.m += (1.0 - b1) * g
        p.s *= b2
        p.s += (1.0 - b2) * g * g
        m_hat = p.m / (1.0 - b1 ** p.step)
        s_hat = p.s / (1.0 - b2 ** p.step)
        p.value -= lr * m_hat / (np.sqrt(s_hat) + eps)


def train(dataset: Dataset, config: ModelConfig,
          pretrained: dict[str, np.ndarray] | None = None,
          log_every: int = 0) -> TrainResult:
    """Full training run; deterministic for a fixed config and seed."""
    config.validate()
    num_classes = config.num_classes or len(dataset.relations)
    if num_classes != len(dataset.relations):
        raise ValueError(f"config.num_classes={num_classes} but dataset has "
                         f"{len(dataset.relations)} relations")
    rng = np.random.default_rng(config.seed)
    model = Model(config, len(dataset.vocab), num_classes, rng=rng,
                  pretrained=pretrained, token_ids=dataset.vocab.token_to_id)
    dropout_rng = rng if config.dropout > 0 else None

    rows: list[LogRow] = []
    for epoch in range(config.epochs):
        batches = make_batches(dataset, config.batch_size,
                               seed=config.seed * 1_000_003 + epoch)
        for b, bags in enumerate(batches):
            model.zero_grad()
            tape = Tape()
            loss, parts = total_loss(tape, bags, model, dropout_rng=dropout_rng)
            value = loss.value.item()
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}")
            ad.backward(tape, loss)
            if config.grad_clip > 0:
                clip_gradients(model.parameters(), config.grad_clip)
            adam_step(model.parameters(), config)
            rows.append(LogRow(epoch, b, value, parts["penalty"], parts["ce"], parts["l2"]))
        if log_every and (epoch + 1) % log_every == 0:
            epoch_rows = [r for r in rows if r.epoch == epoch]
            mean = sum(r.loss for r in epoch_rows) / len(epoch_rows)
            print(f"epoch {epoch + 1}/{config.epochs}  mean loss {mean:.4f}")
    return TrainResult(model, rows, rng)


def write_loss_log(rows: Sequence[LogRow], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("epoch,batch,loss,penalty,ce,l2\n")
        for r in rows:
            fh.write(f"{r.epoch},{r.batch},{r.loss!r},{r.penalty!r},{r.ce!r},{r.l2!r}\n")


# ---------------------------------------------------------------------------
# checkpoints: text header, then named little-endian float32 tensors


@dataclass
class Checkpoint:
    config: ModelConfig
    tensors: dict[str, np.ndarray]
    relations: list[str]
    tokens: list[str]
    rng_state: dict


def checkpoint_from(model: Model, vocab: Vocab, relations: Sequence[str],
                    rng: np.random.Generator | None = None) -> Checkpoint:
    state = rng.bit_generator.state if rng is not None else \
        np.random.default_rng(model.config.seed).bit_generator.state
    return Checkpoint(
        config=model.config.replace(num_classes=model.num_classes),
        tensors={name: p.value.copy() for name, p in model.named_parameters().items()},
        relations=list(relations),
        tokens=list(vocab.id_to_token),
        rng_state=state,
    )


def model_from_checkpoint(ckpt: Checkpoint) -> tuple[Model, Vocab]:
    vocab = Vocab({t: i for i, t in enumerate(ckpt.tokens)}, list(ckpt.tokens))
    model = Model(ckpt.config, len(vocab), len(ckpt.relations), tensors=ckpt.tensors)
    return model, vocab


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n".encode())
        for key, value in ckpt.config.to_dict().items():
            fh.write(f"config {key} {json.dumps(value)}\n".encode())
        fh.write(f"relations {json.dumps(ckpt.relations)}\n".encode())
        fh.write(f"tokens {json.dumps(ckpt.tokens)}\n".encode())
        fh.write(f"rng {json.dumps(ckpt.rng_state)}\n".encode())
        for name, arr in ckpt.tensors.items():
            rows, cols = arr.shape
            fh.write(f"tensor {name} {rows} {cols}\n".encode())
            fh.write(arr.astype("<f4").tobytes(order="C"))
        fh.write(b"end\n")


def _read_line(fh, path: Path) -> str:
    raw = fh.readline()
    if not raw:
        raise CheckpointError(f"{path}: truncated checkpoint (unexpected end of file)")
    return raw.decode("utf-8").rstrip("\n")


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    with path.open("rb") as fh:
        head = _read_line(fh, path).split()
        if len(head) != 2 or head[0] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        if head[1] != str(CHECKPOINT_VERSION):
            raise CheckpointError(f"{path}: unsupported checkpoint version {head[1]}")
        config_values: dict = {}
        relations: list[str] | None = None
        tokens: list[str] | None = None
        rng_state: dict | None = None
        tensors: dict[str, np.ndarray] = {}
        while True:
            line = _read_line(fh, path)
            kind, _, rest = line.partition(" ")
            if kind == "end":
                break
            if kind == "config":
                key, _, value = rest.partition(" ")
                config_values[key] = json.loads(value)
            elif kind == "relations":
                relations = json.loads(rest)
            elif kind == "tokens":
                tokens = json.loads(rest)
            elif kind == "rng":
                rng_state = json.loads(rest)
            elif kind == "tensor":
                try:
                    name, rows_s, cols_s = rest.split()
                    rows, cols = int(rows_s), int(cols_s)
                except ValueError as exc:
                    raise CheckpointError(f"{path}: bad tensor header {line!r}") from exc
                nbytes = rows * cols * struct.calcsize("<f")
                blob = fh.read(nbytes)
                if len(blob) != nbytes:
                    raise CheckpointError(f"{path}: truncated tensor {name!r}")
                tensors[name] = np.frombuffer(blob, dtype="<f4").reshape(rows, cols).copy()
            else:
                raise CheckpointError(f"{path}: unrecognized section {kind!r}")
        if relations is None or tokens is None or rng_state is None or not config_values:
            raise CheckpointError(f"{path}: incomplete checkpoint header")
    config = ModelConfig.from_dict(config_values)
    return Checkpoint(config, tensors, relations, tokens, rng_state)

"""Contrastive objective, RMSprop, and the epoch/batch training loop.

Label convention: y=0 marks a similar pair (genuine, genuine) and y=1 a
dissimilar one; the squared-distance attraction term is gated by (1-y) and
the margin hinge by y.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import persist
from . import tensor as T
from .model import embed
from .seeding import stable_rng
from .tensor import Tape, Tensor, backward


@dataclass
class ContrastiveLossParams:
    alpha: float = 0.5
    beta: float = 0.5
    margin: float = 1.0

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError(f"margin must be positive, got {self.margin}")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")


def contrastive_loss(e1, e2, y, params):
    """Mean over the batch of  alpha*(1-y)*D^2 + beta*y*max(0, margin - D)^2

    with D the row-wise Euclidean distance between the two embeddings.
    Returns a differentiable scalar tensor.
    """
    if e1.shape != e2.shape:
        raise ValueError(f"embedding shapes differ: {tuple(e1.shape)} vs {tuple(e2.shape)}")
    y = np.asarray(y)
    if y.shape != (e1.shape[0],):
        raise ValueError(f"labels shape {y.shape} != ({e1.shape[0]},)")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 (similar) or 1 (dissimilar)")
    y_t = Tensor(y.astype(e1.dtype))
    inv_y = Tensor((1 - y).astype(e1.dtype))

    d2 = T.row_sum(T.square(T.sub(e1, e2)))
    d = T.sqrt(d2)
    hinge = T.max_with_scalar(T.sub(T.full(d.shape, params.margin), d), 0.0)
    per_pair = T.add(
        T.scalar_mul(T.mul(inv_y, d2), params.alpha),
        T.scalar_mul(T.mul(y_t, T.square(hinge)), params.beta),
    )
    return T.mean_all(per_pair)


@dataclass
class RmspropState:
    """RMSprop with decoupled-from-nothing weight decay folded into the gradient:

        g <- g + weight_decay * theta
        acc <- rho * acc + (1 - rho) * g^2
        theta <- theta - lr * g / (sqrt(acc) + epsilon)
    """

    learning_rate: float = 1e-4
    rho: float = 0.9
    epsilon: float = 1e-8
    weight_decay: float = 5e-4
    acc: dict = field(default_factory=dict)

    @staticmethod
    def for_model(model, learning_rate=1e-4, rho=0.9, epsilon=1e-8, weight_decay=5e-4):
        acc = {
            name: np.zeros_like(t.data)
            for name, t in model.params.items()
            if t.requires_grad
        }
        return RmspropState(learning_rate, rho, epsilon, weight_decay, acc)


def rmsprop_step(params, grads, state):
    """Update every trainable parameter in place; deterministic, order-free."""
    for name, p in params.items():
        if not p.requires_grad:
            continue
        g = grads.get(p)
        if g is None:
            raise KeyError(f"missing gradient for parameter {name!r}")
        if name not in state.acc:
            state.acc[name] = np.zeros_like(p.data)
        dt = p.data.dtype.type
        g = g + dt(state.weight_decay) * p.data
        acc = state.acc[name]
        acc *= dt(state.rho)
        acc += dt(1.0 - state.rho) * g * g
        p.data -= dt(state.learning_rate) * g / (np.sqrt(acc) + dt(state.epsilon))


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    seed: int = 0
    lr_decay_epochs: tuple = (10,)
    lr_decay_factor: float = 0.1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class TrainHistory:
    mean_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    wall_seconds: list = field(default_factory=list)


def _batch_arrays(pairs, order):
    a = np.stack([pairs[i].image_a for i in order])
    b = np.stack([pairs[i].image_b for i in order])
    y = np.array([pairs[i].y for i in order], dtype=np.int64)
    return a, b, y


def train(model, pairs, config, loss_params, opt_state, *,
          out_dir=None, checkpoint_meta=None, start_epoch=0, log=None):
    """Run the training loop; returns (model, history).

    Expects materialized pairs (image arrays attached). Shuffling and
    dropout masks derive from config.seed, so a rerun with the same seed
    and data produces a bit-identical final checkpoint. When out_dir is
    given, a checkpoint (parameters, optimizer accumulators, pipeline
    metadata) is written after every epoch.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no training pairs")
    for p in pairs:
        if p.image_a is None or p.image_b is None:
            raise ValueError("pairs must be materialized before training")
    history = TrainHistory()
    n = len(pairs)
    lr0 = opt_state.learning_rate
    for epoch in range(start_epoch, config.epochs):
        t0 = time.perf_counter()
        if epoch in config.lr_decay_epochs:
            opt_state.learning_rate = opt_state.learning_rate * config.lr_decay_factor
        perm = stable_rng(config.seed, "shuffle", epoch).permutation(n)
        total = 0.0
        for bi, lo in enumerate(range(0, n, config.batch_size)):
            order = perm[lo : lo + config.batch_size]
            a, b, y = _batch_arrays(pairs, order)
            with Tape() as tape:
                e1 = embed(model, a, mode="train",
                           rng=stable_rng(config.seed, "dropout", epoch, bi, 0))
                e2 = embed(model, b, mode="train",
                           rng=stable_rng(config.seed, "dropout", epoch, bi, 1))
                loss = contrastive_loss(e1, e2, y, loss_params)
            value = loss.item()
            if not np.isfinite(value):
                raise RuntimeError(
                    f"non-finite loss {value} at epoch {epoch} batch {bi}"
                )
            grads = backward(loss, tape)
            rmsprop_step(model.params, grads, opt_state)
            total += value * len(order)
        mean_loss = total / n
        history.mean_loss.append(mean_loss)
        history.wall_seconds.append(time.perf_counter() - t0)
        if log is not None:
            log(f"epoch {epoch + 1}/{config.epochs}: mean loss {mean_loss:.6f} "
                f"({history.wall_seconds[-1]:.1f}s)")
        if out_dir is not None:
            meta = dict(checkpoint_meta or {})
            meta["train.epochs_completed"] = str(epoch + 1)
            meta["train.lr"] = repr(opt_state.learning_rate)
            meta["train.base_lr"] = repr(lr0)
            persist.save_model(f"{out_dir}/checkpoint.sgnt", model, meta,
                               opt_acc=opt_state.acc)
    return model, history


def write_history(history, path):
    """Tab-separated epoch/loss table (timings stay on the log stream)."""
    lines = ["epoch\tmean_loss"]
    for i, loss in enumerate(history.mean_loss):
        lines.append(f"{i + 1}\t{loss!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

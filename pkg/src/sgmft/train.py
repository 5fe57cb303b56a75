"""Adam optimizer, training loop, and evaluation.

Deterministic by construction: batch order comes from one seeded PCG64
stream, and parameters are touched by a single thread. Metrics are plain
records; the CLI serializes them to CSV alongside a JSON run manifest.
"""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .model import ModelParams, ModelVariant, cross_entropy, forward, predict
from .tensor import Tensor

__all__ = [
    "TrainConfig",
    "EpochMetrics",
    "AdamState",
    "TrainingError",
    "adam_step",
    "train",
    "evaluate",
    "write_metrics_csv",
]


class TrainingError(RuntimeError):
    """Training aborted (non-finite gradient or loss, or an empty dataset)."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    batch_size: int = 20
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("betas must lie strictly in (0, 1)")
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("invalid rate or sizes")


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float
    seconds: float


@dataclass
class AdamState:
    """First/second moment buffers per named parameter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> None:
    """One bias-corrected Adam update over all named parameters (in place)."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * g * g
        m_hat = m / (1.0 - config.beta1 ** t)
        v_hat = v / (1.0 - config.beta2 ** t)
        p.data -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)


def _batched_loss(
    params: ModelParams,
    variant: ModelVariant,
    text: np.ndarray,
    image: np.ndarray,
    labels: np.ndarray,
) -> tuple[Tensor, np.ndarray]:
    probs = forward(Tensor(text), Tensor(image), variant, params)
    return cross_entropy(probs, labels), predict(probs)


def train(
    params: ModelParams,
    variant: ModelVariant,
    train_set: Dataset,
    config: TrainConfig,
    test_set: Dataset | None = None,
    max_steps: int | None = None,
) -> list[EpochMetrics]:
    """Seeded mini-batch training; returns per-epoch metrics.

    Train accuracy is accumulated from the forward passes of the epoch's own
    batches. Divergence (non-finite loss or gradient) aborts with the epoch
    and step in the message.
    """
    if len(train_set) == 0:
        raise TrainingError("empty training set")
    rng = np.random.default_rng(np.random.PCG64(config.seed))
    state = AdamState()
    history: list[EpochMetrics] = []
    step = 0
    for epoch in range(config.epochs):
        started = time.perf_counter()
        order = rng.permutation(len(train_set))
        losses, hits, seen = [], 0, 0
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo: lo + config.batch_size]
            try:
                loss, preds = _batched_loss(
                    params, variant,
                    train_set.text[batch], train_set.image[batch],
                    train_set.labels[batch],
                )
            except FloatingPointError as exc:
                raise TrainingError(
                    f"divergence at epoch {epoch}, step {step}: {exc}"
                ) from exc
            for p in params.named.values():
                p.zero_grad()
            loss.backward()
            grads = {
                name: p.grad for name, p in params.named.items() if p.grad is not None
            }
            try:
                adam_step(params.named, grads, state, config)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}, step {step}: {exc}") from exc
            losses.append(loss.item() * len(batch))
            hits += int((preds == train_set.labels[batch]).sum())
            seen += len(batch)
            step += 1
            if max_steps is not None and step >= max_steps:
                break
        test_acc = evaluate(params, variant, test_set) if test_set is not None else float("nan")
        history.append(EpochMetrics(
            epoch=epoch,
            loss=sum(losses) / seen,
            train_acc=hits / seen,
            test_acc=test_acc,
            seconds=time.perf_counter() - started,
        ))
        if max_steps is not None and step >= max_steps:
            break
    return history


def evaluate(
    params: ModelParams, variant: ModelVariant, dataset: Dataset, batch_size: int = 64
) -> float:
    """Classification accuracy; argmax ties resolve to the lowest class index."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty split")
    hits = 0
    for lo in range(0, len(dataset), batch_size):
        hi = min(lo + batch_size, len(dataset))
        probs = forward(
            Tensor(dataset.text[lo:hi]), Tensor(dataset.image[lo:hi]), variant, params
        )
        hits += int((predict(probs) == dataset.labels[lo:hi]).sum())
    return hits / len(dataset)


def write_metrics_csv(history: list[EpochMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "train_acc", "test_acc", "seconds"])
        for m in history:
            writer.writerow([m.epoch, repr(m.loss), repr(m.train_acc),
                             repr(m.test_acc), f"{m.seconds:.3f}"])


def metrics_as_dicts(history: list[EpochMetrics]) -> list[dict]:
    return [asdict(m) for m in history]

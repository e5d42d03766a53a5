"""Training protocol: proportional task sampling, linear warmup/decay, Adam
over the trainable parameters, per-epoch evaluation with best-checkpoint
selection by average metric, and median aggregation across repeated runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics as metrics_mod
from .model import MultiTaskModel


class NumericError(ArithmeticError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 1e-5
    warmup_fraction: float = 0.10
    seed: int = 0
    eval_batch_size: int = 64
    eval_every: int = 1
    dropout_seed_offset: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in (0, 1)")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")


class Adam:
    """Adam with bias correction; no weight decay.

    Moment state exists only for trainable parameters and is allocated
    lazily on the first nonzero gradient, which is exactly equivalent to
    dense Adam because zero moments and a zero gradient produce a zero
    update.
    """

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [p for p in params if p.trainable]
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._state = {}

    def zero_grad(self):
        for p in self.params:
            p.tensor.grad = None

    def step(self, lr):
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        # lr * (m/c1) / (sqrt(v/c2) + eps) == alpha * m / (sqrt(v) + eps2)
        alpha = lr * math.sqrt(c2) / c1
        eps2 = self.eps * math.sqrt(c2)
        for p in self.params:
            g = p.tensor.grad
            st = self._state.get(p.name)
            if g is None:
                if st is None:
                    continue  # zero gradient, zero moments: update is exactly zero
                m, v = st
                m *= self.beta1
                v *= self.beta2
            else:
                if st is None:
                    st = (np.zeros_like(p.data), np.zeros_like(p.data))
                    self._state[p.name] = st
                m, v = st
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * (g * g)
            denom = np.sqrt(v)
            denom += eps2
            update = m / denom
            update *= alpha
            p.tensor.data -= update

    def has_state(self, name):
        return name in self._state


def sample_task(sizes, rng):
    """Pick a task position with probability proportional to its size."""
    sizes = np.asarray(sizes, dtype=np.float64)
    if sizes.ndim != 1 or len(sizes) == 0 or (sizes < 0).any():
        raise ValueError("sizes must be a non-empty vector of nonnegative counts")
    total = sizes.sum()
    if total <= 0:
        raise ValueError("at least one task must have a positive size")
    return int(rng.choice(len(sizes), p=sizes / total))


def lr_at_step(step, total_steps, peak, warmup_fraction=0.10):
    """Linear rise to `peak` over the warmup steps, then linear decay to 0."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside 0..{total_steps}")
    warmup = max(1, math.ceil(warmup_fraction * total_steps))
    if step <= warmup:
        return peak * step / warmup
    return peak * (total_steps - step) / (total_steps - warmup)


@dataclass
class Batch:
    task_index: int
    sequences: list
    labels: np.ndarray
    example_tasks: list = None

    def __post_init__(self):
        if self.example_tasks is not None:
            distinct = set(self.example_tasks)
            if distinct != {self.task_index}:
                raise ValueError(
                    f"mixed-task batch: tagged {sorted(distinct)}, "
                    f"expected only {self.task_index}")


def train_step(model, batch: Batch, optimizer: Adam, lr, rng=None, training=True):
    """One optimization step on a single-task batch; returns the loss."""
    optimizer.zero_grad()
    loss = model.loss_for_batch(batch.sequences, batch.labels, batch.task_index,
                                training=training, rng=rng)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss {value} on task {batch.task_index}")
    loss.backward()
    optimizer.step(lr)
    return value


@dataclass
class CheckpointMeta:
    epoch: int
    per_task: dict
    average: float
    path: str = None


@dataclass
class TrainResult:
    history: list
    best: CheckpointMeta
    best_bytes: bytes
    losses: list = field(default_factory=list)


def pick_best(history):
    """Highest average metric wins; ties go to the earliest epoch."""
    if not history:
        raise ValueError("no checkpoints to pick from")
    best = history[0]
    for meta in history[1:]:
        if meta.average > best.average:
            best = meta
    return best


class _TaskCursor:
    """Deterministic shuffled cycling over one task's training examples."""

    def __init__(self, examples, rng):
        self.examples = examples
        self.rng = rng
        self.order = []
        self.pos = 0

    def next_batch(self, size):
        seqs, labels = [], []
        for _ in range(size):
            if self.pos >= len(self.order):
                self.order = self.rng.permutation(len(self.examples))
                self.pos = 0
            ids, label = self.examples[self.order[self.pos]]
            self.pos += 1
            seqs.append(ids)
            labels.append(label)
        return seqs, np.asarray(labels, dtype=np.int64)


def run_training(model: MultiTaskModel, config: TrainConfig, tasks=None,
                 metrics_path=None, log=None):
    """Train with proportional sampling and per-epoch evaluation.

    One epoch is sum over tasks of ceil(task size / batch size) steps; each
    step samples a task proportionally to its training-set size and draws a
    full batch from it. Every evaluation epoch is scored on all tasks and
    the single checkpoint with the highest average metric (earliest epoch on
    ties) is kept for all tasks. Deterministic for a fixed seed when dropout
    is disabled.
    """
    tasks = list(tasks) if tasks is not None else list(model.task_specs)
    if not tasks:
        raise ValueError("run_training needs at least one task")
    for spec in tasks:
        if spec.data is None or not spec.data.train:
            raise ValueError(f"task {spec.name!r} has no training data")

    rng = np.random.default_rng(config.seed)
    dropout_rng = (np.random.default_rng(config.seed + config.dropout_seed_offset)
                   if model.config.dropout_rate > 0 else None)
    sizes = [len(spec.data.train) for spec in tasks]
    steps_per_epoch = sum(math.ceil(s / config.batch_size) for s in sizes)
    total_steps = steps_per_epoch * config.epochs
    cursors = {spec.index: _TaskCursor(spec.data.train, rng) for spec in tasks}
    optimizer = Adam(model.trainable_parameters())

    records = []
    history = []
    losses = []
    best = None
    best_bytes = None
    step = 0
    for epoch in range(1, config.epochs + 1):
        epoch_loss = 0.0
        for _ in range(steps_per_epoch):
            spec = tasks[sample_task(sizes, rng)]
            seqs, labels = cursors[spec.index].next_batch(config.batch_size)
            step += 1
            lr = lr_at_step(step, total_steps, config.learning_rate,
                            config.warmup_fraction)
            epoch_loss += train_step(
                model, Batch(spec.index, seqs, labels), optimizer, lr,
                rng=dropout_rng, training=True)
        losses.append(epoch_loss / steps_per_epoch)
        if log:
            log(f"epoch {epoch}: mean loss {losses[-1]:.4f}")

        if epoch % config.eval_every == 0 or epoch == config.epochs:
            report = metrics_mod.evaluate(model, tasks,
                                          batch_size=config.eval_batch_size)
            per_task = {row.name: row.value for row in report.rows}
            for row in report.rows:
                records.append({"epoch": epoch, "task": row.name,
                                "metric": row.kind, "value": row.value})
            records.append({"epoch": epoch, "task": "_average",
                            "metric": "average", "value": report.average})
            meta = CheckpointMeta(epoch=epoch, per_task=per_task,
                                  average=report.average)
            history.append(meta)
            if log:
                log(f"epoch {epoch}: average metric {report.average:.4f}")
            if best is None or meta.average > best.average:
                best = meta
                best_bytes = model.save_bytes()

    if metrics_path:
        with open(metrics_path, "w", encoding="utf-8") as f:
            for rec in records:
                f.write(json.dumps(rec, sort_keys=True))
                f.write("\n")
    return TrainResult(history=history, best=best, best_bytes=best_bytes,
                       losses=losses)


def aggregate_runs_median(runs):
    """Per-task medians plus the median of run averages.

    `runs` is a list of {task: value} dicts covering identical task sets.
    Even run counts take the lower median so a reported value always comes
    from an actual run.
    """
    if not runs:
        raise ValueError("need at least one run")
    keys = set(runs[0])
    for r in runs[1:]:
        if set(r) != keys:
            raise ValueError("runs cover different task sets")

    def lower_median(values):
        values = sorted(values)
        return values[(len(values) - 1) // 2]

    per_task = {k: lower_median([r[k] for r in runs]) for k in sorted(keys)}
    averages = [sum(r.values()) / len(r) for r in runs]
    return per_task, lower_median(averages)

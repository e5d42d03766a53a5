"""Evaluation metrics, whole-model evaluation with forward-pass accounting,
and the inference benchmark comparing one-pass and per-task variants."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

METRIC_KINDS = ("accuracy", "f1", "matthews", "spearman", "pearson")


def _check_pair(predictions, labels):
    p = np.asarray(predictions)
    l = np.asarray(labels)
    if p.shape != l.shape or p.ndim != 1:
        raise ValueError(f"predictions {p.shape} and labels {l.shape} must be "
                         "equal-length vectors")
    if p.size == 0:
        raise ValueError("cannot score empty inputs")
    return p, l


def accuracy(predictions, labels):
    p, l = _check_pair(predictions, labels)
    return float(np.mean(p == l))


def _confusion(p, l):
    tp = int(np.sum((p == 1) & (l == 1)))
    tn = int(np.sum((p == 0) & (l == 0)))
    fp = int(np.sum((p == 1) & (l == 0)))
    fn = int(np.sum((p == 0) & (l == 1)))
    return tp, tn, fp, fn


def f1_binary(predictions, labels):
    """F1 of the positive class; 0 when the denominator degenerates."""
    p, l = _check_pair(predictions, labels)
    tp, _, fp, fn = _confusion(p, l)
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2.0 * tp / denom


def matthews(predictions, labels):
    """Matthews correlation coefficient; 0 when any marginal factor is 0."""
    p, l = _check_pair(predictions, labels)
    tp, tn, fp, fn = _confusion(p, l)
    factors = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if factors == 0:
        return 0.0
    return (tp * tn - fp * fn) / np.sqrt(float(factors))


def pearson(predictions, labels):
    """Pearson correlation; 0 when either side has zero variance."""
    p, l = _check_pair(predictions, labels)
    p = p.astype(np.float64)
    l = l.astype(np.float64)
    pc = p - p.mean()
    lc = l - l.mean()
    denom = np.sqrt((pc * pc).sum() * (lc * lc).sum())
    if denom == 0:
        return 0.0
    # rounding can land a hair outside [-1, 1]
    return float(np.clip((pc * lc).sum() / denom, -1.0, 1.0))


def average_ranks(values):
    """1-based ranks with tied values assigned their average rank."""
    x = np.asarray(values, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(predictions, labels):
    """Pearson correlation of average-tied ranks."""
    p, l = _check_pair(predictions, labels)
    return pearson(average_ranks(p), average_ranks(l))


_METRICS = {"accuracy": accuracy, "f1": f1_binary, "matthews": matthews,
            "spearman": spearman, "pearson": pearson}


def compute_metric(kind, predictions, labels):
    if kind not in _METRICS:
        raise ValueError(f"unknown metric {kind!r}; choose from {METRIC_KINDS}")
    return _METRICS[kind](predictions, labels)


@dataclass
class TaskResult:
    name: str
    kind: str
    value: float


@dataclass
class EvalReport:
    rows: list
    average: float
    forward_passes: int
    wall_clock: float


def evaluate(model, tasks=None, batch_size=64):
    """Score every task's eval split, counting encoder passes.

    Each batch is served like production traffic: the model predicts all
    tasks for it (one pass for one-pass variants, N passes for per-task
    prompting) and the batch's own task is scored by its metric. The model's
    weights are untouched.
    """
    tasks = list(tasks) if tasks is not None else list(model.task_specs)
    start_passes = model.forward_passes
    start = time.perf_counter()
    rows = []
    for spec in sorted(tasks, key=lambda s: s.index):
        if spec.data is None or not spec.data.eval:
            raise ValueError(f"task {spec.name!r} has no eval split")
        preds = []
        labels = []
        for lo in range(0, len(spec.data.eval), batch_size):
            chunk = spec.data.eval[lo:lo + batch_size]
            seqs = [ids for ids, _ in chunk]
            labels.extend(label for _, label in chunk)
            probs = model.predict_all_tasks(seqs)[spec.name]
            preds.extend(np.argmax(probs, axis=1).tolist())
        rows.append(TaskResult(spec.name, spec.metric,
                               compute_metric(spec.metric, preds, labels)))
    wall = time.perf_counter() - start
    average = sum(r.value for r in rows) / len(rows)
    return EvalReport(rows=rows, average=average,
                      forward_passes=model.forward_passes - start_passes,
                      wall_clock=wall)


def format_report(report, title="evaluation"):
    lines = [f"# {title}"]
    width = max([len(r.name) for r in report.rows] + [7])
    for r in report.rows:
        lines.append(f"{r.name:<{width}}  {r.kind:<9} {r.value:.4f}")
    lines.append(f"{'average':<{width}}  {'':<9} {report.average:.4f}")
    lines.append(f"forward passes: {report.forward_passes}")
    return "\n".join(lines)


def report_records(report):
    """Machine-readable records; timing is a separate record so the rest is
    byte-stable across runs."""
    recs = [{"record": "task", "task": r.name, "metric": r.kind, "value": r.value}
            for r in report.rows]
    recs.append({"record": "average", "value": report.average})
    recs.append({"record": "forward_passes", "value": report.forward_passes})
    recs.append({"record": "timing", "wall_clock_s": report.wall_clock})
    return recs


@dataclass
class BenchRow:
    name: str
    passes_per_call: int
    sequence_length: int
    tokens_per_call: int
    median_seconds: float


@dataclass
class BenchResult:
    rows: list
    batch_size: int
    input_length: int
    repetitions: int


def bench(models, token_seqs, repetitions=5, warmup=1):
    """Time `predict_all_tasks` on identical inputs for each named model.

    Reports encoder passes per call, assembled sequence length, total tokens
    processed per call, and the median wall-clock over `repetitions` (after
    `warmup` unmeasured calls). Per-task prompting processes shorter
    sequences but needs one pass per task; the one-pass variants process a
    single longer sequence.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    token_seqs = list(token_seqs)
    input_length = max(len(s) for s in token_seqs)
    rows = []
    for name, model in models:
        for _ in range(warmup):
            model.predict_all_tasks(token_seqs)
        timings = []
        passes = None
        for _ in range(repetitions):
            before = model.forward_passes
            t0 = time.perf_counter()
            model.predict_all_tasks(token_seqs)
            timings.append(time.perf_counter() - t0)
            passes = model.forward_passes - before
        single = model.variant.value == "per_task_prompt"
        seq_len = model.sequence_length(input_length, single_task=single)
        rows.append(BenchRow(
            name=name,
            passes_per_call=passes,
            sequence_length=seq_len,
            tokens_per_call=passes * len(token_seqs) * seq_len,
            median_seconds=float(np.median(timings)),
        ))
    return BenchResult(rows=rows, batch_size=len(token_seqs),
                       input_length=input_length, repetitions=repetitions)


def format_bench(result):
    header = (f"{'variant':<18} {'passes':>6} {'seq_len':>8} "
              f"{'tokens/call':>12} {'median_s':>10}")
    lines = [f"# benchmark: batch={result.batch_size} input_len="
             f"{result.input_length} reps={result.repetitions}", header]
    for r in result.rows:
        lines.append(f"{r.name:<18} {r.passes_per_call:>6} {r.sequence_length:>8} "
                     f"{r.tokens_per_call:>12} {r.median_seconds:>10.4f}")
    return "\n".join(lines)

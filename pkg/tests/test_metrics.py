import itertools

import numpy as np
import pytest

from mtop import metrics as M
from mtop.model import ModelVariant

from conftest import make_model


# ----- hand cases -------------------------------------------------------------


def test_accuracy_perfect():
    assert M.compute_metric("accuracy", [1, 0, 1], [1, 0, 1]) == 1.0


def test_matthews_balanced_confusion_is_zero():
    # TP=TN=FP=FN=1
    assert M.compute_metric("matthews", [1, 0, 1, 0], [1, 0, 0, 1]) == 0.0


def test_f1_hand_case():
    # TP=1, FP=1, FN=1 -> 2/(2+1+1)
    assert M.compute_metric("f1", [1, 1, 0], [1, 0, 1]) == 0.5


def test_spearman_strictly_increasing_is_one():
    assert M.compute_metric("spearman", [0.1, 0.5, 2.0, 3.0],
                            [1, 2, 3, 4]) == pytest.approx(1.0)


def test_unknown_metric_rejected():
    with pytest.raises(ValueError, match="unknown metric"):
        M.compute_metric("auc", [1], [1])


def test_length_mismatch_and_empty_rejected():
    with pytest.raises(ValueError):
        M.compute_metric("accuracy", [1, 0], [1])
    with pytest.raises(ValueError):
        M.compute_metric("accuracy", [], [])


# ----- brute-force confusion-matrix oracle -------------------------------------


def oracle_confusion(preds, labels):
    tp = sum(1 for p, l in zip(preds, labels) if p == 1 and l == 1)
    tn = sum(1 for p, l in zip(preds, labels) if p == 0 and l == 0)
    fp = sum(1 for p, l in zip(preds, labels) if p == 1 and l == 0)
    fn = sum(1 for p, l in zip(preds, labels) if p == 0 and l == 1)
    return tp, tn, fp, fn


def oracle_accuracy(preds, labels):
    return sum(1 for p, l in zip(preds, labels) if p == l) / len(preds)


def oracle_f1(preds, labels):
    tp, tn, fp, fn = oracle_confusion(preds, labels)
    return 0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)


def oracle_matthews(preds, labels):
    tp, tn, fp, fn = oracle_confusion(preds, labels)
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    return 0.0 if denom == 0 else (tp * tn - fp * fn) / denom ** 0.5


def test_binary_metrics_match_oracle_exhaustively():
    for n in range(1, 7):
        for preds in itertools.product((0, 1), repeat=n):
            for labels in itertools.product((0, 1), repeat=n):
                assert M.compute_metric("accuracy", preds, labels) == \
                    pytest.approx(oracle_accuracy(preds, labels), abs=1e-12)
                assert M.compute_metric("f1", preds, labels) == \
                    pytest.approx(oracle_f1(preds, labels), abs=1e-12)
                assert M.compute_metric("matthews", preds, labels) == \
                    pytest.approx(oracle_matthews(preds, labels), abs=1e-12)


# ----- correlations -----------------------------------------------------------


def test_spearman_invariant_under_monotone_transforms():
    rng = np.random.default_rng(0)
    preds = rng.uniform(-2, 2, 40)
    labels = rng.uniform(-2, 2, 40)
    base = M.compute_metric("spearman", preds, labels)
    for f in (np.exp, lambda x: x ** 3, lambda x: 10 * x + 3):
        assert M.compute_metric("spearman", f(preds), labels) == pytest.approx(base)


def test_spearman_average_ties():
    assert M.average_ranks([1.0, 1.0, 2.0]).tolist() == [1.5, 1.5, 3.0]


def test_pearson_zero_variance_degenerates_to_zero():
    assert M.compute_metric("pearson", [1.0, 1.0, 1.0], [1, 2, 3]) == 0.0
    assert M.compute_metric("spearman", [2.0, 2.0], [1, 2]) == 0.0


def test_metric_ranges():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(2, 12))
        p = rng.integers(0, 2, n)
        l = rng.integers(0, 2, n)
        assert 0.0 <= M.compute_metric("accuracy", p, l) <= 1.0
        assert 0.0 <= M.compute_metric("f1", p, l) <= 1.0
        assert -1.0 <= M.compute_metric("matthews", p, l) <= 1.0
        x = rng.uniform(-3, 3, n)
        y = rng.uniform(-3, 3, n)
        assert -1.0 <= M.compute_metric("spearman", x, y) <= 1.0
        assert -1.0 <= M.compute_metric("pearson", x, y) <= 1.0


# ----- evaluate ---------------------------------------------------------------


def eight_task_setup(tiny_tasks):
    import mtop.data as D
    _, vocab, task_data = tiny_tasks
    td8 = [D.TaskData(f"x{i}", 2, "accuracy", task_data[i % 3].train,
                      task_data[i % 3].eval) for i in range(8)]
    return vocab, td8


def test_evaluate_counts_passes_one_pass_variant(tiny_tasks):
    vocab, td8 = eight_task_setup(tiny_tasks)
    m = make_model(td8, vocab, variant=ModelVariant.MTOP)
    batch_size = 8
    batches = sum(-(-len(td.eval) // batch_size) for td in td8)
    report = M.evaluate(m, batch_size=batch_size)
    assert report.forward_passes == batches


def test_evaluate_counts_passes_per_task_variant(tiny_tasks):
    vocab, td8 = eight_task_setup(tiny_tasks)
    m = make_model(td8, vocab, variant=ModelVariant.PER_TASK_PROMPT)
    batch_size = 8
    batches = sum(-(-len(td.eval) // batch_size) for td in td8)
    report = M.evaluate(m, batch_size=batch_size)
    assert report.forward_passes == 8 * batches


def test_evaluate_average_and_report_shape(tiny_tasks):
    _, vocab, task_data = tiny_tasks
    m = make_model(task_data, vocab)
    report = M.evaluate(m, batch_size=16)
    assert len(report.rows) == 3
    assert report.average == pytest.approx(sum(r.value for r in report.rows) / 3)
    text = M.format_report(report)
    assert "average" in text and "forward passes" in text
    records = M.report_records(report)
    kinds = [r["record"] for r in records]
    assert kinds.count("task") == 3 and "timing" in kinds


def test_untrained_model_near_chance_on_balanced_eval(tiny_tasks):
    _, vocab, task_data = tiny_tasks
    m = make_model(task_data, vocab, seed=123)
    report = M.evaluate(m, batch_size=32)
    for row in report.rows:
        assert abs(row.value - 0.5) <= 0.05


def test_evaluate_requires_eval_split(tiny_tasks):
    import mtop.data as D
    _, vocab, task_data = tiny_tasks
    td = [D.TaskData("empty", 2, "accuracy", task_data[0].train, [])]
    m = make_model(td, vocab)
    with pytest.raises(ValueError, match="empty"):
        M.evaluate(m)


# ----- bench ------------------------------------------------------------------


def test_bench_rejects_zero_repetitions(tiny_tasks):
    _, vocab, task_data = tiny_tasks
    m = make_model(task_data, vocab)
    with pytest.raises(ValueError, match="repetitions"):
        M.bench([("mtop", m)], [[4, 5, 6]], repetitions=0)


def test_bench_pass_counts_and_lengths(tiny_tasks):
    vocab, td8 = eight_task_setup(tiny_tasks)
    m = make_model(td8, vocab, max_positions=64)
    pt = m.with_variant(ModelVariant.PER_TASK_PROMPT)
    rng = np.random.default_rng(0)
    seqs = rng.integers(3, len(vocab), size=(4, 32)).tolist()
    result = M.bench([("mtop", m), ("per_task_prompt", pt)], seqs, repetitions=3)
    by_name = {r.name: r for r in result.rows}
    assert by_name["mtop"].passes_per_call == 1
    assert by_name["per_task_prompt"].passes_per_call == 8
    assert by_name["mtop"].sequence_length == 8 * 2 + 1 + 32       # 49
    assert by_name["per_task_prompt"].sequence_length == 2 + 1 + 32  # 35
    table = M.format_bench(result)
    assert "49" in table and "35" in table

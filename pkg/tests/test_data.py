import json

import numpy as np
import pytest

from mtop import data as D


# ----- vocabulary and tokenizer -----------------------------------------------


def test_vocab_ranks_by_frequency():
    v = D.build_vocab(["a b a"])
    assert v.encode("a") == 3 and v.encode("b") == 4
    assert v.id_to_freq[3] == 2 and v.id_to_freq[4] == 1


def test_vocab_specials_reserved():
    v = D.build_vocab(["x"])
    assert v.encode("[PAD]") == D.PAD_ID == 0
    assert v.encode("[UNK]") == D.UNK_ID == 1
    assert v.encode("[CLS]") == D.CLS_ID == 2


def test_vocab_tie_break_by_first_occurrence():
    v = D.build_vocab(["zz aa zz aa bb"])
    assert v.encode("zz") == 3 and v.encode("aa") == 4 and v.encode("bb") == 5


def test_vocab_max_size_and_determinism():
    texts = ["c c c b b a"] * 3
    v1 = D.build_vocab(texts, max_size=2)
    v2 = D.build_vocab(texts, max_size=2)
    assert len(v1) == 5  # 3 specials + 2 kept tokens
    assert v1.encode("a") == D.UNK_ID
    assert v1.to_dict() == v2.to_dict()


def test_vocab_empty_corpus_fails():
    with pytest.raises(D.DataError):
        D.build_vocab([""])


def test_tokenize_basics():
    v = D.build_vocab(["hello world"])
    assert D.tokenize("Hello World", v) == [v.encode("hello"), v.encode("world")]
    assert D.tokenize("hello mars", v) == [v.encode("hello"), D.UNK_ID]


def test_tokenize_truncates():
    v = D.build_vocab(["t"])
    ids = D.tokenize(" ".join(["t"] * 200), v, max_len=128)
    assert len(ids) == 128 and set(ids) == {3}


def test_tokenize_total_on_arbitrary_text():
    v = D.build_vocab(["plain text"])
    assert D.tokenize("", v) == []
    assert D.tokenize("üñîçødé \t\n stuff", v)[-1] == D.UNK_ID


# ----- synthetic generator ----------------------------------------------------


def test_synthetic_label_iff_keyword():
    tasks = D.generate_synthetic(3, 60, seed=0)
    for t in tasks:
        for split in (t.train, t.eval):
            for e in split.examples:
                assert (t.keyword in e.text.split()) == (e.label == 1)


def test_synthetic_balance_and_split_sizes():
    tasks = D.generate_synthetic(2, 100, seed=1)
    for t in tasks:
        labels = [e.label for e in t.train.examples + t.eval.examples]
        assert labels.count(1) == labels.count(0) == 50
        assert len(t.train) == 80 and len(t.eval) == 20
        # stratified split keeps each side balanced
        assert sum(e.label for e in t.train.examples) == 40
        assert sum(e.label for e in t.eval.examples) == 10


def test_synthetic_linear_probe_separability():
    # the keyword-indicator feature is itself a perfect linear separator
    tasks = D.generate_synthetic(4, 40, seed=2)
    for t in tasks:
        for e in t.train.examples + t.eval.examples:
            indicator = 1 if t.keyword in e.text.split() else 0
            assert indicator == e.label


def test_synthetic_conflict_mode_shares_inverted_keyword():
    tasks = D.generate_synthetic(3, 40, conflict_mode=True, seed=3)
    assert tasks[0].keyword == tasks[1].keyword
    for e in tasks[1].train.examples + tasks[1].eval.examples:
        assert (tasks[1].keyword in e.text.split()) == (e.label == 0)
    # third task keeps its own keyword with normal labels
    assert tasks[2].keyword != tasks[0].keyword


def test_synthetic_deterministic():
    a = D.generate_synthetic(2, 30, seed=9)
    b = D.generate_synthetic(2, 30, seed=9)
    for ta, tb in zip(a, b):
        assert [e.text for e in ta.train.examples] == [e.text for e in tb.train.examples]
        assert [e.label for e in ta.eval.examples] == [e.label for e in tb.eval.examples]


def test_synthetic_argument_validation():
    with pytest.raises(D.DataError):
        D.generate_synthetic(0, 10)
    with pytest.raises(D.DataError):
        D.generate_synthetic(1, 10, conflict_mode=True)


def test_synthetic_text_lengths_in_range():
    tasks = D.generate_synthetic(1, 60, seed=4)
    for e in tasks[0].train.examples:
        n = len(e.text.split())
        assert 10 <= n <= 21  # 10..20 fillers plus possibly the keyword


# ----- news corpus ------------------------------------------------------------


def fake_corpus(rng=None, categories=10, per_cat=120, unique=True):
    rng = rng or np.random.default_rng(0)
    records = []
    n = 0
    for c in range(categories):
        count = per_cat + (categories - c) * 30  # skewed: earlier cats bigger
        for _ in range(count):
            suffix = f"u{n}" if unique else ""
            records.append(D.NewsRecord(
                category=f"CAT_{c:02d}",
                headline=f"headline {c} {rng.integers(0, 1000)} {suffix}",
            ))
            n += 1
    return records


def test_parse_news_jsonl_skips_incomplete_records():
    lines = [
        json.dumps({"category": "A", "headline": "ok", "authors": "x"}),
        json.dumps({"category": "", "headline": "no category"}),
        json.dumps({"category": "B", "headline": ""}),
        "",
        json.dumps({"headline": "missing category"}),
    ]
    records = list(D.parse_news_jsonl(lines))
    assert len(records) == 1 and records[0].category == "A"


def test_parse_news_jsonl_rejects_malformed_json():
    with pytest.raises(D.DataError, match="malformed"):
        list(D.parse_news_jsonl(["{not json"]))


def test_build_nhc_counts_and_invariants():
    records = fake_corpus()
    by_headline = {}
    for r in records:
        by_headline.setdefault(r.headline, r.category)
    tasks = D.build_nhc(records, seed=5, positives_per_task=100,
                        negatives_per_task=100)
    assert len(tasks) == 7
    for t in tasks:
        assert len(t.train) == 160 and len(t.eval) == 40
        train_texts = {e.text for e in t.train.examples}
        eval_texts = {e.text for e in t.eval.examples}
        assert not train_texts & eval_texts
        for e in t.train.examples + t.eval.examples:
            source_cat = by_headline[e.text]
            assert (source_cat == t.name) == (e.label == 1)
        # negatives drawn without replacement inside a task
        negatives = [e.text for e in t.train.examples + t.eval.examples if e.label == 0]
        assert len(negatives) == len(set(negatives))


def test_build_nhc_top_categories_by_count_then_name():
    records = []
    for cat in ("BB", "AA", "CC", "DD"):
        for i in range(30):
            records.append(D.NewsRecord(category=cat, headline=f"{cat} {i}"))
    for i in range(40):
        records.append(D.NewsRecord(category="EE", headline=f"EE {i}"))
    tasks = D.build_nhc(records, seed=0, num_tasks=3, positives_per_task=10,
                        negatives_per_task=10)
    assert [t.name for t in tasks] == ["EE", "AA", "BB"]


def test_build_nhc_insufficient_positives_names_shortfall():
    records = fake_corpus()
    with pytest.raises(D.DataError, match="CAT_00.*short by"):
        D.build_nhc(records, seed=0, positives_per_task=10_000)


def test_build_nhc_deterministic():
    records = fake_corpus()
    a = D.build_nhc(records, seed=11, positives_per_task=50, negatives_per_task=50)
    b = D.build_nhc(records, seed=11, positives_per_task=50, negatives_per_task=50)
    for ta, tb in zip(a, b):
        assert [e.text for e in ta.train.examples] == [e.text for e in tb.train.examples]


def test_cross_task_overlap_is_allowed():
    # one record may serve as a positive in its own task and a negative elsewhere
    records = fake_corpus(categories=8, per_cat=60)
    tasks = D.build_nhc(records, seed=3, num_tasks=3, positives_per_task=50,
                        negatives_per_task=200)
    pools = [{e.text for e in t.train.examples + t.eval.examples} for t in tasks]
    assert pools[0] & pools[1] or pools[0] & pools[2] or pools[1] & pools[2]


# ----- writer / reader --------------------------------------------------------


def test_write_read_round_trip(tmp_path):
    tasks = D.generate_synthetic(2, 40, seed=6)
    D.write_task_splits(tasks, tmp_path / "out", seed=6)
    loaded = D.read_task_splits(tmp_path / "out")
    assert [t.name for t in loaded] == [t.name for t in tasks]
    for ta, tb in zip(tasks, loaded):
        assert [e.text for e in ta.train.examples] == [e.text for e in tb.train.examples]
        assert [e.label for e in ta.eval.examples] == [e.label for e in tb.eval.examples]
        assert tb.keyword == ta.keyword


def test_write_task_splits_byte_deterministic(tmp_path):
    records = fake_corpus()
    for name in ("one", "two"):
        tasks = D.build_nhc(records, seed=2, positives_per_task=40, negatives_per_task=40)
        D.write_task_splits(tasks, tmp_path / name, seed=2)
    for rel in sorted(p.relative_to(tmp_path / "one")
                      for p in (tmp_path / "one").rglob("*") if p.is_file()):
        a = (tmp_path / "one" / rel).read_bytes()
        b = (tmp_path / "two" / rel).read_bytes()
        assert a == b, f"{rel} differs between identical builds"


def test_read_task_splits_requires_manifest(tmp_path):
    with pytest.raises(D.DataError, match="manifest"):
        D.read_task_splits(tmp_path)

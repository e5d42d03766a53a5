"""Dataset construction: news headline tasks, a whitespace tokenizer with a
frequency-ranked vocabulary, and a synthetic keyword benchmark for desk-scale
experiments.

News input is newline-delimited JSON with `category` and `headline` fields
(extra fields are carried but unused). Each of the top categories becomes a
binary task: sampled positives from the category, sampled negatives from the
rest, split 80/20 into train/eval.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass

import numpy as np

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
SPECIALS = ("[PAD]", "[UNK]", "[CLS]")

BUILDER_VERSION = "1"

_KEYWORDS = (
    "alpha bravo charlie delta echo foxtrot golf hotel india juliett kilo lima "
    "mike november oscar papa quebec romeo sierra tango uniform victor whiskey "
    "xray yankee zulu"
).split()


class DataError(ValueError):
    """Input data is missing, malformed, or insufficient."""


@dataclass
class NewsRecord:
    category: str
    headline: str
    short_description: str = ""
    authors: str = ""
    link: str = ""
    date: str = ""


@dataclass
class LabeledExample:
    text: str
    label: int


@dataclass
class TaskDataset:
    """One split (train or eval) of labeled text examples for one task."""

    name: str
    split: str
    examples: list

    def __len__(self):
        return len(self.examples)


@dataclass
class TaskSplits:
    """A task's train and eval datasets, plus synthetic metadata when present."""

    name: str
    train: TaskDataset
    eval: TaskDataset
    num_classes: int = 2
    metric: str = "accuracy"
    keyword: str | None = None


@dataclass
class TaskData:
    """Tokenized view of a task: examples are (token id list, label) pairs."""

    name: str
    num_classes: int
    metric: str
    train: list
    eval: list


class Vocabulary:
    """Token/id mapping with frequency ranks; ids 0..2 are reserved specials."""

    def __init__(self, tokens, freqs):
        self.id_to_token = list(SPECIALS) + list(tokens)
        self.id_to_freq = [0, 0, 0] + list(freqs)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise DataError("vocabulary contains duplicate tokens")

    def __len__(self):
        return len(self.id_to_token)

    def encode(self, token):
        return self.token_to_id.get(token, UNK_ID)

    def top_token_ids(self, k):
        """Ids of the k most frequent real tokens (specials excluded)."""
        real = range(len(SPECIALS), len(self.id_to_token))
        ranked = sorted(real, key=lambda i: (-self.id_to_freq[i], i))
        return ranked[:k]

    def to_dict(self):
        return {"tokens": self.id_to_token[len(SPECIALS):],
                "freqs": self.id_to_freq[len(SPECIALS):]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["tokens"], d["freqs"])


def build_vocab(texts, max_size=None):
    """Rank lowercased whitespace tokens by frequency (ties by first seen).

    `max_size` caps the number of real tokens kept after the reserved
    specials.
    """
    counts = {}
    first_seen = {}
    n = 0
    for text in texts:
        for tok in text.lower().split():
            if tok not in counts:
                counts[tok] = 0
                first_seen[tok] = n
                n += 1
            counts[tok] += 1
    if not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))
    if max_size is not None:
        ranked = ranked[:max_size]
    return Vocabulary(ranked, [counts[t] for t in ranked])


def tokenize(text, vocab, max_len=128):
    """Lowercase, split on whitespace, map through the vocabulary, truncate.

    Never fails on arbitrary input; unknown tokens map to [UNK]. The [CLS]
    token and padding are added at batch assembly, not here.
    """
    ids = [vocab.encode(t) for t in text.lower().split()]
    return ids[:max_len]


def parse_news_jsonl(lines):
    """Yield NewsRecords from newline-delimited JSON, skipping records
    without a non-empty category and headline."""
    for line in lines:
        line = line.strip()
        if not line:
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed JSON record: {exc}") from None
        category = (raw.get("category") or "").strip()
        headline = (raw.get("headline") or "").strip()
        if not category or not headline:
            continue
        yield NewsRecord(
            category=category,
            headline=headline,
            short_description=raw.get("short_description") or "",
            authors=raw.get("authors") or "",
            link=raw.get("link") or "",
            date=raw.get("date") or "",
        )


def load_news_file(path):
    with open(path, "r", encoding="utf-8") as f:
        return list(parse_news_jsonl(f))


def build_nhc(records, seed, num_tasks=7, positives_per_task=2000,
              negatives_per_task=2000, train_fraction=0.8, workers=1):
    """Build binary headline-classification tasks from the most popular
    categories.

    Per task: `positives_per_task` records sampled from the target category
    and `negatives_per_task` from everything else (each without replacement
    within the task), randomly split into train/eval. Task text is the
    headline. Deterministic for a fixed seed regardless of `workers`
    (per-task seed streams, merge in popularity order); categories with
    equal counts rank lexicographically.
    """
    records = list(records)
    counts = {}
    for r in records:
        counts[r.category] = counts.get(r.category, 0) + 1
    if len(counts) < num_tasks:
        raise DataError(
            f"need at least {num_tasks} categories, found {len(counts)}")
    top = sorted(counts, key=lambda c: (-counts[c], c))[:num_tasks]

    seeds = np.random.SeedSequence(seed).spawn(num_tasks)

    def build_one(cat, child):
        rng = np.random.default_rng(child)
        pos_pool = [r for r in records if r.category == cat]
        neg_pool = [r for r in records if r.category != cat]
        if len(pos_pool) < positives_per_task:
            raise DataError(
                f"category {cat}: need {positives_per_task} positives, have "
                f"{len(pos_pool)} (short by {positives_per_task - len(pos_pool)})")
        if len(neg_pool) < negatives_per_task:
            raise DataError(
                f"category {cat}: need {negatives_per_task} negatives, have "
                f"{len(neg_pool)} (short by {negatives_per_task - len(neg_pool)})")
        pos_idx = rng.choice(len(pos_pool), size=positives_per_task, replace=False)
        neg_idx = rng.choice(len(neg_pool), size=negatives_per_task, replace=False)
        examples = [LabeledExample(pos_pool[i].headline, 1) for i in pos_idx]
        examples += [LabeledExample(neg_pool[i].headline, 0) for i in neg_idx]
        order = rng.permutation(len(examples))
        n_train = int(round(train_fraction * len(examples)))
        train = [examples[i] for i in order[:n_train]]
        evals = [examples[i] for i in order[n_train:]]
        return TaskSplits(
            name=cat,
            train=TaskDataset(cat, "train", train),
            eval=TaskDataset(cat, "eval", evals),
        )

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(build_one, top, seeds))
    return [build_one(cat, child) for cat, child in zip(top, seeds)]


def generate_synthetic(num_tasks, examples_per_task, conflict_mode=False, seed=0,
                       min_len=10, max_len=20, train_fraction=0.8):
    """Generate keyword-detection tasks that are linearly separable by
    construction.

    Each task owns a keyword; its text is `min_len`..`max_len` filler tokens
    with the keyword injected iff the label is 1. Labels are balanced and the
    train/eval split is stratified by label. With `conflict_mode`, the first
    two tasks share one keyword and assign it opposite labels, a stress test
    for cross-task gradient interference.
    """
    if num_tasks < 1:
        raise DataError("num_tasks must be >= 1")
    if conflict_mode and num_tasks < 2:
        raise DataError("conflict_mode needs at least 2 tasks")
    fillers = [f"w{i:02d}" for i in range(40)]
    keywords = list(_KEYWORDS) + [f"kw{i}" for i in range(max(0, num_tasks - len(_KEYWORDS)))]

    rng = np.random.default_rng(seed)
    tasks = []
    for t in range(num_tasks):
        if conflict_mode and t == 1:
            keyword = keywords[0]        # shared with task 1, labels inverted
            inverted = True
        else:
            keyword = keywords[t]
            inverted = False
        name = f"task{t + 1}_{keyword}"
        n_pos = examples_per_task // 2
        n_neg = examples_per_task - n_pos

        def make(label, count):
            out = []
            for _ in range(count):
                length = int(rng.integers(min_len, max_len + 1))
                toks = [fillers[i] for i in rng.integers(0, len(fillers), length)]
                present = (label == 0) if inverted else (label == 1)
                if present:
                    toks.insert(int(rng.integers(0, length + 1)), keyword)
                out.append(LabeledExample(" ".join(toks), label))
            return out

        positives = make(1, n_pos)
        negatives = make(0, n_neg)
        train, evals = [], []
        for group in (positives, negatives):
            order = rng.permutation(len(group))
            cut = int(round(train_fraction * len(group)))
            train += [group[i] for i in order[:cut]]
            evals += [group[i] for i in order[cut:]]
        train = [train[i] for i in rng.permutation(len(train))]
        evals = [evals[i] for i in rng.permutation(len(evals))]
        tasks.append(TaskSplits(
            name=name,
            train=TaskDataset(name, "train", train),
            eval=TaskDataset(name, "eval", evals),
            keyword=keyword,
        ))
    return tasks


def encode_tasks(tasks, vocab, max_len=128):
    """Tokenize TaskSplits into TaskData usable by the model and trainer."""
    out = []
    for t in tasks:
        out.append(TaskData(
            name=t.name,
            num_classes=t.num_classes,
            metric=t.metric,
            train=[(tokenize(e.text, vocab, max_len), e.label) for e in t.train.examples],
            eval=[(tokenize(e.text, vocab, max_len), e.label) for e in t.eval.examples],
        ))
    return out


def vocab_from_tasks(tasks, max_size=None):
    """Build the vocabulary from the training splits of the given tasks."""
    texts = [e.text for t in tasks for e in t.train.examples]
    return build_vocab(texts, max_size=max_size)


def _dir_name(task_name):
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", task_name.strip()).strip("_").lower() or "task"


def write_task_splits(tasks, out_dir, seed):
    """Write one directory per task (train/eval JSONL) plus a manifest.

    Output is byte-deterministic for identical tasks and seed.
    """
    os.makedirs(out_dir, exist_ok=True)
    dirs = [_dir_name(t.name) for t in tasks]
    if len(set(dirs)) != len(dirs):
        raise DataError(f"task names collide after sanitizing: {sorted(dirs)}")
    manifest = {"version": BUILDER_VERSION, "seed": seed, "tasks": []}
    for t, d in zip(tasks, dirs):
        task_dir = os.path.join(out_dir, d)
        os.makedirs(task_dir, exist_ok=True)
        for split in (t.train, t.eval):
            path = os.path.join(task_dir, f"{split.split}.jsonl")
            with open(path, "w", encoding="utf-8") as f:
                for e in split.examples:
                    f.write(json.dumps({"label": e.label, "text": e.text},
                                       sort_keys=True, ensure_ascii=False))
                    f.write("\n")
        entry = {"name": t.name, "dir": d, "num_classes": t.num_classes,
                 "metric": t.metric, "train_count": len(t.train),
                 "eval_count": len(t.eval)}
        if t.keyword is not None:
            entry["keyword"] = t.keyword
        manifest["tasks"].append(entry)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=2, ensure_ascii=False)
        f.write("\n")
    return manifest


def read_task_splits(data_dir):
    """Load tasks written by `write_task_splits`."""
    manifest_path = os.path.join(data_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise DataError(f"no manifest.json in {data_dir}")
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    tasks = []
    for entry in manifest["tasks"]:
        task_dir = os.path.join(data_dir, entry["dir"])
        splits = {}
        for split in ("train", "eval"):
            path = os.path.join(task_dir, f"{split}.jsonl")
            examples = []
            with open(path, "r", encoding="utf-8") as f:
                for line in f:
                    raw = json.loads(line)
                    examples.append(LabeledExample(raw["text"], int(raw["label"])))
            splits[split] = TaskDataset(entry["name"], split, examples)
        tasks.append(TaskSplits(
            name=entry["name"],
            train=splits["train"],
            eval=splits["eval"],
            num_classes=entry.get("num_classes", 2),
            metric=entry.get("metric", "accuracy"),
            keyword=entry.get("keyword"),
        ))
    return tasks

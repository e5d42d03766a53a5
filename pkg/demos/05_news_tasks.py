"""Building binary news-headline tasks from a category-labeled JSONL corpus.

Pass the path to a real news file (fields: category, headline, ...) to build
from it; otherwise the demo fabricates a small skewed corpus with the same
shape so it can run self-contained.

Run:  python demos/05_news_tasks.py [news.jsonl]
"""

import sys
import tempfile

import numpy as np

from mtop import data as D

if len(sys.argv) > 1:
    records = D.load_news_file(sys.argv[1])
    positives = negatives = 2000
else:
    print("no corpus given; fabricating a small one with a skewed category mix")
    rng = np.random.default_rng(0)
    records = []
    for c in range(12):
        for i in range(150 + (12 - c) * 60):
            words = " ".join(f"w{int(x)}" for x in rng.integers(0, 80, 7))
            records.append(D.NewsRecord(category=f"TOPIC_{c:02d}",
                                        headline=f"{words} item{i}"))
    positives = negatives = 120

counts = {}
for r in records:
    counts[r.category] = counts.get(r.category, 0) + 1
top = sorted(counts, key=lambda c: (-counts[c], c))[:7]
print(f"{len(records)} records across {len(counts)} categories; "
      f"top 7 by count: {top}")

tasks = D.build_nhc(records, seed=7, positives_per_task=positives,
                    negatives_per_task=negatives)
for t in tasks:
    pos = sum(e.label for e in t.train.examples + t.eval.examples)
    print(f"  {t.name}: {len(t.train)} train / {len(t.eval)} eval "
          f"({pos} positives, {len(t.train) + len(t.eval) - pos} negatives)")

with tempfile.TemporaryDirectory() as out:
    manifest = D.write_task_splits(tasks, out, seed=7)
    print(f"\nwrote {len(manifest['tasks'])} task directories + manifest.json "
          f"(builder version {manifest['version']})")
    reread = D.read_task_splits(out)
    print(f"round trip ok: {[t.name for t in reread] == [t.name for t in tasks]}")

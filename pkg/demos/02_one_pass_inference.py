"""One encoder pass, predictions for every task.

Builds an 8-task model, shows the assembled sequence layout, and counts
encoder passes next to the per-task-prompt baseline that re-encodes the
input once per task.

Run:  python demos/02_one_pass_inference.py
"""

import numpy as np

from mtop import data as D
from mtop.encoder import EncoderConfig
from mtop.model import ModelVariant, MultiTaskModel, specs_from_task_data

tasks = D.generate_synthetic(8, 60, seed=1)
vocab = D.vocab_from_tasks(tasks)
task_data = D.encode_tasks(tasks, vocab, max_len=24)

config = EncoderConfig(vocab_size=len(vocab), num_layers=2, hidden_dim=64,
                       num_heads=4, ffn_dim=256, max_positions=64,
                       dropout_rate=0.0)
model = MultiTaskModel(config, specs_from_task_data(task_data),
                       variant=ModelVariant.MTOP, prompt_len=2, seed=7)

batch = [ids for ids, _ in task_data[0].eval[:4]]
longest = max(len(s) for s in batch)
print(f"8 tasks x 2 prompts each -> prompt block of {model.pool.total_rows} rows")
print(f"layout: [task prompts | CLS | tokens]  "
      f"-> sequence length {model.sequence_length(longest)}")

probs = model.predict_all_tasks(batch)
print(f"\nencoder passes for one batch: {model.forward_passes}")
for name in list(probs)[:3]:
    print(f"  {name}: class probabilities {np.round(probs[name][0], 3)}")
print("  ... (all 8 tasks answered from the same hidden states)")

baseline = model.with_variant(ModelVariant.PER_TASK_PROMPT)
before = baseline.forward_passes
baseline.predict_all_tasks(batch)
print(f"\nper-task prompting needs {baseline.forward_passes - before} passes "
      "for the same batch")

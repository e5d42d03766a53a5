"""What gradient stopping does during a training step.

One batch from task 1 flows through the full prompt pool; with the stop
policy, every other task's prompts receive an exactly-zero gradient and do
not move. Without it, the same batch drags other tasks' prompts around.

Run:  python demos/03_gradient_stopping.py
"""

import numpy as np

from mtop import data as D
from mtop.encoder import EncoderConfig
from mtop.model import ModelVariant, MultiTaskModel, specs_from_task_data
from mtop.trainer import Adam, Batch, train_step

tasks = D.generate_synthetic(3, 120, seed=3)
vocab = D.vocab_from_tasks(tasks)
task_data = D.encode_tasks(tasks, vocab, max_len=24)
config = EncoderConfig(vocab_size=len(vocab), num_layers=2, hidden_dim=64,
                       num_heads=4, ffn_dim=256, max_positions=48,
                       dropout_rate=0.0)

chunk = task_data[0].train[:16]
batch = Batch(1, [c[0] for c in chunk], np.array([c[1] for c in chunk]))

for variant in (ModelVariant.MTOP, ModelVariant.MTOP_NO_SG):
    model = MultiTaskModel(config, specs_from_task_data(task_data),
                           variant=variant, prompt_len=2, seed=5)
    snapshots = [p.data.copy() for p in model.pool.task_prompts]
    loss = train_step(model, batch, Adam(model.trainable_parameters()), 1e-3)
    print(f"{variant.value}: loss {loss:.4f}")
    for spec, before in zip(model.task_specs, snapshots):
        prompt = model.pool.task_prompts[spec.index - 1]
        grad = prompt.tensor.grad
        grad_norm = 0.0 if grad is None else float(np.linalg.norm(grad))
        moved = float(np.abs(prompt.data - before).max())
        print(f"  task {spec.index} prompt: grad norm {grad_norm:.6f}, "
              f"max shift {moved:.2e}")
    print()

print("under the stop policy only task 1 moved; without it, every prompt did")

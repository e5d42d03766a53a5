"""The full training recipe at toy size: single-task pre-finetuning against a
frozen backbone, transplanting those weights into the multi-task model, then
joint training with proportional sampling and best-checkpoint selection.

Scaled down (300 examples/task, 5 epochs) so it finishes in about a minute.

Run:  python demos/04_training_protocol.py
"""

import numpy as np

from mtop import data as D
from mtop.encoder import EncoderConfig
from mtop.initializers import pre_finetune_single_task, transplant_init
from mtop.metrics import evaluate, format_report
from mtop.model import ModelVariant, MultiTaskModel, specs_from_task_data
from mtop.trainer import TrainConfig, run_training

EPOCHS = 5
LR = 1e-3  # desk-scale rate: the backbone here trains from scratch

tasks = D.generate_synthetic(3, 300, seed=11)
vocab = D.vocab_from_tasks(tasks)
task_data = D.encode_tasks(tasks, vocab, max_len=24)
specs = specs_from_task_data(task_data)
config = EncoderConfig(vocab_size=len(vocab), num_layers=2, hidden_dim=64,
                       num_heads=4, ffn_dim=256, max_positions=48,
                       dropout_rate=0.0)

print("phase 1: single-task pre-finetuning (backbone frozen)")
model = MultiTaskModel(config, specs, variant=ModelVariant.MTOP, prompt_len=2, seed=2)
artifacts = []
for spec in specs:
    art = pre_finetune_single_task(
        spec, model.encoder,
        TrainConfig(epochs=EPOCHS, learning_rate=LR, seed=100 + spec.index),
        init_seed=spec.index)
    artifacts.append(art)
    print(f"  {spec.name}: artifact ready (backbone {art.backbone_fingerprint[:12]}...)")

print("\nphase 2: transplant into the multi-task model and train jointly")
transplant_init(artifacts, model)
result = run_training(model, TrainConfig(epochs=EPOCHS, learning_rate=LR, seed=9),
                      log=lambda msg: print("  " + msg))
print(f"\nbest checkpoint: epoch {result.best.epoch} "
      f"(average {result.best.average:.4f}, shared by all tasks)")

best = MultiTaskModel.from_bytes(result.best_bytes)
for spec, td in zip(best.task_specs, task_data):
    spec.data = td
print()
print(format_report(evaluate(best), title="best checkpoint on eval splits"))

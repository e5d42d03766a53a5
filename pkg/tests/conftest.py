import numpy as np
import pytest

from mtop import data as data_mod
from mtop.encoder import EncoderConfig
from mtop.model import MultiTaskModel, ModelVariant, specs_from_task_data

DESK_LR = 1e-3  # from-scratch desk backbone; the 1e-5 default assumes pretraining


def small_encoder_config(vocab_size, **overrides):
    base = dict(vocab_size=vocab_size, num_layers=2, hidden_dim=64, num_heads=4,
                ffn_dim=256, max_positions=64, dropout_rate=0.0)
    base.update(overrides)
    return EncoderConfig(**base)


@pytest.fixture(scope="session")
def tiny_tasks():
    """Three small separable keyword tasks, tokenized."""
    tasks = data_mod.generate_synthetic(3, 120, seed=7)
    vocab = data_mod.vocab_from_tasks(tasks)
    task_data = data_mod.encode_tasks(tasks, vocab, max_len=24)
    return tasks, vocab, task_data


@pytest.fixture()
def tiny_model(tiny_tasks):
    _, vocab, task_data = tiny_tasks
    cfg = small_encoder_config(len(vocab), max_positions=40)
    return MultiTaskModel(cfg, specs_from_task_data(task_data),
                          variant=ModelVariant.MTOP, prompt_len=2, seed=11)


def make_model(task_data, vocab, variant=ModelVariant.MTOP, seed=11, **cfg_overrides):
    cfg = small_encoder_config(len(vocab), **cfg_overrides)
    return MultiTaskModel(cfg, specs_from_task_data(task_data), variant=variant,
                          prompt_len=2, seed=seed)


def batch_from(task_data, task_index, size=8, offset=0):
    chunk = task_data[task_index - 1].train[offset:offset + size]
    seqs = [ids for ids, _ in chunk]
    labels = np.asarray([label for _, label in chunk], dtype=np.int64)
    return seqs, labels

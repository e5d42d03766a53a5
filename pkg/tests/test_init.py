import math

import numpy as np
import pytest

from mtop import data as data_mod
from mtop.initializers import (InitSpec, SingleTaskArtifact, glorot_uniform,
                               initialize_model, load_artifacts,
                               pre_finetune_single_task, save_artifacts,
                               token_prompt_init, transplant_init,
                               truncated_normal)
from mtop.model import ModelVariant, MultiTaskModel, TaskSpec, \
    extra_params_per_task, specs_from_task_data
from mtop.trainer import TrainConfig

from conftest import DESK_LR, small_encoder_config


# ----- truncated normal -------------------------------------------------------


def test_truncated_normal_stays_inside_two_sigma():
    draws = truncated_normal(np.random.default_rng(0), (10_000,))
    assert np.abs(draws).max() <= 0.04


def test_truncated_normal_moments():
    draws = truncated_normal(np.random.default_rng(1), (10_000,))
    assert abs(draws.mean()) < 6e-4
    assert abs(draws.std() - 0.0176) < 5e-4


def test_truncated_normal_redraws_instead_of_clipping():
    draws = truncated_normal(np.random.default_rng(2), (10_000,))
    # clipping would pile ~4.6% of the mass exactly at +/-0.04
    assert not np.any(np.abs(draws) == 0.04)
    tail = np.mean(np.abs(draws) > 0.0392)
    # truncated-normal tail mass in (1.96, 2] sigma is ~0.47%
    assert tail < 0.015


def test_truncated_normal_deterministic():
    a = truncated_normal(np.random.default_rng(3), (50, 7))
    b = truncated_normal(np.random.default_rng(3), (50, 7))
    assert a.tobytes() == b.tobytes()
    assert a.shape == (50, 7)


# ----- glorot -----------------------------------------------------------------


def test_glorot_bound_formula():
    k = glorot_uniform(np.random.default_rng(4), 768, 768)
    bound = math.sqrt(6.0 / (768 + 768))
    assert np.abs(k).max() <= bound
    assert np.abs(k).max() > 0.9 * bound  # actually fills the range
    assert abs(k.mean()) < 0.002


def test_glorot_rejects_bad_dims():
    with pytest.raises(ValueError):
        glorot_uniform(np.random.default_rng(0), 0, 4)


def test_rd_pooler_biases_are_exact_zero(tiny_tasks):
    _, vocab, task_data = tiny_tasks
    model = _fresh_model(task_data, vocab, seed=5)
    initialize_model(model, InitSpec("rd", "rd", seed=9))
    for spec in model.task_specs:
        _, b, _ = model.task_head(spec.index)
        assert not b.data.any()


# ----- token initialization ---------------------------------------------------


def test_token_init_rows_copy_embedding_rows(tiny_tasks):
    _, vocab, task_data = tiny_tasks
    model = _fresh_model(task_data, vocab, seed=6)
    token_prompt_init(model, vocab, np.random.default_rng(0))
    table = {model.encoder.token_embedding.data[i].tobytes()
             for i in range(len(vocab))}
    for p in model.pool.task_prompts:
        for row in p.data:
            assert row.tobytes() in table


def test_token_init_pool_is_whole_vocab_when_small():
    vocab = data_mod.build_vocab(["aa bb cc aa"])
    assert vocab.top_token_ids(5000) == [3, 4, 5]


def test_token_init_deterministic(tiny_tasks):
    _, vocab, task_data = tiny_tasks
    m1 = _fresh_model(task_data, vocab, seed=6)
    m2 = _fresh_model(task_data, vocab, seed=6)
    initialize_model(m1, InitSpec("tk", "rd", seed=4), vocab=vocab)
    initialize_model(m2, InitSpec("tk", "rd", seed=4), vocab=vocab)
    for a, b in zip(m1.pool.task_prompts, m2.pool.task_prompts):
        assert a.data.tobytes() == b.data.tobytes()


def test_init_choices_never_change_shapes(tiny_tasks):
    _, vocab, task_data = tiny_tasks
    counts = set()
    for spec in (InitSpec("rd", "rd"), InitSpec("tk", "rd", seed=1)):
        m = _fresh_model(task_data, vocab, seed=7)
        initialize_model(m, spec, vocab=vocab)
        counts.add(m.trainable_scalar_count())
    assert len(counts) == 1


# ----- single-task pre-finetune and transplant ---------------------------------


def _fresh_model(task_data, vocab, seed, variant=ModelVariant.MTOP):
    cfg = small_encoder_config(len(vocab), max_positions=40)
    return MultiTaskModel(cfg, specs_from_task_data(task_data), variant=variant,
                          prompt_len=2, seed=seed)


@pytest.fixture(scope="module")
def trained_artifacts():
    tasks = data_mod.generate_synthetic(2, 300, seed=21)
    vocab = data_mod.vocab_from_tasks(tasks)
    task_data = data_mod.encode_tasks(tasks, vocab, max_len=24)
    cfg = small_encoder_config(len(vocab), max_positions=40)
    model = MultiTaskModel(cfg, specs_from_task_data(task_data), prompt_len=2, seed=31)
    before = model.fingerprint()
    config = TrainConfig(epochs=4, learning_rate=DESK_LR, seed=5)
    artifacts = [pre_finetune_single_task(spec, model.encoder, config,
                                          init_seed=40 + spec.index)
                 for spec in model.task_specs]
    return tasks, vocab, task_data, model, before, artifacts


def test_pre_finetune_leaves_backbone_bit_identical(trained_artifacts):
    _, _, _, model, before, artifacts = trained_artifacts
    assert model.fingerprint() == before
    for art in artifacts:
        assert art.backbone_fingerprint == before


def test_pre_finetune_trains_only_task_local_parameters(trained_artifacts):
    _, vocab, task_data, model, _, _ = trained_artifacts
    cfg = small_encoder_config(len(vocab), max_positions=40)
    single = MultiTaskModel(cfg, [TaskSpec(1, "probe", 2, "accuracy", task_data[0])],
                            variant=ModelVariant.PER_TASK_PROMPT, prompt_len=2, seed=3)
    single.store.set_group_trainable("backbone", False)
    assert single.trainable_scalar_count() == extra_params_per_task(64, 2, 2)


def test_pre_finetune_learns_separable_task(trained_artifacts):
    # keyword tasks are linearly separable; the frozen-backbone single-task
    # model must reach solid accuracy with the desk recipe
    tasks, vocab, task_data, model, _, _ = trained_artifacts
    cfg = small_encoder_config(len(vocab), max_positions=40)
    single = MultiTaskModel(cfg, [TaskSpec(1, task_data[0].name, 2, "accuracy",
                                           task_data[0])],
                            variant=ModelVariant.PER_TASK_PROMPT, prompt_len=2, seed=3)
    single.copy_backbone_from(model.encoder)
    single.store.set_group_trainable("backbone", False)
    from mtop.trainer import run_training
    result = run_training(single, TrainConfig(epochs=6, learning_rate=3e-3, seed=5))
    assert result.best.average >= 0.90


def test_transplant_is_bit_exact_copy(trained_artifacts):
    _, vocab, task_data, model, _, artifacts = trained_artifacts
    target = _fresh_model(task_data, vocab, seed=31)
    transplant_init(artifacts, target)
    total = 0
    for art, spec in zip(artifacts, target.task_specs):
        assert target.pool.task_prompts[spec.index - 1].data.tobytes() == art.prompt.tobytes()
        w, b, v = target.task_head(spec.index)
        assert w.data.tobytes() == art.pooler_w.tobytes()
        assert b.data.tobytes() == art.pooler_b.tobytes()
        assert v.data.tobytes() == art.head.tobytes()
        total += art.prompt.size + art.pooler_w.size + art.pooler_b.size + art.head.size
    assert total == sum(extra_params_per_task(64, 2, s.num_classes)
                        for s in target.task_specs)


def test_transplant_rejects_wrong_backbone(trained_artifacts):
    _, vocab, task_data, _, _, artifacts = trained_artifacts
    other = _fresh_model(task_data, vocab, seed=999)
    with pytest.raises(ValueError, match="task 1.*fingerprint|fingerprint"):
        transplant_init(artifacts, other)


def test_transplant_rejects_missing_artifact(trained_artifacts):
    _, vocab, task_data, model, _, artifacts = trained_artifacts
    target = _fresh_model(task_data, vocab, seed=31)
    with pytest.raises(ValueError, match="no single-task artifact for task 2"):
        transplant_init(artifacts[:1], target)


def test_artifact_file_round_trip(trained_artifacts, tmp_path):
    _, _, _, _, _, artifacts = trained_artifacts
    save_artifacts(artifacts, tmp_path)
    loaded = load_artifacts(tmp_path)
    assert len(loaded) == len(artifacts)
    for a, b in zip(artifacts, sorted(loaded, key=lambda x: x.task_index)):
        assert a.task_index == b.task_index and a.task_name == b.task_name
        assert a.prompt.tobytes() == b.prompt.tobytes()
        assert a.backbone_fingerprint == b.backbone_fingerprint


def test_artifact_rejects_foreign_container(tmp_path):
    from mtop.serialize import save_container
    path = tmp_path / "bogus.mtop"
    save_container(path, {"kind": "checkpoint"}, [("x", np.zeros(3))])
    with pytest.raises(ValueError, match="single-task"):
        SingleTaskArtifact.load(path)


def test_st_init_requires_artifacts(tiny_tasks):
    _, vocab, task_data = tiny_tasks
    model = _fresh_model(task_data, vocab, seed=8)
    with pytest.raises(ValueError, match="artifact"):
        initialize_model(model, InitSpec("st", "rd", seed=1))


def test_init_spec_validation():
    with pytest.raises(ValueError):
        InitSpec("bogus", "rd")
    with pytest.raises(ValueError):
        InitSpec("rd", "tk")

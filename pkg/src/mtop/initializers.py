"""Weight initialization: truncated-normal and Glorot draws, prompt
initialization from vocabulary embeddings, and single-task pre-finetuning
whose learned prompts/poolers/heads seed the multi-task model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .serialize import dump_container, load_container

PROMPT_INITS = ("rd", "tk", "st")
POOLER_INITS = ("rd", "st")

TOKEN_POOL_SIZE = 5000


def truncated_normal(rng, shape, mean=0.0, std=0.02):
    """Normal draw that discards and re-draws samples beyond two standard
    deviations, so every value lies within mean +/- 2*std without clipping
    atoms at the bounds."""
    out = rng.normal(mean, std, size=shape)
    bad = np.abs(out - mean) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(mean, std, size=int(bad.sum()))
        bad = np.abs(out - mean) > 2.0 * std
    return out.astype(np.float32)


def glorot_uniform(rng, rows, cols):
    """Uniform draw in +/- sqrt(6 / (rows + cols))."""
    if rows <= 0 or cols <= 0:
        raise ValueError("glorot_uniform needs positive dimensions")
    limit = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols)).astype(np.float32)


@dataclass(frozen=True)
class InitSpec:
    """Initialization choices: prompts from rd | tk | st, poolers from rd | st."""

    prompt_init: str = "rd"
    pooler_init: str = "rd"
    seed: int = 0

    def __post_init__(self):
        if self.prompt_init not in PROMPT_INITS:
            raise ValueError(f"prompt_init must be one of {PROMPT_INITS}")
        if self.pooler_init not in POOLER_INITS:
            raise ValueError(f"pooler_init must be one of {POOLER_INITS}")


@dataclass
class SingleTaskArtifact:
    """Trained prompt/pooler/head of one single-task model plus the
    fingerprint of the frozen backbone it was trained against."""

    task_index: int
    task_name: str
    num_classes: int
    prompt: np.ndarray
    pooler_w: np.ndarray
    pooler_b: np.ndarray
    head: np.ndarray
    backbone_fingerprint: str

    def to_bytes(self):
        config = {
            "kind": "single-task",
            "task_index": self.task_index,
            "task_name": self.task_name,
            "num_classes": self.num_classes,
            "backbone_fingerprint": self.backbone_fingerprint,
        }
        tensors = [("prompt", self.prompt), ("pooler_w", self.pooler_w),
                   ("pooler_b", self.pooler_b), ("head", self.head)]
        return dump_container(config, tensors)

    @classmethod
    def from_bytes(cls, data):
        config, tensors = load_container(data)
        if config.get("kind") != "single-task":
            raise ValueError("container is not a single-task artifact")
        return cls(
            task_index=config["task_index"],
            task_name=config["task_name"],
            num_classes=config["num_classes"],
            prompt=tensors["prompt"],
            pooler_w=tensors["pooler_w"],
            pooler_b=tensors["pooler_b"],
            head=tensors["head"],
            backbone_fingerprint=config["backbone_fingerprint"],
        )

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def token_prompt_init(model, vocab, rng):
    """Set every task-specific prompt row to a verbatim copy of the embedding
    of a token sampled uniformly from the most frequent `TOKEN_POOL_SIZE`
    vocabulary tokens (the whole vocabulary when smaller). Shared
    task-agnostic prompts are not touched."""
    pool = vocab.top_token_ids(TOKEN_POOL_SIZE)
    if not pool:
        raise ValueError("token initialization needs a non-empty vocabulary")
    table = model.encoder.token_embedding.data
    for p in model.pool.task_prompts:
        rows = p.data.shape[0]
        picks = rng.integers(0, len(pool), size=rows)
        for r in range(rows):
            p.tensor.data[r] = table[pool[int(picks[r])]]


def apply_prompt_init(model, kind, rng, vocab=None, artifacts=None):
    if kind == "rd":
        for p in model.pool.task_prompts:
            p.tensor.data = truncated_normal(rng, p.data.shape)
    elif kind == "tk":
        if vocab is None:
            raise ValueError("prompt_init 'tk' requires a vocabulary")
        token_prompt_init(model, vocab, rng)
    elif kind == "st":
        if artifacts is None:
            raise ValueError("prompt_init 'st' requires single-task artifacts")
        by_index = _artifacts_by_index(artifacts, model)
        for spec in model.task_specs:
            model.pool.task_prompts[spec.index - 1].tensor.data = \
                by_index[spec.index].prompt.copy()
    else:
        raise ValueError(f"unknown prompt init {kind!r}")


def apply_pooler_init(model, kind, rng, artifacts=None):
    if kind == "rd":
        for spec in model.task_specs:
            w, b, v = model.task_head(spec.index)
            w.tensor.data = glorot_uniform(rng, *w.data.shape)
            b.tensor.data = np.zeros_like(b.data)
            v.tensor.data = glorot_uniform(rng, *v.data.shape)
    elif kind == "st":
        if artifacts is None:
            raise ValueError("pooler_init 'st' requires single-task artifacts")
        by_index = _artifacts_by_index(artifacts, model)
        for spec in model.task_specs:
            art = by_index[spec.index]
            w, b, v = model.task_head(spec.index)
            w.tensor.data = art.pooler_w.copy()
            b.tensor.data = art.pooler_b.copy()
            v.tensor.data = art.head.copy()
    else:
        raise ValueError(f"unknown pooler init {kind!r}")


def initialize_model(model, spec: InitSpec, vocab=None, artifacts=None):
    """Apply an InitSpec to a freshly constructed model.

    Shared task-agnostic prompts are always re-drawn from the truncated
    normal; their initialization has no tk/st variant.
    """
    seq = np.random.SeedSequence(spec.seed)
    prompt_rng, pooler_rng, shared_rng = (np.random.default_rng(s) for s in seq.spawn(3))
    apply_prompt_init(model, spec.prompt_init, prompt_rng, vocab=vocab, artifacts=artifacts)
    apply_pooler_init(model, spec.pooler_init, pooler_rng, artifacts=artifacts)
    if model.pool.shared is not None:
        model.pool.shared.tensor.data = truncated_normal(
            shared_rng, model.pool.shared.data.shape)
    return model


def _artifacts_by_index(artifacts, model):
    by_index = {}
    for art in artifacts:
        by_index[art.task_index] = art
    fp = model.fingerprint()
    for spec in model.task_specs:
        art = by_index.get(spec.index)
        if art is None:
            raise ValueError(f"no single-task artifact for task {spec.index} ({spec.name})")
        if art.backbone_fingerprint != fp:
            raise ValueError(
                f"artifact for task {spec.index} ({art.task_name}) was trained "
                f"against a different backbone (fingerprint mismatch)")
        if art.num_classes != spec.num_classes:
            raise ValueError(
                f"artifact for task {spec.index} has {art.num_classes} classes, "
                f"model expects {spec.num_classes}")
    return by_index


def transplant_init(artifacts, model):
    """Copy every task's trained prompt, pooler, and head into the model
    (bit-exact), leaving the backbone untouched. Fails if any artifact is
    missing or was trained against a different backbone."""
    apply_prompt_init(model, "st", None, artifacts=artifacts)
    apply_pooler_init(model, "st", None, artifacts=artifacts)
    return model


def pre_finetune_single_task(task_spec, encoder, train_config, prompt_len=2,
                             init_seed=0, metrics_path=None):
    """Train one task's prompts, pooler, and head against a frozen copy of
    the given backbone; return the learned weights as a SingleTaskArtifact.

    The passed encoder is only read. The artifact records the backbone
    fingerprint so a later transplant can verify it targets the same
    backbone. Uses the best checkpoint by evaluation metric, mirroring the
    multi-task protocol.
    """
    from .model import MultiTaskModel, ModelVariant, TaskSpec
    from .trainer import run_training

    local_spec = TaskSpec(index=1, name=task_spec.name,
                          num_classes=task_spec.num_classes,
                          metric=task_spec.metric, data=task_spec.data)
    single = MultiTaskModel(
        encoder.config, [local_spec], variant=ModelVariant.PER_TASK_PROMPT,
        prompt_len=prompt_len, shared_prompt_len=0, seed=init_seed)
    single.copy_backbone_from(encoder)
    fp = single.fingerprint()
    single.store.set_group_trainable("backbone", False)

    result = run_training(single, train_config, metrics_path=metrics_path)
    _, tensors = load_container(result.best_bytes)
    name = local_spec.name
    return SingleTaskArtifact(
        task_index=task_spec.index,
        task_name=task_spec.name,
        num_classes=task_spec.num_classes,
        prompt=tensors[f"prompt.{name}"],
        pooler_w=tensors[f"pooler_w.{name}"],
        pooler_b=tensors[f"pooler_b.{name}"],
        head=tensors[f"head.{name}"],
        backbone_fingerprint=fp,
    )


def save_artifacts(artifacts, out_dir):
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for art in artifacts:
        path = os.path.join(out_dir, f"artifact.task{art.task_index}.mtop")
        art.save(path)
        paths.append(path)
    return paths


def load_artifacts(in_dir):
    import glob
    import os

    paths = sorted(glob.glob(os.path.join(in_dir, "artifact.task*.mtop")))
    if not paths:
        raise ValueError(f"no artifact.task*.mtop files in {in_dir}")
    return [SingleTaskArtifact.load(p) for p in paths]

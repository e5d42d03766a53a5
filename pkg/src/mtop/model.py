"""Multi-task classification over one shared encoder pass.

All tasks' soft prompts are concatenated into a single pool prepended to the
input ([shared | task 1 | ... | task N | CLS | tokens]). Each task reads its
representation as the mean of the final hidden states at its own prompt
positions, then predicts through a task-conditional tanh pooler and head.
During training on task i, every other task's prompt block is detached, so
cross-task prompt gradients are exactly zero.

Variants:
  MTOP             one pass, conditional poolers, gradient stopping
  MTOP_NO_SG       same forward computation, gradients flow to all prompts
  SHARED_POOLER    one pass, [CLS] through a single shared pooler + per-task heads
  PER_TASK_PROMPT  separate pass per task with only that task's prompts
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import CLS_ID, PAD_ID
from .encoder import EncoderConfig, TransformerEncoder
from .initializers import glorot_uniform, truncated_normal
from .serialize import dump_container, fingerprint, load_container


class ModelVariant(enum.Enum):
    MTOP = "mtop"
    MTOP_NO_SG = "mtop_no_sg"
    SHARED_POOLER = "shared_pooler"
    PER_TASK_PROMPT = "per_task_prompt"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(
                f"unknown variant {value!r}; choose from "
                f"{[v.value for v in cls]}") from None


ONE_PASS_VARIANTS = (ModelVariant.MTOP, ModelVariant.MTOP_NO_SG,
                     ModelVariant.SHARED_POOLER)


@dataclass
class TaskSpec:
    """One task's identity; `data` is an optional TaskData handle."""

    index: int
    name: str
    num_classes: int = 2
    metric: str = "accuracy"
    data: object = None

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"task {self.name!r} needs at least 2 classes")


def specs_from_task_data(task_data):
    """Number TaskData objects 1..N into TaskSpecs."""
    return [TaskSpec(index=i + 1, name=td.name, num_classes=td.num_classes,
                     metric=td.metric, data=td)
            for i, td in enumerate(task_data)]


def extra_params_per_task(hidden_dim, prompt_len, num_classes):
    """Trainable scalars a new task adds: prompts, conditional pooler, head."""
    if hidden_dim <= 0 or prompt_len <= 0 or num_classes <= 0:
        raise ValueError("all dimensions must be positive")
    return hidden_dim * hidden_dim + (prompt_len + num_classes + 1) * hidden_dim


class PromptPool:
    """Per-task prompt parameters plus optional shared task-agnostic rows."""

    def __init__(self, prompt_len, shared_len):
        self.prompt_len = prompt_len
        self.shared_len = shared_len
        self.task_prompts = []
        self.shared = None

    @property
    def num_tasks(self):
        return len(self.task_prompts)

    @property
    def total_rows(self):
        return self.shared_len + self.num_tasks * self.prompt_len

    def task_rows(self, index):
        """Row range of task `index` (1-based) within the assembled block."""
        if not 1 <= index <= self.num_tasks:
            raise ValueError(f"task index {index} out of range 1..{self.num_tasks}")
        start = self.shared_len + (index - 1) * self.prompt_len
        return start, start + self.prompt_len

    def block(self, training_task=None, stop_others=False):
        """Concatenate [shared | task 1 | ... | task N] prompt rows.

        With `stop_others`, every task block except `training_task` is
        detached; shared rows are never detached.
        """
        parts = []
        if self.shared is not None:
            parts.append(self.shared.tensor)
        for i, p in enumerate(self.task_prompts, start=1):
            t = p.tensor
            if stop_others and i != training_task:
                t = ad.stop_gradient(t)
            parts.append(t)
        if len(parts) == 1:
            return parts[0]
        return ad.concat(parts, axis=0)


class MultiTaskModel:
    """Prompt-pool model over a transformer backbone.

    Construction is deterministic in `seed`: two models with identical
    configuration and seed have bit-identical parameters.
    """

    def __init__(self, encoder_config: EncoderConfig, tasks, variant=ModelVariant.MTOP,
                 prompt_len=2, shared_prompt_len=0, seed=0):
        if prompt_len < 1 or shared_prompt_len < 0:
            raise ValueError("prompt_len must be >= 1 and shared_prompt_len >= 0")
        self.variant = ModelVariant.parse(variant)
        self.prompt_len = prompt_len
        self.seed = seed
        self.store = ad.ParameterStore()

        seq = np.random.SeedSequence(seed)
        backbone_seq, shared_seq, self._task_seq = seq.spawn(3)
        self.encoder = TransformerEncoder(encoder_config, self.store, seed=backbone_seq)

        self.pool = PromptPool(prompt_len, shared_prompt_len)
        if shared_prompt_len > 0:
            rng = np.random.default_rng(shared_seq)
            self.pool.shared = self.store.register(
                "shared_prompt", truncated_normal(rng, (shared_prompt_len, encoder_config.hidden_dim)),
                group="shared_prompt")

        self.task_specs = []
        for spec in tasks:
            self.register_task(spec)

        self.shared_pooler = None
        if self.variant is ModelVariant.SHARED_POOLER:
            self._ensure_shared_pooler()

    # ----- construction ---------------------------------------------------

    def register_task(self, spec: TaskSpec):
        """Append a task, allocating its prompt, pooler, and head parameters.

        The new prompts go at the end of the task-specific block, so existing
        tasks keep their positions (and position embeddings).
        """
        expected = len(self.task_specs) + 1
        if spec.index != expected:
            raise ValueError(
                f"task indices must be contiguous: expected {expected}, got {spec.index}")
        if any(s.name == spec.name for s in self.task_specs):
            raise ValueError(f"duplicate task name {spec.name!r}")
        d = self.config.hidden_dim
        rng = np.random.default_rng(self._task_seq.spawn(1)[0])
        group = f"task.{spec.name}"
        prompt = self.store.register(
            f"prompt.{spec.name}", truncated_normal(rng, (self.prompt_len, d)), group=group)
        self.store.register(f"pooler_w.{spec.name}", glorot_uniform(rng, d, d), group=group)
        self.store.register(f"pooler_b.{spec.name}", np.zeros(d), group=group)
        self.store.register(f"head.{spec.name}", glorot_uniform(rng, d, spec.num_classes),
                            group=group)
        self.pool.task_prompts.append(prompt)
        self.task_specs.append(spec)
        return spec

    def _ensure_shared_pooler(self):
        if self.shared_pooler is None:
            d = self.config.hidden_dim
            rng = np.random.default_rng(np.random.SeedSequence(self.seed).spawn(4)[3])
            w = self.store.register("shared_pooler.w", glorot_uniform(rng, d, d),
                                    group="shared_pooler")
            b = self.store.register("shared_pooler.b", np.zeros(d), group="shared_pooler")
            self.shared_pooler = (w, b)

    # ----- bookkeeping ----------------------------------------------------

    @property
    def config(self):
        return self.encoder.config

    @property
    def num_tasks(self):
        return len(self.task_specs)

    @property
    def forward_passes(self):
        return self.encoder.passes.value

    def spec(self, index):
        if not 1 <= index <= self.num_tasks:
            raise ValueError(f"task index {index} out of range 1..{self.num_tasks}")
        return self.task_specs[index - 1]

    def task_head(self, index):
        """(pooler kernel, pooler bias, head) parameters of task `index`."""
        name = self.spec(index).name
        return (self.store[f"pooler_w.{name}"], self.store[f"pooler_b.{name}"],
                self.store[f"head.{name}"])

    def cls_position(self):
        return self.pool.total_rows

    def sequence_length(self, token_len, single_task=False):
        prompt_rows = self.prompt_len if single_task else self.pool.total_rows
        return prompt_rows + 1 + token_len

    def parameters(self):
        return list(self.store)

    def trainable_parameters(self):
        return self.store.trainable()

    def trainable_scalar_count(self):
        return self.store.trainable_scalar_count()

    def fingerprint(self):
        return fingerprint((p.name, p.data) for p in self.store.group("backbone"))

    def copy_backbone_from(self, other_encoder):
        """Overwrite backbone values from another encoder (same config)."""
        for p in other_encoder.store.group("backbone"):
            self.store[p.name].tensor.data = p.data.copy()

    def copy_state_from(self, other):
        """Copy every parameter this model shares by name with `other`."""
        for name, p in other.store.named():
            if name in self.store:
                self.store[name].tensor.data = p.data.copy()

    def with_variant(self, variant):
        """A new model with the same weights under a different forward policy."""
        clone = MultiTaskModel(
            self.config,
            [TaskSpec(s.index, s.name, s.num_classes, s.metric, s.data)
             for s in self.task_specs],
            variant=variant, prompt_len=self.prompt_len,
            shared_prompt_len=self.pool.shared_len, seed=self.seed)
        clone.copy_state_from(self)
        return clone

    # ----- assembly and forward -------------------------------------------

    def pad_batch(self, token_seqs):
        """Prepend [CLS], right-pad with [PAD]; returns (ids, mask) arrays."""
        seqs = list(token_seqs)
        width = 1 + max((len(s) for s in seqs), default=0)
        ids = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
        mask = np.zeros((len(seqs), width), dtype=bool)
        for r, s in enumerate(seqs):
            ids[r, 0] = CLS_ID
            ids[r, 1:1 + len(s)] = s
            mask[r, :1 + len(s)] = True
        return ids, mask

    def assemble_batch(self, token_seqs, training_task=None):
        """Embed a batch as [shared | task prompts ... | CLS | tokens | pad].

        Under the MTOP variant with `training_task` set, every other task's
        prompt block is detached so its gradients are exactly zero; shared
        prompts are never detached. Returns (embedded, mask).
        """
        if training_task is not None and not 1 <= training_task <= self.num_tasks:
            raise ValueError(
                f"training task {training_task} out of range 1..{self.num_tasks}")
        stop_others = self.variant is ModelVariant.MTOP and training_task is not None
        block = self.pool.block(training_task=training_task, stop_others=stop_others)
        ids, token_mask = self.pad_batch(token_seqs)
        embedded = self.encoder.embed_sequence(block, ids)
        prompt_mask = np.ones((ids.shape[0], self.pool.total_rows), dtype=bool)
        mask = np.concatenate([prompt_mask, token_mask], axis=1)
        return embedded, mask

    def assemble_single_task(self, index, token_seqs):
        """Embed a batch with only task `index`'s prompts prepended."""
        self.spec(index)
        block = self.pool.task_prompts[index - 1].tensor
        ids, token_mask = self.pad_batch(token_seqs)
        embedded = self.encoder.embed_sequence(block, ids)
        prompt_mask = np.ones((ids.shape[0], self.prompt_len), dtype=bool)
        mask = np.concatenate([prompt_mask, token_mask], axis=1)
        return embedded, mask

    def encode_pooled(self, token_seqs, training_task=None, training=False, rng=None):
        """One encoder pass over the fully assembled prompt-pool sequence."""
        embedded, mask = self.assemble_batch(token_seqs, training_task=training_task)
        return self.encoder.encode(embedded, mask, training=training, rng=rng)

    def task_representation(self, hidden, index, single_task=False):
        """Mean of the hidden rows at the task's prompt positions.

        Shared task-agnostic rows never contribute. With `single_task`, the
        sequence was assembled by `assemble_single_task` and the prompts sit
        at the front.
        """
        if single_task:
            self.spec(index)
            start, stop = 0, self.prompt_len
        else:
            start, stop = self.pool.task_rows(index)
        return ad.mean(hidden[:, start:stop, :], axis=1)

    def conditional_probs(self, rep, index):
        """Softmax over task logits: head applied to tanh(pooler(rep))."""
        w, b, v = self.task_head(index)
        pooled = ad.tanh(ad.linear(rep, w.tensor, b.tensor))
        return ad.softmax(ad.matmul(pooled, v.tensor))

    def shared_pooler_probs(self, rep, index):
        """Per-task head over the shared tanh pooler (baseline read-out)."""
        if self.shared_pooler is None:
            raise ValueError("model has no shared pooler (wrong variant)")
        w, b = self.shared_pooler
        head = self.store[f"head.{self.spec(index).name}"]
        pooled = ad.tanh(ad.linear(rep, w.tensor, b.tensor))
        return ad.softmax(ad.matmul(pooled, head.tensor))

    def _task_probs_from_hidden(self, hidden, index):
        if self.variant is ModelVariant.SHARED_POOLER:
            rep = hidden[:, self.cls_position(), :]
            return self.shared_pooler_probs(rep, index)
        rep = self.task_representation(hidden, index)
        return self.conditional_probs(rep, index)

    def predict_all_tasks(self, token_seqs):
        """Predict class probabilities for every task.

        One encoder pass for the one-pass variants; N passes (one per task's
        own prompt layout) for PER_TASK_PROMPT. Returns {task name: (batch,
        classes) float array}.
        """
        with ad.no_grad():
            out = {}
            if self.variant in ONE_PASS_VARIANTS:
                hidden = self.encode_pooled(token_seqs)
                for spec in self.task_specs:
                    out[spec.name] = self._task_probs_from_hidden(hidden, spec.index).data
            else:
                for spec in self.task_specs:
                    embedded, mask = self.assemble_single_task(spec.index, token_seqs)
                    hidden = self.encoder.encode(embedded, mask)
                    rep = self.task_representation(hidden, spec.index, single_task=True)
                    out[spec.name] = self.conditional_probs(rep, spec.index).data
        return out

    def loss_for_batch(self, token_seqs, labels, task_index, training=True, rng=None):
        """Cross-entropy of task `task_index` on a batch drawn from it."""
        labels = np.asarray(labels)
        if self.variant in ONE_PASS_VARIANTS:
            hidden = self.encode_pooled(
                token_seqs, training_task=task_index if training else None,
                training=training, rng=rng)
            if self.variant is ModelVariant.SHARED_POOLER:
                rep = hidden[:, self.cls_position(), :]
                w, b = self.shared_pooler
                pooled = ad.tanh(ad.linear(rep, w.tensor, b.tensor))
                head = self.store[f"head.{self.spec(task_index).name}"]
                logits = ad.matmul(pooled, head.tensor)
            else:
                rep = self.task_representation(hidden, task_index)
                w, b, v = self.task_head(task_index)
                pooled = ad.tanh(ad.linear(rep, w.tensor, b.tensor))
                logits = ad.matmul(pooled, v.tensor)
        else:
            embedded, mask = self.assemble_single_task(task_index, token_seqs)
            hidden = self.encoder.encode(embedded, mask, training=training, rng=rng)
            rep = self.task_representation(hidden, task_index, single_task=True)
            w, b, v = self.task_head(task_index)
            pooled = ad.tanh(ad.linear(rep, w.tensor, b.tensor))
            logits = ad.matmul(pooled, v.tensor)
        return ad.cross_entropy(logits, labels)

    # ----- serialization ---------------------------------------------------

    def _config_dict(self):
        return {
            "encoder": self.config.to_dict(),
            "variant": self.variant.value,
            "prompt_len": self.prompt_len,
            "shared_prompt_len": self.pool.shared_len,
            "seed": self.seed,
            "tasks": [{"index": s.index, "name": s.name,
                       "num_classes": s.num_classes, "metric": s.metric}
                      for s in self.task_specs],
        }

    def save_bytes(self):
        return dump_container(self._config_dict(),
                              ((p.name, p.data) for p in self.store))

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.save_bytes())

    @classmethod
    def from_bytes(cls, data, variant=None):
        config, tensors = load_container(data)
        specs = [TaskSpec(index=t["index"], name=t["name"],
                          num_classes=t["num_classes"], metric=t["metric"])
                 for t in sorted(config["tasks"], key=lambda t: t["index"])]
        model = cls(EncoderConfig.from_dict(config["encoder"]), specs,
                    variant=variant or config["variant"],
                    prompt_len=config["prompt_len"],
                    shared_prompt_len=config["shared_prompt_len"],
                    seed=config.get("seed", 0))
        for name, arr in tensors.items():
            if name not in model.store:
                raise ValueError(f"checkpoint tensor {name!r} has no home in the model")
            p = model.store[name]
            if p.data.shape != arr.shape:
                raise ValueError(
                    f"checkpoint tensor {name!r} has shape {arr.shape}, "
                    f"model expects {p.data.shape}")
            p.tensor.data = arr.copy()
        return model

    @classmethod
    def load(cls, path, variant=None):
        with open(path, "rb") as f:
            return cls.from_bytes(f.read(), variant=variant)

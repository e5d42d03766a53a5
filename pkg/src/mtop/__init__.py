"""Multi-task text classification with a shared prompt pool, gradient
stopping, conditional poolers, and one encoder pass for all tasks."""

from . import autodiff, data, encoder, initializers, metrics, model, serialize, trainer
from .encoder import EncoderConfig, TransformerEncoder
from .initializers import InitSpec, SingleTaskArtifact, initialize_model, \
    pre_finetune_single_task, transplant_init
from .model import ModelVariant, MultiTaskModel, TaskSpec, extra_params_per_task, \
    specs_from_task_data
from .trainer import Adam, Batch, TrainConfig, aggregate_runs_median, lr_at_step, \
    run_training, sample_task, train_step

__version__ = "0.1.0"

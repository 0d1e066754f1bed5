"""Reprogramming frozen classifiers with visual prompts and iterative label mapping."""

from .datagen import Dataset, GenSpec, generate, generate_splits, load_dataset, save_dataset
from .labelmap import (FrequencyMatrix, LabelMapping, flm, frequency_matrix, hamming_distance,
                       optimal_assignment, rlm)
from .models import Architecture, FrozenClassifier, PretrainConfig, load_checkpoint, pretrain_source, save_checkpoint
from .prompting import Prompt, PromptSpec, apply_prompt, prompt_gradient, zero_prompt
from .vptrain import RunHistory, TrainConfig, evaluate, ilm_vp_train, post_prompt_remap_drift, vp_train_fixed_lm

__version__ = "0.1.0"

__all__ = [
    "Dataset", "GenSpec", "generate", "generate_splits", "load_dataset", "save_dataset",
    "FrequencyMatrix", "LabelMapping", "flm", "frequency_matrix", "hamming_distance", "optimal_assignment", "rlm",
    "Architecture", "FrozenClassifier", "PretrainConfig", "load_checkpoint", "pretrain_source", "save_checkpoint",
    "Prompt", "PromptSpec", "apply_prompt", "prompt_gradient", "zero_prompt",
    "RunHistory", "TrainConfig", "evaluate", "ilm_vp_train", "post_prompt_remap_drift", "vp_train_fixed_lm",
]

"""Polynomial interaction network for click-through-rate prediction.

Stacks of multiplicative layers ``X_l = X_{l-1} * (act(W X_0) + 1)`` over
field embeddings, trained with FTRL-style optimizers that zero out whole
embedding rows and individual kernel weights.
"""
from ._backend import name as backend
from .features import EncodedDataset, FieldSpec, Vocabulary, encode, fit_vocabulary, split
from .gradients import GradientSet, backward, batch_gradients
from .metrics import EvalResult, auc, evaluate
from .model import ModelConfig, ModelParams, forward_example, init_params, predict_batch
from .optimizers import OptimizerBundle, sparsity_report
from .training import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "EncodedDataset", "EvalResult", "FieldSpec", "GradientSet", "ModelConfig",
    "ModelParams", "OptimizerBundle", "TrainConfig", "Vocabulary", "auc", "backend", "backward",
    "batch_gradients", "encode", "evaluate", "fit_vocabulary", "forward_example", "init_params",
    "load_checkpoint", "predict_batch", "save_checkpoint", "sparsity_report", "split", "train",
]

"""Variational autoencoders with automatic relevance determination on the latent code."""
from .config import PRESETS, ConfigError, TrainConfig, preset
from .data import Dataset, SplitSpec, Standardizer, load_matrix_file, split, synth_generate
from .models import (ArdState, BoundBreakdown, ModelState, Variant, build_model, compute_bound,
                     estimate_test_score, gsgvb_ard_bound, importance_log_likelihood, sgvb_ard_bound,
                     sgvb_bound)
from .numerics import RngStream, deterministic_mode
from .optim import RmsPropState, Trainer, train

__version__ = "0.1.0"

__all__ = [
    "ArdState", "BoundBreakdown", "ConfigError", "Dataset", "ModelState", "PRESETS", "RmsPropState",
    "RngStream", "SplitSpec", "Standardizer", "TrainConfig", "Trainer", "Variant", "build_model",
    "compute_bound", "deterministic_mode", "estimate_test_score", "gsgvb_ard_bound",
    "importance_log_likelihood", "load_matrix_file", "preset", "sgvb_ard_bound", "sgvb_bound", "split",
    "synth_generate", "train",
]

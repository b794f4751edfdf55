"""The pinned reference protocol for the directional experiments.

The reference dataset (2000/250/250 scenes) is fully determined by the
master seed below; the directional comparisons train a small model for a
few epochs per condition so the whole protocol fits a desk-scale CPU
budget. Values here are calibrated once and then frozen.
"""

from __future__ import annotations

import dataclasses
import os

from .scene import ModelConfig
from .synthgen import GeneratorConfig, generate_dataset
from .trainer import TrainConfig

REFERENCE_MASTER_SEED = 230_881
REFERENCE_N_SCENES = 2500
REFERENCE_SPLITS = (0.8, 0.1, 0.1)  # 2000 / 250 / 250


def reference_generator_config() -> GeneratorConfig:
    return GeneratorConfig()


def reference_model_config() -> ModelConfig:
    """Compact model for the directional runs (full default stays D=64)."""
    return ModelConfig(D=32, heads=4)


def directional_train_config(phase: str, seed: int) -> TrainConfig:
    return TrainConfig(
        epochs=4,
        batch_size=16,
        base_lr=2e-3,
        seed=seed,
        phase=phase,
        dtype="float32",
        gamma=1.0 if phase == "student_kd" else 0.0,
    )


def ablation_train_config(seed: int) -> TrainConfig:
    """Paper-style ablation protocol: a data fraction, map-free model."""
    cfg = directional_train_config("student_nkd", seed)
    return dataclasses.replace(cfg, train_fraction=0.2, epochs=6)


def build_reference_dataset(out_dir) -> dict:
    """Generate the pinned dataset into out_dir (idempotent per seed)."""
    os.makedirs(out_dir, exist_ok=True)
    return generate_dataset(
        REFERENCE_N_SCENES,
        reference_generator_config(),
        REFERENCE_SPLITS,
        out_dir,
        REFERENCE_MASTER_SEED,
    )

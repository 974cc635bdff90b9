"""Declarative experiment configuration.

A config is a single JSON document.  Unknown keys are rejected so that a
report can always be regenerated from the file that produced it.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .models import LINEAR, MLP, ModelSpec

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SyntheticData(_Strict):
    kind: Literal["synthetic"] = "synthetic"
    n: int = Field(12000, ge=2)
    property_ratio: float = Field(0.5, ge=0.0, le=1.0)
    feature_dim: int = Field(6, ge=2)
    phi: float = Field(0.3, ge=-1.0, le=1.0)
    task_shift: float = 1.0
    property_shift: float = 1.0
    interaction_shift: float = 0.0
    cell_cov_scale: float = Field(1.0, gt=0.0)


class CsvData(_Strict):
    kind: Literal["csv"]
    path: str
    task_column: str
    property_column: str


DataConfig = Annotated[Union[SyntheticData, CsvData], Field(discriminator="kind")]


class ModelConfig(_Strict):
    arch: Literal["linear", "mlp"] = LINEAR
    hidden_sizes: tuple[int, ...] = ()
    epochs: int = Field(20, ge=1)
    learning_rate: float = Field(0.1, gt=0.0)
    batch_size: int = Field(64, ge=1)
    l2_penalty: float = Field(0.0, ge=0.0)

    @model_validator(mode="after")
    def _arch(self):
        if self.arch == MLP and not self.hidden_sizes:
            raise ValueError("mlp needs hidden_sizes")
        if self.arch == LINEAR and self.hidden_sizes:
            raise ValueError("linear models take no hidden_sizes")
        return self

    def to_spec(self, seed: int = 0) -> ModelSpec:
        return ModelSpec(
            arch=self.arch,
            hidden_sizes=self.hidden_sizes,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            l2_penalty=self.l2_penalty,
            seed=seed,
        )


class KLAttackConfig(_Strict):
    kind: Literal["kl"] = "kl"
    name: Optional[str] = None
    pair_fraction: float = Field(0.8, gt=0.0, le=1.0)
    vote_mode: Literal["weighted", "simple"] = "weighted"
    normalize: bool = True
    flip: bool = False
    floor: float = Field(1e-6, gt=0.0, lt=0.5)


class ThresholdAttackConfig(_Strict):
    kind: Literal["threshold"] = "threshold"
    name: Optional[str] = None


class ZTOAttackConfig(_Strict):
    kind: Literal["zto"] = "zto"
    name: Optional[str] = None
    query_size: int = Field(16, ge=1)
    meta_model: ModelConfig = ModelConfig(epochs=200, learning_rate=0.1, batch_size=64, l2_penalty=1e-3)


AttackConfig = Annotated[
    Union[KLAttackConfig, ThresholdAttackConfig, ZTOAttackConfig], Field(discriminator="kind")
]


def attack_label(a) -> str:
    return a.name or a.kind


class DefenseConfig(_Strict):
    kind: Literal["undersample", "oversample", "augment", "poison"]
    target_alpha: Optional[float] = Field(None, ge=0.0, le=1.0)
    noise_sigma: float = Field(0.1, ge=0.0)
    r: float = Field(0.2, ge=0.0, le=1.0)
    adversary_same_setup: bool = False


class AccessConfig(_Strict):
    mode: Literal["confidence", "label_only_direct", "label_only_sampling"] = "confidence"
    epsilon: float = Field(0.01, gt=0.0, lt=0.5)
    k: int = Field(10, ge=1)
    sigma: float = Field(0.1, ge=0.0)


class ArchitectureGrid(_Strict):
    victim_models: list[ModelConfig]
    adversary_models: list[ModelConfig]


class ExperimentConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    name: str = "experiment"
    master_seed: int = 0
    data: DataConfig = SyntheticData()
    victim_fraction: float = Field(0.5, gt=0.0, lt=1.0)
    query_fraction: float = Field(0.25, gt=0.0, lt=1.0)
    alpha0: float = Field(0.5, ge=0.0, le=1.0)
    alpha1_grid: list[float] = [0.2]
    train_size: int = Field(1000, ge=2)
    victims_per_side: int = Field(20, ge=1)
    shadows_per_side: int = Field(20, ge=1)
    trials: int = Field(3, ge=1)
    query_size: int = Field(200, ge=2)
    attacks: list[AttackConfig] = [KLAttackConfig()]
    defense: Optional[DefenseConfig] = None
    victim_model: ModelConfig = ModelConfig()
    adversary_model: Optional[ModelConfig] = None
    access: AccessConfig = AccessConfig()
    epoch_checkpoints: Optional[list[int]] = None
    fairness: bool = False
    architecture_grid: Optional[ArchitectureGrid] = None

    @model_validator(mode="after")
    def _check(self):
        if not self.alpha1_grid:
            raise ValueError("alpha1_grid must not be empty")
        for a in self.alpha1_grid:
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"alpha1 value {a} outside [0, 1]")
        if self.alpha0 in self.alpha1_grid:
            raise ValueError("alpha0 must not appear in alpha1_grid")
        if len(set(self.alpha1_grid)) != len(self.alpha1_grid):
            raise ValueError("alpha1_grid has duplicates")
        if self.query_size % 2:
            raise ValueError("query_size must be even (equal halves per distribution)")
        if not self.attacks:
            raise ValueError("at least one attack is required")
        labels = [attack_label(a) for a in self.attacks]
        if len(set(labels)) != len(labels):
            raise ValueError(f"attack names must be unique, got {labels}")
        if self.epoch_checkpoints is not None:
            cps = self.epoch_checkpoints
            if not cps or cps != sorted(set(cps)) or cps[0] < 1 or cps[-1] > self.victim_model.epochs:
                raise ValueError("epoch_checkpoints must be strictly increasing within [1, victim_model.epochs]")
        if self.fairness and self.defense is None:
            raise ValueError("fairness requires a defense")
        return self

    @property
    def adversary(self) -> ModelConfig:
        return self.adversary_model or self.victim_model

    @property
    def defense_target(self) -> float:
        if self.defense is None or self.defense.target_alpha is None:
            return self.alpha0
        return self.defense.target_alpha

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")


def parse_config(obj: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(obj)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(obj)

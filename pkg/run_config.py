#!/usr/bin/env python3
"""
Run configuration for simulations and selections
JSON documents validated with pydantic, named built-in presets, and
environment settings loaded through python-dotenv.
"""

import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, model_validator

from errors import ConfigError
from knapsack import DEFAULT_MAX_DP_CELLS, check_solver_guard
from simulator import SyntheticModel, TrainerSettings, TrainingMask

logger = logging.getLogger(__name__)


# ============================================================================
# PRESETS
# ============================================================================

def _offset_groups(rows) -> List[Dict[str, Any]]:
    """(name, dimension, curvature, per-coordinate offset) -> group dicts"""
    return [
        {
            'name': name,
            'dimension': dimension,
            'curvature': curvature,
            'offset_norm': offset * math.sqrt(dimension),
        }
        for name, dimension, curvature, offset in rows
    ]


# bias and head carry ~97% of the initial loss with the two smallest sizes
_PLANTED8 = [
    ('others', 400, 1.0, 0.1),
    ('embed', 200, 0.5, 0.1),
    ('lora_A', 64, 2.0, 0.1),
    ('bias', 16, 2.0, 3.0),
    ('lora_B', 64, 2.5, 0.1),
    ('mlp', 256, 1.0, 0.1),
    ('attn', 128, 1.5, 0.1),
    ('head', 16, 1.0, 3.0),
]

PRESETS: Dict[str, Dict[str, Any]] = {
    'planted8': {
        'model_name': 'planted8',
        'groups': _offset_groups(_PLANTED8),
        'selection': {'epsilon': 0.05, 'solver': 'greedy'},
    },
    'planted8-large': {
        'model_name': 'planted8-large',
        'groups': _offset_groups([(n, 10 * d, c, o) for n, d, c, o in _PLANTED8]),
        'selection': {'epsilon': 0.05, 'solver': 'greedy'},
    },
    # initial group losses 8, 12, 16, 16, 8, 4 on sizes 1, 2, 4, 8, 16, 32
    'frontier6': {
        'model_name': 'frontier6',
        'groups': [
            {'name': name, 'dimension': size, 'curvature': 1.0, 'offset_norm': math.sqrt(2.0 * loss)}
            for name, size, loss in [
                ('head', 1, 8.0), ('bias', 2, 12.0), ('norm', 4, 16.0),
                ('lora_A', 8, 16.0), ('lora_B', 16, 8.0), ('others', 32, 4.0),
            ]
        ],
        'selection': {'epsilon': 0.25, 'solver': 'exhaustive'},
    },
    'quartic8': {
        'model_name': 'quartic8',
        'groups': _offset_groups(_PLANTED8),
        'training': {'quartic': 0.001},
        'selection': {'epsilon': 0.05, 'solver': 'greedy'},
    },
}


# ============================================================================
# CONFIG MODELS
# ============================================================================

class GroupConfig(BaseModel):
    name: str = Field(min_length=1)
    dimension: int = Field(ge=1)
    curvature: float = Field(gt=0)
    offset_norm: float = Field(ge=0)
    size: Optional[int] = Field(default=None, ge=1)

    @property
    def parameter_count(self) -> int:
        return self.size if self.size is not None else self.dimension


class TrainingConfig(BaseModel):
    iterations: int = Field(default=200, ge=0)
    lazy_period: Optional[int] = Field(default=None, ge=1)
    seed: int = 0
    noise_sigma: float = Field(default=0.0, ge=0)
    mask: Optional[List[str]] = None
    mode: Literal['simultaneous', 'sequential'] = 'simultaneous'
    fallback_lr: float = Field(default=1e-2, gt=0)
    quartic: float = Field(default=0.0, ge=0)


class SelectionConfig(BaseModel):
    epsilon: float = Field(default=1.0, ge=0, le=1)
    solver: Literal['greedy', 'dp', 'exhaustive', 'mitm'] = 'greedy'


class RunConfig(BaseModel):
    model_name: str = 'synthetic'
    preset: Optional[str] = None
    groups: List[GroupConfig] = Field(default_factory=list)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    selection: SelectionConfig = Field(default_factory=SelectionConfig)
    doubled_value: bool = False

    @model_validator(mode='before')
    @classmethod
    def expand_preset(cls, data: Any) -> Any:
        """Fill unspecified sections from the named preset"""
        if not isinstance(data, dict) or not data.get('preset'):
            return data
        name = data['preset']
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
        merged = json.loads(json.dumps(PRESETS[name]))
        for section in ('training', 'selection'):
            if section in data:
                merged[section] = {**merged.get(section, {}), **data[section]}
        for key, value in data.items():
            if key not in ('training', 'selection'):
                merged[key] = value
        if not data.get('groups'):
            merged['groups'] = PRESETS[name]['groups']
        return merged

    @model_validator(mode='after')
    def check_references(self) -> "RunConfig":
        names = [g.name for g in self.groups]
        if not names:
            raise ValueError("config defines no groups (give 'groups' or a 'preset')")
        if len(set(names)) != len(names):
            raise ValueError(f"group names must be unique, got {names}")
        if self.training.mask is not None:
            unknown = sorted(set(self.training.mask) - set(names))
            if unknown:
                raise ValueError(f"mask references undefined groups {unknown}")
        # SolverGuardError is not a ValueError, so it escapes validation with its own exit code
        check_solver_guard(self.selection.solver, len(names))
        return self

    # ------------------------------------------------------------------
    def build_model(self, seed: Optional[int] = None) -> SyntheticModel:
        return SyntheticModel.from_offsets(
            [
                (g.name, g.parameter_count, g.dimension, g.curvature, g.offset_norm)
                for g in self.groups
            ],
            rng_seed=self.training.seed if seed is None else seed,
            noise_sigma=self.training.noise_sigma,
            quartic=self.training.quartic,
            name=self.model_name,
        )

    def trainer_settings(self) -> TrainerSettings:
        return TrainerSettings(
            fallback_lr=self.training.fallback_lr,
            doubled_value=self.doubled_value,
            mode=self.training.mode,
        )

    def training_mask(self) -> Optional[TrainingMask]:
        if self.training.mask is None:
            return None
        return TrainingMask(frozenset(self.training.mask))

    def initial_group_losses(self) -> Dict[str, float]:
        """1/2 c ||offset||^2 per group (plus the quartic term), seed independent"""
        return {
            g.name: 0.5 * g.curvature * g.offset_norm ** 2 + 0.25 * self.training.quartic * g.offset_norm ** 4
            for g in self.groups
        }


# ============================================================================
# LOADING
# ============================================================================

@dataclass
class Settings:
    seed: Optional[int] = None
    log_level: str = 'WARNING'
    max_dp_cells: int = DEFAULT_MAX_DP_CELLS

    @classmethod
    def from_env(cls) -> "Settings":
        load_dotenv()
        raw_seed = os.getenv('ADAPEFT_SEED')
        raw_cells = os.getenv('ADAPEFT_MAX_DP_CELLS')
        try:
            return cls(
                seed=int(raw_seed) if raw_seed not in (None, '') else None,
                log_level=os.getenv('ADAPEFT_LOG_LEVEL', 'WARNING'),
                max_dp_cells=int(float(raw_cells)) if raw_cells else DEFAULT_MAX_DP_CELLS,
            )
        except ValueError as e:
            raise ConfigError(f"invalid environment setting: {e}") from e


def parse_run_config(data: Dict[str, Any], settings: Optional[Settings] = None) -> RunConfig:
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid run config: {e}") from e
    if settings is not None and settings.seed is not None:
        logger.info(f"🎲 ADAPEFT_SEED overrides config seed {config.training.seed} -> {settings.seed}")
        config.training.seed = settings.seed
    return config


def load_run_config(path, settings: Optional[Settings] = None) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return parse_run_config(data, settings)


def load_preset(name: str, settings: Optional[Settings] = None) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return parse_run_config({'preset': name}, settings)

"""Shared fixtures for the AdaPEFT test suite"""

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent
sys.path.insert(0, str(ROOT))

from influence import ParameterGroup  # noqa: E402
from simulator import GroupSpec, SyntheticModel  # noqa: E402
from traces import TraceFile, TraceRow  # noqa: E402

FIXTURES = ROOT / 'fixtures'


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ('ADAPEFT_SEED', 'ADAPEFT_LOG_LEVEL', 'ADAPEFT_MAX_DP_CELLS'):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def single_group_model(curvature: float, offset, name: str = 'g', noise_sigma: float = 0.0, seed: int = 0):
    """One group with target 0 and the given offset vector"""
    offset = [float(x) for x in offset]
    spec = GroupSpec(
        group=ParameterGroup(name, len(offset)),
        dimension=len(offset),
        curvature=curvature,
        target=[0.0] * len(offset),
    )
    return SyntheticModel([spec], {name: offset}, noise_sigma=noise_sigma, rng_seed=seed)


def trace_with_values(values, sizes, iterations=(0,)):
    """Trace whose every record has reduction value `values[name]` (b = a = 2V)"""
    groups = [ParameterGroup(name, sizes[name]) for name in values]
    rows = [
        TraceRow(it, name, 2.0 * v, 2.0 * v, 1.0, v > 0)
        for it in iterations
        for name, v in values.items()
    ]
    return TraceFile(model_name='test', groups=groups, rows=rows)

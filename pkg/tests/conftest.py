from __future__ import annotations

import json
from pathlib import Path
from typing import Callable

import pytest

from keeprate.core import KeepingSchedule, ModelDims
from keeprate.io import load_dims
from keeprate.reduction_sim import OracleEvaluator, SyntheticOracle


class ConstantEvaluator:
    pure = True

    def __init__(self, value: float = 0.7) -> None:
        self.value = value
        self.calls = 0

    def __call__(self, schedule: KeepingSchedule) -> float:
        self.calls += 1
        return self.value


@pytest.fixture
def llava_dims() -> ModelDims:
    return load_dims("llava7b")


@pytest.fixture
def nested_oracle() -> SyntheticOracle:
    # L = 8 with essential fractions 0.8, 0.8, 0.4, 0.4, 0.1, 0.1 over 100 tokens
    return SyntheticOracle.from_sizes([80, 80, 40, 40, 10, 10], 100, rng_seed=7)


@pytest.fixture
def oracle_evaluator(nested_oracle: SyntheticOracle) -> OracleEvaluator:
    return OracleEvaluator(nested_oracle)


@pytest.fixture
def constant_evaluator() -> ConstantEvaluator:
    return ConstantEvaluator()


@pytest.fixture
def make_constant() -> Callable[[float], ConstantEvaluator]:
    return ConstantEvaluator


@pytest.fixture
def write_json(tmp_path: Path) -> Callable[[str, dict], Path]:
    def _write(name: str, payload: dict) -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path

    return _write


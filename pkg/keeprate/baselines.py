"""Fixed-layer reduction schedules used as comparison points, and pre-LLM compressor composition."""

from __future__ import annotations

from typing import Sequence

from keeprate.core import UNREDUCED_LAYERS, KeepingSchedule, ModelDims, round_half_up
from keeprate.errors import KeeprateError, LayerRangeError


def uniform_schedule(num_layers: int, rate: float) -> KeepingSchedule:
    _check_rate(rate)
    return KeepingSchedule.from_reduced([rate] * (num_layers - UNREDUCED_LAYERS))


def fastv_schedule(num_layers: int, keep_through: int = UNREDUCED_LAYERS, removed: float = 0.5) -> KeepingSchedule:
    """All tokens through layer ``keep_through``, then a fraction ``removed`` dropped once."""
    _check_boundary(num_layers, keep_through)
    _check_rate(removed)
    return _step(num_layers, [keep_through], [1.0 - removed])


def vtw_schedule(num_layers: int, keep_through: int) -> KeepingSchedule:
    """All tokens through layer ``keep_through``, none afterwards."""
    _check_boundary(num_layers, keep_through)
    return _step(num_layers, [keep_through], [0.0])


def pdrop_schedule(num_layers: int, stages: Sequence[int] = (8, 16, 24), lam: float = 0.5) -> KeepingSchedule:
    """Staged pyramid: the rate is multiplied by ``lam`` after each stage boundary layer."""
    _check_rate(lam)
    boundaries = list(stages)
    if boundaries != sorted(set(boundaries)):
        raise KeeprateError(f"stage boundaries must be strictly increasing, got {boundaries}")
    for boundary in boundaries:
        _check_boundary(num_layers, boundary)
    return _step(num_layers, boundaries, [lam ** (n + 1) for n in range(len(boundaries))])


def compose_with_pre_reduction(schedule: KeepingSchedule, pre_keep: float) -> tuple[float, ...]:
    """Per-layer kept fraction of the original vision tokens when a compressor keeps ``pre_keep`` before the LLM."""
    _check_rate(pre_keep)
    return tuple(pre_keep * rate for rate in schedule.rates)


def composed_memory_rate(schedule: KeepingSchedule, pre_keep: float) -> float:
    rates = compose_with_pre_reduction(schedule, pre_keep)
    return sum(rates) / len(rates)


def pre_reduced_dims(dims: ModelDims, pre_keep: float) -> ModelDims:
    _check_rate(pre_keep)
    return ModelDims(
        num_layers=dims.num_layers,
        hidden_size=dims.hidden_size,
        ffn_intermediate=dims.ffn_intermediate,
        vision_tokens=max(1, round_half_up(pre_keep * dims.vision_tokens)),
        input_text_tokens=dims.input_text_tokens,
        output_tokens=dims.output_tokens,
    )


def _step(num_layers: int, boundaries: Sequence[int], levels: Sequence[float]) -> KeepingSchedule:
    rates = []
    for layer in range(1, num_layers + 1):
        passed = sum(1 for boundary in boundaries if layer > boundary)
        rates.append(1.0 if passed == 0 else levels[passed - 1])
    return KeepingSchedule(rates).require_valid()


def _check_boundary(num_layers: int, layer: int) -> None:
    if not UNREDUCED_LAYERS <= layer <= num_layers:
        raise LayerRangeError(f"reduction layer {layer} outside {UNREDUCED_LAYERS}..{num_layers}")


def _check_rate(value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise KeeprateError(f"rate must lie in [0, 1], got {value}")

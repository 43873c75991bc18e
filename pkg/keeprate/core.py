"""Domain types shared by every module: schedules, model dimensions and attention traces.

Layer indices are 1-based everywhere a layer number is exposed, so ``rate(1)``
and ``rate(2)`` are the two unreduced leading layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from keeprate.errors import DimensionMismatchError, LayerRangeError, ScheduleError

UNREDUCED_LAYERS = 2

VIOLATION_LEADING = "first two layers must be 1.0"
VIOLATION_RANGE = "rates must lie in [0, 1]"
VIOLATION_MONOTONE = "monotonicity"
VIOLATION_EMPTY = "schedule must have at least one layer"


@dataclass(frozen=True, slots=True)
class KeepingSchedule:
    rates: tuple[float, ...]
    monotone: bool = True

    def __init__(self, rates: Iterable[float], monotone: bool = True) -> None:
        object.__setattr__(self, "rates", tuple(float(r) for r in rates))
        object.__setattr__(self, "monotone", bool(monotone))

    @property
    def num_layers(self) -> int:
        return len(self.rates)

    def rate(self, layer: int) -> float:
        if not 1 <= layer <= self.num_layers:
            raise LayerRangeError(f"layer {layer} outside 1..{self.num_layers}")
        return self.rates[layer - 1]

    def reduced_rates(self) -> tuple[float, ...]:
        """Rates of layers 3..L, the part a search actually chooses."""
        return self.rates[UNREDUCED_LAYERS:]

    def require_valid(self) -> KeepingSchedule:
        violations = validate(self)
        if violations:
            raise ScheduleError(violations)
        return self

    def to_dict(self) -> dict[str, Any]:
        return {"num_layers": self.num_layers, "rates": list(self.rates)}

    @classmethod
    def from_dict(cls, data: dict[str, Any], *, monotone: bool = True) -> KeepingSchedule:
        rates = data.get("rates")
        if not isinstance(rates, list):
            raise ScheduleError(["schedule file needs a 'rates' list"])
        declared = data.get("num_layers", len(rates))
        if int(declared) != len(rates):
            raise DimensionMismatchError(
                f"num_layers={declared} but {len(rates)} rates were given"
            )
        return cls(rates, monotone=bool(data.get("monotone", monotone)))

    @classmethod
    def full(cls, num_layers: int) -> KeepingSchedule:
        return cls([1.0] * num_layers)

    @classmethod
    def from_reduced(cls, reduced: Sequence[float], *, monotone: bool = True) -> KeepingSchedule:
        return cls([1.0] * UNREDUCED_LAYERS + list(reduced), monotone=monotone)


@dataclass(frozen=True, slots=True)
class ModelDims:
    num_layers: int
    hidden_size: int
    ffn_intermediate: int
    vision_tokens: int
    input_text_tokens: int
    output_tokens: int

    def __post_init__(self) -> None:
        for name in (
            "num_layers",
            "hidden_size",
            "ffn_intermediate",
            "vision_tokens",
            "input_text_tokens",
            "output_tokens",
        ):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
                raise DimensionMismatchError(f"{name} must be a positive integer, got {value!r}")

    def to_dict(self) -> dict[str, int]:
        return {
            "num_layers": self.num_layers,
            "hidden_size": self.hidden_size,
            "ffn_intermediate": self.ffn_intermediate,
            "vision_tokens": self.vision_tokens,
            "input_text_tokens": self.input_text_tokens,
            "output_tokens": self.output_tokens,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ModelDims:
        try:
            return cls(**{key: int(data[key]) for key in _DIMS_KEYS})
        except KeyError as exc:
            raise DimensionMismatchError(f"dims file is missing {exc.args[0]!r}") from None


_DIMS_KEYS = (
    "num_layers",
    "hidden_size",
    "ffn_intermediate",
    "vision_tokens",
    "input_text_tokens",
    "output_tokens",
)


@dataclass(frozen=True, slots=True, eq=False)
class AttentionTrace:
    """Per-layer attention mass of each vision token toward the instruction tokens.

    Row ``i - 1`` of ``scores`` holds layer ``i``.
    """

    scores: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        scores = np.array(self.scores, dtype=np.float64)
        if scores.ndim != 2 or scores.shape[0] < 1 or scores.shape[1] < 1:
            raise DimensionMismatchError(f"trace must be a non-empty L x N matrix, got shape {scores.shape}")
        if not np.all(np.isfinite(scores)):
            raise DimensionMismatchError("trace scores must be finite")
        if np.any(scores < 0):
            raise DimensionMismatchError("trace scores must be non-negative")
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)

    @property
    def layer_count(self) -> int:
        return int(self.scores.shape[0])

    @property
    def token_count(self) -> int:
        return int(self.scores.shape[1])

    def layer(self, layer: int) -> np.ndarray:
        if not 1 <= layer <= self.layer_count:
            raise LayerRangeError(f"layer {layer} outside 1..{self.layer_count}")
        return self.scores[layer - 1]

    def to_dict(self) -> dict[str, Any]:
        return {
            "num_layers": self.layer_count,
            "num_tokens": self.token_count,
            "scores": self.scores.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> AttentionTrace:
        if "scores" not in data:
            raise DimensionMismatchError("trace file needs a 'scores' matrix")
        trace = cls(np.asarray(data["scores"], dtype=np.float64))
        layers = int(data.get("num_layers", trace.layer_count))
        tokens = int(data.get("num_tokens", trace.token_count))
        if (layers, tokens) != (trace.layer_count, trace.token_count):
            raise DimensionMismatchError(
                f"trace header says {layers}x{tokens} but scores are "
                f"{trace.layer_count}x{trace.token_count}"
            )
        return trace


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def token_counts(schedule: KeepingSchedule, vision_tokens: int) -> tuple[int, ...]:
    """Kept vision tokens per layer: ``round_half_up(r_i * N_v)``, clamped non-increasing for monotone schedules."""
    if vision_tokens < 1:
        raise DimensionMismatchError(f"vision_tokens must be >= 1, got {vision_tokens}")
    counts: list[int] = []
    for rate in schedule.rates:
        count = min(vision_tokens, max(0, round_half_up(rate * vision_tokens)))
        if schedule.monotone and counts:
            count = min(count, counts[-1])
        counts.append(count)
    return tuple(counts)


def validate(schedule: KeepingSchedule) -> list[str]:
    """Return the violated schedule invariants; an empty list means the schedule is valid."""
    rates = schedule.rates
    if not rates:
        return [VIOLATION_EMPTY]

    violations: list[str] = []
    if any(rate != 1.0 for rate in rates[:UNREDUCED_LAYERS]):
        violations.append(VIOLATION_LEADING)

    bad_range = [i for i, rate in enumerate(rates, start=1) if not 0.0 <= rate <= 1.0]
    if bad_range:
        violations.append(f"{VIOLATION_RANGE} (layers {', '.join(map(str, bad_range))})")

    if schedule.monotone:
        rising = [
            i
            for i in range(UNREDUCED_LAYERS + 1, len(rates) + 1)
            if rates[i - 1] > rates[i - 2]
        ]
        if rising:
            violations.append(f"{VIOLATION_MONOTONE} (layers {', '.join(map(str, rising))})")
    return violations


def trace_from_attention(attention: np.ndarray) -> AttentionTrace:
    """Aggregate raw attention of shape (L, heads, instruction_queries, N_v) into a trace.

    The score of token v at layer i is the mean over heads and instruction queries of
    the attention weight toward v.
    """
    weights = np.asarray(attention, dtype=np.float64)
    if weights.ndim != 4:
        raise DimensionMismatchError(
            f"attention must have shape (layers, heads, queries, tokens), got {weights.shape}"
        )
    return AttentionTrace(weights.mean(axis=(1, 2)))

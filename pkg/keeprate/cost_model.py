"""Layerwise compute and KV-cache accounting for keeping schedules.

The per-layer formula ``4 n d^2 + 2 n^2 d + 2 n d m`` counts multiply-accumulates
(MACs); FLOPs are reported as exactly twice the MACs. Only the language-model
stack is covered: the vision encoder and the LM head are not counted.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from keeprate.core import KeepingSchedule, ModelDims, token_counts
from keeprate.errors import BudgetRangeError, DimensionMismatchError

logger = logging.getLogger(__name__)

FLOPS_PER_MAC = 2
BISECTION_RTOL = 1e-6

ScheduleFamily = Callable[[float], KeepingSchedule]


@dataclass(frozen=True, slots=True)
class CostReport:
    total_flops: float
    total_macs: float
    memory_rate: float
    per_layer_flops: tuple[float, ...]
    per_layer_macs: tuple[float, ...]
    kept_tokens: tuple[int, ...]
    decode_flops: float

    @property
    def total_tflops(self) -> float:
        return self.total_flops / 1e12

    @property
    def total_tmacs(self) -> float:
        return self.total_macs / 1e12

    def summary(self) -> dict[str, float]:
        return {
            "total_tflops": self.total_tflops,
            "total_tmacs": self.total_tmacs,
            "memory_rate": self.memory_rate,
            "decode_tflops": self.decode_flops / 1e12,
        }


def layer_flops(n_tokens: float, dims: ModelDims) -> float:
    """MACs of one decoder layer processing ``n_tokens`` tokens (double it for FLOPs)."""
    if n_tokens < 0:
        raise DimensionMismatchError(f"token count must be non-negative, got {n_tokens}")
    d = float(dims.hidden_size)
    m = float(dims.ffn_intermediate)
    n = float(n_tokens)
    return 4.0 * n * d * d + 2.0 * n * n * d + 2.0 * n * d * m


def layer_macs_array(n_tokens: np.ndarray, dims: ModelDims) -> np.ndarray:
    """Vectorized ``layer_flops`` over real-valued token counts."""
    n = np.asarray(n_tokens, dtype=np.float64)
    d = float(dims.hidden_size)
    m = float(dims.ffn_intermediate)
    return 4.0 * n * d * d + 2.0 * n * n * d + 2.0 * n * d * m


def schedule_cost(schedule: KeepingSchedule, dims: ModelDims) -> CostReport:
    _check_layers(schedule, dims)
    schedule.require_valid()
    kept = token_counts(schedule, dims.vision_tokens)
    per_layer_macs = tuple(layer_flops(n + dims.input_text_tokens, dims) for n in kept)
    total_macs = float(sum(per_layer_macs))
    memory_rate = sum(kept) / (dims.num_layers * dims.vision_tokens)
    return CostReport(
        total_flops=FLOPS_PER_MAC * total_macs,
        total_macs=total_macs,
        memory_rate=memory_rate,
        per_layer_flops=tuple(FLOPS_PER_MAC * macs for macs in per_layer_macs),
        per_layer_macs=per_layer_macs,
        kept_tokens=kept,
        decode_flops=decode_flops(kept, dims),
    )


def decode_flops(kept_tokens: Sequence[int], dims: ModelDims) -> float:
    """FLOPs of ``output_tokens`` autoregressive steps attending over the retained KV cache."""
    d = float(dims.hidden_size)
    m = float(dims.ffn_intermediate)
    total_macs = 0.0
    for step in range(dims.output_tokens):
        for kept in kept_tokens:
            context = kept + dims.input_text_tokens + step + 1
            total_macs += 4.0 * d * d + 2.0 * context * d + 2.0 * d * m
    return FLOPS_PER_MAC * total_macs


def cost_from_token_counts(n_tokens: Sequence[float], dims: ModelDims) -> float:
    """Prefill FLOPs for real-valued per-layer token totals (vision plus text)."""
    return FLOPS_PER_MAC * float(np.sum(layer_macs_array(np.asarray(n_tokens), dims)))


def cost_from_rates(schedule: KeepingSchedule, dims: ModelDims) -> float:
    """Prefill FLOPs with unrounded ``n_i = r_i * N_v + text`` (continuous in every rate)."""
    _check_layers(schedule, dims)
    rates = np.asarray(schedule.rates, dtype=np.float64)
    return cost_from_token_counts(rates * dims.vision_tokens + dims.input_text_tokens, dims)


def uniform_equivalent_cost(n_tokens: Sequence[float], dims: ModelDims) -> float:
    """Cost of spreading the same token total evenly over all layers; a lower bound by Cauchy-Schwarz."""
    counts = np.asarray(n_tokens, dtype=np.float64)
    return cost_from_token_counts(np.full(counts.shape, counts.mean()), dims)


def match_budget(
    target_flops: float,
    dims: ModelDims,
    schedule_family: ScheduleFamily,
    *,
    lo: float = 0.0,
    hi: float = 1.0,
) -> float:
    """Find the family parameter whose (continuous) prefill FLOPs equal ``target_flops``.

    ``schedule_family`` must produce costlier schedules as its parameter grows.
    """
    if not lo < hi:
        raise BudgetRangeError(target_flops, float("nan"), float("nan"))

    def gap(theta: float) -> float:
        return cost_from_rates(schedule_family(theta), dims) - target_flops

    cost_lo = gap(lo) + target_flops
    cost_hi = gap(hi) + target_flops
    if not cost_lo <= target_flops <= cost_hi:
        raise BudgetRangeError(target_flops, cost_lo, cost_hi)
    if cost_lo == target_flops:
        return lo
    if cost_hi == target_flops:
        return hi

    theta = optimize.bisect(gap, lo, hi, xtol=1e-15, rtol=BISECTION_RTOL * 1e-3, maxiter=200)
    logger.debug("Matched budget: theta=%s target_flops=%s", theta, target_flops)
    return float(theta)


def _check_layers(schedule: KeepingSchedule, dims: ModelDims) -> None:
    if schedule.num_layers != dims.num_layers:
        raise DimensionMismatchError(
            f"schedule has {schedule.num_layers} layers but dims have {dims.num_layers}"
        )

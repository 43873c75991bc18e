"""Sort & Reduce inference simulation over a synthetic attention oracle.

The oracle plants nested essential token sets ``E_3 ⊇ E_4 ⊇ ... ⊇ E_L`` into a
generated attention trace. A schedule is scored by its mean per-layer recall of
the essential tokens, so the cheapest perfect schedule is known in closed form.

Trace generation, per token v:

    score_1(v) = noise
    score_i(v) = rho * score_{i-1}(v) + (1 - rho) * noise + bonus * w(v) * [v in E_i]

with noise uniform on ``[0, noise_scale)`` and ``w(v) = 1 + #{j : v in E_j}``, so a
token essential to deeper layers outranks a shallower one by at least one bonus.
Layer 2 shares layer 3's essential set because layer 3 is reduced by layer-2 scores.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from keeprate.core import UNREDUCED_LAYERS, AttentionTrace, KeepingSchedule, token_counts
from keeprate.errors import DimensionMismatchError, OracleError, ScheduleError
from keeprate.rank_stats import descending_order

logger = logging.getLogger(__name__)

ESSENTIAL_BONUS = 1.0


@dataclass(frozen=True, slots=True)
class SyntheticOracle:
    essential_sets: tuple[frozenset[int], ...]
    n_tokens: int
    persistence: float = 0.95
    noise_scale: float = 0.0
    rng_seed: int = 0
    latent_order: tuple[int, ...] = ()
    check_ground_truth: bool = True

    def __post_init__(self) -> None:
        if self.n_tokens < 1:
            raise OracleError("n_tokens must be >= 1")
        if not 0.0 <= self.persistence <= 1.0:
            raise OracleError(f"persistence must lie in [0, 1], got {self.persistence}")
        if self.noise_scale < 0.0:
            raise OracleError(f"noise_scale must be non-negative, got {self.noise_scale}")
        for i, (outer, inner) in enumerate(zip(self.essential_sets, self.essential_sets[1:]), start=3):
            if not inner <= outer:
                raise OracleError(f"essential set of layer {i + 1} is not nested in layer {i}")
        for essential in self.essential_sets:
            if any(not 0 <= v < self.n_tokens for v in essential):
                raise OracleError("essential token index out of range")
        if self.latent_order and sorted(self.latent_order) != list(range(self.n_tokens)):
            raise OracleError("latent_order must be a permutation of the token indices")
        if self.check_ground_truth and self.essential_sets:
            threshold = ground_truth_threshold(self)
            if self.noise_scale >= threshold:
                raise OracleError(
                    f"noise_scale {self.noise_scale} is not below the ground-truth threshold {threshold:.6g}"
                )

    @property
    def num_layers(self) -> int:
        return len(self.essential_sets) + UNREDUCED_LAYERS

    @property
    def essential_sizes(self) -> tuple[int, ...]:
        return tuple(len(e) for e in self.essential_sets)

    def essential(self, layer: int) -> frozenset[int]:
        """Essential set of ``layer`` (layer 2 borrows layer 3's; layer 1 has none)."""
        if layer <= 1 or not self.essential_sets:
            return frozenset()
        return self.essential_sets[max(layer, UNREDUCED_LAYERS + 1) - UNREDUCED_LAYERS - 1]

    def depth_weights(self) -> np.ndarray:
        weights = np.ones(self.n_tokens)
        for essential in self.essential_sets:
            weights[list(essential)] += 1.0
        return weights

    def minimal_rates(self) -> tuple[float, ...]:
        """Per-layer rates |E_i| / N_v of the cheapest schedule with perfect recall."""
        return tuple(len(e) / self.n_tokens for e in self.essential_sets)

    def to_spec(self) -> dict[str, Any]:
        return {
            "essential_sizes": list(self.essential_sizes),
            "n_tokens": self.n_tokens,
            "rho": self.persistence,
            "noise": self.noise_scale,
            "seed": self.rng_seed,
        }

    @classmethod
    def from_sizes(
        cls,
        essential_sizes: Sequence[int],
        n_tokens: int,
        *,
        persistence: float = 0.95,
        noise_scale: float = 0.0,
        rng_seed: int = 0,
        check_ground_truth: bool = True,
    ) -> SyntheticOracle:
        sizes = [int(s) for s in essential_sizes]
        if any(b > a for a, b in zip(sizes, sizes[1:])):
            raise OracleError(f"essential sizes must be non-increasing, got {sizes}")
        if any(not 0 <= s <= n_tokens for s in sizes):
            raise OracleError(f"essential sizes must lie in [0, {n_tokens}]")
        order = tuple(int(v) for v in np.random.default_rng(rng_seed).permutation(n_tokens))
        return cls(
            essential_sets=tuple(frozenset(order[:size]) for size in sizes),
            n_tokens=n_tokens,
            persistence=persistence,
            noise_scale=noise_scale,
            rng_seed=rng_seed,
            latent_order=order,
            check_ground_truth=check_ground_truth,
        )

    @classmethod
    def from_spec(cls, spec: dict[str, Any]) -> SyntheticOracle:
        try:
            return cls.from_sizes(
                spec["essential_sizes"],
                int(spec["n_tokens"]),
                persistence=float(spec.get("rho", 0.95)),
                noise_scale=float(spec.get("noise", 0.0)),
                rng_seed=int(spec.get("seed", 0)),
                check_ground_truth=bool(spec.get("check_ground_truth", True)),
            )
        except KeyError as exc:
            raise OracleError(f"oracle spec is missing {exc.args[0]!r}") from None


@dataclass(frozen=True, slots=True)
class ReductionRun:
    kept_indices: tuple[frozenset[int], ...]
    schedule: KeepingSchedule
    score: float
    recall: tuple[float, ...]

    @property
    def kept_counts(self) -> tuple[int, ...]:
        return tuple(len(kept) for kept in self.kept_indices)

    def report(self) -> dict[str, Any]:
        return {
            "score": self.score,
            "per_layer_recall": list(self.recall),
            "kept_counts": list(self.kept_counts),
        }


def _essential_masks(oracle: SyntheticOracle, num_layers: int) -> np.ndarray:
    masks = np.zeros((num_layers, oracle.n_tokens), dtype=bool)
    for layer in range(2, num_layers + 1):
        members = list(oracle.essential(layer))
        masks[layer - 1, members] = True
    return masks


def _deterministic_scores(oracle: SyntheticOracle, num_layers: int) -> np.ndarray:
    masks = _essential_masks(oracle, num_layers)
    weight = ESSENTIAL_BONUS * oracle.depth_weights()
    scores = np.zeros((num_layers, oracle.n_tokens))
    for i in range(1, num_layers):
        scores[i] = oracle.persistence * scores[i - 1] + weight * masks[i]
    return scores


def ground_truth_threshold(oracle: SyntheticOracle) -> float:
    """Largest noise scale under which the minimal-rate schedule keeps every essential token.

    Two orderings must survive the noise: each essential set above the rest at its
    own layer, and each reduced layer's set above the rest at the previous layer,
    whose scores drive its reduction. Accumulated noise stays in ``[0, noise_scale)``,
    so an ordering is safe whenever its noiseless gap exceeds the scale.
    """
    num_layers = oracle.num_layers
    masks = _essential_masks(oracle, num_layers)
    scores = _deterministic_scores(oracle, num_layers)
    threshold = np.inf
    checks = [(i, i) for i in range(1, num_layers)]
    checks += [(i - 1, i) for i in range(UNREDUCED_LAYERS, num_layers)]
    for row, mask_row in checks:
        essential = masks[mask_row]
        if essential.any() and (~essential).any():
            gap = scores[row][essential].min() - scores[row][~essential].max()
            threshold = min(threshold, gap)
    return float(threshold)


@functools.lru_cache(maxsize=256)
def generate_trace(oracle: SyntheticOracle, num_layers: int) -> AttentionTrace:
    _check_layers(oracle, num_layers)
    # separate stream from the permutation drawn in from_sizes
    rng = np.random.default_rng((oracle.rng_seed, 1))
    masks = _essential_masks(oracle, num_layers)
    weight = ESSENTIAL_BONUS * oracle.depth_weights()
    noise = rng.uniform(0.0, 1.0, size=(num_layers, oracle.n_tokens)) * oracle.noise_scale

    rho = oracle.persistence
    scores = np.empty((num_layers, oracle.n_tokens))
    scores[0] = noise[0]
    for i in range(1, num_layers):
        scores[i] = rho * scores[i - 1] + (1.0 - rho) * noise[i] + weight * masks[i]
    return AttentionTrace(scores)


def sort_and_reduce(prev_scores: Sequence[float] | np.ndarray, kept: frozenset[int] | set[int], n_target: int) -> frozenset[int]:
    """The ``n_target`` members of ``kept`` with the highest previous-layer scores (ties: lower index)."""
    if n_target > len(kept):
        raise ScheduleError([f"cannot keep {n_target} of {len(kept)} surviving tokens; schedule is not monotone"])
    if n_target == len(kept):
        return frozenset(kept)
    scores = np.asarray(prev_scores, dtype=np.float64)
    members = np.fromiter(sorted(kept), dtype=np.int64, count=len(kept))
    order = descending_order(scores[members])
    return frozenset(int(v) for v in members[order[:n_target]])


class _ReductionPlan:
    """Precomputed per-layer orderings for repeated evaluations on one oracle."""

    def __init__(self, oracle: SyntheticOracle, num_layers: int) -> None:
        trace = generate_trace(oracle, num_layers)
        self.oracle = oracle
        self.num_layers = num_layers
        self.orders = [descending_order(trace.layer(i)) for i in range(1, num_layers + 1)]
        self.essential_masks = _essential_masks(oracle, num_layers)

    def run(self, schedule: KeepingSchedule) -> ReductionRun:
        n = self.oracle.n_tokens
        counts = token_counts(schedule, n)
        alive = np.ones(n, dtype=bool)
        kept_sets: list[frozenset[int]] = []
        recall: list[float] = []
        for layer, count in enumerate(counts, start=1):
            if layer > UNREDUCED_LAYERS:
                ranked = self.orders[layer - 2]
                survivors = ranked[alive[ranked]]
                if count > survivors.size:
                    raise ScheduleError(
                        [f"layer {layer} keeps {count} tokens but only {survivors.size} survive"]
                    )
                alive = np.zeros(n, dtype=bool)
                alive[survivors[:count]] = True
                essential = self.essential_masks[layer - 1]
                size = int(essential.sum())
                recall.append(1.0 if size == 0 else int((alive & essential).sum()) / size)
            elif count != n:
                raise ScheduleError([f"layer {layer} must keep all {n} tokens"])
            kept_sets.append(frozenset(int(v) for v in np.flatnonzero(alive)))

        score = float(np.mean(recall)) if recall else 1.0
        return ReductionRun(kept_indices=tuple(kept_sets), schedule=schedule, score=score, recall=tuple(recall))

    def score(self, schedule: KeepingSchedule) -> float:
        return self.run(schedule).score


@functools.lru_cache(maxsize=256)
def _plan(oracle: SyntheticOracle, num_layers: int) -> _ReductionPlan:
    return _ReductionPlan(oracle, num_layers)


def run_reduction(oracle: SyntheticOracle, schedule: KeepingSchedule, num_layers: int) -> ReductionRun:
    _check_schedule(schedule, num_layers)
    return _plan(oracle, num_layers).run(schedule)


def evaluate(oracle: SyntheticOracle, schedule: KeepingSchedule, num_layers: int) -> float:
    """Mean per-layer recall of the essential tokens over layers 3..L."""
    return run_reduction(oracle, schedule, num_layers).score


class OracleEvaluator:
    """Callable evaluator contract (``schedule -> float``) backed by a synthetic oracle."""

    pure = True

    def __init__(self, oracle: SyntheticOracle) -> None:
        self.oracle = oracle
        self.num_layers = oracle.num_layers

    def __call__(self, schedule: KeepingSchedule) -> float:
        return evaluate(self.oracle, schedule, self.num_layers)


def _check_layers(oracle: SyntheticOracle, num_layers: int) -> None:
    if num_layers != oracle.num_layers:
        raise DimensionMismatchError(
            f"oracle describes {oracle.num_layers} layers but {num_layers} were requested"
        )


def _check_schedule(schedule: KeepingSchedule, num_layers: int) -> None:
    if schedule.num_layers != num_layers:
        raise DimensionMismatchError(
            f"schedule has {schedule.num_layers} layers but the run has {num_layers}"
        )
    schedule.require_valid()

"""Greedy layer-by-layer keeping-rate search and its brute-force reference.

At searched layer i the target is ``f(r_i) = E(r_3, ..., r_{i-1}, r_i) - lambda * r_i``
with r_i <= r_{i-1}. While layer i is being searched, every deeper layer
provisionally inherits the candidate rate, which keeps ``E`` defined mid-search.
"""

from __future__ import annotations

import dataclasses
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence, Union

import numpy as np

from keeprate.core import UNREDUCED_LAYERS, KeepingSchedule
from keeprate.errors import EnumerationBudgetError, EvaluationError, KeeprateError, ScheduleError
from keeprate.search.bayes_opt import BoConfig, bo_maximize

logger = logging.getLogger(__name__)

EXHAUSTIVE = "exhaustive"
AUTO = "auto"
EXHAUSTIVE_GRID_LIMIT = 32
ENUMERATION_LIMIT = 10**7
RATE_TOLERANCE = 1e-12


class Evaluator(Protocol):
    def __call__(self, schedule: KeepingSchedule) -> float: ...


def default_rate_grid(points: int = 21) -> tuple[float, ...]:
    if points < 2:
        raise KeeprateError("a rate grid needs at least 2 points")
    return tuple(float(r) for r in np.round(np.linspace(0.0, 1.0, points), 12))


@dataclass(frozen=True, slots=True)
class GSearchConfig:
    lam: float = 0.01
    stride: int = 3
    rate_grid: tuple[float, ...] = field(default_factory=default_rate_grid)
    bo: Union[BoConfig, str] = AUTO
    workers: int = 1

    def __post_init__(self) -> None:
        grid = tuple(float(r) for r in self.rate_grid)
        object.__setattr__(self, "rate_grid", grid)
        if self.lam < 0:
            raise KeeprateError(f"lambda must be non-negative, got {self.lam}")
        if self.stride < 1:
            raise KeeprateError(f"stride must be >= 1, got {self.stride}")
        if not grid:
            raise KeeprateError("rate grid must not be empty")
        if list(grid) != sorted(grid) or len(set(grid)) != len(grid):
            raise KeeprateError("rate grid must be strictly increasing")
        if grid[0] < 0.0 or grid[-1] > 1.0:
            raise KeeprateError("rate grid must lie within [0, 1]")
        if 1.0 not in grid:
            raise KeeprateError("rate grid must contain 1.0")
        if not (isinstance(self.bo, BoConfig) or self.bo in (AUTO, EXHAUSTIVE)):
            raise KeeprateError(f"bo must be a BoConfig, {AUTO!r} or {EXHAUSTIVE!r}")

    @property
    def uses_bo(self) -> bool:
        if isinstance(self.bo, BoConfig):
            return True
        return self.bo == AUTO and len(self.rate_grid) > EXHAUSTIVE_GRID_LIMIT

    def bo_config(self) -> BoConfig:
        return self.bo if isinstance(self.bo, BoConfig) else BoConfig()


@dataclass(frozen=True, slots=True)
class AuditRow:
    layer: int
    candidate_rate: float
    performance: float
    target: float


@dataclass(frozen=True, slots=True)
class GSearchResult:
    schedule: KeepingSchedule
    audit: tuple[AuditRow, ...]
    searched_layers: tuple[int, ...]

    def csv_rows(self) -> list[tuple[int, float, float, float]]:
        return [(row.layer, row.candidate_rate, row.performance, row.target) for row in self.audit]


def extend_prefix(prefix: Sequence[float], rate: float, num_layers: int) -> KeepingSchedule:
    """Schedule ``[1, 1, *prefix, rate, rate, ...]`` covering all ``num_layers`` layers."""
    tail = num_layers - UNREDUCED_LAYERS - len(prefix)
    if tail < 1:
        raise ScheduleError([f"prefix of {len(prefix)} rates leaves no layer to search in {num_layers} layers"])
    return KeepingSchedule.from_reduced(list(prefix) + [rate] * tail)


def layer_target(
    evaluator: Evaluator,
    fixed_prefix: Sequence[float],
    rate: float,
    lam: float,
    *,
    num_layers: int,
) -> float:
    return _layer_terms(evaluator, fixed_prefix, rate, lam, num_layers)[1]


def _layer_terms(
    evaluator: Evaluator,
    fixed_prefix: Sequence[float],
    rate: float,
    lam: float,
    num_layers: int,
) -> tuple[float, float]:
    ceiling = fixed_prefix[-1] if fixed_prefix else 1.0
    if rate > ceiling + RATE_TOLERANCE:
        raise ScheduleError([f"candidate rate {rate} exceeds the previous layer's rate {ceiling}"])
    performance = float(evaluator(extend_prefix(fixed_prefix, rate, num_layers)))
    if not math.isfinite(performance):
        raise EvaluationError(f"evaluator returned non-finite value {performance!r}", point=rate)
    return performance, performance - lam * rate


def run_g_search(evaluator: Evaluator, num_layers: int, config: GSearchConfig | None = None) -> GSearchResult:
    config = config or GSearchConfig()
    if num_layers <= UNREDUCED_LAYERS:
        return GSearchResult(KeepingSchedule.full(num_layers), (), ())

    searched = tuple(range(UNREDUCED_LAYERS + 1, num_layers + 1, config.stride))
    reduced: list[float] = []
    audit: list[AuditRow] = []

    for position, layer in enumerate(searched):
        ceiling = reduced[-1] if reduced else 1.0
        candidates = [r for r in config.rate_grid if r <= ceiling + RATE_TOLERANCE]
        try:
            if config.uses_bo:
                best_rate, rows = _search_layer_bo(evaluator, reduced, candidates, layer, num_layers, config)
            else:
                best_rate, rows = _search_layer_exhaustive(evaluator, reduced, candidates, layer, num_layers, config)
        except EvaluationError as exc:
            if exc.layer is not None:
                raise
            raise EvaluationError(exc.message, point=exc.point, layer=layer) from exc
        except KeeprateError:
            raise
        except Exception as exc:
            raise EvaluationError(f"evaluator failed: {exc}", layer=layer) from exc

        audit.extend(rows)
        next_layer = searched[position + 1] if position + 1 < len(searched) else num_layers + 1
        reduced.extend([best_rate] * (next_layer - layer))
        logger.info("G-Search layer %s: rate=%s (inherited through layer %s)", layer, best_rate, next_layer - 1)

    schedule = KeepingSchedule.from_reduced(reduced).require_valid()
    return GSearchResult(schedule=schedule, audit=tuple(audit), searched_layers=searched)


def g_search(evaluator: Evaluator, num_layers: int, config: GSearchConfig | None = None) -> KeepingSchedule:
    return run_g_search(evaluator, num_layers, config).schedule


def _search_layer_exhaustive(
    evaluator: Evaluator,
    prefix: list[float],
    candidates: list[float],
    layer: int,
    num_layers: int,
    config: GSearchConfig,
) -> tuple[float, list[AuditRow]]:
    terms = _map(
        lambda rate: _layer_terms(evaluator, prefix, rate, config.lam, num_layers),
        candidates,
        workers=config.workers if getattr(evaluator, "pure", False) else 1,
    )
    rows = [AuditRow(layer, rate, perf, target) for rate, (perf, target) in zip(candidates, terms)]
    best = rows[0]
    for row in rows[1:]:
        # candidates ascend, so strict improvement keeps the lowest rate on ties
        if row.target > best.target:
            best = row
    return best.candidate_rate, rows


def _search_layer_bo(
    evaluator: Evaluator,
    prefix: list[float],
    candidates: list[float],
    layer: int,
    num_layers: int,
    config: GSearchConfig,
) -> tuple[float, list[AuditRow]]:
    ceiling = candidates[-1]
    if len(candidates) == 1 or ceiling <= 0.0:
        perf, target = _layer_terms(evaluator, prefix, candidates[0], config.lam, num_layers)
        return candidates[0], [AuditRow(layer, candidates[0], perf, target)]

    grid = np.asarray(candidates)
    cache: dict[float, tuple[float, float]] = {}
    rows: list[AuditRow] = []

    def snap(x: float) -> float:
        return float(grid[int(np.argmin(np.abs(grid - x)))])

    def objective(x: float) -> float:
        rate = snap(x)
        if rate not in cache:
            cache[rate] = _layer_terms(evaluator, prefix, rate, config.lam, num_layers)
            rows.append(AuditRow(layer, rate, *cache[rate]))
        return cache[rate][1]

    bo = dataclasses.replace(config.bo_config(), domain_lo=0.0, domain_hi=ceiling)
    result = bo_maximize(objective, bo)
    return snap(result.argmax), rows


def monotone_schedule_count(grid_size: int, searched_layers: int) -> int:
    return math.comb(grid_size + searched_layers - 1, searched_layers)


def brute_force_search(
    evaluator: Evaluator,
    num_layers: int,
    config: GSearchConfig | None = None,
    *,
    limit: int = ENUMERATION_LIMIT,
) -> KeepingSchedule:
    """Exhaustively maximize ``sum_i f_i = (L - 2) * E(R) - lambda * sum_i r_i`` over monotone grid schedules."""
    config = config or GSearchConfig()
    depth = num_layers - UNREDUCED_LAYERS
    if depth <= 0:
        return KeepingSchedule.full(num_layers)
    count = monotone_schedule_count(len(config.rate_grid), depth)
    if count > limit:
        raise EnumerationBudgetError(count, limit)

    descending = sorted(config.rate_grid, reverse=True)
    best_key: tuple[float, tuple[float, ...]] | None = None
    for combo in itertools.combinations_with_replacement(range(len(descending)), depth):
        rates = tuple(descending[i] for i in combo)
        schedule = KeepingSchedule.from_reduced(rates)
        try:
            performance = float(evaluator(schedule))
        except KeeprateError:
            raise
        except Exception as exc:
            raise EvaluationError(f"evaluator failed: {exc}", point=rates) from exc
        objective = depth * performance - config.lam * sum(rates)
        if best_key is None or objective > best_key[0] or (objective == best_key[0] and rates < best_key[1]):
            best_key = (objective, rates)

    assert best_key is not None
    logger.info("Brute force enumerated %s schedules; best objective=%s", count, best_key[0])
    return KeepingSchedule.from_reduced(best_key[1])


def _map(fn: Callable[[float], tuple[float, float]], items: list[float], *, workers: int) -> list[tuple[float, float]]:
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))

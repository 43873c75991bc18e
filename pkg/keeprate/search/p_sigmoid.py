"""P-Sigmoid keeping schedules: ``r(i) = 2b / (1 + exp(k (i - alpha)))`` for layers 3..L.

With ``alpha = (3 + L) / 2`` the rates pair up as ``r(i) + r(3 + L - i) = 2b``, so
the rates of layers 3..L always sum to ``(L - 2) * b`` while no rate is clamped
(``b <= 0.5``). Larger ``b`` clamps early layers at 1.0 and the realized mean
rate is reported as ``achieved_budget``.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy import optimize

from keeprate.core import UNREDUCED_LAYERS, KeepingSchedule, ModelDims, validate
from keeprate.core import VIOLATION_MONOTONE
from keeprate.cost_model import match_budget
from keeprate.errors import KeeprateError, LayerRangeError, ScheduleError
from keeprate.search.bayes_opt import BoConfig, BoResult, bo_maximize
from keeprate.search.g_search import Evaluator

logger = logging.getLogger(__name__)

K_MAX = 20.0
FIT_GRID = np.concatenate(([0.0], np.logspace(-3.0, 2.0, 200)))
FIT_XATOL = 1e-6


@dataclass(frozen=True, slots=True)
class PSigmoidParams:
    b: float
    k: float
    num_layers: int

    def __post_init__(self) -> None:
        if not 0.0 < self.b <= 1.0:
            raise KeeprateError(f"budget b must lie in (0, 1], got {self.b}")
        if not (self.k >= 0.0 and math.isfinite(self.k)):
            raise KeeprateError(f"steepness k must be a finite non-negative number, got {self.k}")
        if self.num_layers <= UNREDUCED_LAYERS:
            raise KeeprateError(f"P-Sigmoid needs more than {UNREDUCED_LAYERS} layers, got {self.num_layers}")

    @property
    def alpha(self) -> float:
        return (3 + self.num_layers) / 2

    def to_dict(self) -> dict[str, float | int]:
        return {"b": self.b, "k": self.k, "alpha": self.alpha, "num_layers": self.num_layers}


@dataclass(frozen=True, slots=True)
class PSigmoidFit(PSigmoidParams):
    residual: float = 0.0

    def to_dict(self) -> dict[str, float | int]:
        return {"b": self.b, "k": self.k, "alpha": self.alpha, "num_layers": self.num_layers, "residual": self.residual}


@dataclass(frozen=True, slots=True)
class KSearchResult:
    k: float
    schedule: KeepingSchedule
    params: PSigmoidParams
    bo: BoResult

    def __iter__(self) -> Iterator[float | KeepingSchedule]:
        yield self.k
        yield self.schedule

    @property
    def achieved_budget(self) -> float:
        return achieved_budget(self.params)


def psigmoid_rates(b: float, k: float, num_layers: int) -> np.ndarray:
    """Clamped rates of layers 3..L (``b = 0`` allowed, for budget bisection)."""
    layers = np.arange(UNREDUCED_LAYERS + 1, num_layers + 1, dtype=np.float64)
    alpha = (3 + num_layers) / 2
    # exp overflow at large k yields inf, and 2b / inf is the 0.0 we want
    with np.errstate(over="ignore"):
        raw = 2.0 * b / (1.0 + np.exp(k * (layers - alpha)))
    return np.minimum(raw, 1.0)


def sigmoid_rate(layer: int, params: PSigmoidParams) -> float:
    if not UNREDUCED_LAYERS < layer <= params.num_layers:
        raise LayerRangeError(f"sigmoid is defined on layers 3..{params.num_layers}, got {layer}")
    exponent = params.k * (layer - params.alpha)
    if exponent > 700.0:
        return 0.0
    return min(1.0, 2.0 * params.b / (1.0 + math.exp(exponent)))


def schedule_from_params(params: PSigmoidParams) -> KeepingSchedule:
    return KeepingSchedule.from_reduced(psigmoid_rates(params.b, params.k, params.num_layers).tolist())


def achieved_budget(params: PSigmoidParams) -> float:
    return float(np.mean(psigmoid_rates(params.b, params.k, params.num_layers)))


def k_search(
    evaluator: Evaluator,
    budget: float,
    num_layers: int,
    bo: BoConfig | None = None,
    *,
    k_max: float = K_MAX,
) -> KSearchResult:
    """Maximize ``evaluator`` over the steepness ``k`` in ``[0, k_max]`` at a pinned budget."""
    PSigmoidParams(budget, 0.0, num_layers)
    if budget > 0.5:
        logger.warning("Budget b=%s clamps early layers; the realized mean rate will be lower", budget)
    config = dataclasses.replace(bo or BoConfig(), domain_lo=0.0, domain_hi=k_max)

    def target(k: float) -> float:
        return float(evaluator(schedule_from_params(PSigmoidParams(budget, max(k, 0.0), num_layers))))

    result = bo_maximize(target, config)
    params = PSigmoidParams(budget, result.argmax, num_layers)
    logger.info("k-search: b=%s k*=%.6g score=%.6g", budget, result.argmax, result.value)
    return KSearchResult(k=result.argmax, schedule=schedule_from_params(params), params=params, bo=result)


def fit_psigmoid(schedule: KeepingSchedule, *, require_monotone: bool = True) -> PSigmoidFit:
    """Least-squares P-Sigmoid through the rates of layers 3..L.

    ``b`` is pinned to the mean reduced rate; ``k`` is picked on a log grid and
    refined with bounded Brent search between the winner's neighbours.
    """
    if schedule.num_layers < 4:
        raise ScheduleError([f"fitting needs at least 4 layers, got {schedule.num_layers}"])
    violations = validate(schedule)
    if not require_monotone:
        violations = [v for v in violations if not v.startswith(VIOLATION_MONOTONE)]
    if violations:
        raise ScheduleError(violations)

    rates = np.asarray(schedule.reduced_rates(), dtype=np.float64)
    num_layers = schedule.num_layers
    b = float(rates.mean())
    if b <= 0.0:
        return PSigmoidFit(b=min(1.0, max(b, np.finfo(float).tiny)), k=0.0, num_layers=num_layers, residual=0.0)

    def sse(k: float) -> float:
        return float(np.sum((rates - psigmoid_rates(b, k, num_layers)) ** 2))

    errors = np.array([sse(k) for k in FIT_GRID])
    best = int(np.argmin(errors))
    best_k, best_err = float(FIT_GRID[best]), float(errors[best])

    lo = FIT_GRID[max(best - 1, 0)]
    hi = FIT_GRID[min(best + 1, FIT_GRID.size - 1)]
    if hi > lo:
        refined = optimize.minimize_scalar(sse, bounds=(lo, hi), method="bounded", options={"xatol": FIT_XATOL})
        if refined.fun < best_err:
            best_k, best_err = float(refined.x), float(refined.fun)

    logger.debug("P-Sigmoid fit: b=%.6g k=%.6g residual=%.3g", b, best_k, best_err)
    return PSigmoidFit(b=b, k=best_k, num_layers=num_layers, residual=best_err)


def budget_for_flops(target_flops: float, dims: ModelDims, k: float) -> float:
    """Budget ``b`` whose P-Sigmoid schedule at steepness ``k`` costs ``target_flops``."""
    if k < 0:
        raise KeeprateError(f"steepness k must be non-negative, got {k}")

    def family(b: float) -> KeepingSchedule:
        return KeepingSchedule.from_reduced(psigmoid_rates(b, k, dims.num_layers).tolist())

    return match_budget(target_flops, dims, family, lo=0.0, hi=1.0)

"""One-dimensional Gaussian-process Bayesian optimization with Expected Improvement.

The surrogate uses a constant mean (the sample mean) and a squared-exponential
kernel. Hyperparameters come from an 8x8 grid over (length scale, signal
variance) maximizing the log marginal likelihood. Acquisition is maximized on a
uniform grid, so a run is fully determined by its config and seed.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg
from scipy.stats import norm

from keeprate.errors import EvaluationError, InsufficientDataError, KeeprateError

logger = logging.getLogger(__name__)

HYPER_GRID_SIZE = 8
LENGTH_SCALE_RANGE = (1e-2, 1.0)  # fractions of the domain width
SIGNAL_VARIANCE_RANGE = (1e-2, 1e2)  # multiples of the sample variance
MIN_STDDEV = 1e-12

Target = Callable[[float], float]


@dataclass(frozen=True, slots=True)
class BoConfig:
    num_initial_samples: int = 10
    num_iterations: int = 15
    domain_lo: float = 0.0
    domain_hi: float = 1.0
    acquisition_grid_size: int = 101
    rng_seed: int = 0
    jitter: float = 1e-6
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.domain_lo < self.domain_hi:
            raise KeeprateError(f"empty search domain [{self.domain_lo}, {self.domain_hi}]")
        if self.num_initial_samples < 2:
            raise KeeprateError("num_initial_samples must be >= 2")
        if self.num_iterations < 0:
            raise KeeprateError("num_iterations must be >= 0")
        if self.acquisition_grid_size < 2:
            raise KeeprateError("acquisition_grid_size must be >= 2")
        if self.jitter <= 0:
            raise KeeprateError("jitter must be positive")
        if self.workers < 1:
            raise KeeprateError("workers must be >= 1")

    @property
    def width(self) -> float:
        return self.domain_hi - self.domain_lo

    def acquisition_grid(self) -> np.ndarray:
        return np.linspace(self.domain_lo, self.domain_hi, self.acquisition_grid_size)


@dataclass(frozen=True, slots=True, eq=False)
class GpSurrogate:
    observed_points: np.ndarray
    observed_values: np.ndarray
    length_scale: float
    signal_variance: float
    noise_jitter: float
    mean_value: float
    _factor: tuple[np.ndarray, bool] = field(repr=False)
    _alpha: np.ndarray = field(repr=False)

    def kernel(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        diff = np.subtract.outer(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
        return self.signal_variance * np.exp(-(diff**2) / (2.0 * self.length_scale**2))

    def predict(self, x: float | Sequence[float] | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation of the latent function at ``x``."""
        xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
        cross = self.kernel(xs, self.observed_points)
        mean = self.mean_value + cross @ self._alpha
        solved = linalg.cho_solve(self._factor, cross.T)
        variance = self.signal_variance - np.sum(cross.T * solved, axis=0)
        return mean, np.sqrt(np.clip(variance, 0.0, None))

    def log_marginal_likelihood(self) -> float:
        centered = self.observed_values - self.mean_value
        lower = self._factor[0]
        n = centered.size
        return float(
            -0.5 * centered @ self._alpha
            - np.sum(np.log(np.abs(np.diag(lower))))
            - 0.5 * n * math.log(2.0 * math.pi)
        )


@dataclass(frozen=True, slots=True)
class Evaluation:
    step: int
    x: float
    value: float
    is_initial: bool


@dataclass(frozen=True, slots=True)
class BoResult:
    argmax: float
    value: float
    log: tuple[Evaluation, ...]

    def csv_rows(self) -> list[tuple[int, float, float, bool]]:
        return [(e.step, e.x, e.value, e.is_initial) for e in self.log]


def gp_fit(
    points: Sequence[float] | np.ndarray,
    values: Sequence[float] | np.ndarray,
    config: BoConfig | None = None,
) -> GpSurrogate:
    config = config or BoConfig()
    xs = np.asarray(points, dtype=np.float64).ravel()
    ys = np.asarray(values, dtype=np.float64).ravel()
    if xs.size != ys.size:
        raise InsufficientDataError(f"{xs.size} points but {ys.size} values")
    if xs.size < 2:
        raise InsufficientDataError("a GP fit needs at least 2 observations")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise InsufficientDataError("GP observations must be finite")

    mean_value = float(np.mean(ys))
    centered = ys - mean_value
    variance_scale = float(np.var(ys)) or 1.0
    n = xs.size
    sq_dist = np.subtract.outer(xs, xs) ** 2

    length_scales = config.width * np.logspace(*np.log10(LENGTH_SCALE_RANGE), HYPER_GRID_SIZE)
    signal_variances = variance_scale * np.logspace(*np.log10(SIGNAL_VARIANCE_RANGE), HYPER_GRID_SIZE)

    # K = s2 * (B + jitter * I): one Cholesky per length scale covers every s2
    best: tuple[float, float, float] | None = None
    for length_scale in length_scales:
        base = np.exp(-sq_dist / (2.0 * length_scale**2)) + config.jitter * np.eye(n)
        try:
            lower = linalg.cholesky(base, lower=True)
        except linalg.LinAlgError:
            continue
        quad = float(centered @ linalg.cho_solve((lower, True), centered))
        logdet = 2.0 * float(np.sum(np.log(np.diag(lower))))
        for signal_variance in signal_variances:
            lml = (
                -0.5 * quad / signal_variance
                - 0.5 * n * math.log(signal_variance)
                - 0.5 * logdet
                - 0.5 * n * math.log(2.0 * math.pi)
            )
            if best is None or lml > best[0]:
                best = (lml, float(length_scale), float(signal_variance))

    if best is None:
        raise InsufficientDataError("kernel matrix is not positive definite for any length scale")

    _, length_scale, signal_variance = best
    noise_jitter = config.jitter * signal_variance
    gram = signal_variance * np.exp(-sq_dist / (2.0 * length_scale**2)) + noise_jitter * np.eye(n)
    factor = linalg.cho_factor(gram, lower=True)
    alpha = linalg.cho_solve(factor, centered)
    logger.debug(
        "GP fit: n=%s length_scale=%.4g signal_variance=%.4g", n, length_scale, signal_variance
    )
    return GpSurrogate(
        observed_points=xs,
        observed_values=ys,
        length_scale=length_scale,
        signal_variance=signal_variance,
        noise_jitter=noise_jitter,
        mean_value=mean_value,
        _factor=factor,
        _alpha=alpha,
    )


def ei_from_moments(mean: np.ndarray | float, stddev: np.ndarray | float, best_so_far: float) -> np.ndarray:
    mu = np.asarray(mean, dtype=np.float64)
    sigma = np.asarray(stddev, dtype=np.float64)
    improvement = mu - best_so_far
    safe_sigma = np.where(sigma < MIN_STDDEV, 1.0, sigma)
    z = improvement / safe_sigma
    ei = improvement * norm.cdf(z) + safe_sigma * norm.pdf(z)
    ei = np.where(sigma < MIN_STDDEV, np.maximum(0.0, improvement), ei)
    return np.maximum(ei, 0.0)


def expected_improvement(surrogate: GpSurrogate, x: float, best_so_far: float) -> float:
    mean, stddev = surrogate.predict(x)
    return float(ei_from_moments(mean, stddev, best_so_far)[0])


def bo_maximize(target: Target, config: BoConfig) -> BoResult:
    rng = np.random.default_rng(config.rng_seed)
    initial = rng.uniform(config.domain_lo, config.domain_hi, config.num_initial_samples)

    log: list[Evaluation] = []
    for x, value in zip(initial, _evaluate_many(target, initial, config.workers)):
        log.append(Evaluation(step=len(log), x=float(x), value=value, is_initial=True))

    grid = config.acquisition_grid()
    for iteration in range(config.num_iterations):
        xs = np.array([e.x for e in log])
        ys = np.array([e.value for e in log])
        surrogate = gp_fit(xs, ys, config)
        mean, stddev = surrogate.predict(grid)
        ei = ei_from_moments(mean, stddev, float(ys.max()))
        ei[np.isin(grid, xs)] = -np.inf
        if not np.isfinite(ei).any():
            logger.debug("Acquisition grid exhausted after %s iterations", iteration)
            break
        x_next = float(grid[int(np.argmax(ei))])
        value = _evaluate(target, x_next)
        log.append(Evaluation(step=len(log), x=x_next, value=value, is_initial=False))
        logger.debug("BO iteration %s: x=%.6g value=%.6g", iteration, x_next, value)

    best_value = max(e.value for e in log)
    best_x = min(e.x for e in log if e.value == best_value)
    return BoResult(argmax=best_x, value=best_value, log=tuple(log))


def _evaluate(target: Target, x: float) -> float:
    try:
        value = float(target(x))
    except KeeprateError:
        raise
    except Exception as exc:
        raise EvaluationError(f"target failed: {exc}", point=x) from exc
    if not math.isfinite(value):
        raise EvaluationError(f"target returned non-finite value {value!r}", point=x)
    return value


def _evaluate_many(target: Target, xs: np.ndarray, workers: int) -> list[float]:
    points = [float(x) for x in xs]
    if workers <= 1:
        return [_evaluate(target, x) for x in points]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda x: _evaluate(target, x), points))

from __future__ import annotations

import math

import numpy as np
import pytest

from keeprate.errors import EvaluationError, InsufficientDataError, KeeprateError
from keeprate.search.bayes_opt import BoConfig, bo_maximize, ei_from_moments, expected_improvement, gp_fit


def _bumps(seed: int):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.05, 0.95, 3)
    widths = rng.uniform(0.08, 0.15, 3)
    heights = np.array([1.0, *rng.uniform(0.3, 0.7, 2)])

    def f(x: float) -> float:
        return float(np.sum(heights * np.exp(-((x - centers) ** 2) / (2 * widths**2))))

    return f


def test_constant_observations_predict_the_constant():
    surrogate = gp_fit([0.2, 0.8], [3.0, 3.0])
    mean, _ = surrogate.predict([0.0, 0.5, 1.0])
    np.testing.assert_allclose(mean, 3.0, atol=1e-6)


def test_posterior_interpolates_observations():
    xs = [0.1, 0.4, 0.9]
    ys = [1.0, -0.5, 2.0]
    mean, _ = gp_fit(xs, ys).predict(xs)
    np.testing.assert_allclose(mean, ys, atol=1e-3)


def test_variance_grows_away_from_data():
    surrogate = gp_fit([0.0, 1.0], [0.0, 1.0])
    _, std = surrogate.predict([0.0, 0.5])
    assert std[1] > std[0]


def test_gp_fit_needs_two_finite_points():
    with pytest.raises(InsufficientDataError):
        gp_fit([0.5], [1.0])
    with pytest.raises(InsufficientDataError):
        gp_fit([0.1, 0.2], [1.0, math.nan])


def test_expected_improvement_limits():
    assert ei_from_moments(0.5, 0.0, 1.0)[()] == 0.0
    assert ei_from_moments(2.0, 0.0, 1.0)[()] == 1.0
    assert ei_from_moments(0.0, 1.0, 0.0)[()] == pytest.approx(0.3989422804014327, abs=1e-12)


def test_expected_improvement_is_non_negative():
    surrogate = gp_fit([0.1, 0.5, 0.9], [0.0, 1.0, 0.2])
    for x in np.linspace(0, 1, 11):
        assert expected_improvement(surrogate, float(x), 1.0) >= 0.0


def test_constant_target_returns_lowest_sampled_point():
    result = bo_maximize(lambda x: 1.0, BoConfig(num_iterations=5, rng_seed=3))
    assert result.value == 1.0
    assert result.argmax == min(e.x for e in result.log)


def test_quadratic_peak():
    config = BoConfig(num_iterations=20, rng_seed=0)
    result = bo_maximize(lambda x: -((x - 0.3) ** 2), config)
    assert abs(result.argmax - 0.3) <= 0.02


def test_log_records_initial_samples_then_iterations():
    config = BoConfig(num_initial_samples=4, num_iterations=3, rng_seed=1)
    result = bo_maximize(lambda x: math.sin(6 * x), config)
    assert [e.is_initial for e in result.log] == [True] * 4 + [False] * 3
    assert [e.step for e in result.log] == list(range(7))
    assert len(result.csv_rows()) == 7


def test_same_seed_same_run():
    config = BoConfig(num_iterations=6, rng_seed=42)
    first = bo_maximize(lambda x: math.cos(5 * x), config)
    second = bo_maximize(lambda x: math.cos(5 * x), config)
    assert first == second


def test_parallel_initial_samples_match_serial():
    target = _bumps(0)
    serial = bo_maximize(target, BoConfig(num_iterations=4, rng_seed=2))
    parallel = bo_maximize(target, BoConfig(num_iterations=4, rng_seed=2, workers=4))
    assert serial == parallel


def test_multimodal_functions_reach_near_optimum():
    grid = np.linspace(0.0, 1.0, 101)
    for function_seed in range(10):
        target = _bumps(function_seed)
        best = max(target(float(x)) for x in grid)
        hits = 0
        for seed in range(50):
            result = bo_maximize(target, BoConfig(num_initial_samples=10, num_iterations=30, rng_seed=seed))
            hits += result.value >= 0.98 * best
        assert hits >= 45, f"function {function_seed}: {hits}/50"


def test_failing_target_is_wrapped():
    def target(x: float) -> float:
        raise RuntimeError("boom")

    with pytest.raises(EvaluationError) as info:
        bo_maximize(target, BoConfig(num_iterations=1))
    assert info.value.point is not None


def test_non_finite_target_is_rejected():
    with pytest.raises(EvaluationError):
        bo_maximize(lambda x: math.inf, BoConfig(num_iterations=1))


def test_config_validation():
    with pytest.raises(KeeprateError):
        BoConfig(domain_lo=1.0, domain_hi=1.0)
    with pytest.raises(KeeprateError):
        BoConfig(num_initial_samples=1)


def test_more_iterations_never_lower_the_best_value():
    for function_seed in range(3):
        target = _bumps(function_seed)
        values = [bo_maximize(target, BoConfig(num_iterations=t, rng_seed=4)).value for t in range(13)]
        initial_best = max(e.value for e in bo_maximize(target, BoConfig(num_iterations=0, rng_seed=4)).log)
        assert values[0] == initial_best
        assert all(later >= earlier for earlier, later in zip(values, values[1:])), values

from __future__ import annotations

import math

import numpy as np
import pytest

from keeprate.baselines import uniform_schedule
from keeprate.core import KeepingSchedule
from keeprate.cost_model import cost_from_rates
from keeprate.errors import KeeprateError, LayerRangeError, ScheduleError
from keeprate.reduction_sim import OracleEvaluator, SyntheticOracle
from keeprate.search.bayes_opt import BoConfig
from keeprate.search.p_sigmoid import (
    PSigmoidParams,
    achieved_budget,
    budget_for_flops,
    fit_psigmoid,
    k_search,
    psigmoid_rates,
    schedule_from_params,
    sigmoid_rate,
)

# essential fraction 0.9 for layers 3..9 and 0.05 for layers 10..16
FRONT_LOADED_SIZES = [90] * 7 + [5] * 7


def _front_loaded() -> OracleEvaluator:
    return OracleEvaluator(SyntheticOracle.from_sizes(FRONT_LOADED_SIZES, 100, rng_seed=11))


def test_single_rate_example():
    params = PSigmoidParams(b=0.25, k=0.3, num_layers=32)
    assert params.alpha == 17.5
    assert sigmoid_rate(3, params) == pytest.approx(0.4936, abs=1e-4)


def test_midpoint_layer_gets_the_budget():
    params = PSigmoidParams(b=0.3, k=2.0, num_layers=5)
    assert params.alpha == 4.0
    assert sigmoid_rate(4, params) == pytest.approx(0.3, abs=1e-15)


def test_zero_steepness_is_uniform():
    schedule = schedule_from_params(PSigmoidParams(b=0.4, k=0.0, num_layers=10))
    assert schedule.reduced_rates() == (0.4,) * 8


def test_sigmoid_rate_layer_range():
    params = PSigmoidParams(b=0.3, k=1.0, num_layers=8)
    with pytest.raises(LayerRangeError):
        sigmoid_rate(2, params)
    with pytest.raises(LayerRangeError):
        sigmoid_rate(9, params)


@pytest.mark.parametrize("num_layers", [16, 32, 48])
@pytest.mark.parametrize("b", [0.1, 0.25, 0.5])
@pytest.mark.parametrize("k", [0.0, 0.1, 0.5, 2.0, 20.0])
def test_rates_sum_to_budget_regardless_of_steepness(num_layers, b, k):
    rates = psigmoid_rates(b, k, num_layers)
    assert abs(rates.sum() - (num_layers - 2) * b) <= 1e-9


def test_huge_steepness_is_a_step():
    rates = psigmoid_rates(0.25, 50.0, 16)
    np.testing.assert_allclose(rates[:7], 0.5, atol=1e-9)
    np.testing.assert_allclose(rates[7:], 0.0, atol=1e-9)
    assert sigmoid_rate(16, PSigmoidParams(0.25, 1e4, 16)) == 0.0


def test_schedules_are_monotone_and_valid():
    for b in (0.05, 0.3, 0.5, 0.9, 1.0):
        for k in (0.0, 0.2, 1.0, 20.0):
            schedule = schedule_from_params(PSigmoidParams(b, k, 24))
            schedule.require_valid()
            assert schedule.rates[:2] == (1.0, 1.0)


def test_large_budget_clamps_and_reports_achieved_budget():
    params = PSigmoidParams(b=0.8, k=0.5, num_layers=16)
    rates = schedule_from_params(params).reduced_rates()
    assert max(rates) == 1.0
    assert achieved_budget(params) < 0.8
    assert achieved_budget(PSigmoidParams(b=0.4, k=0.5, num_layers=16)) == pytest.approx(0.4, abs=1e-12)


def test_params_validation():
    with pytest.raises(KeeprateError):
        PSigmoidParams(b=0.0, k=1.0, num_layers=16)
    with pytest.raises(KeeprateError):
        PSigmoidParams(b=0.3, k=-0.1, num_layers=16)
    with pytest.raises(KeeprateError):
        PSigmoidParams(b=0.3, k=math.inf, num_layers=16)


@pytest.mark.parametrize("b,k", [(0.3, 0.0), (0.3, 0.05), (0.25, 0.3), (0.4, 1.0), (0.15, 3.0)])
def test_fit_recovers_exact_sigmoid(b, k):
    fit = fit_psigmoid(schedule_from_params(PSigmoidParams(b, k, 32)))
    assert fit.b == pytest.approx(b, abs=1e-12)
    assert abs(fit.k - k) <= 1e-4
    assert fit.residual <= 1e-9


def test_fit_tolerates_noisy_rates():
    clean = psigmoid_rates(0.3, 0.3, 32)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        noisy = np.clip(clean + rng.uniform(-0.02, 0.02, clean.size), 0.0, 1.0)
        fit = fit_psigmoid(KeepingSchedule.from_reduced(noisy.tolist()), require_monotone=False)
        assert abs(fit.k - 0.3) <= 0.15, f"seed {seed}: k={fit.k}"


def test_fit_of_flat_schedule_has_no_steepness():
    fit = fit_psigmoid(KeepingSchedule.from_reduced([0.3] * 14))
    assert fit.k <= 1e-3
    assert fit.residual < 1e-9
    assert fit.to_dict()["residual"] == fit.residual


def test_fit_rejects_increasing_rates():
    with pytest.raises(ScheduleError):
        fit_psigmoid(KeepingSchedule.from_reduced([0.2, 0.5, 0.1]))


def test_fit_needs_four_layers():
    with pytest.raises(ScheduleError):
        fit_psigmoid(KeepingSchedule.from_reduced([0.5]))


def test_indifferent_evaluator_returns_lowest_sampled_k(make_constant):
    result = k_search(make_constant(0.5), 0.3, 16, BoConfig(num_iterations=5, rng_seed=2))
    assert result.k == min(e.x for e in result.bo.log)
    k, schedule = result
    assert k == result.k
    assert schedule == schedule_from_params(result.params)
    assert result.achieved_budget == pytest.approx(0.3)


def test_flat_optimum_prefers_small_steepness():
    evaluator = OracleEvaluator(SyntheticOracle.from_sizes([20] * 14, 100, rng_seed=3))
    result = k_search(evaluator, 0.3, 16, BoConfig(rng_seed=0), k_max=2.0)
    assert result.k <= 0.2


def test_front_loaded_oracle_rewards_steepness():
    evaluator = _front_loaded()
    result = k_search(evaluator, 0.15, 16, BoConfig(num_iterations=25, rng_seed=0), k_max=2.0)
    flat = evaluator(schedule_from_params(PSigmoidParams(0.15, 0.0, 16)))
    assert result.bo.value > flat


def test_higher_budget_finds_steeper_schedule():
    evaluator = _front_loaded()
    agree = 0
    for seed in range(10):
        config = BoConfig(num_iterations=25, rng_seed=seed)
        low = k_search(evaluator, 0.15, 16, config, k_max=2.0)
        high = k_search(evaluator, 0.4, 16, config, k_max=2.0)
        agree += high.k >= low.k
    assert agree >= 8


def test_k_search_rejects_bad_budget(constant_evaluator):
    with pytest.raises(KeeprateError):
        k_search(constant_evaluator, 0.0, 16)


def test_budget_for_flops_flat_sigmoid_matches_uniform(llava_dims):
    target = cost_from_rates(uniform_schedule(32, 0.125), llava_dims)
    assert budget_for_flops(target, llava_dims, 0.0) == pytest.approx(0.125, abs=1e-6)


def test_budget_for_flops_is_below_uniform_rate(llava_dims):
    target = cost_from_rates(uniform_schedule(32, 0.125), llava_dims)
    for k in (0.1, 0.3, 1.0):
        b = budget_for_flops(target, llava_dims, k)
        gap = (0.125 - b) / 0.125
        assert 0.0 < gap < 0.12, f"k={k}: gap={gap}"


def test_budget_for_flops_with_searched_steepness(llava_dims):
    result = k_search(_front_loaded(), 0.15, 16, BoConfig(num_iterations=25, rng_seed=0), k_max=2.0)
    assert result.k > 0.0
    target = cost_from_rates(uniform_schedule(32, 0.125), llava_dims)
    gap = (0.125 - budget_for_flops(target, llava_dims, result.k)) / 0.125
    assert 0.0 < gap < 0.12, f"k={result.k}: gap={gap}"


def test_fit_checks_leading_layers_and_range_without_monotonicity():
    with pytest.raises(ScheduleError):
        fit_psigmoid(KeepingSchedule([0.5, 1.0, 0.4, 0.3, 0.2]), require_monotone=False)
    with pytest.raises(ScheduleError):
        fit_psigmoid(KeepingSchedule([1.0, 1.0, 0.4, 1.3, 0.2]), require_monotone=False)

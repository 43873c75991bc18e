from .bayes_opt import BoConfig, BoResult, GpSurrogate, bo_maximize, expected_improvement, gp_fit
from .g_search import (
    GSearchConfig,
    GSearchResult,
    brute_force_search,
    default_rate_grid,
    g_search,
    layer_target,
    run_g_search,
)
from .p_sigmoid import (
    KSearchResult,
    PSigmoidFit,
    PSigmoidParams,
    achieved_budget,
    budget_for_flops,
    fit_psigmoid,
    k_search,
    schedule_from_params,
    sigmoid_rate,
)

__all__ = [
    "BoConfig",
    "BoResult",
    "GSearchConfig",
    "GSearchResult",
    "GpSurrogate",
    "KSearchResult",
    "PSigmoidFit",
    "PSigmoidParams",
    "achieved_budget",
    "bo_maximize",
    "brute_force_search",
    "budget_for_flops",
    "default_rate_grid",
    "expected_improvement",
    "fit_psigmoid",
    "g_search",
    "gp_fit",
    "k_search",
    "layer_target",
    "run_g_search",
    "schedule_from_params",
    "sigmoid_rate",
]

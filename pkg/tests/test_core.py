from __future__ import annotations

import numpy as np
import pytest

from keeprate.core import (
    VIOLATION_LEADING,
    VIOLATION_MONOTONE,
    AttentionTrace,
    KeepingSchedule,
    ModelDims,
    round_half_up,
    token_counts,
    trace_from_attention,
    validate,
)
from keeprate.errors import DimensionMismatchError, LayerRangeError, ScheduleError


def test_full_schedule_keeps_every_token():
    assert token_counts(KeepingSchedule.full(32), 576) == (576,) * 32


def test_half_rate_after_second_layer():
    schedule = KeepingSchedule.from_reduced([0.5] * 30)
    counts = token_counts(schedule, 576)
    assert counts[:2] == (576, 576)
    assert set(counts[2:]) == {288}


def test_rounding_is_half_up():
    schedule = KeepingSchedule([1.0, 1.0, 0.333])
    assert token_counts(schedule, 10)[-1] == 3
    assert round_half_up(2.5) == 3
    assert round_half_up(0.49) == 0


def test_monotone_counts_never_increase_after_rounding():
    schedule = KeepingSchedule([1.0, 1.0, 0.35, 0.35, 0.349])
    counts = token_counts(schedule, 20)
    assert list(counts) == sorted(counts, reverse=True)


def test_validate_accepts_all_ones():
    assert validate(KeepingSchedule.full(4)) == []


def test_validate_leading_layers():
    violations = validate(KeepingSchedule([0.5, 1.0, 0.5]))
    assert VIOLATION_LEADING in violations


def test_validate_monotonicity():
    schedule = KeepingSchedule([1.0, 1.0, 0.5, 0.4, 0.6])
    assert any(v.startswith(VIOLATION_MONOTONE) for v in validate(schedule))
    assert validate(KeepingSchedule(schedule.rates, monotone=False)) == []


def test_validate_range():
    assert validate(KeepingSchedule([1.0, 1.0, 1.5], monotone=False))


def test_require_valid_raises_with_violations():
    with pytest.raises(ScheduleError) as info:
        KeepingSchedule([0.9, 1.0]).require_valid()
    assert VIOLATION_LEADING in info.value.violations


def test_rate_is_one_based():
    schedule = KeepingSchedule([1.0, 1.0, 0.25])
    assert schedule.rate(3) == 0.25
    with pytest.raises(LayerRangeError):
        schedule.rate(0)


def test_schedule_dict_round_trip_ignores_extra_keys():
    schedule = KeepingSchedule([1.0, 1.0, 0.5, 0.25])
    data = {**schedule.to_dict(), "meta": {"seed": 1}, "score": 0.9}
    assert KeepingSchedule.from_dict(data) == schedule


def test_schedule_dict_checks_layer_count():
    with pytest.raises(DimensionMismatchError):
        KeepingSchedule.from_dict({"num_layers": 3, "rates": [1.0, 1.0]})


def test_model_dims_rejects_non_positive():
    with pytest.raises(DimensionMismatchError):
        ModelDims(32, 4096, 11008, 0, 110, 5)


def test_model_dims_from_dict_ignores_provenance():
    dims = ModelDims.from_dict(
        {
            "_provenance": "test",
            "num_layers": 4,
            "hidden_size": 8,
            "ffn_intermediate": 16,
            "vision_tokens": 10,
            "input_text_tokens": 2,
            "output_tokens": 1,
        }
    )
    assert dims.num_layers == 4


def test_trace_validates_scores():
    with pytest.raises(DimensionMismatchError):
        AttentionTrace(np.array([[0.1, -0.2]]))
    with pytest.raises(DimensionMismatchError):
        AttentionTrace(np.array([0.1, 0.2]))


def test_trace_is_read_only():
    trace = AttentionTrace(np.ones((2, 3)))
    with pytest.raises(ValueError):
        trace.scores[0, 0] = 5.0


def test_trace_header_must_match():
    with pytest.raises(DimensionMismatchError):
        AttentionTrace.from_dict({"num_layers": 3, "num_tokens": 2, "scores": [[0.1, 0.2]]})
    with pytest.raises(DimensionMismatchError):
        AttentionTrace.from_dict({"num_layers": 1})


def test_trace_from_attention_averages_heads_and_queries():
    rng = np.random.default_rng(0)
    attention = rng.uniform(size=(3, 4, 5, 6))
    trace = trace_from_attention(attention)
    assert trace.layer_count == 3
    assert trace.token_count == 6
    np.testing.assert_allclose(trace.layer(2), attention[1].mean(axis=(0, 1)))


def test_trace_from_attention_needs_four_axes():
    with pytest.raises(DimensionMismatchError):
        trace_from_attention(np.ones((2, 3)))


@pytest.mark.parametrize("vision_tokens", [1, 7, 100, 576])
def test_counts_stay_within_half_a_token_of_the_rate(vision_tokens):
    rng = np.random.default_rng(vision_tokens)
    for _ in range(50):
        reduced = rng.uniform(0.0, 1.0, 10)
        for schedule in (
            KeepingSchedule.from_reduced(reduced.tolist(), monotone=False),
            KeepingSchedule.from_reduced(np.sort(reduced)[::-1].tolist()),
        ):
            counts = np.asarray(token_counts(schedule, vision_tokens))
            rates = np.asarray(schedule.rates)
            assert np.all(np.abs(counts / vision_tokens - rates) <= 0.5 / vision_tokens + 1e-12)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subbit.allocation import (
    AllocationPlan,
    NMRatio,
    Strategy,
    assign_nm,
    layer_importance,
    round_half_away,
    sin_shape_plan,
    uniform_plan,
)
from subbit.errors import AllZeroModel, ValidationError


def test_importance_single_layer():
    assert layer_importance([np.ones((2, 2))]) == [1.0]


def test_importance_equal_norms():
    assert layer_importance([np.ones((2, 2)), -np.ones((4, 1))]) == [0.5, 0.5]


def test_importance_ratio():
    got = layer_importance([np.array([[3.0]]), np.array([[0.0, 1.0]])])
    assert got == pytest.approx([0.75, 0.25], rel=1e-15)


def test_importance_all_zero():
    with pytest.raises(AllZeroModel):
        layer_importance([np.zeros((2, 2)), np.zeros(3)])


def test_single_layer_keeps_everything():
    plan = assign_nm([1.0], 0.3, 8, renormalize=False)
    assert plan.layers[0].raw_ratio == 1.0
    assert plan.layers[0].n == 8
    # the budget repair pulls the same layer back to the target
    assert assign_nm([1.0], 0.25, 8).layers[0].n == 2


def test_raw_formula_bias_without_repair():
    plan = assign_nm([0.5, 0.5], 0.5, 8, renormalize=False)
    assert [la.raw_ratio for la in plan.layers] == [0.75, 0.75]
    assert [la.n for la in plan.layers] == [6, 6]
    assert plan.realized_ratio == 0.75


def test_repair_reaches_target():
    plan = assign_nm([0.5, 0.5], 0.5, 8)
    assert abs(plan.realized_ratio - 0.5) <= 1 / 8
    # raw ratios are preserved for reporting
    assert [la.raw_ratio for la in plan.layers] == [0.75, 0.75]


def test_repair_preserves_importance_order():
    plan = assign_nm([0.6, 0.3, 0.1], 0.5, 8)
    ns = [la.n for la in plan.layers]
    assert ns == sorted(ns, reverse=True)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.01, 10.0), min_size=2, max_size=32),
       st.sampled_from([0.25, 0.375, 0.5, 0.625, 0.75]),
       st.sampled_from([4, 8, 16]))
def test_repair_budget_property(weights, target, m):
    alphas = np.array(weights) / sum(weights)
    plan = assign_nm(alphas, target, m)
    assert abs(plan.realized_ratio - target) <= 1 / m + 1e-12
    assert all(1 <= la.n <= m for la in plan.layers)


def test_repair_weights_by_size():
    plan = assign_nm([0.5, 0.5], 0.5, 8, sizes=[1000, 10])
    assert abs(plan.realized_ratio - 0.5) <= 1 / 8


def test_assign_rejects_bad_input():
    with pytest.raises(ValidationError):
        assign_nm([0.5, 0.4], 0.5)
    with pytest.raises(ValidationError):
        assign_nm([1.0], 0.0)


def test_uniform_plan():
    plan = uniform_plan(3, 0.5, 8)
    assert [str(plan.nm(la.name)) for la in plan.layers] == ["4:8"] * 3
    assert str(uniform_plan(1, 0.75, 8).nm("layer0")) == "6:8"


def test_sin_shape_single_layer_is_uniform():
    a, b = sin_shape_plan(1, 0.625, 8), uniform_plan(1, 0.625, 8)
    assert a.layers == b.layers


def test_sin_shape_middle_layer_hits_target():
    plan = sin_shape_plan(9, 0.5, 8)
    assert plan.layers[4].raw_ratio == 0.5
    raws = [la.raw_ratio for la in plan.layers]
    assert raws == sorted(raws, reverse=True)
    assert np.mean(raws) == pytest.approx(0.5, abs=1e-12)


def test_round_half_away():
    assert [round_half_away(x) for x in (0.5, 1.5, 2.5, -0.5, 2.49)] == [1, 2, 3, -1, 2]


def test_nm_ratio_parse_and_validate():
    assert NMRatio.parse("5:8") == NMRatio(5, 8)
    assert str(NMRatio(5, 8)) == "5:8"
    for bad in ("9:8", "0:8", "4-8", "a:b"):
        with pytest.raises(ValidationError):
            NMRatio.parse(bad)


def test_plan_dict_roundtrip():
    plan = assign_nm([0.7, 0.3], 0.5, 8, names=["q", "k"], sizes=[4, 6])
    back = AllocationPlan.from_dict(plan.to_dict(), sizes=[4, 6])
    assert back == plan
    assert back.strategy is Strategy.ADAPTIVE
    assert math.isclose(back.realized_ratio, plan.realized_ratio)

import numpy as np
import pytest

from evloc.oracle import (
    OracleTooLarge, PolicyError, count_det_plans, dp_multistage, enumerate_det, evaluate_policy,
)
from evloc.formulation import build_ms
from evloc.instance import GeneratorConfig, generate_instance
from evloc.plan import BuildPlan
from evloc.scenario import GrowthModel, build_tree, expected_trajectory
from evloc.solver import branch_and_cut
from toys import one_option, random_toy


def test_unaffordable():
    plan, val = enumerate_det(one_option(cost=5.0, budget=1.0), [[1.0]])
    assert val == 0.0 and plan.row(1)[0] == 0


def test_unlimited_budget_opens_everything():
    inst = random_toy(0, n_nodes=2, n_sites=2, n_types=1, horizon=2, budget=100.0)
    plan, _ = enumerate_det(inst, np.ones((2, 2)))
    assert plan.row(1).tolist() == [1, 1]


def test_refuses_large():
    inst = generate_instance(0)
    with pytest.raises(OracleTooLarge):
        enumerate_det(inst, np.ones((4, 58)), limit=1000)
    assert count_det_plans(random_toy(1, n_sites=1, n_types=1, horizon=1)) == 2


def test_dp_single_branch_equals_enumeration():
    inst = random_toy(2)
    tree = build_tree(GrowthModel(), 1, 2, inst.base_demand, seed=0)
    assert dp_multistage(inst, tree)[1] == pytest.approx(enumerate_det(inst, expected_trajectory(tree))[1], abs=1e-12)


def test_dp_policy_value_and_ordering():
    inst = random_toy(3, n_nodes=4, n_sites=3, n_types=2)
    tree = build_tree(GrowthModel(sd_rate=0.3), 3, 2, inst.base_demand, seed=3)
    policy, value = dp_multistage(inst, tree)
    assert evaluate_policy(policy, tree, inst).expected_revenue == pytest.approx(value, abs=1e-9)
    ts_plan, ts_value = enumerate_det(inst, expected_trajectory(tree))
    assert evaluate_policy(ts_plan, tree, inst).expected_revenue == pytest.approx(ts_value, abs=1e-9)
    assert ts_value <= value + 1e-9
    assert branch_and_cut(build_ms(inst, tree)).objective == pytest.approx(value, abs=1e-6)


def test_zero_plan_is_worth_nothing():
    inst = random_toy(4)
    tree = build_tree(GrowthModel(), 2, 2, inst.base_demand, seed=0)
    plan = BuildPlan(np.zeros((2, inst.n_options), dtype=np.int8), (1, 2), "stage")
    assert evaluate_policy(plan, tree, inst).expected_revenue == 0.0


def test_infeasible_plan_rejected():
    inst = random_toy(5, budget=1.0)
    tree = build_tree(GrowthModel(), 2, 2, inst.base_demand, seed=0)
    over = BuildPlan(np.ones((2, inst.n_options), dtype=np.int8), (1, 2), "stage")
    with pytest.raises(PolicyError):
        evaluate_policy(over, tree, inst)
    rows = np.zeros((2, inst.n_options), dtype=np.int8)
    rows[0, 0] = 1
    closing = BuildPlan(rows, (1, 2), "stage")
    with pytest.raises(PolicyError):
        evaluate_policy(closing, tree, inst)


def test_zero_sd_gives_zero_gap():
    inst = generate_instance(0, GeneratorConfig(n_nodes=6, n_sites=3, horizon=2))
    tree = build_tree(GrowthModel(sd_rate=0.0), 3, 2, inst.base_demand, seed=0)
    ms = dp_multistage(inst, tree)[1]
    ts = enumerate_det(inst, expected_trajectory(tree))[1]
    assert ms == pytest.approx(ts, abs=1e-9)

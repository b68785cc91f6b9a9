import json

import numpy as np
import pytest

from evloc.instance import (
    CandidateSite, DemandNode, GeneratorConfig, Instance, InstanceError, MnlParams, StationType,
    choice_probability, choice_shares, compute_weights, generate_instance, instance_to_dict,
    load_instance, save_instance, stage_revenue,
)
from toys import one_option


def _doc(horizon=1, budgets=(1.0,)):
    return {
        "nodes": [{"id": 0, "x": 0.0, "y": 0.0, "base_demand": 5.0}],
        "sites": [{"id": 0, "x": 1.0, "y": 0.0}],
        "types": [{"id": 0, "build_cost": 1.0, "unit_revenue": 1.0}],
        "mnl": {"alpha_by_type": [0.0], "alpha_home": 0.0, "beta": -0.63},
        "budgets": list(budgets), "horizon": horizon,
    }


def test_load_minimal(tmp_path):
    p = tmp_path / "i.json"
    p.write_text(json.dumps(_doc()))
    inst = load_instance(p)
    assert inst.n_options == 1 and inst.n_nodes == 1


def test_load_rejects_budget_mismatch(tmp_path):
    p = tmp_path / "i.json"
    p.write_text(json.dumps(_doc(horizon=4, budgets=(1.0, 1.0, 1.0))))
    with pytest.raises(InstanceError, match="budget/horizon mismatch"):
        load_instance(p)


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "i.json"
    p.write_text("{not json")
    with pytest.raises(InstanceError):
        load_instance(p)


def test_negative_demand_rejected():
    with pytest.raises(InstanceError, match="negative"):
        Instance((DemandNode(0, (0, 0), -1.0),), (CandidateSite(0, (0, 0)),), (StationType(0, 1, 1),),
                 MnlParams(np.zeros((1, 1)), np.zeros(1), 0.0), (1.0,), 1)


def test_round_trip(tmp_path):
    inst = generate_instance(3, GeneratorConfig(n_nodes=7, n_sites=3))
    p = tmp_path / "i.json"
    save_instance(inst, p)
    back = load_instance(p)
    assert instance_to_dict(back) == instance_to_dict(inst)
    np.testing.assert_array_equal(compute_weights(back).w, compute_weights(inst).w)


def test_generator_full_dims():
    inst = generate_instance(1)
    assert (inst.n_nodes, inst.n_sites, inst.n_types, inst.n_options) == (58, 10, 2, 20)
    big, small = inst.types[1], inst.types[0]
    assert big.build_cost > small.build_cost and big.unit_revenue > small.unit_revenue


def test_generator_deterministic():
    a = json.dumps(instance_to_dict(generate_instance(5)))
    b = json.dumps(instance_to_dict(generate_instance(5)))
    assert a == b
    assert instance_to_dict(generate_instance(1))["nodes"] != instance_to_dict(generate_instance(2))["nodes"]


def test_generator_layout():
    inst = generate_instance(0)
    r = {z: np.mean([np.hypot(*n.position) for n in inst.nodes if n.zone == z]) for z in ("central", "suburb")}
    assert r["central"] < r["suburb"]


def test_generator_rejects_zero_nodes():
    with pytest.raises(InstanceError):
        generate_instance(0, GeneratorConfig(n_nodes=0))


def test_weights_unit_when_no_utility():
    inst = one_option(w=1.0)
    assert compute_weights(inst).w[0, 0] == 1.0


@pytest.mark.parametrize("beta, expected", [(-0.63, 0.5326), (-0.063, 0.9389)])
def test_weight_at_one_km(beta, expected):
    inst = Instance((DemandNode(0, (0.0, 0.0), 1.0),), (CandidateSite(0, (1.0, 0.0)),), (StationType(0, 1, 1),),
                    MnlParams(np.zeros((1, 1)), np.zeros(1), beta), (1.0,), 1)
    assert compute_weights(inst).w[0, 0] == pytest.approx(expected, abs=1e-4)


def test_weight_overflow_names_triple():
    inst = Instance((DemandNode(0, (0.0, 0.0), 1.0),), (CandidateSite(0, (1.0, 0.0)),), (StationType(0, 1, 1),),
                    MnlParams(np.full((1, 1), 1e4), np.zeros(1), 0.0), (1.0,), 1)
    with pytest.raises(InstanceError, match="node=0, site=0, type=0"):
        compute_weights(inst)


def test_choice_probability_examples():
    inst = Instance((DemandNode(0, (0, 0), 1.0),), (CandidateSite(0, (0, 0)),),
                    (StationType(0, 1, 1), StationType(1, 1, 1)),
                    MnlParams(np.log([[1.0, 3.0]]), np.log([2.0]), 0.0), (1.0,), 1)
    w = compute_weights(inst)
    assert choice_probability(w, [1, 1], 0, 1) == pytest.approx(0.5)
    assert choice_probability(w, [0, 0], 0, 0) == 0.0
    p, home = choice_shares(w, [0, 0])
    assert home[0] == 1.0 and p.sum() == 0.0
    assert choice_probability(compute_weights(one_option()), [1], 0, 0) == pytest.approx(0.5)


def test_choice_shares_sum_to_one():
    inst = generate_instance(0, GeneratorConfig(n_nodes=9, n_sites=4))
    w = compute_weights(inst)
    x = np.random.default_rng(0).integers(0, 2, inst.n_options)
    p, home = choice_shares(w, x)
    np.testing.assert_allclose(p.sum(axis=1) + home, 1.0, atol=1e-12)


def test_stage_revenue_examples():
    inst = one_option(revenue=10.0)
    w = compute_weights(inst)
    assert stage_revenue(inst, w, [0], [1.0]) == 0.0
    assert stage_revenue(inst, w, [1], [1.0]) == pytest.approx(5.0)
    two = Instance((DemandNode(0, (0, 0), 1.0),), (CandidateSite(0, (0, 0)),),
                   (StationType(0, 1, 10.0), StationType(1, 1, 4.0)),
                   MnlParams(np.zeros((1, 2)), np.zeros(1), 0.0), (2.0,), 1)
    assert stage_revenue(two, compute_weights(two), [1, 1], [1.0]) == pytest.approx(14 / 3)

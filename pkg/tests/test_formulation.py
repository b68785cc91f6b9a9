import numpy as np
import pytest

from evloc.formulation import (
    add_soc_rows, build_det, build_ms, build_r1, build_r4, build_ts, revenue_check, size_report,
    soc_satisfied, table_formulas, write_lp,
)
from evloc.instance import GeneratorConfig, generate_instance
from evloc.scenario import GrowthModel, build_tree, expected_trajectory
from evloc.solver import branch_and_cut, solve_baseline
from evloc.oracle import enumerate_det
from toys import one_option, random_toy


def _point(system, xval, qval):
    h = system.hooks[0]
    v = np.zeros(system.n_vars)
    v[h.x] = xval
    v[h.q] = qval
    return v


def test_soc_tight_at_revenue():
    s = add_soc_rows(build_det(one_option(revenue=10.0), [[1.0]]))
    row = s.soc_rows[0]
    lhs, rhs = row.sides(_point(s, 1.0, 5.0))
    assert lhs == pytest.approx(7.0) and rhs == pytest.approx(7.0)
    assert soc_satisfied(s, _point(s, 1.0, 5.0))
    assert not soc_satisfied(s, _point(s, 1.0, 5.0 + 1e-6))
    lhs, rhs = row.sides(_point(s, 0.0, 0.0))
    assert lhs == pytest.approx(11.0) and rhs == pytest.approx(11.0)


def test_revenue_check_sign():
    s = build_det(one_option(revenue=10.0), [[1.0]])
    assert revenue_check(s, _point(s, 1.0, 4.0))[0] == pytest.approx(1.0)


def test_det_full_dims():
    inst = generate_instance(1)
    s = build_det(inst, np.ones((4, 58)))
    assert (s.n_binary, s.n_continuous) == (80, 232)


def test_det_hand_count():
    inst = random_toy(0, n_nodes=1, n_sites=1, n_types=2, horizon=2)
    s = build_det(inst, np.ones((2, 1)))
    assert (s.n_binary, s.n_continuous) == (4, 2)
    assert size_report(s).formulas_match


def test_unaffordable_station_gives_zero():
    inst = one_option(cost=2.0, budget=1.0)
    r = branch_and_cut(build_det(inst, [[1.0]]))
    assert r.objective == pytest.approx(0.0, abs=1e-9)
    assert enumerate_det(inst, [[1.0]])[1] == 0.0


def test_single_option_two_plans():
    inst = one_option(revenue=10.0)
    plan, val = enumerate_det(inst, [[1.0]])
    assert val == pytest.approx(5.0) and plan.row(1)[0] == 1
    r = branch_and_cut(build_det(inst, [[1.0]]))
    assert r.objective == pytest.approx(5.0) and r.plan.row(1)[0] == 1


def test_ts_compact_equals_det_on_expected():
    inst = random_toy(1)
    tree = build_tree(GrowthModel(sd_rate=0.0), 3, 2, inst.base_demand, seed=0)
    a = branch_and_cut(build_ts(inst, tree)).objective
    b = branch_and_cut(build_det(inst, expected_trajectory(tree))).objective
    assert a == pytest.approx(b, abs=1e-9)
    c = branch_and_cut(build_ts(inst, tree, expanded=True)).objective
    assert c == pytest.approx(a, abs=1e-6)


def test_node_form_smaller_than_scenario_form():
    inst = random_toy(2)
    for b in (2, 3):
        tree = build_tree(GrowthModel(), b, 2, inst.base_demand, seed=0)
        node, scen = build_ms(inst, tree, form="node"), build_ms(inst, tree, form="scenario")
        assert node.n_vars < scen.n_vars
        assert branch_and_cut(node).objective == pytest.approx(branch_and_cut(scen).objective, abs=1e-6)


def test_single_branch_ms_is_det():
    inst = random_toy(3)
    tree = build_tree(GrowthModel(), 1, 2, inst.base_demand, seed=0)
    ms = branch_and_cut(build_ms(inst, tree)).objective
    det = branch_and_cut(build_det(inst, expected_trajectory(tree))).objective
    assert ms == pytest.approx(det, abs=1e-9)


def test_scenario_form_formulas():
    inst = random_toy(4, n_nodes=3, n_sites=2, n_types=2, horizon=2)
    tree = build_tree(GrowthModel(), 2, 2, inst.base_demand, seed=0)
    for reform in ("sgi", "r1", "r4"):
        rep = size_report(build_ms(inst, tree, form="scenario", reform=reform))
        assert rep.formulas_match
        assert rep.constraint_count == rep.linear_rows + rep.deferred_rows


def test_table_formulas_full_dims():
    assert table_formulas("sgi", 58, 20, 4, 81)["continuous"] == 18_792
    assert table_formulas("sgi", 58, 20, 4, 81)["binary"] == 6_480
    assert table_formulas("r1", 58, 20, 4, 81)["continuous"] == 394_632
    assert table_formulas("r1", 58, 20, 4, 1)["continuous"] == 4_872
    with pytest.raises(ValueError):
        table_formulas("r4", 58, 20, 4, 81)


def test_mccormick_exact_at_binary():
    inst = one_option(revenue=10.0)
    s = build_r1(inst, model="det", trajectory=[[1.0]])
    assert not s.hooks
    for fix in (0.0, 1.0):
        xi = int(s.plan.var[0, 0])
        s2 = type(s)(**{**s.__dict__, "lb": np.where(np.arange(s.n_vars) == xi, fix, s.lb),
                        "ub": np.where(np.arange(s.n_vars) == xi, fix, s.ub)})
        r = solve_baseline(s2)
        assert r.objective == pytest.approx(5.0 * fix, abs=1e-9)


def test_r4_rounded_weights_within_bound():
    inst = random_toy(5, n_nodes=2, n_sites=1, n_types=2, horizon=2)
    traj = np.array([[3.0, 5.0], [4.0, 6.0]])
    exact = branch_and_cut(build_det(inst, traj)).objective
    for precision in (3, 10, 100):
        s = build_r4(inst, model="det", trajectory=traj, precision=precision)
        err = s.meta["rounding_error_bound"]
        assert abs(solve_baseline(s).objective - exact) <= err + 1e-6


def test_r4_integer_weights_exact():
    inst = random_toy(6, n_nodes=2, n_sites=1, n_types=2, horizon=2, integer_weights=True)
    traj = np.array([[3.0, 5.0], [4.0, 6.0]])
    s = build_r4(inst, model="det", trajectory=traj, precision=1)
    assert s.meta["rounding_error_bound"] == 0.0
    assert solve_baseline(s).objective == pytest.approx(branch_and_cut(build_det(inst, traj)).objective, abs=1e-6)


def test_baseline_refuses_hooks():
    with pytest.raises(ValueError):
        solve_baseline(build_det(one_option(), [[1.0]]))


def test_write_lp(tmp_path):
    inst = random_toy(7, n_nodes=2, n_sites=1, n_types=1, horizon=1)
    p = tmp_path / "m.lp"
    write_lp(build_r1(inst, model="det", trajectory=[[1.0, 2.0]]), p)
    text = p.read_text()
    assert text.lower().startswith("maximize") and "binar" in text.lower()


def test_unknown_reform():
    with pytest.raises(ValueError):
        build_det(one_option(), [[1.0]], reform="r9")

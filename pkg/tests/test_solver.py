import numpy as np
import pytest
import scipy.sparse as sp

from evloc.formulation import build_det, build_ms
from evloc.oracle import dp_multistage, enumerate_det
from evloc.scenario import GrowthModel, build_tree, expected_trajectory
from evloc.solver import DenseSimplex, HighsBackend, LinprogBackend, SolveLimits, branch_and_cut, make_backend
from evloc.solver.lp import INFEASIBLE, OPTIMAL, UNBOUNDED
from toys import random_toy

BACKENDS = [HighsBackend, LinprogBackend, DenseSimplex]


def _load(backend, c, A, lo, hi, lb, ub):
    return backend.load(np.array(c, float), sp.csr_matrix(np.array(A, float)), np.array(lo, float),
                        np.array(hi, float), np.array(lb, float), np.array(ub, float))


@pytest.mark.parametrize("cls", BACKENDS)
def test_lp_small(cls):
    # max x + y  s.t.  x + 2y <= 4,  3x + y <= 6,  0 <= x, y <= 10
    be = _load(cls(), [1, 1], [[1, 2], [3, 1]], [-np.inf, -np.inf], [4, 6], [0, 0], [10, 10])
    r = be.solve()
    assert r.status == OPTIMAL
    assert r.objective == pytest.approx(2.8)
    np.testing.assert_allclose(r.x, [1.6, 1.2], atol=1e-9)


@pytest.mark.parametrize("cls", BACKENDS)
def test_lp_rows_and_bounds(cls):
    be = _load(cls(), [1, 1], [[1, 2], [3, 1]], [-np.inf, -np.inf], [4, 6], [0, 0], [10, 10])
    be.add_rows(sp.csr_matrix([[1.0, 0.0]]), np.array([-np.inf]), np.array([1.0]))
    assert be.solve().objective == pytest.approx(2.5)
    be.delete_rows([2])
    assert be.n_rows == 2 and be.solve().objective == pytest.approx(2.8)
    be.set_bounds({0: 0.0})
    assert be.solve().objective == pytest.approx(2.0)
    be.set_bounds()
    assert be.solve().objective == pytest.approx(2.8)


@pytest.mark.parametrize("cls", BACKENDS)
def test_lp_infeasible(cls):
    be = _load(cls(), [1], [[1]], [5], [np.inf], [0], [1])
    assert be.solve().status == INFEASIBLE


@pytest.mark.parametrize("cls", [HighsBackend, LinprogBackend, DenseSimplex])
def test_lp_unbounded(cls):
    be = _load(cls(), [1, 0], [[0, 1]], [-np.inf], [1], [0, 0], [np.inf, np.inf])
    assert be.solve().status == UNBOUNDED


def test_lp_equalities_and_lower_rows():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n, m = 5, 4
        A = rng.uniform(-1, 1, (m, n))
        x0 = rng.uniform(0, 1, n)
        ax = A @ x0
        lo = np.r_[ax[:2] - 0.3, ax[2], -np.inf]
        hi = np.r_[ax[:2] + 0.3, ax[2], ax[3] + 0.1]
        c = rng.normal(size=n)
        vals = [_load(cls(), c, A, lo, hi, np.zeros(n), np.ones(n)).solve().objective for cls in BACKENDS]
        assert max(vals) - min(vals) < 1e-7


def test_make_backend_names():
    assert isinstance(make_backend("dense"), DenseSimplex)
    with pytest.raises(ValueError):
        make_backend("cplex")


@pytest.mark.parametrize("cuts", ["integral", "root", "all"])
@pytest.mark.parametrize("backend", ["highs", "dense"])
def test_bnc_matches_dp(cuts, backend):
    inst = random_toy(11, n_nodes=3, n_sites=2, n_types=1, horizon=2)
    tree = build_tree(GrowthModel(sd_rate=0.3), 2, 2, inst.base_demand, seed=1)
    ref = dp_multistage(inst, tree)[1]
    r = branch_and_cut(build_ms(inst, tree), backend, cuts=cuts)
    assert r.status == "optimal"
    assert r.objective == pytest.approx(ref, abs=1e-6)
    assert r.best_bound == pytest.approx(r.objective, abs=1e-6)


def test_bound_history_nonincreasing():
    inst = random_toy(12, n_nodes=4, n_sites=3, n_types=2, horizon=2)
    tree = build_tree(GrowthModel(sd_rate=0.3), 3, 2, inst.base_demand, seed=2)
    r = branch_and_cut(build_ms(inst, tree), cuts="integral", static_cuts=False)
    h = np.array(r.bound_history)
    assert len(h) == r.nodes_explored
    assert np.all(np.diff(h) <= 1e-9 * (1 + np.abs(h[:-1])))
    assert h[-1] == pytest.approx(r.objective, abs=1e-6)


def test_purging_keeps_optimum():
    inst = random_toy(13, n_nodes=4, n_sites=3, n_types=2, horizon=2)
    tree = build_tree(GrowthModel(sd_rate=0.3), 3, 2, inst.base_demand, seed=3)
    ref = dp_multistage(inst, tree)[1]
    r = branch_and_cut(build_ms(inst, tree), cuts="all", purge_limit=1)
    assert r.objective == pytest.approx(ref, abs=1e-6)


def test_plan_is_feasible_and_valued():
    inst = random_toy(14)
    traj = np.array([[2.0, 3.0, 4.0], [3.0, 4.0, 5.0]])
    r = branch_and_cut(build_det(inst, traj))
    plan, val = enumerate_det(inst, traj)
    assert r.objective == pytest.approx(val, abs=1e-6)
    from evloc.oracle import evaluate_trajectory
    assert evaluate_trajectory(r.plan, inst, traj) == pytest.approx(r.objective, abs=1e-9)


def test_node_limit_reports_partial():
    inst = random_toy(15, n_nodes=5, n_sites=3, n_types=2, horizon=3)
    tree = build_tree(GrowthModel(sd_rate=0.3), 3, 3, inst.base_demand, seed=0)
    r = branch_and_cut(build_ms(inst, tree), limits=SolveLimits(max_nodes=1), cuts="integral")
    assert r.status != "optimal"
    assert r.best_bound >= r.objective


def test_rejects_bad_cut_mode():
    inst = random_toy(16)
    with pytest.raises(ValueError):
        branch_and_cut(build_det(inst, np.ones((2, 3))), cuts="sometimes")


def test_single_branch_equals_det_solve():
    inst = random_toy(17)
    tree = build_tree(GrowthModel(), 1, 2, inst.base_demand, seed=0)
    a = branch_and_cut(build_ms(inst, tree)).objective
    b = branch_and_cut(build_det(inst, expected_trajectory(tree))).objective
    assert a == pytest.approx(b, abs=1e-9)


def test_lifted_static_plan_is_a_valid_start():
    from evloc.formulation import build_ts, lift_stage_plan

    inst = random_toy(18, n_nodes=4, n_sites=3, n_types=2, horizon=2)
    tree = build_tree(GrowthModel(sd_rate=0.4), 3, 2, inst.base_demand, seed=4)
    ts = branch_and_cut(build_ts(inst, tree))
    for form in ("node", "scenario"):
        ms_sys = build_ms(inst, tree, form=form)
        start = lift_stage_plan(ms_sys, ts.plan)
        capped = branch_and_cut(ms_sys, limits=SolveLimits(max_nodes=1), incumbent=start)
        assert capped.objective >= ts.objective - 1e-9
        full = branch_and_cut(ms_sys, incumbent=start)
        assert full.objective == pytest.approx(dp_multistage(inst, tree)[1], abs=1e-6)
    with pytest.raises(ValueError):
        branch_and_cut(ms_sys, incumbent=np.full(ms_sys.n_vars, 0.5))

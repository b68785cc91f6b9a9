"""Exact reference evaluators: exhaustive enumeration, backward induction over
scenario trees, and policy evaluation.

Open-sets are bitmasks: bit ``h`` set means option ``h`` is open.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .instance import Instance, WeightTable, compute_weights, revenue_table
from .plan import BuildPlan
from .scenario import ScenarioTree

TIE_TOL = 1e-9
BUDGET_TOL = 1e-9


class OracleTooLarge(RuntimeError):
    pass


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyValue:
    expected_revenue: float
    per_scenario: np.ndarray
    per_stage: np.ndarray

    def to_dict(self) -> dict:
        return {"expected_revenue": self.expected_revenue,
                "per_scenario": self.per_scenario.tolist(), "per_stage": self.per_stage.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def mask_matrix(masks, H: int) -> np.ndarray:
    masks = np.asarray(masks, dtype=np.int64)
    return ((masks[:, None] >> np.arange(H)) & 1).astype(np.int8)


def lex_key(masks, H: int) -> np.ndarray:
    """Integer whose order is the lexicographic order of ``(x_0, ..., x_{H-1})``."""
    bits = mask_matrix(masks, H).astype(np.int64)
    return bits @ (1 << np.arange(H - 1, -1, -1, dtype=np.int64))


def _to_mask(x) -> int:
    return int(np.sum(np.asarray(x, dtype=np.int64) << np.arange(len(x))))


class _Lattice:
    """Budget-feasible open-sets reachable at each year and the transitions."""

    def __init__(self, instance: Instance, max_states: int):
        H = instance.n_options
        if H > 30:
            raise OracleTooLarge(f"|H|={H} options is beyond bitmask enumeration")
        self.H = H
        cost = instance.option_cost
        s0 = _to_mask(instance.initial_open)
        n_masks = 1 << H
        if n_masks > 4 * max_states:
            raise OracleTooLarge(f"2^{H} open-sets exceed the state limit {max_states}")
        all_masks = np.arange(n_masks, dtype=np.int64)
        mask_cost = mask_matrix(all_masks, H) @ cost
        self.reach = [np.array([s0], dtype=np.int64)]
        self.pairs = [None]  # per year t: (parent index into reach[t-1], child index into reach[t])
        for t in range(1, instance.horizon + 1):
            afford = all_masks[mask_cost <= instance.budgets[t - 1] + BUDGET_TOL]
            prev = self.reach[-1]
            ok = (prev[:, None] & afford[None, :]) == 0
            par, k = np.nonzero(ok)
            child = prev[par] | afford[k]
            uniq, cidx = np.unique(child, return_inverse=True)
            if uniq.size > max_states:
                raise OracleTooLarge(f"{uniq.size} reachable open-sets in year {t} exceed {max_states}")
            order = np.lexsort((cidx, par))
            self.reach.append(uniq)
            self.pairs.append((par[order], cidx[order]))

    def group_max(self, t, values_child):
        """For each year-(t-1) state: max over its feasible year-t successors."""
        par, cidx = self.pairs[t]
        starts = np.flatnonzero(np.r_[True, par[1:] != par[:-1]])
        return np.maximum.reduceat(values_child[cidx], starts)

    def successors(self, t, parent_index):
        par, cidx = self.pairs[t]
        lo, hi = np.searchsorted(par, [parent_index, parent_index + 1])
        return cidx[lo:hi]


def _pick(values, masks, H):
    best = values.max()
    cand = np.flatnonzero(values >= best - TIE_TOL * max(1.0, abs(best)))
    return cand[np.argmin(lex_key(masks[cand], H))]


def count_det_plans(instance: Instance, max_states: int = 1_000_000) -> int:
    lat = _Lattice(instance, max_states)
    counts = np.ones(1, dtype=object)
    for t in range(1, instance.horizon + 1):
        par, cidx = lat.pairs[t]
        nxt = np.zeros(lat.reach[t].size, dtype=object)
        np.add.at(nxt, cidx, counts[par])
        counts = nxt
    return int(counts.sum())


def enumerate_det(instance: Instance, trajectory, weights: WeightTable | None = None,
                  limit: int = 1_000_000) -> tuple[BuildPlan, float]:
    """Best monotone, budget-feasible plan by listing every plan."""
    d = np.asarray(trajectory, dtype=float)
    if d.shape != (instance.horizon, instance.n_nodes):
        raise ValueError("trajectory must be (|T|, |I|)")
    n_plans = count_det_plans(instance, max_states=limit)
    if n_plans > limit:
        raise OracleTooLarge(f"{n_plans} feasible plans exceed the enumeration limit {limit}")
    weights = weights or compute_weights(instance)
    lat = _Lattice(instance, limit)
    H = instance.n_options
    plans = np.zeros((1, 0), dtype=np.int64)  # indices into reach[t]
    cur = np.zeros(1, dtype=np.int64)
    value = np.zeros(1)
    for t in range(1, instance.horizon + 1):
        par, cidx = lat.pairs[t]
        rev = revenue_table(instance, weights, mask_matrix(lat.reach[t], H), d[t - 1:t])[0]
        counts = np.bincount(par, minlength=lat.reach[t - 1].size)
        starts = np.r_[0, np.cumsum(counts)[:-1]]
        reps = counts[cur]
        src = np.repeat(np.arange(len(cur)), reps)
        offs = np.arange(reps.sum()) - np.repeat(np.cumsum(reps) - reps, reps)
        nxt = cidx[starts[cur[src]] + offs]
        plans = np.c_[plans[src], nxt]
        value = value[src] + rev[nxt]
        cur = nxt
    masks = np.array([lat.reach[t + 1][plans[:, t]] for t in range(instance.horizon)]).T
    best = value.max()
    cand = np.flatnonzero(value >= best - TIE_TOL * max(1.0, abs(best)))
    keys = [lex_key(masks[cand, t], H) for t in range(instance.horizon)]
    pick = cand[np.lexsort(keys[::-1])[0]]
    plan = BuildPlan(mask_matrix(masks[pick], H), tuple(range(1, instance.horizon + 1)), "stage")
    return plan, float(value[pick])


def dp_multistage(instance: Instance, tree: ScenarioTree, weights: WeightTable | None = None,
                  max_states: int = 1_000_000) -> tuple[BuildPlan, float]:
    """Optimal adaptive plan on ``tree`` by backward induction over built sets."""
    if tree.stages != instance.horizon:
        raise ValueError("tree stages must equal the instance horizon")
    weights = weights or compute_weights(instance)
    lat = _Lattice(instance, max_states)
    H, T = instance.n_options, tree.stages
    X = [None] + [mask_matrix(lat.reach[t], H) for t in range(1, T + 1)]
    V: dict[int, np.ndarray] = {}
    G: dict[int, np.ndarray] = {}
    for u in sorted(tree.decision_nodes, key=lambda v: -tree.nodes[v].stage):
        t = tree.nodes[u].stage + 1
        kids = tree.children(u)
        probs = np.array([tree.nodes[v].prob for v in kids])
        dem = np.array([tree.nodes[v].demands for v in kids])
        rev = revenue_table(instance, weights, X[t], dem)  # (n_kids, n_states)
        if t < T:
            rev = rev + np.array([V[v] for v in kids])
        G[u] = probs @ rev
        V[u] = lat.group_max(t, G[u])
    value = float(V[0][0])
    # forward pass for the policy
    keys, rows = [], []
    state = {0: 0}
    for u in tree.decision_nodes:
        t = tree.nodes[u].stage + 1
        succ = lat.successors(t, state[u])
        choice = succ[_pick(G[u][succ], lat.reach[t][succ], H)]
        keys.append(u)
        rows.append(X[t][choice])
        for v in tree.children(u):
            state[v] = choice
    return BuildPlan(np.array(rows), tuple(keys), "tree_node"), value


def _stage_rows(plan: BuildPlan, tree: ScenarioTree, leaf: int) -> np.ndarray:
    if plan.indexed_by == "stage":
        return np.array([plan.row(t) for t in range(1, tree.stages + 1)])
    return np.array([plan.row(tree.ancestor(leaf, t - 1)) for t in range(1, tree.stages + 1)])


def check_plan_rows(instance: Instance, rows: np.ndarray) -> None:
    """Raise unless a year-by-year open matrix is monotone and within budget."""
    prev = instance.initial_open.astype(np.int64)
    cost = instance.option_cost
    for t, x in enumerate(np.asarray(rows, dtype=np.int64), start=1):
        if np.any((x != 0) & (x != 1)):
            raise PolicyError(f"year {t}: plan entries must be 0/1")
        if np.any(x < prev):
            raise PolicyError(f"year {t}: plan closes an open station")
        spent = float(cost @ (x - prev))
        if spent > instance.budgets[t - 1] + BUDGET_TOL:
            raise PolicyError(f"year {t}: spends {spent:.6g} over budget {instance.budgets[t - 1]:.6g}")
        prev = x


def evaluate_policy(plan: BuildPlan, tree: ScenarioTree, instance: Instance,
                    weights: WeightTable | None = None) -> PolicyValue:
    weights = weights or compute_weights(instance)
    T = tree.stages
    leaves = tree.leaves
    per_s = np.zeros(len(leaves))
    per_t = np.zeros(T)
    for s, leaf in enumerate(leaves):
        rows = _stage_rows(plan, tree, leaf)
        check_plan_rows(instance, rows)
        path = tree.path(leaf)
        pi = tree.path_prob(leaf)
        for t in range(1, T + 1):
            r = revenue_table(instance, weights, rows[t - 1:t], tree.nodes[path[t]].demands[None])[0, 0]
            per_s[s] += r
            per_t[t - 1] += pi * r
    probs = np.array([tree.path_prob(l) for l in leaves])
    return PolicyValue(float(probs @ per_s), per_s, per_t)


def evaluate_trajectory(plan: BuildPlan, instance: Instance, trajectory,
                        weights: WeightTable | None = None) -> float:
    """Revenue of a stage-indexed plan on one demand trajectory."""
    weights = weights or compute_weights(instance)
    rows = np.array([plan.row(t) for t in range(1, instance.horizon + 1)])
    check_plan_rows(instance, rows)
    d = np.asarray(trajectory, dtype=float)
    return float(sum(revenue_table(instance, weights, rows[t:t + 1], d[t:t + 1])[0, 0]
                     for t in range(instance.horizon)))

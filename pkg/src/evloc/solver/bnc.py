"""Best-bound branch-and-cut with lazy tangent cuts for the revenue rows."""
from __future__ import annotations

import heapq
import json
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..plan import BuildPlan
from .lp import INFEASIBLE, OPTIMAL, UNBOUNDED, LpBackend, make_backend
from .sgi import CUT_TOL, INT_TOL, HookBatch

OPTIMAL_STATUS = "optimal"
INFEASIBLE_STATUS = "infeasible"
LIMIT_STATUS = "budget-exhausted-node-limit"


@dataclass(frozen=True)
class SolveLimits:
    max_nodes: int = 200_000
    max_seconds: float = float("inf")
    abs_gap: float = 1e-7
    rel_gap: float = 0.0


@dataclass
class SolveResult:
    status: str
    objective: float
    best_bound: float
    plan: BuildPlan | None
    cuts_added: int = 0
    nodes_explored: int = 0
    wall_time: float = 0.0
    x: np.ndarray | None = field(default=None, repr=False)
    bound_history: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "status": self.status, "objective": self.objective, "best_bound": self.best_bound,
            "cuts_added": self.cuts_added, "nodes_explored": self.nodes_explored,
            "wall_time": self.wall_time,
            "plan": None if self.plan is None else self.plan.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def _cut_matrix(cuts, n):
    rows, cols, vals, rhs = [], [], [], []
    for r, c in enumerate(cuts):
        rows += [r] * (len(c.x) + 1)
        cols += [c.q, *c.x.tolist()]
        vals += [1.0, *(-c.coef).tolist()]
        rhs.append(c.rhs)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(cuts), n))
    A.sum_duplicates()
    return A, np.full(len(cuts), -np.inf), np.array(rhs)


CUT_MODES = ("integral", "root", "all")


def branch_and_cut(system, backend: LpBackend | str | None = None, limits: SolveLimits = SolveLimits(),
                   *, cuts: str = "integral", rounding: bool = True, max_rounds: int = 50,
                   node_rounds: int = 3, frac_tol: float = 1e-6, static_cuts: bool = True,
                   purge_limit: int = 200, incumbent=None) -> SolveResult:
    """Maximize ``system`` exactly, separating deferred revenue rows lazily.

    Nodes are explored best-bound first. Integral LP points are checked
    against every hook; violated tangent cuts are added to the global pool
    and the node is re-solved, otherwise the point becomes an incumbent with
    its exact revenue.

    ``cuts="root"`` also separates at fractional LP points of the root node,
    ``cuts="all"`` at every node (tangents of a concave function are valid
    anywhere on the box). Fractional rounds are capped at ``max_rounds`` at
    the root and ``node_rounds`` elsewhere, and only cuts violated by more
    than ``frac_tol * (1 + |q|)`` are kept.
    ``rounding`` tries the rounded-down LP point as an incumbent.
    Once the pool holds more than ``purge_limit`` tangent rows (or twice the
    hook count), rows slack at the last node LP are dropped. ``incumbent`` is
    an optional feasible starting point; its revenue variables are overwritten
    with their exact values.
    """
    if cuts not in CUT_MODES:
        raise ValueError(f"cuts must be one of {CUT_MODES}")
    t0 = time.perf_counter()
    if system.sense != "max":
        raise ValueError("branch_and_cut maximizes")
    if backend is None or isinstance(backend, str):
        backend = make_backend(backend or "highs")
    backend.load(system.objective, system.A, system.row_lo, system.row_hi, system.lb, system.ub)
    n = system.n_vars
    bins = np.flatnonzero(system.binary)
    # location variables first, auxiliary binaries (expansion bits) after
    primary = np.isin(bins, system.plan_vars)
    hooks = HookBatch.from_hooks(system.hooks) if system.hooks else None
    seen = set()
    n_cuts = 0
    if hooks is not None and static_cuts:
        pre = hooks.subadditive_cuts()
        backend.add_rows(*_cut_matrix(pre, n))
        n_cuts = len(pre)
    base_rows = backend.n_rows
    cut_keys: list = []  # pool keys of the purgeable rows after base_rows
    purge_at = max(purge_limit, 2 * len(hooks)) if hooks is not None else 0

    def purge(x):
        """Drop tangent rows that are slack at ``x``; they can be separated again later."""
        nonlocal cut_keys
        A = backend.A[base_rows:]
        slack = backend.hi[base_rows:] - A @ x
        drop = np.flatnonzero(slack > 1e-6 * (1.0 + np.abs(backend.hi[base_rows:])))
        if drop.size:
            backend.delete_rows(base_rows + drop)
            for k in drop:
                seen.discard(cut_keys[k])
            keep = np.ones(len(cut_keys), dtype=bool)
            keep[drop] = False
            cut_keys = [c for c, f in zip(cut_keys, keep) if f]

    inc_x, inc_obj = None, -np.inf
    if incumbent is not None:
        xi = np.array(incumbent, dtype=float)
        obj = _exact_value(system, hooks, xi)
        if system.violation(xi) > 1e-9 or np.any(np.abs(xi[bins] - np.round(xi[bins])) > INT_TOL):
            raise ValueError("starting incumbent violates the linear rows or integrality")
        inc_x, inc_obj = xi, obj
    counter = 0
    heap = [(-np.inf, counter, 0, (), -np.inf)]  # (priority, tiebreak, depth, fixings, -bound)
    history = []
    n_nodes = 0
    status = None

    def gap_closed(bound):
        return bound <= inc_obj + max(limits.abs_gap, limits.rel_gap * abs(inc_obj))

    while heap:
        if inc_x is not None and heap[0][0] == -np.inf:
            # plunge finished: restore best-bound order
            heap = [(e[4], abs(e[1]), e[2], e[3], e[4]) for e in heap]
            heapq.heapify(heap)
        _, _, depth, fix, negb = heap[0]
        if inc_x is not None and gap_closed(-negb):
            break
        if n_nodes >= limits.max_nodes or time.perf_counter() - t0 > limits.max_seconds:
            status = LIMIT_STATUS
            break
        heapq.heappop(heap)
        n_nodes += 1
        backend.set_bounds(dict(fix))
        rounds = 0
        round_cap = max_rounds if depth == 0 else node_rounds
        frac_sep = cuts == "all" or (cuts == "root" and depth == 0)
        while True:
            res = backend.solve()
            if res.status == INFEASIBLE:
                break
            if res.status == UNBOUNDED:
                raise RuntimeError("LP relaxation unbounded; revenue variables need upper bounds")
            if res.status != OPTIMAL:
                raise RuntimeError(f"LP backend returned {res.status}")
            x = res.x
            bound = res.objective + system.obj_const
            if inc_x is not None and gap_closed(bound):
                break
            xb = x[bins]
            frac = np.abs(xb - np.round(xb))
            integral = frac.max(initial=0.0) <= INT_TOL
            if hooks is not None and (integral or (frac_sep and rounds < round_cap)):
                xs = x.copy()
                if integral:
                    xs[bins] = np.round(xb)
                else:
                    rounds += 1
                fresh = []
                tol = CUT_TOL if integral else frac_tol * (1.0 + np.abs(xs[hooks.q]))
                for c in hooks.separate(xs, tol=tol, require_integral=integral):
                    key = (c.hook, tuple(np.round(xs[c.x], 9)))
                    if key not in seen:
                        seen.add(key)
                        cut_keys.append(key)
                        fresh.append(c)
                if fresh:
                    backend.add_rows(*_cut_matrix(fresh, n))
                    n_cuts += len(fresh)
                    continue
            if integral:
                xi = x.copy()
                xi[bins] = np.round(xb)
                obj = _exact_value(system, hooks, xi)
                if obj > inc_obj:
                    inc_x, inc_obj = xi, obj
                break
            if rounding:
                xr = x.copy()
                xr[bins] = np.floor(xb + INT_TOL)
                obj = _exact_value(system, hooks, xr)
                if obj > inc_obj and system.violation(xr) <= 1e-9:
                    inc_x, inc_obj = xr, obj
            # most fractional location variable, lowest index on ties
            pool = primary & (frac > INT_TOL)
            if not pool.any():
                pool = frac > INT_TOL
            k = int(bins[np.argmax(np.where(pool, frac, -1.0))])
            # until an incumbent exists, plunge: children get priority over the open pool
            key = -np.inf if inc_x is None else -bound
            for v in (0.0, 1.0):
                counter += 1
                heapq.heappush(heap, (key, -counter if inc_x is None else counter, depth + 1,
                                      fix + ((k, v),), -bound))
            break
        if hooks is not None and len(cut_keys) > purge_at and res.status == OPTIMAL:
            purge(res.x)
        if not heap:
            top = -np.inf
        elif heap[0][0] == -np.inf:
            top = max(-e[4] for e in heap)
        else:
            top = -heap[0][4]
        history.append(max(inc_obj, top))

    if status is None:
        status = OPTIMAL_STATUS if inc_x is not None else INFEASIBLE_STATUS
    best_bound = inc_obj if status == OPTIMAL_STATUS else max(
        [inc_obj] + [-e[4] for e in heap])
    return SolveResult(
        status=status, objective=float(inc_obj), best_bound=float(best_bound),
        plan=None if inc_x is None else system.plan_from(inc_x),
        cuts_added=n_cuts, nodes_explored=n_nodes, wall_time=time.perf_counter() - t0,
        x=inc_x, bound_history=history,
    )


def _exact_value(system, hooks, x):
    """Objective with every hooked revenue variable set to its exact value (in place)."""
    if hooks is not None:
        x[hooks.q] = hooks.values(x)
    return system.objective_value(x)


def solve_baseline(system, backend: LpBackend | str | None = None,
                   limits: SolveLimits = SolveLimits()) -> SolveResult:
    """Plain branch-and-bound for fully linear systems (R1/R4)."""
    if system.hooks:
        raise ValueError("baseline solve expects a system without deferred rows")
    return branch_and_cut(system, backend, limits)

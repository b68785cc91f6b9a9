"""Solver-agnostic MILP/MISOCP systems for the deterministic, two-stage and
multi-stage location models.

A model is first reduced to a skeleton: decision points (one open-vector
each, linked to a parent for budget and no-dismantle rows) and revenue slots
(one demand vector each, served by one decision point, weighted by its
probability). The revenue of a slot is then encoded one of three ways:

``sgi``
    one ``q`` per (slot, node), bounded by ``max_h d_ih``; the fractional
    revenue rows are deferred to lazy tangent cuts (``hooks``).
``r1``
    ``y = 1/(w0 + sum w x)`` plus McCormick products ``u_h = x_h y``.
``r4``
    ``z`` = revenue, integer weights, binary expansion of ``sum W x`` and
    McCormick products of ``z`` with the expansion bits.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .instance import Instance, WeightTable, compute_weights
from .plan import BuildPlan
from .scenario import ScenarioTree, equivalence_classes, expected_trajectory
from .solver.sgi import QEvaluator, q_value

REFORMS = ("sgi", "r1", "r4")


@dataclass(frozen=True)
class VarBlock:
    name: str
    start: int
    shape: tuple[int, ...]
    kind: str

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1

    def indices(self) -> np.ndarray:
        return np.arange(self.start, self.start + self.size).reshape(self.shape)


@dataclass(frozen=True)
class LazyHook:
    """Deferred revenue row ``q <= Q(x)`` for one demand node and slot."""
    q: int
    x: np.ndarray
    evaluator: QEvaluator
    node: int
    context: tuple


@dataclass(frozen=True)
class Affine:
    const: float
    idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    coef: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def value(self, x) -> float:
        return float(self.const + np.dot(self.coef, np.asarray(x, dtype=float)[self.idx]))


@dataclass(frozen=True)
class SocRow:
    """``||vector||_2 <= rhs`` with affine entries."""
    vector: tuple[Affine, ...]
    rhs: Affine
    hook: int

    def sides(self, x) -> tuple[float, float]:
        v = np.array([a.value(x) for a in self.vector])
        return float(np.linalg.norm(v)), self.rhs.value(x)

    def residual(self, x) -> float:
        lhs, rhs = self.sides(x)
        return lhs - rhs


@dataclass(frozen=True)
class PlanLayout:
    keys: tuple[int, ...]
    indexed_by: str
    var: np.ndarray  # (n_keys, n_options) variable indices


@dataclass(frozen=True)
class ConstraintSystem:
    blocks: dict
    lb: np.ndarray
    ub: np.ndarray
    binary: np.ndarray
    A: sp.csr_matrix
    row_lo: np.ndarray
    row_hi: np.ndarray
    row_groups: tuple  # (tag, first_row, n_rows)
    objective: np.ndarray
    obj_const: float
    plan: PlanLayout
    hooks: tuple = ()
    soc_rows: tuple = ()
    sense: str = "max"
    meta: dict = field(default_factory=dict)

    @property
    def n_vars(self) -> int:
        return len(self.lb)

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @property
    def n_binary(self) -> int:
        return int(self.binary.sum())

    @property
    def n_continuous(self) -> int:
        return self.n_vars - self.n_binary

    @property
    def plan_vars(self) -> np.ndarray:
        """Indices of all location variables."""
        return self.blocks["x"].indices().ravel()

    def objective_value(self, x) -> float:
        return float(self.objective @ np.asarray(x, dtype=float) + self.obj_const)

    def plan_from(self, x) -> BuildPlan:
        vals = np.round(np.asarray(x, dtype=float)[self.plan.var]).astype(np.int8)
        return BuildPlan(vals, self.plan.keys, self.plan.indexed_by)

    def violation(self, x) -> float:
        """Largest violation of bounds and linear rows at ``x``."""
        x = np.asarray(x, dtype=float)
        ax = self.A @ x
        parts = [self.lb - x, x - self.ub, self.row_lo - ax, ax - self.row_hi]
        return float(max((np.max(p) for p in parts if p.size), default=0.0))

    def var_name(self, k: int) -> str:
        for b in self.blocks.values():
            if b.start <= k < b.start + b.size:
                idx = np.unravel_index(k - b.start, b.shape) if b.shape else ()
                return b.name + "".join(f"_{int(v)}" for v in idx)
        raise IndexError(k)


class _Builder:
    def __init__(self):
        self.blocks: dict[str, VarBlock] = {}
        self.n = 0
        self._lb, self._ub, self._bin = [], [], []
        self._rows, self._cols, self._vals = [], [], []
        self._lo, self._hi = [], []
        self.groups = []
        self.m = 0

    def var(self, name, shape, kind="continuous", lb=0.0, ub=np.inf) -> np.ndarray:
        shape = tuple(int(s) for s in shape)
        blk = VarBlock(name, self.n, shape, kind)
        self.blocks[name] = blk
        size = blk.size
        self._lb.append(np.broadcast_to(np.asarray(lb, dtype=float), shape).ravel())
        self._ub.append(np.broadcast_to(np.asarray(ub, dtype=float), shape).ravel())
        self._bin.append(np.full(size, kind == "binary"))
        self.n += size
        return blk.indices()

    def rows(self, tag, cols, vals, lo=-np.inf, hi=np.inf):
        cols = np.asarray(cols, dtype=np.int64)
        if cols.ndim == 1:
            cols = cols[:, None]
        m = cols.shape[0]
        if m == 0:
            return
        vals = np.broadcast_to(np.asarray(vals, dtype=float), cols.shape)
        self._rows.append(np.repeat(np.arange(self.m, self.m + m), cols.shape[1]))
        self._cols.append(cols.ravel())
        self._vals.append(vals.ravel())
        self._lo.append(np.broadcast_to(np.asarray(lo, dtype=float), (m,)).copy())
        self._hi.append(np.broadcast_to(np.asarray(hi, dtype=float), (m,)).copy())
        if self.groups and self.groups[-1][0] == tag and sum(g[2] for g in self.groups) == self.m:
            t, s, c = self.groups[-1]
            self.groups[-1] = (t, s, c + m)
        else:
            self.groups.append((tag, self.m, m))
        self.m += m

    def build(self, objective, plan, hooks=(), obj_const=0.0, meta=None) -> ConstraintSystem:
        cat = lambda parts, dt=float: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dt)
        A = sp.csr_matrix((cat(self._vals), (cat(self._rows, np.int64), cat(self._cols, np.int64))),
                          shape=(self.m, self.n))
        A.sum_duplicates()
        A.eliminate_zeros()
        arrays = [cat(self._lb), cat(self._ub), cat(self._bin, bool), cat(self._lo), cat(self._hi),
                  np.asarray(objective, dtype=float)]
        for a in arrays:
            a.setflags(write=False)
        lb, ub, binary, lo, hi, c = arrays
        return ConstraintSystem(
            blocks=dict(self.blocks), lb=lb, ub=ub, binary=binary, A=A, row_lo=lo, row_hi=hi,
            row_groups=tuple(self.groups), objective=c, obj_const=float(obj_const), plan=plan,
            hooks=tuple(hooks), meta=dict(meta or {}),
        )


# ---------------------------------------------------------------- skeletons

@dataclass
class Skeleton:
    """Decision points and revenue slots of one model, before encoding."""
    model: str
    form: str
    dec_keys: list
    dec_stage: np.ndarray  # year t of each decision point
    dec_parent: np.ndarray  # index of the previous-year decision, -1 at year 1
    slot_keys: list
    slot_dec: np.ndarray  # decision point serving the slot
    slot_demand: np.ndarray  # (n_slots, |I|)
    slot_weight: np.ndarray  # objective weight (probability)
    na_pairs: np.ndarray  # (n, 2) decision indices (other, representative)
    plan_keys: tuple
    plan_dec: np.ndarray
    indexed_by: str
    n_scenarios: int


def det_skeleton(instance: Instance, trajectory) -> Skeleton:
    d = np.asarray(trajectory, dtype=float)
    T = instance.horizon
    if d.shape != (T, instance.n_nodes):
        raise ValueError(f"trajectory must have shape {(T, instance.n_nodes)}, got {d.shape}")
    idx = np.arange(T)
    return Skeleton(
        model="det", form="stage", dec_keys=[(t + 1,) for t in idx], dec_stage=idx + 1,
        dec_parent=idx - 1, slot_keys=[(t + 1,) for t in idx], slot_dec=idx, slot_demand=d,
        slot_weight=np.ones(T), na_pairs=np.zeros((0, 2), dtype=np.int64),
        plan_keys=tuple(int(t + 1) for t in idx), plan_dec=idx, indexed_by="stage", n_scenarios=1,
    )


def _check_tree(instance, tree):
    if tree.stages != instance.horizon:
        raise ValueError(f"tree has {tree.stages} stages, instance horizon is {instance.horizon}")
    if len(tree.nodes[0].demands) != instance.n_nodes:
        raise ValueError("tree demand vectors do not match instance nodes")


def ts_expanded_skeleton(instance: Instance, tree: ScenarioTree) -> Skeleton:
    _check_tree(instance, tree)
    T, leaves = tree.stages, tree.leaves
    S = len(leaves)
    paths = [tree.path(l) for l in leaves]
    keys, dec, dem, wt = [], [], [], []
    for t in range(1, T + 1):
        for s in range(S):
            keys.append((t, s))
            dec.append(t - 1)
            dem.append(tree.nodes[paths[s][t]].demands)
            wt.append(tree.path_prob(leaves[s]))
    idx = np.arange(T)
    return Skeleton(
        model="ts", form="expanded", dec_keys=[(t + 1,) for t in idx], dec_stage=idx + 1,
        dec_parent=idx - 1, slot_keys=keys, slot_dec=np.array(dec), slot_demand=np.array(dem),
        slot_weight=np.array(wt), na_pairs=np.zeros((0, 2), dtype=np.int64),
        plan_keys=tuple(int(t + 1) for t in idx), plan_dec=idx, indexed_by="stage", n_scenarios=S,
    )


def ms_node_skeleton(instance: Instance, tree: ScenarioTree) -> Skeleton:
    _check_tree(instance, tree)
    dec_ids = tree.decision_nodes
    pos = {v: k for k, v in enumerate(dec_ids)}
    stage = np.array([tree.nodes[v].stage + 1 for v in dec_ids])
    parent = np.array([pos.get(tree.nodes[v].parent, -1) for v in dec_ids])
    slots = [n.id for n in tree.nodes if n.stage >= 1]
    return Skeleton(
        model="ms", form="node", dec_keys=[(v,) for v in dec_ids], dec_stage=stage, dec_parent=parent,
        slot_keys=[(v,) for v in slots], slot_dec=np.array([pos[tree.nodes[v].parent] for v in slots]),
        slot_demand=np.array([tree.nodes[v].demands for v in slots]),
        slot_weight=np.array([tree.path_prob(v) for v in slots]),
        na_pairs=np.zeros((0, 2), dtype=np.int64),
        plan_keys=tuple(dec_ids), plan_dec=np.arange(len(dec_ids)), indexed_by="tree_node",
        n_scenarios=tree.n_scenarios,
    )


def ms_scenario_skeleton(instance: Instance, tree: ScenarioTree) -> Skeleton:
    _check_tree(instance, tree)
    T, leaves = tree.stages, tree.leaves
    S = len(leaves)
    paths = [tree.path(l) for l in leaves]
    at = lambda t, s: (t - 1) * S + s
    keys = [(t, s) for t in range(1, T + 1) for s in range(S)]
    stage = np.array([t for t, _ in keys])
    parent = np.array([at(t - 1, s) if t > 1 else -1 for t, s in keys])
    dem = np.array([tree.nodes[paths[s][t]].demands for t, s in keys])
    wt = np.array([tree.path_prob(leaves[s]) for _, s in keys])
    na = []
    for t in range(1, T + 1):
        for cls in equivalence_classes(tree, t):
            rep = cls[0]
            na.extend((at(t, s), at(t, rep)) for s in cls[1:])
    plan_keys, plan_dec = [], []
    for v in tree.decision_nodes:
        t = tree.nodes[v].stage + 1
        s = next(k for k, p in enumerate(paths) if p[t - 1] == v)
        plan_keys.append(v)
        plan_dec.append(at(t, s))
    return Skeleton(
        model="ms", form="scenario", dec_keys=keys, dec_stage=stage, dec_parent=parent,
        slot_keys=keys, slot_dec=np.arange(len(keys)), slot_demand=dem, slot_weight=wt,
        na_pairs=np.array(na, dtype=np.int64).reshape(-1, 2),
        plan_keys=tuple(plan_keys), plan_dec=np.array(plan_dec), indexed_by="tree_node", n_scenarios=S,
    )


# ---------------------------------------------------------------- encodings

def _decision_rows(b: _Builder, instance: Instance, sk: Skeleton) -> np.ndarray:
    H = instance.n_options
    x = b.var("x", (len(sk.dec_keys), H), "binary", 0.0, 1.0)
    c = instance.option_cost
    x0 = instance.initial_open.astype(float)
    budgets = np.asarray(instance.budgets)[sk.dec_stage - 1]
    root = sk.dec_parent < 0
    # budget: sum c (x_t - x_{t-1}) <= B_t
    cols = np.concatenate([x, np.where(root[:, None], x, x[sk.dec_parent])], axis=1)
    vals = np.concatenate([np.broadcast_to(c, x.shape), np.where(root[:, None], 0.0, -c)], axis=1)
    b.rows("budget", cols, vals, hi=budgets + np.where(root, c @ x0, 0.0))
    # no dismantling: x_t - x_{t-1} >= 0, x_1 >= x_0
    n = x.size
    par = np.where(root[:, None], x, x[sk.dec_parent])
    cols = np.stack([x.ravel(), par.ravel()], axis=1)
    vals = np.stack([np.ones(n), np.where(np.repeat(root, H), 0.0, -1.0)], axis=1)
    lo = np.where(np.repeat(root, H), np.tile(x0, len(sk.dec_keys)), 0.0)
    b.rows("monotone", cols, vals, lo=lo)
    if len(sk.na_pairs):
        a, r = sk.na_pairs[:, 0], sk.na_pairs[:, 1]
        cols = np.stack([x[a].ravel(), x[r].ravel()], axis=1)
        b.rows("nonant", cols, [1.0, -1.0], lo=0.0, hi=0.0)
    return x


def _slot_data(instance: Instance, weights: WeightTable, sk: Skeleton):
    r = instance.option_revenue
    # D[s, i, h] = r_h d_i
    D = sk.slot_demand[:, :, None] * r[None, None, :]
    return D, weights.w, weights.w_home


def _encode_sgi(b, instance, weights, sk, x):
    D, W, W0 = _slot_data(instance, weights, sk)
    dbar = D.max(axis=2)
    q = b.var("q", dbar.shape, "continuous", 0.0, dbar)
    objective = np.zeros(b.n)
    objective[q] = sk.slot_weight[:, None]
    hooks = []
    for s, key in enumerate(sk.slot_keys):
        xs = x[sk.slot_dec[s]]
        for i in range(instance.n_nodes):
            ev = QEvaluator(D[s, i], W[i], float(W0[i]))
            hooks.append(LazyHook(int(q[s, i]), xs, ev, i, tuple(key)))
    return objective, hooks


def _encode_r1(b, instance, weights, sk, x):
    D, W, W0 = _slot_data(instance, weights, sk)
    n_s, I, H = D.shape
    y_lo = 1.0 / (W0 + W.sum(axis=1))
    y_hi = 1.0 / W0
    y = b.var("y", (n_s, I), "continuous", np.broadcast_to(y_lo, (n_s, I)), np.broadcast_to(y_hi, (n_s, I)))
    u = b.var("u", (n_s, I, H), "continuous", 0.0, np.broadcast_to(y_hi[None, :, None], (n_s, I, H)))
    xs = np.broadcast_to(x[sk.slot_dec][:, None, :], (n_s, I, H))
    ys = np.broadcast_to(y[:, :, None], (n_s, I, H))
    lo3 = np.broadcast_to(y_lo[None, :, None], (n_s, I, H)).ravel()
    hi3 = np.broadcast_to(y_hi[None, :, None], (n_s, I, H)).ravel()
    uu, xx, yy = u.ravel(), xs.ravel(), ys.ravel()
    one = np.ones_like(lo3)
    # McCormick envelope of u = x*y over [0,1] x [y_lo, y_hi]
    b.rows("mccormick", np.stack([uu, xx], 1), np.stack([one, -lo3], 1), lo=0.0)
    b.rows("mccormick", np.stack([uu, yy, xx], 1), np.stack([one, -one, -hi3], 1), lo=-hi3)
    b.rows("mccormick", np.stack([uu, xx], 1), np.stack([one, -hi3], 1), hi=0.0)
    b.rows("mccormick", np.stack([uu, yy, xx], 1), np.stack([one, -one, -lo3], 1), hi=-lo3)
    # w0 y + sum_h w_h u_h = 1
    cols = np.concatenate([y[:, :, None], u], axis=2).reshape(n_s * I, H + 1)
    vals = np.concatenate([np.broadcast_to(W0[None, :, None], (n_s, I, 1)),
                           np.broadcast_to(W[None], (n_s, I, H))], axis=2).reshape(n_s * I, H + 1)
    b.rows("reciprocal", cols, vals, lo=1.0, hi=1.0)
    objective = np.zeros(b.n)
    objective[u] = sk.slot_weight[:, None, None] * D * W[None]
    return objective, []


def integer_weights(weights: WeightTable, precision: int) -> tuple[np.ndarray, np.ndarray]:
    """Weights scaled by ``precision`` and rounded to integers."""
    if precision < 1:
        raise ValueError("precision must be a positive integer")
    Ws = weights.w * precision
    W0s = weights.w_home * precision
    if max(Ws.max(), W0s.max()) * max(1, weights.w.shape[1]) >= 2.0 ** 52:
        raise OverflowError("scaled weights exceed exact float integer range")
    W = np.round(Ws)
    W0 = np.round(W0s)
    if np.any(W0 < 1):
        raise ValueError(f"home weight rounds to zero at precision {precision}")
    return W, W0


def expansion_bits(W: np.ndarray) -> np.ndarray:
    """Bits needed per node to encode ``sum_h W_ih x_h``: floor(log2(sum)) + 1."""
    return np.array([int(v).bit_length() for v in np.round(W.sum(axis=1)).astype(np.int64)])


def _encode_r4(b, instance, weights, sk, x, precision):
    D = sk.slot_demand[:, :, None] * instance.option_revenue[None, None, :]
    W, W0 = integer_weights(weights, precision)
    n_s, I, H = D.shape
    L = expansion_bits(W)
    B = int(L.sum())
    offs = np.r_[0, np.cumsum(L)[:-1]]
    dbar = D.max(axis=2)
    z = b.var("z", (n_s, I), "continuous", 0.0, dbar)
    bit = b.var("bit", (n_s, B), "binary", 0.0, 1.0)
    node_of_bit = np.repeat(np.arange(I), L)
    pow_of_bit = 2.0 ** (np.arange(B) - offs[node_of_bit])
    v_hi = dbar[:, node_of_bit]
    v = b.var("v", (n_s, B), "continuous", 0.0, v_hi)
    Lmax = int(L.max()) if B else 0
    # padded (node, position) -> bit column; padding carries a zero coefficient
    pad = np.zeros((I, Lmax), dtype=np.int64)
    padc = np.zeros((I, Lmax))
    for i in range(I):
        pad[i, :L[i]] = np.arange(offs[i], offs[i] + L[i])
        padc[i, :L[i]] = 2.0 ** np.arange(L[i])
    xs = x[sk.slot_dec]  # (n_s, H)
    xsI = np.broadcast_to(xs[:, None, :], (n_s, I, H))
    bits_cols = bit[:, pad]  # (n_s, I, Lmax)
    v_cols = v[:, pad]
    coef_b = np.broadcast_to(padc[None], (n_s, I, Lmax))
    # sum_l 2^l bit_l - sum_h W_h x_h = 0
    cols = np.concatenate([bits_cols, xsI], axis=2).reshape(n_s * I, -1)
    vals = np.concatenate([coef_b, np.broadcast_to(-W[None], (n_s, I, H))], axis=2).reshape(n_s * I, -1)
    b.rows("expansion", cols, vals, lo=0.0, hi=0.0)
    # W0 z + sum_l 2^l v_l - sum_h d_h W_h x_h = 0
    cols = np.concatenate([z[:, :, None], v_cols, xsI], axis=2).reshape(n_s * I, -1)
    vals = np.concatenate([np.broadcast_to(W0[None, :, None], (n_s, I, 1)), coef_b, -D * W[None]],
                          axis=2).reshape(n_s * I, -1)
    b.rows("bilinear", cols, vals, lo=0.0, hi=0.0)
    # McCormick for v = z * bit with z in [0, zU], v >= 0 via bounds
    zz = z[:, node_of_bit].ravel()
    vv, bb, zU = v.ravel(), bit.ravel(), v_hi.ravel()
    one = np.ones_like(zU)
    b.rows("mccormick", np.stack([vv, bb], 1), np.stack([one, -zU], 1), hi=0.0)
    b.rows("mccormick", np.stack([vv, zz], 1), np.stack([one, -one], 1), hi=0.0)
    b.rows("mccormick", np.stack([vv, zz, bb], 1), np.stack([one, -one, -zU], 1), lo=-zU)
    objective = np.zeros(b.n)
    objective[z] = sk.slot_weight[:, None]
    return objective, [], B


def r4_rounding_error_bound(instance: Instance, sk: Skeleton, precision: int, weights=None) -> float:
    """Upper bound on |objective(rounded weights) - objective(exact)| for any plan.

    Each weight moves by at most ``eps``, the largest actual rounding shift
    (never above ``0.5/precision``, zero for integer weights); the revenue
    ratio has partial derivatives bounded by ``dbar / denominator`` in every
    weight, so the per-slot error is at most ``(|H|+1) * eps * dbar / (w0 - eps)``.
    The optimum moves by no more than the largest plan-wise error.
    """
    weights = weights or compute_weights(instance)
    W, W0 = integer_weights(weights, precision)
    eps = max(np.abs(W / precision - weights.w).max(), np.abs(W0 / precision - weights.w_home).max())
    D = sk.slot_demand[:, :, None] * instance.option_revenue[None, None, :]
    dbar = D.max(axis=2)
    per = (instance.n_options + 1) * eps * dbar / (weights.w_home[None, :] - eps)
    return float(np.sum(sk.slot_weight[:, None] * per))


def encode(instance: Instance, sk: Skeleton, reform: str = "sgi", *, weights: WeightTable | None = None,
           precision: int = 1000) -> ConstraintSystem:
    if reform not in REFORMS:
        raise ValueError(f"unknown reformulation {reform!r}")
    weights = weights or compute_weights(instance)
    b = _Builder()
    x = _decision_rows(b, instance, sk)
    meta = {"model": sk.model, "form": sk.form, "reform": reform,
            "dims": dims_of(instance, sk), "dec_stage": sk.dec_stage.tolist()}
    if reform == "sgi":
        objective, hooks = _encode_sgi(b, instance, weights, sk, x)
    elif reform == "r1":
        objective, hooks = _encode_r1(b, instance, weights, sk, x)
    else:
        objective, hooks, B = _encode_r4(b, instance, weights, sk, x, precision)
        meta.update(precision=precision, expansion_bits=B,
                    rounding_error_bound=r4_rounding_error_bound(instance, sk, precision, weights))
    plan = PlanLayout(sk.plan_keys, sk.indexed_by, x[sk.plan_dec])
    return b.build(objective, plan, hooks, meta=meta)


def dims_of(instance: Instance, sk: Skeleton) -> dict:
    return {"I": instance.n_nodes, "H": instance.n_options, "T": instance.horizon, "S": sk.n_scenarios}


# ---------------------------------------------------------------- public builders

def build_det(instance: Instance, trajectory, reform: str = "sgi", **kw) -> ConstraintSystem:
    return encode(instance, det_skeleton(instance, trajectory), reform, **kw)


def build_ts(instance: Instance, tree: ScenarioTree, reform: str = "sgi", *, expanded: bool = False,
             **kw) -> ConstraintSystem:
    """Two-stage model.

    The revenue is linear in demand for a fixed plan, so the compact form is
    the deterministic model on stage-wise expected demand. ``expanded=True``
    keeps one revenue slot per scenario (same optimum, used for size checks).
    """
    if expanded:
        sk = ts_expanded_skeleton(instance, tree)
    else:
        _check_tree(instance, tree)
        sk = det_skeleton(instance, expected_trajectory(tree))
        sk.model, sk.form = "ts", "compact"
    return encode(instance, sk, reform, **kw)


def build_ms(instance: Instance, tree: ScenarioTree, form: str = "node", reform: str = "sgi",
             **kw) -> ConstraintSystem:
    if form == "node":
        sk = ms_node_skeleton(instance, tree)
    elif form == "scenario":
        sk = ms_scenario_skeleton(instance, tree)
    else:
        raise ValueError(f"unknown form {form!r}")
    return encode(instance, sk, reform, **kw)


def _build(instance, reform, model, tree, trajectory, form, **kw):
    if model == "det":
        return build_det(instance, trajectory, reform, **kw)
    if model == "ts":
        return build_ts(instance, tree, reform, **kw)
    if model == "ms":
        return build_ms(instance, tree, form, reform, **kw)
    raise ValueError(f"unknown model {model!r}")


def build_r1(instance, *, model="ms", tree=None, trajectory=None, form="scenario", **kw) -> ConstraintSystem:
    return _build(instance, "r1", model, tree, trajectory, form, **kw)


def build_r4(instance, *, model="ms", tree=None, trajectory=None, form="scenario", precision=1000,
             **kw) -> ConstraintSystem:
    return _build(instance, "r4", model, tree, trajectory, form, precision=precision, **kw)


def build(instance, model="ms", reform="sgi", *, tree=None, trajectory=None, form="node", **kw):
    return _build(instance, reform, model, tree, trajectory, form, **kw)


def lift_stage_plan(system: ConstraintSystem, plan: BuildPlan) -> np.ndarray:
    """Point of an SGI system that applies a year-indexed plan at every decision.

    A static plan is feasible for the adaptive models, so this gives a starting
    incumbent for multi-stage solves. Revenue variables are left at zero; the
    solver sets them to their exact values.
    """
    if system.meta["reform"] != "sgi":
        raise ValueError("lifting needs an SGI system")
    if plan.indexed_by != "stage":
        raise ValueError("expected a year-indexed plan")
    v = np.zeros(system.n_vars)
    xv = system.blocks["x"].indices()
    for k, t in enumerate(system.meta["dec_stage"]):
        v[xv[k]] = plan.row(int(t))
    return v


# ---------------------------------------------------------------- SOC rows

def soc_row(hook: LazyHook, k: int) -> SocRow:
    ev = hook.evaluator
    d, w, w0, dbar = np.asarray(ev.d), np.asarray(ev.w), ev.w0, ev.dbar
    rad = (dbar - d) * w
    assert np.all(rad >= 0), "negative radicand in SOC row"
    xi = np.asarray(hook.x, dtype=np.int64)
    vec = [Affine(2.0 * math.sqrt(dbar * w0))]
    vec += [Affine(0.0, xi[h:h + 1], np.array([2.0 * math.sqrt(rad[h])])) for h in range(len(xi))]
    lin_idx = np.r_[xi, hook.q]
    vec.append(Affine(w0 - dbar, lin_idx, np.r_[w, 1.0]))
    rhs = Affine(w0 + dbar, lin_idx, np.r_[w, -1.0])
    return SocRow(tuple(vec), rhs, k)


def add_soc_rows(system: ConstraintSystem, hooks=None) -> ConstraintSystem:
    """Copy of ``system`` with the conic form of every (or the given) deferred revenue row."""
    targets = system.hooks if hooks is None else hooks
    index = {id(h): k for k, h in enumerate(system.hooks)}
    rows = tuple(soc_row(h, index.get(id(h), -1)) for h in targets)
    return ConstraintSystem(**{**system.__dict__, "soc_rows": system.soc_rows + rows})


def soc_satisfied(system: ConstraintSystem, x, tol: float = 1e-9) -> bool:
    return all(r.residual(x) <= tol for r in system.soc_rows)


def revenue_check(system: ConstraintSystem, x) -> np.ndarray:
    """``Q(x) - q`` per hook (nonnegative when the deferred rows hold)."""
    x = np.asarray(x, dtype=float)
    return np.array([q_value(h.evaluator, x[h.x]) - x[h.q] for h in system.hooks])


# ---------------------------------------------------------------- sizes

@dataclass(frozen=True)
class SizeReport:
    reform: str
    model: str
    form: str
    continuous_count: int
    binary_count: int
    constraint_count: int
    linear_rows: int
    deferred_rows: int
    formula_counts: dict
    formulas_match: bool | None

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def table_formulas(reform: str, I: int, H: int, T: int, S: int, B: int | None = None) -> dict:
    """Variable counts and the constraint order expression per reformulation."""
    if reform == "sgi":
        return {"continuous": I * T * S, "binary": H * T * S, "constraint_order": (H * S + I) * T * S}
    if reform == "r1":
        return {"continuous": (H + 1) * I * T * S, "binary": H * T * S,
                "constraint_order": (H * I + H * S) * T * S}
    if reform == "r4":
        if B is None:
            raise ValueError("R4 formulas need the expansion bit count B")
        return {"continuous": (B + I) * T * S, "binary": (B + H) * T * S,
                "constraint_order": (H * S + I + H + B + 1) * T * S}
    raise ValueError(reform)


def size_report(system: ConstraintSystem, dims: dict | None = None) -> SizeReport:
    meta = system.meta
    dims = dims or meta["dims"]
    reform = meta["reform"]
    f = table_formulas(reform, dims["I"], dims["H"], dims["T"], dims["S"], meta.get("expansion_bits"))
    # Formulas count one variable set per (stage, scenario); they apply to the
    # scenario-indexed builds and to single-scenario (det / compact ts) builds.
    applies = meta["form"] in ("scenario", "stage", "compact")
    match = None
    if applies:
        match = f["continuous"] == system.n_continuous and f["binary"] == system.n_binary
        assert match, f"size formulas disagree with built system: {f} vs " \
                      f"({system.n_continuous}, {system.n_binary})"
    return SizeReport(
        reform=reform, model=meta["model"], form=meta["form"],
        continuous_count=system.n_continuous, binary_count=system.n_binary,
        constraint_count=system.n_rows + len(system.hooks), linear_rows=system.n_rows,
        deferred_rows=len(system.hooks), formula_counts=f, formulas_match=match,
    )


# ---------------------------------------------------------------- export

def _fmt(v: float) -> str:
    return repr(float(v))


def _expr(system, idx, coef) -> str:
    parts = []
    for k, c in zip(idx, coef):
        sign = "-" if c < 0 else "+"
        parts.append(f"{sign} {_fmt(abs(c))} {system.var_name(int(k))}")
    s = " ".join(parts) if parts else "0"
    return s[2:] if s.startswith("+ ") else s


def write_lp(system: ConstraintSystem, path) -> None:
    """Plain-text dump in CPLEX-LP style.

    Deferred revenue rows and conic rows follow ``End`` in a ``\\ SOC`` comment
    section, one row per line: ``soc<k>: norm(<affine>; ...) <= <affine>``.
    """
    A = system.A.tocsr()
    nz = np.flatnonzero(system.objective)
    out = ["Maximize" if system.sense == "max" else "Minimize",
           f" obj: {_expr(system, nz, system.objective[nz])}"]
    if system.obj_const:
        out[-1] += f" + {_fmt(system.obj_const)}"
    out.append("Subject To")
    tag_of = np.empty(system.n_rows, dtype=object)
    for tag, start, n in system.row_groups:
        tag_of[start:start + n] = tag
    for r in range(system.n_rows):
        lo, hi = system.row_lo[r], system.row_hi[r]
        sl = slice(A.indptr[r], A.indptr[r + 1])
        e = _expr(system, A.indices[sl], A.data[sl])
        name = f"{tag_of[r]}{r}"
        if lo == hi:
            out.append(f" {name}: {e} = {_fmt(hi)}")
        else:
            if np.isfinite(hi):
                out.append(f" {name}: {e} <= {_fmt(hi)}")
            if np.isfinite(lo):
                out.append(f" {name}{'_lo' if np.isfinite(hi) else ''}: {e} >= {_fmt(lo)}")
    out.append("Bounds")
    for k in range(system.n_vars):
        if system.binary[k]:
            continue
        hi = "+inf" if not np.isfinite(system.ub[k]) else _fmt(system.ub[k])
        out.append(f" {_fmt(system.lb[k])} <= {system.var_name(k)} <= {hi}")
    out.append("Binaries")
    out.extend(f" {system.var_name(k)}" for k in np.flatnonzero(system.binary))
    out.append("End")
    if system.hooks or system.soc_rows:
        out.append("\\ SOC")
        rows = system.soc_rows or tuple(soc_row(h, k) for k, h in enumerate(system.hooks))
        for k, row in enumerate(rows):
            vec = "; ".join(_affine(system, a) for a in row.vector)
            out.append(f"\\ soc{k}: norm({vec}) <= {_affine(system, row.rhs)}")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def _affine(system, a: Affine) -> str:
    s = _expr(system, a.idx, a.coef) if len(a.idx) else ""
    c = _fmt(a.const)
    return f"{c} {'+ ' + s if s and not s.startswith('-') else s}".strip()

"""Problem data and the MNL charging-choice model.

Options are flattened as ``h = j * n_types + k`` (site ``j``, station type ``k``).
Everything downstream indexes stations by ``h``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EXP_LIMIT = 700.0
ZONES = ("central", "suburb")


class InstanceError(ValueError):
    """Raised when instance data violates an invariant."""


@dataclass(frozen=True)
class DemandNode:
    id: int
    position: tuple[float, float]
    base_demand: float
    zone: str = "central"


@dataclass(frozen=True)
class CandidateSite:
    id: int
    position: tuple[float, float]


@dataclass(frozen=True)
class StationType:
    id: int
    build_cost: float
    unit_revenue: float


@dataclass(frozen=True)
class MnlParams:
    alpha: np.ndarray  # (n_nodes, n_options)
    alpha_home: np.ndarray  # (n_nodes,)
    beta: float


@dataclass(frozen=True)
class Instance:
    nodes: tuple[DemandNode, ...]
    sites: tuple[CandidateSite, ...]
    types: tuple[StationType, ...]
    mnl: MnlParams
    budgets: tuple[float, ...]
    horizon: int
    preexisting: frozenset[tuple[int, int]] = frozenset()
    distance_matrix: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        validate(self)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def n_types(self) -> int:
        return len(self.types)

    @property
    def n_options(self) -> int:
        return self.n_sites * self.n_types

    def option(self, site: int, type_: int) -> int:
        return site * self.n_types + type_

    def option_pair(self, h: int) -> tuple[int, int]:
        return divmod(h, self.n_types)

    @property
    def option_cost(self) -> np.ndarray:
        costs = np.array([t.build_cost for t in self.types])
        return np.tile(costs, self.n_sites)

    @property
    def option_revenue(self) -> np.ndarray:
        revs = np.array([t.unit_revenue for t in self.types])
        return np.tile(revs, self.n_sites)

    @property
    def base_demand(self) -> np.ndarray:
        return np.array([n.base_demand for n in self.nodes], dtype=float)

    @property
    def zones(self) -> tuple[str, ...]:
        return tuple(n.zone for n in self.nodes)

    @property
    def initial_open(self) -> np.ndarray:
        x0 = np.zeros(self.n_options, dtype=np.int8)
        for j, k in self.preexisting:
            x0[self.option(j, k)] = 1
        return x0

    def distances(self) -> np.ndarray:
        """Node-to-site distances in km, shape ``(n_nodes, n_sites)``."""
        if self.distance_matrix is not None:
            return np.asarray(self.distance_matrix, dtype=float)
        p = np.array([n.position for n in self.nodes], dtype=float)
        q = np.array([s.position for s in self.sites], dtype=float)
        return np.linalg.norm(p[:, None, :] - q[None, :, :], axis=2)

    def with_budgets(self, budgets) -> "Instance":
        return _replace(self, budgets=tuple(float(b) for b in budgets))

    def with_beta(self, beta: float) -> "Instance":
        mnl = MnlParams(self.mnl.alpha, self.mnl.alpha_home, float(beta))
        return _replace(self, mnl=mnl)


def _replace(inst: Instance, **changes) -> Instance:
    kw = dict(
        nodes=inst.nodes, sites=inst.sites, types=inst.types, mnl=inst.mnl,
        budgets=inst.budgets, horizon=inst.horizon, preexisting=inst.preexisting,
        distance_matrix=inst.distance_matrix,
    )
    kw.update(changes)
    return Instance(**kw)


def validate(inst: Instance) -> None:
    if not inst.nodes or not inst.sites or not inst.types:
        raise InstanceError("instance needs at least one node, site and type")
    if [n.id for n in inst.nodes] != list(range(len(inst.nodes))):
        raise InstanceError("node ids must be dense 0..|I|-1")
    if [s.id for s in inst.sites] != list(range(len(inst.sites))):
        raise InstanceError("site ids must be dense 0..|J|-1")
    if [t.id for t in inst.types] != list(range(len(inst.types))):
        raise InstanceError("type ids must be dense 0..|K|-1")
    for n in inst.nodes:
        if not np.isfinite(n.base_demand) or n.base_demand < 0:
            raise InstanceError(f"node {n.id}: negative or non-finite base demand {n.base_demand}")
        if n.zone not in ZONES:
            raise InstanceError(f"node {n.id}: unknown zone {n.zone!r}")
    for t in inst.types:
        if not t.build_cost > 0 or not t.unit_revenue > 0:
            raise InstanceError(f"type {t.id}: build_cost and unit_revenue must be positive")
    if inst.horizon < 1:
        raise InstanceError("horizon must be >= 1")
    if len(inst.budgets) != inst.horizon:
        raise InstanceError(
            f"budget/horizon mismatch: {len(inst.budgets)} budgets for horizon {inst.horizon}")
    if any(not b > 0 for b in inst.budgets):
        raise InstanceError("budgets must be positive")
    for j, k in inst.preexisting:
        if not (0 <= j < len(inst.sites) and 0 <= k < len(inst.types)):
            raise InstanceError(f"preexisting pair ({j}, {k}) out of range")
    shape = (len(inst.nodes), len(inst.sites) * len(inst.types))
    if np.shape(inst.mnl.alpha) != shape:
        raise InstanceError(f"alpha must have shape {shape}, got {np.shape(inst.mnl.alpha)}")
    if np.shape(inst.mnl.alpha_home) != (len(inst.nodes),):
        raise InstanceError("alpha_home must have one entry per node")
    if not (np.all(np.isfinite(inst.mnl.alpha)) and np.all(np.isfinite(inst.mnl.alpha_home))
            and np.isfinite(inst.mnl.beta)):
        raise InstanceError("MNL parameters must be finite")
    if inst.distance_matrix is not None:
        dm = np.asarray(inst.distance_matrix, dtype=float)
        if dm.shape != (len(inst.nodes), len(inst.sites)) or np.any(dm < 0):
            raise InstanceError("distance_matrix must be a nonnegative |I| x |J| array")


# ---------------------------------------------------------------- weights

@dataclass(frozen=True)
class WeightTable:
    w: np.ndarray  # (n_nodes, n_options)
    w_home: np.ndarray  # (n_nodes,)
    s: np.ndarray  # (n_nodes, n_sites)


def compute_weights(instance: Instance) -> WeightTable:
    s = instance.distances()
    site_of = np.repeat(np.arange(instance.n_sites), instance.n_types)
    arg = instance.mnl.alpha + instance.mnl.beta * s[:, site_of]
    home_arg = np.asarray(instance.mnl.alpha_home, dtype=float)
    bad = np.argwhere(np.abs(arg) > EXP_LIMIT)
    if bad.size:
        i, h = bad[0]
        j, k = instance.option_pair(int(h))
        raise InstanceError(
            f"weight exponent overflow at (node={i}, site={j}, type={k}): {arg[i, h]:.4g}")
    if np.any(np.abs(home_arg) > EXP_LIMIT):
        i = int(np.argmax(np.abs(home_arg)))
        raise InstanceError(f"home weight exponent overflow at node {i}: {home_arg[i]:.4g}")
    w = np.exp(arg)
    w_home = np.exp(home_arg)
    for a in (w, w_home, s):
        a.setflags(write=False)
    return WeightTable(w=w, w_home=w_home, s=s)


def choice_probability(weights: WeightTable, open_, i: int, h: int) -> float:
    x = np.asarray(open_, dtype=float)
    wx = weights.w[i] * x
    return float(wx[h] / (weights.w_home[i] + wx.sum()))


def choice_shares(weights: WeightTable, open_) -> tuple[np.ndarray, np.ndarray]:
    """All choice probabilities at once: ``(p[i, h], p_home[i])``."""
    x = np.asarray(open_, dtype=float)
    wx = weights.w * x[None, :]
    den = weights.w_home + wx.sum(axis=1)
    return wx / den[:, None], weights.w_home / den


def stage_revenue(instance: Instance, weights: WeightTable, open_, demand) -> float:
    p, _ = choice_shares(weights, open_)
    d = np.asarray(demand, dtype=float)
    return float(np.sum(d[:, None] * instance.option_revenue[None, :] * p))


def revenue_table(instance: Instance, weights: WeightTable, masks: np.ndarray, demands: np.ndarray) -> np.ndarray:
    """Revenue for many open-sets and demand vectors.

    ``masks`` is ``(n_sets, n_options)`` 0/1, ``demands`` is ``(n_dem, n_nodes)``.
    Returns ``(n_dem, n_sets)``.
    """
    X = np.asarray(masks, dtype=float)
    r = instance.option_revenue
    den = weights.w_home[None, :] + X @ weights.w.T  # (n_sets, I)
    # revenue per unit demand at node i
    unit = (X @ (weights.w * r[None, :]).T) / den  # (n_sets, I)
    return np.asarray(demands, dtype=float) @ unit.T


# ---------------------------------------------------------------- I/O

def instance_to_dict(inst: Instance) -> dict:
    n_types = inst.n_types
    alpha = np.asarray(inst.mnl.alpha)
    alpha_by_type = alpha[0, :n_types].tolist()
    uniform = np.allclose(alpha, np.tile(alpha_by_type, (inst.n_nodes, inst.n_sites)))
    home = np.asarray(inst.mnl.alpha_home)
    doc = {
        "nodes": [
            {"id": n.id, "x": n.position[0], "y": n.position[1],
             "base_demand": n.base_demand, "zone": n.zone}
            for n in inst.nodes
        ],
        "sites": [{"id": s.id, "x": s.position[0], "y": s.position[1]} for s in inst.sites],
        "types": [
            {"id": t.id, "build_cost": t.build_cost, "unit_revenue": t.unit_revenue}
            for t in inst.types
        ],
        "mnl": {
            "alpha_by_type": alpha_by_type,
            "alpha_home": float(home[0]) if np.all(home == home[0]) else home.tolist(),
            "beta": inst.mnl.beta,
        },
        "budgets": list(inst.budgets),
        "horizon": inst.horizon,
        "preexisting": sorted([list(p) for p in inst.preexisting]),
    }
    if not uniform:
        doc["mnl"]["alpha"] = alpha.tolist()
    if inst.distance_matrix is not None:
        doc["distance_matrix"] = np.asarray(inst.distance_matrix).tolist()
    return doc


def instance_from_dict(doc: dict) -> Instance:
    try:
        nodes = tuple(
            DemandNode(int(n["id"]), (float(n["x"]), float(n["y"])), float(n["base_demand"]),
                       n.get("zone", "central"))
            for n in doc["nodes"]
        )
        sites = tuple(CandidateSite(int(s["id"]), (float(s["x"]), float(s["y"]))) for s in doc["sites"])
        types = tuple(
            StationType(int(t["id"]), float(t["build_cost"]), float(t["unit_revenue"]))
            for t in doc["types"]
        )
        mnl = doc["mnl"]
        n_i, n_h = len(nodes), len(sites) * len(types)
        if "alpha" in mnl:
            alpha = np.array(mnl["alpha"], dtype=float)
        else:
            by_type = np.array(mnl["alpha_by_type"], dtype=float)
            if by_type.shape != (len(types),):
                raise InstanceError("alpha_by_type must have one entry per station type")
            alpha = np.tile(by_type, (n_i, len(sites)))
        alpha_home = np.broadcast_to(np.asarray(mnl.get("alpha_home", 0.0), dtype=float), (n_i,)).copy()
        dm = doc.get("distance_matrix")
        inst = Instance(
            nodes=nodes, sites=sites, types=types,
            mnl=MnlParams(alpha.reshape(n_i, n_h) if alpha.size == n_i * n_h else alpha,
                          alpha_home, float(mnl["beta"])),
            budgets=tuple(float(b) for b in doc["budgets"]),
            horizon=int(doc["horizon"]),
            preexisting=frozenset((int(p[0]), int(p[1])) for p in doc.get("preexisting", [])),
            distance_matrix=None if dm is None else np.array(dm, dtype=float),
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise InstanceError(f"malformed instance document: {exc!r}") from exc
    return inst


def load_instance(path) -> Instance:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InstanceError(f"cannot parse {path}: {exc}") from exc
    return instance_from_dict(doc)


def save_instance(inst: Instance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(inst), indent=1, sort_keys=True))


# ---------------------------------------------------------------- generator

@dataclass(frozen=True)
class GeneratorConfig:
    """Dimensions and layout of a synthetic city.

    Central nodes sit in a disc of radius ``core_radius`` around the origin,
    suburb nodes in the ring ``[core_radius, city_radius]``. Sites are split the
    same way by ``central_site_fraction``. With ``cluster_spread`` set, each
    node is instead dropped near a random site of its own zone (Gaussian
    offset with that standard deviation), so catchments barely overlap.
    """
    n_nodes: int = 58
    n_sites: int = 10
    n_types: int = 2
    horizon: int = 4
    central_node_fraction: float = 0.4
    central_site_fraction: float = 0.5
    core_radius: float = 2.0
    city_radius: float = 7.0
    central_demand: tuple[float, float] = (8.0, 14.0)
    suburb_demand: tuple[float, float] = (3.0, 7.0)
    build_costs: tuple[float, ...] = (1.0, 1.8)
    unit_revenues: tuple[float, ...] = (1.0, 1.1)
    alpha_by_type: tuple[float, ...] = (0.0, 0.5)
    alpha_home: float = 0.0
    beta: float = -0.63
    budget: float = 2.0
    cluster_spread: float | None = None


def generate_instance(seed: int, config: GeneratorConfig = GeneratorConfig()) -> Instance:
    c = config
    if min(c.n_nodes, c.n_sites, c.n_types, c.horizon) < 1:
        raise InstanceError("generator dimensions must all be >= 1")
    if len(c.build_costs) < c.n_types or len(c.unit_revenues) < c.n_types or len(c.alpha_by_type) < c.n_types:
        raise InstanceError("cost/revenue/alpha lists shorter than n_types")
    rng = np.random.default_rng(seed)

    def ring(n, r_lo, r_hi):
        theta = rng.uniform(0.0, 2 * np.pi, n)
        # uniform over the annulus area
        r = np.sqrt(rng.uniform(r_lo ** 2, r_hi ** 2, n))
        return np.round(np.c_[r * np.cos(theta), r * np.sin(theta)], 4)

    n_central = int(round(c.central_node_fraction * c.n_nodes))
    n_central = min(max(n_central, 1 if c.n_nodes > 1 else c.n_nodes), c.n_nodes)
    n_cs = int(round(c.central_site_fraction * c.n_sites))
    spos = np.vstack([ring(n_cs, 0.0, c.core_radius),
                      ring(c.n_sites - n_cs, c.core_radius, c.city_radius)])
    if c.cluster_spread is None:
        pos = np.vstack([ring(n_central, 0.0, c.core_radius),
                         ring(c.n_nodes - n_central, c.core_radius, c.city_radius)])
    else:
        central_sites = np.arange(n_cs) if n_cs else np.arange(c.n_sites)
        suburb_sites = np.arange(n_cs, c.n_sites) if n_cs < c.n_sites else np.arange(c.n_sites)
        anchor = np.r_[rng.choice(central_sites, n_central), rng.choice(suburb_sites, c.n_nodes - n_central)]
        pos = np.round(spos[anchor] + rng.normal(0.0, c.cluster_spread, (c.n_nodes, 2)), 4)
    dem = np.r_[rng.uniform(*c.central_demand, n_central),
                rng.uniform(*c.suburb_demand, c.n_nodes - n_central)]
    dem = np.round(dem, 4)
    nodes = tuple(
        DemandNode(i, (float(pos[i, 0]), float(pos[i, 1])), float(dem[i]),
                   "central" if i < n_central else "suburb")
        for i in range(c.n_nodes)
    )
    sites = tuple(CandidateSite(j, (float(spos[j, 0]), float(spos[j, 1]))) for j in range(c.n_sites))
    types = tuple(StationType(k, float(c.build_costs[k]), float(c.unit_revenues[k])) for k in range(c.n_types))
    alpha = np.tile(np.asarray(c.alpha_by_type[:c.n_types], dtype=float), (c.n_nodes, c.n_sites))
    return Instance(
        nodes=nodes, sites=sites, types=types,
        mnl=MnlParams(alpha, np.full(c.n_nodes, float(c.alpha_home)), float(c.beta)),
        budgets=(float(c.budget),) * c.horizon,
        horizon=c.horizon,
    )

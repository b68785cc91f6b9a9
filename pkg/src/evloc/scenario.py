"""Scenario trees for stochastic demand growth.

Tree node ``0`` is the root (stage 0, base demand). A node at depth ``t``
carries the demand realized in year ``t``. The decision for year ``t`` is
taken at the depth ``t-1`` ancestor, so leaves (depth ``|T|``) carry no
decision. Nodes are stored in breadth-first order; leaves keep that order
and become scenarios ``0..|S|-1``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .instance import ZONES


@dataclass(frozen=True)
class GrowthModel:
    """Gaussian annual growth rates, optionally zone-specific."""
    mean_rate: float | Mapping[str, float] = 0.435
    sd_rate: float | Mapping[str, float] = 0.096
    shared_by_zone: bool = False

    def __post_init__(self):
        for z in ZONES:
            if self.sd(z) < 0:
                raise ValueError("sd_rate must be nonnegative")

    def mean(self, zone: str) -> float:
        m = self.mean_rate
        return float(m[zone] if isinstance(m, Mapping) else m)

    def sd(self, zone: str) -> float:
        s = self.sd_rate
        return float(s[zone] if isinstance(s, Mapping) else s)


@dataclass(frozen=True)
class TreeNode:
    id: int
    parent: int  # -1 at the root
    stage: int
    prob: float  # conditional on the parent
    rates: np.ndarray = field(compare=False)
    demands: np.ndarray = field(compare=False)


@dataclass(frozen=True)
class ScenarioTree:
    nodes: tuple[TreeNode, ...]
    stages: int

    @property
    def leaves(self) -> tuple[int, ...]:
        return tuple(n.id for n in self.nodes if n.stage == self.stages)

    @property
    def n_scenarios(self) -> int:
        return len(self.leaves)

    def children(self, node_id: int) -> list[int]:
        return self._children[node_id]

    def at_stage(self, t: int) -> list[int]:
        return [n.id for n in self.nodes if n.stage == t]

    @property
    def decision_nodes(self) -> list[int]:
        return [n.id for n in self.nodes if n.stage < self.stages]

    def path(self, node_id: int) -> list[int]:
        """Root-to-node list of node ids."""
        out = []
        while node_id >= 0:
            out.append(node_id)
            node_id = self.nodes[node_id].parent
        return out[::-1]

    def ancestor(self, node_id: int, stage: int) -> int:
        return self.path(node_id)[stage]

    def path_prob(self, node_id: int) -> float:
        return float(np.prod([self.nodes[v].prob for v in self.path(node_id)]))

    @property
    def _children(self) -> dict[int, list[int]]:
        cache = self.__dict__.get("_kids")
        if cache is None:
            cache = {n.id: [] for n in self.nodes}
            for n in self.nodes:
                if n.parent >= 0:
                    cache[n.parent].append(n.id)
            object.__setattr__(self, "_kids", cache)
        return cache


def build_tree(model: GrowthModel, branching, stages: int, base_demand, seed: int,
               zones=None) -> ScenarioTree:
    """Full tree with uniform branch probabilities and Gaussian growth draws.

    ``branching`` is an int or one int per stage. Standard normal draws are
    taken in a fixed order before scaling, so trees that differ only in the
    growth parameters share their random numbers.
    """
    if stages < 1:
        raise ValueError("stages must be >= 1")
    b = [int(branching)] * stages if np.isscalar(branching) else [int(v) for v in branching]
    if len(b) != stages or min(b) < 1:
        raise ValueError("branching must be >= 1 for every stage")
    base = np.asarray(base_demand, dtype=float)
    n_i = base.size
    zones = ("central",) * n_i if zones is None else tuple(zones)
    zone_idx = np.array([ZONES.index(z) for z in zones])
    mean = np.array([model.mean(z) for z in zones])
    sd = np.array([model.sd(z) for z in zones])
    rng = np.random.default_rng(seed)

    nodes = [TreeNode(0, -1, 0, 1.0, np.zeros(n_i), base.copy())]
    frontier = [0]
    for t in range(1, stages + 1):
        nxt = []
        for parent in frontier:
            for _ in range(b[t - 1]):
                if model.shared_by_zone:
                    z = rng.standard_normal(len(ZONES))[zone_idx]
                else:
                    z = rng.standard_normal(n_i)
                rates = np.maximum(mean + sd * z, -1.0)
                demands = nodes[parent].demands * (1.0 + rates)
                nid = len(nodes)
                nodes.append(TreeNode(nid, parent, t, 1.0 / b[t - 1], rates, demands))
                nxt.append(nid)
        frontier = nxt
    for n in nodes:
        n.rates.setflags(write=False)
        n.demands.setflags(write=False)
    return ScenarioTree(tuple(nodes), stages)


def equivalence_classes(tree: ScenarioTree, t: int) -> list[list[int]]:
    """Scenarios that share information when the year-``t`` decision is made.

    Leaves ``r, s`` are in one class iff they pass through the same depth
    ``t-1`` node. Returned as lists of scenario indices (positions in
    ``tree.leaves``), classes ordered by their first member.
    """
    if not 1 <= t <= tree.stages:
        raise ValueError(f"stage {t} out of range 1..{tree.stages}")
    groups: dict[int, list[int]] = {}
    for s, leaf in enumerate(tree.leaves):
        groups.setdefault(tree.ancestor(leaf, t - 1), []).append(s)
    return sorted(groups.values(), key=lambda g: g[0])


def leaf_trajectories(tree: ScenarioTree) -> list[tuple[float, np.ndarray]]:
    """``(pi_s, d[t-1, i])`` per scenario, for years ``t = 1..|T|``."""
    out = []
    for leaf in tree.leaves:
        p = tree.path(leaf)
        d = np.array([tree.nodes[v].demands for v in p[1:]])
        out.append((tree.path_prob(leaf), d))
    return out


def expected_trajectory(tree: ScenarioTree) -> np.ndarray:
    """Stage-wise expected demand, shape ``(|T|, |I|)``."""
    return sum(pi * d for pi, d in leaf_trajectories(tree))


def apply_heterogeneity(model: GrowthModel, suburb_offset: float, scale_sd: bool = False) -> GrowthModel:
    """Zone-specific model with the suburb mean shifted by ``suburb_offset``.

    With ``scale_sd`` the suburb standard deviation moves with its mean so the
    coefficient of variation stays at the central zone's value.
    """
    central = model.mean("central")
    suburb = model.mean("suburb") + suburb_offset
    if central <= -1 or suburb <= -1:
        raise ValueError("mean growth rate must stay above -100%")
    sd = {z: model.sd(z) for z in ZONES}
    if scale_sd:
        if central <= 0 or suburb < 0:
            raise ValueError("scale_sd needs a positive central mean and a nonnegative suburb mean")
        sd["suburb"] = model.sd("central") * suburb / central
    return GrowthModel(mean_rate={"central": central, "suburb": suburb}, sd_rate=sd,
                       shared_by_zone=model.shared_by_zone)


def central_share(tree: ScenarioTree, zones) -> float:
    """Expected share of final-year demand located in the central zone."""
    central = np.array([z == "central" for z in zones])
    d_end = expected_trajectory(tree)[-1]
    total = d_end.sum()
    return float(d_end[central].sum() / total) if total > 0 else 0.0


# ---------------------------------------------------------------- serialization

def tree_to_dict(tree: ScenarioTree) -> dict:
    return {
        "stages": tree.stages,
        "nodes": [
            {"id": n.id, "parent": n.parent, "stage": n.stage, "prob": n.prob,
             "rates": n.rates.tolist(), "demands": n.demands.tolist()}
            for n in tree.nodes
        ],
        "leaves": list(tree.leaves),
    }


def tree_from_dict(doc: dict) -> ScenarioTree:
    nodes = tuple(
        TreeNode(int(n["id"]), int(n["parent"]), int(n["stage"]), float(n["prob"]),
                 np.array(n["rates"], dtype=float), np.array(n["demands"], dtype=float))
        for n in doc["nodes"]
    )
    tree = ScenarioTree(nodes, int(doc["stages"]))
    if "leaves" in doc and list(doc["leaves"]) != list(tree.leaves):
        raise ValueError("leaf index does not match node stages")
    return tree


def save_tree(tree: ScenarioTree, path) -> None:
    Path(path).write_text(json.dumps(tree_to_dict(tree)))


def load_tree(path) -> ScenarioTree:
    return tree_from_dict(json.loads(Path(path).read_text()))

"""Experiment drivers: instance/tree generation, solves, TS-vs-MS gaps, sweeps.

Every replication is keyed by one integer seed. The seed generates the
instance (unless one is loaded from file) and the scenario tree, so each
CSV row can be rebuilt from ``(config, value, seed)`` alone. Sweep values
reuse the same seeds, which gives common random numbers across values.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .formulation import build, lift_stage_plan, size_report
from .instance import GeneratorConfig, Instance, generate_instance, load_instance, save_instance
from .oracle import OracleTooLarge, dp_multistage, enumerate_det, evaluate_policy
from .plan import BuildPlan
from .scenario import (
    GrowthModel, ScenarioTree, apply_heterogeneity, build_tree, central_share, expected_trajectory,
    load_tree, save_tree,
)
from .solver import SolveLimits, branch_and_cut

SCHEMA_TAG = "evloc-sweep/1"
CSV_COLUMNS = ("value", "seed", "ts_value", "ms_value", "gap_pct", "central_share_pct")
SWEEP_PARAMETERS = ("sd", "beta", "heterogeneity")
DEFAULT_SWEEP_VALUES = {
    "sd": (0.096, 0.15, 0.20, 0.25, 0.30),
    "beta": (-0.63, -0.063),
    "heterogeneity": (-0.20, -0.10, 0.0, 0.10, 0.20),
}
MODELS = ("det", "ts", "ms")
REFORMS = ("sgi", "r1", "r4")
GAP_TOL = 1e-9

# Desk-scale city used by the gap experiments.
DESK_GENERATOR = GeneratorConfig(n_nodes=20, n_sites=6, n_types=2, horizon=3, city_radius=14.0,
                                 core_radius=4.0, suburb_demand=(1.0, 4.0), cluster_spread=1.5)
DESK_REPLICATIONS = 200
FULL_GENERATOR = GeneratorConfig()


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple[float, ...]
    replications: int = DESK_REPLICATIONS
    seeds: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ValueError(f"sweep parameter must be one of {SWEEP_PARAMETERS}")
        if not self.values:
            raise ValueError("sweep values must be nonempty")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")

    @property
    def seed_list(self) -> tuple[int, ...]:
        return tuple(self.seeds) if self.seeds is not None else tuple(range(self.replications))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to rebuild one experiment.

    ``engine`` picks how TS and MS are solved in gap runs: ``"dp"`` uses the
    enumeration / backward-induction oracles, ``"bnc"`` the branch-and-cut
    solver, and ``"auto"`` the oracles when their state space fits.
    """
    instance_path: str | None = None
    tree_path: str | None = None
    seed: int = 0
    replications: int = 1
    generator: GeneratorConfig = DESK_GENERATOR
    beta: float | None = None
    growth_mean: float = 0.435
    growth_sd: float = 0.096
    shared_by_zone: bool = True
    suburb_offset: float = 0.0
    heterogeneity_scale_sd: bool = True
    branching: int = 3
    model: str = "ms"
    reform: str = "sgi"
    form: str = "node"
    engine: str = "auto"
    backend: str = "highs"
    cuts: str = "root"
    precision: int = 1000
    max_seconds: float = 3600.0
    max_nodes: int = 200_000
    out_of_sample: bool = False
    sweep: SweepSpec | None = None
    workers: int = 1
    out: str = "out"

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.reform not in REFORMS:
            raise ValueError(f"reform must be one of {REFORMS}")
        if self.engine not in ("auto", "dp", "bnc"):
            raise ValueError("engine must be auto, dp or bnc")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.branching < 1:
            raise ValueError("branching must be >= 1")

    @property
    def seeds(self) -> tuple[int, ...]:
        return tuple(range(self.seed, self.seed + self.replications))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GapRecord:
    parameter: str
    value: float
    seed: int
    ts_value: float
    ms_value: float
    central_share: float
    status: str = "ok"

    @property
    def gap(self) -> float:
        return (self.ms_value - self.ts_value) / self.ts_value

    @property
    def gap_pct(self) -> float:
        return 100.0 * self.gap

    def __post_init__(self):
        if self.status == "ok" and self.gap < -GAP_TOL * max(1.0, abs(self.ms_value)):
            raise ValueError(f"MS value {self.ms_value} below TS value {self.ts_value} (seed {self.seed})")

    def to_dict(self) -> dict:
        return {**asdict(self), "gap": self.gap, "gap_pct": self.gap_pct}


# ---------------------------------------------------------------- building blocks

def make_instance(config: ExperimentConfig, seed: int) -> Instance:
    inst = load_instance(config.instance_path) if config.instance_path else \
        generate_instance(seed, config.generator)
    return inst if config.beta is None else inst.with_beta(config.beta)


def growth_model(config: ExperimentConfig) -> GrowthModel:
    base = GrowthModel(config.growth_mean, config.growth_sd, config.shared_by_zone)
    if not config.suburb_offset:
        return base
    return apply_heterogeneity(base, config.suburb_offset, scale_sd=config.heterogeneity_scale_sd)


def make_tree(config: ExperimentConfig, instance: Instance, seed: int) -> ScenarioTree:
    if config.tree_path:
        return load_tree(config.tree_path)
    return build_tree(growth_model(config), config.branching, instance.horizon,
                      instance.base_demand, seed=seed, zones=instance.zones)


def _limits(config: ExperimentConfig) -> SolveLimits:
    return SolveLimits(max_nodes=config.max_nodes, max_seconds=config.max_seconds)


def solve_model(config: ExperimentConfig, instance: Instance, tree: ScenarioTree, model: str | None = None):
    """Build and solve one model with branch-and-cut; returns ``(system, result)``."""
    model = model or config.model
    kw = {"precision": config.precision} if config.reform == "r4" else {}
    if model == "det":
        system = build(instance, "det", config.reform, trajectory=expected_trajectory(tree), **kw)
    else:
        system = build(instance, model, config.reform, tree=tree, form=config.form, **kw)
    cuts = config.cuts if system.hooks else "integral"
    start = None
    if model == "ms" and config.reform == "sgi":
        # the static plan is feasible on the tree: start from it
        _, ts = solve_model(config, instance, tree, "ts")
        if ts.plan is not None:
            start = lift_stage_plan(system, ts.plan)
    return system, branch_and_cut(system, config.backend, _limits(config), cuts=cuts, incumbent=start)


def _ts_ms_values(config: ExperimentConfig, instance: Instance, tree: ScenarioTree):
    """In-sample TS and MS optima (value, plan) on ``tree``."""
    if config.engine in ("auto", "dp"):
        try:
            ts_plan, ts = enumerate_det(instance, expected_trajectory(tree))
            ms_plan, ms = dp_multistage(instance, tree)
            return (ts, ts_plan), (ms, ms_plan), "ok"
        except OracleTooLarge:
            if config.engine == "dp":
                raise
    out, status = [], "ok"
    for model in ("ts", "ms"):
        _, res = solve_model(config, instance, tree, model)
        if res.status != "optimal":
            status = res.status
        out.append((res.objective, res.plan))
    return out[0], out[1], status


def nearest_branch_value(plan: BuildPlan, train: ScenarioTree, test: ScenarioTree, instance: Instance) -> float:
    """Expected revenue on ``test`` of a tree policy fitted on ``train``.

    At every test node the policy moves to the training child whose demand
    is closest (Euclidean) to the realized one and applies that node's
    decision, so monotonicity and budgets carry over from the training plan.
    """
    if plan.indexed_by != "tree_node":
        raise ValueError("expected a tree-node indexed plan")
    rows = {}
    match = {0: 0}
    for u in test.decision_nodes:
        rows[u] = plan.row(match[u])
        for v in test.children(u):
            kids = train.children(match[u])
            dv = test.nodes[v].demands
            if test.nodes[v].stage < test.stages:
                match[v] = min(kids, key=lambda c: float(np.sum((train.nodes[c].demands - dv) ** 2)))
    keys = tuple(test.decision_nodes)
    mapped = BuildPlan(np.array([rows[u] for u in keys]), keys, "tree_node")
    return evaluate_policy(mapped, test, instance).expected_revenue


def run_replication(config: ExperimentConfig, seed: int, parameter: str = "", value: float = math.nan) -> GapRecord:
    instance = make_instance(config, seed)
    tree = make_tree(config, instance, seed)
    try:
        (ts, ts_plan), (ms, ms_plan), status = _ts_ms_values(config, instance, tree)
    except Exception as exc:  # excluded from aggregates, kept in the log
        return GapRecord(parameter, value, seed, math.nan, math.nan, math.nan, f"failed: {exc}")
    if config.out_of_sample and status == "ok":
        # extension: fitted plans scored on a fresh tree with the same topology
        fresh = replace(config, tree_path=None)
        test = make_tree(fresh, instance, seed + 1_000_003)
        ts = evaluate_policy(ts_plan, test, instance).expected_revenue
        ms = nearest_branch_value(ms_plan, tree, test, instance)
        tree = test
        status = "ok-out-of-sample"
    share = 100.0 * central_share(tree, instance.zones)
    rec = GapRecord(parameter, value, seed, float(ts), float(ms), share, status)
    return rec


def sweep_config(config: ExperimentConfig, parameter: str, value: float) -> ExperimentConfig:
    if parameter == "sd":
        return replace(config, growth_sd=value)
    if parameter == "beta":
        return replace(config, beta=value)
    if parameter == "heterogeneity":
        return replace(config, suburb_offset=value)
    raise ValueError(f"unknown sweep parameter {parameter!r}")


def _job(args):
    config, seed, parameter, value = args
    return run_replication(config, seed, parameter, value)


def _run_jobs(jobs, workers: int) -> list[GapRecord]:
    if workers <= 1:
        return [_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_job, jobs))


def summarize(records) -> dict:
    ok = [r for r in records if r.status.startswith("ok")]
    g = np.array([r.gap_pct for r in ok])
    return {
        "n": len(ok),
        "excluded": [{"seed": r.seed, "value": r.value, "status": r.status} for r in records
                     if not r.status.startswith("ok")],
        "mean_gap_pct": float(g.mean()) if g.size else math.nan,
        "sd_gap_pct": float(g.std(ddof=1)) if g.size > 1 else 0.0,
    }


# ---------------------------------------------------------------- CSV

def _num(v: float) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else format(float(v), ".10g")


def records_to_csv(records, parameter: str) -> str:
    """Sweep table with a schema line first; rows sorted by (value, seed)."""
    buf = io.StringIO()
    buf.write(f"# schema={SCHEMA_TAG} parameter={parameter}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in sorted(records, key=lambda r: (r.value, r.seed)):
        if not r.status.startswith("ok"):
            continue
        w.writerow([_num(r.value), r.seed, _num(r.ts_value), _num(r.ms_value), _num(r.gap_pct),
                    _num(r.central_share)])
    return buf.getvalue()


def read_sweep_csv(path) -> tuple[dict, list[dict]]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ValueError("missing schema line")
    meta = dict(kv.split("=", 1) for kv in lines[0][2:].split())
    if meta.get("schema") != SCHEMA_TAG:
        raise ValueError(f"unsupported schema {meta.get('schema')!r}")
    rows = list(csv.DictReader(lines[1:]))
    return meta, [{k: (int(v) if k == "seed" else float(v)) for k, v in row.items()} for row in rows]


def mean_by_value(records) -> dict[float, float]:
    out: dict[float, list[float]] = {}
    for r in records:
        if r.status.startswith("ok"):
            out.setdefault(r.value, []).append(r.gap_pct)
    return {v: float(np.mean(g)) for v, g in sorted(out.items())}


# ---------------------------------------------------------------- commands

def _out_dir(config: ExperimentConfig) -> Path:
    p = Path(config.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def cmd_generate(config: ExperimentConfig) -> tuple[Path, Path]:
    """Write ``instance-<seed>.json`` and ``tree-<seed>.json``."""
    out = _out_dir(config)
    inst = make_instance(config, config.seed)
    tree = make_tree(config, inst, config.seed)
    ip, tp = out / f"instance-{config.seed}.json", out / f"tree-{config.seed}.json"
    save_instance(inst, ip)
    save_tree(tree, tp)
    return ip, tp


def cmd_solve(config: ExperimentConfig) -> dict:
    """Solve the selected model and reformulation; writes ``solve-<model>-<reform>-<seed>.json``."""
    inst = make_instance(config, config.seed)
    tree = make_tree(config, inst, config.seed)
    system, res = solve_model(config, inst, tree)
    doc = {
        "model": config.model, "reform": config.reform, "form": system.meta["form"], "seed": config.seed,
        "result": res.to_dict(),
        "partial": res.status != "optimal",
        "sizes": size_report(system).to_dict(),
    }
    _write_json(_out_dir(config) / f"solve-{config.model}-{config.reform}-{config.seed}.json", doc)
    return doc


def cmd_gap(config: ExperimentConfig) -> list[GapRecord]:
    """TS vs MS per seed; writes ``gap.json`` with records and the aggregate."""
    records = _run_jobs([(config, s, "", math.nan) for s in config.seeds], config.workers)
    _write_json(_out_dir(config) / "gap.json", {
        "records": [r.to_dict() for r in records], "summary": summarize(records),
    })
    return records


def cmd_sweep(config: ExperimentConfig) -> list[GapRecord]:
    """One row per (value, seed); writes ``sweep-<parameter>.csv``."""
    spec = config.sweep
    if spec is None:
        raise ValueError("cmd_sweep needs a sweep spec")
    jobs = [(sweep_config(config, spec.parameter, v), s, spec.parameter, float(v))
            for v in spec.values for s in spec.seed_list]
    records = _run_jobs(jobs, config.workers)
    (_out_dir(config) / f"sweep-{spec.parameter}.csv").write_text(records_to_csv(records, spec.parameter))
    return records


def full_size_systems(reforms=REFORMS, generator: GeneratorConfig = FULL_GENERATOR, branching: int = 3,
                       seed: int = 0, precision: int = 1000):
    """Scenario-form MS systems at the given dimensions (default 58 nodes, 20 options, 4 years, 81 scenarios)."""
    inst = generate_instance(seed, generator)
    tree = build_tree(GrowthModel(), branching, inst.horizon, inst.base_demand, seed=seed, zones=inst.zones)
    for reform in reforms:
        kw = {"precision": precision} if reform == "r4" else {}
        yield reform, build(inst, "ms", reform, tree=tree, form="scenario", **kw)


def cmd_sizes(config: ExperimentConfig, reforms=REFORMS) -> list[dict]:
    """Variable and constraint counts with the closed-form formulas; writes ``sizes.json``."""
    reports = []
    for reform, system in full_size_systems(reforms, FULL_GENERATOR, config.branching, config.seed,
                                             config.precision):
        rep = size_report(system).to_dict()
        rep["dims"] = system.meta["dims"]
        if reform == "r4":
            rep["expansion_bits"] = system.meta["expansion_bits"]
        reports.append(rep)
    _write_json(_out_dir(config) / "sizes.json", reports)
    return reports

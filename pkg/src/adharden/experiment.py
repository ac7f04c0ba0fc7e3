"""Seed-sweep experiments written as JSON lines.

Output layout: one ``config`` record with the resolved spec, one ``seed``
record per seed (in spec order), then one ``aggregate`` record. Only the
``wall_ms`` fields vary between identical re-runs.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .defender import (
    EdoConfig,
    PlanFitness,
    edo_run,
    exhaustive_defender,
    greedy_defender,
    parse_fitness_mode,
    value_ec_defender,
)
from .dp import DEFAULT_MAX_STATES, StateLimitExceeded, dp_solver
from .graph import load_graph, prune_irrelevant
from .kernel import build_condensed
from .mdp import attacker_mdp
from .montecarlo import DpOptimal, GreedyRollout, simulate
from .synth import Distribution, GenConfig, generate_graph

log = logging.getLogger(__name__)

WORKERS_ENV = "ADHARDEN_WORKERS"
POLICIES = ("edo", "vec", "greedy", "exhaustive")
EDO_PARAMS = ("pop_size", "iterations", "p_crossover", "window")


@dataclass
class ExperimentSpec:
    seeds: list[int]
    budget: int = 5
    policy: str = "edo"
    fitness: str = "dp"
    distribution: str = "independent"
    graph_file: Optional[str] = None
    generator: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    mc_episodes: int = 10_000
    max_states: int = DEFAULT_MAX_STATES
    output: str = "results.jsonl"

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        self.seeds = [int(s) for s in self.seeds]
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; expected one of {', '.join(POLICIES)}")
        if self.budget < 0:
            raise ValueError("budget must be >= 0")
        if self.mc_episodes < 1:
            raise ValueError("mc_episodes must be >= 1")
        parse_fitness_mode(self.fitness)
        self.distribution = Distribution.parse(self.distribution).value
        unknown = set(self.params) - set(EDO_PARAMS)
        if unknown:
            raise ValueError(f"unknown defender params: {sorted(unknown)}")
        if self.graph_file is None:
            # validate eagerly so a bad generator block fails before any seed runs
            self.gen_config(self.seeds[0])

    @classmethod
    def from_dict(cls, d: dict, base_dir: Optional[Path] = None) -> "ExperimentSpec":
        d = dict(d)
        graph = d.pop("graph", None)
        if graph is not None:
            if "file" in graph:
                d["graph_file"] = graph["file"]
            else:
                d["generator"] = graph.get("generator", {})
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown spec fields: {sorted(unknown)}")
        spec = cls(**d)
        if base_dir is not None:
            if spec.graph_file is not None:
                spec.graph_file = str(base_dir / spec.graph_file)
            spec.output = str(base_dir / spec.output)
        return spec

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        path = Path(path)
        with open(path) as fh:
            return cls.from_dict(json.load(fh), path.parent)

    def gen_config(self, seed: int) -> GenConfig:
        return GenConfig(**{**self.generator, "seed": seed, "distribution": self.distribution})

    def to_dict(self) -> dict:
        return asdict(self)


def _load_seed_graph(spec: ExperimentSpec, seed: int):
    if spec.graph_file is None:
        return generate_graph(spec.gen_config(seed))
    if not os.path.exists(spec.graph_file):
        raise FileNotFoundError(f"graph file not found: {spec.graph_file}")
    return load_graph(spec.graph_file)


def run_seed(spec: ExperimentSpec, seed: int) -> dict:
    """Full pipeline for one seed; errors are captured in the record."""
    t0 = time.perf_counter()
    rec = {
        "type": "seed",
        "seed": seed,
        "policy": spec.policy,
        "k": spec.budget,
        "fitness_mode": spec.fitness,
        "best_plan": None,
        "dp_value": None,
        "mc_rate": None,
        "mc_stderr": None,
        "graph": None,
        "error": None,
    }
    try:
        g = _load_seed_graph(spec, seed)
        pruned, _ = prune_irrelevant(g)
        cg = build_condensed(pruned)
        rec["graph"] = {
            "nodes": g.n_nodes,
            "edges": g.n_edges,
            "pruned_nodes": pruned.n_nodes,
            "pruned_edges": pruned.n_edges,
            "nsps": len(cg.nsps),
            "bw_edges": len(cg.bw_set),
        }
        fitness = PlanFitness(cg, spec.fitness, seed, spec.max_states)
        if spec.policy in ("edo", "vec"):
            cfg = EdoConfig(k=spec.budget, seed=seed, fitness=spec.fitness,
                            max_states=spec.max_states, **spec.params)
            run = edo_run if spec.policy == "edo" else value_ec_defender
            plan = run(cg, cfg, fitness).best_plan
        elif spec.policy == "greedy":
            plan = greedy_defender(cg, spec.budget, fitness)
        else:
            plan, _ = exhaustive_defender(cg, spec.budget, fitness)
        rec["best_plan"] = plan.edge_labels(cg)

        mdp = attacker_mdp(cg)
        solver = dp_solver(cg, spec.max_states)
        try:
            rec["dp_value"] = solver.value(mdp.initial_state(plan.blocked_edges(cg)))
            policy = DpOptimal(solver)
        except StateLimitExceeded:
            policy = GreedyRollout(mdp)
        report = simulate(cg, plan, policy, spec.mc_episodes, seed)
        rec["mc_rate"] = report.rate
        rec["mc_stderr"] = report.stderr
    except Exception as exc:  # noqa: BLE001 - recorded per seed, sweep continues
        log.warning("seed %d failed: %s", seed, exc)
        rec["error"] = f"{type(exc).__name__}: {exc}"
    rec["wall_ms"] = round((time.perf_counter() - t0) * 1000.0, 3)
    return rec


def _mean(xs):
    xs = [x for x in xs if x is not None]
    return math.fsum(xs) / len(xs) if xs else None


def aggregate(records: list[dict]) -> dict:
    ok = [r for r in records if r["error"] is None]
    return {
        "type": "aggregate",
        "seeds": len(records),
        "succeeded": len(ok),
        "failed": len(records) - len(ok),
        "mean_dp_value": _mean(r["dp_value"] for r in ok),
        "mean_mc_rate": _mean(r["mc_rate"] for r in ok),
        "wall_ms": round(math.fsum(r["wall_ms"] for r in records), 3),
    }


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def run_experiment(spec: ExperimentSpec, output: Optional[str] = None,
                   workers: Optional[int] = None) -> list[dict]:
    """Run every seed, write the JSON-lines file and return all records."""
    out = Path(output or spec.output)
    workers = worker_count() if workers is None else max(1, workers)
    if workers == 1 or len(spec.seeds) == 1:
        results = [run_seed(spec, s) for s in spec.seeds]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(spec.seeds))) as pool:
            results = list(pool.map(run_seed, [spec] * len(spec.seeds), spec.seeds))
    header = {"type": "config", "version": __version__, "spec": spec.to_dict(),
              "workers_env": WORKERS_ENV}
    records = [header, *results, aggregate(results)]
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    return records


def strip_timing(line: str) -> dict:
    """Parse one output line and drop its timing fields."""
    rec = json.loads(line)
    rec.pop("wall_ms", None)
    return rec

"""Procedural AD-like attack graphs and the probability/blockability schemes.

Topology: a random in-tree over a small "privileged core" that drains to DA,
a periphery hung off it with edges pointing away from the core (so it never
reaches DA), and random feedback edges until ``m ~= edge_ratio * n``.
Feedback edges never run from the periphery into the core, which keeps the
DA-reachable fraction close to ``core_fraction`` (105/1493 in the R500
graph).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from enum import Enum
from typing import Optional

import numpy as np

from .graph import AttackGraph, EdgeAttr

COV_SCALE = 0.05 ** 2


class Distribution(str, Enum):
    INDEPENDENT = "independent"
    POSITIVE = "positive"
    NEGATIVE = "negative"

    @classmethod
    def parse(cls, value) -> "Distribution":
        if isinstance(value, Distribution):
            return value
        aliases = {"i": "independent", "p": "positive", "n": "negative",
                   "positivecorr": "positive", "negativecorr": "negative"}
        key = str(value).strip().lower()
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class GenConfig:
    n_computers: int = 500
    seed: int = 0
    distribution: Distribution = Distribution.INDEPENDENT
    n_entry_candidates: int = 40
    n_entries: int = 20
    # explicit node count; defaults to 3 nodes per computer (R500: 1493 nodes)
    n_nodes: Optional[int] = None
    core_fraction: float = 105 / 1493
    edge_ratio: float = 3456 / 1493

    def __post_init__(self):
        object.__setattr__(self, "distribution", Distribution.parse(self.distribution))
        if self.n_computers < 1:
            raise ValueError("n_computers must be positive")
        if self.node_count < 10:
            raise ValueError("graph needs at least 10 nodes")
        if not 1 <= self.n_entries <= self.n_entry_candidates:
            raise ValueError("need 1 <= n_entries <= n_entry_candidates")
        if self.n_entry_candidates >= self.node_count:
            raise ValueError("n_entry_candidates exceeds node count")
        if not 0 < self.core_fraction <= 1:
            raise ValueError("core_fraction must be in (0, 1]")
        if self.edge_ratio < 1:
            raise ValueError("edge_ratio must be >= 1")

    @property
    def node_count(self) -> int:
        return self.n_nodes if self.n_nodes is not None else 3 * self.n_computers

    def to_dict(self) -> dict:
        d = asdict(self)
        d["distribution"] = self.distribution.value
        return d


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def _names(n: int) -> list[str]:
    return ["DA"] + [f"n{i}" for i in range(1, n)]


def generate_topology(cfg: GenConfig, seed=None) -> AttackGraph:
    """Unattributed topology; node 0 is DA and no entries are set."""
    rng = _rng(cfg.seed if seed is None else seed)
    n = cfg.node_count
    core = min(n, max(cfg.n_entry_candidates + 1, round(cfg.core_fraction * n)))
    edges: set[tuple[int, int]] = set()
    for i in range(1, core):
        edges.add((i, int(rng.integers(0, i))))
    for i in range(core, n):
        edges.add((int(rng.integers(1, i)), i))
    target_m = max(n, round(cfg.edge_ratio * n))
    # bounded: the admissible pair space is far larger than target_m for n >= 10
    attempts = 0
    while len(edges) < target_m and attempts < 50 * target_m:
        attempts += 1
        u = int(rng.integers(1, n))
        v = int(rng.integers(0, n))
        if u == v or (u >= core and v < core) or (u, v) in edges:
            continue
        edges.add((u, v))
    zero = EdgeAttr()
    return AttackGraph(_names(n), {e: zero for e in edges}, (), 0)


def select_entries(g: AttackGraph, cfg: GenConfig, seed=None) -> AttackGraph:
    """Sample entries among the ``n_entry_candidates`` nodes farthest from DA."""
    rng = _rng(cfg.seed if seed is None else seed)
    dist = g.hops_to_da()
    cands = [u for u in g.nodes if u != g.da and dist[u] != math.inf]
    if len(cands) < cfg.n_entry_candidates:
        raise ValueError(
            f"insufficient candidate nodes: {len(cands)} reach DA, "
            f"{cfg.n_entry_candidates} required"
        )
    cands.sort(key=lambda u: (-dist[u], u))
    top = cands[: cfg.n_entry_candidates]
    picked = rng.choice(len(top), size=cfg.n_entries, replace=False)
    return g.replace(entries=[top[int(i)] for i in picked])


def _sample_pairs(rng: np.random.Generator, distribution: Distribution, m: int) -> np.ndarray:
    if distribution is Distribution.INDEPENDENT:
        return rng.uniform(0.0, 0.2, size=(m, 2))
    rho = 0.5 if distribution is Distribution.POSITIVE else -0.5
    mean = [0.1, 0.1]
    cov = [[COV_SCALE, rho * COV_SCALE], [rho * COV_SCALE, COV_SCALE]]
    out = np.empty((0, 2))
    while len(out) < m:
        draw = rng.multivariate_normal(mean, cov, size=max(16, m - len(out) + 8))
        ok = (draw >= 0).all(axis=1) & (draw <= 1).all(axis=1) & (draw.sum(axis=1) <= 1)
        out = np.vstack([out, draw[ok]])
    return out[:m]


def assign_probabilities(g: AttackGraph, distribution, seed) -> AttackGraph:
    """Draw ``(p_detect, p_fail)`` per edge; correlated cases use rejection sampling."""
    rng = _rng(seed)
    distribution = Distribution.parse(distribution)
    pairs = _sample_pairs(rng, distribution, g.n_edges)
    edges = {
        e: EdgeAttr(float(pairs[i, 0]), float(pairs[i, 1]), a.blockable)
        for i, (e, a) in enumerate(g.edges.items())
    }
    return g.replace(edges=edges)


def blockability(g: AttackGraph) -> dict[tuple[int, int], float]:
    """Probability that each edge is blockable: hop distance over max hop distance.

    The hop distance of edge ``(i, j)`` is ``d(j, DA) + 1``. Edges whose head
    cannot reach DA get probability 0.
    """
    dist = g.hops_to_da()
    hops = {(u, v): dist[v] + 1 for (u, v) in g.edge_list}
    finite = [h for h in hops.values() if h != math.inf]
    if not finite:
        return {e: 0.0 for e in hops}
    top = max(finite)
    return {e: (h / top if h != math.inf else 0.0) for e, h in hops.items()}


def assign_blockable(g: AttackGraph, seed) -> AttackGraph:
    rng = _rng(seed)
    probs = blockability(g)
    draws = rng.random(g.n_edges)
    edges = {
        e: EdgeAttr(a.p_detect, a.p_fail, bool(draws[i] < probs[e]))
        for i, (e, a) in enumerate(g.edges.items())
    }
    return g.replace(edges=edges)


def generate_graph(cfg: GenConfig) -> AttackGraph:
    """Full pipeline: topology, entries, probabilities, blockability."""
    s_topo, s_entry, s_prob, s_block = np.random.SeedSequence(cfg.seed).spawn(4)
    g = generate_topology(cfg, s_topo)
    g = select_entries(g, cfg, s_entry)
    g = assign_probabilities(g, cfg.distribution, s_prob)
    return assign_blockable(g, s_block)

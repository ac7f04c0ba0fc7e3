"""Defender policies over fixed-budget blocking plans.

A plan is a 0/1 vector over the block-worthy edge set with exactly ``k``
ones. The evolutionary defenders keep a steady-state population: one
offspring per iteration from a swap mutation or a swap crossover, accepted
when its fitness (attacker success probability, lower is better) lies within
``window`` of the population best. EDO evicts the member whose removal leaves
the most even block counts across edges; VEC evicts the worst member.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dp import DEFAULT_MAX_STATES, StateLimitExceeded, dp_solver
from .kernel import CondensedGraph
from .mdp import attacker_mdp
from .montecarlo import estimate_fitness

log = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 1_000_000
TIE_TOL = 1e-12


class BudgetError(ValueError):
    pass


@dataclass(frozen=True)
class BlockingPlan:
    bits: tuple[int, ...]

    @classmethod
    def from_indices(cls, n: int, indices) -> "BlockingPlan":
        bits = [0] * n
        for i in indices:
            bits[int(i)] = 1
        return cls(tuple(bits))

    @classmethod
    def from_edges(cls, cg: CondensedGraph, edges) -> "BlockingPlan":
        pos = {e: i for i, e in enumerate(cg.bw_set)}
        try:
            return cls.from_indices(len(cg.bw_set), (pos[e] for e in edges))
        except KeyError as exc:
            raise ValueError(f"edge {exc.args[0]} is not block-worthy") from None

    @property
    def k(self) -> int:
        return sum(self.bits)

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.bits) if b)

    def blocked_edges(self, cg: CondensedGraph) -> tuple[int, ...]:
        return tuple(cg.bw_set[i] for i in self.indices)

    def edge_labels(self, cg: CondensedGraph) -> list[str]:
        return [cg.base.edge_label(e) for e in self.blocked_edges(cg)]

    def __str__(self):
        return "<" + ",".join(map(str, self.bits)) + ">"


# -- fitness -------------------------------------------------------------------

def parse_fitness_mode(mode: str) -> tuple[str, int]:
    """``"dp"`` -> ("dp", 0); ``"mc:5000"`` -> ("mc", 5000)."""
    mode = mode.strip().lower()
    if mode == "dp":
        return "dp", 0
    if mode.startswith("mc:"):
        n = int(mode[3:])
        if n < 1:
            raise ValueError("mc episodes must be >= 1")
        return "mc", n
    raise ValueError(f"unknown fitness mode {mode!r}; expected 'dp' or 'mc:<episodes>'")


class PlanFitness:
    """Attacker success probability of a plan, cached per plan.

    ``dp`` mode solves exactly and falls back to simulation when the DP
    exceeds ``max_states``. Simulation seeds derive from ``(seed, plan)`` so
    every plan's estimate is reproducible.
    """

    def __init__(self, cg: CondensedGraph, mode: str = "dp", seed: int = 0,
                 max_states: int = DEFAULT_MAX_STATES, fallback_episodes: int = 10_000):
        self.cg = cg
        self.mode, self.episodes = parse_fitness_mode(mode)
        self.seed = seed
        self.max_states = max_states
        self.fallback_episodes = fallback_episodes
        self.cache: dict[tuple[int, ...], float] = {}
        self.fallbacks = 0

    def plan_seed(self, plan: BlockingPlan) -> int:
        ss = np.random.SeedSequence([self.seed, len(plan.bits), *plan.indices])
        return int(ss.generate_state(1)[0])

    def __call__(self, plan: BlockingPlan) -> float:
        hit = self.cache.get(plan.bits)
        if hit is not None:
            return hit
        if self.mode == "dp":
            mdp = attacker_mdp(self.cg)
            try:
                v = dp_solver(self.cg, self.max_states).value(
                    mdp.initial_state(plan.blocked_edges(self.cg))
                )
            except StateLimitExceeded as exc:
                self.fallbacks += 1
                log.warning("fitness fallback to Monte Carlo for plan %s: %s", plan, exc)
                v = estimate_fitness(self.cg, plan, self.fallback_episodes,
                                     self.plan_seed(plan), self.max_states)
        else:
            v = estimate_fitness(self.cg, plan, self.episodes, self.plan_seed(plan), self.max_states)
        self.cache[plan.bits] = v
        return v


# -- operators ---------------------------------------------------------------

def mutate(plan: BlockingPlan, x: int, rng: np.random.Generator) -> BlockingPlan:
    """Swap ``x`` blocked edges for ``x`` unblocked ones (fewer if not available)."""
    rng = np.random.default_rng(rng)
    ones = [i for i, b in enumerate(plan.bits) if b]
    zeros = [i for i, b in enumerate(plan.bits) if not b]
    n = min(x, len(ones), len(zeros))
    if n <= 0:
        return plan
    bits = list(plan.bits)
    for i in rng.choice(ones, size=n, replace=False):
        bits[int(i)] = 0
    for i in rng.choice(zeros, size=n, replace=False):
        bits[int(i)] = 1
    return BlockingPlan(tuple(bits))


def crossover(p1: BlockingPlan, p2: BlockingPlan, x: int,
              rng: np.random.Generator) -> tuple[BlockingPlan, BlockingPlan]:
    """Exchange up to ``x`` differing coordinates in each direction.

    First where ``p1`` is 0 and ``p2`` is 1, then where ``p1`` is 1 and ``p2``
    is 0 (excluding coordinates just swapped). Both passes swap the same
    number of coordinates so both children keep their budget.
    """
    rng = np.random.default_rng(rng)
    a, b = list(p1.bits), list(p2.bits)
    up = [i for i in range(len(a)) if a[i] == 0 and b[i] == 1]
    down = [i for i in range(len(a)) if a[i] == 1 and b[i] == 0]
    n = min(x, len(up), len(down))
    if n <= 0:
        return p1, p2
    for i in rng.choice(up, size=n, replace=False):
        a[int(i)], b[int(i)] = 1, 0
    for i in rng.choice(down, size=n, replace=False):
        a[int(i)], b[int(i)] = 0, 1
    return BlockingPlan(tuple(a)), BlockingPlan(tuple(b))


# -- population ---------------------------------------------------------------

class Population:
    def __init__(self, n_bw: int, capacity: int):
        self.capacity = capacity
        self.plans: list[BlockingPlan] = []
        self.fitness: list[float] = []
        self.counts = np.zeros(n_bw, dtype=np.int64)

    def __len__(self):
        return len(self.plans)

    def add(self, plan: BlockingPlan, fit: float) -> None:
        self.plans.append(plan)
        self.fitness.append(fit)
        self.counts += np.asarray(plan.bits, dtype=np.int64)

    def remove(self, idx: int) -> tuple[BlockingPlan, float]:
        plan = self.plans.pop(idx)
        fit = self.fitness.pop(idx)
        self.counts -= np.asarray(plan.bits, dtype=np.int64)
        return plan, fit

    def best_index(self) -> int:
        return int(np.argmin(self.fitness))

    def worst_index(self) -> int:
        return int(np.argmax(self.fitness))

    @property
    def best_fitness(self) -> float:
        return min(self.fitness)


def sorted_diversity_without(pop: Population, idx: int) -> np.ndarray:
    """Block counts of the population without member ``idx``, sorted descending."""
    rest = pop.counts - np.asarray(pop.plans[idx].bits, dtype=np.int64)
    return np.sort(rest)[::-1]


def least_diverse_index(pop: Population) -> int:
    """Member whose removal gives the lexicographically smallest sorted counts."""
    best, best_vec = 0, None
    for j in range(len(pop)):
        vec = tuple(sorted_diversity_without(pop, j).tolist())
        if best_vec is None or vec < best_vec:
            best, best_vec = j, vec
    return best


# -- evolutionary defenders --------------------------------------------------

@dataclass
class EdoConfig:
    pop_size: int = 100
    iterations: int = 10_000
    k: int = 5
    p_crossover: float = 0.5
    window: float = 0.1
    seed: int = 0
    fitness: str = "dp"
    max_states: int = DEFAULT_MAX_STATES

    def __post_init__(self):
        if self.pop_size < 2:
            raise ValueError("pop_size must be >= 2")
        if self.window <= 0:
            raise ValueError("window must be > 0")
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        parse_fitness_mode(self.fitness)


@dataclass
class EdoResult:
    best_plan: BlockingPlan
    best_fitness: float
    population: Population
    history: list[dict] = field(default_factory=list)


def _draw_x(rng: np.random.Generator) -> int:
    return max(1, int(rng.poisson(1.0)))


def edo_step(pop: Population, cfg: EdoConfig, rng: np.random.Generator,
             fitness: Callable[[BlockingPlan], float], mode: str = "edo") -> dict:
    """One steady-state iteration; mutates ``pop`` in place.

    Returns ``(record, offspring)``.

    ``mode="edo"`` applies the acceptance window and diversity eviction;
    ``mode="vec"`` accepts every offspring and evicts the worst member.
    """
    x = _draw_x(rng)
    if rng.random() < cfg.p_crossover and len(pop) >= 2:
        op = "crossover"
        i, j = rng.choice(len(pop), size=2, replace=False)
        child, _ = crossover(pop.plans[int(i)], pop.plans[int(j)], x, rng)
    else:
        op = "mutation"
        i = rng.integers(len(pop))
        child = mutate(pop.plans[int(i)], x, rng)
    f = fitness(child)
    opt = pop.best_fitness
    if mode == "edo":
        accepted = opt - cfg.window <= f <= opt + cfg.window
    elif mode == "vec":
        accepted = True
    else:
        raise ValueError(f"unknown mode {mode!r}")
    rec = {"op": op, "x": x, "fitness": f, "opt": opt, "accepted": accepted,
           "evicted": None, "eviction": None}
    if accepted:
        new_best = f < opt
        pop.add(child, f)
        if len(pop) > pop.capacity:
            if mode == "vec" or new_best:
                idx, why = pop.worst_index(), "worst"
            else:
                idx, why = least_diverse_index(pop), "diversity"
            rec["evicted"], rec["eviction"] = idx, why
            pop.remove(idx)
    rec["best"] = pop.best_fitness
    return rec, child


def _evolve(cg: CondensedGraph, cfg: EdoConfig, fitness, mode: str) -> EdoResult:
    n = len(cg.bw_set)
    if n < cfg.k:
        raise BudgetError(f"budget exceeds blockable set: k={cfg.k}, |bw|={n}")
    if fitness is None:
        fitness = PlanFitness(cg, cfg.fitness, cfg.seed, cfg.max_states)
    rng = np.random.default_rng(cfg.seed)
    pop = Population(n, cfg.pop_size)
    if cfg.k in (0, n):
        plan = BlockingPlan.from_indices(n, range(cfg.k))
        f = fitness(plan)
        pop.add(plan, f)
        return EdoResult(plan, f, pop, [])
    for _ in range(cfg.pop_size):
        plan = BlockingPlan.from_indices(n, rng.choice(n, size=cfg.k, replace=False))
        pop.add(plan, fitness(plan))
    bi = pop.best_index()
    best_plan, best_f = pop.plans[bi], pop.fitness[bi]
    history = []
    for it in range(cfg.iterations):
        rec, child = edo_step(pop, cfg, rng, fitness, mode)
        if rec["fitness"] < best_f:
            best_plan, best_f = child, rec["fitness"]
        rec["iteration"] = it
        rec["plan"] = str(child)
        history.append(rec)
    return EdoResult(best_plan, best_f, pop, history)


def edo_run(cg: CondensedGraph, cfg: EdoConfig, fitness=None) -> EdoResult:
    """Evolutionary diversity optimisation; returns the best plan ever evaluated."""
    return _evolve(cg, cfg, fitness, "edo")


def value_ec_defender(cg: CondensedGraph, cfg: EdoConfig, fitness=None) -> EdoResult:
    """Same operators and seeds as :func:`edo_run`, worst-fitness eviction only."""
    return _evolve(cg, cfg, fitness, "vec")


# -- baselines -------------------------------------------------------------------

def greedy_defender(cg: CondensedGraph, k: int, fitness=None) -> BlockingPlan:
    """Block, ``k`` times, the single extra edge that most lowers attacker value."""
    n = len(cg.bw_set)
    if n < k:
        raise BudgetError(f"budget exceeds blockable set: k={k}, |bw|={n}")
    fitness = fitness or PlanFitness(cg)
    chosen: list[int] = []
    for _ in range(k):
        best, best_v = None, math.inf
        for i in range(n):
            if i in chosen:
                continue
            v = fitness(BlockingPlan.from_indices(n, chosen + [i]))
            if v < best_v - TIE_TOL:
                best, best_v = i, v
        chosen.append(best)
    return BlockingPlan.from_indices(n, chosen)


def exhaustive_defender(cg: CondensedGraph, k: int, fitness=None,
                        limit: int = EXHAUSTIVE_LIMIT) -> tuple[BlockingPlan, float]:
    """Best of all ``C(|bw|, k)`` plans; ties go to the smallest bit vector."""
    n = len(cg.bw_set)
    if n < k:
        raise BudgetError(f"budget exceeds blockable set: k={k}, |bw|={n}")
    total = math.comb(n, k)
    if total > limit:
        raise BudgetError(f"exhaustive search guard: C({n}, {k}) = {total} plans exceeds {limit}")
    fitness = fitness or PlanFitness(cg)
    best, best_v = None, math.inf
    for combo in itertools.combinations(range(n), k):
        plan = BlockingPlan.from_indices(n, combo)
        v = fitness(plan)
        if v < best_v - TIE_TOL or (v <= best_v + TIE_TOL and plan.bits < best.bits):
            best, best_v = plan, min(v, best_v)
    return best, fitness(best)

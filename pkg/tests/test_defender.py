import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adharden.defender import (
    BlockingPlan,
    BudgetError,
    EdoConfig,
    PlanFitness,
    Population,
    crossover,
    edo_run,
    edo_step,
    exhaustive_defender,
    greedy_defender,
    least_diverse_index,
    mutate,
    parse_fitness_mode,
    sorted_diversity_without,
    value_ec_defender,
)
from adharden.dp import solve
from adharden.graph import prune_irrelevant
from adharden.kernel import build_condensed
from adharden.mdp import AttackerState, attacker_mdp

from instances import split_example, random_condensed, random_graph


def plan(s):
    return BlockingPlan(tuple(int(c) for c in s))


def random_plan(rng, n, k):
    return BlockingPlan.from_indices(n, rng.choice(n, size=k, replace=False))


plans = st.integers(2, 12).flatmap(
    lambda n: st.integers(0, n).flatmap(
        lambda k: st.tuples(st.just(n), st.just(k), st.integers(0, 2**32 - 1))
    )
)


# -- operators ---------------------------------------------------------------

def test_mutate_example_keeps_three_ones():
    p = plan("10001001")
    for seed in range(20):
        c = mutate(p, 2, np.random.default_rng(seed))
        assert c.k == 3
        assert sum(a != b for a, b in zip(p.bits, c.bits)) == 4


def test_mutate_full_budget_or_empty_unchanged():
    assert mutate(plan("1111"), 2, 0) == plan("1111")
    assert mutate(plan("0000"), 1, 0) == plan("0000")


@settings(max_examples=100, deadline=None)
@given(plans, st.integers(1, 15))
def test_mutate_preserves_budget(nks, x):
    n, k, seed = nks
    rng = np.random.default_rng(seed)
    assert mutate(random_plan(rng, n, k), x, rng).k == k


def test_crossover_equal_parents():
    p = plan("1010")
    assert crossover(p, p, 2, 0) == (p, p)


def test_crossover_disjoint_four_bit():
    p1, p2 = plan("1100"), plan("0011")
    for seed in range(10):
        c1, c2 = crossover(p1, p2, 1, np.random.default_rng(seed))
        assert c1.k == 2 and c2.k == 2
        assert sum(a != b for a, b in zip(p1.bits, c1.bits)) == 2
        assert sum(a != b for a, b in zip(p2.bits, c2.bits)) == 2


@settings(max_examples=100, deadline=None)
@given(plans, st.integers(1, 15))
def test_crossover_preserves_budget(nks, x):
    n, k, seed = nks
    rng = np.random.default_rng(seed)
    p1, p2 = random_plan(rng, n, k), random_plan(rng, n, k)
    c1, c2 = crossover(p1, p2, x, rng)
    assert c1.k == k and c2.k == k
    # children only recombine the parents' coordinates
    for a, b, u, v in zip(p1.bits, p2.bits, c1.bits, c2.bits):
        assert sorted((a, b)) == sorted((u, v))


# -- diversity -------------------------------------------------------------------

def _pop(bit_strings, fits=None):
    n = len(bit_strings[0])
    pop = Population(n, len(bit_strings))
    for i, s in enumerate(bit_strings):
        pop.add(plan(s), fits[i] if fits else 0.5)
    return pop


def test_sorted_diversity_single_member():
    pop = _pop(["0110"])
    assert sorted_diversity_without(pop, 0).tolist() == [0, 0, 0, 0]


def test_sorted_diversity_disjoint_singletons():
    pop = _pop(["10000", "01000", "00100"])
    for j in range(3):
        assert sorted_diversity_without(pop, j).tolist() == [1, 1, 0, 0, 0]


def brute_force_eviction(plans_):
    """Recompute block counts from scratch for every candidate removal."""
    best = None
    for j in range(len(plans_)):
        counts = [0] * len(plans_[0].bits)
        for i, p in enumerate(plans_):
            if i != j:
                for e, b in enumerate(p.bits):
                    counts[e] += b
        key = sorted(counts, reverse=True)
        if best is None or key < best[0]:
            best = (key, j)
    return best[1]


@settings(max_examples=100, deadline=None)
@given(plans, st.integers(2, 8))
def test_eviction_matches_brute_force(nks, size):
    n, k, seed = nks
    rng = np.random.default_rng(seed)
    members = [random_plan(rng, n, k) for _ in range(size)]
    pop = Population(n, size)
    for p in members:
        pop.add(p, 0.0)
    assert least_diverse_index(pop) == brute_force_eviction(members)
    assert pop.counts.sum() == k * size


# -- edo_step ------------------------------------------------------------------

class TableFitness:
    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, p):
        self.calls += 1
        return self.fn(p)


def test_offspring_outside_window_rejected():
    pop = _pop(["1100", "0110", "0011"], [0.5, 0.5, 0.5])
    before = (list(pop.plans), list(pop.fitness))
    cfg = EdoConfig(pop_size=3, k=2, iterations=1)
    rec, _ = edo_step(pop, cfg, np.random.default_rng(0), TableFitness(lambda p: 0.9))
    assert not rec["accepted"] and rec["evicted"] is None
    assert (pop.plans, pop.fitness) == before


def test_new_best_evicts_worst():
    pop = _pop(["1100", "0110", "0011"], [0.30, 0.35, 0.32])
    cfg = EdoConfig(pop_size=3, k=2, iterations=1)
    rec, child = edo_step(pop, cfg, np.random.default_rng(1), TableFitness(lambda p: 0.25))
    assert rec["accepted"] and rec["eviction"] == "worst"
    assert 0.35 not in pop.fitness and 0.25 in pop.fitness


def test_near_best_evicts_least_diverse():
    pop = _pop(["1100", "1100", "0011"], [0.30, 0.31, 0.32])
    cfg = EdoConfig(pop_size=3, k=2, iterations=1)
    snapshot = list(pop.plans)
    rec, child = edo_step(pop, cfg, np.random.default_rng(2), TableFitness(lambda p: 0.33))
    assert rec["accepted"] and rec["eviction"] == "diversity"
    assert rec["evicted"] == brute_force_eviction(snapshot + [child])


def _tiny_instance():
    rng = np.random.default_rng(2024)
    while True:
        cg = random_condensed(rng, max_nsps=16, min_nsps=8, n_lo=9, n_hi=11, density=0.3)
        if len(cg.bw_set) == 8:
            return cg


@pytest.fixture(scope="module")
def tiny():
    cg = _tiny_instance()
    return cg, PlanFitness(cg)


def test_edo_invariants_each_step(tiny):
    cg, fit = tiny
    n = len(cg.bw_set)
    cfg = EdoConfig(pop_size=6, iterations=0, k=3, seed=0)
    rng = np.random.default_rng(0)
    pop = Population(n, cfg.pop_size)
    for _ in range(cfg.pop_size):
        p = random_plan(rng, n, cfg.k)
        pop.add(p, fit(p))
    for _ in range(300):
        snapshot = list(pop.plans)
        opt = pop.best_fitness
        rec, child = edo_step(pop, cfg, rng, fit)
        assert child.k == cfg.k
        assert all(p.k == cfg.k for p in pop.plans)
        assert len(pop) <= cfg.pop_size
        assert pop.counts.sum() == cfg.k * len(pop)
        assert pop.counts.tolist() == np.sum([p.bits for p in pop.plans], axis=0).tolist()
        if rec["accepted"]:
            assert rec["fitness"] <= opt + cfg.window
        if rec["eviction"] == "diversity":
            assert rec["evicted"] == brute_force_eviction(snapshot + [child])


def test_vec_max_fitness_non_increasing(tiny):
    cg, fit = tiny
    n = len(cg.bw_set)
    cfg = EdoConfig(pop_size=6, k=3, seed=1)
    rng = np.random.default_rng(1)
    pop = Population(n, cfg.pop_size)
    for _ in range(cfg.pop_size):
        p = random_plan(rng, n, cfg.k)
        pop.add(p, fit(p))
    worst = max(pop.fitness)
    for _ in range(200):
        edo_step(pop, cfg, rng, fit, mode="vec")
        assert max(pop.fitness) <= worst
        worst = max(pop.fitness)


def test_edo_history_and_best(tiny):
    cg, fit = tiny
    res = edo_run(cg, EdoConfig(pop_size=5, iterations=40, k=3, seed=3), fit)
    assert len(res.history) == 40
    assert res.best_plan.k == 3
    assert res.best_fitness == fit(res.best_plan)
    seen = [r["fitness"] for r in res.history] + list(res.population.fitness)
    assert res.best_fitness <= min(seen)


def test_edo_is_reproducible(tiny):
    cg, fit = tiny
    cfg = EdoConfig(pop_size=5, iterations=50, k=3, seed=9)
    a = edo_run(cg, cfg, fit)
    b = edo_run(cg, cfg, PlanFitness(cg))
    assert a.history == b.history and a.best_plan == b.best_plan


def test_edo_and_vec_share_offspring_stream(tiny):
    # same seed and operators; the first offspring is drawn before any eviction
    cg, fit = tiny
    cfg = EdoConfig(pop_size=5, iterations=1, k=3, seed=4)
    a = edo_run(cg, cfg, fit).history[0]
    b = value_ec_defender(cg, cfg, fit).history[0]
    assert (a["op"], a["x"], a["plan"]) == (b["op"], b["x"], b["plan"])


def test_budget_exceeds_blockable():
    cg = split_example()
    with pytest.raises(BudgetError, match="budget exceeds blockable set"):
        edo_run(cg, EdoConfig(k=3, pop_size=4, iterations=1))
    with pytest.raises(BudgetError):
        greedy_defender(cg, 3)
    with pytest.raises(BudgetError):
        exhaustive_defender(cg, 3)


def test_full_budget_single_plan():
    cg = split_example()
    res = edo_run(cg, EdoConfig(k=2, pop_size=4, iterations=100))
    assert res.best_plan.bits == (1, 1) and res.history == []


@pytest.mark.parametrize("kwargs", [dict(pop_size=1), dict(window=0.0), dict(fitness="mc:0"), dict(fitness="nn")])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        EdoConfig(**kwargs)


def test_tiny_instance_edo_close_to_exhaustive(tiny):
    cg, fit = tiny
    _, best = exhaustive_defender(cg, 3, fit)
    edo_hits = vec_hits = 0
    for seed in range(10):
        cfg = EdoConfig(pop_size=10, iterations=300, k=3, seed=seed)
        edo_hits += edo_run(cg, cfg, fit).best_fitness <= best + 0.01
        vec_hits += value_ec_defender(cg, cfg, fit).best_fitness <= best + 0.05
    assert edo_hits >= 9
    assert vec_hits >= 8


# -- baselines -----------------------------------------------------------------

def test_greedy_k1_equals_exhaustive(tiny):
    cg, fit = tiny
    g = greedy_defender(cg, 1, fit)
    e, v = exhaustive_defender(cg, 1, fit)
    assert g == e and fit(g) == v


def test_split_example_greedy_pick():
    cg = split_example()
    mdp = attacker_mdp(cg)
    vals = [solve(cg, mdp.initial_state([e]))[0] for e in cg.bw_set]
    expected = int(np.argmin(vals)) if abs(vals[0] - vals[1]) > 1e-12 else 0
    assert greedy_defender(cg, 1).indices == (expected,)


def test_exhaustive_k0_is_undefended_value():
    cg = split_example()
    p, v = exhaustive_defender(cg, 0)
    assert p.k == 0
    assert v == solve(cg, AttackerState())[0]


def test_exhaustive_single_plan_and_guard():
    cg = split_example()
    p, _ = exhaustive_defender(cg, 2)
    assert p.bits == (1, 1)
    with pytest.raises(BudgetError, match="exceeds"):
        exhaustive_defender(cg, 1, limit=1)


def test_exhaustive_tie_break_smallest_bits():
    cg = split_example()
    const = lambda p: 0.5
    p, _ = exhaustive_defender(cg, 1, const)
    assert p.bits == (0, 1)


def test_exhaustive_lower_bounds_heuristics():
    rng = np.random.default_rng(17)
    done = 0
    while done < 6:
        cg = random_condensed(rng, max_nsps=14, min_nsps=5, n_lo=7, n_hi=10, density=0.35)
        n = len(cg.bw_set)
        if n < 3:
            continue
        k = min(2, n - 1)
        fit = PlanFitness(cg)
        _, best = exhaustive_defender(cg, k, fit)
        cfg = EdoConfig(pop_size=4, iterations=30, k=k, seed=done)
        heur = [fit(greedy_defender(cg, k, fit)), edo_run(cg, cfg, fit).best_fitness,
                value_ec_defender(cg, cfg, fit).best_fitness]
        assert all(best <= h + 1e-12 for h in heur)
        done += 1


# -- fitness -----------------------------------------------------------------------

def test_parse_fitness_mode():
    assert parse_fitness_mode("dp") == ("dp", 0)
    assert parse_fitness_mode("MC:500") == ("mc", 500)
    with pytest.raises(ValueError):
        parse_fitness_mode("mc:x")


def test_mc_fitness_reproducible_per_plan():
    cg = split_example()
    p = BlockingPlan.from_indices(2, [0])
    a = PlanFitness(cg, "mc:2000", seed=3)(p)
    b = PlanFitness(cg, "mc:2000", seed=3)(p)
    assert a == b
    v = solve(cg, attacker_mdp(cg).initial_state(p.blocked_edges(cg)))[0]
    assert abs(a - v) <= 4 * math.sqrt(max(v * (1 - v), 1e-12) / 2000) + 1e-9


def test_dp_cap_falls_back_to_mc(caplog):
    cg = split_example()
    fit = PlanFitness(cg, "dp", max_states=1, fallback_episodes=500)
    with caplog.at_level(logging.WARNING, logger="adharden.defender"):
        v = fit(BlockingPlan((0, 0)))
    assert 0.0 <= v <= 1.0 and fit.fallbacks == 1
    assert "fallback to Monte Carlo" in caplog.text


def test_plan_from_edges():
    cg = split_example()
    p = BlockingPlan.from_edges(cg, [cg.bw_set[1]])
    assert p.bits == (0, 1) and p.blocked_edges(cg) == (cg.bw_set[1],)
    assert str(p) == "<0,1>"
    with pytest.raises(ValueError):
        BlockingPlan.from_edges(cg, [0])

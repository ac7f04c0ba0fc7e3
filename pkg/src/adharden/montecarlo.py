"""Monte Carlo evaluation of attacker policies against a blocking plan.

Episodes are simulated in fixed-size chunks; chunk ``c`` draws from its own
stream seeded by ``(seed, c)``, so results do not depend on how chunks are
distributed over workers.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from .dp import DEFAULT_MAX_STATES, DPSolver, StateLimitExceeded, dp_solver
from .kernel import CondensedGraph
from .mdp import AttackerMDP, AttackerState, _blocked_edges, attacker_mdp, single_step_success

CHUNK = 1024


class PolicyError(RuntimeError):
    pass


@dataclass
class SimReport:
    episodes: int
    successes: int
    rate: float
    stderr: float
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


class Policy:
    """Maps a state to an admissible NSP id, or ``None`` to stop."""

    name = "policy"

    def choose(self, s: AttackerState, u: float) -> Optional[int]:
        """``u`` is a uniform draw in [0, 1) reserved for randomized policies."""
        raise NotImplementedError


class DpOptimal(Policy):
    name = "dp"

    def __init__(self, solver: DPSolver):
        self.solver = solver

    def choose(self, s, u):
        return self.solver.best_action(s)


class UniformRandom(Policy):
    name = "random"

    def __init__(self, mdp: AttackerMDP):
        self.mdp = mdp

    def choose(self, s, u):
        acts = self.mdp.admissible_actions(s)
        if not acts:
            return None
        return acts[int(u * len(acts))]


class GreedyRollout(Policy):
    """Attempts the admissible NSP most likely to be completed (lowest id on ties)."""

    name = "greedy"

    def __init__(self, mdp: AttackerMDP):
        self.mdp = mdp

    def choose(self, s, u):
        best, best_p = None, -1.0
        for a in self.mdp.admissible_actions(s):
            p = single_step_success(self.mdp, s, a)
            if p > best_p:
                best, best_p = a, p
        return best


def make_policy(name: str, cg: CondensedGraph, max_states: int = DEFAULT_MAX_STATES) -> Policy:
    mdp = attacker_mdp(cg)
    if name == "dp":
        return DpOptimal(dp_solver(cg, max_states))
    if name == "random":
        return UniformRandom(mdp)
    if name == "greedy":
        return GreedyRollout(mdp)
    raise ValueError(f"unknown policy {name!r}")


def _cumulative(mdp: AttackerMDP, s: AttackerState, a: int, memo: dict):
    key = (s, a)
    hit = memo.get(key)
    if hit is None:
        dist = mdp.transition(s, a)
        cum = [dist.p_detect_total]
        states = [None]
        for nxt, p in dist.outcomes:
            cum.append(cum[-1] + p)
            states.append(nxt)
        hit = memo[key] = (cum, states)
    return hit


def simulate(cg: CondensedGraph, plan, policy: Policy, episodes: int, seed: int = 0) -> SimReport:
    """Roll out ``episodes`` attacks from the plan's initial state."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    mdp = attacker_mdp(cg)
    s0 = mdp.initial_state(_blocked_edges(cg, plan))
    memo: dict = {}
    successes = 0
    steps = mdp.n + 1
    n_chunks = math.ceil(episodes / CHUNK)
    for c in range(n_chunks):
        size = min(CHUNK, episodes - c * CHUNK)
        rng = np.random.default_rng([seed, c])
        draws = rng.random((size, steps, 2))
        for ep in range(size):
            row = draws[ep]
            s = s0
            for t in range(steps):
                if s.succ & mdp.da_mask:
                    successes += 1
                    break
                a = policy.choose(s, row[t, 1])
                if a is None:
                    break
                if not (mdp.admissible_mask(s) >> a & 1):
                    raise PolicyError(
                        f"policy {policy.name!r} chose inadmissible NSP {a} in {mdp.state_str(s)}"
                    )
                cum, states = _cumulative(mdp, s, a, memo)
                k = bisect.bisect_right(cum, row[t, 0])
                if k == 0 or k >= len(states):
                    # detected (or the float remainder past the last outcome)
                    break
                s = states[k]
            else:
                if s.succ & mdp.da_mask:
                    successes += 1
    rate = successes / episodes
    return SimReport(
        episodes=episodes,
        successes=successes,
        rate=rate,
        stderr=math.sqrt(rate * (1 - rate) / episodes),
        seed=seed,
    )


def estimate_fitness(cg: CondensedGraph, plan, episodes: int, seed: int = 0,
                     max_states: int = DEFAULT_MAX_STATES) -> float:
    """Simulated attacker success rate for ``plan``.

    Uses the DP-optimal policy when the DP fits under ``max_states``,
    otherwise the one-step greedy rollout policy (a lower bound).
    """
    mdp = attacker_mdp(cg)
    solver = dp_solver(cg, max_states)
    try:
        solver.value(mdp.initial_state(_blocked_edges(cg, plan)))
        policy: Policy = DpOptimal(solver)
    except StateLimitExceeded:
        policy = GreedyRollout(mdp)
    return simulate(cg, plan, policy, episodes, seed).rate

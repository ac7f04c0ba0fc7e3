"""Exact attacker best response by memoized dynamic programming."""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .graph import AttackGraph, EdgeAttr
from .kernel import CondensedGraph
from .mdp import AttackerMDP, AttackerState, attacker_mdp

DEFAULT_MAX_STATES = 50_000_000
TIE_TOL = 1e-12


class StateLimitExceeded(RuntimeError):
    def __init__(self, cap: int):
        self.cap = cap
        super().__init__(f"state-expansion limit of {cap} states exceeded")


@dataclass
class ValueTable:
    """Memo of a :class:`DPSolver`.

    Entries are keyed by the canonical state key ``(held-node mask, Unknown
    NSP mask)``; ``states`` keeps the first concrete state seen for each key.
    """

    values: dict[tuple[int, int], float] = field(default_factory=dict)
    policy: dict[tuple[int, int], int] = field(default_factory=dict)
    states: dict[tuple[int, int], AttackerState] = field(default_factory=dict)
    states_expanded: int = 0

    @property
    def peak_memo(self) -> int:
        return len(self.values)

    def dump(self, n: int) -> str:
        """One line per non-terminal state: ``<packed code> <state> <action> <value>``."""
        rows = sorted((self.states[k].encode(n), k) for k in self.policy)
        return "".join(
            f"{code} {self.states[k].to_str(n)} {self.policy[k]} {self.values[k]!r}\n"
            for code, k in rows
        )


class DPSolver:
    """Memoized expectimax over attacker states.

    Values do not depend on the blocking plan (a plan only fixes the start
    state), so one solver may be reused across many plans on the same
    condensed graph; the memo then grows across calls.
    """

    def __init__(self, mdp: AttackerMDP, max_states: int = DEFAULT_MAX_STATES):
        self.mdp = mdp
        self.max_states = max_states
        self.table = ValueTable()
        self._stop_at = max_states

    def value(self, s: AttackerState) -> float:
        v = self.table.values.get(self.mdp.key(s))
        if v is not None:
            return v
        need = 4 * self.mdp.n + 100
        if sys.getrecursionlimit() < need:
            sys.setrecursionlimit(need)
        # the cap counts expansions made by this call only
        self._stop_at = self.table.states_expanded + self.max_states
        return self._value(s)

    def _value(self, s: AttackerState) -> float:
        mdp = self.mdp
        key = mdp.key(s)
        values = self.table.values
        v = values.get(key)
        if v is not None:
            return v
        if s.succ & mdp.da_mask:
            values[key] = 1.0
            return 1.0
        mask = key[1] & mdp._out_of(key[0])
        if not mask:
            values[key] = 0.0
            return 0.0
        self.table.states_expanded += 1
        if self.table.states_expanded > self._stop_at:
            raise StateLimitExceeded(self.max_states)
        best, best_a = -1.0, None
        a = 0
        while mask:
            if mask & 1:
                dist = mdp.transition(s, a, check=False)
                q = 0.0
                for nxt, p in dist.outcomes:
                    q += p * self._value(nxt)
                if q > best + TIE_TOL:
                    best, best_a = q, a
            mask >>= 1
            a += 1
        best = min(1.0, max(0.0, best))
        values[key] = best
        self.table.policy[key] = best_a
        self.table.states[key] = s
        return best

    def best_action(self, s: AttackerState) -> Optional[int]:
        """Optimal NSP to attempt from ``s`` (``None`` when ``s`` is terminal)."""
        self.value(s)
        return self.table.policy.get(self.mdp.key(s))


def dp_solver(cg: CondensedGraph, max_states: int = DEFAULT_MAX_STATES,
              bw_only_sharing: bool = False) -> DPSolver:
    """Shared solver cached on ``cg``."""
    key = ("dp", max_states, bw_only_sharing)
    solver = cg._cache.get(key)
    if solver is None:
        solver = cg._cache[key] = DPSolver(attacker_mdp(cg, bw_only_sharing), max_states)
    return solver


def solve(cg: CondensedGraph, s0: AttackerState, max_states: int = DEFAULT_MAX_STATES,
          bw_only_sharing: bool = False) -> tuple[float, ValueTable]:
    """Optimal attacker success probability from ``s0`` with a fresh memo."""
    solver = DPSolver(attacker_mdp(cg, bw_only_sharing), max_states)
    v = solver.value(s0)
    return v, solver.table


# -- independent oracle -------------------------------------------------------

BRUTE_FORCE_MAX_NSPS = 12


def brute_force_value(cg: CondensedGraph, s0: AttackerState, bw_only_sharing: bool = False) -> float:
    """Exhaustive expectimax over the raw game tree (no memo, no state vectors).

    Tracks held nodes, dead edges and closed NSPs directly and re-derives the
    edge walk from the base graph. Only intended for tiny instances.
    """
    nsps = cg.nsps
    if len(nsps) > BRUTE_FORCE_MAX_NSPS:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_MAX_NSPS} NSPs, got {len(nsps)}")
    g = cg.base
    bw_edges = set(cg.bw_set)
    attrs = [g.edge_attr(e) for e in range(g.n_edges)]

    held0 = set(cg.entries)
    closed0 = set()
    for p in nsps:
        st = s0.status(p.id)
        if st == "S":
            held0.add(p.target)
            closed0.add(p.id)
        elif st == "F":
            closed0.add(p.id)

    def rec(held: frozenset, dead: frozenset, closed: frozenset) -> float:
        if cg.da in held:
            return 1.0
        best = 0.0
        for p in nsps:
            if p.id in closed or p.source not in held or p.target in held:
                continue
            if any(e in dead for e in p.edges):
                continue
            total = 0.0
            reach = 1.0
            for e in p.edges:
                a = attrs[e]
                if a.p_fail > 0:
                    local_only = bw_only_sharing and e not in bw_edges
                    total += reach * a.p_fail * rec(
                        held, dead if local_only else dead | {e}, closed | {p.id}
                    )
                reach *= 1.0 - a.p_detect - a.p_fail
            if reach > 0:
                total += reach * rec(held | {p.target}, dead, closed | {p.id})
            best = max(best, total)
        return best

    return rec(frozenset(held0), frozenset(), frozenset(closed0))


# -- up-down gadget ---------------------------------------------------------

def updown_closed_form(p_up: float, p_dn: float, p_detect: float = 0.1) -> float:
    q = 1.0 - p_detect
    return max(q * (p_up + (1 - p_up) * q * p_dn), q * (p_dn + (1 - p_dn) * q * p_up))


def _updown(up_fails, dn_fails, p_detect: float) -> AttackGraph:
    names = ["entry", "1", "2"]
    edges = {(0, 1): EdgeAttr(p_detect, 0.0), (0, 2): EdgeAttr(p_detect, 0.0)}

    def chain(start: int, fails, tag: str):
        prev = start
        for i, pf in enumerate(fails[:-1]):
            names.append(f"{tag}{i + 1}")
            cur = len(names) - 1
            edges[(prev, cur)] = EdgeAttr(0.0, float(pf))
            prev = cur
        return prev, float(fails[-1])

    up_last, up_pf = chain(1, list(up_fails), "u")
    dn_last, dn_pf = chain(2, list(dn_fails), "d")
    names.append("DA")
    da = len(names) - 1
    edges[(up_last, da)] = EdgeAttr(0.0, up_pf)
    edges[(dn_last, da)] = EdgeAttr(0.0, dn_pf)
    return AttackGraph(names, edges, [0], da)


def updown_graph(p_up: float, p_dn: float, p_detect: float = 0.1) -> AttackGraph:
    """Four-node gadget whose up/down branches succeed with ``p_up``/``p_dn``."""
    return _updown([1.0 - p_up], [1.0 - p_dn], p_detect)


def make_updown_gadget(p_up_len: int, p_dn_len: int, seed: int = 0,
                       p_detect: float = 0.1) -> tuple[AttackGraph, float, float]:
    """Random up-down gadget with inner chains of the given lengths.

    Inner edges have ``p_detect = 0`` and random ``p_fail``, so each branch's
    end-to-end success is the product of ``1 - p_fail`` along it. Returns the
    graph with the analytic ``(p_up, p_dn)``.
    """
    if p_up_len < 1 or p_dn_len < 1:
        raise ValueError("chain lengths must be >= 1")
    rng = np.random.default_rng(seed)
    up = rng.uniform(0.0, 0.5, size=p_up_len)
    dn = rng.uniform(0.0, 0.5, size=p_dn_len)
    p_up = float(math.prod(1.0 - float(x) for x in up))
    p_dn = float(math.prod(1.0 - float(x) for x in dn))
    return _updown(up, dn, p_detect), p_up, p_dn

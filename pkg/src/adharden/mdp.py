"""Attacker MDP over NSP-status vectors.

A state assigns every NSP one of Unknown (``?``), Success (``S``) or Fail
(``F``). It is stored as two bitmasks over NSP ids so it hashes cheaply and
can be used directly as a memo key.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

from .kernel import CondensedGraph

UNKNOWN, SUCCESS, FAIL = "?", "S", "F"


class InadmissibleActionError(ValueError):
    pass


class AttackerState(NamedTuple):
    succ: int = 0
    fail: int = 0

    def status(self, i: int) -> str:
        if self.succ >> i & 1:
            return SUCCESS
        if self.fail >> i & 1:
            return FAIL
        return UNKNOWN

    def statuses(self, n: int) -> tuple[str, ...]:
        return tuple(self.status(i) for i in range(n))

    def to_str(self, n: int) -> str:
        return "<" + ",".join(self.statuses(n)) + ">"

    def encode(self, n: int) -> int:
        """Packed 2-bit-per-coordinate code: 0 = ?, 1 = S, 2 = F."""
        code = 0
        for i in range(n):
            code |= (1 if self.succ >> i & 1 else 2 if self.fail >> i & 1 else 0) << (2 * i)
        return code

    @classmethod
    def decode(cls, code: int, n: int) -> "AttackerState":
        succ = fail = 0
        for i in range(n):
            c = code >> (2 * i) & 3
            if c == 1:
                succ |= 1 << i
            elif c == 2:
                fail |= 1 << i
        return cls(succ, fail)

    @classmethod
    def from_statuses(cls, statuses: Iterable[str]) -> "AttackerState":
        succ = fail = 0
        for i, st in enumerate(statuses):
            if st == SUCCESS:
                succ |= 1 << i
            elif st == FAIL:
                fail |= 1 << i
            elif st != UNKNOWN:
                raise ValueError(f"bad status {st!r}")
        return cls(succ, fail)

    @classmethod
    def parse(cls, text: str) -> "AttackerState":
        """Parse ``"<S,?,F>"`` or ``"S?F"``."""
        body = text.strip().lstrip("<").rstrip(">").replace(",", "").replace(" ", "")
        return cls.from_statuses(body)


@dataclass(frozen=True)
class TransitionDistribution:
    outcomes: tuple[tuple[AttackerState, float], ...]
    p_detect_total: float

    def total(self) -> float:
        return sum(p for _, p in self.outcomes) + self.p_detect_total

    def as_dict(self) -> dict[AttackerState, float]:
        return dict(self.outcomes)


def _bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


class AttackerMDP:
    """Transition structure of the attacker's game on a condensed graph.

    ``bw_only_sharing=True`` restricts joint failure to block-worthy edges;
    by default a failure on any physically shared edge fails every NSP that
    contains it.
    """

    def __init__(self, cg: CondensedGraph, bw_only_sharing: bool = False):
        self.cg = cg
        self.bw_only_sharing = bw_only_sharing
        g = cg.base
        self.n = len(cg.nsps)
        self.full = (1 << self.n) - 1
        self.entries = frozenset(cg.entries)
        self.da = cg.da
        self.source = [p.source for p in cg.nsps]
        self.target = [p.target for p in cg.nsps]
        # condensed nodes are addressed by bit position in node masks
        self.cnodes = sorted(cg.condensed_nodes)
        pos = {u: k for k, u in enumerate(self.cnodes)}
        self.tgt_bit = [1 << pos[t] for t in self.target]
        self.src_bit = [1 << pos[u] for u in self.source]
        self.da_bit = 1 << pos[self.da]
        self.entry_bits = sum(1 << pos[u] for u in self.entries)
        self.node_out = [0] * len(self.cnodes)
        self.node_in = [0] * len(self.cnodes)
        for p in cg.nsps:
            self.node_out[pos[p.source]] |= 1 << p.id
            self.node_in[pos[p.target]] |= 1 << p.id
        self.da_mask = self.node_in[pos[self.da]]
        self.sharing = {e: sum(1 << i for i in ids) for e, ids in cg.edge_to_nsps.items()}
        bw_edges = set(cg.bw_set)
        # per NSP: (edge id, p_detect, p_fail, p_success, joint-failure mask)
        self.walk: list[tuple[tuple[int, float, float, float, int], ...]] = []
        # per NSP: every NSP touching one of its edges, and the walk with
        # failures grouped by joint mask: ((mask, prob), ...), p_detect, p_success
        self.touch: list[int] = []
        self.grouped: list[tuple[tuple[tuple[int, float], ...], float, float]] = []
        for p in cg.nsps:
            steps = []
            touch = 0
            groups: dict[int, float] = {}
            prefix, detect = 1.0, 0.0
            for e in p.edges:
                a = g.edge_attr(e)
                if bw_only_sharing and e not in bw_edges:
                    joint = 1 << p.id
                else:
                    joint = self.sharing[e] | 1 << p.id
                touch |= self.sharing[e]
                steps.append((e, a.p_detect, a.p_fail, a.p_success, joint))
                detect += prefix * a.p_detect
                if a.p_fail > 0.0:
                    groups[joint] = groups.get(joint, 0.0) + prefix * a.p_fail
                prefix *= a.p_success
            self.walk.append(tuple(steps))
            self.touch.append(touch & ~(1 << p.id))
            self.grouped.append((tuple(groups.items()), detect, prefix))
        self.bw_nsps = {e: 0 for e in cg.bw_set}
        for p in cg.nsps:
            if p.bw_edge is not None:
                self.bw_nsps[p.bw_edge] |= 1 << p.id
        self._cache: dict[tuple[AttackerState, int], TransitionDistribution] = {}
        self._held_cache: dict[int, int] = {}
        self._out_cache: dict[int, int] = {}
        self._in_cache: dict[int, int] = {}
        self._tgt_cache: dict[int, int] = {}
        self._src_cache: dict[int, int] = {}
        self._prop_cache: dict[AttackerState, AttackerState] = {}

    # -- mask helpers ---------------------------------------------------------
    def _held(self, succ: int) -> int:
        h = self._held_cache.get(succ)
        if h is None:
            h = self.entry_bits
            for i in _bits(succ):
                h |= self.tgt_bit[i]
            self._held_cache[succ] = h
        return h

    def _out_of(self, nodes: int) -> int:
        m = self._out_cache.get(nodes)
        if m is None:
            m = 0
            for k in _bits(nodes):
                m |= self.node_out[k]
            self._out_cache[nodes] = m
        return m

    def _in_of(self, nodes: int) -> int:
        m = self._in_cache.get(nodes)
        if m is None:
            m = 0
            for k in _bits(nodes):
                m |= self.node_in[k]
            self._in_cache[nodes] = m
        return m

    def _sources(self, nsps: int) -> int:
        m = self._src_cache.get(nsps)
        if m is None:
            m = 0
            for i in _bits(nsps):
                m |= self.src_bit[i]
            self._src_cache[nsps] = m
        return m

    def _targets(self, nsps: int) -> int:
        m = self._tgt_cache.get(nsps)
        if m is None:
            m = 0
            for i in _bits(nsps):
                m |= self.tgt_bit[i]
            self._tgt_cache[nsps] = m
        return m

    # -- states -------------------------------------------------------------
    def initial_state(self, blocked: Iterable[int] = ()) -> AttackerState:
        """State induced by blocking the given block-worthy edge ids."""
        fail = 0
        for e in blocked:
            if e not in self.bw_nsps:
                raise ValueError(f"edge {e} is not a block-worthy edge")
            fail |= self.bw_nsps[e]
        return self.propagate(AttackerState(0, fail))

    def held_nodes(self, s: AttackerState) -> set[int]:
        """Checkpoints: entries plus the end node of every successful NSP."""
        return {self.cnodes[k] for k in _bits(self._held(s.succ))}

    def is_success(self, s: AttackerState) -> bool:
        return bool(s.succ & self.da_mask)

    def admissible_mask(self, s: AttackerState) -> int:
        unknown = self.full & ~(s.succ | s.fail)
        if not unknown:
            return 0
        return unknown & self._out_of(self._held(s.succ))

    def admissible_actions(self, s: AttackerState) -> list[int]:
        return list(_bits(self.admissible_mask(s)))

    def propagate(self, s: AttackerState) -> AttackerState:
        """Closure of the status rules; the result is a fixpoint.

        1. Unknown NSPs whose source can no longer be reached through
           non-failed NSPs become Fail (covers "all NSPs into a split node
           failed", including cascades and cycles).
        2. Unknown NSPs ending at an already-held node become Success.
        3. Unknown NSPs whose end node can no longer reach DA through Unknown
           NSPs become Fail; attempting them only risks detection.
        """
        out = self._prop_cache.get(s)
        if out is not None:
            return out
        succ, fail = s
        unknown = self.full & ~(succ | fail)
        if not unknown:
            return s
        held = self._held(succ)
        live = self.full & ~fail
        reach = frontier = held
        while frontier:
            frontier = self._targets(self._out_of(frontier) & live) & ~reach
            reach |= frontier
        dead = unknown & ~self._out_of(reach)
        if dead:
            fail |= dead
            unknown &= ~dead
        into_held = unknown & self._in_of(held)
        succ |= into_held
        unknown &= ~into_held
        if unknown and not (succ & self.da_mask):
            coreach = frontier = self.da_bit
            while frontier:
                frontier = self._sources(self._in_of(frontier) & unknown) & ~coreach
                coreach |= frontier
            useless = unknown & ~self._in_of(coreach)
            fail |= useless
        out = self._prop_cache[s] = AttackerState(succ, fail)
        return out

    def key(self, s: AttackerState) -> tuple[int, int]:
        """Memo key: the future depends only on held nodes and Unknown NSPs."""
        return self._held(s.succ), self.full & ~(s.succ | s.fail)

    # -- transitions ----------------------------------------------------------
    def transition(self, s: AttackerState, action: int, closure: bool = True,
                   check: bool = True) -> TransitionDistribution:
        """Distribution over next states after attempting NSP ``action``.

        With ``closure=False`` only the acting NSP and joint edge failures are
        applied (the raw per-edge walk); otherwise every outcome is propagated
        and identical outcomes merged.
        """
        key = (s, action)
        if closure:
            dist = self._cache.get(key)
            if dist is not None:
                return dist
        if check and not (self.admissible_mask(s) >> action & 1):
            raise InadmissibleActionError(f"NSP {action} is not admissible in {s.to_str(self.n)}")
        succ, fail = s
        bit = 1 << action
        merged: dict[AttackerState, float] = {}
        if self.touch[action] & succ:
            # some edges are already under attacker control: walk them edge by edge
            groups: dict[int, float] = {}
            prefix = 1.0
            detect = 0.0
            for e, pd, pf, ps, joint in self.walk[action]:
                if self.sharing[e] & succ:
                    continue
                detect += prefix * pd
                if pf > 0.0:
                    groups[joint] = groups.get(joint, 0.0) + prefix * pf
                prefix *= ps
            fails = groups.items()
        else:
            fails, detect, prefix = self.grouped[action]
        for joint, p in fails:
            nxt = AttackerState(succ, fail | (joint & ~succ))
            if closure:
                nxt = self.propagate(nxt)
            merged[nxt] = merged.get(nxt, 0.0) + p
        if prefix > 0.0:
            nxt = AttackerState(succ | bit, fail)
            if closure:
                nxt = self.propagate(nxt)
            merged[nxt] = merged.get(nxt, 0.0) + prefix
        dist = TransitionDistribution(tuple(merged.items()), detect)
        if closure:
            self._cache[key] = dist
        return dist

    # -- formatting ---------------------------------------------------------
    def state_str(self, s: AttackerState) -> str:
        return s.to_str(self.n)


def attacker_mdp(cg: CondensedGraph, bw_only_sharing: bool = False) -> AttackerMDP:
    """Shared :class:`AttackerMDP` for ``cg`` (cached on the condensed graph)."""
    key = ("mdp", bw_only_sharing)
    mdp = cg._cache.get(key)
    if mdp is None:
        mdp = cg._cache[key] = AttackerMDP(cg, bw_only_sharing)
    return mdp


def _blocked_edges(cg: CondensedGraph, plan) -> Sequence[int]:
    if plan is None:
        return ()
    if hasattr(plan, "blocked_edges"):
        return plan.blocked_edges(cg)
    return tuple(plan)


def initial_state(cg: CondensedGraph, plan=None) -> AttackerState:
    """``plan`` is a :class:`~adharden.defender.BlockingPlan` or iterable of bw edge ids."""
    return attacker_mdp(cg).initial_state(_blocked_edges(cg, plan))


def checkpoints(cg: CondensedGraph, s: AttackerState) -> set[int]:
    return attacker_mdp(cg).held_nodes(s)


def admissible_actions(cg: CondensedGraph, s: AttackerState) -> list[int]:
    return attacker_mdp(cg).admissible_actions(s)


def transition(
    cg: CondensedGraph, s: AttackerState, action: int, *, closure: bool = True,
    bw_only_sharing: bool = False,
) -> TransitionDistribution:
    return attacker_mdp(cg, bw_only_sharing).transition(s, action, closure=closure)


def propagate(cg: CondensedGraph, s: AttackerState) -> AttackerState:
    return attacker_mdp(cg).propagate(s)


def state_from_str(text: str) -> AttackerState:
    return AttackerState.parse(text)


def single_step_success(mdp: AttackerMDP, s: AttackerState, action: int) -> float:
    """Probability that NSP ``action`` is completed when attempted from ``s``."""
    p = 1.0
    for e, _pd, _pf, ps, _joint in mdp.walk[action]:
        if not (mdp.sharing[e] & s.succ):
            p *= ps
    return p


def describe(mdp: AttackerMDP, dist: TransitionDistribution) -> str:
    lines = [f"{mdp.state_str(st)} {p!r}" for st, p in dist.outcomes]
    lines.append(f"detect {dist.p_detect_total!r}")
    return "\n".join(lines) + "\n"


__all__ = [
    "UNKNOWN", "SUCCESS", "FAIL", "AttackerState", "TransitionDistribution",
    "AttackerMDP", "attacker_mdp", "initial_state", "checkpoints",
    "admissible_actions", "transition", "propagate", "InadmissibleActionError",
    "single_step_success", "describe", "state_from_str",
]

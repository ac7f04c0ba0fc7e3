"""Attack-graph data model, text format and pre-processing.

Nodes are dense integer ids ``0..n-1``; each node also carries a string name
that is what the text format uses. Edges are identified by their position in
the ``(src, dst)``-sorted edge list, so edge ids are stable for a given graph.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping

PROB_TOL = 1e-12


class GraphFormatError(ValueError):
    """Malformed graph text; ``lineno`` is 1-based (0 when not line-specific)."""

    def __init__(self, message: str, lineno: int = 0):
        self.lineno = lineno
        if lineno:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class TriviallySafeError(ValueError):
    pass


@dataclass(frozen=True)
class EdgeAttr:
    p_detect: float = 0.0
    p_fail: float = 0.0
    blockable: bool = False

    def __post_init__(self):
        for label, p in (("p_detect", self.p_detect), ("p_fail", self.p_fail)):
            if not (0.0 <= p <= 1.0) or math.isnan(p):
                raise ValueError(f"{label}={p!r} out of range [0, 1]")
        if self.p_detect + self.p_fail > 1.0 + PROB_TOL:
            raise ValueError(
                f"probability mass exceeds 1 (p_detect={self.p_detect!r}, p_fail={self.p_fail!r})"
            )

    @property
    def p_success(self) -> float:
        return max(0.0, 1.0 - self.p_detect - self.p_fail)


class AttackGraph:
    """Directed attack graph with a single destination node ``da``.

    Immutable by convention: every transformation returns a new graph.
    """

    def __init__(
        self,
        names: Iterable[str],
        edges: Mapping[tuple[int, int], EdgeAttr],
        entries: Iterable[int],
        da: int,
    ):
        self.names = tuple(str(x) for x in names)
        n = len(self.names)
        if len(set(self.names)) != n:
            raise ValueError("duplicate node names")
        self._index = {name: i for i, name in enumerate(self.names)}
        if not 0 <= da < n:
            raise ValueError(f"da={da} is not a node")
        self.da = da
        self.entries = frozenset(entries)
        for u in self.entries:
            if not 0 <= u < n:
                raise ValueError(f"entry {u} is not a node")
        if da in self.entries:
            raise ValueError("da cannot be an entry node")
        es = {}
        for (u, v), attr in sorted(edges.items()):
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u}, {v}) references an unknown node")
            if u == v:
                raise ValueError(f"self-loop on node {self.names[u]}")
            es[(u, v)] = attr
        self.edges: dict[tuple[int, int], EdgeAttr] = es
        self.edge_list: tuple[tuple[int, int], ...] = tuple(es)
        self._edge_id = {e: i for i, e in enumerate(self.edge_list)}
        succ: list[list[int]] = [[] for _ in range(n)]
        pred: list[list[int]] = [[] for _ in range(n)]
        for u, v in self.edge_list:
            succ[u].append(v)
            pred[v].append(u)
        self._succ = tuple(tuple(s) for s in succ)
        self._pred = tuple(tuple(p) for p in pred)

    # -- basic queries -------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self.names)

    @property
    def n_edges(self) -> int:
        return len(self.edge_list)

    @property
    def nodes(self) -> range:
        return range(self.n_nodes)

    def successors(self, u: int) -> tuple[int, ...]:
        return self._succ[u]

    def predecessors(self, v: int) -> tuple[int, ...]:
        return self._pred[v]

    def out_degree(self, u: int) -> int:
        return len(self._succ[u])

    def edge_id(self, u: int, v: int) -> int:
        return self._edge_id[(u, v)]

    def edge_attr(self, eid: int) -> EdgeAttr:
        return self.edges[self.edge_list[eid]]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown node {name!r}") from None

    def edge_label(self, eid: int) -> str:
        u, v = self.edge_list[eid]
        return f"{self.names[u]} {self.names[v]}"

    def hops_to_da(self) -> list[float]:
        """Hop distance from every node to ``da`` (``inf`` if unreachable)."""
        dist = [math.inf] * self.n_nodes
        dist[self.da] = 0
        queue = deque([self.da])
        while queue:
            v = queue.popleft()
            for u in self._pred[v]:
                if dist[u] == math.inf:
                    dist[u] = dist[v] + 1
                    queue.append(u)
        return dist

    def reachable_from(self, sources: Iterable[int]) -> set[int]:
        seen = set(sources)
        stack = list(seen)
        while stack:
            u = stack.pop()
            for v in self._succ[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return seen

    # -- functional updates ---------------------------------------------
    def replace(self, *, edges=None, entries=None, da=None) -> "AttackGraph":
        return AttackGraph(
            self.names,
            self.edges if edges is None else edges,
            self.entries if entries is None else entries,
            self.da if da is None else da,
        )

    def subgraph(self, keep: Iterable[int]) -> tuple["AttackGraph", dict[int, int]]:
        """Induced subgraph on ``keep``, densely re-indexed in original id order."""
        keep = sorted(set(keep))
        mapping = {old: new for new, old in enumerate(keep)}
        if self.da not in mapping:
            raise ValueError("subgraph must keep da")
        edges = {
            (mapping[u], mapping[v]): a
            for (u, v), a in self.edges.items()
            if u in mapping and v in mapping
        }
        g = AttackGraph(
            [self.names[i] for i in keep],
            edges,
            [mapping[u] for u in self.entries if u in mapping],
            mapping[self.da],
        )
        return g, mapping

    def __eq__(self, other):
        if not isinstance(other, AttackGraph):
            return NotImplemented
        return (
            self.names == other.names
            and self.edges == other.edges
            and self.entries == other.entries
            and self.da == other.da
        )

    __hash__ = None

    def __repr__(self):
        return (
            f"AttackGraph(n={self.n_nodes}, m={self.n_edges}, "
            f"entries={len(self.entries)}, da={self.names[self.da]!r})"
        )


# -- text format ----------------------------------------------------------

def _parse_prob(tok: str, lineno: int) -> float:
    try:
        p = float(tok)
    except ValueError:
        raise GraphFormatError(f"bad probability {tok!r}", lineno) from None
    if not (0.0 <= p <= 1.0):
        raise GraphFormatError(f"probability {tok} out of range [0, 1]", lineno)
    return p


def parse_graph(text: str) -> AttackGraph:
    """Parse the line-oriented graph format.

    Recognised lines (``#`` starts a comment)::

        node <id>
        entry <id>
        da <id>
        edge <src> <dst> <p_detect> <p_fail> <blockable:0|1>

    ``entry`` and ``da`` lines declare their node if needed; edges must refer
    to declared nodes. Several ``da`` lines are merged into one destination
    (see :func:`merge_domain_admins`).
    """
    names: list[str] = []
    index: dict[str, int] = {}
    entries: list[int] = []
    das: list[int] = []
    edges: dict[tuple[int, int], EdgeAttr] = {}

    def declare(name: str) -> int:
        if name not in index:
            index[name] = len(names)
            names.append(name)
        return index[name]

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        kw = tok[0]
        if kw in ("node", "entry", "da"):
            if len(tok) != 2:
                raise GraphFormatError(f"'{kw}' expects exactly one node id", lineno)
            u = declare(tok[1])
            if kw == "entry" and u not in entries:
                entries.append(u)
            elif kw == "da" and u not in das:
                das.append(u)
        elif kw == "edge":
            if len(tok) != 6:
                raise GraphFormatError("'edge' expects: src dst p_detect p_fail blockable", lineno)
            src, dst = tok[1], tok[2]
            for name in (src, dst):
                if name not in index:
                    raise GraphFormatError(f"unknown node {name!r}", lineno)
            u, v = index[src], index[dst]
            if u == v:
                raise GraphFormatError(f"self-loop on {src!r}", lineno)
            if (u, v) in edges:
                raise GraphFormatError(f"duplicate edge {src} -> {dst}", lineno)
            pd = _parse_prob(tok[3], lineno)
            pf = _parse_prob(tok[4], lineno)
            if tok[5] not in ("0", "1"):
                raise GraphFormatError(f"blockable must be 0 or 1, got {tok[5]!r}", lineno)
            if pd + pf > 1.0 + PROB_TOL:
                raise GraphFormatError("probability mass exceeds 1", lineno)
            edges[(u, v)] = EdgeAttr(pd, pf, tok[5] == "1")
        else:
            raise GraphFormatError(f"unknown directive {kw!r}", lineno)

    if not entries:
        raise GraphFormatError("zero entry nodes declared")
    if not das:
        raise GraphFormatError("no da declared")
    if set(entries) & set(das):
        raise GraphFormatError("a node cannot be both entry and da")
    g = AttackGraph(names, edges, entries, das[0])
    if len(das) > 1:
        g = merge_domain_admins(g, das)
    return g


def serialize_graph(g: AttackGraph) -> str:
    lines = [f"node {name}" for name in g.names]
    lines += [f"entry {g.names[u]}" for u in sorted(g.entries)]
    lines.append(f"da {g.names[g.da]}")
    for (u, v), a in g.edges.items():
        lines.append(
            f"edge {g.names[u]} {g.names[v]} {a.p_detect!r} {a.p_fail!r} {int(a.blockable)}"
        )
    return "\n".join(lines) + "\n"


def load_graph(path) -> AttackGraph:
    with open(path) as fh:
        return parse_graph(fh.read())


def save_graph(g: AttackGraph, path) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_graph(g))


# -- pre-processing -------------------------------------------------------

def merge_domain_admins(g: AttackGraph, das: Iterable[int]) -> AttackGraph:
    """Collapse every node in ``das`` into one destination node.

    The merged node takes the smallest id (and its name). Edges out of any DA
    are dropped. When several DAs share a predecessor, the parallel edge with
    the highest success probability survives (first in edge order on ties).
    """
    das = set(das)
    if not das:
        raise ValueError("das must be non-empty")
    if das & g.entries:
        raise ValueError("das contains an entry node")
    rep = min(das)
    keep = [u for u in g.nodes if u not in das or u == rep]
    mapping = {old: new for new, old in enumerate(keep)}
    for d in das:
        mapping[d] = mapping[rep]
    edges: dict[tuple[int, int], EdgeAttr] = {}
    for (u, v), a in g.edges.items():
        if u in das:
            continue
        key = (mapping[u], mapping[v])
        prev = edges.get(key)
        if prev is None or a.p_success > prev.p_success:
            edges[key] = a
    return AttackGraph(
        [g.names[u] for u in keep],
        edges,
        [mapping[u] for u in g.entries],
        mapping[rep],
    )


def prune_irrelevant(g: AttackGraph) -> tuple[AttackGraph, dict[int, int]]:
    """Reduce ``g`` to the part an attacker can use.

    Drops edges into entries and out of ``da``, then keeps only nodes that are
    reachable from some entry and can reach ``da``. Unreachable-from-entry
    removal subsumes iterated removal of nodes without incoming edges. Returns
    the pruned graph and the old->new id mapping of surviving nodes.
    """
    edges = {
        (u, v): a
        for (u, v), a in g.edges.items()
        if v not in g.entries and u != g.da
    }
    g0 = g.replace(edges=edges)
    dist = g0.hops_to_da()
    to_da = {u for u in g0.nodes if dist[u] != math.inf}
    live_entries = [u for u in g0.entries if u in to_da]
    if not live_entries:
        raise TriviallySafeError("graph is trivially safe: no entry can reach da")
    fwd = g0.reachable_from(live_entries)
    keep = fwd & to_da
    return g0.subgraph(keep)

"""Kernelization of a pruned attack graph into non-splitting paths (NSPs).

An NSP starts at an entry or splitting node, takes one outgoing edge and then
follows sole successors until it hits ``da`` or another splitting node. The
block-worthy edge of an NSP is its last blockable edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .graph import AttackGraph


@dataclass(frozen=True)
class Nsp:
    id: int
    source: int
    target: int
    nodes: tuple[int, ...]
    edges: tuple[int, ...]
    bw_edge: Optional[int]


@dataclass(eq=False)
class CondensedGraph:
    base: AttackGraph
    splits: frozenset[int]
    nsps: tuple[Nsp, ...]
    bw_set: tuple[int, ...]
    edge_to_nsps: dict[int, frozenset[int]]
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def entries(self) -> frozenset[int]:
        return self.base.entries

    @property
    def da(self) -> int:
        return self.base.da

    @property
    def condensed_nodes(self) -> frozenset[int]:
        return self.base.entries | self.splits | {self.base.da}

    @property
    def n_condensed_nodes(self) -> int:
        return len(self.condensed_nodes)

    @property
    def feedback_edges(self) -> int:
        """``h = m - (n - 1)`` of the pruned graph."""
        return self.base.n_edges - (self.base.n_nodes - 1)

    @property
    def bw_bound(self) -> int:
        return len(self.base.entries) + 2 * self.feedback_edges

    def bw_index(self, eid: int) -> int:
        return self.bw_set.index(eid)

    def nsp_label(self, i: int) -> str:
        return "(" + ",".join(self.base.names[u] for u in self.nsps[i].nodes) + ")"

    def summary(self) -> str:
        g = self.base
        lines = [
            f"nodes {g.n_nodes}",
            f"edges {g.n_edges}",
            f"entries {len(g.entries)}",
            f"splits {len(self.splits)}",
            f"condensed_nodes {self.n_condensed_nodes}",
            f"nsps {len(self.nsps)}",
            f"bw_edges {len(self.bw_set)}",
            f"bw_bound {self.bw_bound}",
            "# id source target length bw_edge path",
        ]
        for p in self.nsps:
            bw = g.edge_label(p.bw_edge).replace(" ", "->") if p.bw_edge is not None else "-"
            lines.append(
                f"nsp {p.id} {g.names[p.source]} {g.names[p.target]} "
                f"{len(p.edges)} {bw} {'->'.join(g.names[u] for u in p.nodes)}"
            )
        return "\n".join(lines) + "\n"


def find_splitting_nodes(g: AttackGraph) -> frozenset[int]:
    return frozenset(u for u in g.nodes if g.out_degree(u) >= 2)


def enumerate_nsps(g: AttackGraph, splits: frozenset[int]) -> list[Nsp]:
    """One NSP per (entry-or-split source, successor), ordered by source then first edge."""
    sources = sorted(set(g.entries) | set(splits))
    stops = set(splits) | {g.da}
    out = []
    for i in sources:
        for j in g.successors(i):
            nodes = [i, j]
            edges = [g.edge_id(i, j)]
            seen = {i, j}
            cur = j
            while cur not in stops:
                succ = g.successors(cur)
                assert len(succ) == 1, f"dead end at {g.names[cur]}; graph not pruned"
                nxt = succ[0]
                assert nxt in stops or nxt not in seen, "non-splitting cycle; graph not pruned"
                edges.append(g.edge_id(cur, nxt))
                nodes.append(nxt)
                seen.add(nxt)
                cur = nxt
            bw = find_block_worthy(g, edges)
            out.append(Nsp(len(out), i, cur, tuple(nodes), tuple(edges), bw))
    return out


def find_block_worthy(g: AttackGraph, edges) -> Optional[int]:
    """Furthermost blockable edge of an NSP, or ``None``.

    Accepts an :class:`Nsp` or a sequence of edge ids.
    """
    if isinstance(edges, Nsp):
        edges = edges.edges
    for eid in reversed(edges):
        if g.edge_attr(eid).blockable:
            return eid
    return None


def build_condensed(g: AttackGraph) -> CondensedGraph:
    splits = find_splitting_nodes(g)
    nsps = enumerate_nsps(g, splits)
    bw_set = tuple(sorted({p.bw_edge for p in nsps if p.bw_edge is not None}))
    index: dict[int, set[int]] = {}
    for p in nsps:
        for e in p.edges:
            index.setdefault(e, set()).add(p.id)
    return CondensedGraph(
        base=g,
        splits=splits,
        nsps=tuple(nsps),
        bw_set=bw_set,
        edge_to_nsps={e: frozenset(s) for e, s in sorted(index.items())},
    )

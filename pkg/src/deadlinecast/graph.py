"""Network topology, load-aware edge costs, and forwarding-tree selection.

A topology is a set of datacenters joined by undirected links; every link is
modeled as two independent directed edges of equal capacity. Forwarding trees
for point-to-multipoint transfers are grown with a shortest-path attachment
heuristic over per-request edge costs that combine request volume with the
load already booked on each edge before the request's deadline.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from typing import TYPE_CHECKING, Iterable, Mapping, NamedTuple

if TYPE_CHECKING:
    from .scheduler import TransferRequest
    from .timeline import Timeline


class Edge(NamedTuple):
    """One direction of a link, identified by its endpoint node ids."""

    tail: str
    head: str

    def reverse(self) -> "Edge":
        return Edge(self.head, self.tail)

    def __str__(self) -> str:
        return f"{self.tail}->{self.head}"


@dataclass(frozen=True)
class Topology:
    """Connected graph of datacenters with uniform per-edge slot capacity.

    ``links`` holds undirected node pairs normalized as (low, high); the
    directed view (two edges per link) is what the scheduler allocates on.
    """

    nodes: tuple[str, ...]
    links: tuple[tuple[str, str], ...]
    capacity: float = 1.0

    def __post_init__(self) -> None:
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("duplicate node ids in topology")
        if self.capacity <= 0:
            raise ValueError(f"capacity must be positive, got {self.capacity}")
        node_set = set(self.nodes)
        seen = set()
        for a, b in self.links:
            if a == b:
                raise ValueError(f"self-loop on node {a!r}")
            if a not in node_set or b not in node_set:
                raise ValueError(f"link ({a!r}, {b!r}) references undeclared node")
            if (a, b) != tuple(sorted((a, b))):
                raise ValueError(f"link ({a!r}, {b!r}) is not normalized")
            if (a, b) in seen:
                raise ValueError(f"duplicate link ({a!r}, {b!r})")
            seen.add((a, b))
        self._check_connected()

    def _check_connected(self) -> None:
        if not self.nodes:
            raise ValueError("topology has no nodes")
        reached = {self.nodes[0]}
        frontier = [self.nodes[0]]
        adj: dict[str, list[str]] = {n: [] for n in self.nodes}
        for a, b in self.links:
            adj[a].append(b)
            adj[b].append(a)
        while frontier:
            u = frontier.pop()
            for v in adj[u]:
                if v not in reached:
                    reached.add(v)
                    frontier.append(v)
        if len(reached) != len(self.nodes):
            missing = sorted(set(self.nodes) - reached)
            raise ValueError(f"topology is not connected; unreachable: {missing}")

    @classmethod
    def build(
        cls,
        nodes: Iterable[str],
        links: Iterable[tuple[str, str]],
        capacity: float = 1.0,
    ) -> "Topology":
        """Normalize and validate raw node/link collections."""
        norm = tuple(sorted({tuple(sorted(pair)) for pair in links}))
        return cls(nodes=tuple(sorted(set(nodes))), links=norm, capacity=capacity)

    @cached_property
    def directed_edges(self) -> tuple[Edge, ...]:
        edges = []
        for a, b in self.links:
            edges.append(Edge(a, b))
            edges.append(Edge(b, a))
        return tuple(sorted(edges))

    @cached_property
    def _out_edges(self) -> dict[str, tuple[Edge, ...]]:
        out: dict[str, list[Edge]] = {n: [] for n in self.nodes}
        for e in self.directed_edges:
            out[e.tail].append(e)
        return {n: tuple(es) for n, es in out.items()}

    def out_edges(self, node: str) -> tuple[Edge, ...]:
        return self._out_edges[node]

    def neighbors(self, node: str) -> tuple[str, ...]:
        return tuple(e.head for e in self._out_edges[node])

    @classmethod
    def parse(cls, text: str, capacity: float | None = None) -> "Topology":
        """Parse the line-based topology format.

        Directives, one per line: ``node NAME``, ``link NAME NAME``, and an
        optional ``capacity VALUE``. Blank lines and ``#`` comments are
        ignored. An explicit ``capacity`` argument overrides the file value.
        """
        nodes: list[str] = []
        links: list[tuple[str, str]] = []
        file_capacity = 1.0
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "node" and len(parts) == 2:
                nodes.append(parts[1])
            elif parts[0] == "link" and len(parts) == 3:
                links.append((parts[1], parts[2]))
            elif parts[0] == "capacity" and len(parts) == 2:
                file_capacity = float(parts[1])
            else:
                raise ValueError(f"line {lineno}: cannot parse {raw!r}")
        cap = file_capacity if capacity is None else capacity
        return cls.build(nodes, links, capacity=cap)

    @classmethod
    def from_file(cls, path, capacity: float | None = None) -> "Topology":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read(), capacity=capacity)

    @classmethod
    def gscale(cls, capacity: float = 1.0) -> "Topology":
        """Bundled 12-node / 19-link wide-area topology."""
        text = resources.files("deadlinecast.data").joinpath("gscale.topo").read_text()
        return cls.parse(text, capacity=capacity)


@dataclass(frozen=True)
class ForwardingTree:
    """Directed tree carrying one transfer from ``root`` to all ``terminals``."""

    root: str
    terminals: frozenset[str]
    edges: frozenset[Edge]

    @cached_property
    def edge_list(self) -> tuple[Edge, ...]:
        return tuple(sorted(self.edges))

    @cached_property
    def nodes(self) -> frozenset[str]:
        spanned = {self.root}
        for e in self.edges:
            spanned.add(e.tail)
            spanned.add(e.head)
        return frozenset(spanned)

    def validate(self) -> None:
        """Raise ValueError unless this is a tree rooted at ``root`` that
        reaches every terminal and has no dangling non-terminal leaves."""
        if not self.terminals:
            raise ValueError("tree has no terminals")
        if self.root in self.terminals:
            raise ValueError("root listed among terminals")
        if len(self.edges) != len(self.nodes) - 1:
            raise ValueError("edge count does not match a spanning tree")
        indeg: dict[str, int] = {n: 0 for n in self.nodes}
        out: dict[str, list[str]] = {n: [] for n in self.nodes}
        for e in self.edges:
            indeg[e.head] += 1
            out[e.tail].append(e.head)
        if indeg[self.root] != 0:
            raise ValueError("root has an incoming edge")
        bad = [n for n in self.nodes if n != self.root and indeg[n] != 1]
        if bad:
            raise ValueError(f"nodes without unique parent: {sorted(bad)}")
        reached = {self.root}
        stack = [self.root]
        while stack:
            u = stack.pop()
            for v in out[u]:
                if v not in reached:
                    reached.add(v)
                    stack.append(v)
        if reached != self.nodes:
            raise ValueError("tree is not connected from the root")
        if not self.terminals <= self.nodes:
            missing = sorted(self.terminals - self.nodes)
            raise ValueError(f"terminals not spanned: {missing}")
        leaves = {n for n in self.nodes if not out[n]}
        stray = leaves - self.terminals - {self.root}
        if stray:
            raise ValueError(f"non-terminal leaves: {sorted(stray)}")


def edge_cost(edge: Edge, request: "TransferRequest", timeline: "Timeline") -> float:
    """Cost of routing ``request`` over ``edge``: its volume plus the total
    rate already booked on the edge up to the request's deadline."""
    if request.deadline <= timeline.t_now:
        raise ValueError(
            f"expired deadline: slot {request.deadline} is not after "
            f"current slot {timeline.t_now}"
        )
    load = timeline.load_in_window(edge, timeline.t_now + 1, request.deadline)
    return request.volume + load


def tree_weight(tree: ForwardingTree, request: "TransferRequest", timeline: "Timeline") -> float:
    return sum(edge_cost(e, request, timeline) for e in tree.edge_list)


def select_tree(
    topology: Topology, request: "TransferRequest", timeline: "Timeline"
) -> ForwardingTree:
    """Pick the forwarding tree for a newly arrived request.

    Edge costs are frozen at call time; selection happens once per request.
    """
    if request.source not in set(topology.nodes):
        raise ValueError(f"unknown source {request.source!r}")
    unknown = sorted(set(request.destinations) - set(topology.nodes))
    if unknown:
        raise ValueError(f"unknown destinations {unknown}")
    if not request.destinations:
        raise ValueError("request has no destinations")
    weights = {e: edge_cost(e, request, timeline) for e in topology.directed_edges}
    return steiner_tree(topology, request.source, frozenset(request.destinations), weights)


def steiner_tree(
    topology: Topology,
    root: str,
    terminals: frozenset[str],
    weights: Mapping[Edge, float],
) -> ForwardingTree:
    """Grow a directed tree from ``root`` to all ``terminals``.

    Repeatedly attaches the terminal closest to the current tree via its
    min-weight path. Ties prefer fewer edges, then lexicographic node order,
    so the result is deterministic for identical inputs.
    """
    remaining = set(terminals) - {root}
    tree_nodes = {root}
    tree_edges: set[Edge] = set()
    while remaining:
        dist, hops, pred = _nearest_paths(topology, tree_nodes, weights)
        best = min(
            remaining,
            key=lambda v: (dist.get(v, math.inf), hops.get(v, math.inf), v),
        )
        if dist.get(best, math.inf) == math.inf:
            raise ValueError(f"terminal {best!r} unreachable from tree")
        path: list[Edge] = []
        v = best
        while v not in tree_nodes:
            u = pred[v]
            path.append(Edge(u, v))
            v = u
        for e in reversed(path):
            tree_edges.add(e)
            tree_nodes.add(e.head)
        remaining -= tree_nodes
    return ForwardingTree(root=root, terminals=frozenset(terminals), edges=frozenset(tree_edges))


def _nearest_paths(
    topology: Topology,
    sources: set[str],
    weights: Mapping[Edge, float],
) -> tuple[dict[str, float], dict[str, int], dict[str, str | None]]:
    """Multi-source Dijkstra over directed edge weights.

    Orders candidates by (path weight, hop count) and keeps the
    lexicographically smallest predecessor among exact ties.
    """
    dist: dict[str, float] = {}
    hops: dict[str, int] = {}
    pred: dict[str, str | None] = {}
    heap: list[tuple[float, int, str]] = []
    for s in sorted(sources):
        dist[s] = 0.0
        hops[s] = 0
        pred[s] = None
        heap.append((0.0, 0, s))
    heapq.heapify(heap)
    while heap:
        d, h, u = heapq.heappop(heap)
        if (d, h) != (dist[u], hops[u]):
            continue
        for e in topology.out_edges(u):
            v = e.head
            cand = (d + weights[e], h + 1)
            cur = (dist.get(v, math.inf), hops.get(v, math.inf))
            if cand < cur:
                dist[v], hops[v] = cand
                pred[v] = u
                heapq.heappush(heap, (cand[0], cand[1], v))
            elif cand == cur and pred.get(v) is not None and u < pred[v]:
                pred[v] = u
    return dist, hops, pred

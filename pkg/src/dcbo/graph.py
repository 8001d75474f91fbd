"""Time-rolled causal graphs.

A :class:`TimeDag` holds one copy of every variable per time slice, the edges
between them, and the role each variable plays (manipulative, non-manipulative
or target). Slices are indexed ``0 .. T-1``.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

MANIPULATIVE = "manipulative"
NONMANIPULATIVE = "nonmanipulative"
TARGET = "target"
ROLES = (MANIPULATIVE, NONMANIPULATIVE, TARGET)


class GraphError(ValueError):
    """Raised for malformed graphs and unknown nodes."""


class NodeId(NamedTuple):
    variable: str
    time: int

    def __str__(self) -> str:
        return f"{self.variable}_{self.time}"


InterventionSet = tuple  # canonical: sorted tuple of variable names


def canonical_set(variables: Iterable[str]) -> tuple[str, ...]:
    """Sorted, duplicate-free tuple of variable names."""
    items = list(variables)
    if len(set(items)) != len(items):
        raise GraphError(f"duplicate variables in intervention set {items}")
    return tuple(sorted(items))


@dataclass(frozen=True)
class TimeDag:
    """Immutable time-rolled DAG over ``variable x time`` nodes.

    Args:
        T: number of time slices.
        roles: variable name -> role.
        edges: directed edges between :class:`NodeId` pairs.
    """

    T: int
    roles: Mapping[str, str]
    edges: frozenset
    _parents: dict = field(init=False, repr=False, compare=False)
    _children: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.T < 1:
            raise GraphError("a time-rolled graph needs at least one slice")
        for var, role in self.roles.items():
            if role not in ROLES:
                raise GraphError(f"variable {var!r} has unknown role {role!r}")
        targets = [v for v, r in self.roles.items() if r == TARGET]
        if len(targets) != 1:
            raise GraphError(f"expected exactly one target variable, got {targets}")
        object.__setattr__(self, "roles", dict(self.roles))
        object.__setattr__(
            self, "edges", frozenset((NodeId(*u), NodeId(*v)) for u, v in self.edges)
        )
        nodes = self.nodes
        parents: dict[NodeId, set] = {n: set() for n in nodes}
        children: dict[NodeId, set] = {n: set() for n in nodes}
        for u, v in self.edges:
            for n in (u, v):
                if n not in parents:
                    raise GraphError(f"edge {u}->{v} references unknown node {n}")
            if u.time > v.time:
                raise GraphError(f"edge {u}->{v} points backwards in time")
            parents[v].add(u)
            children[u].add(v)
        object.__setattr__(self, "_parents", {k: frozenset(s) for k, s in parents.items()})
        object.__setattr__(self, "_children", {k: frozenset(s) for k, s in children.items()})
        self.topological_order()  # raises on cycles

    def __hash__(self) -> int:
        return hash((self.T, self.edges, tuple(sorted(self.roles.items()))))

    # -- construction -----------------------------------------------------

    @classmethod
    def from_template(
        cls,
        roles: Mapping[str, str],
        within: Iterable[tuple[str, str]],
        cross: Iterable[tuple[str, str]],
        T: int,
        cross_by_slice: Mapping[int, Iterable[tuple[str, str]]] | None = None,
    ) -> "TimeDag":
        """Roll a slice template out over ``T`` slices.

        ``within`` edges are copied into every slice. ``cross`` edges ``(u, v)``
        connect ``u`` at ``t-1`` to ``v`` at ``t`` for every ``t >= 1``, unless
        ``cross_by_slice`` lists the cross edges for that particular ``t``.
        """
        within = list(within)
        cross = list(cross)
        cross_by_slice = {int(k): list(v) for k, v in (cross_by_slice or {}).items()}
        edges = set()
        for t in range(T):
            for u, v in within:
                edges.add((NodeId(u, t), NodeId(v, t)))
            if t == 0:
                continue
            for u, v in cross_by_slice.get(t, cross):
                edges.add((NodeId(u, t - 1), NodeId(v, t)))
        return cls(T=T, roles=roles, edges=frozenset(edges))

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TimeDag":
        """Build from a document with keys ``T``, ``variables``, ``within``,
        ``cross`` and optionally ``cross_by_slice``."""
        try:
            return cls.from_template(
                roles=doc["variables"],
                within=[tuple(e) for e in doc.get("within", [])],
                cross=[tuple(e) for e in doc.get("cross", [])],
                T=int(doc["T"]),
                cross_by_slice={
                    int(k): [tuple(e) for e in v]
                    for k, v in doc.get("cross_by_slice", {}).items()
                },
            )
        except KeyError as exc:
            raise GraphError(f"graph document is missing field {exc.args[0]!r}") from None

    def to_dict(self) -> dict:
        """Inverse of :meth:`from_dict` (cross edges are listed per slice)."""
        within = sorted({(u.variable, v.variable) for u, v in self.edges if u.time == v.time})
        by_slice = {}
        for t in range(1, self.T):
            by_slice[str(t)] = sorted(
                (u.variable, v.variable) for u, v in self.edges if v.time == t and u.time == t - 1
            )
        return {
            "T": self.T,
            "variables": dict(self.roles),
            "within": [list(e) for e in within],
            "cross": [],
            "cross_by_slice": {k: [list(e) for e in v] for k, v in by_slice.items()},
        }

    # -- basic queries ----------------------------------------------------

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(sorted(self.roles))

    @property
    def target(self) -> str:
        return next(v for v, r in self.roles.items() if r == TARGET)

    @property
    def manipulative(self) -> tuple[str, ...]:
        return tuple(sorted(v for v, r in self.roles.items() if r == MANIPULATIVE))

    @property
    def nodes(self) -> frozenset:
        return frozenset(NodeId(v, t) for v in self.roles for t in range(self.T))

    def target_node(self, t: int) -> NodeId:
        return NodeId(self.target, t)

    def _check(self, node: NodeId) -> NodeId:
        node = NodeId(*node)
        if node not in self._parents:
            raise GraphError(f"unknown node {node}")
        return node

    def parents(self, node: NodeId) -> frozenset:
        return self._parents[self._check(node)]

    def children(self, node: NodeId) -> frozenset:
        return self._children[self._check(node)]

    def ancestors(self, node: NodeId) -> frozenset:
        """Transitive closure of :meth:`parents` (the node itself excluded)."""
        seen: set[NodeId] = set()
        stack = list(self.parents(node))
        while stack:
            n = stack.pop()
            if n not in seen:
                seen.add(n)
                stack.extend(self._parents[n])
        return frozenset(seen)

    def topological_order(self) -> list[NodeId]:
        """Nodes sorted so that parents precede children; ties by (time, name)."""
        indeg = {n: len(p) for n, p in self._parents.items()}
        ready = sorted((n for n, d in indeg.items() if d == 0), key=lambda n: (n.time, n.variable))
        order = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for c in self._children[n]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
            ready.sort(key=lambda m: (m.time, m.variable))
        if len(order) != len(indeg):
            raise GraphError("graph contains a cycle")
        return order

    def mutilate(self, intervened: Iterable[NodeId]) -> "TimeDag":
        """Copy of the graph with every edge into an intervened node removed."""
        hit = {self._check(n) for n in intervened}
        if not hit:
            return self
        edges = frozenset((u, v) for u, v in self.edges if v not in hit)
        return TimeDag(T=self.T, roles=self.roles, edges=edges)

    def slice_edges(self, t: int) -> frozenset:
        """Within-slice edges of slice ``t`` as variable-name pairs."""
        return frozenset((u.variable, v.variable) for u, v in self.edges if u.time == v.time == t)

    def _lag_edges(self, t: int) -> frozenset:
        return frozenset(
            (u.variable, v.variable) for u, v in self.edges if v.time == t and u.time == t - 1
        )

    def is_stationary(self) -> bool:
        """Same within-slice edges in every slice and same lag edges into every ``t >= 1``."""
        first = self.slice_edges(0)
        if any(self.slice_edges(t) != first for t in range(1, self.T)):
            return False
        return all(self._lag_edges(t) == self._lag_edges(1) for t in range(2, self.T))

    def classify_parents(self, t: int) -> tuple[frozenset, frozenset]:
        """Split ``Pa(Y_t)`` into earlier targets and everything else."""
        self._check_time(t)
        pa = self.parents(self.target_node(t))
        past_targets = frozenset(
            n for n in pa if n.variable == self.target and n.time < t
        )
        return past_targets, pa - past_targets

    def _check_time(self, t: int) -> None:
        if not 0 <= t < self.T:
            raise GraphError(f"time index {t} outside 0..{self.T - 1}")

    def compute_mis(self, t: int) -> list[tuple[str, ...]]:
        """Exploration set for slice ``t``.

        A non-empty subset ``S`` of the slice's manipulative variables is kept
        when each of its members still reaches ``Y_t`` after the edges into
        ``S`` are cut. Result is sorted by size, then lexicographically.
        """
        self._check_time(t)
        y = self.target_node(t)
        out = []
        for size in range(1, len(self.manipulative) + 1):
            for combo in itertools.combinations(self.manipulative, size):
                nodes = [NodeId(v, t) for v in combo]
                anc = self.mutilate(nodes).ancestors(y)
                if all(n in anc for n in nodes):
                    out.append(combo)
        return out


def parents(g: TimeDag, node: NodeId) -> frozenset:
    return g.parents(node)


def ancestors(g: TimeDag, node: NodeId) -> frozenset:
    return g.ancestors(node)


def mutilate(g: TimeDag, intervened: Iterable[NodeId]) -> TimeDag:
    return g.mutilate(intervened)


def compute_mis(g: TimeDag, t: int) -> list[tuple[str, ...]]:
    return g.compute_mis(t)


def classify_parents(g: TimeDag, t: int) -> tuple[frozenset, frozenset]:
    return g.classify_parents(t)


def load_graph(path: str | Path) -> TimeDag:
    """Read a graph document (JSON) from ``path``."""
    with open(path) as fh:
        return TimeDag.from_dict(json.load(fh))


def format_set(s: Sequence[str]) -> str:
    return "+".join(s)


def parse_set(text: str) -> tuple[str, ...]:
    return canonical_set(p for p in text.split("+") if p)

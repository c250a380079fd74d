"""Text logic graph (TLG) data model, validation, serialization and DOT export.

A TLG is a directed labeled graph whose nodes are clause-level text units
(elementary discourse units) and whose edges carry one of six logical
relations.  Four relations (conj, disj, neg, unk) are symmetric and are
stored as two mirrored directed triples; impl and rev are mutual inverses
and every impl triple is paired with the opposite rev triple.

Graphs are immutable: every mutating operation returns a new graph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Iterable, Optional


class GraphError(ValueError):
    """Raised for structurally invalid graphs, operations or documents."""


class Relation(Enum):
    CONJ = "conj"
    DISJ = "disj"
    IMPL = "impl"
    NEG = "neg"
    REV = "rev"
    UNK = "unk"


# Stable ordering index used wherever edges must be iterated deterministically.
RELATION_ORDER = {rel: i for i, rel in enumerate(Relation)}

SYMMETRIC_RELATIONS = frozenset({Relation.CONJ, Relation.DISJ, Relation.NEG, Relation.UNK})


def inverse_relation(rel: Relation) -> Relation:
    """Mirror relation stored for the opposite direction of an edge."""
    if rel is Relation.IMPL:
        return Relation.REV
    if rel is Relation.REV:
        return Relation.IMPL
    return rel


class Part(Enum):
    CONTEXT = "context"
    OPTION = "option"


Edge = tuple[int, Relation, int]


@dataclass(frozen=True)
class Node:
    """One text unit.  `id` is an opaque unique integer; the position of the
    node in the graph's node list gives the text order."""

    id: int
    text: str
    part: Part
    neg_of: Optional[int] = None


def _edge_sort_key(edge: Edge) -> tuple[int, int, int]:
    src, rel, dst = edge
    return (src, RELATION_ORDER[rel], dst)


@dataclass(frozen=True)
class TLG:
    """Immutable text logic graph.

    `nodes` is the text-order list: all context nodes first, then all option
    nodes.  `edges` holds every directed triple explicitly, including the
    mirrored direction of symmetric relations and the rev twin of every impl
    edge.  `inferred_nodes`/`inferred_edges` are presentation metadata (used
    for dashed rendering) and do not take part in equality.
    """

    nodes: tuple[Node, ...] = ()
    edges: frozenset[Edge] = frozenset()
    inferred_nodes: frozenset[int] = field(default=frozenset(), compare=False)
    inferred_edges: frozenset[Edge] = field(default=frozenset(), compare=False)

    @cached_property
    def _by_id(self) -> dict[int, Node]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def _index_by_id(self) -> dict[int, int]:
        return {n.id: i for i, n in enumerate(self.nodes)}

    @cached_property
    def sorted_edges(self) -> tuple[Edge, ...]:
        """Deterministic edge iteration order (src, relation, dst)."""
        return tuple(sorted(self.edges, key=_edge_sort_key))

    def node(self, node_id: int) -> Node:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise GraphError(f"unknown node id {node_id}") from None

    def has_node(self, node_id: int) -> bool:
        return node_id in self._by_id

    def index_of(self, node_id: int) -> int:
        """Text-order position of a node."""
        try:
            return self._index_by_id[node_id]
        except KeyError:
            raise GraphError(f"unknown node id {node_id}") from None

    @cached_property
    def context_nodes(self) -> tuple[Node, ...]:
        return tuple(n for n in self.nodes if n.part is Part.CONTEXT)

    @cached_property
    def option_nodes(self) -> tuple[Node, ...]:
        return tuple(n for n in self.nodes if n.part is Part.OPTION)

    def max_id(self) -> int:
        return max((n.id for n in self.nodes), default=-1)


def graph_from(nodes: Iterable[Node], edges: Iterable[tuple[int, Relation, int]] = ()) -> TLG:
    """Build a graph from nodes and logical edges, materializing mirrors."""
    g = TLG(nodes=tuple(nodes))
    for src, rel, dst in edges:
        g = add_edge(g, src, rel, dst)
    return g


def add_edge(g: TLG, src: int, rel: Relation, dst: int, *, inferred: bool = False) -> TLG:
    """Insert a logical edge together with its mirror or rev twin.

    Symmetric relations insert both directions; impl inserts the paired rev
    triple and vice versa.  Idempotent: re-adding an existing edge returns
    the graph unchanged.
    """
    if src == dst:
        raise GraphError(f"self-loop rejected: ({src}, {rel.value}, {dst})")
    if not g.has_node(src):
        raise GraphError(f"unknown node id {src}")
    if not g.has_node(dst):
        raise GraphError(f"unknown node id {dst}")
    pair = frozenset({(src, rel, dst), (dst, inverse_relation(rel), src)})
    if pair <= g.edges:
        return g
    new_edges = g.edges | pair
    inferred_edges = g.inferred_edges | pair if inferred else g.inferred_edges
    return replace(g, edges=new_edges, inferred_edges=inferred_edges)


def validate(g: TLG) -> list[str]:
    """Return a list of invariant violations; empty iff the graph is well formed."""
    violations: list[str] = []
    seen_ids: set[int] = set()
    for n in g.nodes:
        if n.id in seen_ids:
            violations.append(f"duplicate node id {n.id}")
        seen_ids.add(n.id)

    # Context nodes must all precede option nodes in text order.
    seen_option = False
    for n in g.nodes:
        if n.part is Part.OPTION:
            seen_option = True
        elif seen_option:
            violations.append(f"context node {n.id} appears after an option node")

    for n in g.nodes:
        if n.neg_of is not None:
            if n.neg_of not in seen_ids:
                violations.append(f"node {n.id} has dangling neg_of {n.neg_of}")
            elif (n.id, Relation.NEG, n.neg_of) not in g.edges:
                violations.append(f"node {n.id} has neg_of {n.neg_of} but no neg edge to it")

    for edge in sorted(g.edges, key=_edge_sort_key):
        src, rel, dst = edge
        if src not in seen_ids or dst not in seen_ids:
            violations.append(f"edge ({src}, {rel.value}, {dst}) references a missing node")
            continue
        if src == dst:
            violations.append(f"self-loop ({src}, {rel.value}, {dst})")
            continue
        if rel in SYMMETRIC_RELATIONS:
            if (dst, rel, src) not in g.edges:
                violations.append(f"missing mirror of symmetric edge ({src}, {rel.value}, {dst})")
        elif rel is Relation.IMPL:
            if (dst, Relation.REV, src) not in g.edges:
                violations.append(f"missing rev pair of ({src}, impl, {dst})")
        elif rel is Relation.REV:
            if (dst, Relation.IMPL, src) not in g.edges:
                violations.append(f"missing impl pair of ({src}, rev, {dst})")
    return violations


_PART_NAMES = {p.value: p for p in Part}
_RELATION_NAMES = {r.value: r for r in Relation}

_NODE_KEYS = {"id", "text", "part", "neg_of"}
_EDGE_KEYS = {"src", "rel", "dst"}


def to_doc(g: TLG) -> dict:
    """Plain-data form of a graph: nodes in text order, edges sorted."""
    return {
        "nodes": [
            {"id": n.id, "text": n.text, "part": n.part.value, "neg_of": n.neg_of}
            for n in g.nodes
        ],
        "edges": [
            {"src": src, "rel": rel.value, "dst": dst}
            for src, rel, dst in g.sorted_edges
        ],
    }


def serialize(g: TLG) -> str:
    """Canonical UTF-8 document: nodes in text order, edges sorted."""
    return json.dumps(to_doc(g), indent=2, ensure_ascii=False) + "\n"


def from_doc(doc) -> TLG:
    """Parse plain graph data, rejecting malformed or invariant-violating input."""
    if not isinstance(doc, dict) or set(doc) != {"nodes", "edges"}:
        raise GraphError("graph document must be an object with 'nodes' and 'edges'")

    nodes = []
    for raw in doc["nodes"]:
        if not isinstance(raw, dict) or set(raw) != _NODE_KEYS:
            raise GraphError(f"node object must have exactly keys {sorted(_NODE_KEYS)}: {raw!r}")
        if not isinstance(raw["id"], int) or isinstance(raw["id"], bool):
            raise GraphError(f"node id must be an integer: {raw['id']!r}")
        if not isinstance(raw["text"], str):
            raise GraphError(f"node text must be a string: {raw['text']!r}")
        if raw["part"] not in _PART_NAMES:
            raise GraphError(f"unknown part {raw['part']!r}")
        if raw["neg_of"] is not None and not isinstance(raw["neg_of"], int):
            raise GraphError(f"neg_of must be an integer or null: {raw['neg_of']!r}")
        nodes.append(Node(raw["id"], raw["text"], _PART_NAMES[raw["part"]], raw["neg_of"]))

    edges: list[Edge] = []
    seen: set[Edge] = set()
    for raw in doc["edges"]:
        if not isinstance(raw, dict) or set(raw) != _EDGE_KEYS:
            raise GraphError(f"edge object must have exactly keys {sorted(_EDGE_KEYS)}: {raw!r}")
        if raw["rel"] not in _RELATION_NAMES:
            raise GraphError(f"unknown relation {raw['rel']!r}")
        if not isinstance(raw["src"], int) or not isinstance(raw["dst"], int):
            raise GraphError(f"edge endpoints must be integers: {raw!r}")
        edge = (raw["src"], _RELATION_NAMES[raw["rel"]], raw["dst"])
        if edge in seen:
            raise GraphError(f"duplicate edge ({edge[0]}, {edge[1].value}, {edge[2]})")
        seen.add(edge)
        edges.append(edge)

    g = TLG(nodes=tuple(nodes), edges=frozenset(edges))
    violations = validate(g)
    if violations:
        raise GraphError("invalid graph document: " + "; ".join(violations))
    return g


def deserialize(text: str) -> TLG:
    """Parse a serialized graph document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphError(f"malformed graph document: {exc}") from exc
    return from_doc(doc)


def rendered_edges(g: TLG) -> tuple[tuple[Relation, int, int], ...]:
    """One entry per logical edge: impl/rev pairs collapse to a single impl
    arrow, symmetric pairs to a single undirected entry (smaller id first)."""
    out = []
    for src, rel, dst in g.sorted_edges:
        if rel is Relation.REV:
            continue
        if rel in SYMMETRIC_RELATIONS and src > dst:
            continue
        out.append((rel, src, dst))
    return tuple(out)


def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def to_dot(g: TLG) -> str:
    """Graphviz rendering with rev edges and mirror directions suppressed.

    Inferred nodes and edges are drawn dashed.
    """
    lines = ["digraph tlg {", "  rankdir=LR;", "  node [shape=box];"]
    for cluster, part in (("context", Part.CONTEXT), ("option", Part.OPTION)):
        members = [n for n in g.nodes if n.part is part]
        if not members:
            continue
        lines.append(f"  subgraph cluster_{cluster} {{")
        lines.append(f'    label="{cluster}";')
        for n in members:
            attrs = [f'label="{_dot_escape(n.text)}"']
            if n.id in g.inferred_nodes:
                attrs.append("style=dashed")
            lines.append(f"    n{n.id} [{' '.join(attrs)}];")
        lines.append("  }")
    for rel, src, dst in rendered_edges(g):
        attrs = [f'label="{rel.value}"']
        if rel in SYMMETRIC_RELATIONS:
            attrs.append("dir=none")
        if (src, rel, dst) in g.inferred_edges:
            attrs.append("style=dashed")
        lines.append(f"  n{src} -> n{dst} [{' '.join(attrs)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"

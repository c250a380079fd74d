"""Symbolic inference over TLGs.

Three single-step rules are supported:

* hypothetical syllogism (HS): from (u impl v) and (v impl w) add (u impl w);
* transposition (TR): from (u impl v) add the contrapositive edge between the
  negation twins of v and u, creating twin nodes where none are neg-linked;
* adjacency transmission (AT): a heuristic that copies a conj/disj/impl edge
  across an unk adjacency.

The module also provides two semantic oracles (literal-graph reachability and
truth-table entailment) that are implemented independently of the rule engine
so they can check it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Optional

from .graph import (
    Edge,
    GraphError,
    Node,
    Part,
    Relation,
    TLG,
    add_edge,
)


class Rule(Enum):
    HS = "hs"
    TR = "tr"
    AT = "at"


RULE_ORDER = {rule: i for i, rule in enumerate(Rule)}

ALL_RULES = frozenset(Rule)

NEGATION_PREFIX = "it is not the case that "

_AT_RELATIONS = (Relation.CONJ, Relation.DISJ, Relation.IMPL)


@dataclass(frozen=True)
class ExtensionCandidate:
    """One inference-rule instantiation over a concrete premise tuple.

    `new_nodes` may carry provisional negative ids; they are resolved to real
    node ids when the candidate is applied.  `new_edges` lists the logical
    additions explicitly (including rev/mirror twins).
    """

    rule: Rule
    premise_nodes: tuple[int, ...]
    premise_edges: tuple[Edge, ...]
    new_nodes: tuple[Node, ...] = ()
    new_edges: tuple[Edge, ...] = ()

    def sort_key(self):
        return (
            RULE_ORDER[self.rule],
            self.premise_nodes,
            tuple((s, r.value, d) for s, r, d in self.new_edges),
        )


def negation_twin(g: TLG, node_id: int) -> Optional[int]:
    """Lowest-id node neg-linked to `node_id`, if any."""
    linked = [dst for src, rel, dst in g.edges if src == node_id and rel is Relation.NEG]
    return min(linked) if linked else None


def _impl_edges(g: TLG) -> list[tuple[int, int]]:
    return [(s, d) for s, r, d in g.sorted_edges if r is Relation.IMPL]


def enumerate_candidates(g: TLG, rules: Iterable[Rule] = ALL_RULES) -> list[ExtensionCandidate]:
    """All single-step rule applications whose conclusion is absent from `g`.

    The result is deterministically ordered by (rule, premise ids, additions).
    """
    rules = frozenset(rules)
    out: list[ExtensionCandidate] = []

    impl = _impl_edges(g)
    if Rule.HS in rules:
        by_src: dict[int, list[int]] = {}
        for s, d in impl:
            by_src.setdefault(s, []).append(d)
        for i, j in impl:
            for k in by_src.get(j, ()):
                if k == i or (i, Relation.IMPL, k) in g.edges:
                    continue
                out.append(
                    ExtensionCandidate(
                        rule=Rule.HS,
                        premise_nodes=tuple(sorted({i, j, k})),
                        premise_edges=((i, Relation.IMPL, j), (j, Relation.IMPL, k)),
                        new_edges=((i, Relation.IMPL, k), (k, Relation.REV, i)),
                    )
                )

    if Rule.TR in rules:
        for i, j in impl:
            cand = _transposition_candidate(g, i, j)
            if cand is not None:
                out.append(cand)

    if Rule.AT in rules:
        unk_by_src: dict[int, list[int]] = {}
        for s, r, d in g.sorted_edges:
            if r is Relation.UNK:
                unk_by_src.setdefault(s, []).append(d)
        for a, rel, b in g.sorted_edges:
            if rel not in _AT_RELATIONS:
                continue
            for c in unk_by_src.get(a, ()):
                if c == b or (c, rel, b) in g.edges:
                    continue
                if rel is Relation.IMPL:
                    new_edges = ((c, Relation.IMPL, b), (b, Relation.REV, c))
                else:
                    new_edges = ((c, rel, b), (b, rel, c))
                out.append(
                    ExtensionCandidate(
                        rule=Rule.AT,
                        premise_nodes=tuple(sorted({a, b, c})),
                        premise_edges=((a, rel, b), (a, Relation.UNK, c)),
                        new_edges=new_edges,
                    )
                )

    out.sort(key=lambda c: c.sort_key())
    return out


def _transposition_candidate(g: TLG, i: int, j: int) -> Optional[ExtensionCandidate]:
    ni = negation_twin(g, i)
    nj = negation_twin(g, j)
    if ni is not None and nj is not None:
        if ni == nj:  # contrapositive would be a self-loop; trivially true
            return None
        if (nj, Relation.IMPL, ni) in g.edges:
            return None

    new_nodes: list[Node] = []
    new_edges: list[Edge] = []
    provisional = -1
    resolved_i, resolved_j = ni, nj
    for base, resolved in ((i, ni), (j, nj)):
        if resolved is None:
            node = g.node(base)
            twin = Node(provisional, NEGATION_PREFIX + node.text, node.part, neg_of=base)
            new_nodes.append(twin)
            new_edges.extend([(base, Relation.NEG, twin.id), (twin.id, Relation.NEG, base)])
            if base == i:
                resolved_i = twin.id
            else:
                resolved_j = twin.id
            provisional -= 1
    new_edges = [
        (resolved_j, Relation.IMPL, resolved_i),
        (resolved_i, Relation.REV, resolved_j),
    ] + new_edges

    premises = {i, j}
    if ni is not None:
        premises.add(ni)
    if nj is not None:
        premises.add(nj)
    return ExtensionCandidate(
        rule=Rule.TR,
        premise_nodes=tuple(sorted(premises)),
        premise_edges=((i, Relation.IMPL, j),),
        new_nodes=tuple(new_nodes),
        new_edges=tuple(new_edges),
    )


def apply_candidate(g: TLG, cand: ExtensionCandidate) -> TLG:
    """Apply one candidate: create missing nodes (appended after the existing
    nodes of the same part), then add its edges.  New nodes and edges carry
    the inferred flag.  Raises on stale premises."""
    for edge in cand.premise_edges:
        if edge not in g.edges:
            s, r, d = edge
            raise GraphError(f"stale candidate: premise edge ({s}, {r.value}, {d}) missing")

    resolution: dict[int, int] = {}
    created: list[Node] = []
    next_id = g.max_id() + 1
    for twin in cand.new_nodes:
        # Reuse a twin created by an earlier application in the same batch.
        existing = negation_twin(g, twin.neg_of) if twin.neg_of is not None else None
        if existing is not None:
            resolution[twin.id] = existing
            continue
        real = Node(next_id, twin.text, twin.part, twin.neg_of)
        resolution[twin.id] = next_id
        created.append(real)
        next_id += 1

    if created:
        context = [n for n in g.nodes if n.part is Part.CONTEXT]
        options = [n for n in g.nodes if n.part is Part.OPTION]
        context += [n for n in created if n.part is Part.CONTEXT]
        options += [n for n in created if n.part is Part.OPTION]
        g = replace(
            g,
            nodes=tuple(context + options),
            inferred_nodes=g.inferred_nodes | {n.id for n in created},
        )

    for src, rel, dst in cand.new_edges:
        src = resolution.get(src, src)
        dst = resolution.get(dst, dst)
        if src == dst:
            raise GraphError("degenerate candidate: resolved edge is a self-loop")
        g = add_edge(g, src, rel, dst, inferred=True)
    return g


def closure(g: TLG, rules: Iterable[Rule] = ALL_RULES, max_nodes: int = 200) -> TLG:
    """Fixpoint of enumerate-and-apply-all.

    Terminates because rule applications only grow the edge set over a node
    universe bounded by one negation twin per node; raises when node creation
    would exceed `max_nodes`.
    """
    rules = frozenset(rules)
    while True:
        candidates = enumerate_candidates(g, rules)
        if not candidates:
            return g
        for cand in candidates:
            g = apply_candidate(g, cand)
            if len(g.nodes) > max_nodes:
                raise GraphError(f"closure exceeded the node budget of {max_nodes}")


# ---------------------------------------------------------------------------
# Semantic oracles (independent of the rule engine).
# ---------------------------------------------------------------------------

Literal = tuple[int, bool]  # (anchor node id, polarity)


def literal_map(g: TLG) -> dict[int, Literal]:
    """Assign each node a literal by 2-coloring the neg-edge components.

    The anchor of a component is its lowest node id, taken positive.  Nodes
    neg-linked to the same node collapse onto the same literal.  An odd neg
    cycle would force a node to equal its own negation and is rejected.
    """
    neg_adj: dict[int, set[int]] = {n.id: set() for n in g.nodes}
    for src, rel, dst in g.edges:
        if rel is Relation.NEG:
            neg_adj[src].add(dst)

    mapping: dict[int, Literal] = {}
    for node in sorted(neg_adj):
        if node in mapping:
            continue
        anchor = node
        component = {node}
        queue = [node]
        while queue:
            u = queue.pop()
            for v in neg_adj[u]:
                if v not in component:
                    component.add(v)
                    queue.append(v)
        anchor = min(component)
        mapping[anchor] = (anchor, True)
        queue = [anchor]
        while queue:
            u = queue.pop()
            for v in sorted(neg_adj[u]):
                flipped = (mapping[u][0], not mapping[u][1])
                if v not in mapping:
                    mapping[v] = flipped
                    queue.append(v)
                elif mapping[v] != flipped:
                    raise GraphError(
                        f"inconsistent negation structure around nodes {u} and {v}"
                    )
    return mapping


def _complement(lit: Literal) -> Literal:
    return (lit[0], not lit[1])


def reachability_oracle(g: TLG) -> frozenset[tuple[Literal, Literal]]:
    """All ordered literal pairs connected by a directed implication path of
    length >= 1 in the contrapositive-completed literal digraph.

    Consults only impl and neg edges; implemented by breadth-first search.
    Reflexive literal pairs are omitted: a self-implication is a tautology
    and cannot be represented as a TLG edge.
    """
    lits = literal_map(g)
    succ: dict[Literal, set[Literal]] = {}
    for src, rel, dst in g.edges:
        if rel is not Relation.IMPL:
            continue
        a, b = lits[src], lits[dst]
        succ.setdefault(a, set()).add(b)
        succ.setdefault(_complement(b), set()).add(_complement(a))

    pairs: set[tuple[Literal, Literal]] = set()
    for start in succ:
        seen: set[Literal] = set()
        queue = list(succ[start])
        while queue:
            lit = queue.pop()
            if lit in seen:
                continue
            seen.add(lit)
            queue.extend(succ.get(lit, ()))
        pairs.update((start, lit) for lit in seen if lit != start)
    return frozenset(pairs)


def entailment_oracle(g: TLG, hypothesis: tuple[int, int], max_atoms: int = 14) -> bool:
    """Truth-table check: does the theory {impl edges} over the literal
    mapping of `g` semantically entail hypothesis[0] -> hypothesis[1]?

    Decided by exhaustive assignment enumeration over the atoms of the
    literal mapping; rejects graphs with more than `max_atoms` atoms.
    """
    lits = literal_map(g)
    for node_id in hypothesis:
        if node_id not in lits:
            raise GraphError(f"hypothesis references unknown node {node_id}")
    atoms = sorted({anchor for anchor, _ in lits.values()})
    if len(atoms) > max_atoms:
        raise GraphError(f"too many propositional atoms: {len(atoms)} > {max_atoms}")

    constraints = [
        (lits[src], lits[dst])
        for src, rel, dst in g.sorted_edges
        if rel is Relation.IMPL
    ]
    hyp_a, hyp_b = lits[hypothesis[0]], lits[hypothesis[1]]

    def truth(assignment: dict[int, bool], lit: Literal) -> bool:
        return assignment[lit[0]] == lit[1]

    for values in itertools.product((False, True), repeat=len(atoms)):
        assignment = dict(zip(atoms, values))
        if any(truth(assignment, a) and not truth(assignment, b) for a, b in constraints):
            continue
        if truth(assignment, hyp_a) and not truth(assignment, hyp_b):
            return False
    return True

"""Raw TLG construction: heuristic clause segmentation, rhetorical-to-logical
relation mapping, negation detection, unk fallback edges, and size limiting.

The segmenter is a transparent connective-lexicon stand-in for a full
discourse parser: it splits sentences at connective boundaries and tags each
split with a rhetorical relation, which is then mapped onto a logical edge.
Pre-built graph documents can be ingested instead (see the CLI), so every
downstream component can also be driven by exactly specified graphs.
"""

from __future__ import annotations

import random
import re
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
    graph_from,
    inverse_relation,
    rendered_edges,
    validate,
)


class RhetoricalRelation(Enum):
    LIST = "LIST"
    CONTRAST = "CONTRAST"
    DISJUNCTION = "DISJUNCTION"
    RESULT = "RESULT"
    CAUSE = "CAUSE"
    PURPOSE = "PURPOSE"
    CONDITION = "CONDITION"
    BACKGROUND = "BACKGROUND"


_RHETORICAL_TO_LOGICAL = {
    RhetoricalRelation.LIST: Relation.CONJ,
    RhetoricalRelation.CONTRAST: Relation.CONJ,
    RhetoricalRelation.DISJUNCTION: Relation.DISJ,
    RhetoricalRelation.RESULT: Relation.IMPL,
    RhetoricalRelation.CAUSE: Relation.REV,
    RhetoricalRelation.PURPOSE: Relation.REV,
    RhetoricalRelation.CONDITION: Relation.REV,
    RhetoricalRelation.BACKGROUND: Relation.REV,
}

# Relations whose clause is a satellite of the clause it modifies.  When such
# a connective opens a sentence ("If A, B"), the emitted relation points from
# the main clause to the subordinate clause so that the mapped rev edge puts
# the implication in the right direction (A impl B).
_SATELLITE_RELATIONS = frozenset(
    {
        RhetoricalRelation.CAUSE,
        RhetoricalRelation.PURPOSE,
        RhetoricalRelation.CONDITION,
        RhetoricalRelation.BACKGROUND,
    }
)


def map_rhetorical(rel: RhetoricalRelation) -> Relation:
    """Total mapping from rhetorical to logical relations."""
    return _RHETORICAL_TO_LOGICAL[rel]


@dataclass(frozen=True)
class SegmentedText:
    """Ordered text units plus the rhetorical relations found between them."""

    edus: tuple[tuple[str, Part], ...]
    relations: tuple[tuple[int, RhetoricalRelation, int], ...]


DEFAULT_CONNECTIVES: tuple[tuple[str, RhetoricalRelation], ...] = (
    ("if", RhetoricalRelation.CONDITION),
    ("unless", RhetoricalRelation.CONDITION),
    ("when", RhetoricalRelation.BACKGROUND),
    ("because", RhetoricalRelation.CAUSE),
    ("since", RhetoricalRelation.CAUSE),
    ("so that", RhetoricalRelation.PURPOSE),
    ("in order to", RhetoricalRelation.PURPOSE),
    ("so", RhetoricalRelation.RESULT),
    ("therefore", RhetoricalRelation.RESULT),
    ("thus", RhetoricalRelation.RESULT),
    ("then", RhetoricalRelation.RESULT),
    ("and", RhetoricalRelation.LIST),
    ("but", RhetoricalRelation.CONTRAST),
    ("however", RhetoricalRelation.CONTRAST),
    ("or", RhetoricalRelation.DISJUNCTION),
)


@dataclass(frozen=True)
class ConnectiveLexicon:
    """Connective patterns that mark clause boundaries.

    Multi-word connectives are matched before their prefixes.
    """

    patterns: tuple[tuple[str, RhetoricalRelation], ...] = DEFAULT_CONNECTIVES

    def ordered(self) -> tuple[tuple[str, RhetoricalRelation], ...]:
        return tuple(sorted(self.patterns, key=lambda p: (-len(p[0]), p[0])))

    @classmethod
    def from_file(cls, path: str) -> "ConnectiveLexicon":
        """Load `connective<TAB>rhetorical-relation` lines; '#' starts a comment."""
        patterns = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise ValueError(f"{path}:{lineno}: expected 'connective<TAB>relation'")
                connective, rel_name = parts[0].strip().lower(), parts[1].strip().upper()
                try:
                    rel = RhetoricalRelation[rel_name]
                except KeyError:
                    raise ValueError(f"{path}:{lineno}: unknown rhetorical relation {rel_name!r}")
                patterns.append((connective, rel))
        if not patterns:
            raise ValueError(f"{path}: empty lexicon")
        return cls(patterns=tuple(patterns))


_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")


def _clean_clause(text: str) -> str:
    return text.strip().strip(",;").strip()


def _split_sentence(
    sentence: str, lexicon: ConnectiveLexicon
) -> tuple[list[str], list[tuple[int, RhetoricalRelation, int]]]:
    """Split one sentence into clauses at connective boundaries.

    Returns clause texts in text order and relations over local indices.
    Relations for satellite-type connectives at sentence start are emitted
    main-clause-first so the Table-style mapping lands the right direction.
    """
    sentence = _clean_clause(sentence.rstrip(".!?"))
    if not sentence:
        return [], []

    # Sentence-initial subordinator: "If A, B" / "If A then B".
    for connective, rel in lexicon.ordered():
        m = re.match(
            rf"^{re.escape(connective)}\s+(.+?)(?:\s*,\s*(?:then\s+)?|\s+then\s+)(.+)$",
            sentence,
            flags=re.IGNORECASE,
        )
        if m:
            satellite, nucleus = _clean_clause(m.group(1)), _clean_clause(m.group(2))
            if satellite and nucleus:
                clauses = [satellite, nucleus]
                if rel in _SATELLITE_RELATIONS:
                    relations = [(1, rel, 0)]
                else:
                    relations = [(0, rel, 1)]
                return clauses, relations

    # Medial connectives: split left to right into a clause chain.
    connective_alts = "|".join(re.escape(c) for c, _ in lexicon.ordered())
    splitter = re.compile(rf"\s*,?\s+(?:{connective_alts})\s+", flags=re.IGNORECASE)
    by_connective = {c.lower(): r for c, r in lexicon.patterns}

    clauses: list[str] = []
    relations: list[tuple[int, RhetoricalRelation, int]] = []
    rest = sentence
    while True:
        m = splitter.search(rest)
        if not m:
            break
        left = _clean_clause(rest[: m.start()])
        right = _clean_clause(rest[m.end() :])
        if not left or not right:
            break
        connective = _clean_clause(m.group(0)).lower()
        rel = by_connective[connective]
        clauses.append(left)
        idx = len(clauses) - 1
        relations.append((idx, rel, idx + 1))
        rest = right
    clauses.append(_clean_clause(rest))
    return clauses, relations


def segment(context: str, option: str, lexicon: Optional[ConnectiveLexicon] = None) -> SegmentedText:
    """Heuristically segment context and option text into EDUs with relations."""
    if not context.strip() or not option.strip():
        raise ValueError("context and option text must be non-empty")
    lexicon = lexicon or ConnectiveLexicon()

    edus: list[tuple[str, Part]] = []
    relations: list[tuple[int, RhetoricalRelation, int]] = []
    for text, part in ((context, Part.CONTEXT), (option, Part.OPTION)):
        for sentence in _SENTENCE_SPLIT.split(text.strip()):
            if not sentence.strip():
                continue
            clauses, local = _split_sentence(sentence, lexicon)
            offset = len(edus)
            edus.extend((c, part) for c in clauses)
            relations.extend((offset + a, rel, offset + b) for a, rel, b in local)
    return SegmentedText(edus=tuple(edus), relations=tuple(relations))


NEGATORS = frozenset({"not", "no", "never"})

# Small shipped table of antonymous adverb pairs for the substitution rule.
ANTONYM_ADVERBS = frozenset(
    frozenset(pair)
    for pair in (
        ("always", "never"),
        ("often", "rarely"),
        ("more", "less"),
        ("everywhere", "nowhere"),
        ("up", "down"),
        ("increase", "decrease"),
        ("rise", "fall"),
    )
)

_TOKEN = re.compile(r"[a-z0-9]+")


def _tokens(text: str) -> list[str]:
    # "n't" contractions count as the negator "not".
    return _TOKEN.findall(text.lower().replace("n't", " not"))


def detect_negation(a: str, b: str) -> bool:
    """True iff one shipped syntactic rule fires: the token sequences differ
    by insertion/removal of a single negator, or by substitution of one
    antonymous adverb pair."""
    ta, tb = _tokens(a), _tokens(b)
    if abs(len(ta) - len(tb)) == 1:
        longer, shorter = (ta, tb) if len(ta) > len(tb) else (tb, ta)
        for i in range(len(longer)):
            if longer[i] in NEGATORS and longer[:i] + longer[i + 1 :] == shorter:
                return True
        return False
    if len(ta) == len(tb) and ta != tb:
        diffs = [(x, y) for x, y in zip(ta, tb) if x != y]
        return len(diffs) == 1 and frozenset(diffs[0]) in ANTONYM_ADVERBS
    return False


def build_raw_tlg(seg: SegmentedText) -> TLG:
    """Construct the raw TLG: one node per EDU in text order, mapped logical
    edges, neg edges for detected negation pairs, and a bidirectional unk
    edge between textually adjacent EDUs that ended up unrelated."""
    for text, _ in seg.edus:
        if not text.strip():
            raise ValueError("EDU strings must be non-empty")
    for a, _, b in seg.relations:
        if not (0 <= a < len(seg.edus)) or not (0 <= b < len(seg.edus)):
            raise ValueError(f"relation references EDU out of range: ({a}, {b})")
    seen_option = False
    for _, part in seg.edus:
        if part is Part.OPTION:
            seen_option = True
        elif seen_option:
            raise ValueError("context EDUs must precede option EDUs")

    nodes = tuple(Node(i, text, part) for i, (text, part) in enumerate(seg.edus))
    g = graph_from(nodes)
    for a, rel, b in seg.relations:
        if a != b:
            g = add_edge(g, a, map_rhetorical(rel), b)
    for i in range(len(nodes)):
        for j in range(i + 1, len(nodes)):
            if detect_negation(nodes[i].text, nodes[j].text):
                g = add_edge(g, i, Relation.NEG, j)
    for i in range(len(nodes) - 1):
        if not _any_edge_between(g, i, i + 1):
            g = add_edge(g, i, Relation.UNK, i + 1)

    violations = validate(g)
    if violations:  # construction guarantees this never triggers
        raise GraphError("constructed graph is invalid: " + "; ".join(violations))
    return g


def _any_edge_between(g: TLG, a: int, b: int) -> bool:
    return any(
        (src == a and dst == b) or (src == b and dst == a) for src, _, dst in g.edges
    )


def _adjacency(rendered: Iterable[tuple[Relation, int, int]]) -> dict[int, list[tuple[int, int]]]:
    """node id -> list of (neighbor id, rendered edge index)."""
    adj: dict[int, list[tuple[int, int]]] = {}
    for idx, (_, a, b) in enumerate(rendered):
        adj.setdefault(a, []).append((b, idx))
        adj.setdefault(b, []).append((a, idx))
    return adj


def is_weakly_connected(g: TLG) -> bool:
    if len(g.nodes) <= 1:
        return True
    adj = _adjacency(rendered_edges(g))
    start = g.nodes[0].id
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v, _ in adj.get(u, ()):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(g.nodes)


def _bridges(rendered: tuple[tuple[Relation, int, int], ...], node_ids: list[int]) -> set[int]:
    """Indices of rendered edges that are bridges of the multigraph.

    Parallel rendered edges between the same node pair are never bridges:
    the traversal skips only the single edge index it arrived through.
    """
    adj = _adjacency(rendered)
    disc: dict[int, int] = {}
    low: dict[int, int] = {}
    bridges: set[int] = set()
    counter = 0
    for root in node_ids:
        if root in disc:
            continue
        stack: list[tuple[int, int, int]] = [(root, -1, 0)]
        disc[root] = low[root] = counter
        counter += 1
        while stack:
            u, in_edge, i = stack[-1]
            neighbors = adj.get(u, [])
            if i < len(neighbors):
                stack[-1] = (u, in_edge, i + 1)
                v, edge_idx = neighbors[i]
                if edge_idx == in_edge:
                    continue
                if v not in disc:
                    disc[v] = low[v] = counter
                    counter += 1
                    stack.append((v, edge_idx, 0))
                else:
                    low[u] = min(low[u], disc[v])
            else:
                stack.pop()
                if stack:
                    parent = stack[-1][0]
                    low[parent] = min(low[parent], low[u])
                    if low[u] > disc[parent]:
                        bridges.add(in_edge)
    return bridges


def limit_graph(g: TLG, max_nodes: int = 25, max_edges: int = 50, seed: int = 0) -> TLG:
    """Shrink a graph to the size budget while keeping it weakly connected.

    Nodes are reduced by merging seeded-uniformly chosen unk-connected pairs
    from the same part (the earlier node in text order absorbs the later;
    texts joined by a space).  Edges are reduced by deleting seeded-uniformly
    chosen non-bridge rendered edges.  Deterministic per seed.
    """
    violations = validate(g)
    if violations:
        raise GraphError("limit_graph requires a valid graph: " + "; ".join(violations))
    if not is_weakly_connected(g):
        raise GraphError("limit_graph requires a weakly connected graph")
    if max_nodes < 1 or max_edges < 0:
        raise GraphError("limits must be positive")

    rng = random.Random(seed)

    while len(g.nodes) > max_nodes:
        part_of = {n.id: n.part for n in g.nodes}
        candidates = sorted(
            (min(a, b), max(a, b))
            for rel, a, b in rendered_edges(g)
            if rel is Relation.UNK and part_of[a] is part_of[b]
        )
        if not candidates:
            raise GraphError(
                f"cannot reach {max_nodes} nodes: no same-part unk-connected pair left to merge"
            )
        a, b = rng.choice(candidates)
        keep_id, drop_id = (a, b) if g.index_of(a) < g.index_of(b) else (b, a)
        g = _merge_nodes(g, keep_id, drop_id)

    while len(g.edges) > max_edges:
        rendered = rendered_edges(g)
        node_ids = [n.id for n in g.nodes]
        bridge_idx = _bridges(rendered, node_ids)
        deletable = [rendered[i] for i in range(len(rendered)) if i not in bridge_idx]
        if not deletable:
            raise GraphError(
                f"cannot reach {max_edges} edges: every remaining edge is a bridge"
            )
        rel, a, b = rng.choice(deletable)
        pair = frozenset({(a, rel, b), (b, inverse_relation(rel), a)})
        g = replace(g, edges=g.edges - pair, inferred_edges=g.inferred_edges - pair)
    return g


def _merge_nodes(g: TLG, keep_id: int, drop_id: int) -> TLG:
    keep = g.node(keep_id)
    drop = g.node(drop_id)
    merged_text = keep.text + " " + drop.text

    def remap(i: int) -> int:
        return keep_id if i == drop_id else i

    nodes = []
    for n in g.nodes:
        if n.id == drop_id:
            continue
        text = merged_text if n.id == keep_id else n.text
        neg_of = n.neg_of
        if neg_of == drop_id:
            neg_of = keep_id if n.id != keep_id else None
        nodes.append(Node(n.id, text, n.part, neg_of))

    edges = frozenset(
        (remap(src), rel, remap(dst))
        for src, rel, dst in g.edges
        if remap(src) != remap(dst)
    )
    inferred_edges = frozenset(
        (remap(src), rel, remap(dst))
        for src, rel, dst in g.inferred_edges
        if remap(src) != remap(dst)
    )
    merged = TLG(
        nodes=tuple(nodes),
        edges=edges,
        inferred_nodes=g.inferred_nodes - {drop_id},
        inferred_edges=inferred_edges & edges,
    )
    # Dropping a neg edge by merging can strand a neg_of annotation.
    fixed = []
    for n in merged.nodes:
        if n.neg_of is not None and (n.id, Relation.NEG, n.neg_of) not in merged.edges:
            fixed.append(Node(n.id, n.text, n.part, None))
        else:
            fixed.append(n)
    return TLG(tuple(fixed), merged.edges, merged.inferred_nodes, merged.inferred_edges)

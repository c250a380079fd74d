"""Synthetic multiple-choice entailment tasks with oracle-verified labels.

Each instance pairs a context graph (an implication chain over propositional
symbols, plus distractor edges) with four candidate implications, exactly one
of which follows from the context.  The correct option requires the requested
inference rules: chain endpoints for hypothetical syllogism, contrapositives
for transposition.  Every label is checked against the truth-table oracle at
generation time, and `audit` re-checks shipped datasets independently.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

from .graph import (
    GraphError,
    Node,
    Part,
    Relation,
    TLG,
    add_edge,
    from_doc,
    graph_from,
    to_doc,
    validate,
)
from .rules import Rule, entailment_oracle, negation_twin

QUESTION = "Which option follows from the context?"

Expr = tuple[tuple[str, bool], tuple[str, bool]]  # ((symbol, negated), (symbol, negated))


class GeneratorError(ValueError):
    """The generator spec cannot be satisfied."""


@dataclass(frozen=True)
class GeneratorSpec:
    vars: int = 5
    chain_len: int = 3
    needs_rules: tuple[str, ...] = ("hs",)
    distractors: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.vars < 2:
            raise GeneratorError("need at least two symbols")
        rules = set(self.needs_rules)
        if not rules or not rules <= {"hs", "tr"}:
            raise GeneratorError("needs_rules must be a non-empty subset of {hs, tr}")
        if "hs" in rules and self.chain_len < 2:
            raise GeneratorError("chain_len must be >= 2 when hs is required")
        if self.chain_len < 1:
            raise GeneratorError("chain_len must be >= 1")
        if self.vars < self.chain_len + 1:
            raise GeneratorError("vars must cover the chain")

    def to_dict(self) -> dict:
        return {
            "vars": self.vars,
            "chain_len": self.chain_len,
            "needs_rules": list(self.needs_rules),
            "distractors": self.distractors,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GeneratorSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise GeneratorError(f"unknown generator spec keys: {sorted(unknown)}")
        doc = dict(doc)
        if "needs_rules" in doc:
            doc["needs_rules"] = tuple(doc["needs_rules"])
        return cls(**doc)


@dataclass
class TaskInstance:
    id: str
    context_graph: Optional[TLG]
    question: str
    option_graphs: list[Optional[TLG]]
    option_texts: list[str]
    gold: int
    context_text: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "context_graph": to_doc(self.context_graph) if self.context_graph else None,
            "question": self.question,
            "option_graphs": [to_doc(g) if g else None for g in self.option_graphs],
            "option_texts": list(self.option_texts),
            "gold": self.gold,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TaskInstance":
        return cls(
            id=doc["id"],
            context_graph=from_doc(doc["context_graph"]) if doc.get("context_graph") else None,
            question=doc["question"],
            option_graphs=[from_doc(g) if g else None for g in doc["option_graphs"]],
            option_texts=list(doc["option_texts"]),
            gold=int(doc["gold"]),
        )


def _literal_text(symbol: str, negated: bool) -> str:
    return f"not {symbol}" if negated else symbol


def option_text(expr: Expr) -> str:
    (a, na), (b, nb) = expr
    return f"if {_literal_text(a, na)} then {_literal_text(b, nb)}"


def option_graph_for(expr: Expr) -> TLG:
    (a, na), (b, nb) = expr
    nodes = (
        Node(0, _literal_text(a, na), Part.OPTION),
        Node(1, _literal_text(b, nb), Part.OPTION),
    )
    return graph_from(nodes, [(0, Relation.IMPL, 1)])


def expr_from_option_graph(g: TLG) -> Expr:
    """Recover the implication expression from a two-node option graph."""
    impl = [(s, d) for s, r, d in g.sorted_edges if r is Relation.IMPL]
    if len(g.nodes) != 2 or len(impl) != 1:
        raise GraphError("option graph is not a single implication")
    src, dst = impl[0]
    left = g.node(src).text
    right = g.node(dst).text

    def parse(text: str) -> tuple[str, bool]:
        if text.startswith("not "):
            return text[4:], True
        return text, False

    return (parse(left), parse(right))


def expr_entailed(context: TLG, expr: Expr) -> bool:
    """Truth-table check of an implication against the context theory.

    Negated sides are resolved to (or materialized as) negation twins of the
    symbol's context node before consulting the oracle.
    """
    by_text = {n.text: n.id for n in context.nodes}
    g = context
    endpoints = []
    for symbol, negated in expr:
        if symbol not in by_text:
            raise GraphError(f"expression symbol {symbol!r} not in context")
        node_id = by_text[symbol]
        if negated:
            twin = negation_twin(g, node_id)
            if twin is None:
                twin = g.max_id() + 1
                part = g.node(node_id).part
                g = replace(g, nodes=g.nodes + (Node(twin, f"not {symbol}", part),))
                g = add_edge(g, node_id, Relation.NEG, twin)
            node_id = twin
        endpoints.append(node_id)
    return entailment_oracle(g, (endpoints[0], endpoints[1]))


def _build_context(rng: random.Random, spec: GeneratorSpec) -> tuple[TLG, list[list[str]]]:
    """Implication chains over shuffled symbols plus noise edges.

    As many disjoint chains as the symbol budget allows are laid out in a
    random text order, with conj distractor edges across chains and the unk
    adjacency fallback.  Multiple chains matter: cross-chain endpoint pairs
    give wrong options whose local degree signature matches the gold's, so
    telling them apart genuinely requires connectivity reasoning.
    """
    symbols = [f"P{i}" for i in range(spec.vars)]
    per_chain = spec.chain_len + 1
    n_chains = max(1, spec.vars // per_chain)
    pool = rng.sample(symbols, n_chains * per_chain)
    chains = [pool[i * per_chain : (i + 1) * per_chain] for i in range(n_chains)]
    chain_of = {sym: k for k, chain in enumerate(chains) for sym in chain}

    text_order = list(symbols)
    rng.shuffle(text_order)
    position = {sym: i for i, sym in enumerate(text_order)}
    nodes = tuple(Node(i, sym, Part.CONTEXT) for i, sym in enumerate(text_order))
    g = graph_from(nodes)

    for chain in chains:
        for a, b in zip(chain, chain[1:]):
            g = add_edge(g, position[a], Relation.IMPL, position[b])

    added = 0
    attempts = 0
    while added < spec.distractors and attempts < 50:
        attempts += 1
        a, b = rng.sample(symbols, 2)
        if chain_of.get(a) is not None and chain_of.get(a) == chain_of.get(b):
            continue  # an intra-chain shortcut edge would leak connectivity
        if _edge_between(g, position[a], position[b]):
            continue
        g = add_edge(g, position[a], Relation.CONJ, position[b])
        added += 1

    for i in range(len(nodes) - 1):
        if not _edge_between(g, i, i + 1):
            g = add_edge(g, i, Relation.UNK, i + 1)
    return g, chains


def _edge_between(g: TLG, a: int, b: int) -> bool:
    return any((s == a and d == b) or (s == b and d == a) for s, _, d in g.edges)


def _gold_expr(rng: random.Random, spec: GeneratorSpec, chain: list[str]) -> Expr:
    rules = set(spec.needs_rules)
    if rules == {"hs"}:
        # a two-hop pair: one syllogism application away from the raw graph
        i = rng.randrange(len(chain) - 2)
        return ((chain[i], False), (chain[i + 2], False))
    if rules == {"tr"}:
        a, b = rng.choice(list(zip(chain, chain[1:])))
        return ((b, True), (a, True))
    # both rules: contrapositive of a two-hop pair
    i = rng.randrange(len(chain) - 2)
    return ((chain[i + 2], True), (chain[i], True))


def _distractor_stream(
    rng: random.Random,
    spec: GeneratorSpec,
    chains: list[list[str]],
    gold_chain: list[str],
    gold: Expr,
) -> list[Expr]:
    """Candidate wrong options in the gold's surface form, hardest first.

    Cross-chain endpoint pairs (identical local degree signature to the
    gold) come first, then wrong-direction pairs within chains, then pairs
    touching spare symbols.  Every candidate is still oracle-checked.
    """
    symbols = [f"P{i}" for i in range(spec.vars)]
    negated = gold[0][1]

    def orient(first: str, second: str) -> Expr:
        # gold surface form: positive options read (start, end), negated
        # options read (not end, not start)
        if negated:
            return ((second, True), (first, True))
        return ((first, False), (second, False))

    # same-position cross-chain pairs have exactly the gold's local degree
    # signature, so only connectivity tells them apart
    twins = [
        orient(a[i], b[min(i + 2, len(b) - 1)])
        for a in chains
        for b in chains
        if a is not b
        for i in range(max(1, len(a) - 2))
    ]
    wrong_direction = []
    for chain in chains:
        for i in range(len(chain)):
            for j in range(i + 1, len(chain)):
                wrong_direction.append(orient(chain[j], chain[i]))
    chained = {sym for chain in chains for sym in chain}
    rest = [
        ((a, negated), (b, negated))
        for a in symbols
        for b in symbols
        if a != b and not (a in chained and b in chained)
    ]
    rng.shuffle(twins)
    rng.shuffle(wrong_direction)
    rng.shuffle(rest)
    stream: list[Expr] = []
    for i in range(max(len(twins), len(wrong_direction), len(rest))):
        for group in (twins, wrong_direction, rest):
            if i < len(group) and group[i] != gold:
                stream.append(group[i])
    return stream


def _generate_instance(rng: random.Random, spec: GeneratorSpec, inst_id: str, gold_pos: int) -> TaskInstance:
    for _ in range(40):
        context, chains = _build_context(rng, spec)
        gold_chain = rng.choice(chains)
        gold = _gold_expr(rng, spec, gold_chain)
        if not expr_entailed(context, gold):
            continue  # defensive; by construction the gold is entailed
        wrong: list[Expr] = []
        for expr in _distractor_stream(rng, spec, chains, gold_chain, gold):
            if len(wrong) == 3:
                break
            if expr in wrong:
                continue
            if not expr_entailed(context, expr):
                wrong.append(expr)
        if len(wrong) < 3:
            continue
        exprs = wrong[:gold_pos] + [gold] + wrong[gold_pos:]
        return TaskInstance(
            id=inst_id,
            context_graph=context,
            question=QUESTION,
            option_graphs=[option_graph_for(e) for e in exprs],
            option_texts=[option_text(e) for e in exprs],
            gold=gold_pos,
        )
    raise GeneratorError(f"could not satisfy generator spec after bounded retries: {spec}")


def generate(n: int, spec: GeneratorSpec) -> list[TaskInstance]:
    """Deterministically generate `n` oracle-verified instances with balanced
    gold positions."""
    if n < 0:
        raise GeneratorError("n must be non-negative")
    master = random.Random(f"tlgnet-synth:{spec.seed}")
    positions = [i % 4 for i in range(n)]
    master.shuffle(positions)
    instances = []
    for i in range(n):
        rng = random.Random(f"tlgnet-synth:{spec.seed}:{i}")
        instances.append(_generate_instance(rng, spec, f"inst-{spec.seed}-{i:05d}", positions[i]))
    return instances


def audit(instances: Iterable[TaskInstance]) -> list[str]:
    """Independently re-verify labels: exactly the gold option must be
    entailed by the context theory; graphs must validate."""
    problems: list[str] = []
    for inst in instances:
        if inst.context_graph is None:
            problems.append(f"{inst.id}: no context graph to audit")
            continue
        bad = validate(inst.context_graph)
        if bad:
            problems.append(f"{inst.id}: invalid context graph: {'; '.join(bad)}")
            continue
        entailed = []
        for k, og in enumerate(inst.option_graphs):
            if og is None:
                problems.append(f"{inst.id}: option {k} has no graph")
                continue
            bad = validate(og)
            if bad:
                problems.append(f"{inst.id}: invalid option graph {k}: {'; '.join(bad)}")
                continue
            try:
                expr = expr_from_option_graph(og)
                if expr_entailed(inst.context_graph, expr):
                    entailed.append(k)
            except GraphError as exc:
                problems.append(f"{inst.id}: option {k}: {exc}")
        if entailed != [inst.gold]:
            problems.append(
                f"{inst.id}: entailed options {entailed} do not match gold {inst.gold}"
            )
    return problems


def save_dataset(path: str, instances: Sequence[TaskInstance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_dict(), ensure_ascii=False) + "\n")


def load_dataset(path: str) -> list[TaskInstance]:
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                instances.append(TaskInstance.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: bad dataset record: {exc}") from exc
    return instances

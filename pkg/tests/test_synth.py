"""Synthetic task generation: oracle-verified labels, determinism, balance,
and the structural guarantees the learnability experiment relies on."""

import json

import pytest

from tlgnet.graph import Relation, validate
from tlgnet.ingest import build_raw_tlg, segment
from tlgnet.rules import Rule
from tlgnet.synth import (
    GeneratorError,
    GeneratorSpec,
    TaskInstance,
    audit,
    expr_entailed,
    expr_from_option_graph,
    generate,
    load_dataset,
    option_graph_for,
    option_text,
    save_dataset,
)


class TestGeneratorSpec:
    def test_defaults_valid(self):
        GeneratorSpec()

    def test_hs_needs_chain(self):
        with pytest.raises(GeneratorError):
            GeneratorSpec(chain_len=1, needs_rules=("hs",))

    def test_unknown_rule(self):
        with pytest.raises(GeneratorError):
            GeneratorSpec(needs_rules=("at",))

    def test_vars_must_cover_chain(self):
        with pytest.raises(GeneratorError):
            GeneratorSpec(vars=3, chain_len=3)


class TestGenerate:
    def test_hs_gold_is_chain_endpoints(self):
        """The oracle confirms the gold and rejects every distractor."""
        data = generate(12, GeneratorSpec(vars=5, chain_len=3, needs_rules=("hs",), seed=1))
        for inst in data:
            for k, og in enumerate(inst.option_graphs):
                expr = expr_from_option_graph(og)
                assert expr_entailed(inst.context_graph, expr) == (k == inst.gold)

    def test_tr_gold_is_contrapositive(self):
        data = generate(8, GeneratorSpec(vars=4, chain_len=2, needs_rules=("tr",), seed=2))
        for inst in data:
            gold_expr = expr_from_option_graph(inst.option_graphs[inst.gold])
            (a, na), (b, nb) = gold_expr
            assert na and nb
            assert expr_entailed(inst.context_graph, gold_expr)

    def test_hs_tr_gold_negates_endpoints(self):
        data = generate(6, GeneratorSpec(vars=5, chain_len=2, needs_rules=("hs", "tr"), seed=3))
        for inst in data:
            (a, na), (b, nb) = expr_from_option_graph(inst.option_graphs[inst.gold])
            assert na and nb

    def test_gold_edge_absent_from_raw_context(self):
        """The no-ext baseline cannot see the gold edge: the context graph
        never contains the chain-endpoint implication directly."""
        data = generate(10, GeneratorSpec(vars=5, chain_len=3, needs_rules=("hs",), seed=4))
        for inst in data:
            (a, _), (b, _) = expr_from_option_graph(inst.option_graphs[inst.gold])
            by_text = {n.text: n.id for n in inst.context_graph.nodes}
            assert (by_text[a], Relation.IMPL, by_text[b]) not in inst.context_graph.edges

    def test_label_balance(self):
        data = generate(40, GeneratorSpec(seed=5))
        counts = [0, 0, 0, 0]
        for inst in data:
            counts[inst.gold] += 1
        assert counts == [10, 10, 10, 10]

    def test_deterministic_files(self, tmp_path):
        spec = GeneratorSpec(seed=6)
        a_path, b_path = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_dataset(str(a_path), generate(10, spec))
        save_dataset(str(b_path), generate(10, spec))
        assert a_path.read_bytes() == b_path.read_bytes()

    def test_graphs_validate(self):
        data = generate(10, GeneratorSpec(seed=7, distractors=2))
        for inst in data:
            assert validate(inst.context_graph) == []
            for og in inst.option_graphs:
                assert validate(og) == []

    def test_options_distinct(self):
        data = generate(15, GeneratorSpec(seed=8))
        for inst in data:
            exprs = [expr_from_option_graph(og) for og in inst.option_graphs]
            assert len(set(exprs)) == 4

    def test_infeasible_spec_raises(self):
        # two symbols cannot produce three distinct non-entailed distractors
        with pytest.raises(GeneratorError):
            generate(1, GeneratorSpec(vars=2, chain_len=1, needs_rules=("tr",), seed=0))


class TestOptionForms:
    def test_text_and_graph_agree_through_segmentation(self):
        """Ingesting the option text reproduces the option graph's
        implication (both directions of the build)."""
        expr = (("P1", False), ("P4", False))
        text = option_text(expr)
        graph = option_graph_for(expr)
        seg = segment("P0.", text)
        built = build_raw_tlg(seg)
        opt_nodes = [n for n in built.nodes if n.part.value == "option"]
        assert [n.text for n in opt_nodes] == ["P1", "P4"]
        ids = {n.text: n.id for n in opt_nodes}
        assert (ids["P1"], Relation.IMPL, ids["P4"]) in built.edges
        assert expr_from_option_graph(graph) == expr

    def test_negated_option_text(self):
        expr = (("P2", True), ("P0", True))
        assert option_text(expr) == "if not P2 then not P0"
        seg = segment("P0.", option_text(expr))
        built = build_raw_tlg(seg)
        opt_texts = [n.text for n in built.nodes if n.part.value == "option"]
        assert opt_texts == ["not P2", "not P0"]


class TestAudit:
    def test_fresh_dataset_clean(self):
        data = generate(10, GeneratorSpec(seed=9))
        assert audit(data) == []

    def test_corrupted_gold_flagged(self):
        data = generate(4, GeneratorSpec(seed=10))
        data[1].gold = (data[1].gold + 1) % 4
        problems = audit(data)
        assert len(problems) == 1
        assert data[1].id in problems[0]

    def test_empty_dataset(self):
        assert audit([]) == []


class TestDatasetIO:
    def test_roundtrip(self, tmp_path):
        data = generate(5, GeneratorSpec(seed=11))
        path = tmp_path / "data.jsonl"
        save_dataset(str(path), data)
        back = load_dataset(str(path))
        assert len(back) == 5
        for a, b in zip(data, back):
            assert a.id == b.id
            assert a.gold == b.gold
            assert a.context_graph == b.context_graph
            assert a.option_graphs == b.option_graphs
            assert a.option_texts == b.option_texts

    def test_bad_record_reported_with_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "x"}\n')
        with pytest.raises(ValueError, match="bad dataset record"):
            load_dataset(str(path))

"""Graph core: edge pairing, validation, serialization, DOT export."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tlgnet.graph import (
    GraphError,
    Node,
    Part,
    Relation,
    TLG,
    add_edge,
    deserialize,
    graph_from,
    rendered_edges,
    serialize,
    to_dot,
    validate,
)

from conftest import impl_chain, make_nodes


class TestAddEdge:
    def test_impl_inserts_rev_pair(self):
        g = graph_from(make_nodes(2))
        g = add_edge(g, 0, Relation.IMPL, 1)
        assert g.edges == {(0, Relation.IMPL, 1), (1, Relation.REV, 0)}

    def test_conj_inserts_mirror(self):
        g = graph_from(make_nodes(2))
        g = add_edge(g, 0, Relation.CONJ, 1)
        assert g.edges == {(0, Relation.CONJ, 1), (1, Relation.CONJ, 0)}

    def test_rev_inserts_impl_pair(self):
        g = graph_from(make_nodes(2))
        g = add_edge(g, 0, Relation.REV, 1)
        assert g.edges == {(0, Relation.REV, 1), (1, Relation.IMPL, 0)}

    def test_idempotent(self):
        g = graph_from(make_nodes(2))
        g = add_edge(g, 0, Relation.IMPL, 1)
        again = add_edge(g, 0, Relation.IMPL, 1)
        assert again.edges == g.edges
        mirror = add_edge(g, 1, Relation.REV, 0)
        assert mirror.edges == g.edges

    def test_self_loop_rejected(self):
        g = graph_from(make_nodes(2))
        with pytest.raises(GraphError, match="self-loop"):
            add_edge(g, 0, Relation.IMPL, 0)

    def test_unknown_node_rejected(self):
        g = graph_from(make_nodes(2))
        with pytest.raises(GraphError, match="unknown node"):
            add_edge(g, 0, Relation.IMPL, 5)


class TestValidate:
    def test_chain_is_clean(self, chain3):
        assert validate(chain3) == []

    def test_missing_rev_pair(self):
        g = TLG(nodes=make_nodes(2), edges=frozenset({(0, Relation.IMPL, 1)}))
        problems = validate(g)
        assert len(problems) == 1
        assert "rev" in problems[0]

    def test_missing_symmetric_mirror(self):
        g = TLG(nodes=make_nodes(2), edges=frozenset({(0, Relation.NEG, 1)}))
        assert any("mirror" in p for p in validate(g))

    def test_dangling_neg_of(self):
        nodes = (Node(0, "a", Part.CONTEXT), Node(1, "b", Part.CONTEXT, neg_of=3))
        g = TLG(nodes=nodes)
        assert any("neg_of" in p for p in validate(g))

    def test_neg_of_without_edge(self):
        nodes = (Node(0, "a", Part.CONTEXT), Node(1, "b", Part.CONTEXT, neg_of=0))
        g = TLG(nodes=nodes)
        assert any("no neg edge" in p for p in validate(g))

    def test_option_before_context(self):
        nodes = (Node(0, "a", Part.OPTION), Node(1, "b", Part.CONTEXT))
        g = TLG(nodes=nodes)
        assert any("after an option" in p for p in validate(g))

    def test_edge_to_missing_node(self):
        g = TLG(nodes=make_nodes(2), edges=frozenset({(0, Relation.UNK, 9), (9, Relation.UNK, 0)}))
        assert any("missing node" in p for p in validate(g))


class TestSerialization:
    def test_empty_graph_roundtrip(self):
        g = TLG()
        text = serialize(g)
        assert '"nodes": []' in text and '"edges": []' in text
        assert deserialize(text) == g

    def test_chain_roundtrip_bit_exact(self, chain3):
        text = serialize(chain3)
        back = deserialize(text)
        assert back == chain3
        assert serialize(back) == text

    def test_broken_pairing_rejected(self):
        """Documents that violate impl/rev pairing are reported via validate."""
        doc = (
            '{"nodes": [{"id": 0, "text": "a", "part": "context", "neg_of": null},'
            ' {"id": 1, "text": "b", "part": "context", "neg_of": null}],'
            ' "edges": [{"src": 0, "rel": "impl", "dst": 1}]}'
        )
        with pytest.raises(GraphError, match="rev"):
            deserialize(doc)

    def test_duplicate_edge_rejected(self):
        doc = (
            '{"nodes": [{"id": 0, "text": "a", "part": "context", "neg_of": null},'
            ' {"id": 1, "text": "b", "part": "context", "neg_of": null}],'
            ' "edges": [{"src": 0, "rel": "unk", "dst": 1}, {"src": 0, "rel": "unk", "dst": 1},'
            ' {"src": 1, "rel": "unk", "dst": 0}]}'
        )
        with pytest.raises(GraphError, match="duplicate"):
            deserialize(doc)

    def test_malformed_json_rejected(self):
        with pytest.raises(GraphError, match="malformed"):
            deserialize("{nope")

    def test_unknown_relation_rejected(self):
        doc = '{"nodes": [], "edges": [{"src": 0, "rel": "xor", "dst": 1}]}'
        with pytest.raises(GraphError, match="unknown relation"):
            deserialize(doc)


class TestDot:
    def test_impl_pair_renders_one_arrow(self):
        g = graph_from(make_nodes(2), [(0, Relation.IMPL, 1)])
        dot = to_dot(g)
        assert dot.count("->") == 1
        assert 'label="impl"' in dot
        assert "rev" not in dot

    def test_conj_renders_one_undirected_edge(self):
        g = graph_from(make_nodes(2), [(0, Relation.CONJ, 1)])
        dot = to_dot(g)
        assert dot.count("->") == 1
        assert "dir=none" in dot

    def test_empty_graph(self):
        dot = to_dot(TLG())
        assert dot.startswith("digraph")
        assert dot.rstrip().endswith("}")
        assert "->" not in dot

    def test_inferred_elements_dashed(self):
        g = graph_from(make_nodes(2))
        g = add_edge(g, 0, Relation.IMPL, 1, inferred=True)
        assert "style=dashed" in to_dot(g)


class TestInvariants:
    def test_impl_rev_counts_match(self, chain3):
        impl = sum(1 for _, r, _ in chain3.edges if r is Relation.IMPL)
        rev = sum(1 for _, r, _ in chain3.edges if r is Relation.REV)
        assert impl == rev == 3

    def test_rendered_edges_collapse_pairs(self, chain3):
        assert len(rendered_edges(chain3)) == 3

    @given(st.lists(st.tuples(st.integers(0, 5), st.sampled_from(list(Relation)), st.integers(0, 5)), max_size=25))
    @settings(max_examples=60, deadline=None)
    def test_add_edge_keeps_graphs_valid(self, triples):
        """Any add_edge sequence over existing nodes yields a valid graph."""
        g = graph_from(make_nodes(4, 2))
        for src, rel, dst in triples:
            if src == dst:
                continue
            g = add_edge(g, src, rel, dst)
        assert validate(g) == []

    @given(st.lists(st.tuples(st.integers(0, 4), st.sampled_from(list(Relation)), st.integers(0, 4)), max_size=15))
    @settings(max_examples=60, deadline=None)
    def test_serialize_roundtrip(self, triples):
        g = graph_from(make_nodes(3, 2))
        for src, rel, dst in triples:
            if src != dst:
                g = add_edge(g, src, rel, dst)
        assert deserialize(serialize(g)) == g
        assert serialize(deserialize(serialize(g))) == serialize(g)

import random

import pytest

from tlgnet.graph import Node, Part, Relation, add_edge, graph_from


def make_nodes(n_context: int, n_option: int = 0, prefix: str = "u"):
    nodes = [Node(i, f"{prefix}{i}", Part.CONTEXT) for i in range(n_context)]
    nodes += [
        Node(n_context + i, f"{prefix}{n_context + i}", Part.OPTION) for i in range(n_option)
    ]
    return tuple(nodes)


def impl_chain(length: int, n_option: int = 0):
    """Context graph u0 -> u1 -> ... with `length` impl edges."""
    nodes = make_nodes(length + 1, n_option)
    edges = [(i, Relation.IMPL, i + 1) for i in range(length)]
    return graph_from(nodes, edges)


def random_impl_neg_graph(seed: int, max_nodes: int = 8):
    """Seeded random graph over impl edges plus a disjoint neg matching,
    the corpus shape used by the symbolic acceptance criteria."""
    rng = random.Random(f"corpus:{seed}")
    n = rng.randint(2, max_nodes)
    g = graph_from(make_nodes(n))
    for src in range(n):
        for dst in range(n):
            if src != dst and rng.random() < 0.25:
                g = add_edge(g, src, Relation.IMPL, dst)
    ids = list(range(n))
    rng.shuffle(ids)
    pairs = max(0, min(len(ids) // 2 - 1, rng.randint(0, 2)))
    for k in range(pairs):
        g = add_edge(g, ids[2 * k], Relation.NEG, ids[2 * k + 1])
    return g


@pytest.fixture
def chain3():
    return impl_chain(3)

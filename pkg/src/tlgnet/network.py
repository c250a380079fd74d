"""The reasoning network over text logic graphs.

Per option, the forward pass iterates L times: enumerate candidate rule
applications on the raw graph, score their relevance against the option
embedding, admit those above the threshold, and run gated attention message
passing over the working graph.  Node representations of raw nodes survive
across iterations (inferred nodes are rebuilt each time from the raw graph),
and the final pooled graph representation together with the per-iteration
relevance means feeds the answer scorer.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .graph import GraphError, Node, Part, Relation, TLG, add_edge, validate
from .ingest import ConnectiveLexicon, build_raw_tlg, detect_negation, segment
from .params import ParameterStore
from .rules import (
    ExtensionCandidate,
    NEGATION_PREFIX,
    Rule,
    apply_candidate,
    closure,
    enumerate_candidates,
)
from .tensor import (
    Tensor,
    add,
    concat,
    div,
    exp,
    gru_sequence,
    index_select,
    leaky_relu,
    linear,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    stack,
    sub,
    tanh,
    transpose,
    tsum,
)

VARIANTS = ("standard", "no-ext", "full-ext", "no-at", "n2n", "n2n+")

EMBED_MODES = ("hash", "table")

_RULE_NAMES = {r.value: r for r in Rule}


@dataclass
class ModelConfig:
    """Dimensions, iteration count, gating threshold and ablation switches."""

    d: int = 64
    L: int = 2
    tau: float = 0.6
    gamma: float = 0.25
    rules: tuple[str, ...] = ("hs", "tr", "at")
    variant: str = "standard"
    heads: int = 1
    share_attention: bool = False
    embed_mode: str = "hash"
    closure_max_nodes: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be at least 1")
        if not (0.0 <= self.tau <= 1.0):
            raise ValueError("tau must lie in [0, 1]")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError("gamma must lie in [0, 1)")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.embed_mode not in EMBED_MODES:
            raise ValueError(f"unknown embed mode {self.embed_mode!r}")
        if self.d % 2 != 0:
            raise ValueError("d must be even (the sequence encoder splits it)")
        if self.d % self.heads != 0:
            raise ValueError("d must be divisible by heads")
        for name in self.rules:
            if name not in _RULE_NAMES:
                raise ValueError(f"unknown rule {name!r}")

    @property
    def effective_rules(self) -> frozenset[Rule]:
        """Enabled rules; the no-at variant never uses adjacency transmission."""
        rules = {_RULE_NAMES[name] for name in self.rules}
        if self.variant == "no-at":
            rules.discard(Rule.AT)
        return frozenset(rules)

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "L": self.L,
            "tau": self.tau,
            "gamma": self.gamma,
            "rules": list(self.rules),
            "variant": self.variant,
            "heads": self.heads,
            "share_attention": self.share_attention,
            "embed_mode": self.embed_mode,
            "closure_max_nodes": self.closure_max_nodes,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        doc = dict(doc)
        if "rules" in doc:
            doc["rules"] = tuple(doc["rules"])
        return cls(**doc)


@dataclass
class EncodedInstance:
    """Context/question/option embeddings plus per-node initial rows."""

    g_c: Tensor
    g_q: Tensor
    g_o: Tensor
    h0: Tensor

    def __post_init__(self):
        if self.h0.data.ndim != 2:
            raise ValueError("h0 must be a (nodes x dim) matrix")


def _text_hash_vector(text: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}|{text}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
    return rng.standard_normal(dim) / np.sqrt(dim)


def parse_negated_text(text: str) -> tuple[str, bool]:
    """Strip negation prefixes, returning (base text, negated?)."""
    base = text.strip()
    negated = False
    changed = True
    while changed:
        changed = False
        lowered = base.lower()
        for prefix in (NEGATION_PREFIX, "not "):
            if lowered.startswith(prefix):
                base = base[len(prefix) :].strip()
                negated = not negated
                changed = True
                break
    return base, negated


class EmbeddingProvider:
    """Maps node texts to d-dimensional vectors.

    `hash` mode derives a fixed pseudo-random vector from the text itself;
    `table` mode looks up a learned row keyed by (base symbol, negation flag)
    and falls back to hash vectors for out-of-vocabulary text.
    """

    def __init__(
        self,
        dim: int,
        mode: str = "hash",
        vocab: Optional[Sequence[str]] = None,
        params: Optional[ParameterStore] = None,
        seed: int = 0,
    ):
        if mode not in EMBED_MODES:
            raise ValueError(f"unknown embed mode {mode!r}")
        if mode == "table":
            if vocab is None or params is None or "embed.table" not in params:
                raise ValueError("table mode needs a vocabulary and a registered embed.table")
        self.dim = dim
        self.mode = mode
        self.vocab = list(vocab) if vocab is not None else []
        self._index = {sym: i for i, sym in enumerate(self.vocab)}
        self._params = params
        self.seed = seed

    def node_vector(self, text: str) -> Tensor:
        if self.mode == "table":
            base, negated = parse_negated_text(text)
            row = self._index.get(base)
            if row is not None:
                table = self._params["embed.table"]
                return reshape(index_select(table, [2 * row + (1 if negated else 0)]), (self.dim,))
        return Tensor(_text_hash_vector(text, self.dim, self.seed))

    def encode(self, g: TLG, question: str) -> EncodedInstance:
        if not g.nodes:
            raise GraphError("cannot encode an empty graph")
        rows = [self.node_vector(n.text) for n in g.nodes]
        h0 = stack(rows)
        ctx = [i for i, n in enumerate(g.nodes) if n.part is Part.CONTEXT]
        opt = [i for i, n in enumerate(g.nodes) if n.part is Part.OPTION]
        zero = Tensor(np.zeros(self.dim))
        g_c = mean(index_select(h0, ctx), axis=0) if ctx else zero
        g_o = mean(index_select(h0, opt), axis=0) if opt else zero
        g_q = self.node_vector(question)
        return EncodedInstance(g_c=g_c, g_q=g_q, g_o=g_o, h0=h0)


def vocab_from_graphs(graphs: Sequence[TLG]) -> list[str]:
    """Sorted base symbols found in node texts, for table-mode embeddings."""
    symbols = set()
    for g in graphs:
        for n in g.nodes:
            base, _ = parse_negated_text(n.text)
            symbols.add(base)
    return sorted(symbols)


def _att_layer(cfg: ModelConfig, l: int) -> int:
    return 0 if cfg.share_attention else l


def build_parameters(cfg: ModelConfig, vocab: Optional[Sequence[str]] = None) -> ParameterStore:
    """Register every learnable group in a deterministic order.

    Message-passing matrices (per-relation, self and subgraph transforms) are
    stored as right factors: a node-row matrix H is transformed as H @ W.
    """
    store = ParameterStore(cfg.seed)
    d = cfg.d
    dh = d // cfg.heads
    for l in range(cfg.L):
        for rel in Relation:
            store.register(f"mp{l}.rel.{rel.value}", (d, d))
        store.register(f"mp{l}.self", (d, d))
        store.register(f"mp{l}.subgraph", (d, d))
    for l in range(1 if cfg.share_attention else cfg.L):
        store.register(f"mp{l}.nbr_att.w", (cfg.heads, 2 * dh), fan_in=2 * dh)
        store.register(f"mp{l}.nbr_att.b", (cfg.heads,), zero=True)
        store.register(f"mp{l}.agg_att.w", (cfg.heads, 2 * dh), fan_in=2 * dh)
        store.register(f"mp{l}.agg_att.b", (cfg.heads,), zero=True)
        store.register(f"mp{l}.gate.w", (2 * d,), fan_in=2 * d)
        store.register(f"mp{l}.gate.b", (1,), zero=True)
    store.register("rel.w", (2 * d,), fan_in=2 * d)
    # optimistic start: candidates score clear of the default threshold, so
    # extension is active and stable from the first step and training prunes
    # it down rather than having to bootstrap through the threshold
    rel_bias = store.register("rel.b", (1,), zero=True)
    rel_bias.data[:] = 1.0
    store.register("fuse.w", (d, cfg.L * d), fan_in=cfg.L * d)
    store.register("fuse.b", (d,), zero=True)
    half = d // 2
    for direction in ("fw", "bw"):
        store.register(f"gru.{direction}.w_ih", (3 * half, d), fan_in=d)
        store.register(f"gru.{direction}.w_hh", (3 * half, half), fan_in=half)
        store.register(f"gru.{direction}.b_ih", (3 * half,), zero=True)
        store.register(f"gru.{direction}.b_hh", (3 * half,), zero=True)
    store.register("pool_att.w", (2 * d,), fan_in=2 * d)
    store.register("pool_att.b", (1,), zero=True)
    score_in = 4 * d + cfg.L
    store.register("score.w1", (d, score_in), fan_in=score_in)
    store.register("score.b1", (d,), zero=True)
    # no output bias: a scalar shift shared by all options is inert under
    # softmax scoring and would sit at exactly zero gradient forever
    store.register("score.w2", (d,), fan_in=d)
    if cfg.embed_mode == "table":
        if vocab is None:
            raise ValueError("table embeddings need a vocabulary")
        store.register("embed.table", (2 * len(vocab), d), fan_in=d)
    return store


def combine_context_option(ctx: TLG, opt: TLG) -> TLG:
    """Join a context graph and a standalone option graph into one TLG.

    Option nodes are renumbered above the context ids and forced to the
    option part.  Cross links: negation pairs get neg edges, textually
    identical EDUs get an unk edge (the desk-scale stand-in for an encoder
    that reads context and option jointly), and the last context node is
    unk-linked to the first option node when nothing else connects them.
    """
    if not ctx.nodes or not opt.nodes:
        raise GraphError("context and option graphs must be non-empty")
    offset = ctx.max_id() + 1
    remap = {n.id: offset + i for i, n in enumerate(opt.nodes)}
    opt_nodes = tuple(
        Node(remap[n.id], n.text, Part.OPTION, remap[n.neg_of] if n.neg_of is not None else None)
        for n in opt.nodes
    )
    edges = ctx.edges | frozenset((remap[s], r, remap[d]) for s, r, d in opt.edges)
    g = TLG(nodes=ctx.nodes + opt_nodes, edges=edges)
    for c in ctx.nodes:
        for o in opt_nodes:
            if detect_negation(c.text, o.text):
                g = add_edge(g, c.id, Relation.NEG, o.id)
            elif c.text.strip() == o.text.strip():
                g = add_edge(g, c.id, Relation.UNK, o.id)
    last_ctx = ctx.nodes[-1].id
    first_opt = opt_nodes[0].id
    if not any(
        (s == last_ctx and d == first_opt) or (s == first_opt and d == last_ctx)
        for s, _, d in g.edges
    ):
        g = add_edge(g, last_ctx, Relation.UNK, first_opt)
    violations = validate(g)
    if violations:
        raise GraphError("combined graph is invalid: " + "; ".join(violations))
    return g


def densify_cross_unk(g: TLG) -> TLG:
    """Add a bidirectional unk edge between every context/option node pair."""
    for c in g.context_nodes:
        for o in g.option_nodes:
            g = add_edge(g, c.id, Relation.UNK, o.id)
    return g


def count_cross_unk_pairs(g: TLG) -> int:
    return sum(
        1
        for c in g.context_nodes
        for o in g.option_nodes
        if (c.id, Relation.UNK, o.id) in g.edges
    )


# ---------------------------------------------------------------------------
# Relevance scoring and adaptive extension.
# ---------------------------------------------------------------------------


def score_candidate(
    cand: ExtensionCandidate,
    h: Tensor,
    g_o: Tensor,
    params: ParameterStore,
    node_rows: dict[int, int],
) -> Tensor:
    """Relevance of one candidate: sigmoid(linear(mean premise reps, g_o)).

    `node_rows` maps node ids to rows of `h`; every premise node must have a
    representation.
    """
    try:
        rows = [node_rows[i] for i in cand.premise_nodes]
    except KeyError as exc:
        raise GraphError(f"premise node {exc.args[0]} has no representation") from None
    h_eps = mean(index_select(h, rows), axis=0)
    logit = add(matmul(concat([h_eps, g_o]), params["rel.w"]), params["rel.b"])
    return reshape(sigmoid(logit), ())


def _half_slices(w: Tensor, d: int, cache: Optional[dict], key):
    if cache is not None and key in cache:
        return cache[key]
    halves = (index_select(w, list(range(d))), index_select(w, list(range(d, 2 * d))))
    if cache is not None:
        cache[key] = halves
    return halves


def _batch_relevance(
    cands: list[ExtensionCandidate],
    h: Tensor,
    g_o: Tensor,
    params: ParameterStore,
    node_rows: dict[int, int],
    cache: Optional[dict] = None,
) -> Tensor:
    # premise means for all candidates in one matmul with a selection matrix
    select = np.zeros((len(cands), h.data.shape[0]))
    for k, cand in enumerate(cands):
        for i in cand.premise_nodes:
            select[k, node_rows[i]] = 1.0 / len(cand.premise_nodes)
    means = matmul(Tensor(select), h)
    d = h.data.shape[1]
    w_premise, w_option = _half_slices(params["rel.w"], d, cache, "rel.w")
    logits = add(add(matmul(means, w_premise), matmul(g_o, w_option)), params["rel.b"])
    return sigmoid(logits)


@dataclass
class CandidateRecord:
    rule: str
    premises: tuple[int, ...]
    rel: float
    admitted: bool

    def to_dict(self) -> dict:
        return {
            "rule": self.rule,
            "premises": list(self.premises),
            "rel": self.rel,
            "admitted": self.admitted,
        }


@dataclass
class ExtensionStep:
    """Outcome of one adaptive-extension round."""

    working: TLG
    raw_positions: list[int]
    assembled: Tensor
    candidates: list[CandidateRecord]
    rel_mean: Tensor


def _assemble_rows(
    working: TLG, g_raw: TLG, h: Tensor, provider: EmbeddingProvider
) -> tuple[Tensor, list[int]]:
    """Rows for every working node: raw nodes keep their current state, new
    nodes are embedded from their (negated) text."""
    raw_ids = {n.id: i for i, n in enumerate(g_raw.nodes)}
    if len(working.nodes) == len(g_raw.nodes):
        return h, list(range(len(g_raw.nodes)))
    blocks: list[Tensor] = []
    raw_positions: list[int] = [0] * len(g_raw.nodes)
    pending_raw: list[int] = []
    position = 0

    def flush_raw():
        nonlocal pending_raw
        if pending_raw:
            blocks.append(index_select(h, pending_raw))
            pending_raw = []

    for node in working.nodes:
        if node.id in raw_ids:
            raw_positions[raw_ids[node.id]] = position
            pending_raw.append(raw_ids[node.id])
        else:
            flush_raw()
            blocks.append(reshape(provider.node_vector(node.text), (1, provider.dim)))
        position += 1
    flush_raw()
    return concat(blocks, axis=0), raw_positions


@lru_cache(maxsize=4096)
def _cached_candidates(g_raw: TLG, rules: frozenset) -> tuple:
    return tuple(enumerate_candidates(g_raw, rules))


@lru_cache(maxsize=4096)
def _cached_extension(g_raw: TLG, admitted: tuple) -> TLG:
    working = g_raw
    for cand in admitted:
        working = apply_candidate(working, cand)
    return working


def adaptive_extend(
    g_raw: TLG,
    h: Tensor,
    g_o: Tensor,
    cfg: ModelConfig,
    params: ParameterStore,
    provider: EmbeddingProvider,
) -> ExtensionStep:
    """Enumerate candidates on the raw graph, admit those scoring above tau,
    and apply them to a working copy.

    The no-ext variant skips enumeration entirely; full-ext replaces the
    thresholded extension with the deductive closure while still recording
    relevance scores for the raw-graph candidates.
    """
    node_rows = {n.id: i for i, n in enumerate(g_raw.nodes)}
    identity = list(range(len(g_raw.nodes)))
    if cfg.variant == "no-ext":
        return ExtensionStep(g_raw, identity, h, [], Tensor(0.0))

    cands = list(_cached_candidates(g_raw, cfg.effective_rules))
    if not cands:
        return ExtensionStep(g_raw, identity, h, [], Tensor(0.0))

    rels = _batch_relevance(cands, h, g_o, params, node_rows)
    rel_values = [float(v) for v in rels.data]
    rel_mean = mean(rels)

    if cfg.variant == "full-ext":
        working = closure(g_raw, cfg.effective_rules, cfg.closure_max_nodes)
        admitted_flags = [True] * len(cands)
    else:
        admitted_flags = [v > cfg.tau for v in rel_values]
        working = _cached_extension(
            g_raw, tuple(c for c, adm in zip(cands, admitted_flags) if adm)
        )

    records = [
        CandidateRecord(c.rule.value, c.premise_nodes, v, adm)
        for c, v, adm in zip(cands, rel_values, admitted_flags)
    ]
    assembled, raw_positions = _assemble_rows(working, g_raw, h, provider)
    return ExtensionStep(working, raw_positions, assembled, records, rel_mean)


# ---------------------------------------------------------------------------
# Message passing.
# ---------------------------------------------------------------------------


@dataclass
class MessageTrace:
    beta: Optional[list[float]]
    attention_neighbors: Optional[list[list[Optional[list[float]]]]]
    attention_aggregate: Optional[list[list[Optional[list[float]]]]]


class _MaskPack:
    """Constants derived from an attention mask, built once per structure."""

    __slots__ = ("mask", "bias", "mask_t", "empty")

    def __init__(self, mask: np.ndarray):
        self.mask = mask
        self.bias = Tensor((mask - 1.0) * 1.0e4)
        self.mask_t = Tensor(mask)
        self.empty = Tensor((mask.sum(axis=1, keepdims=True) == 0).astype(np.float64))


def _masked_softmax_rows(scores: Tensor, pack: _MaskPack) -> Tensor:
    """Row-wise softmax restricted to mask entries; empty rows become zero."""
    shifted = add(scores, pack.bias)
    shift = Tensor(np.max(shifted.data, axis=1, keepdims=True))
    weights = mul(exp(sub(shifted, shift)), pack.mask_t)
    denom = tsum(weights, axis=1, keepdims=True)
    return div(weights, add(denom, pack.empty))


def _split_attention_params(w: Tensor, b: Tensor, heads: int, dh: int, cache: Optional[dict], key):
    """Per-head (w_i, w_j, b_h) slices, shared across forwards via `cache` so
    one tape node serves every option in a batch (gradients accumulate)."""
    if cache is not None and key in cache:
        return cache[key]
    slices = []
    for head in range(heads):
        w_h = reshape(index_select(w, [head]), (2 * dh,))
        w_i = index_select(w_h, list(range(dh)))
        w_j = index_select(w_h, list(range(dh, 2 * dh)))
        b_h = index_select(b, [head])
        slices.append((w_i, w_j, b_h))
    if cache is not None:
        cache[key] = slices
    return slices


def _pair_attention(
    H: Tensor,
    pack: _MaskPack,
    slices: list[tuple[Tensor, Tensor, Tensor]],
) -> list[Tensor]:
    """Additive pair attention per head over the mask; returns per-head alpha."""
    n, d = H.data.shape
    heads = len(slices)
    dh = d // heads
    alphas = []
    for head, (w_i, w_j, b_h) in enumerate(slices):
        H_h = H if heads == 1 else index_select(H, list(range(head * dh, (head + 1) * dh)), axis=1)
        left = reshape(matmul(H_h, w_i), (n, 1))
        right = reshape(matmul(H_h, w_j), (1, n))
        scores = leaky_relu(add(add(left, right), b_h))
        alphas.append(_masked_softmax_rows(scores, pack))
    return alphas


@lru_cache(maxsize=512)
def _structure(g: TLG) -> dict:
    order = [n.id for n in g.nodes]
    idx = {nid: i for i, nid in enumerate(order)}
    n = len(order)
    adjacency = {rel: np.zeros((n, n)) for rel in Relation}
    for src, rel, dst in g.sorted_edges:
        adjacency[rel][idx[dst], idx[src]] = 1.0  # message flows src -> dst
    adjacency = {rel: a for rel, a in adjacency.items() if a.any()}
    neighbor_mask = np.zeros((n, n))
    for a in adjacency.values():
        neighbor_mask = np.maximum(neighbor_mask, a)
    part = np.array([0 if node.part is Part.CONTEXT else 1 for node in g.nodes])
    cross_mask = (part[:, None] != part[None, :]).astype(np.float64)
    normalized = {}
    norm_tensors = {}
    for rel, a in adjacency.items():
        deg = a.sum(axis=1, keepdims=True)
        normalized[rel] = a / np.maximum(deg, 1.0)
        norm_tensors[rel] = Tensor(normalized[rel])
    return {
        "n": n,
        "adjacency": adjacency,
        "normalized": normalized,
        "norm_tensors": norm_tensors,
        "neighbor_mask": neighbor_mask,
        "cross_mask": cross_mask,
        "nbr_pack": _MaskPack(neighbor_mask),
        "cross_pack": _MaskPack(cross_mask),
        "has_both_parts": bool(part.min() == 0 and part.max() == 1) if n else False,
    }


def _rows_to_trace(alphas: list[Tensor], mask: np.ndarray) -> list[list[Optional[list[float]]]]:
    out = []
    for alpha in alphas:
        rows: list[Optional[list[float]]] = []
        for i in range(mask.shape[0]):
            if mask[i].sum() == 0:
                rows.append(None)
            else:
                rows.append([float(x) for x in alpha.data[i]])
        out.append(rows)
    return out


def message_pass(
    g: TLG,
    H: Tensor,
    cfg: ModelConfig,
    params: ParameterStore,
    l: int,
    collect_traces: bool = True,
    cache: Optional[dict] = None,
) -> tuple[Tensor, MessageTrace]:
    """One round of node updates over the working graph.

    Standard-family variants use joint attention over all neighbors, relation
    matrices normalized by per-relation neighbor counts, a self transform and
    a gated message from the attention-aggregated opposite part.  The n2n
    variants use plain normalized relation sums without attention or gating.
    """
    struct = _structure(g)
    n = struct["n"]
    if H.data.shape[0] != n:
        raise GraphError("every node of the working graph needs a representation")
    al = _att_layer(cfg, l)
    plain = cfg.variant in ("n2n", "n2n+")

    transformed = {
        rel: matmul(H, params[f"mp{l}.rel.{rel.value}"]) for rel in struct["adjacency"]
    }
    total = matmul(H, params[f"mp{l}.self"])

    trace_beta: Optional[list[float]] = None
    trace_nbr = None
    trace_agg = None

    dh_att = cfg.d // cfg.heads
    if plain:
        for rel, norm_t in struct["norm_tensors"].items():
            total = add(total, matmul(norm_t, transformed[rel]))
    else:
        nbr_slices = _split_attention_params(
            params[f"mp{al}.nbr_att.w"], params[f"mp{al}.nbr_att.b"], cfg.heads, dh_att,
            cache, ("nbr_att", al),
        )
        alphas = _pair_attention(H, struct["nbr_pack"], nbr_slices)
        dh = cfg.d // cfg.heads
        head_msgs = []
        for head, alpha in enumerate(alphas):
            msg = None
            for rel, norm_t in struct["norm_tensors"].items():
                weights = mul(alpha, norm_t)
                t_r = (
                    transformed[rel]
                    if cfg.heads == 1
                    else index_select(transformed[rel], list(range(head * dh, (head + 1) * dh)), axis=1)
                )
                term = matmul(weights, t_r)
                msg = term if msg is None else add(msg, term)
            if msg is None:
                msg = Tensor(np.zeros((n, dh if cfg.heads > 1 else cfg.d)))
            head_msgs.append(msg)
        total = add(total, head_msgs[0] if cfg.heads == 1 else concat(head_msgs, axis=1))
        if collect_traces:
            trace_nbr = _rows_to_trace(alphas, struct["neighbor_mask"])

        if struct["has_both_parts"]:
            agg_slices = _split_attention_params(
                params[f"mp{al}.agg_att.w"], params[f"mp{al}.agg_att.b"], cfg.heads, dh_att,
                cache, ("agg_att", al),
            )
            agg_alphas = _pair_attention(H, struct["cross_pack"], agg_slices)
            if cfg.heads == 1:
                h_opp = matmul(agg_alphas[0], H)
            else:
                h_opp = concat(
                    [
                        matmul(alpha, index_select(H, list(range(k * dh, (k + 1) * dh)), axis=1))
                        for k, alpha in enumerate(agg_alphas)
                    ],
                    axis=1,
                )
            gate_in = concat([H, h_opp], axis=1)
            beta = sigmoid(add(matmul(gate_in, params[f"mp{al}.gate.w"]), params[f"mp{al}.gate.b"]))
            subgraph = mul(reshape(beta, (n, 1)), matmul(h_opp, params[f"mp{l}.subgraph"]))
            total = add(total, subgraph)
            if collect_traces:
                trace_beta = [float(x) for x in beta.data]
                trace_agg = _rows_to_trace(agg_alphas, struct["cross_mask"])
        elif collect_traces:
            trace_beta = [0.0] * n

    return relu(total), MessageTrace(trace_beta, trace_nbr, trace_agg)


# ---------------------------------------------------------------------------
# Pooling, scoring and the per-instance forward pass.
# ---------------------------------------------------------------------------


@dataclass
class IterationTrace:
    candidates: list[CandidateRecord]
    rel_mean: float
    admitted_count: int
    working_nodes: int
    working_edges: int
    beta: Optional[list[float]]
    attention_neighbors: Optional[list[list[Optional[list[float]]]]]
    attention_aggregate: Optional[list[list[Optional[list[float]]]]]
    densified_unk_pairs: Optional[int]

    def to_dict(self) -> dict:
        return {
            "candidates": [c.to_dict() for c in self.candidates],
            "rel_mean": self.rel_mean,
            "admitted_count": self.admitted_count,
            "working_nodes": self.working_nodes,
            "working_edges": self.working_edges,
            "beta": self.beta,
            "attention_neighbors": self.attention_neighbors,
            "attention_aggregate": self.attention_aggregate,
            "densified_unk_pairs": self.densified_unk_pairs,
        }


@dataclass
class OptionTrace:
    score: float
    rel_means: list[float]
    iterations: list[IterationTrace]
    pool_attention: list[float]

    def to_dict(self) -> dict:
        return {
            "score": self.score,
            "rel_means": self.rel_means,
            "iterations": [it.to_dict() for it in self.iterations],
            "pool_attention": self.pool_attention,
        }


def pool_and_score(
    h0: Tensor,
    iteration_states: Sequence[Tensor],
    rel_means: Sequence[Tensor],
    g_c: Tensor,
    g_q: Tensor,
    g_o: Tensor,
    cfg: ModelConfig,
    params: ParameterStore,
) -> tuple[Tensor, list[float]]:
    """Fuse per-iteration states, run the residual bidirectional GRU over the
    text-order node sequence, pool with option-attended attention, and score."""
    n, d = h0.data.shape
    fused = add(h0, linear(concat(list(iteration_states), axis=1), params["fuse.w"], params["fuse.b"]))

    forward_states = gru_sequence(
        fused, params["gru.fw.w_ih"], params["gru.fw.w_hh"], params["gru.fw.b_ih"], params["gru.fw.b_hh"]
    )
    backward_states = gru_sequence(
        fused, params["gru.bw.w_ih"], params["gru.bw.w_hh"], params["gru.bw.b_ih"], params["gru.bw.b_hh"],
        reverse=True,
    )
    final = add(fused, concat([forward_states, backward_states], axis=1))

    w = params["pool_att.w"]
    w_option = index_select(w, list(range(d)))
    w_node = index_select(w, list(range(d, 2 * d)))
    scores = leaky_relu(add(add(matmul(final, w_node), matmul(g_o, w_option)), params["pool_att.b"]))
    alpha = softmax(scores)
    h_v = matmul(alpha, final)

    h_g = concat([h_v] + [reshape(rm, (1,)) for rm in rel_means])
    hidden = tanh(add(matmul(params["score.w1"], concat([g_c, g_q, g_o, h_g])), params["score.b1"]))
    score = matmul(params["score.w2"], hidden)
    return reshape(score, ()), [float(x) for x in alpha.data]


def forward_option(
    g_raw: TLG,
    enc: EncodedInstance,
    cfg: ModelConfig,
    params: ParameterStore,
    provider: EmbeddingProvider,
    collect_traces: bool = True,
) -> tuple[Tensor, Optional[OptionTrace]]:
    """Full pipeline for one option graph: L rounds of extension plus message
    passing (restarting extension from the raw graph each round), then pooling
    and answer scoring.

    With `collect_traces` off (the training fast path) the trace is None.
    """
    if enc.h0.data.shape[0] != len(g_raw.nodes):
        raise GraphError("h0 rows must match the raw node count")
    h = enc.h0
    states: list[Tensor] = []
    rel_means: list[Tensor] = []
    iterations: list[IterationTrace] = []
    for l in range(cfg.L):
        step = adaptive_extend(g_raw, h, enc.g_o, cfg, params, provider)
        g_mp = step.working
        densified = None
        if cfg.variant == "n2n+":
            g_mp = densify_cross_unk(g_mp)
            densified = count_cross_unk_pairs(g_mp)
        H_next, mp_trace = message_pass(g_mp, step.assembled, cfg, params, l, collect_traces)
        h = index_select(H_next, step.raw_positions)
        states.append(h)
        rel_means.append(step.rel_mean)
        if collect_traces:
            iterations.append(
                IterationTrace(
                    candidates=step.candidates,
                    rel_mean=float(step.rel_mean.data),
                    admitted_count=sum(1 for c in step.candidates if c.admitted),
                    working_nodes=len(step.working.nodes),
                    working_edges=len(step.working.edges),
                    beta=mp_trace.beta,
                    attention_neighbors=mp_trace.attention_neighbors,
                    attention_aggregate=mp_trace.attention_aggregate,
                    densified_unk_pairs=densified,
                )
            )
    score, pool_alpha = pool_and_score(
        enc.h0, states, rel_means, enc.g_c, enc.g_q, enc.g_o, cfg, params
    )
    if not collect_traces:
        return score, None
    trace = OptionTrace(
        score=float(score.data),
        rel_means=[float(rm.data) for rm in rel_means],
        iterations=iterations,
        pool_attention=pool_alpha,
    )
    return score, trace


@lru_cache(maxsize=8192)
def _cached_combine(ctx: TLG, opt: TLG) -> TLG:
    return combine_context_option(ctx, opt)


def option_graph(
    inst,
    k: int,
    lexicon: Optional[ConnectiveLexicon] = None,
) -> TLG:
    """Raw TLG for option `k` of a task instance, built from graphs when
    available and from text otherwise."""
    ctx_graph = getattr(inst, "context_graph", None)
    option_graphs = getattr(inst, "option_graphs", None)
    if ctx_graph is not None and option_graphs is not None and option_graphs[k] is not None:
        return _cached_combine(ctx_graph, option_graphs[k])
    context_text = getattr(inst, "context_text", None)
    option_texts = getattr(inst, "option_texts", None)
    if context_text and option_texts and option_texts[k]:
        return build_raw_tlg(segment(context_text, option_texts[k], lexicon))
    raise ValueError("task instance provides neither graphs nor texts for this option")


def forward_instance(
    inst,
    cfg: ModelConfig,
    params: ParameterStore,
    provider: EmbeddingProvider,
    lexicon: Optional[ConnectiveLexicon] = None,
    collect_traces: bool = True,
) -> tuple[list[Tensor], list[Optional[OptionTrace]]]:
    """Score all four options of a task instance independently."""
    scores: list[Tensor] = []
    traces: list[Optional[OptionTrace]] = []
    for k in range(4):
        g_raw = option_graph(inst, k, lexicon)
        enc = provider.encode(g_raw, inst.question)
        score, trace = forward_option(g_raw, enc, cfg, params, provider, collect_traces)
        scores.append(score)
        traces.append(trace)
    return scores, traces

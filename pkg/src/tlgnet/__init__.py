"""Neural-symbolic reasoning over text logic graphs.

The package builds directed graphs of clause-level text units with logical
relations, extends them with symbolically inferred edges gated by learned
relevance scores, runs gated attention message passing, and trains the full
answer-prediction pipeline on synthetic entailment tasks.
"""

__version__ = "0.1.0"

from .graph import (
    Edge,
    GraphError,
    Node,
    Part,
    Relation,
    TLG,
    add_edge,
    deserialize,
    from_doc,
    graph_from,
    rendered_edges,
    serialize,
    to_doc,
    to_dot,
    validate,
)
from .ingest import (
    ConnectiveLexicon,
    RhetoricalRelation,
    SegmentedText,
    build_raw_tlg,
    detect_negation,
    limit_graph,
    map_rhetorical,
    segment,
)
from .network import (
    EmbeddingProvider,
    EncodedInstance,
    ModelConfig,
    adaptive_extend,
    build_parameters,
    combine_context_option,
    forward_instance,
    forward_option,
    message_pass,
    pool_and_score,
    score_candidate,
)
from .params import ParameterStore, load_checkpoint, save_checkpoint
from .rules import (
    ExtensionCandidate,
    Rule,
    apply_candidate,
    closure,
    entailment_oracle,
    enumerate_candidates,
    reachability_oracle,
)
from .synth import GeneratorSpec, TaskInstance, audit, generate, load_dataset, save_dataset
from .tensor import NumericsError, ShapeError, Tensor, backward, finite_diff_check
from .train import Adam, TrainConfig, evaluate, smoothed_loss, train

__all__ = [name for name in dir() if not name.startswith("_")]

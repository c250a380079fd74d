"""Command-line surface: ingest, candidates, closure, dot, synth, train,
eval, score and gradcheck subcommands.

Exit codes: 0 success, 1 validation or domain errors, 2 usage errors.
Diagnostics go to stderr; machine-readable output goes to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .graph import GraphError, deserialize, serialize, to_dot, validate
from .ingest import ConnectiveLexicon, build_raw_tlg, limit_graph, segment
from .network import (
    EmbeddingProvider,
    ModelConfig,
    build_parameters,
    forward_instance,
    forward_option,
)
from .params import load_checkpoint
from .rules import Rule, closure, enumerate_candidates
from .synth import (
    GeneratorError,
    GeneratorSpec,
    TaskInstance,
    audit,
    generate,
    load_dataset,
    save_dataset,
)
from .tensor import NumericsError, Tensor, finite_diff_check, stack
from .train import TrainConfig, evaluate, restore_model, smoothed_loss, train


class CliError(Exception):
    """Domain-level failure; reported on stderr with exit code 1."""


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc


def _write(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}") from exc


def _load_graph(path: str):
    try:
        return deserialize(_read(path))
    except GraphError as exc:
        raise CliError(f"{path}: {exc}") from exc


def _parse_rules(text: str) -> frozenset[Rule]:
    names = [part.strip().lower() for part in text.split(",") if part.strip()]
    rules = set()
    for name in names:
        try:
            rules.add(Rule(name))
        except ValueError:
            raise CliError(f"unknown rule {name!r}; expected a subset of hs,tr,at")
    if not rules:
        raise CliError("at least one rule is required")
    return frozenset(rules)


def _load_config_file(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(_read(path))
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: malformed config: {exc}") from exc
    if not isinstance(doc, dict):
        raise CliError(f"{path}: config must be a JSON object")
    unknown = set(doc) - {"model", "train", "seed"}
    if unknown:
        raise CliError(f"{path}: unknown config keys: {sorted(unknown)}")
    return doc


def _build_model_config(args, file_cfg: dict) -> ModelConfig:
    base = dict(file_cfg.get("model", {}))
    if "seed" in file_cfg and "seed" not in base:
        base["seed"] = file_cfg["seed"]
    for key in ("d", "L", "tau", "gamma", "variant", "heads", "embed_mode", "seed"):
        value = getattr(args, key.lower().replace("-", "_"), None)
        if value is not None:
            base[key] = value
    if getattr(args, "rules", None) is not None:
        base["rules"] = sorted(r.value for r in _parse_rules(args.rules))
    try:
        return ModelConfig.from_dict(base)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _build_train_config(args, file_cfg: dict) -> TrainConfig:
    base = dict(file_cfg.get("train", {}))
    if "seed" in file_cfg and "seed" not in base:
        base["seed"] = file_cfg["seed"]
    for arg_name, key in (
        ("lr", "lr"),
        ("batch_size", "batch_size"),
        ("epochs", "epochs"),
        ("train_seed", "seed"),
        ("clip_norm", "clip_norm"),
        ("eval_every", "eval_every"),
    ):
        value = getattr(args, arg_name, None)
        if value is not None:
            base[key] = value
    try:
        return TrainConfig.from_dict(base)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _cmd_ingest(args) -> int:
    if args.graph:
        g = _load_graph(args.graph)
    else:
        if not args.context or not args.option:
            raise CliError("ingest needs --graph or both --context and --option")
        lexicon = ConnectiveLexicon.from_file(args.lexicon) if args.lexicon else None
        try:
            seg = segment(_read(args.context), _read(args.option), lexicon)
            g = build_raw_tlg(seg)
        except ValueError as exc:
            raise CliError(str(exc)) from exc
    if args.max_nodes is not None or args.max_edges is not None:
        g = limit_graph(
            g,
            max_nodes=args.max_nodes if args.max_nodes is not None else 25,
            max_edges=args.max_edges if args.max_edges is not None else 50,
            seed=args.seed or 0,
        )
    _write(args.output, serialize(g))
    return 0


def _cmd_candidates(args) -> int:
    g = _load_graph(args.graph)
    rules = _parse_rules(args.rules)
    lines = []
    for cand in enumerate_candidates(g, rules):
        lines.append(
            json.dumps(
                {
                    "rule": cand.rule.value,
                    "premises": list(cand.premise_nodes),
                    "new_nodes": [
                        {"text": n.text, "part": n.part.value, "neg_of": n.neg_of}
                        for n in cand.new_nodes
                    ],
                    "new_edges": [[s, r.value, d] for s, r, d in cand.new_edges],
                }
            )
        )
    _write(args.output, "\n".join(lines) + ("\n" if lines else ""))
    return 0


def _cmd_closure(args) -> int:
    g = _load_graph(args.graph)
    rules = _parse_rules(args.rules)
    closed = closure(g, rules, max_nodes=args.max_nodes)
    _write(args.output, serialize(closed))
    return 0


def _cmd_dot(args) -> int:
    g = _load_graph(args.graph)
    _write(args.output, to_dot(g))
    return 0


def _cmd_synth(args) -> int:
    try:
        spec_doc = json.loads(_read(args.spec)) if args.spec else {}
        if args.seed is not None:
            spec_doc["seed"] = args.seed
        spec = GeneratorSpec.from_dict(spec_doc)
        instances = generate(args.count, spec)
    except (GeneratorError, json.JSONDecodeError) as exc:
        raise CliError(str(exc)) from exc
    problems = audit(instances)
    if problems:
        raise CliError("generated dataset failed its own audit: " + problems[0])
    save_dataset(args.output, instances)
    print(f"wrote {len(instances)} instances to {args.output}", file=sys.stderr)
    return 0


def _cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    mcfg = _build_model_config(args, file_cfg)
    tcfg = _build_train_config(args, file_cfg)
    train_set = load_dataset(args.data)
    dev_set = load_dataset(args.dev) if args.dev else []
    result = train(
        train_set,
        dev_set,
        mcfg,
        tcfg,
        out_dir=args.output,
        log=lambda record: print(json.dumps(record)),
    )
    print(
        json.dumps({"best_dev_acc": result.best_dev_accuracy, "checkpoint": result.best_path})
    )
    return 0


def _cmd_eval(args) -> int:
    params, mcfg, provider = restore_model(args.checkpoint)
    dataset = load_dataset(args.data)
    result = evaluate(dataset, params, mcfg, provider, with_traces=bool(args.trace))
    if args.trace:
        doc = {
            "accuracy": result.accuracy,
            "records": [
                {
                    "id": r.instance_id,
                    "predicted": r.predicted,
                    "gold": r.gold,
                    "scores": r.scores,
                    "options": [t.to_dict() for t in r.traces] if r.traces else None,
                }
                for r in result.records
            ],
        }
        _write(args.trace, json.dumps(doc, indent=2) + "\n")
    print(json.dumps({"accuracy": result.accuracy, "count": len(result.records)}))
    return 0


def _cmd_score(args) -> int:
    params, mcfg, provider = restore_model(args.checkpoint)
    if args.variant is not None or args.tau is not None:
        doc = mcfg.to_dict()
        if args.variant is not None:
            doc["variant"] = args.variant
        if args.tau is not None:
            doc["tau"] = args.tau
        mcfg = ModelConfig.from_dict(doc)
    context = _load_graph(args.graph_context)
    if len(args.graph_options) != 4:
        raise CliError("score expects exactly four option graphs")
    options = [_load_graph(path) for path in args.graph_options]
    inst = TaskInstance(
        id="cli-score",
        context_graph=context,
        question=args.question,
        option_graphs=options,
        option_texts=["", "", "", ""],
        gold=0,
    )
    scores, traces = forward_instance(inst, mcfg, params, provider)
    values = [float(s.data) for s in scores]
    predicted = int(np.argmax(values))
    if args.trace:
        doc = {"options": [t.to_dict() for t in traces], "predicted": predicted}
        _write(args.trace, json.dumps(doc, indent=2) + "\n")
    print(json.dumps({"scores": values, "predicted": predicted}))
    return 0


def _gradcheck_instance(seed: int):
    """Fixed five-node, two-option toy graphs used by the gradient check."""
    from .graph import Node, Part, Relation, TLG, graph_from

    context = graph_from(
        [
            Node(0, "A0", Part.CONTEXT),
            Node(1, "A1", Part.CONTEXT),
            Node(2, "A2", Part.CONTEXT),
        ],
        [(0, Relation.IMPL, 1), (1, Relation.IMPL, 2)],
    )
    option_a = graph_from(
        [Node(0, "A0", Part.OPTION), Node(1, "A2", Part.OPTION)],
        [(0, Relation.IMPL, 1)],
    )
    # textually distinct from option_a: near-symmetric options would give
    # structurally tiny differential gradients below finite-difference noise
    option_b = graph_from(
        [Node(0, "B7", Part.OPTION), Node(1, "not A1", Part.OPTION)],
        [(0, Relation.IMPL, 1)],
    )
    return context, [option_a, option_b]


def gradcheck(
    seed: int = 6, d: int = 8, eps: float = 1e-5, tol: float = 1e-4, tau: float = 0.6
) -> dict:
    """End-to-end finite-difference check of the full pipeline loss."""
    from .network import combine_context_option

    cfg = ModelConfig(d=d, L=2, tau=tau, gamma=0.25, seed=seed)
    params = build_parameters(cfg)
    provider = EmbeddingProvider(dim=d, mode="hash", seed=seed)
    context, options = _gradcheck_instance(seed)
    graphs = [combine_context_option(context, o) for o in options]
    encodings = [provider.encode(g, "which option holds?") for g in graphs]

    def loss_fn() -> Tensor:
        scores = [
            forward_option(g, enc, cfg, params, provider)[0]
            for g, enc in zip(graphs, encodings)
        ]
        return smoothed_loss(stack(scores), 0, cfg.gamma)

    return finite_diff_check(loss_fn, params, eps=eps, tol=tol)


def _cmd_gradcheck(args) -> int:
    report = gradcheck(seed=args.seed, d=args.d, eps=args.eps, tol=args.tol)
    for name, entry in report.items():
        if name == "overall":
            continue
        print(f"{name}: max_rel_err={entry['max_rel_err']:.3e} {'ok' if entry['pass'] else 'FAIL'}")
    overall = report["overall"]
    print(f"overall: max_rel_err={overall['max_rel_err']:.3e} {'ok' if overall['pass'] else 'FAIL'}")
    return 0 if overall["pass"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tlgnet", description=__doc__)
    parser.add_argument("--version", action="version", version=f"tlgnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a raw graph from text or load one")
    p.add_argument("--context")
    p.add_argument("--option")
    p.add_argument("--graph", help="load a pre-built graph document instead of segmenting")
    p.add_argument("--lexicon")
    p.add_argument("--max-nodes", type=int, dest="max_nodes")
    p.add_argument("--max-edges", type=int, dest="max_edges")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("candidates", help="list single-step rule applications")
    p.add_argument("--graph", required=True)
    p.add_argument("--rules", default="hs,tr,at")
    p.add_argument("-o", "--output")
    p.set_defaults(func=_cmd_candidates)

    p = sub.add_parser("closure", help="deductive closure under the chosen rules")
    p.add_argument("--graph", required=True)
    p.add_argument("--rules", default="hs,tr")
    p.add_argument("--max-nodes", type=int, dest="max_nodes", default=200)
    p.add_argument("-o", "--output")
    p.set_defaults(func=_cmd_closure)

    p = sub.add_parser("dot", help="Graphviz export")
    p.add_argument("--graph", required=True)
    p.add_argument("-o", "--output")
    p.set_defaults(func=_cmd_dot)

    p = sub.add_parser("synth", help="generate an oracle-verified dataset")
    p.add_argument("--spec", help="generator spec JSON file")
    p.add_argument("-n", "--count", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--dev")
    p.add_argument("--config")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--d", type=int)
    p.add_argument("--l", type=int, dest="L")
    p.add_argument("--tau", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--variant", choices=("standard", "no-ext", "full-ext", "no-at", "n2n", "n2n+"))
    p.add_argument("--heads", type=int)
    p.add_argument("--embed-mode", choices=("hash", "table"), dest="embed_mode")
    p.add_argument("--rules")
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--epochs", type=int)
    p.add_argument("--train-seed", type=int, dest="train_seed")
    p.add_argument("--clip-norm", type=float, dest="clip_norm")
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--trace", help="write per-instance traces to this file")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("score", help="score four option graphs against a context")
    p.add_argument("--graph-context", required=True, dest="graph_context")
    p.add_argument("--graph-options", required=True, nargs="+", dest="graph_options")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--variant", choices=("standard", "no-ext", "full-ext", "no-at", "n2n", "n2n+"))
    p.add_argument("--tau", type=float)
    p.add_argument("--question", default="which option holds?")
    p.add_argument("--trace")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("gradcheck", help="finite-difference check of the model gradients")
    p.add_argument("--seed", type=int, default=6)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, GraphError, GeneratorError, NumericsError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()

"""Optimization and evaluation: label-smoothed cross-entropy, Adam, the
training loop with per-epoch metrics, and accuracy evaluation."""

from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .network import (
    EmbeddingProvider,
    ModelConfig,
    OptionTrace,
    build_parameters,
    forward_instance,
    option_graph,
    vocab_from_graphs,
)
from .params import ParameterStore, load_checkpoint, save_checkpoint
from .tensor import Tensor, add, backward, index_select, log_softmax, mean, mul, reshape, stack, sub


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 8
    epochs: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: Optional[float] = None
    eval_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("learning rate, batch size and epochs must be positive")
        if self.eval_every < 1:
            raise ValueError("eval_every must be at least 1")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "clip_norm": self.clip_norm,
            "eval_every": self.eval_every,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**doc)


def smoothed_loss(scores: Tensor, gold: int, gamma: float) -> Tensor:
    """Cross-entropy over the four option scores with label smoothing gamma:
    the one-hot target is mixed with the uniform distribution."""
    if not (0 <= gold < scores.data.shape[0]):
        raise ValueError(f"gold index {gold} out of range")
    if not (0.0 <= gamma < 1.0):
        raise ValueError("gamma must lie in [0, 1)")
    log_probs = log_softmax(scores)
    count = scores.data.shape[0]
    gold_term = reshape(index_select(log_probs, [gold]), ())
    uniform_term = mean(log_probs)
    return sub(mul(gold_term, -(1.0 - gamma)), mul(uniform_term, gamma))


class Adam:
    """Adam over every group of a parameter store; a zero-gradient step
    leaves parameters untouched."""

    def __init__(self, params: ParameterStore, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self._m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self._v = {name: np.zeros_like(t.data) for name, t in params.items()}
        self._t = 0

    def step(self) -> None:
        cfg = self.cfg
        self._t += 1
        if cfg.clip_norm is not None:
            total = 0.0
            for _, tensor in self.params.items():
                if tensor.grad is not None:
                    total += float((tensor.grad**2).sum())
            norm = np.sqrt(total)
            if norm > cfg.clip_norm and norm > 0:
                scale = cfg.clip_norm / norm
                for _, tensor in self.params.items():
                    if tensor.grad is not None:
                        tensor.grad = tensor.grad * scale
        for name, tensor in self.params.items():
            grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            m = self._m[name] = cfg.beta1 * self._m[name] + (1 - cfg.beta1) * grad
            v = self._v[name] = cfg.beta2 * self._v[name] + (1 - cfg.beta2) * grad * grad
            m_hat = m / (1 - cfg.beta1**self._t)
            v_hat = v / (1 - cfg.beta2**self._t)
            tensor.data = tensor.data - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)

    def zero_grad(self) -> None:
        self.params.zero_grad()


@dataclass
class EvalRecord:
    instance_id: str
    predicted: int
    gold: int
    scores: list[float]
    traces: Optional[list[OptionTrace]] = None


@dataclass
class EvalResult:
    accuracy: float
    records: list[EvalRecord]


def evaluate(
    dataset: Sequence,
    params: ParameterStore,
    cfg: ModelConfig,
    provider: EmbeddingProvider,
    with_traces: bool = False,
) -> EvalResult:
    """Accuracy over a dataset; argmax ties break toward the lowest index."""
    records = []
    correct = 0
    for inst in dataset:
        scores, traces = forward_instance(inst, cfg, params, provider, collect_traces=with_traces)
        values = np.array([float(s.data) for s in scores])
        predicted = int(np.argmax(values))
        correct += int(predicted == inst.gold)
        records.append(
            EvalRecord(
                instance_id=inst.id,
                predicted=predicted,
                gold=inst.gold,
                scores=[float(v) for v in values],
                traces=traces if with_traces else None,
            )
        )
    accuracy = correct / len(dataset) if dataset else 0.0
    return EvalResult(accuracy=accuracy, records=records)


@dataclass
class TrainResult:
    metrics: list[dict]
    best_dev_accuracy: float
    best_path: Optional[str]
    final_path: Optional[str]


def _checkpoint_metadata(cfg: ModelConfig, provider: EmbeddingProvider) -> dict:
    return {"model": cfg.to_dict(), "vocab": provider.vocab}


def make_provider(cfg: ModelConfig, params: ParameterStore, vocab: Sequence[str]) -> EmbeddingProvider:
    return EmbeddingProvider(
        dim=cfg.d, mode=cfg.embed_mode, vocab=vocab, params=params, seed=cfg.seed
    )


def prepare_model(
    cfg: ModelConfig, datasets: Sequence[Sequence]
) -> tuple[ParameterStore, EmbeddingProvider]:
    """Build parameters and the embedding provider, deriving the table-mode
    vocabulary from every graph reachable through the given datasets."""
    vocab: list[str] = []
    if cfg.embed_mode == "table":
        graphs = []
        for dataset in datasets:
            for inst in dataset:
                if getattr(inst, "context_graph", None) is not None:
                    graphs.append(inst.context_graph)
                for og in getattr(inst, "option_graphs", None) or []:
                    if og is not None:
                        graphs.append(og)
        vocab = vocab_from_graphs(graphs)
    params = build_parameters(cfg, vocab=vocab or None)
    provider = make_provider(cfg, params, vocab)
    return params, provider


def train(
    train_set: Sequence,
    dev_set: Sequence,
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    out_dir: Optional[str] = None,
    log: Optional[Callable[[dict], None]] = None,
    params: Optional[ParameterStore] = None,
    provider: Optional[EmbeddingProvider] = None,
) -> TrainResult:
    """Seeded training loop: shuffled minibatches, mean batch loss, Adam
    updates, per-epoch dev accuracy, best-dev checkpointing.

    Raises on divergence (non-finite loss) with a diagnostic message.
    """
    if not train_set:
        raise ValueError("training dataset is empty")
    if params is None or provider is None:
        params, provider = prepare_model(mcfg, [train_set, dev_set])
    optimizer = Adam(params, tcfg)
    rng = random.Random(tcfg.seed)

    metrics: list[dict] = []
    best_acc = -1.0
    best_snapshot: Optional[dict[str, np.ndarray]] = None
    best_path = final_path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    order = list(range(len(train_set)))
    for epoch in range(1, tcfg.epochs + 1):
        rng.shuffle(order)
        epoch_loss = 0.0
        seen = 0
        for start in range(0, len(order), tcfg.batch_size):
            batch = order[start : start + tcfg.batch_size]
            optimizer.zero_grad()
            losses = []
            for idx in batch:
                inst = train_set[idx]
                scores, _ = forward_instance(inst, mcfg, params, provider, collect_traces=False)
                losses.append(smoothed_loss(stack(scores), inst.gold, mcfg.gamma))
            batch_loss = mean(stack(losses))
            value = float(batch_loss.data)
            if not np.isfinite(value):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch}, batch start {start}"
                )
            backward(batch_loss)
            optimizer.step()
            epoch_loss += value * len(batch)
            seen += len(batch)

        record = {"epoch": epoch, "loss": epoch_loss / max(seen, 1)}
        if dev_set and epoch % tcfg.eval_every == 0:
            record["dev_acc"] = evaluate(dev_set, params, mcfg, provider).accuracy
            if record["dev_acc"] > best_acc:
                best_acc = record["dev_acc"]
                best_snapshot = {name: t.data.copy() for name, t in params.items()}
        metrics.append(record)
        if log:
            log(record)

    if out_dir:
        final_path = os.path.join(out_dir, "final")
        save_checkpoint(final_path, params, _checkpoint_metadata(mcfg, provider))
        best_path = os.path.join(out_dir, "best")
        if best_snapshot is not None:
            for name, t in params.items():
                t.data, best_snapshot[name] = best_snapshot[name], t.data
            save_checkpoint(best_path, params, _checkpoint_metadata(mcfg, provider))
            for name, t in params.items():
                t.data = best_snapshot[name]
        else:
            save_checkpoint(best_path, params, _checkpoint_metadata(mcfg, provider))
        with open(os.path.join(out_dir, "metrics.jsonl"), "w", encoding="utf-8") as fh:
            for record in metrics:
                fh.write(json.dumps(record) + "\n")
    return TrainResult(
        metrics=metrics,
        best_dev_accuracy=max(best_acc, 0.0),
        best_path=best_path,
        final_path=final_path,
    )


def restore_model(path: str) -> tuple[ParameterStore, ModelConfig, EmbeddingProvider]:
    """Load a checkpoint into a parameter store, its model config, and the
    matching embedding provider."""
    params, metadata = load_checkpoint(path)
    cfg = ModelConfig.from_dict(metadata["model"])
    provider = make_provider(cfg, params, metadata.get("vocab", []))
    return params, cfg, provider

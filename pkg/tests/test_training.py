"""Loss identities, Adam behavior, the training loop, and evaluation."""

import math

import numpy as np
import pytest

from tlgnet.network import ModelConfig
from tlgnet.params import ParameterStore
from tlgnet.synth import GeneratorSpec, generate
from tlgnet.tensor import Tensor, backward, log_softmax, tsum
from tlgnet.train import Adam, TrainConfig, evaluate, prepare_model, smoothed_loss, train


def plain_cross_entropy(scores, gold):
    log_probs = log_softmax(scores)
    return -float(log_probs.data[gold])


class TestLoss:
    def test_gamma_zero_is_cross_entropy(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            scores = Tensor(rng.standard_normal(4) * 3)
            gold = int(rng.integers(0, 4))
            ours = smoothed_loss(scores, gold, 0.0).item()
            assert abs(ours - plain_cross_entropy(scores, gold)) < 1e-10

    def test_uniform_scores_give_ln4(self):
        for gamma in (0.0, 0.1, 0.25, 0.9):
            loss = smoothed_loss(Tensor([2.0, 2.0, 2.0, 2.0]), 1, gamma)
            assert abs(loss.item() - math.log(4)) < 1e-12

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            scores = rng.standard_normal(4)
            shift = rng.uniform(-50, 50)
            a = smoothed_loss(Tensor(scores), 2, 0.25).item()
            b = smoothed_loss(Tensor(scores + shift), 2, 0.25).item()
            assert abs(a - b) < 1e-9

    def test_smoothed_floor(self):
        """The loss is bounded below by the entropy of the smoothed target,
        attained when the softmax matches the target exactly."""
        gamma = 0.25
        target = np.full(4, gamma / 4)
        target[2] += 1 - gamma
        floor = -float((target * np.log(target)).sum())
        logits = Tensor(np.log(target))
        assert abs(smoothed_loss(logits, 2, gamma).item() - floor) < 1e-12
        rng = np.random.default_rng(2)
        for _ in range(50):
            loss = smoothed_loss(Tensor(rng.standard_normal(4) * 2), 2, gamma).item()
            assert loss >= floor - 1e-12

    def test_differentiable(self):
        scores = Tensor(np.array([0.5, -0.2, 1.0, 0.1]), requires_grad=True)
        backward(smoothed_loss(scores, 0, 0.25))
        assert scores.grad is not None
        # gradient of cross-entropy sums to zero over the options
        assert abs(scores.grad.sum()) < 1e-12

    def test_gold_out_of_range(self):
        with pytest.raises(ValueError):
            smoothed_loss(Tensor([0.0, 0.0, 0.0, 0.0]), 4, 0.25)


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        store = ParameterStore(seed=0)
        w = store.register("w", (3, 3))
        before = w.data.copy()
        opt = Adam(store, TrainConfig(lr=0.1, epochs=1))
        store.zero_grad()
        opt.step()
        np.testing.assert_array_equal(w.data, before)

    def test_descends_quadratic(self):
        store = ParameterStore(seed=0)
        w = store.register("w", (4,))
        opt = Adam(store, TrainConfig(lr=0.05, epochs=1))
        for _ in range(300):
            store.zero_grad()
            loss = tsum(Tensor(1.0) * w * w)
            backward(loss)
            opt.step()
        assert float(np.abs(w.data).max()) < 1e-2

    def test_clip_norm(self):
        store = ParameterStore(seed=0)
        w = store.register("w", (2,))
        opt = Adam(store, TrainConfig(lr=0.0, epochs=1, clip_norm=1.0))
        w.grad = np.array([30.0, 40.0])
        opt.step()
        np.testing.assert_allclose(np.linalg.norm(w.grad), 1.0)


def tiny_dataset(n=8, seed=0):
    return generate(n, GeneratorSpec(vars=4, chain_len=2, needs_rules=("hs",), seed=seed))


def tiny_model(**kwargs):
    defaults = dict(d=8, L=1, tau=0.6, gamma=0.25, embed_mode="table", seed=1)
    defaults.update(kwargs)
    return ModelConfig(**defaults)


class TestTrainLoop:
    def test_zero_learning_rate_changes_nothing(self):
        data = tiny_dataset(4)
        mcfg = tiny_model()
        params, provider = prepare_model(mcfg, [data])
        before = {name: t.data.copy() for name, t in params.items()}
        result = train(
            data,
            [],
            mcfg,
            TrainConfig(lr=0.0, batch_size=4, epochs=2, seed=0),
            params=params,
            provider=provider,
        )
        for name, t in params.items():
            np.testing.assert_array_equal(t.data, before[name])
        losses = [m["loss"] for m in result.metrics]
        assert abs(losses[0] - losses[1]) < 1e-12

    def test_same_seed_identical_curves(self):
        curves = []
        for _ in range(2):
            data = tiny_dataset(6)
            result = train(
                data,
                [],
                tiny_model(),
                TrainConfig(lr=3e-3, batch_size=3, epochs=3, seed=5),
            )
            curves.append([m["loss"] for m in result.metrics])
        assert curves[0] == curves[1]

    def test_overfit_single_batch(self):
        """Memorizing one batch drives the loss to the smoothed floor."""
        gamma = 0.25
        data = tiny_dataset(4, seed=3)
        mcfg = tiny_model(gamma=gamma, d=16)
        result = train(
            data,
            [],
            mcfg,
            TrainConfig(lr=1e-2, batch_size=4, epochs=120, seed=0),
        )
        target = np.full(4, gamma / 4)
        target[0] += 1 - gamma
        floor = -float((target * np.log(target)).sum())
        assert min(m["loss"] for m in result.metrics) < floor + 1e-2

    def test_checkpointing_and_metrics(self, tmp_path):
        data = tiny_dataset(6)
        out = tmp_path / "run"
        result = train(
            data,
            data[:3],
            tiny_model(),
            TrainConfig(lr=1e-3, batch_size=3, epochs=2, seed=0),
            out_dir=str(out),
        )
        assert (out / "best").exists()
        assert (out / "final").exists()
        lines = (out / "metrics.jsonl").read_text().strip().splitlines()
        assert len(lines) == 2
        assert result.best_dev_accuracy >= 0.0

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train([], [], tiny_model(), TrainConfig(epochs=1))


class TestEvaluate:
    def test_tied_scores_break_to_lowest_index(self):
        """With all-zero scorer output every instance predicts option 0, so
        accuracy equals the fraction of gold labels at position 0 (exactly a
        quarter on a balanced set)."""
        data = tiny_dataset(8, seed=9)
        mcfg = tiny_model()
        params, provider = prepare_model(mcfg, [data])
        params["score.w2"].data[:] = 0.0
        result = evaluate(data, params, mcfg, provider)
        assert all(r.predicted == 0 for r in result.records)
        gold_zero = sum(1 for inst in data if inst.gold == 0)
        assert abs(result.accuracy - gold_zero / len(data)) < 1e-12
        assert gold_zero == 2  # the generator balances labels

    def test_order_invariance(self):
        data = tiny_dataset(6)
        mcfg = tiny_model()
        params, provider = prepare_model(mcfg, [data])
        a = evaluate(data, params, mcfg, provider).accuracy
        b = evaluate(list(reversed(data)), params, mcfg, provider).accuracy
        assert a == b

    def test_traces_on_request(self):
        data = tiny_dataset(2)
        mcfg = tiny_model()
        params, provider = prepare_model(mcfg, [data])
        result = evaluate(data, params, mcfg, provider, with_traces=True)
        assert result.records[0].traces is not None
        assert len(result.records[0].traces) == 4

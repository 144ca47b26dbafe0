import math

import numpy as np
import pytest

from enecls.encoder import init_encoder_params
from enecls.errors import CheckpointError, DataError, NumericError
from enecls.hmcn import (
    HeadParams,
    LossWeights,
    ModelParams,
    adam_step,
    backward,
    compute_weights,
    forward,
    frequency_weights,
    init_head_params,
    init_optimizer,
    load_checkpoint,
    loss,
    ones_weights,
    save_checkpoint,
    sigmoid,
)
from enecls.taxonomy import LevelTargets


def _random_head(rng, hidden_dim=8, sizes=(3, 5, 7), dtype=np.float64) -> HeadParams:
    return init_head_params(hidden_dim, sizes, rng=rng, dtype=dtype)


class TestForward:
    def test_zero_params_give_zero_logits(self):
        head = init_head_params(4, (3, 5, 7))
        logits = forward(np.array([1.0, -2.0, 0.5, 3.0]), head)
        assert not logits.y2.any() and not logits.y3.any() and not logits.y4.any()

    def test_hand_evaluated_cascade(self):
        # d_h=2, one label per level; the level-4 input is (h, y2, y3)
        head = HeadParams(
            w2=np.array([[1.0], [0.0]], dtype=np.float32),
            b2=np.zeros(1, dtype=np.float32),
            w3=np.array([[0.0], [0.0], [1.0]], dtype=np.float32),
            b3=np.zeros(1, dtype=np.float32),
            w4=np.array([[0.7], [-0.3], [2.0], [0.1]], dtype=np.float32),
            b4=np.zeros(1, dtype=np.float32),
        )
        logits = forward(np.array([3.0, 5.0]), head)
        assert logits.y2[0] == pytest.approx(3.0)
        assert logits.y3[0] == pytest.approx(3.0)
        expected_y4 = np.array([3.0, 5.0, 3.0, 3.0]) @ head.w4.astype(np.float64)[:, 0]
        assert logits.y4[0] == pytest.approx(float(expected_y4))

    def test_logit_lengths_follow_level_sizes(self, taxonomy357):
        head = init_head_params(16, taxonomy357.vector_sizes())
        logits = forward(np.zeros(16), head)
        assert (len(logits.y2), len(logits.y3), len(logits.y4)) == (3, 5, 7)

    def test_sigmoid_feedback_changes_deep_levels_only(self):
        rng = np.random.default_rng(8)
        head = _random_head(rng)
        h = rng.normal(size=8)
        raw = forward(h, head, feedback="logits")
        squashed = forward(h, head, feedback="sigmoid")
        np.testing.assert_allclose(raw.y2, squashed.y2, atol=1e-12)
        assert not np.allclose(raw.y3, squashed.y3)

    def test_shape_mismatch(self):
        head = init_head_params(4, (1, 1, 1))
        with pytest.raises(ValueError):
            forward(np.zeros(5), head)


class TestComputeWeights:
    def test_hand_case(self):
        np.testing.assert_allclose(frequency_weights([4, 1, 1]), [0.5, 1.0, 1.0])

    def test_uniform_counts(self):
        np.testing.assert_allclose(frequency_weights([5, 5, 5]), [1.0, 1.0, 1.0])

    def test_zero_count_clamps_to_one(self):
        np.testing.assert_allclose(frequency_weights([2, 0]), [0.5, 1.0])

    def test_empty_level_rejected(self):
        with pytest.raises(DataError):
            frequency_weights([])

    def test_negative_counts_rejected(self):
        with pytest.raises(DataError):
            frequency_weights([1, -1])

    def test_three_level_wrapper(self):
        weights = compute_weights(([4, 1, 1], [5, 5], [2, 0]))
        np.testing.assert_allclose(weights.w2, [0.5, 1.0, 1.0])
        np.testing.assert_allclose(weights.w3, [1.0, 1.0])
        np.testing.assert_allclose(weights.w4, [0.5, 1.0])

    def test_bounds_property(self):
        """Weights never exceed 1 and equal 1 for any count <= the mean."""
        rng = np.random.default_rng(10)
        for _ in range(100):
            counts = rng.integers(0, 50, size=int(rng.integers(1, 20)))
            weights = frequency_weights(counts)
            assert (weights <= 1.0 + 1e-15).all()
            assert (weights > 0).all()
            mean = counts.mean()
            for count, weight in zip(counts, weights):
                if count <= mean:
                    assert weight == 1.0


class TestLoss:
    def _zero_logits(self, sizes=(3, 5, 7)):
        from enecls.hmcn import LevelLogits

        return LevelLogits(*(np.zeros(d) for d in sizes))

    def test_zero_logits_unit_weights(self):
        sizes = (3, 5, 7)
        targets = LevelTargets(*(np.zeros(d) for d in sizes))
        value = loss(self._zero_logits(sizes), targets, ones_weights(sizes))
        assert value == pytest.approx(3.0 * math.log(2.0), abs=1e-12)

    def test_zero_logits_independent_of_targets(self):
        sizes = (2, 2, 2)
        rng = np.random.default_rng(0)
        targets = LevelTargets(*(rng.integers(0, 2, size=2).astype(float) for _ in range(3)))
        value = loss(self._zero_logits(sizes), targets, ones_weights(sizes))
        assert value == pytest.approx(3.0 * math.log(2.0), abs=1e-12)

    def test_single_level_weighted_hand_case(self):
        # one level of width 2 (others empty): L = (0.5 + 1)/2 * ln 2
        from enecls.hmcn import LevelLogits

        logits = LevelLogits(np.zeros(0), np.zeros(0), np.zeros(2))
        targets = (np.zeros(0), np.zeros(0), np.array([1.0, 0.0]))
        weights = LossWeights(np.ones(0), np.ones(0), np.array([0.5, 1.0]))
        assert loss(logits, targets, weights) == pytest.approx(0.75 * math.log(2.0), abs=1e-12)

    def test_huge_logits_stay_finite(self):
        from enecls.hmcn import LevelLogits

        logits = LevelLogits(np.array([1e4]), np.array([-1e4]), np.array([1000.0]))
        targets = (np.array([0.0]), np.array([1.0]), np.array([1.0]))
        value = loss(logits, targets, ones_weights((1, 1, 1)))
        assert math.isfinite(value)
        # the +1000 logit with target 1 contributes essentially nothing
        solo = loss(
            LevelLogits(np.zeros(0), np.zeros(0), np.array([1000.0])),
            (np.zeros(0), np.zeros(0), np.array([1.0])),
            LossWeights(np.ones(0), np.ones(0), np.ones(1)),
        )
        assert solo == pytest.approx(0.0, abs=1e-12)

    def test_weight_scaling_scales_loss(self):
        rng = np.random.default_rng(4)
        from enecls.hmcn import LevelLogits

        sizes = (3, 5, 7)
        logits = LevelLogits(*(rng.normal(size=d) for d in sizes))
        targets = tuple(rng.integers(0, 2, size=d).astype(float) for d in sizes)
        weights = LossWeights(*(rng.uniform(0.1, 1, size=d) for d in sizes))
        scaled = LossWeights(*(3.0 * w for w in weights.by_level()))
        assert loss(logits, targets, scaled) == pytest.approx(3.0 * loss(logits, targets, weights))


class TestBackward:
    def test_matches_finite_differences(self):
        """Central-difference oracle over head parameters and h."""
        rng = np.random.default_rng(12)
        for feedback in ("logits", "sigmoid"):
            head = _random_head(rng)
            h = rng.normal(size=8)
            targets = tuple(rng.integers(0, 2, size=d).astype(float) for d in (3, 5, 7))
            weights = LossWeights(*(rng.uniform(0.1, 1, size=d) for d in (3, 5, 7)))
            grads, dh = backward(h, head, targets, weights, feedback)
            delta = 1e-5

            def loss_now():
                return loss(forward(h, head, feedback), targets, weights)

            pairs = [
                (head.w2, grads.w2), (head.b2, grads.b2),
                (head.w3, grads.w3), (head.b3, grads.b3),
                (head.w4, grads.w4), (head.b4, grads.b4),
                (h, dh),
            ]
            for array, grad in pairs:
                flat, gflat = array.reshape(-1), grad.reshape(-1)
                for i in range(flat.size):
                    original = flat[i]
                    flat[i] = original + delta
                    up = loss_now()
                    flat[i] = original - delta
                    down = loss_now()
                    flat[i] = original
                    numeric = (up - down) / (2 * delta)
                    assert abs(gflat[i] - numeric) <= max(
                        1e-4 * max(abs(gflat[i]), abs(numeric)), 1e-6
                    ), f"{feedback}: mismatch at {array.shape}[{i}]"

    def test_stationary_at_matching_continuous_targets(self):
        # targets equal to sigma(logits) zero every gradient; at zero logits
        # that means 0.5-valued targets
        head = init_head_params(4, (2, 3, 4))
        h = np.array([0.5, -1.0, 2.0, 0.0])
        targets = tuple(np.full(d, 0.5) for d in (2, 3, 4))
        grads, dh = backward(h, head, targets, ones_weights((2, 3, 4)))
        for grad in (grads.w2, grads.b2, grads.w3, grads.b3, grads.w4, grads.b4, dh):
            np.testing.assert_allclose(grad, 0.0, atol=1e-15)

    def test_stationary_for_random_params(self):
        rng = np.random.default_rng(21)
        head = _random_head(rng)
        h = rng.normal(size=8)
        logits = forward(h, head)
        targets = (sigmoid(logits.y2), sigmoid(logits.y3), sigmoid(logits.y4))
        grads, dh = backward(h, head, targets, ones_weights((3, 5, 7)))
        for grad in (grads.w2, grads.b2, grads.w3, grads.b3, grads.w4, grads.b4, dh):
            np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_zero_weights_give_zero_gradients(self):
        rng = np.random.default_rng(13)
        head = _random_head(rng)
        h = rng.normal(size=8)
        targets = tuple(rng.integers(0, 2, size=d).astype(float) for d in (3, 5, 7))
        zero = LossWeights(np.zeros(3), np.zeros(5), np.zeros(7))
        grads, dh = backward(h, head, targets, zero)
        for grad in (grads.w2, grads.b2, grads.w3, grads.b3, grads.w4, grads.b4, dh):
            assert not np.asarray(grad).any()

    def test_weight_scaling_scales_gradients(self):
        rng = np.random.default_rng(14)
        head = _random_head(rng)
        h = rng.normal(size=8)
        targets = tuple(rng.integers(0, 2, size=d).astype(float) for d in (3, 5, 7))
        weights = LossWeights(*(rng.uniform(0.1, 1, size=d) for d in (3, 5, 7)))
        scaled = LossWeights(*(2.5 * w for w in weights.by_level()))
        g1, dh1 = backward(h, head, targets, weights)
        g2, dh2 = backward(h, head, targets, scaled)
        np.testing.assert_allclose(dh2, 2.5 * dh1, rtol=1e-12)
        np.testing.assert_allclose(g2.w4, 2.5 * g1.w4, rtol=1e-12)
        np.testing.assert_allclose(g2.b2, 2.5 * g1.b2, rtol=1e-12)


class TestAdam:
    def test_first_step_is_signed_learning_rate(self):
        params = [np.array([1.0, 1.0, 1.0], dtype=np.float32)]
        state = init_optimizer([("p", params[0])], learning_rate=0.01)
        adam_step(params, [np.array([10.0, -3.0, 0.5])], state)
        np.testing.assert_allclose(params[0], [0.99, 1.01, 0.99], atol=1e-6)

    def test_zero_gradient_keeps_params(self):
        params = [np.array([1.5, -2.5], dtype=np.float32)]
        state = init_optimizer([("p", params[0])], learning_rate=0.1)
        adam_step(params, [np.zeros(2)], state)
        np.testing.assert_array_equal(params[0], np.array([1.5, -2.5], dtype=np.float32))
        assert state.step == 1

    def test_two_step_golden_trace(self):
        # frozen from the plain-python float64 Adam recurrence
        params = [np.array([1.0, -2.0], dtype=np.float32)]
        state = init_optimizer([("p", params[0])], learning_rate=0.1)
        adam_step(params, [np.array([0.5, -1.0])], state)
        adam_step(params, [np.array([0.25, 0.5])], state)
        np.testing.assert_allclose(
            params[0], [0.8067820404774624, -1.873366297370903], atol=1e-6
        )
        assert state.step == 2

    def test_nonfinite_gradient_names_tensor(self):
        params = [np.zeros(2, dtype=np.float32), np.zeros(2, dtype=np.float32)]
        state = init_optimizer([("alpha", params[0]), ("beta", params[1])])
        with pytest.raises(NumericError, match="beta"):
            adam_step(params, [np.zeros(2), np.array([1.0, np.nan])], state)

    def test_matches_plain_python_recurrence(self):
        """Oracle: the textbook recurrence in pure python floats."""
        rng = np.random.default_rng(6)
        values = [0.7, -0.3]
        params = [np.array(values, dtype=np.float32)]
        state = init_optimizer([("p", params[0])], learning_rate=0.05)
        m = [0.0, 0.0]
        v = [0.0, 0.0]
        expected = list(values)
        for t in range(1, 6):
            grad = rng.normal(size=2)
            adam_step(params, [grad], state)
            for i in range(2):
                m[i] = 0.9 * m[i] + 0.1 * float(grad[i])
                v[i] = 0.999 * v[i] + 0.001 * float(grad[i]) ** 2
                mhat = m[i] / (1 - 0.9**t)
                vhat = v[i] / (1 - 0.999**t)
                expected[i] -= 0.05 * mhat / (vhat**0.5 + 1e-8)
            np.testing.assert_allclose(params[0], expected, atol=1e-5)


class TestCheckpoint:
    def _model(self, rng) -> ModelParams:
        return ModelParams(
            encoder=init_encoder_params(rng, vocab_size=32, embed_dim=5, hidden_dim=6),
            head=init_head_params(6, (3, 5, 7), rng=rng),
        )

    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(30)
        model = self._model(rng)
        state = init_optimizer(model.named_tensors(), learning_rate=0.002)
        state.step = 17
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(path, model, state, taxonomy_hash=0xDEADBEEF, meta={"stage": "test"})
        loaded = load_checkpoint(path, expected_taxonomy_hash=0xDEADBEEF)
        for (name, original), (_, restored) in zip(
            model.named_tensors(), loaded.model.named_tensors()
        ):
            assert original.dtype == restored.dtype == np.float32
            np.testing.assert_array_equal(original, restored, err_msg=name)
        assert loaded.optimizer is not None
        assert loaded.optimizer.step == 17
        assert loaded.optimizer.learning_rate == 0.002
        assert loaded.meta == {"stage": "test"}
        # saving the loaded state reproduces the file byte for byte
        path2 = str(tmp_path / "again.ckpt")
        save_checkpoint(path2, loaded.model, loaded.optimizer, loaded.taxonomy_hash, loaded.meta)
        assert open(path, "rb").read() == open(path2, "rb").read()

    def test_roundtrip_without_optimizer(self, tmp_path):
        rng = np.random.default_rng(31)
        model = self._model(rng)
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(path, model, None, taxonomy_hash=1, meta={})
        assert load_checkpoint(path).optimizer is None

    def test_corrupt_magic(self, tmp_path):
        rng = np.random.default_rng(32)
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(path, self._model(rng), None, taxonomy_hash=1)
        raw = bytearray(open(path, "rb").read())
        raw[:4] = b"NOPE"
        open(path, "wb").write(bytes(raw))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        rng = np.random.default_rng(33)
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(path, self._model(rng), None, taxonomy_hash=1)
        raw = bytearray(open(path, "rb").read())
        raw[4:8] = (99).to_bytes(4, "little")
        open(path, "wb").write(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_truncated_file(self, tmp_path):
        rng = np.random.default_rng(34)
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(path, self._model(rng), None, taxonomy_hash=1)
        raw = open(path, "rb").read()
        open(path, "wb").write(raw[: len(raw) // 2])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_taxonomy_hash_mismatch(self, tmp_path):
        rng = np.random.default_rng(35)
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(path, self._model(rng), None, taxonomy_hash=1111)
        with pytest.raises(CheckpointError, match="taxonomy hash mismatch"):
            load_checkpoint(path, expected_taxonomy_hash=2222)

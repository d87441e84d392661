"""Training tests: Adam arithmetic, schedule, loop determinism, checkpoints."""

import numpy as np
import numpy.testing as npt
import pytest

from conftest import make_split_windows
from sparsecast.model import Forecaster, ModelConfig
from sparsecast.tensor import ParamStore
from sparsecast.training import (
    OptimizerState,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    checkpoint_bytes,
    evaluate,
    inspect_checkpoint,
    load_checkpoint,
    lr_schedule,
    repeat_last_baseline,
    save_checkpoint,
    train_loop,
)


class TestAdam:
    def test_first_step_moves_by_lr(self):
        store = ParamStore()
        t = store.add("w", np.array([1.0, -2.0, 0.5]))
        t.grad = np.array([0.3, -0.7, 2.0])
        adam_step(store, OptimizerState(), lr=1e-3, weight_decay=0.0)
        delta = np.abs(t.data - np.array([1.0, -2.0, 0.5]))
        npt.assert_allclose(delta, np.full(3, 1e-3), rtol=1e-6)

    def test_zero_gradients_leave_params(self):
        store = ParamStore()
        t = store.add("w", np.array([1.0, 2.0]))
        t.grad = np.zeros(2)
        adam_step(store, OptimizerState(), lr=1e-3, weight_decay=0.0)
        npt.assert_array_equal(t.data, [1.0, 2.0])

    def test_weight_decay_is_pure_shrinkage(self):
        store = ParamStore()
        t = store.add("w", np.array([2.0, -4.0]))
        t.grad = np.zeros(2)
        adam_step(store, OptimizerState(), lr=0.1, weight_decay=0.5)
        npt.assert_allclose(t.data, np.array([2.0, -4.0]) * (1 - 0.1 * 0.5), atol=1e-15)

    def test_missing_grad_names_parameter(self):
        store = ParamStore()
        store.add("hidden.w", np.zeros(2))
        with pytest.raises(ValueError, match="hidden.w"):
            adam_step(store, OptimizerState(), lr=1e-3)


class TestSchedule:
    def test_pinned_values(self):
        cfg = TrainConfig()
        assert lr_schedule(cfg, 0) == pytest.approx(1e-4)
        assert lr_schedule(cfg, 4) == pytest.approx(1e-4)
        assert lr_schedule(cfg, 5) == pytest.approx(5e-5)
        assert lr_schedule(cfg, 19) == pytest.approx(1.25e-5)

    def test_invariant_over_twenty_epochs(self):
        cfg = TrainConfig()
        for e in range(20):
            assert lr_schedule(cfg, e) == pytest.approx(1e-4 * 0.5 ** (e // 5))


def _tiny_trainable(seed=5):
    (train_w, val_w, test_w), scaler = make_split_windows(length=400, dims=2, L_x=12,
                                                          label_len=6, L_y=6, seed=seed)
    config = ModelConfig(L_x=12, label_len=6, L_y=6, d_x=2, d_y=2, d_model=8,
                         n_heads=2, enc_blocks=2)
    model = Forecaster(config, np.random.default_rng(seed))
    return model, train_w, val_w, test_w


class TestTrainLoop:
    def test_frozen_with_zero_lr(self):
        model, train_w, val_w, _ = _tiny_trainable()
        before = checkpoint_bytes(model.params)
        cfg = TrainConfig(lr=0.0, weight_decay=0.0, batch_size=1, epochs=1, max_steps=1,
                          seed=0)
        result = train_loop(model, train_w[:1], val_w[:4], cfg)
        assert checkpoint_bytes(model.params) == before
        assert "train_loss" in result.history[0]

    def test_same_seed_identical_history_and_params(self):
        results = []
        for _ in range(2):
            model, train_w, val_w, _ = _tiny_trainable(seed=6)
            cfg = TrainConfig(seed=6, batch_size=8, epochs=2, max_steps=8)
            r = train_loop(model, train_w, val_w[:10], cfg)
            results.append((checkpoint_bytes(model.params), r.history))
        assert results[0][0] == results[1][0]
        assert results[0][1] == results[1][1]

    def test_loss_decreases_on_learnable_data(self):
        model, train_w, val_w, _ = _tiny_trainable(seed=7)
        cfg = TrainConfig(seed=7, lr=1e-3, batch_size=16, epochs=5, max_steps=40)
        result = train_loop(model, train_w, val_w[:10], cfg)
        assert result.history[-1]["train_loss"] < result.history[0]["train_loss"]

    def test_divergence_aborts_with_diagnostics(self):
        model, train_w, val_w, _ = _tiny_trainable(seed=8)
        poisoned = train_w[0]
        poisoned.target[...] = np.nan
        with pytest.raises(TrainingDiverged, match="epoch 0"):
            train_loop(model, [poisoned], val_w[:2],
                       TrainConfig(batch_size=1, epochs=1))

    def test_empty_split_rejected(self):
        model, train_w, _, _ = _tiny_trainable(seed=9)
        with pytest.raises(ValueError, match="empty"):
            evaluate(model, [])


class TestEvaluate:
    def test_exact_model_scores_perfectly(self):
        model, _, _, test_w = _tiny_trainable(seed=10)

        class Oracle:
            def forward(self, sample):
                from sparsecast.tensor import Tensor
                return Tensor(sample.target)

        result = evaluate(Oracle(), test_w[:5])
        assert result.corr == pytest.approx(1.0)
        assert result.mse == 0.0

    def test_constant_model_flagged_zero_corr(self):
        class Flat:
            def forward(self, sample):
                from sparsecast.tensor import Tensor
                return Tensor(np.zeros_like(sample.target))

        _, _, _, test_w = _tiny_trainable(seed=11)
        result = evaluate(Flat(), test_w[:5])
        assert result.corr == 0.0
        assert any("zero_variance_prediction" in f for f in result.flags)

    def test_repeat_last_baseline_is_finite(self):
        _, _, _, test_w = _tiny_trainable(seed=12)
        result = repeat_last_baseline(test_w)
        assert np.isfinite([result.corr, result.mse, result.mae]).all()
        assert result.mse > 0


class TestCheckpoint:
    def test_roundtrip_preserves_order_shapes_values(self, tmp_path):
        model, *_ = _tiny_trainable(seed=13)
        path = tmp_path / "model.hgnt"
        save_checkpoint(model.params, path)
        loaded = load_checkpoint(path)
        assert loaded.names() == model.params.names()
        for name, t in model.params.items():
            npt.assert_array_equal(loaded[name].data, t.data)

    def test_magic_and_checksum(self, tmp_path):
        store = ParamStore()
        store.add("w", np.array([1.5, -2.5]))
        path = tmp_path / "w.hgnt"
        save_checkpoint(store, path)
        blob = path.read_bytes()
        assert blob.startswith(b"HGNT1")
        corrupted = bytearray(blob)
        corrupted[10] ^= 0xFF
        bad = tmp_path / "bad.hgnt"
        bad.write_bytes(bytes(corrupted))
        with pytest.raises(ValueError, match="checksum"):
            load_checkpoint(bad)

    def test_inspect_reports_shapes(self, tmp_path):
        store = ParamStore()
        store.add("a.w", np.zeros((3, 4)))
        store.add("a.b", np.zeros(4))
        path = tmp_path / "s.hgnt"
        save_checkpoint(store, path)
        info = inspect_checkpoint(path)
        assert info["checksum_ok"]
        assert info["parameters"][0] == {"name": "a.w", "shape": [3, 4], "elements": 12}
        assert info["total_parameters"] == 16

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTAMAGIC" + b"\x00" * 32)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "short.hgnt"
        path.write_bytes(b"HGNT1\x00\x01")
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(path)

    def test_fnv1a_reference_vectors(self):
        from sparsecast.tensor import fnv1a64
        assert fnv1a64(b"") == 0xCBF29CE484222325
        assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
        assert fnv1a64(b"foobar") == 0x85944171F73967E8

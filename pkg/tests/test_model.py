"""Model tests: decoder input assembly, loss, shape law, determinism, causality."""

import numpy as np
import numpy.testing as npt
import pytest

from sparsecast.data import make_windows, synthetic_seasonal_frame
from sparsecast.model import (
    DecoderLayer,
    Forecaster,
    ModelConfig,
    build_decoder_input,
    mse_loss,
    variant_config,
)
from sparsecast.tensor import Tensor, no_grad


class TestBuildDecoderInput:
    def test_label_plus_zero_block(self):
        known = np.random.default_rng(0).standard_normal((96, 1))
        out = build_decoder_input(known, 48, 1)
        assert out.shape == (49, 1)
        npt.assert_array_equal(out[:48], known[-48:])
        npt.assert_array_equal(out[-1], [0.0])

    def test_zero_label_is_pure_zero_block(self):
        known = np.random.default_rng(1).standard_normal((10, 2))
        out = build_decoder_input(known, 0, 5)
        npt.assert_array_equal(out, np.zeros((5, 2)))

    def test_zero_known_values(self):
        out = build_decoder_input(np.zeros((12, 2)), 6, 3)
        npt.assert_array_equal(out, np.zeros((9, 2)))

    def test_label_longer_than_known_rejected(self):
        with pytest.raises(ValueError, match="label_len"):
            build_decoder_input(np.zeros((4, 1)), 5, 2)


class TestMseLoss:
    def test_perfect_fit(self):
        x = np.random.default_rng(2).standard_normal((4, 2))
        assert mse_loss(Tensor(x), x).item() == 0.0

    def test_constant_residual(self):
        x = np.random.default_rng(3).standard_normal((4, 2))
        assert mse_loss(Tensor(x + 2.0), x).item() == pytest.approx(4.0, abs=1e-12)

    def test_hand_arithmetic(self):
        assert mse_loss(Tensor(np.array([[0.0], [2.0]])),
                        np.array([[1.0], [3.0]])).item() == pytest.approx(1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            mse_loss(Tensor(np.zeros((3, 1))), np.zeros((4, 1)))


class TestForecaster:
    def test_zeroed_parameters_predict_projection_bias(self, tiny_model):
        model, sample = tiny_model
        for name, t in model.params.items():
            t.data[...] = 0.0
        bias = np.array([0.25, -1.5])
        model.params["proj.b"].data[...] = bias
        pred = model.forward(sample).data
        npt.assert_array_equal(pred, np.tile(bias, (4, 1)))

    def test_output_shape_tracks_config(self):
        frame = synthetic_seasonal_frame(200, 2, seed=4)
        config = ModelConfig(L_x=16, label_len=8, L_y=24, d_x=2, d_y=2, d_model=8,
                             n_heads=2, enc_blocks=2, dropout=0.0)
        model = Forecaster(config, np.random.default_rng(1))
        sample = make_windows(frame, 16, 8, 24)[0]
        assert model.forward(sample).shape == (24, 2)

    def test_forward_reproducible_bitwise(self, tiny_model):
        model, sample = tiny_model
        a = model.forward(sample).data
        b = model.forward(sample).data
        assert np.array_equal(a, b)

    def test_one_shot_decoding(self, tiny_model, monkeypatch):
        """The horizon is produced by a single decoder pass, not a loop."""
        model, sample = tiny_model
        calls = {"n": 0}
        original = DecoderLayer.__call__

        def counting(self, *args, **kwargs):
            calls["n"] += 1
            return original(self, *args, **kwargs)

        monkeypatch.setattr(DecoderLayer, "__call__", counting)
        model.forward(sample)
        assert calls["n"] == len(model.decoder_layers) == 1

    def test_decoder_layer_is_causal_in_decoder_states(self):
        config = ModelConfig(L_x=12, label_len=4, L_y=4, d_x=2, d_y=2, d_model=8,
                             n_heads=2, dropout=0.0)
        layer_rng = np.random.default_rng(5)
        from sparsecast.tensor import ParamStore
        store = ParamStore()
        layer = DecoderLayer(store, "dec", config, layer_rng)
        rng = np.random.default_rng(6)
        x = rng.standard_normal((8, 8))
        enc = rng.standard_normal((6, 8))
        with no_grad():
            base = layer(Tensor(x), Tensor(enc)).data
            t = 3
            for _ in range(10):
                tp = rng.integers(t + 1, 8)
                x2 = x.copy()
                x2[tp] += rng.standard_normal(8)
                out = layer(Tensor(x2), Tensor(enc)).data
                assert np.array_equal(out[: t + 1], base[: t + 1])

    def test_variant_config_changes_exactly_three_fields(self):
        base = ModelConfig(L_x=16, label_len=8, L_y=4, d_x=1, d_y=1, d_model=8,
                           n_heads=2)
        flipped = variant_config(base, embedding=False, distill=False, neural_sparse=False)
        diff = {k for k in base.__dict__
                if base.__dict__[k] != flipped.__dict__[k]}
        assert diff == {"gated_embedding", "distill", "attention"}

    def test_config_validation(self):
        with pytest.raises(ValueError, match="label_len"):
            ModelConfig(L_x=8, label_len=9, L_y=4, d_x=1, d_y=1)
        with pytest.raises(ValueError, match="attention"):
            ModelConfig(L_x=8, label_len=4, L_y=4, d_x=1, d_y=1, attention="other")

    @pytest.mark.parametrize("attention", ["canonical", "prob_sparse"])
    def test_alternate_attention_kinds_run(self, attention):
        frame = synthetic_seasonal_frame(100, 2, seed=22)
        config = ModelConfig(L_x=12, label_len=4, L_y=4, d_x=2, d_y=2, d_model=8,
                             n_heads=2, enc_blocks=2, dropout=0.0, attention=attention)
        model = Forecaster(config, np.random.default_rng(5))
        sample = make_windows(frame, 12, 4, 4)[0]
        pred = model.forward(sample)
        assert pred.shape == (4, 2) and np.isfinite(pred.data).all()

    def test_pre_norm_runs_and_differs_from_post_norm(self):
        frame = synthetic_seasonal_frame(100, 2, seed=23)
        sample = make_windows(frame, 12, 4, 4)[0]
        outs = []
        for pre_norm in (False, True):
            config = ModelConfig(L_x=12, label_len=4, L_y=4, d_x=2, d_y=2, d_model=8,
                                 n_heads=2, enc_blocks=2, dropout=0.0, pre_norm=pre_norm)
            model = Forecaster(config, np.random.default_rng(6))
            outs.append(model.forward(sample).data)
        assert not np.array_equal(outs[0], outs[1])

    def test_cumsum_normalization_reaches_decoder_fill(self):
        """The running-mean switch must change lazy decoder rows."""
        frame = synthetic_seasonal_frame(160, 2, seed=24)
        sample = make_windows(frame, 24, 12, 12)[0]
        outs = []
        for normalized in (False, True):
            config = ModelConfig(L_x=24, label_len=12, L_y=12, d_x=2, d_y=2,
                                 d_model=8, n_heads=2, enc_blocks=2, dropout=0.0,
                                 c=1.0, cumsum_normalized=normalized)
            model = Forecaster(config, np.random.default_rng(7))
            outs.append(model.forward(sample).data)
        assert not np.array_equal(outs[0], outs[1])

    def test_prob_sparse_model_runs_and_is_deterministic(self):
        frame = synthetic_seasonal_frame(120, 2, seed=7)
        config = ModelConfig(L_x=12, label_len=4, L_y=4, d_x=2, d_y=2, d_model=8,
                             n_heads=2, enc_blocks=2, dropout=0.0,
                             attention="prob_sparse")
        model = Forecaster(config, np.random.default_rng(2))
        sample = make_windows(frame, 12, 4, 4)[0]
        a = model.forward(sample).data
        b = model.forward(sample).data
        assert np.array_equal(a, b)

    def test_single_row_decoder(self):
        """label_len=0, L_y=1: the decoder runs on one position."""
        frame = synthetic_seasonal_frame(100, 2, seed=20)
        config = ModelConfig(L_x=12, label_len=0, L_y=1, d_x=2, d_y=2, d_model=8,
                             n_heads=2, enc_blocks=2, dropout=0.0)
        model = Forecaster(config, np.random.default_rng(3))
        sample = make_windows(frame, 12, 0, 1)[0]
        assert sample.known_tail.shape == (0, 2)
        pred = model.forward(sample)
        assert pred.shape == (1, 2)
        assert np.isfinite(pred.data).all()

    def test_zero_value_cross_attention_contributes_nothing(self):
        """With W_V and W_O of every cross-attention zeroed, the decoder output
        must not depend on the encoder output at all."""
        frame = synthetic_seasonal_frame(100, 2, seed=21)
        config = ModelConfig(L_x=12, label_len=4, L_y=4, d_x=2, d_y=2, d_model=8,
                             n_heads=2, enc_blocks=2, dropout=0.0)
        model = Forecaster(config, np.random.default_rng(4))
        for name, t in model.params.items():
            if "cross_attn" in name and (name.endswith(".w_v") or name.endswith(".w_o")):
                t.data[...] = 0.0
        sample = make_windows(frame, 12, 4, 4)[0]
        base = model.forward(sample).data
        # perturb the encoder path only: scale every encoder-side parameter
        for name, t in model.params.items():
            if name.startswith("encoder.") or name.startswith("enc_embed."):
                t.data *= 1.7
        shifted = model.forward(sample).data
        assert np.array_equal(base, shifted)

    def test_predict_applies_inverse_scaling(self, tiny_model):
        model, sample = tiny_model
        from sparsecast.data import StandardScaler
        scaler = StandardScaler("standardize_per_dim")
        scaler.fit(np.random.default_rng(8).standard_normal((50, 2)) * 3.0 + 1.0)
        forecast = model.predict(sample, scaler=scaler, target_columns=[0, 1])
        npt.assert_allclose(forecast.predictions,
                            scaler.inverse(forecast.scaled_predictions, columns=[0, 1]),
                            atol=1e-12)

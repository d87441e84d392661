"""Full forecaster: embedded encoder window -> encoder -> generative decoder.

The decoder input is the last ``label_len`` rows of the known target
series followed by a zero block of length ``L_y``; one forward pass
yields the whole horizon (no autoregressive loop).  Its self-attention is
the masked (causal) variant of the configured sparse kernel, followed by
canonical cross-attention against the encoder output.
"""

from dataclasses import dataclass, replace

import numpy as np

from .attention import AttentionConfig, MultiHeadAttention, ScoreBudget
from .embedding import WindowEmbedding
from .encoder import Encoder
from .layers import Dense, FeedForward, LayerNorm, dropout
from .tensor import ParamStore, Tensor, mean_

ATTENTION_CHOICES = ("neural_sparse", "prob_sparse", "canonical")
_MASKED_KIND = {
    "neural_sparse": "masked_neural_sparse",
    "prob_sparse": "masked_prob_sparse",
    "canonical": "masked_canonical",
}


@dataclass
class ModelConfig:
    """Every architectural hyperparameter of the forecaster."""

    L_x: int
    label_len: int
    L_y: int
    d_x: int
    d_y: int
    h: int = 0
    d_model: int = 512
    n_heads: int = 8
    c: float = 5.0
    enc_blocks: int = 3
    dec_layers: int = 1
    d_ff: int | None = None
    dropout: float = 0.05
    attention: str = "neural_sparse"
    distill: str = "parallel_pool"
    gated_embedding: bool = True
    pre_norm: bool = False
    cumsum_normalized: bool = False

    def __post_init__(self):
        if self.label_len > self.L_x:
            raise ValueError(f"label_len={self.label_len} exceeds L_x={self.L_x}")
        if self.label_len < 0 or self.L_y < 1:
            raise ValueError("label_len must be >= 0 and L_y >= 1")
        if self.h < 0:
            raise ValueError("h must be >= 0")
        if self.attention not in ATTENTION_CHOICES:
            raise ValueError(f"unknown attention {self.attention!r}")
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model

    @property
    def dec_len(self) -> int:
        return self.label_len + self.L_y


@dataclass
class Forecast:
    """Model output in original units plus the scaled values it came from."""

    predictions: np.ndarray
    scaled_predictions: np.ndarray


def build_decoder_input(known_values, label_len: int, horizon: int) -> np.ndarray:
    """Warm-start block for the decoder: the last ``label_len`` rows of the
    known (scaled) target series followed by ``horizon`` zero rows."""
    known = np.asarray(known_values, dtype=np.float64)
    if known.ndim != 2:
        raise ValueError("known_values must be 2-D (rows, d_y)")
    if label_len > known.shape[0]:
        raise ValueError(
            f"label_len={label_len} exceeds the {known.shape[0]} known rows"
        )
    tail = known[known.shape[0] - label_len:] if label_len else known[:0]
    return np.vstack([tail, np.zeros((horizon, known.shape[1]))])


class DecoderLayer:
    """Masked self-attention, canonical cross-attention, feed-forward;
    each sublayer wrapped in residual + layer norm."""

    def __init__(self, store: ParamStore, prefix: str, config: ModelConfig,
                 rng: np.random.Generator):
        d = config.d_model
        self_cfg = AttentionConfig(config.n_heads, d, c=config.c,
                                   kind=_MASKED_KIND[config.attention],
                                   cumsum_normalized=config.cumsum_normalized)
        cross_cfg = AttentionConfig(config.n_heads, d, c=config.c, kind="canonical")
        self.self_attn = MultiHeadAttention(store, f"{prefix}.self_attn", self_cfg, rng)
        self.norm1 = LayerNorm(store, f"{prefix}.norm1", d)
        self.cross_attn = MultiHeadAttention(store, f"{prefix}.cross_attn", cross_cfg, rng)
        self.norm2 = LayerNorm(store, f"{prefix}.norm2", d)
        self.ffn = FeedForward(store, f"{prefix}.ffn", d, config.d_ff, rng)
        self.norm3 = LayerNorm(store, f"{prefix}.norm3", d)
        self.drop = config.dropout
        self.pre_norm = config.pre_norm

    def __call__(self, x: Tensor, enc_out: Tensor, *,
                 rng: np.random.Generator | None = None, train: bool = False,
                 budget: ScoreBudget | None = None) -> Tensor:
        def maybe_drop(t):
            return dropout(t, self.drop, rng) if train and self.drop > 0 else t

        attn_rng = rng if train else np.random.default_rng(0)
        if self.pre_norm:
            x = x + maybe_drop(self.self_attn(self.norm1(x), rng=attn_rng, budget=budget))
            x = x + maybe_drop(self.cross_attn(self.norm2(x), enc_out, rng=attn_rng,
                                               budget=budget))
            return x + maybe_drop(self.ffn(self.norm3(x)))
        x = self.norm1(x + maybe_drop(self.self_attn(x, rng=attn_rng, budget=budget)))
        x = self.norm2(x + maybe_drop(self.cross_attn(x, enc_out, rng=attn_rng,
                                                      budget=budget)))
        return self.norm3(x + maybe_drop(self.ffn(x)))


class Forecaster:
    """Encoder-decoder forecaster over single windows.

    Inference over frozen parameters is pure and may run concurrently;
    training mutates the store under a single writer.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        store = ParamStore()
        self.params = store
        self.enc_embed = WindowEmbedding(store, "enc_embed", config.d_x, config.d_model,
                                         config.L_x, rng, gated=config.gated_embedding)
        enc_attn = AttentionConfig(config.n_heads, config.d_model, c=config.c,
                                   kind=config.attention)
        self.encoder = Encoder(store, "encoder", config.enc_blocks, enc_attn,
                               config.d_ff, config.dropout, rng,
                               distill_kind=config.distill, pre_norm=config.pre_norm)
        self.dec_embed = WindowEmbedding(store, "dec_embed", config.d_y, config.d_model,
                                         config.dec_len, rng,
                                         gated=config.gated_embedding)
        self.decoder_layers = [
            DecoderLayer(store, f"decoder{i}", config, rng)
            for i in range(config.dec_layers)
        ]
        self.proj = Dense(store, "proj", config.d_model, config.d_y, rng, bias=True)

    @property
    def attention_kind(self) -> str:
        return self.config.attention

    def forward(self, sample, *, rng: np.random.Generator | None = None,
                train: bool = False, budget: ScoreBudget | None = None) -> Tensor:
        """One-shot forecast: returns the scaled (L_y, d_y) prediction block."""
        if train and rng is None:
            raise ValueError("training-mode forward requires an rng (dropout/sampling)")
        cfg = self.config
        enc_x = self.enc_embed(sample.enc_values, sample.enc_stamps)
        enc_out = self.encoder(enc_x, rng=rng, train=train, budget=budget)
        dec_values = build_decoder_input(sample.known_tail, cfg.label_len, cfg.L_y)
        dec_x = self.dec_embed(dec_values, sample.dec_stamps)
        for layer in self.decoder_layers:
            dec_x = layer(dec_x, enc_out, rng=rng, train=train, budget=budget)
        out = self.proj(dec_x)
        return out[out.shape[0] - cfg.L_y:]

    def loss(self, sample, *, rng: np.random.Generator | None = None,
             train: bool = False) -> Tensor:
        return mse_loss(self.forward(sample, rng=rng, train=train), Tensor(sample.target))

    def predict(self, sample, scaler=None, target_columns=None) -> Forecast:
        """Forecast one window; inverse-scale when a scaler is given."""
        scaled = self.forward(sample).data
        if scaler is None:
            return Forecast(predictions=scaled.copy(), scaled_predictions=scaled)
        original = scaler.inverse(scaled, columns=target_columns)
        return Forecast(predictions=original, scaled_predictions=scaled)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error over every entry of the prediction block."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: predictions {pred.shape} vs targets {target.shape}")
    diff = pred - target
    return mean_(diff * diff)


def variant_config(base: ModelConfig, *, embedding: bool, distill: bool,
                   neural_sparse: bool) -> ModelConfig:
    """Apply the three ablation toggles to a base configuration.

    Exactly the fields ``gated_embedding``, ``distill`` and ``attention``
    change; everything else is untouched.
    """
    return replace(
        base,
        gated_embedding=embedding,
        distill="parallel_pool" if distill else "maxpool_only",
        attention="neural_sparse" if neural_sparse else "prob_sparse",
    )

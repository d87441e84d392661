"""Single-stack encoder: attention blocks joined by length-halving distillation.

Each distillation step builds conv+ELU features F from the block output
x and combines three stride-2 pools:

    next = maxpool(F) + gamma * avgpool(F) + avgpool(x)

where gamma is a learnable scalar and the last term is the down-sampled
residual of the block output.  Every step maps L -> ceil(L/2), so the
default three-block encoder returns a quarter of the input length.  The
``maxpool_only`` variant keeps only maxpool(conv+ELU) with no gamma
branch and no residual.
"""

import numpy as np

from .attention import AttentionConfig, MultiHeadAttention, ScoreBudget
from .layers import FeedForward, LayerNorm, uniform_init
from .tensor import ParamStore, Tensor, conv1d_time, dropout, elu, pool1d

DISTILL_KINDS = ("parallel_pool", "maxpool_only")


class DistillParams:
    """Per-step distillation parameters: width-3 conv, bias, scalar gamma."""

    def __init__(self, store: ParamStore, prefix: str, d_model: int,
                 rng: np.random.Generator):
        self.kernel = store.add(f"{prefix}.kernel",
                                uniform_init(rng, (d_model, d_model, 3), d_model * 3))
        self.bias = store.add(f"{prefix}.bias", np.zeros(d_model))
        self.gamma = store.add(f"{prefix}.gamma", np.asarray(1.0))


def conv_elu_feature(x: Tensor, params: DistillParams) -> Tensor:
    """Length-preserving feature map: ELU(conv width 3, padding 1)."""
    return elu(conv1d_time(x, params.kernel, padding=1) + params.bias)


def distill_step(x: Tensor, params: DistillParams, kind: str = "parallel_pool") -> Tensor:
    """Halve the sequence length of one attention block's output."""
    if kind not in DISTILL_KINDS:
        raise ValueError(f"unknown distill kind {kind!r}")
    if x.shape[0] < 2:
        raise ValueError("cannot distill length-1 sequence")
    features = conv_elu_feature(x, params)
    pooled_max = pool1d(features, "max", kernel=3, stride=2, padding=1)
    if kind == "maxpool_only":
        return pooled_max
    pooled_avg = pool1d(features, "avg", kernel=3, stride=2, padding=1)
    downsampled = pool1d(x, "avg", kernel=3, stride=2, padding=1)
    return pooled_max + params.gamma * pooled_avg + downsampled


class AttentionBlock:
    """Multi-head attention with residual + layer norm + feed-forward."""

    def __init__(self, store: ParamStore, prefix: str, attn_config: AttentionConfig,
                 d_ff: int, drop: float, rng: np.random.Generator,
                 pre_norm: bool = False):
        self.attn = MultiHeadAttention(store, f"{prefix}.attn", attn_config, rng)
        self.norm1 = LayerNorm(store, f"{prefix}.norm1", attn_config.d_model)
        self.ffn = FeedForward(store, f"{prefix}.ffn", attn_config.d_model, d_ff, rng)
        self.norm2 = LayerNorm(store, f"{prefix}.norm2", attn_config.d_model)
        self.drop = drop
        self.pre_norm = pre_norm

    def __call__(self, x: Tensor, *, rng: np.random.Generator | None = None,
                 train: bool = False, budget: ScoreBudget | None = None) -> Tensor:
        def maybe_drop(t):
            return dropout(t, self.drop, rng) if train and self.drop > 0 else t

        attn_rng = rng if train else np.random.default_rng(0)
        if self.pre_norm:
            x = x + maybe_drop(self.attn(self.norm1(x), rng=attn_rng, budget=budget))
            return x + maybe_drop(self.ffn(self.norm2(x)))
        x = self.norm1(x + maybe_drop(self.attn(x, rng=attn_rng, budget=budget)))
        return self.norm2(x + maybe_drop(self.ffn(x)))


class Encoder:
    """n_blocks attention blocks with a distill step between consecutive blocks."""

    def __init__(self, store: ParamStore, prefix: str, n_blocks: int,
                 attn_config: AttentionConfig, d_ff: int, drop: float,
                 rng: np.random.Generator, distill_kind: str = "parallel_pool",
                 pre_norm: bool = False):
        if n_blocks < 1:
            raise ValueError("encoder needs at least one block")
        self.distill_kind = distill_kind
        self.blocks = [
            AttentionBlock(store, f"{prefix}.block{j}", attn_config, d_ff, drop, rng,
                           pre_norm=pre_norm)
            for j in range(n_blocks)
        ]
        self.distills = [
            DistillParams(store, f"{prefix}.distill{j}", attn_config.d_model, rng)
            for j in range(n_blocks - 1)
        ]

    def __call__(self, x: Tensor, *, rng: np.random.Generator | None = None,
                 train: bool = False, budget: ScoreBudget | None = None) -> Tensor:
        for j, block in enumerate(self.blocks):
            x = block(x, rng=rng, train=train, budget=budget)
            if j < len(self.distills):
                x = distill_step(x, self.distills[j], kind=self.distill_kind)
        return x


def encoder_output_length(length: int, n_blocks: int) -> int:
    """Sequence length after the encoder: (n_blocks - 1) halvings, each L -> ceil(L/2)."""
    for _ in range(n_blocks - 1):
        length = (length + 1) // 2
    return length

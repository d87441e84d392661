"""sparsecast: long-sequence multivariate time-series forecasting with
learned sparse attention, built on a small float64 autodiff tensor core."""

from .attention import (
    AttentionConfig,
    ScoreBudget,
    canonical_attention,
    importance_scores,
    masked_neural_sparse_attention,
    neural_sparse_attention,
    prob_sparse_attention,
    select_top_queries,
    top_n_count,
)
from .bench import BenchRecord, bench_attention, write_bench_csv
from .data import (
    MetricResult,
    StandardScaler,
    TimeSeriesFrame,
    WindowSample,
    fit_apply_scaler,
    load_csv,
    make_windows,
    metrics,
    split_622,
    synthetic_seasonal_frame,
)
from .embedding import embed_window, positional_encoding, stamp_embedding_sum
from .encoder import conv_elu_feature, distill_step, encoder_output_length
from .model import Forecast, Forecaster, ModelConfig, build_decoder_input, mse_loss
from .tensor import AllocationTracker, ParamStore, Tensor, finite_diff_check, no_grad
from .training import (
    TrainConfig,
    adam_step,
    evaluate,
    load_checkpoint,
    lr_schedule,
    save_checkpoint,
    train_loop,
)
from .ablation import VARIANTS, run_ablation

__version__ = "0.1.0"

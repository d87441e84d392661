"""The eight-variant ablation grid on a synthetic operations-style dataset.

The three architecture toggles are E (gated embedding), D (parallel-pool
distillation), N (learned-score sparse attention).  "none" disables all
three (the sampled-score baseline proxy); "full" enables all of them;
M0..M5 cover the remaining combinations.  Every variant trains with the
same seed and data for a fixed number of steps.

Run: python demos/ablation_grid.py   (about a minute)
"""

from sparsecast import (
    ModelConfig,
    TrainConfig,
    fit_apply_scaler,
    make_windows,
    run_ablation,
    split_622,
)
from sparsecast.ablation import VARIANTS, format_table
from sparsecast.data import synthetic_aiops_frame

HORIZONS = [4, 8]

frame = synthetic_aiops_frame(300, seed=2)
print(f"dataset: {len(frame)} rows x {len(frame.columns)} columns, "
      f"target {frame.target_columns[0]}")

train_f, val_f, test_f = split_622(frame, min_len=16 + max(HORIZONS))
(train_s, val_s, test_s), _ = fit_apply_scaler(train_f, [val_f, test_f])

train_w, val_w, test_w = {}, {}, {}
for horizon in HORIZONS:
    train_w[horizon] = make_windows(train_s, 16, 8, horizon, univariate=True)
    val_w[horizon] = make_windows(val_s, 16, 8, horizon, univariate=True)[:8]
    test_w[horizon] = make_windows(test_s, 16, 8, horizon, univariate=True)[:16]

base = ModelConfig(L_x=16, label_len=8, L_y=4, d_x=1, d_y=1, d_model=16,
                   n_heads=2, enc_blocks=3, dec_layers=1)
train_cfg = TrainConfig(seed=3, batch_size=4, epochs=50, max_steps=30)

print(f"variants: {', '.join(VARIANTS)}  (toggles E/D/N)\n")
rows = run_ablation(base, train_w, val_w, test_w, HORIZONS, train_cfg)
print(format_table(rows))

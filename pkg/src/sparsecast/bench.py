"""Attention-kernel microbenchmark: wall time, exact dot-product counters,
and transient score-buffer bytes.

One record covers one (kernel, batch, seq_len) cell at fixed heads and
head width.  Inputs are seeded standard-normal tensors shaped
(batch, seq_len, heads, dims); each repeat times a full pass over every
batch item and head.  Counters are exact and identical across repeats;
the reported wall time is the raw median (no smoothing), and the three
phase times (scoring / selection / aggregation) come from the median
repeat.  A cell that cannot allocate is recorded with -1 fields and the
sweep continues.
"""

import csv
import io
import statistics
import time
from dataclasses import dataclass

import numpy as np

from .attention import (
    PhaseTimer,
    ScoreBudget,
    canonical_attention,
    importance_scores,
    neural_sparse_attention,
    prob_sparse_attention,
)
from .layers import uniform_init
from .tensor import AllocationTracker, Tensor, no_grad

BENCH_KERNELS = ("canonical", "prob_sparse", "neural_sparse")
CSV_HEADER = ["kernel", "batch", "seq_len", "heads", "dims", "median_ns",
              "dot_products", "peak_bytes", "t1_ns", "t2_ns", "t3_ns"]
DEFAULT_BATCHES = (1, 4, 16, 32, 64)
DEFAULT_SEQ_LENS = (64, 128, 256, 512, 768, 1024)


@dataclass
class BenchRecord:
    kernel: str
    batch: int
    seq_len: int
    heads: int
    dims: int
    median_ns: int
    dot_products: int
    peak_bytes: int
    t1_ns: int
    t2_ns: int
    t3_ns: int
    failed: bool = False

    def csv_row(self):
        return [self.kernel, self.batch, self.seq_len, self.heads, self.dims,
                self.median_ns, self.dot_products, self.peak_bytes,
                self.t1_ns, self.t2_ns, self.t3_ns]


def _run_once(kernel: str, q: np.ndarray, k: np.ndarray, v: np.ndarray,
              c: float, score_kernel, score_bias, rng_seed: int):
    """One full pass over a (batch, L, heads, dims) input; returns
    (elapsed_ns, budget, tracker_peak, timer)."""
    batch, L, heads, dims = q.shape
    budget = ScoreBudget()
    tracker = AllocationTracker()
    timer = PhaseTimer()
    rng = np.random.default_rng(rng_seed)
    start = time.perf_counter_ns()
    for b in range(batch):
        if kernel == "neural_sparse":
            with timer.phase(1):
                q_full = q[b].reshape(L, heads * dims)
                k_full = k[b].reshape(L, heads * dims)
                scores = importance_scores(q_full, k_full, score_kernel, score_bias)
            for h in range(heads):
                neural_sparse_attention(q[b, :, h], k[b, :, h], v[b, :, h], c,
                                        scores[:, h], budget=budget, tracker=tracker,
                                        timer=timer)
        elif kernel == "prob_sparse":
            for h in range(heads):
                prob_sparse_attention(q[b, :, h], k[b, :, h], v[b, :, h], c, rng,
                                      budget=budget, tracker=tracker, timer=timer)
        else:
            for h in range(heads):
                canonical_attention(q[b, :, h], k[b, :, h], v[b, :, h],
                                    budget=budget, tracker=tracker, timer=timer)
    elapsed = time.perf_counter_ns() - start
    return elapsed, budget, tracker.peak, timer


def bench_attention(batches=DEFAULT_BATCHES, seq_lens=DEFAULT_SEQ_LENS,
                    kernels=BENCH_KERNELS, heads: int = 8, dims: int = 64,
                    repeats: int = 5, warmup: int = 2, c: float = 5.0,
                    seed: int = 0) -> list:
    """Sweep the benchmark grid and return one record per cell.

    Runs single-threaded in a fixed order so cells do not contend; the
    random inputs and the sampling seed are derived per cell, making
    counters reproducible run to run.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    records = []
    with no_grad():
        for kernel in kernels:
            if kernel not in BENCH_KERNELS:
                raise ValueError(f"unknown benchmark kernel {kernel!r}")
            for batch in batches:
                for L in seq_lens:
                    cell_seed = np.random.SeedSequence(
                        [seed, BENCH_KERNELS.index(kernel), batch, L]
                    ).generate_state(1)[0]
                    rng = np.random.default_rng(cell_seed)
                    try:
                        q = rng.standard_normal((batch, L, heads, dims))
                        k = rng.standard_normal((batch, L, heads, dims))
                        v = rng.standard_normal((batch, L, heads, dims))
                        score_kernel = Tensor(uniform_init(rng, (heads, heads * dims, 3),
                                                           heads * dims * 3))
                        score_bias = Tensor(np.zeros(heads))
                        runs = []
                        for rep in range(warmup + repeats):
                            result = _run_once(kernel, q, k, v, c, score_kernel,
                                               score_bias, cell_seed + 1)
                            if rep >= warmup:
                                runs.append(result)
                        budgets = {r[1].dot_products_materialized for r in runs}
                        if len(budgets) != 1:
                            raise RuntimeError("nondeterministic dot-product counter")
                        times = sorted(r[0] for r in runs)
                        median_ns = int(statistics.median(times))
                        # phases from the repeat whose time is closest to the median
                        rep = min(runs, key=lambda r: abs(r[0] - median_ns))
                        records.append(BenchRecord(
                            kernel=kernel, batch=batch, seq_len=L, heads=heads,
                            dims=dims, median_ns=median_ns,
                            dot_products=rep[1].dot_products_materialized,
                            peak_bytes=rep[2], t1_ns=rep[3].t1_ns,
                            t2_ns=rep[3].t2_ns, t3_ns=rep[3].t3_ns,
                        ))
                    except MemoryError:
                        records.append(BenchRecord(
                            kernel=kernel, batch=batch, seq_len=L, heads=heads,
                            dims=dims, median_ns=-1, dot_products=-1, peak_bytes=-1,
                            t1_ns=-1, t2_ns=-1, t3_ns=-1, failed=True,
                        ))
    return records


def write_bench_csv(records, fp) -> None:
    """Write records with the fixed column roster (see CSV_HEADER)."""
    writer = csv.writer(fp)
    writer.writerow(CSV_HEADER)
    for record in records:
        writer.writerow(record.csv_row())


def bench_csv_text(records) -> str:
    buf = io.StringIO()
    write_bench_csv(records, buf)
    return buf.getvalue()

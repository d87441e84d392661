"""Adam training loop with step-decay schedule, evaluation, checkpointing.

Batches are index-shuffled per epoch from an explicit seed; the same
(seed, config, data) triple therefore reproduces the checkpoint byte for
byte.  Checkpoints store every parameter in insertion order behind the
magic ``HGNT1`` with a trailing 64-bit FNV-1a checksum of the payload.
"""

from dataclasses import dataclass, field

import numpy as np

from .data import MetricResult, metrics
from .tensor import ParamStore, fnv1a64, no_grad, pack_u64, unpack_u64

CHECKPOINT_MAGIC = b"HGNT1"


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 5e-4
    batch_size: int = 32
    epochs: int = 20
    lr_decay: float = 0.5
    lr_step_epochs: int = 5
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_steps: int | None = None


@dataclass
class OptimizerState:
    """Per-parameter Adam moment buffers plus the shared step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, lr: float):
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch}, lr {lr:.3e}"
        )
        self.epoch = epoch
        self.batch = batch
        self.lr = lr


def lr_schedule(config: TrainConfig, epoch: int) -> float:
    """Step decay: lr0 * decay^(epoch // step_epochs)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return config.lr * config.lr_decay ** (epoch // config.lr_step_epochs)


def adam_step(params: ParamStore, state: OptimizerState, lr: float,
              weight_decay: float = 0.0, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """One Adam update with bias correction and decoupled weight decay.

    The decay shrinks parameters before the moment update, so with zero
    gradients it reduces to pure shrinkage.  Every parameter must carry a
    gradient buffer (run zero_grad + backward first).
    """
    for name, t in params.items():
        if t.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
    state.step += 1
    k = state.step
    for name, t in params.items():
        if weight_decay:
            t.data *= 1.0 - lr * weight_decay
        g = t.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**k)
        v_hat = v / (1.0 - beta2**k)
        t.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def evaluate(model, samples, *, units: str = "scaled", scaler=None,
             target_columns=None) -> MetricResult:
    """Mean of per-window (CORR, MSE, MAE) over a frozen model.

    ``units="original"`` inverse-scales both predictions and targets
    before scoring.
    """
    if not samples:
        raise ValueError("cannot evaluate an empty split")
    if units not in ("scaled", "original"):
        raise ValueError(f"unknown metric units {units!r}")
    if units == "original" and scaler is None:
        raise ValueError("original-unit metrics need the scaler")
    corr = mse = mae = 0.0
    flags: list = []
    with no_grad():
        for sample in samples:
            pred = model.forward(sample).data
            truth = sample.target
            if units == "original":
                pred = scaler.inverse(pred, columns=target_columns)
                truth = scaler.inverse(truth, columns=target_columns)
            result = metrics(truth, pred)
            corr += result.corr
            mse += result.mse
            mae += result.mae
            flags.extend(result.flags)
    n = len(samples)
    return MetricResult(corr=corr / n, mse=mse / n, mae=mae / n, n=n, flags=flags)


@dataclass
class TrainResult:
    best_params: ParamStore
    history: list
    steps: int
    best_val_mse: float


def train_loop(model, train_samples, val_samples, config: TrainConfig) -> TrainResult:
    """Seeded mini-batch training with per-epoch validation.

    Gradients are averaged over each batch; the checkpoint with the best
    validation MSE is retained.  ``max_steps`` truncates the run (the
    final partial epoch is still validated and recorded).
    """
    if not train_samples:
        raise ValueError("no training samples")
    rng = np.random.default_rng(config.seed)
    params = model.params
    state = OptimizerState()
    history = []
    best_params = params.clone()
    best_val_mse = float("inf")
    steps = 0
    done = False

    for epoch in range(config.epochs):
        lr = lr_schedule(config, epoch)
        order = rng.permutation(len(train_samples))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            params.zero_grad()
            total = None
            for idx in batch:
                loss = model.loss(train_samples[idx], rng=rng, train=True)
                total = loss if total is None else total + loss
            total = total * (1.0 / len(batch))
            loss_value = total.item()
            if not np.isfinite(loss_value):
                raise TrainingDiverged(epoch, n_batches, lr)
            total.backward()
            adam_step(params, state, lr, config.weight_decay,
                      config.adam_beta1, config.adam_beta2, config.adam_eps)
            epoch_loss += loss_value
            n_batches += 1
            steps += 1
            if config.max_steps is not None and steps >= config.max_steps:
                done = True
                break
        val = evaluate(model, val_samples) if val_samples else None
        record = {"epoch": epoch, "lr": lr, "train_loss": epoch_loss / max(n_batches, 1),
                  "steps": steps}
        if val is not None:
            record.update({"val_corr": val.corr, "val_mse": val.mse, "val_mae": val.mae})
            if val.mse < best_val_mse:
                best_val_mse = val.mse
                best_params = params.clone()
        else:
            best_params = params.clone()
        history.append(record)
        if done:
            break
    return TrainResult(best_params=best_params, history=history, steps=steps,
                       best_val_mse=best_val_mse)


# -- checkpoint format ---------------------------------------------------


def checkpoint_bytes(params: ParamStore) -> bytes:
    """Serialize: magic, then per parameter name length + UTF-8 name + rank +
    extents (u64 LE) + float64 LE payload, then an FNV-1a checksum."""
    chunks = []
    for name, t in params.items():
        encoded = name.encode("utf-8")
        chunks.append(pack_u64(len(encoded)))
        chunks.append(encoded)
        chunks.append(pack_u64(t.data.ndim))
        for extent in t.data.shape:
            chunks.append(pack_u64(extent))
        chunks.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    payload = b"".join(chunks)
    return CHECKPOINT_MAGIC + payload + pack_u64(fnv1a64(payload))


def save_checkpoint(params: ParamStore, path):
    with open(path, "wb") as fp:
        fp.write(checkpoint_bytes(params))


def _parse_checkpoint(blob: bytes):
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    if len(blob) < len(CHECKPOINT_MAGIC) + 8:
        raise ValueError("truncated checkpoint file")
    payload = blob[len(CHECKPOINT_MAGIC):-8]
    stored, _ = unpack_u64(blob, len(blob) - 8)
    if fnv1a64(payload) != stored:
        raise ValueError("checkpoint checksum mismatch")
    entries = []
    offset = 0
    while offset < len(payload):
        name_len, offset = unpack_u64(payload, offset)
        name = payload[offset:offset + name_len].decode("utf-8")
        offset += name_len
        rank, offset = unpack_u64(payload, offset)
        shape = []
        for _ in range(rank):
            extent, offset = unpack_u64(payload, offset)
            shape.append(extent)
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        entries.append((name, data.reshape(shape).astype(np.float64)))
    return entries


def load_checkpoint(path) -> ParamStore:
    with open(path, "rb") as fp:
        blob = fp.read()
    store = ParamStore()
    for name, data in _parse_checkpoint(blob):
        store.add(name, data)
    return store


def inspect_checkpoint(path) -> dict:
    """Names, shapes and checksum status without loading into a model."""
    with open(path, "rb") as fp:
        blob = fp.read()
    entries = _parse_checkpoint(blob)
    return {
        "parameters": [{"name": n, "shape": list(d.shape), "elements": int(d.size)}
                       for n, d in entries],
        "total_parameters": int(sum(d.size for _, d in entries)),
        "checksum_ok": True,
        "file_bytes": len(blob),
    }


def repeat_last_baseline(samples) -> MetricResult:
    """Repeat-the-last-known-value forecaster, the smoke-test yardstick."""
    if not samples:
        raise ValueError("cannot score an empty split")
    corr = mse = mae = 0.0
    flags: list = []
    for sample in samples:
        if sample.known_tail.shape[0]:
            last = sample.known_tail[-1]
        else:
            last = sample.enc_values[-1, : sample.target.shape[1]]
        pred = np.broadcast_to(last, sample.target.shape)
        result = metrics(sample.target, pred)
        corr += result.corr
        mse += result.mse
        mae += result.mae
        flags.extend(result.flags)
    n = len(samples)
    return MetricResult(corr=corr / n, mse=mse / n, mae=mae / n, n=n, flags=flags)

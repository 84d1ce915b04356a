"""Teacher-forced training with the Adam optimizer plus gradient checking.

Training is a pure function of (data, config, seed): parameter init, the
validation carve-out and every epoch's shuffle derive their RNG streams
from the seed, so reruns and resumed runs reproduce loss curves exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DivergenceError
from .model import ModelParams, teacher_forced_offsets

_VAL_STREAM = 0x5EED


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    batch_size: int = 32
    seed: int = 0
    grad_clip: float | None = None
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 < self.beta1 < 1.0 or not 0.0 < self.beta2 < 1.0:
            raise ValueError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in [0, 1), got {self.val_fraction}")


class AdamState:
    """First/second moment per parameter plus the shared step counter."""

    def __init__(self, params: ModelParams):
        self.m = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}
        self.v = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}
        self.tau = 0

    @classmethod
    def restore(cls, params: ModelParams, m: dict, v: dict, tau: int) -> "AdamState":
        state = cls(params)
        state.m = {name: np.array(arr) for name, arr in m.items()}
        state.v = {name: np.array(arr) for name, arr in v.items()}
        state.tau = tau
        return state


def l2_loss(pred, target) -> Tensor:
    """Mean squared difference over all entries."""
    pred = ad.as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"l2_loss: shapes {pred.shape} and {target.shape} differ")
    diff = ad.sub(pred, Tensor(target))
    return ad.tmean(ad.mul(diff, diff))


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState,
              cfg: TrainConfig) -> None:
    """Standard Adam update with bias correction; params replaced in place."""
    state.tau += 1
    bc1 = 1.0 - cfg.beta1 ** state.tau
    bc2 = 1.0 - cfg.beta2 ** state.tau
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * (g * g)
        update = cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        params.tensors[name] = Tensor(params.tensors[name].data - update)


def _clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        factor = max_norm / total
        for name in grads:
            grads[name] = grads[name] * factor


def _window_loss(params: ModelParams, features: np.ndarray, target: np.ndarray,
                 rng: np.random.Generator | None = None) -> Tensor:
    return l2_loss(teacher_forced_offsets(params, features, target, rng=rng), target)


def _eval_mean_loss(params: ModelParams, features: list, targets: list) -> float:
    return float(np.mean([_window_loss(params, f, t).item() for f, t in zip(features, targets)]))


def train(
    params: ModelParams,
    features: list[np.ndarray],
    targets: list[np.ndarray],
    cfg: TrainConfig,
    state: AdamState | None = None,
    start_epoch: int = 0,
    on_epoch=None,
) -> tuple[list[dict], AdamState]:
    """Teacher-forced training loop over standardized feature windows.

    Returns one history row per epoch: epoch index, mean train loss, mean
    validation loss (NaN when no carve-out) and wall seconds. ``on_epoch``
    is called after each epoch with (epoch, params, state, row); the CLI
    hangs checkpointing off it.
    """
    if len(features) != len(targets) or not features:
        raise ValueError(f"{len(features)} feature blocks vs {len(targets)} target blocks")
    n = len(features)
    state = state or AdamState(params)

    # diagnostics carve-out; fixed permutation so resumed runs agree
    perm = np.random.default_rng([cfg.seed, _VAL_STREAM]).permutation(n)
    n_val = int(round(cfg.val_fraction * n))
    val_idx = perm[:n_val] if n - n_val >= 1 else perm[:0]
    train_idx = perm[len(val_idx):]

    history: list[dict] = []
    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        started = time.perf_counter()
        rng = np.random.default_rng([cfg.seed, epoch])
        order = train_idx[rng.permutation(len(train_idx))]
        drop_rng = np.random.default_rng([cfg.seed, epoch, 1]) if params.config.dropout else None
        losses = []
        for batch_no, lo in enumerate(range(0, len(order), cfg.batch_size)):
            batch = order[lo : lo + cfg.batch_size]
            acc = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}
            for idx in batch:
                loss = _window_loss(params, features[idx], targets[idx], rng=drop_rng)
                value = loss.item()
                if not np.isfinite(value):
                    raise DivergenceError(
                        f"training loss is not finite at epoch {epoch}, batch {batch_no}"
                    )
                losses.append(value)
                grads = ad.backward(loss)
                for name, tensor in params.tensors.items():
                    g = grads.get(tensor)
                    if g is not None:
                        acc[name] += g
            for name in acc:
                acc[name] /= len(batch)
            if cfg.grad_clip is not None:
                _clip_gradients(acc, cfg.grad_clip)
            adam_step(params, acc, state, cfg)
        val_loss = (
            _eval_mean_loss(params, [features[i] for i in val_idx], [targets[i] for i in val_idx])
            if len(val_idx)
            else float("nan")
        )
        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_loss": val_loss,
            "wall_seconds": time.perf_counter() - started,
        }
        history.append(row)
        if on_epoch is not None:
            on_epoch(epoch, params, state, row)
    return history, state


def verify_gradients(
    params: ModelParams,
    features: list[np.ndarray],
    targets: list[np.ndarray],
    n_samples: int = 20,
    h: float = 1e-6,
    seed: int = 0,
) -> dict:
    """Central-difference check of sampled parameter coordinates.

    Relative error uses max(|analytic|, |numeric|, 1e-6) as denominator.
    Returns the worst offender's coordinates alongside the full sample list.
    """

    def batch_loss_value() -> float:
        return float(np.mean([_window_loss(params, f, t).item() for f, t in zip(features, targets)]))

    losses = [_window_loss(params, f, t) for f, t in zip(features, targets)]
    total = losses[0]
    for extra in losses[1:]:
        total = ad.add(total, extra)
    grads = ad.backward(ad.scale(total, 1.0 / len(losses)))
    analytic = {name: grads.get(t, np.zeros_like(t.data)) for name, t in params.tensors.items()}

    rng = np.random.default_rng(seed)
    names = params.names()
    samples = []
    for _ in range(n_samples):
        name = names[rng.integers(len(names))]
        arr = params.tensors[name].data
        flat = int(rng.integers(arr.size))
        idx = np.unravel_index(flat, arr.shape)
        keep = arr[idx]
        try:
            arr[idx] = keep + h
            up = batch_loss_value()
            arr[idx] = keep - h
            down = batch_loss_value()
        finally:
            arr[idx] = keep
        numeric = (up - down) / (2.0 * h)
        a = float(analytic[name][idx])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
        samples.append({"param": name, "index": tuple(int(i) for i in idx),
                        "analytic": a, "numeric": numeric, "rel_err": rel})
    worst = max(samples, key=lambda s: s["rel_err"])
    return {"max_rel_err": worst["rel_err"], "worst": worst, "samples": samples}

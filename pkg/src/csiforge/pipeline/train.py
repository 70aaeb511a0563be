"""Mini-batch training of the refinement networks."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..neural import engine as E
from ..neural.engine import ParamStore
from ..neural.lstm import LSTMConfig, init_lstm, lstm_network
from ..neural.transformer import ModelConfig, init_transformer, input_scale, network, split_complex
from ..objective import LossWeights, total_loss_t
from ..rng import derive_rng
from .dataset import Dataset

log = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    """Raised when a batch produces a non-finite loss or gradient."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 4
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    schedule: str = "cosine"    # learning-rate schedule: "cosine" decay to 0 or "constant"
    kind: str = "transformer"   # or "lstm"
    # NMSE primary: SP-NMSE alone is minimized by shrinking the output (see README)
    loss: LossWeights = field(default_factory=lambda: LossWeights(primary="nmse"))
    model: ModelConfig | LSTMConfig | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("moment decays must lie in [0, 1)")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.kind not in ("transformer", "lstm"):
            raise ValueError(f"unknown model kind {self.kind!r}")

    def lr_at(self, step: int, total: int) -> float:
        if self.schedule == "constant" or total <= 1:
            return self.lr
        return 0.5 * self.lr * (1.0 + np.cos(np.pi * step / total))

    def model_config(self, K: int, L: int):
        if self.model is not None:
            return self.model
        return ModelConfig(K=K, L=L) if self.kind == "transformer" else LSTMConfig(K=K, L=L)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = None if self.model is None else self.model.to_dict()
        return d


class Adam:
    def __init__(self, params: ParamStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps, self.wd = lr, beta1, beta2, eps, weight_decay
        self.m = {n: np.zeros_like(t.value) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.value) for n, t in params.items()}
        self.t = 0

    def step(self):
        if self.lr == 0:
            return
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for n, p in self.params.items():
            g = p.grad
            if self.wd:
                g = g + self.wd * p.value
            m, v = self.m[n], self.v[n]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    params: ParamStore
    kind: str
    model_config: object
    history: list = field(default_factory=list)  # one dict per epoch

    @property
    def final_loss(self) -> float:
        return self.history[-1]["train_loss"]


def _net_fn(kind):
    return network if kind == "transformer" else lstm_network


def init_params(kind, cfg, seed):
    return init_transformer(cfg, seed) if kind == "transformer" else init_lstm(cfg, seed)


def batch_loss(params, kind, cfg, H_in, H_true, weights: LossWeights):
    """Graph loss on one batch; both grids are divided by the input RMS."""
    s = input_scale(H_in)[:, None, None]
    x = split_complex(H_in / s)
    y = split_complex(H_true / s)
    pred = _net_fn(kind)(E.Tensor(x), params, cfg)
    w = np.sum(np.abs(H_true) ** 2, axis=(1, 2)) if weights.reduction == "energy" else None
    return total_loss_t(pred, y, weights, w)


def evaluate_loss(params, kind, cfg, data: Dataset, weights: LossWeights, batch_size=64) -> float:
    total, n = 0.0, 0
    for i in range(0, len(data), batch_size):
        loss, _ = batch_loss(params, kind, cfg, data.inputs[i:i + batch_size], data.targets[i:i + batch_size],
                             weights)
        b = min(batch_size, len(data) - i)
        total += float(loss.value) * b
        n += b
    return total / n


def train(data: Dataset, config: TrainConfig = TrainConfig(), val: Dataset | None = None,
          params: ParamStore | None = None, max_steps: int | None = None, progress=None) -> TrainResult:
    """Adam on the composite loss; deterministic for a given seed."""
    if len(data) == 0:
        raise ValueError("training set is empty")
    cfg = config.model_config(data.K, data.L)
    if params is None:
        params = init_params(config.kind, cfg, derive_rng(config.seed, 0x1417))
    opt = Adam(params, config.lr, config.beta1, config.beta2, config.eps, config.weight_decay)
    order_rng = derive_rng(config.seed, 0x0BD5)
    result = TrainResult(params, config.kind, cfg)
    steps = 0
    per_epoch = -(-len(data) // config.batch_size)
    total_steps = per_epoch * config.epochs if max_steps is None else min(max_steps, per_epoch * config.epochs)
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = order_rng.permutation(len(data))
        acc, seen = 0.0, 0
        parts_acc: dict = {}
        for b, i in enumerate(range(0, len(order), config.batch_size)):
            idx = order[i:i + config.batch_size]
            params.zero_grad()
            try:
                loss, parts = batch_loss(params, config.kind, cfg, data.inputs[idx], data.targets[idx],
                                         config.loss)
            except FloatingPointError as exc:
                raise TrainingDivergedError(f"epoch {epoch}, batch {b} (samples {idx[:4].tolist()}...): "
                                            f"{exc}") from None
            value = float(loss.value)
            if not np.isfinite(value):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {b} "
                                            f"(samples {idx[:4].tolist()}...): {parts}")
            E.backward(loss)
            bad = [n for n, p in params.items() if not np.all(np.isfinite(p.grad))]
            if bad:
                raise TrainingDivergedError(f"non-finite gradient at epoch {epoch}, batch {b}: {bad[:3]}")
            opt.lr = config.lr_at(steps, total_steps)
            opt.step()
            acc += value * len(idx)
            seen += len(idx)
            for k, v in parts.items():
                parts_acc[k] = parts_acc.get(k, 0.0) + v * len(idx)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        row = {"epoch": epoch + 1, "train_loss": acc / seen}
        row.update({f"train_{k}": v / seen for k, v in parts_acc.items()})
        if val is not None and len(val):
            row["val_loss"] = evaluate_loss(params, config.kind, cfg, val, config.loss)
        row["seconds"] = time.perf_counter() - t0
        result.history.append(row)
        log.info("epoch %d: %s", epoch + 1, row)
        if progress is not None:
            progress(row)
        if max_steps is not None and steps >= max_steps:
            break
    return result

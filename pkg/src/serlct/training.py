"""Adam with decoupled weight decay, per-epoch exponential LR decay, mixup,
and segment-vote evaluation."""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from . import functional as F
from .features import SegmentBatch
from .metrics import MetricsReport, compute_metrics, confusion_matrix
from .nn import Module
from .tensor import Tensor, no_grad


class NumericAbort(RuntimeError):
    def __init__(self, batch_index: int, lr: float, lam: float, loss: float):
        super().__init__(f"non-finite loss {loss} at batch {batch_index} (lr={lr}, lambda={lam})")
        self.batch_index, self.lr, self.lam, self.loss = batch_index, lr, lam, loss


@dataclass
class TrainConfig:
    epochs: int = 150
    lr0: float = 0.001
    batch_size: int = 128
    weight_decay: float = 1e-6
    lr_gamma: float = 0.95
    lr_floor: float = 1e-6
    mixup_alpha: float = 0.2
    seed: int = 0
    dtype: str = "float32"
    eval_batch_size: int = 256

    def validate(self) -> None:
        for name in ("epochs", "lr0", "batch_size", "weight_decay", "lr_gamma", "lr_floor", "mixup_alpha"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if self.lr_floor >= self.lr0:
            raise ValueError("lr_floor must be below lr0")

    def to_dict(self) -> dict:
        return asdict(self)


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    return max(cfg.lr0 * cfg.lr_gamma**epoch, cfg.lr_floor)


class Adam:
    def __init__(self, model: Module, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = OrderedDict(model.named_parameters())
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.step_count = 0
        self.m = OrderedDict((n, np.zeros_like(p.data)) for n, p in self.params.items())
        self.v = OrderedDict((n, np.zeros_like(p.data)) for n, p in self.params.items())

    def step(self, lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t
        for name, p in self.params.items():
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for n in self.params:
            out[f"m.{n}"] = self.m[n]
            out[f"v.{n}"] = self.v[n]
        return out

    def load_state_arrays(self, step: int, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(step)
        for n in self.params:
            self.m[n] = np.array(arrays[f"m.{n}"])
            self.v[n] = np.array(arrays[f"v.{n}"])


@dataclass
class MixupResult:
    x: np.ndarray
    y: np.ndarray
    lam: float
    perm: np.ndarray


def one_hot(labels, num_classes: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((len(labels), num_classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1.0
    return out


def mixup_batch(x: np.ndarray, y: np.ndarray, alpha: float, rng: np.random.Generator, lam: float | None = None) -> MixupResult:
    """Blend each example with a randomly permuted partner using ``lam ~ Beta(alpha, alpha)``."""
    if alpha <= 0:
        raise ValueError("mixup alpha must be positive")
    n = len(x)
    if n < 2:
        return MixupResult(x, y, 1.0, np.arange(n))
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(n)
    xm = lam * x + (1.0 - lam) * x[perm]
    ym = lam * y + (1.0 - lam) * y[perm]
    return MixupResult(xm.astype(x.dtype, copy=False), ym.astype(y.dtype, copy=False), lam, perm)


def model_dtype(model: Module):
    return next(iter(model.parameters())).dtype


@dataclass
class EpochResult:
    epoch: int
    loss: float
    lr: float
    lambdas: list[float] = field(default_factory=list)
    batch_losses: list[float] = field(default_factory=list)

    def log_record(self) -> dict:
        lam = np.asarray(self.lambdas) if self.lambdas else np.zeros(1)
        return {
            "epoch": self.epoch,
            "loss": self.loss,
            "lr": self.lr,
            "lambda_mean": float(lam.mean()),
            "lambda_min": float(lam.min()),
            "lambda_max": float(lam.max()),
        }


def train_epoch(
    model: Module,
    data: SegmentBatch,
    optimizer: Adam,
    cfg: TrainConfig,
    rng: np.random.Generator,
    epoch: int,
    num_classes: int,
    mixup: bool = True,
) -> EpochResult:
    """One pass over ``data`` in shuffled mini-batches; returns the mean batch loss."""
    model.train()
    dtype = model_dtype(model)
    lr = lr_schedule(epoch, cfg)
    order = rng.permutation(len(data))
    result = EpochResult(epoch=epoch, loss=0.0, lr=lr)
    for b, start in enumerate(range(0, len(order), cfg.batch_size)):
        idx = order[start : start + cfg.batch_size]
        x = data.features[idx][:, None].astype(dtype)
        y = one_hot(data.labels[idx], num_classes, dtype)
        if mixup:
            mixed = mixup_batch(x, y, cfg.mixup_alpha, rng)
            x, y, lam = mixed.x, mixed.y, mixed.lam
        else:
            lam = 1.0
        model.zero_grad()
        loss = F.soft_cross_entropy(model(Tensor(x)), y)
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericAbort(b, lr, lam, value)
        loss.backward()
        optimizer.step(lr)
        result.lambdas.append(lam)
        result.batch_losses.append(value)
    model.zero_grad()
    result.loss = float(np.mean(result.batch_losses))
    return result


def predict_segment_proba(model: Module, features: np.ndarray, batch_size: int = 256) -> np.ndarray:
    model.eval()
    dtype = model_dtype(model)
    out = []
    with no_grad():
        for start in range(0, len(features), batch_size):
            x = Tensor(features[start : start + batch_size][:, None].astype(dtype))
            out.append(F.softmax(model(x), axis=-1).data.astype(np.float64))
    return np.concatenate(out) if out else np.zeros((0, 0))


def utterance_vote(probs: np.ndarray, utterance_ids: list[str]) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Average segment probabilities per utterance (first-seen order); argmax ties go to the lowest class."""
    groups: OrderedDict[str, list[int]] = OrderedDict()
    for i, uid in enumerate(utterance_ids):
        groups.setdefault(uid, []).append(i)
    ids = list(groups)
    avg = np.stack([probs[groups[u]].mean(axis=0) for u in ids]) if ids else np.zeros((0, probs.shape[1]))
    return ids, avg, avg.argmax(axis=1)


def evaluate(
    model: Module,
    data: SegmentBatch,
    num_classes: int,
    batch_size: int = 256,
    acc_as_precision: bool = False,
    class_names=None,
) -> MetricsReport:
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    probs = predict_segment_proba(model, data.features, batch_size)
    ids, _, preds = utterance_vote(probs, data.utterance_ids)
    label_of = {}
    for uid, lab in zip(data.utterance_ids, data.labels):
        label_of.setdefault(uid, int(lab))
    truth = [label_of[u] for u in ids]
    cm = confusion_matrix(truth, preds, num_classes)
    return compute_metrics(cm, acc_as_precision=acc_as_precision, class_names=class_names)

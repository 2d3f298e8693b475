"""Adam, learning-rate schedules, the minibatch training loop and accuracy."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, TrainingError
from .models import Model
from .pipeline import NetworkInput
from .rng import spawn


# --- schedulers ----------------------------------------------------------------


@dataclass(frozen=True)
class NoSchedule:
    kind: str = field(default="none", init=False)


@dataclass(frozen=True)
class Exponential:
    gamma: float = 0.9
    kind: str = field(default="exponential", init=False)


@dataclass(frozen=True)
class Step:
    step_size: int = 10
    gamma: float = 0.5
    kind: str = field(default="step", init=False)


Scheduler = Union[NoSchedule, Exponential, Step]


def parse_scheduler(value) -> Scheduler:
    """Accept a scheduler object, ``None``, a name or a dict with ``kind``."""
    if isinstance(value, (NoSchedule, Exponential, Step)):
        sched = value
    elif value is None or value == "none":
        sched = NoSchedule()
    elif value == "exponential":
        sched = Exponential()
    elif value == "step":
        sched = Step()
    elif isinstance(value, dict):
        d = dict(value)
        kind = d.pop("kind", "none")
        cls = {"none": NoSchedule, "exponential": Exponential, "step": Step}.get(kind)
        if cls is None:
            raise ConfigError(f"unknown scheduler kind {kind!r}")
        sched = cls(**d)
    else:
        raise ConfigError(f"cannot interpret scheduler {value!r}")
    gamma = getattr(sched, "gamma", 1.0)
    if not 0 < gamma <= 1:
        raise ConfigError(f"scheduler gamma must be in (0, 1], got {gamma}")
    if isinstance(sched, Step) and (int(sched.step_size) != sched.step_size or sched.step_size < 1):
        raise ConfigError(f"step_size must be an integer >= 1, got {sched.step_size}")
    return sched


def scheduler_label(sched: Scheduler) -> str:
    if isinstance(sched, Exponential):
        return f"exponential(gamma={sched.gamma:g})"
    if isinstance(sched, Step):
        return f"step(s={sched.step_size}, gamma={sched.gamma:g})"
    return "none"


def scheduler_lr(scheduler: Scheduler, lr0: float, epoch: int) -> float:
    """Learning rate in effect during ``epoch`` (0-based)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    if isinstance(scheduler, Exponential):
        return lr0 * scheduler.gamma**epoch
    if isinstance(scheduler, Step):
        return lr0 * scheduler.gamma ** (epoch // scheduler.step_size)
    return lr0


# --- Adam ------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, applied in place to the arrays in ``params``.

    ``params`` and ``grads`` map names to numpy arrays. A parameter whose
    gradient is missing is treated as having a zero gradient.
    """
    state.t += 1
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r} at step {state.t}")
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + epsilon)
    return state


# --- training loop -------------------------------------------------------------


@dataclass
class TrainConfig:
    learning_rate: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    epochs: int = 60
    scheduler: Scheduler = field(default_factory=NoSchedule)
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        self.scheduler = parse_scheduler(self.scheduler)

    def problems(self) -> list[str]:
        out = []
        if not self.learning_rate > 0:
            out.append(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            if not 0 < getattr(self, name) < 1:
                out.append(f"{name} must be in (0, 1), got {getattr(self, name)}")
        if not self.epsilon > 0:
            out.append(f"epsilon must be > 0, got {self.epsilon}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            out.append(f"batch_size must be a positive integer, got {self.batch_size}")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            out.append(f"epochs must be a positive integer, got {self.epochs}")
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scheduler"] = asdict(self.scheduler)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_acc: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def lr(self) -> list[float]:
        return [r.lr for r in self.records]

    @property
    def train_loss(self) -> list[float]:
        return [r.train_loss for r in self.records]

    @property
    def val_acc(self) -> list[float]:
        return [r.val_acc for r in self.records]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "lr", "train_loss", "val_acc"])
        for r in self.records:
            w.writerow([r.epoch, repr(r.lr), repr(r.train_loss), repr(r.val_acc)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainHistory":
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls([EpochRecord(int(r["epoch"]), float(r["lr"]), float(r["train_loss"]), float(r["val_acc"]))
                    for r in rows])


Dataset = Union[tuple, Sequence[NetworkInput]]


def as_arrays(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Normalise a dataset to ``(X, y)`` arrays, checking modality and shape agreement."""
    if isinstance(data, tuple) and len(data) == 2 and isinstance(data[0], np.ndarray):
        x, y = data
        return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.int64)
    items = list(data)
    if not items:
        raise ValueError("dataset is empty")
    modalities = {it.modality for it in items}
    shapes = {it.data.shape for it in items}
    if len(modalities) > 1 or len(shapes) > 1:
        raise ValueError(f"dataset mixes modalities {sorted(m.value for m in modalities)} or shapes {sorted(shapes)}")
    return np.stack([it.data for it in items]), np.array([it.label for it in items], dtype=np.int64)


def train(model: Model, train_set: Dataset, val_set: Optional[Dataset], cfg: TrainConfig):
    """Fit ``model`` in place; returns ``(model, history)``.

    The scheduler is stepped at epoch boundaries and the final-epoch weights
    are kept.
    """
    problems = cfg.problems()
    if problems:
        raise ConfigError("; ".join(problems))
    x, y = as_arrays(train_set)
    if x.shape[0] == 0:
        raise ValueError("training set is empty")
    if val_set is not None:
        xv, yv = as_arrays(val_set)
        if xv.shape[1:] != x.shape[1:]:
            raise ValueError(f"validation shape {xv.shape[1:]} != training shape {x.shape[1:]}")
    shuffle_rng, dropout_rng = spawn(cfg.seed, 2)
    state = AdamState()
    history = TrainHistory()
    params = model.params
    arrays = {k: t.data for k, t in params.items()}
    n = x.shape[0]
    for epoch in range(cfg.epochs):
        lr = scheduler_lr(cfg.scheduler, cfg.learning_rate, epoch)
        order = shuffle_rng.permutation(n) if cfg.shuffle else np.arange(n)
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            for t in params.values():
                t.grad = None
            loss = ad.cross_entropy(model(x[idx], train=True, rng=dropout_rng), y[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            ad.backward(loss)
            adam_step(arrays, {k: t.grad for k, t in params.items()}, state, lr, cfg.beta1, cfg.beta2, cfg.epsilon)
            total += value * idx.size
            seen += idx.size
        val_acc = evaluate(model, (xv, yv)) if val_set is not None else float("nan")
        history.records.append(EpochRecord(epoch, lr, total / seen, val_acc))
    return model, history


def predict(model: Model, data: Dataset, batch_size: int = 256) -> np.ndarray:
    """Arg-max class per sample (lowest index wins ties), dropout off."""
    x, _ = as_arrays(data)
    out = [np.argmax(model(x[i : i + batch_size]).data, axis=1) for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(out)


def evaluate(model: Model, test_set: Dataset) -> float:
    """Classification accuracy in ``[0, 1]``."""
    x, y = as_arrays(test_set)
    if x.shape[0] == 0:
        raise ValueError("test set is empty")
    return float(np.mean(predict(model, (x, y)) == y))


def save_config(cfg: TrainConfig, path):
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
        fh.write("\n")

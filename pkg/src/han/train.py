"""Training loop: cross-entropy, Adam, warm-up, plateau decay, early stop.

The learning rate ramps linearly over the warm-up epochs, then divides by
`decay_factor` whenever the stagnation metric has not improved for
`plateau_patience` consecutive post-warm-up epochs; training stops at the
`max_decays`-th decay. The stagnation metric is held-out accuracy when a
test split exists, otherwise the (negated) training loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import GradientTape, Tensor
from .data import AugmentationConfig, Dataset, SkeletonSequence, augment, uniform_sample
from .errors import ConfigError, UsageError
from .model import HANModel, forward, predict
from .rng import Rng


@dataclass(frozen=True)
class TrainConfig:
    lr_init: float = 0.001
    batch_size: int = 32
    warmup_epochs: int = 5
    plateau_patience: int = 10
    decay_factor: float = 10.0
    max_decays: int = 4
    seed: int = 0
    max_epochs: int | None = None
    augmentation: AugmentationConfig | None = field(default_factory=AugmentationConfig)

    def __post_init__(self):
        if self.lr_init <= 0:
            raise ConfigError(f"lr_init must be positive, got {self.lr_init}")
        if self.decay_factor <= 1:
            raise ConfigError(f"decay_factor must be > 1, got {self.decay_factor}")
        if self.max_decays < 1:
            raise ConfigError(f"max_decays must be >= 1, got {self.max_decays}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.warmup_epochs < 0 or self.plateau_patience < 1:
            raise ConfigError("warmup_epochs must be >= 0 and plateau_patience >= 1")


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """-log softmax(logits)[label], computed through log-sum-exp."""
    if logits.ndim != 1:
        raise UsageError(f"cross_entropy needs a 1-d logits vector, got {logits.shape}")
    c = logits.shape[0]
    if not 0 <= label < c:
        raise UsageError(f"label {label} out of range for {c} classes")
    z = logits.data
    m = z.max()
    lse = m + np.log(np.sum(np.exp(z - m)))
    out = Tensor(np.asarray(lse - z[label], dtype=z.dtype))
    sm = np.exp(z - lse)

    def bwd(g):
        grad = sm.copy()
        grad[label] -= 1.0
        return (g * grad,)

    return ad.record_op("cross_entropy", (logits,), out, bwd)


@dataclass
class AdamState:
    """First/second moment buffers aligned with a parameter list."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_params(params: list[Tensor]) -> "AdamState":
        return AdamState(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place on the parameter data."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise UsageError("params, grads, and optimizer state must have the same length")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise UsageError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= (lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)


@dataclass
class ScheduleState:
    """Warm-up ramp plus plateau-decay bookkeeping, advanced once per epoch."""

    config: TrainConfig
    lr: float = field(init=False)
    best: float = field(default=-math.inf, init=False)
    stale: int = field(default=0, init=False)
    decays: int = field(default=0, init=False)
    stopped: bool = field(default=False, init=False)
    decay_epochs: list[int] = field(default_factory=list, init=False)

    def __post_init__(self):
        self.lr = self.config.lr_init

    def lr_for_epoch(self, epoch: int) -> float:
        cfg = self.config
        if epoch < cfg.warmup_epochs:
            return cfg.lr_init * (epoch + 1) / cfg.warmup_epochs
        return self.lr

    def observe(self, epoch: int, metric: float) -> bool:
        """Record the epoch-end metric; returns True when training must stop.

        Staleness only counts epochs after the warm-up, so with patience p
        the first decay can happen at the end of epoch warmup + p - 1
        (the (warmup+p)-th epoch) at the earliest.
        """
        if metric > self.best:
            self.best = metric
            self.stale = 0
        elif epoch >= self.config.warmup_epochs:
            self.stale += 1
        if epoch >= self.config.warmup_epochs and self.stale >= self.config.plateau_patience:
            self.decays += 1
            self.decay_epochs.append(epoch)
            self.lr = self.lr / self.config.decay_factor
            self.stale = 0
            if self.decays >= self.config.max_decays:
                self.stopped = True
        return self.stopped


def lr_schedule(state: ScheduleState, epoch: int, metric: float) -> tuple[float, bool]:
    """Epoch-end schedule step: next learning rate and the stop flag."""
    stop = state.observe(epoch, metric)
    return state.lr_for_epoch(epoch + 1), stop


@dataclass
class EvalReport:
    accuracy: float
    per_class_accuracy: np.ndarray
    confusion: np.ndarray  # (C, C) counts, rows = true class


def metrics_from_pairs(true_labels, pred_labels, class_count: int) -> EvalReport:
    confusion = np.zeros((class_count, class_count), dtype=np.int64)
    for t, p in zip(true_labels, pred_labels):
        confusion[t, p] += 1
    total = confusion.sum()
    accuracy = float(np.trace(confusion) / total) if total else 0.0
    row_sums = confusion.sum(axis=1)
    per_class = np.divide(
        np.diag(confusion), row_sums, out=np.zeros(class_count, dtype=np.float64), where=row_sums > 0
    )
    return EvalReport(accuracy=accuracy, per_class_accuracy=per_class, confusion=confusion)


def evaluate(model: HANModel, sequences: list[SkeletonSequence], class_count: int | None = None) -> EvalReport:
    """Deterministic eval-mode accuracy and confusion matrix over a split."""
    c = class_count if class_count is not None else model.config.class_count
    true, pred = [], []
    for seq in sequences:
        sampled = uniform_sample(seq, model.config.frames)
        cls, _ = predict(sampled, model)
        true.append(seq.label)
        pred.append(cls)
    return metrics_from_pairs(true, pred, c)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_acc: float  # nan when there is no held-out split
    decays: int


@dataclass
class TrainResult:
    model: HANModel
    epochs: list[EpochLog]
    decay_epochs: list[int]
    final_train_acc: float
    final_val_acc: float


def train(dataset: Dataset, model: HANModel, config: TrainConfig) -> TrainResult:
    """Run the full schedule on a dataset's train split; see module docstring."""
    train_seqs = dataset.load_split("train")
    if not train_seqs:
        raise UsageError("training split is empty")
    val_seqs = dataset.load_split("test")
    return train_loop(train_seqs, val_seqs, model, config)


def train_loop(
    train_seqs: list[SkeletonSequence],
    val_seqs: list[SkeletonSequence],
    model: HANModel,
    config: TrainConfig,
) -> TrainResult:
    if not train_seqs:
        raise UsageError("training split is empty")
    named = model.parameters()
    params = [t for _, t in named]
    adam = AdamState.for_params(params)
    sched = ScheduleState(config)
    root = Rng(config.seed)
    frames_t = model.config.frames
    logs: list[EpochLog] = []

    epoch = 0
    while True:
        lr = sched.lr_for_epoch(epoch)
        order = root.stream(f"shuffle/{epoch}").permutation(len(train_seqs))
        loss_sum = 0.0
        correct = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            with GradientTape() as tape:
                losses = []
                for gi in batch:
                    seq = train_seqs[int(gi)]
                    if config.augmentation is not None:
                        seq = augment(seq, config.augmentation, root.stream(f"augment/{epoch}/{int(gi)}"))
                    sampled = uniform_sample(seq, frames_t)
                    drop_rng = root.stream(f"dropout/{epoch}/{int(gi)}")
                    logits = forward(sampled, model, training=True, rng=drop_rng)
                    losses.append(cross_entropy(logits, train_seqs[int(gi)].label))
                    if int(np.argmax(logits.data)) == train_seqs[int(gi)].label:
                        correct += 1
                batch_loss = ad.mean(ad.stack(losses, axis=0), axis=0)
            ad.backward(batch_loss, tape)
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
            adam_step(params, grads, adam, lr)
            tape.reset()
            loss_sum += batch_loss.item() * len(batch)

        train_loss = loss_sum / len(train_seqs)
        train_acc = correct / len(train_seqs)
        if val_seqs:
            val_acc = evaluate(model, val_seqs).accuracy
            metric = val_acc
        else:
            val_acc = math.nan
            metric = -train_loss
        stop = sched.observe(epoch, metric)
        logs.append(EpochLog(epoch=epoch, lr=lr, train_loss=train_loss,
                             train_acc=train_acc, val_acc=val_acc, decays=sched.decays))
        epoch += 1
        if stop or (config.max_epochs is not None and epoch >= config.max_epochs):
            break

    final_train = evaluate(model, train_seqs).accuracy
    final_val = evaluate(model, val_seqs).accuracy if val_seqs else math.nan
    return TrainResult(model=model, epochs=logs, decay_epochs=list(sched.decay_epochs),
                       final_train_acc=final_train, final_val_acc=final_val)


def write_training_log(path: str, result: TrainResult) -> None:
    """Append-only text log: one epoch per line, then a final summary line."""
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("epoch,lr,train_loss,val_acc,decays\n")
        for log in result.epochs:
            fh.write(f"{log.epoch},{log.lr:.8g},{log.train_loss:.8g},{log.val_acc:.8g},{log.decays}\n")
        fh.write(f"final,train_acc={result.final_train_acc:.8g},val_acc={result.final_val_acc:.8g}\n")


def write_confusion_csv(path: str, report: EvalReport) -> None:
    """Confusion counts as CSV with a header row of class labels."""
    c = report.confusion.shape[0]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(str(i) for i in range(c)) + "\n")
        for row in report.confusion:
            fh.write(",".join(str(int(v)) for v in row) + "\n")

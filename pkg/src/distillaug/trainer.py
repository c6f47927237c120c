"""Training loop: online per-sample augmentation, optional teacher guidance,
RMSProp/SGD updates, schedules, evaluation, and a clean-finetune tail.

Reproducibility contract: (config, seed, datasets) fully determine the final
parameters and history, bit for bit. Randomness is split into independent
streams keyed by (seed, epoch) for the batch order and (seed, epoch,
sample_index) for each sample's augmentation draws, so the augmentation a
sample receives does not depend on where it lands in the shuffle.

Pixels are fed to the network as float64 in [0, 1] (value / 255). When a
teacher is active it consumes the exact same buffer as the student.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import distill, policy, smallnet
from .distill import KDConfig
from .imageops import DEFAULT_FILL, Image
from .policy import PolicySpec

__all__ = [
    "SGDMomentum",
    "RMSProp",
    "OptimizerState",
    "ExponentialEvery",
    "Cosine",
    "Dataset",
    "TrainConfig",
    "EpochRecord",
    "TrainHistory",
    "lr_at",
    "init_optimizer",
    "step",
    "train",
    "evaluate",
]

EVAL_BATCH = 256


@dataclass(frozen=True)
class SGDMomentum:
    momentum: float = 0.9
    weight_decay: float = 0.0


@dataclass(frozen=True)
class RMSProp:
    """Preset follows the training recipe: decay 0.9, momentum 0.9, weight
    decay 1e-5."""

    decay: float = 0.9
    momentum: float = 0.9
    epsilon: float = 1e-8
    weight_decay: float = 1e-5


OptimSpec = SGDMomentum | RMSProp


class OptimizerState:
    """Optimizer hyperparameters plus per-parameter accumulators whose shapes
    mirror the model parameters exactly."""

    def __init__(self, spec: OptimSpec, params: smallnet.ModelParams):
        self.spec = spec
        if isinstance(spec, RMSProp):
            self.square_avg = {k: np.zeros_like(v) for k, v in params.arrays().items()}
            self.update_avg = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        elif isinstance(spec, SGDMomentum):
            self.velocity = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        else:
            raise TypeError(f"unknown optimizer spec {spec!r}")


def init_optimizer(spec: OptimSpec, params: smallnet.ModelParams) -> OptimizerState:
    return OptimizerState(spec, params)


def step(
    state: OptimizerState,
    params: smallnet.ModelParams,
    grads: smallnet.ModelParams,
    lr: float,
) -> tuple[smallnet.ModelParams, OptimizerState]:
    """One update. RMSProp: s <- decay*s + (1-decay)*g^2; u <- momentum*u +
    lr*g/sqrt(s+eps); theta <- theta - u. SGD: v <- momentum*v + g; theta <-
    theta - lr*v. Weight decay is folded into g first. Accumulators are
    updated in place; a new params object is returned."""
    spec = state.spec
    new = {}
    for name, theta in params.arrays().items():
        g = getattr(grads, name)
        if g.shape != theta.shape:
            raise ValueError(f"{name}: grad shape {g.shape} != param shape {theta.shape}")
        if spec.weight_decay:
            g = g + spec.weight_decay * theta
        if isinstance(spec, RMSProp):
            s = state.square_avg[name]
            u = state.update_avg[name]
            s *= spec.decay
            s += (1.0 - spec.decay) * g * g
            u *= spec.momentum
            u += lr * g / np.sqrt(s + spec.epsilon)
            new[name] = theta - u
        else:
            v = state.velocity[name]
            v *= spec.momentum
            v += g
            new[name] = theta - lr * v
    return params.with_arrays(new), state


@dataclass(frozen=True)
class ExponentialEvery:
    """Staircase decay: base_lr * factor^floor(epoch / period_epochs)."""

    base_lr: float = 0.256
    factor: float = 0.97
    period_epochs: float = 2.4

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be > 0")


@dataclass(frozen=True)
class Cosine:
    """Half-cosine ramp from base_lr down to 0 at total_epochs."""

    base_lr: float = 0.1

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be > 0")


Schedule = ExponentialEvery | Cosine


def lr_at(schedule: Schedule, epoch: float, total_epochs: float | None = None) -> float:
    """Learning rate at a (possibly fractional) epoch. Cosine needs the
    total epoch span; the staircase schedule ignores it."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    if isinstance(schedule, ExponentialEvery):
        return schedule.base_lr * schedule.factor ** math.floor(epoch / schedule.period_epochs)
    if isinstance(schedule, Cosine):
        if total_epochs is None or total_epochs <= 0:
            raise ValueError("cosine schedule needs total_epochs > 0")
        return schedule.base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))
    raise TypeError(f"unknown schedule {schedule!r}")


@dataclass(frozen=True)
class Dataset:
    """Images with integer labels and a split tag ("train" or "test")."""

    images: tuple[Image, ...]
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or len(labels) != len(self.images):
            raise ValueError(
                f"{len(self.images)} images but labels shape {labels.shape}"
            )
        if len(self.images) and labels.min() < 0:
            raise ValueError("labels must be non-negative")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            tuple(self.images[i] for i in idx), self.labels[idx].copy(), self.split
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    schedule: Schedule
    kd: KDConfig
    policy: PolicySpec
    seed: int
    fill: int = DEFAULT_FILL
    clean_finetune_epochs: int = 0
    kd_during_finetune: bool = False
    optimizer: OptimSpec = RMSProp()

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.clean_finetune_epochs < 0:
            raise ValueError("clean_finetune_epochs must be >= 0")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_loss: float
    test_error: float
    lr: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def test_errors(self) -> np.ndarray:
        return np.array([r.test_error for r in self.records])

    def mean_losses(self) -> np.ndarray:
        return np.array([r.mean_loss for r in self.records])


def _stack(images, indices) -> np.ndarray:
    return np.stack([images[i].pixels for i in indices]).astype(np.float64) / 255.0


def train(
    teacher: smallnet.ModelParams | None,
    student_init: smallnet.ModelParams,
    data: Dataset,
    test: Dataset,
    cfg: TrainConfig,
    on_batch=None,
) -> tuple[smallnet.ModelParams, TrainHistory]:
    """Run the full protocol and return (final params, per-epoch history).

    Main epochs augment every sample online (one fresh draw per sample per
    epoch) and, when a teacher is given, add the truncated-divergence term of
    ``cfg.kd`` on the teacher's outputs for the same augmented inputs. The
    optional tail of ``cfg.clean_finetune_epochs`` epochs trains on untouched
    images, keeping the teacher term only if ``cfg.kd_during_finetune``.

    ``on_batch(epoch, indices, student_input, teacher_input)`` is called for
    every batch before the update; teacher_input is None when no teacher ran.
    """
    if (teacher is not None) != (cfg.kd.lam > 0):
        raise ValueError("a teacher is required exactly when cfg.kd.lam > 0")
    if teacher is not None:
        if teacher.class_count != student_init.class_count:
            raise ValueError("teacher/student class counts differ")
        if teacher.input_shape != student_init.input_shape:
            raise ValueError("teacher/student input shapes differ")
    if len(data) == 0 or len(test) == 0:
        raise ValueError("datasets must be non-empty")
    if data.labels.max() >= student_init.class_count:
        raise ValueError("label out of range for model class count")

    n = len(data)
    span = cfg.epochs + cfg.clean_finetune_epochs
    params = student_init
    state = init_optimizer(cfg.optimizer, params)
    history = TrainHistory()

    for epoch in range(span):
        finetuning = epoch >= cfg.epochs
        use_kd = (
            teacher is not None
            and cfg.kd.lam > 0
            and (not finetuning or cfg.kd_during_finetune)
        )
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            batch_idx = order[start : start + cfg.batch_size]
            if finetuning:
                x = _stack(data.images, batch_idx)
            else:
                augmented = []
                for idx in batch_idx:
                    rng = policy.derive_rng(cfg.seed, epoch, int(idx))
                    instances = policy.sample(cfg.policy, rng)
                    augmented.append(policy.augment(data.images[idx], instances, cfg.fill))
                x = np.stack([im.pixels for im in augmented]).astype(np.float64) / 255.0

            teacher_probs = None
            if use_kd:
                t_logits, _ = smallnet.forward(teacher, x)
                teacher_probs = distill.softmax(t_logits)
            if on_batch is not None:
                on_batch(epoch, batch_idx, x, x if use_kd else None)

            logits, trace = smallnet.forward(params, x)
            grad_logits = np.empty_like(logits)
            for i, idx in enumerate(batch_idx):
                label = int(data.labels[idx])
                if use_kd:
                    loss_sum += distill.kd_loss(
                        distill.softmax(logits[i]), teacher_probs[i], label, cfg.kd
                    )
                    grad_logits[i] = distill.kd_loss_grad(
                        logits[i], teacher_probs[i], label, cfg.kd
                    )
                else:
                    p = distill.softmax(logits[i])
                    loss_sum += -math.log(p[label])
                    p[label] -= 1.0
                    grad_logits[i] = p

            grads = smallnet.backward(params, trace, grad_logits)
            lr = lr_at(cfg.schedule, epoch + start / n, span)
            params, state = step(state, params, grads, lr)

        history.records.append(
            EpochRecord(
                epoch=epoch,
                mean_loss=loss_sum / n,
                test_error=evaluate(params, test),
                lr=lr_at(cfg.schedule, epoch, span),
            )
        )
    return params, history


def evaluate(params: smallnet.ModelParams, test: Dataset) -> float:
    """Error rate on clean images: fraction with argmax logit != label.
    Argmax ties resolve to the lowest class index."""
    if len(test) == 0:
        raise ValueError("test set is empty")
    wrong = 0
    for start in range(0, len(test), EVAL_BATCH):
        idx = np.arange(start, min(start + EVAL_BATCH, len(test)))
        logits, _ = smallnet.forward(params, _stack(test.images, idx))
        wrong += int(np.sum(np.argmax(logits, axis=1) != test.labels[idx]))
    return wrong / len(test)

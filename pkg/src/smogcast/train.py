"""Loss, Adam, scheduling, early stopping, and the two training loops.

The monolithic loop is the usual batch/epoch cycle. The hierarchical loop
alternates per round: a shared phase with every branch frozen, then a branch
phase with the shared layer frozen, each phase seeing all batches; the five
component optimizers and plateau schedulers keep independent state.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DivergedLossError, ShapeMismatchError
from .ingest import POLLUTANTS
from .models import BRANCH_GROUPS, Model
from .neuro.layers import Param
from .pipeline import WindowPair


@dataclass
class TrainConfig:
    """Knobs of the training loop; hierarchy uses lr as the shared rate."""

    lr: float = 1e-3
    branch_lr: float | None = None  # None: tied at hidden_layers * lr
    weight_decay: float = 0.0
    batch_size: int = 16
    patience: int = 15
    min_improvement: float = 1e-5
    max_epochs: int = 200
    plateau_factor: float = 0.1
    plateau_patience: int | None = None  # None: ceil(patience / 2)
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 0:
            raise ValueError("batch_size >= 1, patience >= 1, max_epochs >= 0")

    def resolved_plateau_patience(self) -> int:
        if self.plateau_patience is not None:
            return self.plateau_patience
        return math.ceil(self.patience / 2)

    def resolved_branch_lr(self, hidden_layers: int) -> float:
        return self.branch_lr if self.branch_lr is not None else hidden_layers * self.lr


# --- loss ---------------------------------------------------------------------

def mse_l2(
    pred: np.ndarray,
    truth: np.ndarray,
    params: Sequence[Param] = (),
    weight_decay: float = 0.0,
    accumulate: bool = True,
) -> tuple[float, np.ndarray]:
    """Mean squared error plus an L2 penalty over all parameters.

    Returns (loss, d loss / d pred). With ``accumulate`` the penalty's
    gradient 2*wd*theta is added onto each parameter's running gradient.
    """
    if pred.shape != truth.shape:
        raise ShapeMismatchError(f"pred {pred.shape} vs truth {truth.shape}")
    n = pred.size
    diff = pred - truth
    loss = float(np.dot(diff.ravel(), diff.ravel())) / n
    if weight_decay:
        loss += weight_decay * sum(float(np.dot(p.value.ravel(), p.value.ravel())) for p in params)
        if accumulate:
            for p in params:
                p.grad += (2.0 * weight_decay) * p.value
    return loss, (2.0 / n) * diff


# --- optimizer and schedules ----------------------------------------------------

class Adam:
    """Bias-corrected Adam over one parameter group.

    The step counter advances only on effective steps, so a frozen group
    resumes exactly where it stopped.
    """

    def __init__(
        self,
        params: Sequence[Param],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        frozen: Callable[[], bool] = lambda: False,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._frozen = frozen

    def step(self) -> None:
        if self._frozen():
            return
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p in self.params:
            p.adam_m *= self.beta1
            p.adam_m += (1.0 - self.beta1) * p.grad
            p.adam_v *= self.beta2
            p.adam_v += (1.0 - self.beta2) * np.square(p.grad)
            p.value -= self.lr * (p.adam_m / b1c) / (np.sqrt(p.adam_v / b2c) + self.eps)


class ReduceOnPlateau:
    """Multiply an optimizer's lr by ``factor`` after a run of stale epochs.

    An epoch is stale when it improves the running best by less than
    ``min_improvement``; the best always tracks the true minimum so slow
    drifts cannot hide inside the threshold.
    """

    def __init__(self, optimizer: Adam, factor: float, patience: int, min_improvement: float):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.min_improvement = min_improvement
        self.best = math.inf
        self.bad_epochs = 0

    def update(self, loss: float) -> float:
        if self.best - loss >= self.min_improvement:
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        self.best = min(self.best, loss)
        if self.bad_epochs >= self.patience:
            self.optimizer.lr *= self.factor
            self.bad_epochs = 0
        return self.optimizer.lr


class EarlyStopping:
    """Stop after ``patience`` epochs that fail to beat the running best."""

    def __init__(self, patience: int, min_improvement: float):
        self.patience = patience
        self.min_improvement = min_improvement
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, loss: float, epoch: int) -> bool:
        if self.best - loss >= self.min_improvement:
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        if loss < self.best:
            self.best = loss
            self.best_epoch = epoch
        return self.bad_epochs >= self.patience


def should_stop(history: Sequence[float], patience: int, min_improvement: float = 1e-5) -> bool:
    """Replay of the early-stopping counter over a recorded loss history."""
    stopper = EarlyStopping(patience, min_improvement)
    stop = False
    for epoch, loss in enumerate(history, start=1):
        stop = stopper.update(loss, epoch)
        if stop:
            break
    return stop


# --- batching -------------------------------------------------------------------

def make_batches(
    n_pairs: int, batch_size: int, seed: int, epoch: int, shuffle: bool = True
) -> list[np.ndarray]:
    """Index batches for one epoch: random membership, chronological rows.

    Deterministic per (seed, epoch); the final short batch is kept.
    """
    if n_pairs < 1:
        raise ValueError("no pairs to batch")
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(n_pairs)
    else:
        order = np.arange(n_pairs)
    return [np.sort(order[i : i + batch_size]) for i in range(0, n_pairs, batch_size)]


def stack_pairs(pairs: Sequence[WindowPair], idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([pairs[i].input for i in idx])
    y = np.stack([pairs[i].target for i in idx])
    return x, y


# --- reports ----------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    phase: str  # "all", "shared", or "branch"
    train_loss: float
    val_loss: float
    lrs: dict[str, float]


@dataclass
class TrainReport:
    """Per-epoch history; wall time is informational and excluded from the CSV."""

    epochs: list[EpochRecord] = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0
    wall_time_s: float = 0.0

    def best_val_loss(self) -> float:
        return min((r.val_loss for r in self.epochs), default=math.inf)

    def lr_groups(self) -> list[str]:
        return sorted(self.epochs[0].lrs) if self.epochs else []

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        groups = self.lr_groups()
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            writer = csv.writer(fh)
            writer.writerow(["epoch", "phase", "train_loss", "val_loss"] + [f"lr_{g}" for g in groups])
            for r in self.epochs:
                writer.writerow(
                    [r.epoch, r.phase, repr(r.train_loss), repr(r.val_loss)]
                    + [repr(r.lrs[g]) for g in groups]
                )


@dataclass
class TrainHooks:
    """Optional observation points used by tests and tooling."""

    on_phase_end: Callable[[int, str, Model], None] | None = None
    on_batch: Callable[[int, str, int], None] | None = None


def _check_finite(loss: float, where: str) -> None:
    if not math.isfinite(loss):
        raise DivergedLossError(f"non-finite loss during {where}")


def validation_loss(model: Model, pairs: Sequence[WindowPair], batch_size: int) -> float:
    """Plain MSE over a pair set, batched in order, no shuffling."""
    total, count = 0.0, 0
    for idx in make_batches(len(pairs), batch_size, seed=0, epoch=0, shuffle=False):
        x, y = stack_pairs(pairs, idx)
        pred = model.forward(x)
        diff = pred - y
        total += float(np.dot(diff.ravel(), diff.ravel()))
        count += diff.size
    return total / count


def validation_loss_per_target(
    model: Model, pairs: Sequence[WindowPair], batch_size: int
) -> np.ndarray:
    """Per-target-column validation MSE (drives the branch schedulers)."""
    total = None
    count = 0
    for idx in make_batches(len(pairs), batch_size, seed=0, epoch=0, shuffle=False):
        x, y = stack_pairs(pairs, idx)
        diff = model.forward(x) - y
        sq = np.square(diff).sum(axis=(0, 1))
        total = sq if total is None else total + sq
        count += diff.shape[0] * diff.shape[1]
    return total / count


# --- training loops ------------------------------------------------------------------

def _run_batches(
    model: Model,
    pairs: Sequence[WindowPair],
    batches: list[np.ndarray],
    optimizers: list[Adam],
    weight_decay: float,
    phase: str,
    epoch: int,
    hooks: TrainHooks | None,
) -> float:
    params = model.params()
    losses = []
    for b_i, idx in enumerate(batches):
        x, y = stack_pairs(pairs, idx)
        model.zero_grad()
        pred = model.forward(x)
        loss, grad_pred = mse_l2(pred, y, params, weight_decay)
        _check_finite(loss, f"epoch {epoch} ({phase})")
        model.backward(grad_pred)
        for opt in optimizers:
            opt.step()
        losses.append(loss)
        if hooks and hooks.on_batch:
            hooks.on_batch(epoch, phase, b_i)
    return float(np.mean(losses))


def train_monolithic(
    model: Model,
    train_pairs: Sequence[WindowPair],
    val_pairs: Sequence[WindowPair],
    cfg: TrainConfig,
    hooks: TrainHooks | None = None,
) -> TrainReport:
    """Standard loop: one optimizer over all parameters."""
    if model.spec.is_hierarchical:
        raise ValueError("use train_hierarchical for H-variants")
    if not train_pairs or not val_pairs:
        raise ValueError("need non-empty train and validation pair sets")
    report = TrainReport()
    if cfg.max_epochs == 0:
        report.stop_reason = "max_epochs"
        return report
    started = time.perf_counter()

    opt = Adam(model.params(), cfg.lr, frozen=lambda: model.is_frozen("monolithic"))
    sched = ReduceOnPlateau(
        opt, cfg.plateau_factor, cfg.resolved_plateau_patience(), cfg.min_improvement
    )
    stopper = EarlyStopping(cfg.patience, cfg.min_improvement)
    best_snapshot = model.snapshot()
    best_val = math.inf

    for epoch in range(1, cfg.max_epochs + 1):
        batches = make_batches(len(train_pairs), cfg.batch_size, cfg.seed, epoch, cfg.shuffle)
        train_loss = _run_batches(
            model, train_pairs, batches, [opt], cfg.weight_decay, "all", epoch, hooks
        )
        val_loss = validation_loss(model, val_pairs, cfg.batch_size)
        _check_finite(val_loss, f"epoch {epoch} validation")
        lr = sched.update(val_loss)
        report.epochs.append(EpochRecord(epoch, "all", train_loss, val_loss, {"monolithic": lr}))
        if hooks and hooks.on_phase_end:
            hooks.on_phase_end(epoch, "all", model)
        if val_loss < best_val:
            best_val = val_loss
            best_snapshot = model.snapshot()
            report.best_epoch = epoch
        if stopper.update(val_loss, epoch):
            report.stop_reason = "early_stop"
            break
    else:
        report.stop_reason = "max_epochs"

    model.restore(best_snapshot)
    report.wall_time_s = time.perf_counter() - started
    return report


def train_hierarchical(
    model: Model,
    train_pairs: Sequence[WindowPair],
    val_pairs: Sequence[WindowPair],
    cfg: TrainConfig,
    hooks: TrainHooks | None = None,
) -> TrainReport:
    """Alternating loop: shared phase then branch phase, per round.

    Both phases run over the same batch partition, so every round passes
    the data through the model twice. Early stopping watches the combined
    validation loss once per round; each branch scheduler watches its own
    pollutant's validation loss, the shared scheduler the combined one.
    """
    if not model.spec.is_hierarchical:
        raise ValueError("use train_monolithic for non-hierarchical models")
    if not train_pairs or not val_pairs:
        raise ValueError("need non-empty train and validation pair sets")
    report = TrainReport()
    if cfg.max_epochs == 0:
        report.stop_reason = "max_epochs"
        return report
    started = time.perf_counter()

    groups = model.components()
    branch_lr = cfg.resolved_branch_lr(model.spec.hidden_layers)

    def frozen_check(name: str) -> Callable[[], bool]:
        return lambda: model.is_frozen(name)

    opt_shared = Adam(groups["shared"], cfg.lr, frozen=frozen_check("shared"))
    opt_branches = {
        tag: Adam(groups[tag], branch_lr, frozen=frozen_check(tag)) for tag in BRANCH_GROUPS
    }
    plateau_patience = cfg.resolved_plateau_patience()
    sched_shared = ReduceOnPlateau(opt_shared, cfg.plateau_factor, plateau_patience, cfg.min_improvement)
    sched_branches = {
        tag: ReduceOnPlateau(opt_branches[tag], cfg.plateau_factor, plateau_patience, cfg.min_improvement)
        for tag in BRANCH_GROUPS
    }
    stopper = EarlyStopping(cfg.patience, cfg.min_improvement)
    best_snapshot = model.snapshot()
    best_val = math.inf

    for rnd in range(1, cfg.max_epochs + 1):
        batches = make_batches(len(train_pairs), cfg.batch_size, cfg.seed, rnd, cfg.shuffle)

        for tag in BRANCH_GROUPS:
            model.set_frozen(tag, True)
        model.set_frozen("shared", False)
        shared_loss = _run_batches(
            model, train_pairs, batches, [opt_shared], cfg.weight_decay, "shared", rnd, hooks
        )
        if hooks and hooks.on_phase_end:
            hooks.on_phase_end(rnd, "shared", model)

        model.set_frozen("shared", True)
        for tag in BRANCH_GROUPS:
            model.set_frozen(tag, False)
        branch_loss = _run_batches(
            model,
            train_pairs,
            batches,
            list(opt_branches.values()),
            cfg.weight_decay,
            "branch",
            rnd,
            hooks,
        )
        if hooks and hooks.on_phase_end:
            hooks.on_phase_end(rnd, "branch", model)
        model.set_frozen("shared", False)

        val_total = validation_loss(model, val_pairs, cfg.batch_size)
        _check_finite(val_total, f"round {rnd} validation")
        val_per_target = validation_loss_per_target(model, val_pairs, cfg.batch_size)
        lrs = {"shared": sched_shared.update(val_total)}
        for j, tag in enumerate(BRANCH_GROUPS):
            lrs[tag] = sched_branches[tag].update(float(val_per_target[j]))

        report.epochs.append(EpochRecord(rnd, "shared", shared_loss, val_total, dict(lrs)))
        report.epochs.append(EpochRecord(rnd, "branch", branch_loss, val_total, dict(lrs)))
        if val_total < best_val:
            best_val = val_total
            best_snapshot = model.snapshot()
            report.best_epoch = rnd
        if stopper.update(val_total, rnd):
            report.stop_reason = "early_stop"
            break
    else:
        report.stop_reason = "max_epochs"

    for tag in BRANCH_GROUPS:
        model.set_frozen(tag, False)
    model.restore(best_snapshot)
    report.wall_time_s = time.perf_counter() - started
    return report


def train(
    model: Model,
    train_pairs: Sequence[WindowPair],
    val_pairs: Sequence[WindowPair],
    cfg: TrainConfig,
    hooks: TrainHooks | None = None,
) -> TrainReport:
    """Dispatch to the loop matching the model family."""
    if model.spec.is_hierarchical:
        return train_hierarchical(model, train_pairs, val_pairs, cfg, hooks)
    return train_monolithic(model, train_pairs, val_pairs, cfg, hooks)


POLLUTANT_OF_GROUP = dict(zip(BRANCH_GROUPS, POLLUTANTS))

"""Training loop with LR-on-plateau halving, early stopping and best-checkpoint
retention."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .dataset import batch_iter
from .enhance import augment_image
from .rng import stream

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    max_epochs: int = 50
    lr_patience: int = 6
    stop_patience: int = 20
    lr_factor: float = 0.5
    seed: int = 0


class PlateauSchedule:
    """Tracks validation loss; halves the LR after ``lr_patience`` epochs
    without improvement and requests a stop after ``stop_patience``."""

    def __init__(self, lr, lr_patience=6, stop_patience=20, factor=0.5):
        self.lr = lr
        self.lr_patience, self.stop_patience, self.factor = lr_patience, stop_patience, factor
        self.best = math.inf
        self.best_epoch = 0
        self.since_best = 0
        self.since_lr_change = 0

    def update(self, epoch, val_loss):
        """Record one epoch; returns True when ``val_loss`` is a new best."""
        if val_loss < self.best:
            self.best, self.best_epoch = val_loss, epoch
            self.since_best = self.since_lr_change = 0
            return True
        self.since_best += 1
        self.since_lr_change += 1
        if self.since_lr_change >= self.lr_patience:
            self.lr *= self.factor
            self.since_lr_change = 0
        return False

    @property
    def should_stop(self):
        return self.since_best >= self.stop_patience


def snapshot(model):
    params = [p.data.copy() for p in model.parameters()]
    buffers = [b.copy() for _, b in model.named_buffers()]
    return params, buffers


def restore(model, state):
    params, buffers = state
    for p, saved in zip(model.parameters(), params):
        p.data[...] = saved
    for (_, b), saved in zip(model.named_buffers(), buffers):
        b[...] = saved


def evaluate(model, images, labels, batch_size=64):
    """Mean cross-entropy and accuracy in eval mode."""
    model.eval()
    total, correct = 0.0, 0
    for start in range(0, len(images), batch_size):
        xb = images[start:start + batch_size]
        yb = labels[start:start + batch_size]
        logits = model(T.Tensor(xb.astype(T.default_dtype()))).data
        logp = T.log_softmax(logits)
        total += float(-logp[np.arange(len(yb)), yb].sum())
        correct += int((logits.argmax(axis=1) == yb).sum())
    return total / len(images), correct / len(images)


def _materialize(images, item):
    idx, spec = item
    img = images[idx]
    if spec is None:
        return img
    return np.stack([augment_image(ch, spec) for ch in img])


def train_model(model, train_images, train_labels, val_images, val_labels, cfg=None,
                train_items=None, on_epoch=None):
    """Fit ``model`` and leave it holding the best-validation-loss weights.

    ``train_items`` optionally lists ``(row_index, AugmentSpec or None)``
    pairs (from ``balance_training_set``); by default every row once.
    Returns the per-epoch history.
    """
    cfg = cfg or TrainConfig()
    train_labels = np.asarray(train_labels, dtype=np.int64)
    val_labels = np.asarray(val_labels, dtype=np.int64)
    if len(train_images) == 0 or len(val_images) == 0:
        raise ValueError("training and validation sets must be non-empty")
    items = train_items if train_items is not None else [(i, None) for i in range(len(train_images))]
    params = model.parameters()
    opt = T.Adam(params, lr=cfg.lr)
    sched = PlateauSchedule(cfg.lr, cfg.lr_patience, cfg.stop_patience, cfg.lr_factor)
    best_state = snapshot(model)
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        opt.lr = sched.lr
        loss_sum, correct, seen = 0.0, 0, 0
        for step, batch in enumerate(batch_iter(range(len(items)), cfg.batch_size, cfg.seed, epoch)):
            xb = np.stack([_materialize(train_images, items[i]) for i in batch]).astype(T.default_dtype())
            yb = train_labels[[items[i][0] for i in batch]]
            logits = model.forward(T.Tensor(xb), dropout_rng=stream(cfg.seed, "dropout", epoch, step))
            loss = T.softmax_cross_entropy(logits, yb)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}, step {step}")
            loss.backward()
            opt.step()
            opt.zero_grad()
            loss_sum += value * len(batch)
            correct += int((logits.data.argmax(axis=1) == yb).sum())
            seen += len(batch)
        val_loss, val_acc = evaluate(model, val_images, val_labels)
        improved = sched.update(epoch, val_loss)
        if improved:
            best_state = snapshot(model)
        row = {"epoch": epoch, "train_loss": loss_sum / seen, "train_acc": correct / seen,
               "val_loss": val_loss, "val_acc": val_acc, "lr": opt.lr}
        history.append(row)
        log.info("epoch %d train_loss %.4f val_loss %.4f val_acc %.4f", epoch, row["train_loss"], val_loss, val_acc)
        if on_epoch is not None:
            on_epoch(row)
        if sched.should_stop:
            break
    restore(model, best_state)
    model.eval()
    return history

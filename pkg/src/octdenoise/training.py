"""Two-stage training: a classifier on clean images, then a denoising
autoencoder regularised by that frozen classifier.

The autoencoder loss is ``mse(x, x_hat) + alpha * CE(C(x_hat), y)``: the
classifier looks at the *reconstruction*, so its cross-entropy pushes the
decoder to keep class-discriminative detail. Gradients reach the classifier's
input but never its (frozen) weights.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from .checkpoint import Checkpoint
from .datasets import LabeledDataset, batch_iter, corrupt, derive_seed, stack_images
from .metrics import accuracy, psnr
from .models import (
    Autoencoder,
    AutoencoderConfig,
    Classifier,
    ClassifierConfig,
    from_checkpoint,
    to_checkpoint,
)
from .tensor import Adam, NonFiniteError, Tape, Tensor, add, mse, scale, softmax_cross_entropy

log = logging.getLogger(__name__)

EPOCH_LOG_FIELDS = ("epoch", "train_loss", "val_loss", "val_lr_term", "val_lc_term", "lr", "seconds")
# seed stream reserved for the fixed validation corruption
VAL_STREAM = 2**31 - 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-4
    alpha: float = 0.1
    plateau_factor: float = 0.1
    plateau_patience: int = 10
    plateau_threshold: float = 1e-4
    min_lr: float = 1e-7
    seed: int = 0
    sigma: float = 0.1

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must lie in (0, 1)")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.plateau_patience < 0 or self.min_lr < 0 or self.sigma < 0:
            raise ValueError("patience, min_lr and sigma must be non-negative")


# ---------------------------------------------------------------- scheduling


@dataclass(frozen=True)
class PlateauState:
    lr: float
    best: float = math.inf
    bad_epochs: int = 0


def plateau_update(state: PlateauState, val_loss: float, factor: float = 0.1, patience: int = 10,
                   min_lr: float = 1e-7, threshold: float = 1e-4) -> PlateauState:
    """Reduce-on-plateau step.

    A loss below ``best * (1 - threshold)`` counts as an improvement and
    resets the counter. Once more than ``patience`` consecutive epochs fail to
    improve, the rate is multiplied by ``factor`` (never below ``min_lr``)
    and the counter restarts.
    """
    if not math.isfinite(val_loss):
        raise ValueError("validation loss must be finite")
    if val_loss < state.best * (1 - threshold) or state.best == math.inf:
        return PlateauState(state.lr, val_loss, 0)
    bad = state.bad_epochs + 1
    if bad > patience:
        return PlateauState(max(state.lr * factor, min_lr), state.best, 0)
    return PlateauState(state.lr, state.best, bad)


# ---------------------------------------------------------------- bookkeeping


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_lr_term: float
    val_lc_term: float
    lr: float
    seconds: float
    val_accuracy: float = math.nan
    val_psnr: float = math.nan

    def __post_init__(self):
        for name in ("train_loss", "val_loss", "val_lr_term", "val_lc_term"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise TrainingDiverged(f"epoch {self.epoch}: {name} = {v}")


@dataclass
class TrainResult:
    model: Union[Classifier, Autoencoder]
    checkpoint: Checkpoint
    history: list = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_val_loss(self) -> float:
        return self.history[self.best_epoch - 1].val_loss


def write_epoch_log(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EPOCH_LOG_FIELDS)
        for e in history:
            w.writerow([e.epoch] + [repr(float(getattr(e, k))) for k in EPOCH_LOG_FIELDS[1:]])


def read_epoch_log(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in rows]


# ---------------------------------------------------------------- losses


def combined_loss(x: Tensor, x_hat: Tensor, labels, classifier: Optional[Classifier], alpha: float) -> Tensor:
    """``mse(x, x_hat) + alpha * CE(classifier(x_hat), labels)``; plain MSE when alpha is 0."""
    if x.shape != x_hat.shape:
        raise ValueError(f"clean batch {x.shape} and reconstruction {x_hat.shape} differ")
    rec = mse(x_hat, x)
    if alpha == 0:
        return rec
    if classifier is None:
        raise ValueError("alpha > 0 needs a classifier")
    if not classifier.frozen:
        raise ValueError("the regularising classifier must be frozen")
    return add(rec, scale(softmax_cross_entropy(classifier(x_hat), labels), alpha))


def _guard(fn: Callable, what: str):
    try:
        return fn()
    except NonFiniteError as exc:
        raise TrainingDiverged(f"{what}: {exc}") from exc


def _fit(model, cfg: TrainConfig, train_epoch: Callable, evaluate: Callable, tag: str) -> TrainResult:
    opt = Adam(model.parameters(), lr=cfg.lr)
    plateau = PlateauState(cfg.lr)
    history: list[EpochLog] = []
    best_state, best_loss, best_epoch = model.state(), math.inf, 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        opt.lr = plateau.lr
        train_loss = _guard(lambda: train_epoch(opt, epoch), f"{tag} epoch {epoch}")
        stats = _guard(lambda: evaluate(), f"{tag} validation, epoch {epoch}")
        entry = EpochLog(epoch, train_loss, lr=plateau.lr, seconds=time.perf_counter() - t0, **stats)
        history.append(entry)
        if entry.val_loss < best_loss:
            best_state, best_loss, best_epoch = model.state(), entry.val_loss, epoch
        plateau = plateau_update(plateau, entry.val_loss, cfg.plateau_factor, cfg.plateau_patience,
                                 cfg.min_lr, cfg.plateau_threshold)
        log.info("%s epoch %d: train %.5f val %.5f lr %.1e (%.1fs)", tag, epoch, train_loss,
                 entry.val_loss, entry.lr, entry.seconds)
    model.load_state(best_state)
    meta = {"epoch": best_epoch, "best_val_loss": repr(best_loss), "epochs_run": cfg.epochs,
            **{f"train.{k}": v for k, v in asdict(cfg).items()}}
    return TrainResult(model, to_checkpoint(model, meta), history, best_epoch)


# ---------------------------------------------------------------- stage 1


def classifier_loss(model: Classifier, samples, batch_size: int = 64) -> tuple:
    """Mean cross-entropy and accuracy over ``samples`` (inference mode)."""
    total, preds, labels = 0.0, [], []
    for x, y in batch_iter(samples, batch_size, dtype=model.dtype):
        logits = model(x)
        total += softmax_cross_entropy(logits, y).item() * len(y)
        preds.append(logits.data.argmax(axis=1))
        labels.append(y)
    return total / len(samples), accuracy(np.concatenate(preds), np.concatenate(labels))


def train_classifier(dataset: LabeledDataset, cfg: TrainConfig = TrainConfig(),
                     model_config: Optional[ClassifierConfig] = None, model: Optional[Classifier] = None) -> TrainResult:
    """Fit the classifier on clean images; returns the lowest-validation-loss weights."""
    if not (dataset.train and dataset.val and dataset.test):
        raise ValueError("dataset needs non-empty train, val and test splits")
    if model is None:
        size = dataset.train[0].image.shape[0]
        model = Classifier(model_config or ClassifierConfig(input_size=size), seed=cfg.seed)

    def train_epoch(opt: Adam, epoch: int) -> float:
        total = 0.0
        for x, y in batch_iter(dataset.train, cfg.batch_size, derive_seed(cfg.seed, epoch), model.dtype):
            opt.zero_grad()
            with Tape() as tape:
                loss = softmax_cross_entropy(model(x), y)
            tape.backward(loss)
            opt.step()
            total += loss.item() * len(y)
        return total / len(dataset.train)

    def evaluate() -> dict:
        loss, acc = classifier_loss(model, dataset.val)
        return dict(val_loss=loss, val_lr_term=0.0, val_lc_term=loss, val_accuracy=acc)

    return _fit(model, cfg, train_epoch, evaluate, "classifier")


# ---------------------------------------------------------------- stage 2


def corrupt_batch(samples, indices, sigma: float, *seed_keys: int, dtype=np.float32) -> Tensor:
    """Corrupt each sample with its own index-derived seed."""
    noisy = [corrupt(samples[i].image, sigma, derive_seed(*seed_keys, int(i))) for i in indices]
    return Tensor(np.stack(noisy)[:, None].astype(dtype))


def autoencoder_terms(ae: Autoencoder, classifier: Optional[Classifier], samples, sigma: float, seed: int,
                      batch_size: int = 64) -> dict:
    """Reconstruction and classification terms over ``samples`` with fixed corruption."""
    rec = cls = 0.0
    psnrs = []
    idx = np.arange(len(samples))
    for start in range(0, len(samples), batch_size):
        chunk = idx[start : start + batch_size]
        x = Tensor(stack_images([samples[i] for i in chunk], ae.dtype))
        x_hat = ae(corrupt_batch(samples, chunk, sigma, seed, VAL_STREAM, dtype=ae.dtype))
        rec += mse(x_hat, x).item() * len(chunk)
        if classifier is not None:
            y = np.array([int(samples[i].label) for i in chunk])
            cls += softmax_cross_entropy(classifier(x_hat), y).item() * len(chunk)
        psnrs.extend(psnr(a[0], b[0]) for a, b in zip(x.data, np.clip(x_hat.data, 0, 1)))
    n = len(samples)
    return dict(val_lr_term=rec / n, val_lc_term=cls / n, val_psnr=float(np.mean(psnrs)))


def _as_frozen_classifier(classifier) -> Classifier:
    if isinstance(classifier, Checkpoint):
        return from_checkpoint(classifier, "classifier").freeze()
    if not isinstance(classifier, Classifier):
        raise TypeError("expected a Classifier or a classifier Checkpoint")
    if not classifier.frozen:
        raise ValueError("the regularising classifier must be frozen")
    return classifier


def train_autoencoder(dataset: LabeledDataset, classifier, cfg: TrainConfig = TrainConfig(),
                      model_config: Optional[AutoencoderConfig] = None, model: Optional[Autoencoder] = None) -> TrainResult:
    """Fit the denoising autoencoder against the frozen classifier.

    Training noise is redrawn every epoch from ``(seed, epoch, index)``;
    validation noise is fixed so epoch losses are comparable.
    """
    if not (dataset.train and dataset.val):
        raise ValueError("dataset needs non-empty train and val splits")
    clf = _as_frozen_classifier(classifier)
    if model is None:
        model = Autoencoder(model_config or AutoencoderConfig(input_size=clf.config.input_size), seed=cfg.seed)
    if model.config.input_size != clf.config.input_size:
        raise ValueError(f"autoencoder input {model.config.input_size} != classifier input {clf.config.input_size}")

    def train_epoch(opt: Adam, epoch: int) -> float:
        total = 0.0
        batches = batch_iter(dataset.train, cfg.batch_size, derive_seed(cfg.seed, epoch), model.dtype, with_indices=True)
        for x, y, idx in batches:
            noisy = corrupt_batch(dataset.train, idx, cfg.sigma, cfg.seed, epoch, dtype=model.dtype)
            opt.zero_grad()
            with Tape() as tape:
                loss = combined_loss(x, model(noisy), y, clf, cfg.alpha)
            tape.backward(loss)
            opt.step()
            total += loss.item() * len(y)
        return total / len(dataset.train)

    def evaluate() -> dict:
        terms = autoencoder_terms(model, clf, dataset.val, cfg.sigma, cfg.seed)
        terms["val_loss"] = terms["val_lr_term"] + cfg.alpha * terms["val_lc_term"]
        return terms

    return _fit(model, cfg, train_epoch, evaluate, "autoencoder")


def with_overrides(cfg: TrainConfig, **kwargs) -> TrainConfig:
    return replace(cfg, **{k: v for k, v in kwargs.items() if v is not None})

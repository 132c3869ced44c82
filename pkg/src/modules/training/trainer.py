__all__ = ["EarlyStopping", "EpochRecord", "TrainHistory", "TrainedModel", "train", "backward", "batch_loss"]

import csv
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from src.config_schema import LossConfig, TrainConfig
from src.exceptions import DatasetError, TrainingDivergedError
from src.logging_ import logger
from src.modules.autodiff import ops
from src.modules.autodiff.graph import Node, backpropagate
from src.modules.networks.layers import Module
from src.modules.networks.samples import SliceSample, collate
from src.modules.training.datasets import SliceDataset
from src.modules.training.optimizer import ParamStore, adam_step, lr_at_epoch


class EarlyStopping:
    """
    Stop when the validation loss has not decreased by more than `min_delta` for `patience` consecutive epochs.
    """

    def __init__(self, patience: int = 25, min_delta: float = 1e-6):
        self.patience = patience
        self.min_delta = min_delta
        self.counter = 0
        self.best_loss: float | None = None
        self.best_epoch: int | None = None
        self.early_stop = False

    def __call__(self, epoch: int, val_loss: float) -> bool:
        """
        Record the loss of `epoch` and return True when it is the best so far.
        """
        if self.best_loss is None:
            self.best_loss, self.best_epoch = val_loss, epoch
            return True
        improved = val_loss < self.best_loss
        if val_loss < self.best_loss - self.min_delta:
            self.counter = 0
        else:
            self.counter += 1
            if self.counter >= self.patience:
                logger.info(f"Early stopping at epoch {epoch}: no improvement for {self.counter} epochs")
                self.early_stop = True
        if improved:
            self.best_loss, self.best_epoch = val_loss, epoch
        return improved


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    stopped: bool = False


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def best(self) -> EpochRecord:
        return min(self.records, key=lambda r: r.val_loss)

    def to_csv(self, path: Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "lr", "train_loss", "val_loss", "stopped_flag"])
            for r in self.records:
                writer.writerow([r.epoch, repr(r.lr), repr(r.train_loss), repr(r.val_loss), int(r.stopped)])


@dataclass
class TrainedModel:
    network: Module
    best_epoch: int
    best_val_loss: float
    history: TrainHistory


def backward(network: Module, loss_grad: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """
    Gradients of every parameter given the gradient at the network's last recorded output.
    """
    return network.backward(loss_grad)


def batch_loss(
    network: Module,
    samples: Sequence[SliceSample],
    cfg: LossConfig,
    training: bool,
    rng: np.random.Generator | None = None,
) -> Node:
    batch = collate(samples)
    probs = network(batch.inputs, training=training, rng=rng)
    return ops.segmentation_loss(probs, batch.targets, batch.masks, cfg, batch.weights, batch.multipliers)


def _mean_loss(network: Module, samples: Sequence[SliceSample], cfg: TrainConfig) -> float:
    total = 0.0
    for start in range(0, len(samples), cfg.batch_size):
        chunk = samples[start : start + cfg.batch_size]
        total += float(batch_loss(network, chunk, cfg.loss, training=False).value) * len(chunk)
    return total / len(samples)


def train(network: Module, dataset: SliceDataset, cfg: TrainConfig, loss: LossConfig | None = None) -> TrainedModel:
    """
    Mini-batch Adam with step decay and early stopping on the validation loss. The returned network carries the
    parameters of the best validation epoch.
    """
    loss_cfg = loss or cfg.loss
    cfg = cfg.model_copy(update={"loss": loss_cfg})
    if not dataset.train:
        raise DatasetError("Training split is empty")
    validation = dataset.validation
    if not validation:
        logger.warning("Validation split is empty: early stopping monitors the training loss")
        validation = dataset.train

    rng = np.random.default_rng(cfg.seed)
    store = ParamStore(network.named_parameters())
    stopper = EarlyStopping(cfg.early_stop_patience, cfg.min_delta)
    history = TrainHistory()
    best_state = network.state_dict()

    for epoch in range(1, cfg.max_epochs + 1):
        lr = lr_at_epoch(cfg, epoch - 1)
        order = rng.permutation(len(dataset.train))
        running = 0.0
        for batch_index, start in enumerate(range(0, len(order), cfg.batch_size)):
            samples = [dataset.train[i] for i in order[start : start + cfg.batch_size]]
            network.zero_grad()
            value = batch_loss(network, samples, cfg.loss, training=True, rng=rng)
            if not np.isfinite(value.value):
                raise TrainingDivergedError(epoch, batch_index, float(value.value))
            backpropagate(value)
            adam_step(store, store.grads(), cfg, lr)
            running += float(value.value) * len(samples)

        train_loss = running / len(order)
        val_loss = _mean_loss(network, validation, cfg)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(epoch, -1, val_loss)
        if stopper(epoch, val_loss):
            best_state = network.state_dict()
        history.append(EpochRecord(epoch, lr, train_loss, val_loss, stopper.early_stop))
        logger.info(f"Epoch {epoch}: lr={lr:.6g} train_loss={train_loss:.6f} val_loss={val_loss:.6f}")
        if stopper.early_stop:
            break

    network.load_state_dict(best_state)
    logger.info(f"Restored parameters of epoch {stopper.best_epoch} (val_loss={stopper.best_loss:.6f})")
    return TrainedModel(network, stopper.best_epoch, stopper.best_loss, history)

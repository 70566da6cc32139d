"""Training loop: SGD with momentum, triangular cyclical LR from
lr_range.json, early stopping on validation loss, best-checkpoint
selection, and a loss_history.csv consumable by the LR tooling."""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .augment import augment_sample
from .data import Sample, load_dataset, to_model_input, to_target
from .model import TrainConfig, build_model
from .schedule import EarlyStopping, load_lr_range, triangular_lr

logger = logging.getLogger(__name__)

DEFAULT_LR_RANGE = (0.0008, 0.006)


@dataclass
class TrainResult:
    best_epoch: int
    best_val_loss: float
    epochs_run: int
    checkpoint_path: str
    history_path: str


def _batch_losses(model, samples: list[Sample], augment: bool,
                  rng: np.random.Generator):
    images, targets = [], []
    for sample in samples:
        image, masks = sample.image, sample.masks
        if augment:
            image, masks = augment_sample(image, masks, rng)
            aug = Sample(sample.image_id, sample.file_name, image,
                         _boxes_from_masks(masks), masks)
        else:
            aug = sample
        if len(aug.boxes) == 0:
            continue
        images.append(to_model_input(aug.image))
        targets.append(to_target(aug))
    if not images:
        return None
    losses = model(images, targets)
    return sum(losses.values())


def _boxes_from_masks(masks: np.ndarray) -> np.ndarray:
    boxes = []
    for m in masks:
        ys, xs = np.nonzero(m)
        if len(xs) == 0:
            boxes.append([0.0, 0.0, 1.0, 1.0])
        else:
            boxes.append([float(xs.min()), float(ys.min()),
                          float(xs.max() + 1), float(ys.max() + 1)])
    return np.asarray(boxes, dtype=np.float32).reshape(-1, 4)


def validation_loss(model, samples: list[Sample], batch_size: int) -> float:
    """Mean total loss over the validation set. The model stays in train
    mode (loss heads are only wired there) but gradients are off."""
    was_training = model.training
    model.train()
    totals = []
    with torch.no_grad():
        for i in range(0, len(samples), batch_size):
            batch = [s for s in samples[i:i + batch_size] if len(s.boxes)]
            if not batch:
                continue
            losses = model([to_model_input(s.image) for s in batch],
                           [to_target(s) for s in batch])
            totals.append(float(sum(v.item() for v in losses.values())))
    if not was_training:
        model.eval()
    return float(np.mean(totals)) if totals else float("inf")


def train(config: TrainConfig) -> TrainResult:
    torch.manual_seed(config.seed)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_set = load_dataset(config.train_annotations)
    val_set = load_dataset(config.val_annotations)
    if not train_set or not val_set:
        raise ValueError("empty training or validation set")

    if config.lr_range:
        alpha_min, alpha_max = load_lr_range(config.lr_range)
    else:
        alpha_min, alpha_max = DEFAULT_LR_RANGE

    model = build_model(config)
    model.train()
    optimizer = torch.optim.SGD(model.parameters(), lr=alpha_min,
                                momentum=config.momentum,
                                weight_decay=config.weight_decay)

    stopper = EarlyStopping(patience=config.patience)
    rng = np.random.default_rng(config.seed)
    history: list[tuple[int, float, float]] = []
    best_state = None
    global_iter = 0

    for epoch in range(1, config.max_epochs + 1):
        epoch_losses = []
        for _ in range(config.iterations_per_epoch):
            lr = triangular_lr(global_iter, alpha_min, alpha_max,
                               config.cycle_length)
            for group in optimizer.param_groups:
                group["lr"] = lr
            picks = rng.choice(len(train_set), size=config.batch_size,
                               replace=len(train_set) < config.batch_size)
            total = _batch_losses(model, [train_set[i] for i in picks],
                                  config.augment, rng)
            global_iter += 1
            if total is None:
                continue
            optimizer.zero_grad()
            total.backward()
            if config.max_grad_norm > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(),
                                               config.max_grad_norm)
            optimizer.step()
            epoch_losses.append(float(total.item()))

        val = validation_loss(model, val_set, config.batch_size)
        tr = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        history.append((epoch, tr, val))
        improved = val < stopper.best_loss
        stop = stopper.update(val)
        if improved:
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        logger.info("epoch %d: L_tr=%.4f L_val=%.4f best=%d", epoch, tr, val,
                    stopper.best_epoch)
        if stop:
            break

    history_path = out_dir / "loss_history.csv"
    with open(history_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "L_tr", "L_val"])
        writer.writerows(history)

    checkpoint_path = out_dir / "checkpoint.pt"
    torch.save({
        "model": best_state if best_state is not None else model.state_dict(),
        "config": config.to_dict(),
        "best_epoch": stopper.best_epoch,
        "best_val_loss": stopper.best_loss,
    }, checkpoint_path)
    return TrainResult(best_epoch=stopper.best_epoch,
                       best_val_loss=stopper.best_loss,
                       epochs_run=stopper.epoch,
                       checkpoint_path=str(checkpoint_path),
                       history_path=str(history_path))


def lr_sweep(config: TrainConfig, out_csv, alpha_start=1e-5, alpha_stop=0.05,
             iterations=60) -> None:
    """LR range test: ramp the learning rate geometrically and record the
    training loss per iteration as (alpha, loss) CSV."""
    torch.manual_seed(config.seed)
    train_set = load_dataset(config.train_annotations)
    model = build_model(config)
    model.train()
    optimizer = torch.optim.SGD(model.parameters(), lr=alpha_start,
                                momentum=config.momentum,
                                weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    alphas = np.geomspace(alpha_start, alpha_stop, iterations)
    rows = []
    for alpha in alphas:
        for group in optimizer.param_groups:
            group["lr"] = float(alpha)
        picks = rng.choice(len(train_set), size=config.batch_size,
                           replace=len(train_set) < config.batch_size)
        total = _batch_losses(model, [train_set[i] for i in picks],
                              config.augment, rng)
        if total is None:
            continue
        optimizer.zero_grad()
        total.backward()
        optimizer.step()
        rows.append((float(alpha), float(total.item())))
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "loss"])
        writer.writerows(rows)

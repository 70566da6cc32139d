"""Triangular cyclical learning rate (read from lr_range.json) and
early-stopping bookkeeping, per the shared file contracts."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def load_lr_range(path) -> tuple[float, float]:
    doc = json.loads(Path(path).read_text())
    alpha_min = float(doc["alpha_min"])
    alpha_max = float(doc["alpha_max"])
    if not 0 < alpha_min < alpha_max:
        raise ValueError(f"{path}: need 0 < alpha_min < alpha_max")
    return alpha_min, alpha_max


def triangular_lr(iteration: int, alpha_min: float, alpha_max: float,
                  cycle_length: int) -> float:
    """alpha_min -> alpha_max over the first half cycle, back down over
    the second; exact at the vertices."""
    pos = iteration % cycle_length
    half = cycle_length // 2
    return float(np.interp(pos, [0, half, cycle_length],
                           [alpha_min, alpha_max, alpha_min]))


@dataclass
class EarlyStopping:
    patience: int
    best_loss: float = float("inf")
    best_epoch: int = 0
    epoch: int = 0

    def update(self, val_loss: float) -> bool:
        """Record one epoch; True means stop now."""
        self.epoch += 1
        if val_loss < self.best_loss:
            self.best_loss = float(val_loss)
            self.best_epoch = self.epoch
        return (self.epoch - self.best_epoch) >= self.patience

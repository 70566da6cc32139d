"""Training-support math: learning-rate range-test fitting, the
triangular cyclical schedule, and early-stopping bookkeeping.

The range test sweeps the learning rate upward while recording the
training loss; the usable range ends where the loss stops decreasing.
That crossover is made reproducible by fitting f(a) = max(m*a + b, c)
and taking the intersection of the two segments, a_max = (c - b) / m.
"""

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError, NoDescentError
from .fileio import read_json, write_json_atomic


@dataclass(frozen=True)
class LossCurve:
    """Loss samples over a strictly increasing learning-rate sweep."""
    alphas: tuple
    losses: tuple
    kind: str = "training"

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=np.float64)
        if len(a) != len(self.losses):
            raise InvalidInputError("alphas and losses must have equal length")
        if np.any(a <= 0):
            raise InvalidInputError("learning rates must be positive")
        if np.any(np.diff(a) <= 0):
            raise InvalidInputError("learning rates must be strictly increasing")

    @classmethod
    def from_csv(cls, path, kind: str = "training") -> "LossCurve":
        """Read a 2-column (alpha, loss) CSV; a non-numeric first row is
        treated as a header."""
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if len(row) < 2:
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except ValueError:
                    if rows:
                        raise InvalidInputError(f"non-numeric row {row!r} in {path}")
        if not rows:
            raise InvalidInputError(f"no data rows in {path}")
        rows.sort(key=lambda r: r[0])
        return cls(alphas=tuple(r[0] for r in rows),
                   losses=tuple(r[1] for r in rows), kind=kind)


@dataclass(frozen=True)
class LrRangeFit:
    m: float
    b: float
    c: float
    alpha_min: float
    alpha_max: float
    rms_residual: float


def detect_alpha_min(curve: LossCurve) -> float:
    """Learning rate of the initial loss maximum, located on a 5-point
    median-smoothed copy of the curve."""
    losses = ndimage.median_filter(np.asarray(curve.losses, dtype=np.float64),
                                   size=5, mode="nearest")
    return float(curve.alphas[int(np.argmax(losses))])


def fit_lr_range(curve: LossCurve, alpha_min: float | None = None) -> LrRangeFit:
    """Fit f(a) = max(m*a + b, c) over points with a >= alpha_min.

    Every breakpoint between consecutive retained points is scanned:
    the left segment gets a closed-form line fit, the right segment's
    plateau is its mean loss, and the split with the smallest total
    squared residual (and m < 0) wins. Deterministic; no initialization
    sensitivity.
    """
    if alpha_min is None:
        alpha_min = detect_alpha_min(curve)
    a = np.asarray(curve.alphas, dtype=np.float64)
    L = np.asarray(curve.losses, dtype=np.float64)
    keep = a >= alpha_min
    a, L = a[keep], L[keep]
    n = len(a)
    if n < 4:
        raise InvalidInputError(
            f"need >= 4 points with alpha >= {alpha_min}, have {n}")

    best = None
    for split in range(2, n - 1):  # left = [0, split), right = [split, n)
        ax, ay = a[:split], L[:split]
        m, b = np.polyfit(ax, ay, 1)
        if not m < 0:
            continue
        c = float(L[split:].mean())
        sse = float(np.sum((m * ax + b - ay) ** 2) + np.sum((L[split:] - c) ** 2))
        if best is None or sse < best[0]:
            best = (sse, float(m), float(b), c)
    if best is None:
        raise NoDescentError("no decreasing-loss segment; range test inconclusive")

    sse, m, b, c = best
    alpha_max = (c - b) / m
    if not alpha_max > alpha_min:
        raise NoDescentError(
            f"fitted alpha_max={alpha_max:.3g} does not exceed alpha_min={alpha_min:.3g}")
    return LrRangeFit(m=m, b=b, c=c, alpha_min=float(alpha_min),
                      alpha_max=float(alpha_max),
                      rms_residual=float(np.sqrt(sse / n)))


def save_lr_range(fit: LrRangeFit, path) -> None:
    write_json_atomic(path, {
        "m": fit.m, "b": fit.b, "c": fit.c,
        "alpha_min": fit.alpha_min, "alpha_max": fit.alpha_max,
        "rms_residual": fit.rms_residual,
    })


def load_lr_range(path) -> LrRangeFit:
    doc = read_json(path)
    return LrRangeFit(m=doc["m"], b=doc["b"], c=doc["c"],
                      alpha_min=doc["alpha_min"], alpha_max=doc["alpha_max"],
                      rms_residual=doc["rms_residual"])


@dataclass(frozen=True)
class CyclicSchedule:
    alpha_min: float
    alpha_max: float
    cycle_length: int
    policy: str = "triangular"

    def __post_init__(self):
        if not 0 < self.alpha_min < self.alpha_max:
            raise InvalidInputError("need 0 < alpha_min < alpha_max")
        if self.cycle_length < 2 or self.cycle_length % 2 != 0:
            raise InvalidInputError("cycle_length must be even and >= 2")
        if self.policy != "triangular":
            raise InvalidInputError(f"unsupported policy {self.policy!r}")


def triangular_lr(iteration: int, schedule: CyclicSchedule) -> float:
    """Triangle wave: alpha_min -> alpha_max over the first half cycle,
    back down over the second; exact at the vertices."""
    if iteration < 0:
        raise InvalidInputError("iteration must be >= 0")
    pos = iteration % schedule.cycle_length
    half = schedule.cycle_length // 2
    return float(np.interp(pos, [0, half, schedule.cycle_length],
                           [schedule.alpha_min, schedule.alpha_max, schedule.alpha_min]))


@dataclass(frozen=True)
class EarlyStopState:
    patience: int
    best_loss: float = float("inf")
    best_epoch: int = 0
    epochs_seen: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise InvalidInputError("patience must be >= 1")


def early_stop_check(state: EarlyStopState, new_val_loss: float) -> tuple[EarlyStopState, bool]:
    """Record one validation epoch; stop once the best epoch is
    `patience` epochs in the past. Only strict improvement moves the
    best marker."""
    epoch = state.epochs_seen + 1
    if new_val_loss < state.best_loss:
        state = replace(state, best_loss=float(new_val_loss), best_epoch=epoch,
                        epochs_seen=epoch)
    else:
        state = replace(state, epochs_seen=epoch)
    return state, (epoch - state.best_epoch) >= state.patience

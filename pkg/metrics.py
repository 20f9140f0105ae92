"""
Accuracy, the 10-class confusion matrix (rows = predicted digit, columns = true
digit) and the per-epoch curve table.
"""
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config import NUM_CLASSES
from errors import EmptyInput, InvalidLabel, LengthMismatch

CORNER_LABEL = "predicted\\true"


def _as_labels(values: Sequence[int], what: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise InvalidLabel(f"{what} labels must be integers")
        arr = arr.astype(np.int64)
    return arr.astype(np.int64, copy=False).ravel()


def accuracy(predicted: Sequence[int], truth: Sequence[int]) -> float:
    p = _as_labels(predicted, "predicted")
    t = _as_labels(truth, "true")
    if p.size != t.size:
        raise LengthMismatch(f"{p.size} predictions for {t.size} true labels")
    if t.size == 0:
        raise EmptyInput("accuracy of an empty label list is undefined")
    return float(np.count_nonzero(p == t) / t.size)


class ConfusionMatrix:
    """10x10 counts; counts[p][t] = number of samples predicted p whose true digit is t"""

    def __init__(self, counts: np.ndarray):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (NUM_CLASSES, NUM_CLASSES) or (counts < 0).any():
            raise InvalidLabel(f"Confusion counts must be a non-negative {NUM_CLASSES}x{NUM_CLASSES} table")
        self.counts = counts

    @classmethod
    def from_labels(cls, predicted: Sequence[int], truth: Sequence[int]) -> "ConfusionMatrix":
        p = _as_labels(predicted, "predicted")
        t = _as_labels(truth, "true")
        if p.size != t.size:
            raise LengthMismatch(f"{p.size} predictions for {t.size} true labels")
        for arr, what in ((p, "predicted"), (t, "true")):
            if arr.size and (arr.min() < 0 or arr.max() > NUM_CLASSES - 1):
                raise InvalidLabel(f"{what} labels must lie in 0-9")
        counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
        np.add.at(counts, (p, t), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def trace(self) -> int:
        return int(np.trace(self.counts))

    def accuracy(self) -> float:
        if self.total == 0:
            raise EmptyInput("Confusion matrix is empty")
        return self.trace / self.total

    def true_totals(self) -> np.ndarray:
        """Column sums: samples per true digit."""
        return self.counts.sum(axis=0)

    def predicted_totals(self) -> np.ndarray:
        """Row sums: samples per predicted digit."""
        return self.counts.sum(axis=1)

    def class_summary(self) -> List[Tuple[int, int, int]]:
        """(digit, correctly classified, total with that true digit) per digit."""
        totals = self.true_totals()
        return [(d, int(self.counts[d, d]), int(totals[d])) for d in range(NUM_CLASSES)]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.counts, index=range(NUM_CLASSES), columns=range(NUM_CLASSES))
        frame.index.name = CORNER_LABEL
        return frame

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, lineterminator="\n")
        return path

    def __eq__(self, other) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def __repr__(self) -> str:
        return f"ConfusionMatrix(total={self.total}, trace={self.trace})"


def confusion_matrix(predicted: Sequence[int], truth: Sequence[int]) -> ConfusionMatrix:
    return ConfusionMatrix.from_labels(predicted, truth)


def format_percent(fraction: float) -> str:
    return f"{fraction * 100:.2f}%"


def history_frame(history) -> pd.DataFrame:
    """
    Curve table, one row per epoch. Losses keep full round-trip precision,
    accuracies are written with 6 decimals.
    """
    rows = [
        {
            "epoch": m.epoch,
            "train_loss": repr(float(m.train_loss)),
            "train_accuracy": f"{m.train_accuracy:.6f}",
            "val_loss": repr(float(m.val_loss)),
            "val_accuracy": f"{m.val_accuracy:.6f}",
        }
        for m in history
    ]
    return pd.DataFrame(rows, columns=["epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy"])


def write_history(history, path: Union[str, Path]) -> Path:
    path = Path(path)
    history_frame(history).to_csv(path, index=False, lineterminator="\n")
    return path

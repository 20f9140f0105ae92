"""
Digit CSV ingestion, normalization, train/validation split and batching.

Labeled files have the header `label,pixel0,...,pixel783`; unlabeled (test)
files have only the pixel columns. Pixel x of a row lands at image position
(x // 28, x % 28).
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np
import pandas as pd

from config import IMAGE_CHANNELS, IMAGE_HEIGHT, IMAGE_WIDTH, MAX_PIXEL_VALUE, NUM_CLASSES, PIXEL_COUNT, get_logger, substream
from errors import (
    AlreadyNormalized,
    HeaderError,
    InvalidConfig,
    InvalidSplit,
    LabelError,
    PixelValueError,
)

log = get_logger("DATA")

PIXEL_COLUMNS = [f"pixel{i}" for i in range(PIXEL_COUNT)]
LABEL_COLUMN = "label"


@dataclass(frozen=True)
class LabeledDataset:
    """images (N, 28, 28, 1): raw uint8 until normalized, then float32 in [0, 1]"""
    images: np.ndarray
    labels: Optional[np.ndarray]
    normalized: bool = False

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        labels = None if self.labels is None else self.labels[indices]
        return LabeledDataset(images=self.images[indices], labels=labels, normalized=self.normalized)


@dataclass(frozen=True)
class SplitDataset:
    train: LabeledDataset
    val: LabeledDataset
    train_indices: np.ndarray
    val_indices: np.ndarray


@dataclass(frozen=True)
class Batch:
    images: np.ndarray
    labels: Optional[np.ndarray]
    indices: np.ndarray


# ============================================================================
# Loading
# ============================================================================

def _check_header(columns: list, labeled: bool) -> None:
    expected = ([LABEL_COLUMN] if labeled else []) + PIXEL_COLUMNS
    if len(columns) != len(expected):
        kind = "labeled" if labeled else "unlabeled"
        raise HeaderError(f"Expected {len(expected)} columns for a {kind} file, found {len(columns)}")
    for i, (got, want) in enumerate(zip(columns, expected)):
        if str(got).strip() != want:
            raise HeaderError(f"Column {i + 1} is named {got!r}, expected {want!r}")


INTEGER_TEXT = r"[+-]?\d+"


def _encoding_error(path: Path) -> Exception:
    """HeaderError or PixelValueError naming the line of the first byte that is not UTF-8."""
    raw = path.read_bytes()
    try:
        raw.decode("utf-8")
    except UnicodeDecodeError as e:
        row = raw.count(b"\n", 0, e.start)
        if row == 0:
            return HeaderError(f"{path}: header is not valid UTF-8 (byte {e.start})")
        return PixelValueError(f"Row {row}: invalid UTF-8 at byte {e.start}", row=row)
    return HeaderError(f"{path} is not valid UTF-8")


def _check_text_columns(path: Path, frame: pd.DataFrame, labeled: bool) -> None:
    """
    Columns pandas could not read as int64 are re-read as text. Every cell must
    then be a base-10 integer (surrounding whitespace tolerated); integers too
    large for int64 are reported as out of range with the value as written.
    """
    suspect = [c for c in frame.columns if frame[c].dtype.kind != "i"]
    if not suspect:
        return
    text = pd.read_csv(path, usecols=suspect, dtype=str, keep_default_na=False, skipinitialspace=True)

    worst = None
    for column in suspect:
        cells = text[column].str.strip()
        not_integer = ~cells.str.fullmatch(INTEGER_TEXT)
        if not_integer.any():
            row = int(np.argmax(not_integer.to_numpy()))
            kind = "integer"
        else:
            limit = NUM_CLASSES - 1 if column == LABEL_COLUMN else MAX_PIXEL_VALUE
            values = cells.map(int)
            outside = ((values < 0) | (values > limit)).to_numpy(dtype=bool)
            if not outside.any():
                frame[column] = values.astype(np.int64)
                continue
            row = int(np.argmax(outside))
            kind = "range"
        if worst is None or row < worst[0]:
            worst = (row, column, cells.iloc[row], kind)

    if worst is None:
        return
    row, column, value, kind = worst
    if kind == "integer":
        raise PixelValueError(
            f"Row {row + 1}, column {column!r}: value {value!r} is not an integer",
            row=row + 1, column=column,
        )
    if column == LABEL_COLUMN and labeled:
        raise LabelError(f"Row {row + 1}: label {value} outside 0-9", row=row + 1)
    raise PixelValueError(
        f"Row {row + 1}, column {column!r}: value {value} outside 0-{MAX_PIXEL_VALUE}",
        row=row + 1, column=column,
    )


def load_csv(path: Union[str, Path], labeled: bool = True) -> LabeledDataset:
    """
    Read a digit CSV. Raw pixel values are kept (uint8) until `normalize`.

    Rows are reported 1-based, counting data rows only (the header is row 0).
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Data file not found: {path}")

    try:
        frame = pd.read_csv(path, skipinitialspace=True, encoding="utf-8")
    except pd.errors.EmptyDataError as e:
        raise HeaderError(f"{path} is empty") from e
    except pd.errors.ParserError as e:
        raise PixelValueError(f"Malformed row in {path}: {e}") from e
    except UnicodeDecodeError as e:
        raise _encoding_error(path) from e

    _check_header(list(frame.columns), labeled)
    _check_text_columns(path, frame, labeled)

    values = frame.to_numpy(dtype=np.int64)
    pixels = values[:, 1:] if labeled else values
    out_of_range = (pixels < 0) | (pixels > MAX_PIXEL_VALUE)
    if out_of_range.any():
        row, col = (int(v) for v in np.argwhere(out_of_range)[0])
        raise PixelValueError(
            f"Row {row + 1}, column 'pixel{col}': value {pixels[row, col]} outside 0-{MAX_PIXEL_VALUE}",
            row=row + 1, column=f"pixel{col}",
        )

    labels = None
    if labeled:
        labels = values[:, 0]
        bad_labels = (labels < 0) | (labels > NUM_CLASSES - 1)
        if bad_labels.any():
            row = int(np.argmax(bad_labels))
            raise LabelError(f"Row {row + 1}: label {labels[row]} outside 0-9", row=row + 1)

    images = pixels.astype(np.uint8).reshape(-1, IMAGE_HEIGHT, IMAGE_WIDTH, IMAGE_CHANNELS)
    log.info(f"loaded {len(images)} images from {path}")
    return LabeledDataset(images=images, labels=labels, normalized=False)


# ============================================================================
# Preprocessing
# ============================================================================

def normalize(ds: LabeledDataset) -> LabeledDataset:
    """Divide every pixel by 255 (the format maximum, not the observed one)."""
    if ds.normalized:
        raise AlreadyNormalized("Dataset is already normalized")
    images = ds.images.astype(np.float32) / np.float32(MAX_PIXEL_VALUE)
    return LabeledDataset(images=images, labels=ds.labels, normalized=True)


def split(
    ds: LabeledDataset,
    train_count: int,
    val_count: int,
    seed: int,
    shuffle: bool = True,
) -> SplitDataset:
    """First `train_count` of a seeded permutation go to train, the next `val_count` to val."""
    if train_count < 0 or val_count < 0 or train_count + val_count > len(ds):
        raise InvalidSplit(
            f"Cannot take {train_count} train + {val_count} validation images from {len(ds)}"
        )
    order = substream(seed, "split").permutation(len(ds)) if shuffle else np.arange(len(ds))
    train_idx = order[:train_count]
    val_idx = order[train_count:train_count + val_count]
    return SplitDataset(
        train=ds.subset(train_idx),
        val=ds.subset(val_idx),
        train_indices=train_idx,
        val_indices=val_idx,
    )


def batches(
    ds: LabeledDataset,
    batch_size: int,
    shuffle: bool = False,
    seed: Union[int, np.random.Generator, None] = None,
) -> Iterator[Batch]:
    """ceil(N / batch_size) batches; the last one may be short."""
    if batch_size < 1:
        raise InvalidConfig(f"batch_size must be at least 1, got {batch_size}")
    n = len(ds)
    if shuffle:
        rng = seed if isinstance(seed, np.random.Generator) else substream(seed or 0, "shuffle")
        order = rng.permutation(n)
    else:
        order = np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        labels = None if ds.labels is None else ds.labels[idx]
        yield Batch(images=ds.images[idx], labels=labels, indices=idx)


# ============================================================================
# Visualization
# ============================================================================

def export_pgm(images: np.ndarray, path: Union[str, Path], columns: int = 8, gap: int = 2) -> Path:
    """
    Write a binary PGM mosaic of (N, 28, 28, 1) images. Higher pixel values are
    drawn darker, so digits appear dark on white.
    """
    if columns < 1:
        raise InvalidConfig(f"columns must be at least 1, got {columns}")
    n = len(images)
    if n == 0:
        raise InvalidConfig("No images to export")
    grey = images[..., 0].astype(np.float64)
    if grey.max() <= 1.0 and images.dtype != np.uint8:
        grey = grey * MAX_PIXEL_VALUE
    ink = (MAX_PIXEL_VALUE - np.clip(np.rint(grey), 0, MAX_PIXEL_VALUE)).astype(np.uint8)

    cols = min(columns, n)
    rows = -(-n // cols)
    height = rows * IMAGE_HEIGHT + (rows + 1) * gap
    width = cols * IMAGE_WIDTH + (cols + 1) * gap
    canvas = np.full((height, width), MAX_PIXEL_VALUE, dtype=np.uint8)
    for i in range(n):
        r, c = divmod(i, cols)
        top = gap + r * (IMAGE_HEIGHT + gap)
        left = gap + c * (IMAGE_WIDTH + gap)
        canvas[top:top + IMAGE_HEIGHT, left:left + IMAGE_WIDTH] = ink[i]

    path = Path(path)
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n{MAX_PIXEL_VALUE}\n".encode("ascii"))
        f.write(canvas.tobytes())
    log.info(f"wrote {n} images to {path}")
    return path

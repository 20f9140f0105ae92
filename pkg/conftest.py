import os
from pathlib import Path

import numpy as np
import pytest

from data import PIXEL_COLUMNS


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: needs the Kaggle CSV in DIGIT_CNN_DATA")


def synthetic_digits(n: int, seed: int = 0):
    """
    Raw (n, 28, 28, 1) uint8 images whose digit k is a bright 6x6 block at a
    class-specific spot plus faint noise, and their labels (balanced).
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 10
    rng.shuffle(labels)
    images = rng.integers(0, 30, size=(n, 28, 28, 1)).astype(np.uint8)
    for i, k in enumerate(labels):
        top, left = 2 + (k // 5) * 13, 1 + (k % 5) * 5
        images[i, top:top + 6, left:left + 6, 0] = 200 + rng.integers(0, 56)
    return images, labels.astype(np.int64)


def write_digit_csv(path: Path, images: np.ndarray, labels=None, line_end: str = "\n") -> Path:
    header = (["label"] if labels is not None else []) + PIXEL_COLUMNS
    flat = images.reshape(len(images), -1)
    lines = [",".join(header)]
    for i, row in enumerate(flat):
        cells = [str(int(v)) for v in row]
        if labels is not None:
            cells.insert(0, str(int(labels[i])))
        lines.append(",".join(cells))
    path.write_text(line_end.join(lines) + line_end, encoding="utf-8")
    return path


@pytest.fixture
def digits_csv(tmp_path):
    images, labels = synthetic_digits(60, seed=1)
    return write_digit_csv(tmp_path / "train.csv", images, labels)


@pytest.fixture
def kaggle_csv():
    path = os.getenv("DIGIT_CNN_DATA")
    if not path or not Path(path).is_file():
        pytest.skip("set DIGIT_CNN_DATA to the Kaggle train.csv")
    return Path(path)

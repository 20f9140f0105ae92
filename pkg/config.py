"""
Configuration for the digit CNN engine: environment, training hyperparameters,
seeded random streams and console logging.
"""
import logging
import os
import sys
import zlib
from typing import Optional

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from errors import InvalidConfig

load_dotenv()

# ============================================================================
# CONSTANTS
# ============================================================================

IMAGE_HEIGHT = 28
IMAGE_WIDTH = 28
IMAGE_CHANNELS = 1
PIXEL_COUNT = IMAGE_HEIGHT * IMAGE_WIDTH
NUM_CLASSES = 10
MAX_PIXEL_VALUE = 255

DEFAULT_TRAIN_COUNT = 33600
DEFAULT_VAL_COUNT = 8400

LOG_FORMAT = "[%(name)s] %(message)s"


# ============================================================================
# Training configuration
# ============================================================================

class TrainConfig(BaseModel):
    """Hyperparameters for one training run"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    epochs: int = Field(15, ge=0, description="Number of passes over the training split")
    batch_size: int = Field(64, gt=0, description="Samples per optimizer step")
    learning_rate: float = Field(0.001, ge=0.0, description="Adam step size")
    beta1: float = Field(0.9, gt=0.0, lt=1.0)
    beta2: float = Field(0.999, gt=0.0, lt=1.0)
    epsilon: float = Field(1e-8, gt=0.0)
    dropout_rate: float = Field(0.3, ge=0.0, lt=1.0)
    kernel_size: int = Field(3, gt=0, description="Convolution kernel edge, odd")
    seed: int = Field(0, ge=0, description="Root seed for every random stream")
    train_count: int = Field(DEFAULT_TRAIN_COUNT, gt=0)
    val_count: int = Field(DEFAULT_VAL_COUNT, gt=0)
    sequential_split: bool = Field(False, description="Split in file order instead of a seeded shuffle")
    threads: int = Field(1, ge=1, description="Workers for intra-batch parallelism")
    eval_batch_size: int = Field(500, gt=0, description="Chunk size for inference passes")

    @field_validator("kernel_size")
    @classmethod
    def _kernel_is_odd(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {value}")
        return value

    @model_validator(mode="after")
    def _finite_rates(self) -> "TrainConfig":
        for name in ("learning_rate", "epsilon"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        return self

    @classmethod
    def validated(cls, **values) -> "TrainConfig":
        """Build a config, turning pydantic validation failures into InvalidConfig."""
        try:
            return cls(**values)
        except ValidationError as e:
            raise InvalidConfig(f"Invalid training configuration: {e}") from e


# ============================================================================
# Runtime settings (environment)
# ============================================================================

class RuntimeSettings(BaseModel):
    """Process-level defaults read from the environment (.env supported)"""
    threads: int = Field(1, ge=1)
    log_level: str = "INFO"
    data_path: Optional[str] = None
    seed: int = Field(0, ge=0)

    @classmethod
    def from_env(cls) -> "RuntimeSettings":
        try:
            return cls(
                threads=int(os.getenv("DIGIT_CNN_THREADS", "1")),
                log_level=os.getenv("DIGIT_CNN_LOG_LEVEL", "INFO").upper(),
                data_path=os.getenv("DIGIT_CNN_DATA") or None,
                seed=int(os.getenv("DIGIT_CNN_SEED", "0")),
            )
        except (ValueError, ValidationError) as e:
            raise InvalidConfig(f"Invalid environment settings: {e}") from e


# ============================================================================
# Seeded sub-streams
# ============================================================================

def substream(seed: int, label: str, *indices: int) -> np.random.Generator:
    """
    Independent generator for one labeled use of the root seed.

    Example: substream(7, "shuffle", 3) drives the shuffle of epoch 3 of a run
    seeded with 7, and never collides with substream(7, "dropout", 3).
    """
    key = (zlib.crc32(label.encode("utf-8")), *(int(i) for i in indices))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


# ============================================================================
# Logging
# ============================================================================

def configure_logging(level: str = "INFO") -> None:
    """Send `[TAG] message` lines to stdout. Safe to call more than once."""
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_digit_cnn", False):
            root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stdout)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._digit_cnn = True
    root.addHandler(handler)
    root.setLevel(getattr(logging, level.upper(), logging.INFO))


def get_logger(tag: str) -> logging.Logger:
    return logging.getLogger(tag)

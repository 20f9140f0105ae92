"""
End-to-end runs on the Kaggle digit CSV (DIGIT_CNN_DATA). Slow; skipped when
the file is not available.
"""
import pytest

import data
from config import TrainConfig
from model import build_paper_model
from training import fit

pytestmark = pytest.mark.slow


def test_smoke_run(kaggle_csv):
    ds = data.normalize(data.load_csv(kaggle_csv))
    cfg = TrainConfig(epochs=5, train_count=2000, val_count=500, seed=0)
    history = fit(build_paper_model(cfg.seed), ds, cfg)
    assert len(history) == 5
    assert history[-1].val_accuracy >= 0.92


def test_full_run(kaggle_csv):
    ds = data.normalize(data.load_csv(kaggle_csv))
    cfg = TrainConfig(seed=0)
    history = fit(build_paper_model(cfg.seed), ds, cfg)
    assert len(history) == 15
    assert history[-1].val_accuracy >= 0.987

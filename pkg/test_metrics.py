import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

import metrics
from errors import EmptyInput, InvalidLabel, LengthMismatch
from metrics import ConfusionMatrix
from training import EpochMetrics

# rows = predicted digit, columns = true digit
REPORTED_COUNTS = np.array([
    [812, 0, 0, 1, 0, 0, 3, 0, 0, 0],
    [0, 904, 0, 1, 0, 0, 1, 2, 1, 0],
    [0, 0, 840, 2, 1, 0, 0, 1, 2, 0],
    [0, 0, 0, 930, 0, 1, 0, 2, 3, 1],
    [1, 1, 0, 0, 830, 0, 0, 1, 0, 6],
    [0, 0, 0, 7, 0, 689, 3, 0, 2, 1],
    [2, 0, 0, 0, 0, 1, 781, 0, 1, 0],
    [0, 0, 4, 0, 1, 0, 0, 885, 1, 2],
    [1, 0, 0, 1, 2, 2, 1, 0, 826, 2],
    [0, 0, 0, 1, 1, 1, 0, 1, 2, 832],
])


def expand(counts):
    """Label lists that reproduce a count table."""
    predicted, truth = [], []
    for (p, t), n in np.ndenumerate(counts):
        predicted += [p] * int(n)
        truth += [t] * int(n)
    return predicted, truth


# ============================================================================
# accuracy
# ============================================================================

def test_accuracy_examples():
    assert metrics.accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert metrics.accuracy([0, 0, 0, 0], [0, 1, 0, 1]) == 0.5
    assert metrics.accuracy([7], [3]) == 0.0


def test_accuracy_errors():
    with pytest.raises(LengthMismatch):
        metrics.accuracy([1, 2], [1])
    with pytest.raises(EmptyInput):
        metrics.accuracy([], [])


# ============================================================================
# Confusion matrix
# ============================================================================

def test_reported_matrix():
    cm = metrics.confusion_matrix(*expand(REPORTED_COUNTS))
    assert np.array_equal(cm.counts, REPORTED_COUNTS)
    assert cm.total == 8400
    assert cm.trace == 8329
    assert cm.accuracy() == pytest.approx(0.991548, abs=1e-6)
    assert metrics.format_percent(cm.accuracy()) == "99.15%"
    assert cm.true_totals()[0] == 816
    assert cm.class_summary()[0] == (0, 812, 816)


def test_orientation_rows_are_predictions():
    cm = metrics.confusion_matrix([3], [5])
    assert cm.counts[3, 5] == 1
    assert cm.counts.sum() == 1
    assert cm.predicted_totals()[3] == 1
    assert cm.true_totals()[5] == 1


def test_perfect_predictions_are_diagonal():
    labels = list(range(10)) * 3
    cm = metrics.confusion_matrix(labels, labels)
    assert np.array_equal(cm.counts, np.diag(np.full(10, 3)))
    assert cm.accuracy() == 1.0


def test_confusion_errors():
    with pytest.raises(InvalidLabel):
        metrics.confusion_matrix([10], [1])
    with pytest.raises(InvalidLabel):
        metrics.confusion_matrix([1], [-1])
    with pytest.raises(LengthMismatch):
        metrics.confusion_matrix([1, 2], [1])
    with pytest.raises(EmptyInput):
        metrics.confusion_matrix([], []).accuracy()


def test_confusion_csv(tmp_path):
    cm = ConfusionMatrix(REPORTED_COUNTS)
    path = cm.to_csv(tmp_path / "cm.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "predicted\\true,0,1,2,3,4,5,6,7,8,9"
    assert lines[1] == "0,812,0,0,1,0,0,3,0,0,0"
    assert len(lines) == 11
    back = pd.read_csv(path, index_col=0)
    assert np.array_equal(back.to_numpy(), REPORTED_COUNTS)


label_pairs = st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9)), min_size=1, max_size=60)


@given(pairs=label_pairs, data=st.data())
def test_confusion_ignores_sample_order(pairs, data):
    shuffled = data.draw(st.permutations(pairs))
    a = metrics.confusion_matrix(*zip(*pairs))
    b = metrics.confusion_matrix(*zip(*shuffled))
    assert a == b


@given(pairs=label_pairs)
def test_trace_over_total_is_accuracy(pairs):
    predicted, truth = zip(*pairs)
    cm = metrics.confusion_matrix(predicted, truth)
    assert cm.total == len(pairs)
    assert cm.accuracy() == pytest.approx(metrics.accuracy(predicted, truth))
    assert np.array_equal(cm.true_totals(), np.bincount(truth, minlength=10))


# ============================================================================
# Curves
# ============================================================================

def test_history_frame_and_csv(tmp_path):
    history = [
        EpochMetrics(epoch=1, train_loss=0.25, train_accuracy=0.9, val_loss=0.125, val_accuracy=0.95),
        EpochMetrics(epoch=2, train_loss=0.1, train_accuracy=0.97, val_loss=0.0625, val_accuracy=0.98),
    ]
    frame = metrics.history_frame(history)
    assert list(frame.columns) == ["epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy"]
    assert frame["epoch"].tolist() == [1, 2]

    lines = metrics.write_history(history, tmp_path / "metrics.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "epoch,train_loss,train_accuracy,val_loss,val_accuracy"
    assert lines[1] == "1,0.25,0.900000,0.125,0.950000"
    assert lines[2] == "2,0.1,0.970000,0.0625,0.980000"


def test_empty_history_writes_header_only(tmp_path):
    lines = metrics.write_history([], tmp_path / "metrics.csv").read_text(encoding="utf-8").splitlines()
    assert lines == ["epoch,train_loss,train_accuracy,val_loss,val_accuracy"]

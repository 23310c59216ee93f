"""MetricsEngine and report tables."""

from __future__ import annotations

import pytest

from core.schemas import EpochRecord
from tools.metrics import MetricsEngine
from utils.report_export import markdown_table, text_table


def test_accuracy():
    assert MetricsEngine.accuracy([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75
    with pytest.raises(ValueError):
        MetricsEngine.accuracy([], [])
    with pytest.raises(ValueError):
        MetricsEngine.accuracy([0], [0, 1])


def test_confusion_and_balance():
    confusion = MetricsEngine.confusion([0, 1, 1, 1], [0, 0, 1, 1])
    assert confusion == {"up": {"up": 1, "down": 1}, "down": {"up": 0, "down": 2}}
    balance = MetricsEngine.label_balance([0, 1, 1, 1])
    assert balance["counts"] == {"up": 1, "down": 3}
    assert balance["percentages"] == {"up": 25.0, "down": 75.0}
    assert MetricsEngine.label_balance([])["percentages"] == {"up": 0.0, "down": 0.0}


def test_accuracy_summary_prefers_test_then_dev_then_train():
    records = [
        EpochRecord(epoch=0, dev_accuracy=0.5),
        EpochRecord(epoch=1, train_accuracy=0.6, dev_accuracy=0.7),
        EpochRecord(epoch=2, train_accuracy=0.8, dev_accuracy=0.5),
    ]
    assert MetricsEngine.accuracy_summary(records, window=2) == ("dev", pytest.approx(0.6), 0.7)
    assert MetricsEngine.accuracy_summary(records, window=50) == ("dev", pytest.approx(0.5666666, abs=1e-6), 0.7)

    with_test = records + [EpochRecord(epoch=3, test_accuracy=0.9)]
    assert MetricsEngine.accuracy_summary(with_test)[0] == "test"

    train_only = [EpochRecord(epoch=1, train_accuracy=0.4), EpochRecord(epoch=2, train_accuracy=0.6)]
    assert MetricsEngine.accuracy_summary(train_only) == ("train", pytest.approx(0.5), 0.6)
    assert MetricsEngine.accuracy_summary([EpochRecord(epoch=0)]) == ("dev", 0.0, 0.0)


def test_comparison_tables():
    rows = MetricsEngine.comparison_rows({"AtLstm": (0.61234, 0.65), "CnnLstm": (0.5, 0.55555)})
    assert rows[0] == {"name": "AtLstm", "Average Accuracy": 61.23, "Max Accuracy": 65.0}

    text = text_table(rows, "Model").splitlines()
    assert text[0].split() == ["Model", "Average", "Accuracy", "Max", "Accuracy"]
    assert text[2].split() == ["AtLstm", "61.23%", "65.00%"]
    assert text[3].split() == ["CnnLstm", "50.00%", "55.56%"]

    md = markdown_table(rows, "Model").splitlines()
    assert md[0] == "| Model | Average Accuracy | Max Accuracy |"
    assert md[2] == "| AtLstm | 61.23% | 65.00% |"

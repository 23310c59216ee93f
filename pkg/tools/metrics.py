"""MetricsEngine: deterministic accuracy bookkeeping.

All quantitative summaries (accuracy, confusion counts, label balance,
average / max accuracy over the evaluation window) are computed here so the
training loop and the CLI report the same numbers.
"""

from __future__ import annotations

from collections import Counter
from typing import Sequence

from config import ACCURACY_WINDOW
from core.schemas import EpochRecord

CLASS_NAMES = ("up", "down")


class MetricsEngine:
    """Deterministic metric computations over label / prediction indices (0 = up, 1 = down)."""

    @staticmethod
    def accuracy(predicted: Sequence[int], actual: Sequence[int]) -> float:
        """Fraction of positions where the predicted class equals the true class."""
        if len(predicted) != len(actual):
            raise ValueError(f"{len(predicted)} predictions for {len(actual)} labels")
        if not actual:
            raise ValueError("accuracy of an empty sample list is undefined")
        correct = sum(1 for p, a in zip(predicted, actual) if p == a)
        return correct / len(actual)

    @staticmethod
    def confusion(predicted: Sequence[int], actual: Sequence[int]) -> dict:
        """2x2 confusion counts keyed ``actual -> predicted``."""
        pairs = Counter(zip(actual, predicted))
        return {
            actual_name: {pred_name: pairs[(a, p)] for p, pred_name in enumerate(CLASS_NAMES)}
            for a, actual_name in enumerate(CLASS_NAMES)
        }

    @staticmethod
    def label_balance(actual: Sequence[int]) -> dict:
        """Counts and percentages of up / down labels."""
        total = len(actual)
        counts = {name: sum(1 for a in actual if a == i) for i, name in enumerate(CLASS_NAMES)}
        return {
            "total": total,
            "counts": counts,
            "percentages": {
                name: round(cnt / total * 100, 2) if total else 0.0 for name, cnt in counts.items()
            },
        }

    @staticmethod
    def accuracy_summary(
        epochs: Sequence[EpochRecord], window: int = ACCURACY_WINDOW,
    ) -> tuple[str, float, float]:
        """(source, average, max) of accuracy over the last ``window`` epochs that recorded it.

        Source preference is test, then dev, then training accuracy. Aborted
        epochs keep their accuracy entries.
        """
        for source in ("test", "dev", "train"):
            values = [
                getattr(e, f"{source}_accuracy") for e in epochs if getattr(e, f"{source}_accuracy") is not None
            ]
            if values:
                tail = values[-window:]
                return source, sum(tail) / len(tail), max(tail)
        return "dev", 0.0, 0.0

    @staticmethod
    def comparison_rows(results: dict[str, tuple[float, float]]) -> list[dict]:
        """Rows of a results table: name, Average Accuracy, Max Accuracy (percent, 2 dp)."""
        return [
            {
                "name": name,
                "Average Accuracy": round(avg * 100, 2),
                "Max Accuracy": round(mx * 100, 2),
            }
            for name, (avg, mx) in results.items()
        ]

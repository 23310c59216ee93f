"""Report rendering: comparison tables and training-curve charts."""

from __future__ import annotations

import io
import logging
from pathlib import Path
from typing import Sequence

from config import LOG_LEVEL
from core.data_store import atomic_write_bytes
from core.schemas import TrainReport

logger = logging.getLogger("atlstm.report")
logger.setLevel(getattr(logging, LOG_LEVEL.upper(), logging.INFO))

TABLE_COLUMNS = ("Average Accuracy", "Max Accuracy")


def text_table(rows: Sequence[dict], first_column: str) -> str:
    """Fixed-width plain-text table; ``rows`` carry ``name`` plus the accuracy columns."""
    headers = [first_column, *TABLE_COLUMNS]
    body = [[str(r["name"]), *(f"{r[c]:.2f}%" for c in TABLE_COLUMNS)] for r in rows]
    widths = [max(len(h), *(len(line[i]) for line in body)) if body else len(h) for i, h in enumerate(headers)]

    def _line(cells: Sequence[str]) -> str:
        return "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))

    out = [_line(headers), _line(["-" * w for w in widths])]
    out += [_line(line) for line in body]
    return "\n".join(out) + "\n"


def markdown_table(rows: Sequence[dict], first_column: str) -> str:
    lines = [
        f"| {first_column} | {' | '.join(TABLE_COLUMNS)} |",
        "|---|" + "---:|" * len(TABLE_COLUMNS),
    ]
    for r in rows:
        lines.append(f"| {r['name']} | " + " | ".join(f"{r[c]:.2f}%" for c in TABLE_COLUMNS) + " |")
    return "\n".join(lines) + "\n"


def plot_curves(report: TrainReport, output_path: str | Path) -> Path:
    """Loss and accuracy per epoch, two stacked panels, written as PNG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = [r.epoch for r in report.epochs]
    fig, (ax_loss, ax_acc) = plt.subplots(2, 1, figsize=(9, 7), sharex=True)
    try:
        trained = [(r.epoch, r.train_loss) for r in report.epochs if r.train_loss is not None]
        if trained:
            ax_loss.plot(*zip(*trained), color="#1f77b4", label="train loss")
        ax_loss.set_ylabel("cross entropy")
        ax_loss.legend(loc="upper right")
        ax_loss.set_title(f"{report.variant} (seed {report.seed})")

        for field, label, colour in (
            ("train_accuracy", "train", "#7f7f7f"),
            ("dev_accuracy", "dev", "#ff7f0e"),
            ("test_accuracy", "test", "#2ca02c"),
        ):
            points = [(r.epoch, getattr(r, field)) for r in report.epochs if getattr(r, field) is not None]
            if points:
                ax_acc.plot(*zip(*points), color=colour, label=label)
        ax_acc.axvline(report.best_epoch, color="#d62728", linestyle="--", linewidth=1, label="best dev")
        ax_acc.set_xlabel("epoch")
        ax_acc.set_ylabel("accuracy")
        ax_acc.set_ylim(0.0, 1.0)
        ax_acc.set_xlim(min(epochs), max(max(epochs), 1))
        ax_acc.legend(loc="lower right")
        fig.tight_layout()

        buffer = io.BytesIO()
        fig.savefig(buffer, format="png", dpi=120, bbox_inches="tight", metadata={"Software": None})
    finally:
        plt.close(fig)
    output_path = atomic_write_bytes(output_path, buffer.getvalue())
    logger.info("[TRAIN] curves written: %s", output_path)
    return output_path

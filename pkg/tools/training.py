"""Loss, Adadelta and the epoch loop.

One sample is differentiated per tape; leaf gradients accumulate across the
tapes of a batch and are averaged through the loss scale. Evaluation runs
without a tape and may fan out over a thread pool; results come back in
sample order so summaries are deterministic.
"""

from __future__ import annotations

import concurrent.futures
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from config import LOG_LEVEL, PROB_FLOOR
from core.errors import DataError, NumericalError, ShapeError
from core.indicators import IndicatorScaler
from core.model import AtLstmModel, Prediction
from core.schemas import EpochRecord, Hyper, TrainReport, TrainSettings, WindowSample
from core.tensor import Tape, Tensor, clip, constant, log, mul
from core.tensor import sum as tsum
from tools.metrics import MetricsEngine

logger = logging.getLogger("atlstm.training")
logger.setLevel(getattr(logging, LOG_LEVEL.upper(), logging.INFO))


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def _onehot_rows(labels, rows: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64).reshape(rows, -1)
    if y.shape[1] != 2 or not np.all((y == 0.0) | (y == 1.0)) or not np.all(y.sum(axis=1) == 1.0):
        raise ShapeError(f"labels must be one-hot pairs, got {np.asarray(labels).tolist()}")
    return y


def cross_entropy(pred: Tensor, label) -> Tensor:
    """Binary cross entropy of probability pair(s) against one-hot label(s).

    ``pred`` is a 2-vector or a (B, 2) batch; the result is the batch mean.
    Probabilities are clamped to [1e-12, 1] before the log.
    """
    rows = 1 if pred.ndim == 1 else pred.shape[0]
    if pred.shape[-1] != 2:
        raise ShapeError(f"cross_entropy expects probability pairs, got shape {pred.shape}")
    y = _onehot_rows(label, rows).reshape(pred.shape)
    ll = tsum(mul(constant(y), log(clip(pred, PROB_FLOOR, 1.0))))
    return mul(ll, -1.0 / rows)


# ---------------------------------------------------------------------------
# Optimiser
# ---------------------------------------------------------------------------


@dataclass
class AdadeltaState:
    """Running E[g²] and E[Δx²] per parameter plus the decay settings."""

    rho: float
    eps: float
    lr: float
    sq_grad: dict[str, np.ndarray] = field(default_factory=dict)
    sq_delta: dict[str, np.ndarray] = field(default_factory=dict)
    steps: int = 0

    @classmethod
    def create(cls, params: Mapping[str, Tensor], rho: float, eps: float, lr: float) -> AdadeltaState:
        return cls(
            rho=rho, eps=eps, lr=lr,
            sq_grad={n: np.zeros_like(p.data) for n, p in params.items()},
            sq_delta={n: np.zeros_like(p.data) for n, p in params.items()},
        )

    def copy(self) -> AdadeltaState:
        return AdadeltaState(
            self.rho, self.eps, self.lr,
            {n: a.copy() for n, a in self.sq_grad.items()},
            {n: a.copy() for n, a in self.sq_delta.items()},
            self.steps,
        )


def adadelta_step(state: AdadeltaState, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray]) -> None:
    """One in-place Adadelta update; nothing changes if any gradient is non-finite."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"{name}: gradient {g.shape} vs parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}")

    rho, eps = state.rho, state.eps
    for name, g in grads.items():
        p = params[name]
        if name not in state.sq_grad:
            state.sq_grad[name] = np.zeros_like(p.data)
            state.sq_delta[name] = np.zeros_like(p.data)
        eg2 = state.sq_grad[name]
        edx2 = state.sq_delta[name]
        eg2 *= rho
        eg2 += (1.0 - rho) * g * g
        delta = -(np.sqrt(edx2 + eps) / np.sqrt(eg2 + eps)) * g
        edx2 *= rho
        edx2 += (1.0 - rho) * delta * delta
        p.data += state.lr * delta
    state.steps += 1


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float | None) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients together so their joint L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm is None or not np.isfinite(norm) or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {n: g * scale for n, g in grads.items()}, norm


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def predict_all(model: AtLstmModel, samples: Sequence[WindowSample], workers: int = 1) -> list[Prediction]:
    """Predictions in sample order; parameters are read-only while this runs."""
    if workers <= 1 or len(samples) < 2:
        return [model.predict(s) for s in samples]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(model.predict, samples))


def evaluate(model: AtLstmModel, samples: Sequence[WindowSample], workers: int = 1) -> float:
    """Fraction of samples whose argmax prediction matches the label (ties count as down)."""
    if not samples:
        raise DataError("cannot evaluate on an empty sample list")
    preds = predict_all(model, samples, workers)
    return MetricsEngine.accuracy([p.predicted for p in preds], [s.label_index for s in samples])


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def prepare_indicators(model: AtLstmModel, *splits: Sequence[WindowSample]) -> list[list[WindowSample]]:
    """Fit the indicator scaler on the first split and drop samples without indicators.

    A no-op passthrough for variants that do not read indicators.
    """
    if model.indicator_scaler is None:
        return [list(s) for s in splits]
    kept = [[s for s in split if s.indicators is not None] for split in splits]
    if not kept or not kept[0]:
        raise DataError(
            f"{model.variant.value} needs price history: no training sample has technical indicators"
        )
    dropped = sum(len(a) - len(b) for a, b in zip(splits, kept))
    if dropped:
        logger.warning("[TRAIN] dropped %d samples without technical indicators", dropped)
    model.indicator_scaler = IndicatorScaler.fit([s.indicators for s in kept[0]])
    return kept


def _batch_step(
    model: AtLstmModel,
    batch: Sequence[WindowSample],
    state: AdadeltaState,
    settings: TrainSettings,
) -> tuple[float, int]:
    """Accumulate gradients over ``batch`` and apply one update; returns (loss sum, correct)."""
    params = model.params.trainable()
    model.params.zero_grad()
    scale = 1.0 / len(batch)
    loss_sum = 0.0
    correct = 0
    for sample in batch:
        with Tape() as tape:
            pred = model.forward(sample)
            loss = cross_entropy(pred.probs, sample.label)
            tape.backward(mul(loss, scale))
        value = loss.item()
        if not np.isfinite(value):
            raise NumericalError(f"non-finite loss on {sample.target_date}")
        loss_sum += value
        correct += int(pred.predicted == sample.label_index)
    grads, _ = clip_global_norm(model.params.gradients(), settings.clip_norm)
    adadelta_step(state, params, grads)
    return loss_sum, correct


def fit(
    model: AtLstmModel,
    train: Sequence[WindowSample],
    dev: Sequence[WindowSample],
    hyper: Hyper,
    seed: int,
    *,
    test: Sequence[WindowSample] = (),
    settings: TrainSettings | None = None,
    state: AdadeltaState | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainReport:
    """Train for ``hyper.epochs`` epochs and restore the best-dev parameters.

    Epoch 0 is the untrained evaluation. Dev and test accuracy are recorded
    after every epoch; average / max accuracy summarise the trailing
    ``settings.accuracy_window`` epochs of test accuracy (dev when there is no
    test set, training accuracy when there is neither).
    """
    settings = settings or TrainSettings()
    if not train:
        raise DataError("cannot fit on an empty training set")
    train, dev, test = prepare_indicators(model, train, dev, test)

    params = model.params.trainable()
    if state is None:
        state = AdadeltaState.create(params, settings.rho, settings.eps, hyper.lr)
    rng = np.random.default_rng(seed)
    workers = settings.eval_workers

    def _held_out(epoch: int, **fields) -> EpochRecord:
        record = EpochRecord(
            epoch=epoch,
            dev_accuracy=evaluate(model, dev, workers) if dev else None,
            test_accuracy=evaluate(model, test, workers) if test else None,
            **fields,
        )
        if on_epoch is not None:
            on_epoch(record)
        return record

    records = [_held_out(0)]
    best_epoch = 0
    best_dev = records[0].dev_accuracy
    best_params = model.params.snapshot()
    best_state = state.copy()
    aborted: list[int] = []

    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(len(train))
        loss_sum = 0.0
        correct = seen = 0
        failed = False
        for start in range(0, len(order), settings.batch_size):
            batch = [train[i] for i in order[start:start + settings.batch_size]]
            try:
                batch_loss, batch_correct = _batch_step(model, batch, state, settings)
            except NumericalError as exc:
                logger.warning("[TRAIN] epoch %d aborted at sample %d: %s", epoch, seen, exc)
                failed = True
                break
            loss_sum += batch_loss
            correct += batch_correct
            seen += len(batch)
        model.params.zero_grad()
        if failed:
            aborted.append(epoch)

        record = _held_out(
            epoch,
            train_loss=loss_sum / seen if seen else None,
            train_accuracy=correct / seen if seen else None,
            aborted=failed,
        )
        records.append(record)
        logger.info(
            "[TRAIN] epoch %d/%d  loss=%s  train_acc=%s  dev_acc=%s  test_acc=%s",
            epoch, hyper.epochs,
            _fmt(record.train_loss), _fmt(record.train_accuracy),
            _fmt(record.dev_accuracy), _fmt(record.test_accuracy),
        )

        if dev:
            if record.dev_accuracy > best_dev:
                best_epoch, best_dev = epoch, record.dev_accuracy
                best_params = model.params.snapshot()
                best_state = state.copy()
        elif not failed:
            best_epoch = epoch
            best_params = model.params.snapshot()
            best_state = state.copy()

    model.params.restore(best_params)
    state.sq_grad, state.sq_delta, state.steps = best_state.sq_grad, best_state.sq_delta, best_state.steps

    source, average, maximum = MetricsEngine.accuracy_summary(records, settings.accuracy_window)
    trained = [r.train_accuracy for r in records if r.train_accuracy is not None]
    report = TrainReport(
        variant=model.variant.value,
        seed=seed,
        hyper=hyper,
        settings=settings,
        parameter_count=model.num_parameters(),
        epochs=records,
        best_epoch=best_epoch,
        best_dev_accuracy=best_dev,
        accuracy_source=source,
        average_accuracy=average,
        max_accuracy=maximum,
        final_train_accuracy=trained[-1] if trained else None,
        aborted_epochs=aborted,
    )
    logger.info(
        "[TRAIN] done  best_epoch=%d  average_%s=%.4f  max_%s=%.4f",
        best_epoch, source, average, source, maximum,
    )
    return report


def _fmt(value: float | None) -> str:
    return "-" if value is None else f"{value:.4f}"

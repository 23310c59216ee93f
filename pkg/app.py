"""Command-line entry point.

Usage:
    python main.py prep --news data/input/news.jsonl --prices data/input/prices.csv
    python main.py pretrain-embeddings
    python main.py train --variant AtLstm --epochs 200
    python main.py eval --split test --dump-attention
    python main.py predict --split dev
    python main.py gradcheck
    python main.py ablate --variants AtLstm BagAtLstm WebAtLstm CnnLstm TechAtLstm
    python main.py companies --company WMT=data/input/wmt.csv --company GOOG=data/input/goog.csv

Global flags (before or after the subcommand): --config, --seed, --variant, --out.
Machine-readable results go to stdout as JSON and to files under --out.

Exit codes: 0 success, 2 configuration error, 3 data or checkpoint error,
4 numerical failure (non-finite values, failed gradient check).
"""

from __future__ import annotations

import argparse
import datetime as dt
import io
import json
import logging
import sys
from typing import Any, Callable, Sequence

import numpy as np

from config import LOG_DATE_FORMAT, LOG_FORMAT, LOG_LEVEL
from core.data_store import DatasetStore, atomic_write_bytes, atomic_write_text, dumps_json
from core.errors import (
    AtLstmError,
    CheckpointError,
    ConfigError,
    DataError,
    IndexRangeError,
    NumericalError,
    ShapeError,
)
from core.model import AtLstmModel, VariantTag, build_variant
from core.run_config import RunConfig, build_run_config
from core.schemas import TrainReport, WindowSample
from core.tensor import grad_check
from tools.checkpoint import load_checkpoint, save_checkpoint
from tools.corpus import (
    Vocab,
    build_vocab,
    build_windows,
    check_no_lookahead,
    load_news,
    load_prices,
    make_labels,
    split_by_date,
)
from tools.metrics import MetricsEngine
from tools.skipgram import train_skipgram
from tools.synthetic import gradcheck_setup
from tools.training import AdadeltaState, cross_entropy, fit, predict_all
from utils.report_export import markdown_table, plot_curves, text_table

logger = logging.getLogger("atlstm.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


# ══════════════════════════════════════════════════════════════════════
# Shared helpers
# ══════════════════════════════════════════════════════════════════════


def _emit(obj: Any) -> None:
    sys.stdout.write(dumps_json(obj))
    sys.stdout.flush()


def _open_dataset(config: RunConfig) -> tuple[DatasetStore, dict, Vocab]:
    config.require_dataset()
    store = DatasetStore(config.data_dir)
    stats = store.get_json("stats")
    vocab = Vocab.load(store.get_path("vocab"))
    if vocab.digest() != stats["vocab_hash"]:
        raise DataError("vocabulary file does not match the dataset stats", path=str(store.get_path("vocab")))
    return store, stats, vocab


def _check_dataset_fits(config: RunConfig, stats: dict, tag: VariantTag) -> None:
    if stats["window"] != config.hyper.window:
        raise ConfigError(
            f"dataset was prepped with a {stats['window']}-day window, config asks for {config.hyper.window}"
        )
    if tag is VariantTag.AB_AT_LSTM and stats["text_field"] != "abstract":
        raise ConfigError(f"{tag.value} needs a dataset prepped with text_field=abstract")


def _load_splits(store: DatasetStore) -> tuple[list[WindowSample], list[WindowSample], list[WindowSample]]:
    return store.get_samples("train"), store.get_samples("dev"), store.get_samples("test")


def _train_variant(
    config: RunConfig,
    tag: VariantTag,
    splits: tuple[Sequence[WindowSample], Sequence[WindowSample], Sequence[WindowSample]],
    vocab_size: int,
    embeddings: np.ndarray | None = None,
) -> tuple[AtLstmModel, AdadeltaState, TrainReport]:
    train, dev, test = splits
    model = build_variant(tag, config.hyper, vocab_size, seed=config.seed)
    if embeddings is not None:
        model.load_embeddings(embeddings)
    state = AdadeltaState.create(model.params.trainable(), config.train.rho, config.train.eps, config.hyper.lr)
    report = fit(model, train, dev, config.hyper, config.seed, test=test, settings=config.train, state=state)
    return model, state, report


def _load_embeddings(config: RunConfig) -> np.ndarray | None:
    path = config.embeddings_path
    if not path.is_file():
        if config.embeddings is not None:
            raise ConfigError(f"embeddings file not found: {path}")
        return None
    logger.info("[TRAIN] seeding word table from %s", path)
    return np.load(path, allow_pickle=False)


def _split_samples(config: RunConfig, store: DatasetStore, model: AtLstmModel) -> list[WindowSample]:
    samples = store.get_samples(config.split)
    if not samples:
        raise DataError(f"the {config.split} split is empty", path=str(config.data_dir))
    if model.indicator_scaler is not None:
        samples = [s for s in samples if s.indicators is not None]
        if not samples:
            raise DataError(f"no {config.split} sample carries technical indicators", path=str(config.data_dir))
    return samples


def _open_checkpoint(config: RunConfig, stats: dict):
    if not config.checkpoint_path.is_file():
        raise ConfigError(f"checkpoint not found: {config.checkpoint_path}")
    ckpt = load_checkpoint(config.checkpoint_path)
    if ckpt.vocab_hash != stats["vocab_hash"]:
        raise ConfigError("checkpoint and dataset were built from different vocabularies")
    return ckpt


# ══════════════════════════════════════════════════════════════════════
# Commands
# ══════════════════════════════════════════════════════════════════════


def cmd_prep(config: RunConfig, args: argparse.Namespace) -> int:
    """Vocabulary, windowed train/dev/test sets and a stats summary."""
    config.require_files("news_path", "prices_path")
    hyper = config.hyper

    news = load_news(config.news_path, text_field=config.text_field)
    bars = load_prices(config.prices_path, symbol=config.symbol)
    vocab = build_vocab(news, config.min_count, config.firm_names)
    news = vocab.attach(news)
    labels = make_labels(bars)
    window_stats: dict = {}
    samples = build_windows(news, labels, hyper, symbol=config.symbol, bars=bars, stats=window_stats)
    check_no_lookahead(samples)
    train, dev, test = split_by_date(samples, config.dev_start, config.test_start)

    # skip-gram sentences come from the training period only
    sentences = [
        " ".join(str(t) for t in item.tokens) for item in news if item.day < config.dev_start
    ]
    splits = {"train": train, "dev": dev, "test": test}
    stats = {
        "symbol": config.symbol,
        "text_field": config.text_field,
        "window": hyper.window,
        "max_titles_per_day": hyper.max_titles_per_day,
        "max_tokens_per_title": hyper.max_tokens_per_title,
        "dev_start": config.dev_start.isoformat(),
        "test_start": config.test_start.isoformat(),
        "news_items": len(news),
        "price_bars": len(bars),
        "labelled_days": len(labels),
        "skipped_days": window_stats.get("skipped_days", 0),
        "vocab_size": len(vocab),
        "vocab_hash": vocab.digest(),
        "samples": {name: len(split) for name, split in splits.items()},
        "headlines": {
            name: sum(len(titles) for s in split for titles in s.days) for name, split in splits.items()
        },
        "label_balance": {
            name: MetricsEngine.label_balance([s.label_index for s in split]) for name, split in splits.items()
        },
        "with_indicators": sum(1 for s in samples if s.indicators is not None),
    }

    store = DatasetStore(config.data_dir)
    store.store_text("vocab", "vocab.txt", vocab.dump(), {"size": len(vocab)})
    store.store_text("sentences", "sentences.txt", "\n".join(sentences) + "\n", {"count": len(sentences)})
    for name, split in splits.items():
        store.store_samples(name, split)
    store.store_json("stats", stats)
    logger.info(
        "[PREP] samples train=%d dev=%d test=%d (skipped %d days)",
        len(train), len(dev), len(test), stats["skipped_days"],
    )
    _emit(stats)
    return EXIT_OK


def cmd_pretrain_embeddings(config: RunConfig, args: argparse.Namespace) -> int:
    """Skip-gram vectors for the dataset vocabulary, written as embeddings.npy."""
    store, stats, vocab = _open_dataset(config)
    sentences = [
        [int(t) for t in line.split()] for line in store.get_text("sentences").splitlines() if line.strip()
    ]
    table = train_skipgram(
        sentences,
        len(vocab),
        dim=config.hyper.word_dim,
        window=config.skipgram_window,
        negatives=config.skipgram_negatives,
        epochs=config.skipgram_epochs,
        seed=config.seed,
        init_std=config.hyper.embedding_std,
    )
    buffer = io.BytesIO()
    np.save(buffer, table.weight.data, allow_pickle=False)
    path = atomic_write_bytes(config.embeddings_path, buffer.getvalue())
    _emit({"embeddings": str(path), "rows": table.rows, "dim": table.dim, "sentences": len(sentences)})
    return EXIT_OK


def cmd_train(config: RunConfig, args: argparse.Namespace) -> int:
    """Train the selected variant; write the checkpoint, the JSON report and the curves."""
    tag = config.variant_tag
    store, stats, vocab = _open_dataset(config)
    _check_dataset_fits(config, stats, tag)
    splits = _load_splits(store)
    model, state, report = _train_variant(config, tag, splits, len(vocab), _load_embeddings(config))

    save_checkpoint(model, state, config.checkpoint_path, vocab_hash=stats["vocab_hash"])
    report_path = atomic_write_text(config.out_dir / "report.json", dumps_json(report.model_dump(mode="json")))
    if config.plot:
        plot_curves(report, config.out_dir / "curves.png")
    logger.info("[TRAIN] report written: %s", report_path)
    _emit(report.model_dump(mode="json"))
    return EXIT_OK


def cmd_eval(config: RunConfig, args: argparse.Namespace) -> int:
    """Accuracy and confusion counts of a checkpoint on one split."""
    store, stats, _ = _open_dataset(config)
    ckpt = _open_checkpoint(config, stats)
    samples = _split_samples(config, store, ckpt.model)
    preds = predict_all(ckpt.model, samples, config.train.eval_workers)
    predicted = [p.predicted for p in preds]
    actual = [s.label_index for s in samples]
    result = {
        "variant": ckpt.model.variant.value,
        "split": config.split,
        "samples": len(samples),
        "accuracy": MetricsEngine.accuracy(predicted, actual),
        "confusion": MetricsEngine.confusion(predicted, actual),
        "label_balance": MetricsEngine.label_balance(actual),
    }
    if config.dump_attention:
        rows = [
            json.dumps({
                "target_date": s.target_date.isoformat(),
                "symbol": s.symbol,
                "label": "up" if s.label_index == 0 else "down",
                "p_up": p.p_up,
                "p_down": p.p_down,
                "attention": p.attention_lists(),
            })
            for s, p in zip(samples, preds)
        ]
        dump = atomic_write_text(config.out_dir / f"attention_{config.split}.jsonl", "\n".join(rows) + "\n")
        result["attention_dump"] = str(dump)
    atomic_write_text(config.out_dir / f"eval_{config.split}.json", dumps_json(result))
    logger.info("[EVAL] %s accuracy on %s: %.4f", result["variant"], config.split, result["accuracy"])
    _emit(result)
    return EXIT_OK


def cmd_predict(config: RunConfig, args: argparse.Namespace) -> int:
    """Per-sample up / down probabilities as JSON Lines."""
    store, stats, _ = _open_dataset(config)
    ckpt = _open_checkpoint(config, stats)
    samples = _split_samples(config, store, ckpt.model)
    preds = predict_all(ckpt.model, samples, config.train.eval_workers)
    rows = [
        {
            "target_date": s.target_date.isoformat(),
            "symbol": s.symbol,
            "p_up": p.p_up,
            "p_down": p.p_down,
            "predicted": "up" if p.predicted == 0 else "down",
            "label": "up" if s.label_index == 0 else "down",
        }
        for s, p in zip(samples, preds)
    ]
    body = "".join(json.dumps(r) + "\n" for r in rows)
    path = atomic_write_text(config.out_dir / f"predictions_{config.split}.jsonl", body)
    logger.info("[EVAL] %d predictions written: %s", len(rows), path)
    sys.stdout.write(body)
    return EXIT_OK


def cmd_gradcheck(config: RunConfig, args: argparse.Namespace) -> int:
    """Finite-difference check of every parameter of a miniature model."""
    model, sample = gradcheck_setup(config.variant_tag, seed=config.seed)
    params = model.params.trainable()
    corrupt = getattr(args, "corrupt_group", None)
    if corrupt and not any(name.startswith(corrupt) for name in params):
        raise ConfigError(f"--corrupt-group {corrupt!r} matches no parameter")

    def _loss():
        return cross_entropy(model.forward(sample).probs, sample.label)

    def _corrupt(name: str, grad: np.ndarray) -> np.ndarray:
        if corrupt and name.startswith(corrupt):
            return grad + 1e-2
        return grad

    report = grad_check(
        _loss, params, tol=config.gradcheck_tol,
        max_coords=config.gradcheck_max_coords, grad_hook=_corrupt,
    )
    groups: dict[str, float] = {}
    for name, err in report.per_param.items():
        group = name.split(".")[0]
        groups[group] = max(groups.get(group, 0.0), err)
    result = {"variant": model.variant.value, **report.to_dict(), "per_group": groups}
    atomic_write_text(config.out_dir / "gradcheck.json", dumps_json(result))
    _emit(result)
    if not report.passed:
        logger.error("[GRADCHECK] failed: max relative error %.3e > %.1e", report.max_rel_error, report.tol)
        return EXIT_NUMERIC
    return EXIT_OK


def _write_table(config: RunConfig, name: str, first_column: str, rows: list[dict], reports: dict) -> dict:
    result = {"rows": rows, "reports": reports}
    atomic_write_text(config.out_dir / f"{name}.json", dumps_json(result))
    atomic_write_text(config.out_dir / f"{name}.txt", text_table(rows, first_column))
    atomic_write_text(config.out_dir / f"{name}.md", markdown_table(rows, first_column))
    sys.stderr.write(text_table(rows, first_column))
    return result


def cmd_ablate(config: RunConfig, args: argparse.Namespace) -> int:
    """Train every requested variant with one seed and tabulate average / max accuracy."""
    tags = [VariantTag.parse(v) for v in config.variants]
    store, stats, vocab = _open_dataset(config)
    for tag in tags:
        _check_dataset_fits(config, stats, tag)
    splits = _load_splits(store)
    embeddings = _load_embeddings(config)

    results: dict[str, tuple[float, float]] = {}
    reports: dict[str, dict] = {}
    for tag in tags:
        logger.info("[TRAIN] ablation variant %s", tag.value)
        _, _, report = _train_variant(config, tag, splits, len(vocab), embeddings)
        results[tag.value] = (report.average_accuracy, report.max_accuracy)
        reports[tag.value] = {
            "accuracy_source": report.accuracy_source,
            "best_epoch": report.best_epoch,
            "parameter_count": report.parameter_count,
        }
    _emit(_write_table(config, "ablation", "Method", MetricsEngine.comparison_rows(results), reports))
    return EXIT_OK


def cmd_companies(config: RunConfig, args: argparse.Namespace) -> int:
    """Per-company At-LSTM runs on each symbol's own news."""
    if not config.companies:
        raise ConfigError("no companies configured; pass --company SYMBOL=prices.csv")
    config.require_files("news_path")
    for symbol, path in config.companies.items():
        if not path.is_file():
            raise ConfigError(f"price file for {symbol} not found: {path}")

    news = load_news(config.news_path, text_field=config.text_field)
    vocab = build_vocab(news, config.min_count, list(config.firm_names) + list(config.companies))
    news = vocab.attach(news)
    tag = config.variant_tag

    results: dict[str, tuple[float, float]] = {}
    reports: dict[str, dict] = {}
    for symbol, path in config.companies.items():
        bars = load_prices(path, symbol=symbol)
        samples = build_windows(news, make_labels(bars), config.hyper, symbol=symbol, bars=bars)
        check_no_lookahead(samples)
        train, dev, test = split_by_date(samples, config.dev_start, config.test_start)
        if not train:
            raise DataError(f"{symbol}: no training windows before {config.dev_start}", path=str(path))
        logger.info("[TRAIN] company %s: train=%d dev=%d test=%d", symbol, len(train), len(dev), len(test))
        _, _, report = _train_variant(config, tag, (train, dev, test), len(vocab))
        results[symbol] = (report.average_accuracy, report.max_accuracy)
        reports[symbol] = {
            "variant": tag.value,
            "accuracy_source": report.accuracy_source,
            "samples": {"train": len(train), "dev": len(dev), "test": len(test)},
        }
    _emit(_write_table(config, "companies", "Company", MetricsEngine.comparison_rows(results), reports))
    return EXIT_OK


COMMANDS: dict[str, Callable[[RunConfig, argparse.Namespace], int]] = {
    "prep": cmd_prep,
    "pretrain-embeddings": cmd_pretrain_embeddings,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
    "companies": cmd_companies,
}


# ══════════════════════════════════════════════════════════════════════
# Argument parsing
# ══════════════════════════════════════════════════════════════════════


def _company(value: str) -> tuple[str, str]:
    symbol, sep, path = value.partition("=")
    if not sep or not symbol or not path:
        raise argparse.ArgumentTypeError(f"expected SYMBOL=path, got {value!r}")
    return symbol.strip(), path.strip()


def _iso_date(value: str) -> dt.date:
    try:
        return dt.date.fromisoformat(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an ISO date: {value!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON or YAML file mirroring RunConfig fields.")
    common.add_argument("--seed", type=int, help="Seed for every random choice (unsigned 64-bit).")
    common.add_argument("--variant", help="Model variant tag, e.g. AtLstm, BagAtLstm, TechAtLstm.")
    common.add_argument("--out", dest="out_dir", help="Output directory.")
    common.add_argument("--data-dir", help="Prepped dataset directory.")
    common.add_argument("--log-level", help="debug, info, warning or error.")

    parser = argparse.ArgumentParser(
        prog="atlstm",
        description="Attention-based LSTM stock movement prediction from news headlines.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    prep = sub.add_parser("prep", parents=[common], argument_default=argparse.SUPPRESS, help="Build vocabulary and windowed splits.")
    prep.add_argument("--news", dest="news_path")
    prep.add_argument("--prices", dest="prices_path")
    prep.add_argument("--symbol")
    prep.add_argument("--text-field", choices=["headline", "abstract"])
    prep.add_argument("--min-count", type=int)
    prep.add_argument("--firm-name", dest="firm_names", action="append")
    prep.add_argument("--window", type=int)
    prep.add_argument("--dev-start", type=_iso_date)
    prep.add_argument("--test-start", type=_iso_date)

    pre = sub.add_parser("pretrain-embeddings", parents=[common], argument_default=argparse.SUPPRESS, help="Skip-gram word vectors.")
    pre.add_argument("--epochs", dest="skipgram_epochs", type=int)
    pre.add_argument("--embeddings")

    def _training_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--clip-norm", type=float)
        p.add_argument("--no-clip", action="store_true")
        p.add_argument("--window", type=int)
        p.add_argument("--news-hidden", type=int)
        p.add_argument("--day-hidden", type=int)
        p.add_argument("--day-attention-over", choices=["D", "H"])
        p.add_argument("--embeddings")

    train = sub.add_parser("train", parents=[common], argument_default=argparse.SUPPRESS, help="Train one variant.")
    _training_flags(train)
    train.add_argument("--checkpoint")
    train.add_argument("--no-plot", action="store_true")

    for name, help_text in (("eval", "Accuracy of a checkpoint."), ("predict", "Per-sample probabilities.")):
        p = sub.add_parser(name, parents=[common], argument_default=argparse.SUPPRESS, help=help_text)
        p.add_argument("--checkpoint")
        p.add_argument("--split", choices=["train", "dev", "test"])
        if name == "eval":
            p.add_argument("--dump-attention", action="store_true")

    gc = sub.add_parser("gradcheck", parents=[common], argument_default=argparse.SUPPRESS, help="Finite-difference gradient check.")
    gc.add_argument("--tol", dest="gradcheck_tol", type=float)
    gc.add_argument("--max-coords", dest="gradcheck_max_coords", type=int)
    gc.add_argument("--corrupt-group", help="Perturb this parameter group's gradient (sensitivity check).")

    ab = sub.add_parser("ablate", parents=[common], argument_default=argparse.SUPPRESS, help="Train and compare several variants.")
    _training_flags(ab)
    ab.add_argument("--variants", nargs="+")

    co = sub.add_parser("companies", parents=[common], argument_default=argparse.SUPPRESS, help="Per-company prediction sweep.")
    _training_flags(co)
    co.add_argument("--news", dest="news_path")
    co.add_argument("--company", dest="companies", type=_company, action="append")
    co.add_argument("--min-count", type=int)
    co.add_argument("--dev-start", type=_iso_date)
    co.add_argument("--test-start", type=_iso_date)
    return parser


_HYPER_FLAGS = ("epochs", "lr", "window", "news_hidden", "day_hidden", "day_attention_over")
_TRAIN_FLAGS = ("batch_size", "clip_norm")
_CLI_ONLY = ("command", "config", "log_level", "corrupt_group", "no_plot", "no_clip")


def overrides_from_args(args: argparse.Namespace) -> dict[str, Any]:
    """RunConfig field overrides for every flag actually given."""
    given = vars(args)
    overrides: dict[str, Any] = {}
    hyper = {k: given[k] for k in _HYPER_FLAGS if k in given}
    train = {k: given[k] for k in _TRAIN_FLAGS if k in given}
    if given.get("no_clip"):
        train["clip_norm"] = None
    if hyper:
        overrides["hyper"] = hyper
    if train:
        overrides["train"] = train
    if given.get("no_plot"):
        overrides["plot"] = False
    if "companies" in given:
        overrides["companies"] = dict(given["companies"])
    for key, value in given.items():
        if key in _HYPER_FLAGS or key in _TRAIN_FLAGS or key in _CLI_ONLY or key in overrides:
            continue
        overrides[key] = value
    return overrides


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    level = getattr(args, "log_level", LOG_LEVEL)
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format=LOG_FORMAT,
        datefmt=LOG_DATE_FORMAT,
    )
    logging.getLogger().setLevel(getattr(logging, str(level).upper(), logging.INFO))

    try:
        config = build_run_config(getattr(args, "config", None), overrides_from_args(args))
        return COMMANDS[args.command](config, args)
    except (ConfigError, ShapeError) as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (DataError, CheckpointError, IndexRangeError) as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    except NumericalError as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except AtLstmError as exc:
        logger.error("%s", exc)
        return EXIT_DATA

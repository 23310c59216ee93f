"""ATLS checkpoint container and the dataset store."""

from __future__ import annotations

import numpy as np
import pytest

from core.data_store import DatasetStore
from core.errors import CheckpointError, ChecksumError, DataError, UnsupportedVersionError
from core.indicators import IndicatorScaler
from tools.checkpoint import load_checkpoint, read_header, save_checkpoint
from tools.synthetic import gradcheck_setup
from tools.training import AdadeltaState, adadelta_step


def _trained_state(model):
    params = model.params.trainable()
    state = AdadeltaState.create(params, rho=0.95, eps=1e-6, lr=0.04)
    rng = np.random.default_rng(0)
    adadelta_step(state, params, {n: rng.normal(size=p.shape) for n, p in params.items()})
    return state


def test_round_trip_is_bit_exact(tmp_path):
    model, sample = gradcheck_setup()
    state = _trained_state(model)
    path = save_checkpoint(model, state, tmp_path / "model.atls", vocab_hash="abc", extra={"best_epoch": 3})

    ckpt = load_checkpoint(path)
    assert ckpt.vocab_hash == "abc"
    assert ckpt.header["extra"] == {"best_epoch": 3}
    assert ckpt.model.variant is model.variant
    assert ckpt.model.hyper == model.hyper
    original, restored = model.params.snapshot(), ckpt.model.params.snapshot()
    assert list(original) == list(restored)
    assert all(np.array_equal(original[n], restored[n]) for n in original)

    assert ckpt.state.steps == 1 and ckpt.state.lr == 0.04
    assert all(np.array_equal(state.sq_grad[n], ckpt.state.sq_grad[n]) for n in state.sq_grad)
    assert all(np.array_equal(state.sq_delta[n], ckpt.state.sq_delta[n]) for n in state.sq_delta)

    assert ckpt.model.predict(sample).p_up == model.predict(sample).p_up

    again = save_checkpoint(ckpt.model, ckpt.state, tmp_path / "again.atls", vocab_hash="abc", extra={"best_epoch": 3})
    assert again.read_bytes() == path.read_bytes()


def test_scaler_and_missing_optimizer_round_trip(tmp_path):
    model, sample = gradcheck_setup("TechAtLstm")
    model.indicator_scaler = IndicatorScaler(np.arange(7.0), np.full(7, 2.0))
    ckpt = load_checkpoint(save_checkpoint(model, None, tmp_path / "tech.atls"))
    assert ckpt.state is None
    np.testing.assert_array_equal(ckpt.model.indicator_scaler.mean, np.arange(7.0))
    np.testing.assert_array_equal(ckpt.model.indicator_scaler.std, np.full(7, 2.0))
    assert ckpt.model.predict(sample).p_up == model.predict(sample).p_up


@pytest.fixture()
def blob(tmp_path):
    model, _ = gradcheck_setup()
    return save_checkpoint(model, None, tmp_path / "m.atls").read_bytes()


def test_truncated_file_fails_the_checksum(blob):
    with pytest.raises(ChecksumError):
        read_header(blob[:-10])
    with pytest.raises(ChecksumError):
        read_header(blob[:6])


def test_flipped_payload_byte_fails_the_checksum(blob):
    damaged = bytearray(blob)
    damaged[len(blob) // 2] ^= 0xFF
    with pytest.raises(ChecksumError):
        read_header(bytes(damaged))


def test_unknown_version_is_reported_before_the_checksum(blob):
    bumped = bytearray(blob)
    bumped[4] = 2
    with pytest.raises(UnsupportedVersionError):
        read_header(bytes(bumped))


def test_bad_magic(blob):
    with pytest.raises(CheckpointError) as err:
        read_header(b"ATLX" + blob[4:])
    assert not isinstance(err.value, ChecksumError)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.atls")


def test_header_describes_every_tensor(blob):
    header, payload = read_header(blob)
    assert header["variant"] == "AtLstm"
    assert header["payload_bytes"] == len(payload)
    offsets = [t["offset"] for t in header["tensors"]]
    assert offsets == sorted(offsets) and offsets[0] == 0


# ---------------------------------------------------------------------------
# DatasetStore
# ---------------------------------------------------------------------------


def test_dataset_store_round_trip(tmp_path):
    _, sample = gradcheck_setup()
    store = DatasetStore(tmp_path)
    store.store_samples("train", [sample, sample], metadata={"split": "train"})
    store.store_json("stats", {"b": 1, "a": 2})
    store.store_text("vocab", "vocab.txt", "<pad>\n<unk>\n")

    reopened = DatasetStore(tmp_path)
    assert reopened.get_samples("train") == [sample, sample]
    assert reopened.get_metadata("train") == {"count": 2, "split": "train"}
    assert list(reopened.get_json("stats")) == ["b", "a"]
    assert reopened.get_text("vocab") == "<pad>\n<unk>\n"
    assert reopened.list_keys() == ["train", "stats", "vocab"]
    assert not list(tmp_path.glob("*.tmp"))


def test_dataset_store_errors(tmp_path):
    _, sample = gradcheck_setup()
    store = DatasetStore(tmp_path)
    with pytest.raises(DataError):
        store.get_samples("train")
    path = store.store_samples("train", [sample])
    path.write_text(path.read_text() + "{broken\n")
    with pytest.raises(DataError) as err:
        store.get_samples("train")
    assert err.value.line == 2
    with pytest.raises(DataError):
        store.get_json("train")

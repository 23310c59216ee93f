"""Variant wiring, width checks and end-to-end gradients of the miniature model."""

from __future__ import annotations

import numpy as np
import pytest

from core.errors import ConfigError, ShapeError, WidthError
from core.model import VariantTag, build_variant
from core.schemas import Hyper, Title
from core.tensor import grad_check
from tools.synthetic import GRADCHECK_HYPER, GRADCHECK_VOCAB, gradcheck_setup
from tools.training import cross_entropy


def test_variant_tag_parsing():
    assert VariantTag.parse("at-lstm") is VariantTag.AT_LSTM
    assert VariantTag.parse("TECHATLSTM") is VariantTag.TECH_AT_LSTM
    assert VariantTag.parse(VariantTag.CNN_LSTM) is VariantTag.CNN_LSTM
    with pytest.raises(ConfigError):
        VariantTag.parse("transformer")


def test_variants_own_the_expected_parameter_groups():
    def names(tag):
        return set(build_variant(tag, GRADCHECK_HYPER, GRADCHECK_VOCAB).params)

    full = names("AtLstm")
    assert {"embedding", "char_cnn.char_table", "word_lstm.fwd.w_f", "news_attention.w_a", "no_news", "head.w"} <= full

    web = names("WebAtLstm")
    assert not any(n.startswith("char_cnn.") for n in web)
    assert "word_lstm.fwd.w_f" in web

    bag = names("BagAtLstm")
    assert "bag.w" in bag
    assert not any(n.startswith(("word_lstm.", "word_attention.")) for n in bag)

    cnn = names("CnnLstm")
    assert "news_cnn.proj_w" in cnn
    assert not any(n.startswith("news_attention.") for n in cnn)

    assert names("AbAtLstm") == full


def test_tech_head_reads_seven_extra_inputs():
    plain = build_variant("AtLstm", GRADCHECK_HYPER, GRADCHECK_VOCAB)
    tech = build_variant("TechAtLstm", GRADCHECK_HYPER, GRADCHECK_VOCAB)
    assert tech.head_w.shape == (2, plain.head_w.shape[1] + 7)
    assert tech.indicator_scaler is not None and plain.indicator_scaler is None


def test_default_token_width_is_196():
    model = build_variant("AtLstm", Hyper(news_hidden=2, day_hidden=2, attention_dim=2, hops=1), 4)
    assert model.token_width == 196
    assert build_variant("WebAtLstm", Hyper(news_hidden=2, day_hidden=2, attention_dim=2, hops=1), 4).token_width == 100


def test_day_attention_over_day_vectors_needs_matching_widths():
    hyper = GRADCHECK_HYPER.model_copy(update={"day_hidden": 3, "day_attention_over": "D"})
    with pytest.raises(WidthError):
        build_variant("AtLstm", hyper, GRADCHECK_VOCAB)
    hyper = hyper.model_copy(update={"day_attention_over": "H"})
    assert build_variant("AtLstm", hyper, GRADCHECK_VOCAB).day_attention.d_in == 6


def test_same_seed_same_parameters():
    a = build_variant("AtLstm", GRADCHECK_HYPER, GRADCHECK_VOCAB, seed=3).params.snapshot()
    b = build_variant("AtLstm", GRADCHECK_HYPER, GRADCHECK_VOCAB, seed=3).params.snapshot()
    c = build_variant("AtLstm", GRADCHECK_HYPER, GRADCHECK_VOCAB, seed=4).params.snapshot()
    assert list(a) == list(b)
    assert all(np.array_equal(a[n], b[n]) for n in a)
    assert not np.array_equal(a["head.w"], c["head.w"])


def test_zero_head_predicts_even_odds_and_tie_is_down():
    model, sample = gradcheck_setup()
    model.head_w.data[...] = 0.0
    model.head_b.data[...] = 0.0
    pred = model.predict(sample)
    assert pred.p_up == 0.5 and pred.p_down == 0.5
    assert pred.predicted == 1


def test_prediction_is_a_distribution_with_attention_maps():
    model, sample = gradcheck_setup()
    pred = model.predict(sample)
    assert pred.p_up + pred.p_down == pytest.approx(1.0, abs=1e-12)
    maps = pred.attention_lists()
    assert np.asarray(maps["day"]).shape == (GRADCHECK_HYPER.hops, GRADCHECK_HYPER.window)
    assert len(maps["news"]) == GRADCHECK_HYPER.window
    assert np.asarray(maps["news"][0]).shape == (GRADCHECK_HYPER.hops, 2)
    assert np.asarray(maps["word"][0][1]).shape == (GRADCHECK_HYPER.hops, 5)


def test_days_without_news_use_the_learned_vector():
    model, sample = gradcheck_setup()
    quiet = sample.model_copy(update={"days": [[] for _ in sample.days]})
    pred = model.predict(quiet)
    assert np.isfinite(pred.p_up)
    assert pred.attention["news"] == [None] * GRADCHECK_HYPER.window
    assert pred.attention["word"] == [[] for _ in range(GRADCHECK_HYPER.window)]
    np.testing.assert_allclose(pred.attention["day"].sum(axis=1), 1.0, atol=1e-12)


def test_title_order_within_a_day_does_not_change_the_day_vector():
    model, sample = gradcheck_setup(seed=2)
    titles = sample.days[0] + sample.days[2]
    D, _, _ = model.encode_day(titles)
    D_rev, _, _ = model.encode_day(titles[::-1])
    np.testing.assert_allclose(D.data, D_rev.data, atol=1e-12)


def test_malformed_inputs_are_rejected():
    model, sample = gradcheck_setup()
    with pytest.raises(ShapeError):
        model.predict(sample.model_copy(update={"days": sample.days[:-1], "day_dates": sample.day_dates[:-1]}))
    with pytest.raises(WidthError):
        model.load_embeddings(np.zeros((GRADCHECK_VOCAB, 7)))

    tech, tech_sample = gradcheck_setup("TechAtLstm")
    with pytest.raises(ShapeError):
        tech.predict(tech_sample.model_copy(update={"indicators": None}))


def test_load_embeddings_copies_the_table():
    model, sample = gradcheck_setup()
    table = np.random.default_rng(0).normal(size=(GRADCHECK_VOCAB, GRADCHECK_HYPER.word_dim))
    model.load_embeddings(table)
    np.testing.assert_array_equal(model.embedding.weight.data, table)
    table[...] = 0.0
    assert np.any(model.embedding.weight.data != 0.0)


def test_single_title_single_token_window():
    model, sample = gradcheck_setup()
    one = Title(ids=[3], chars=[[5]])
    days = [[] for _ in sample.days]
    days[-1] = [one]
    pred = model.predict(sample.model_copy(update={"days": days}))
    assert pred.attention["word"][-1][0].shape == (GRADCHECK_HYPER.hops, 1)
    np.testing.assert_array_equal(pred.attention["news"][-1], np.ones((GRADCHECK_HYPER.hops, 1)))


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------


def _loss_fn(model, sample):
    return lambda: cross_entropy(model.forward(sample).probs, sample.label)


def test_full_model_gradients_match_finite_differences():
    model, sample = gradcheck_setup()
    report = grad_check(_loss_fn(model, sample), model.params.trainable(), tol=1e-4, max_coords=6)
    assert report.passed, report.to_dict()
    assert set(report.per_param) == set(model.params.trainable())
    assert not sample.days[1]
    assert np.any(model.no_news.grad != 0.0)


@pytest.mark.parametrize("variant", ["BagAtLstm", "WebAtLstm", "CnnLstm", "TechAtLstm"])
def test_variant_gradients_match_finite_differences(variant):
    model, sample = gradcheck_setup(variant, seed=1)
    report = grad_check(_loss_fn(model, sample), model.params.trainable(), tol=1e-4, max_coords=3)
    assert report.passed, report.to_dict()


def test_corrupted_parameter_group_is_reported():
    model, sample = gradcheck_setup()
    params = {n: p for n, p in model.params.trainable().items() if n.startswith("head.")}

    def corrupt(name, grad):
        return grad + 1e-2 if name == "head.w" else grad

    report = grad_check(_loss_fn(model, sample), params, tol=1e-4, grad_hook=corrupt)
    assert not report.passed
    assert {f.param for f in report.failures} == {"head.w"}

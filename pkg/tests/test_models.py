import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codemix_lid.corpus import generate_synthetic_corpus, make_batches
from codemix_lid.labels import LanguageLabel
from codemix_lid.models import (
    ConfigError,
    ModelConfig,
    ModelFileError,
    build_model,
    class_probabilities,
    compute_loss,
    decide,
    expected_parameter_count,
    forward,
    load_model,
    predict,
    predict_batch,
    save_model,
)
from helpers import PAIRS, first_batch, model_gradient_error, pad_extend, randomize, tiny_encoders, tiny_setup

EN, HI = LanguageLabel.EN, LanguageLabel.HI


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic_corpus(40, seed=2)


@pytest.fixture(scope="module")
def encoders(corpus):
    return tiny_encoders(corpus)


# --- config -------------------------------------------------------------------


@pytest.mark.parametrize("arch,rep", [("charcnn_lstm", "word"), ("charcnn_lstm", "subword"), ("lstm", "char+word"),
                                      ("gru", "word"), ("cnn", "bytes")])
def test_invalid_pairings(arch, rep):
    with pytest.raises(ConfigError):
        ModelConfig(architecture=arch, representation=rep)


def test_config_defaults_and_names():
    cfg = ModelConfig(architecture="CNN-LSTM", representation="word")
    assert cfg.architecture == "cnn_lstm"
    assert (cfg.embedding_dim, cfg.cnn_kernel, cfg.cnn_filters, cfg.lstm_hidden, cfg.dense_hidden) == (300, 4, 64, 300, 100)
    assert cfg.multi_kernels == (2, 3, 4) and cfg.lstm_dropout == 0.4
    assert cfg.output_classes == 2 and ModelConfig(representation="subword").output_classes == 3
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        ModelConfig(representation="subword", output_classes=2)


# --- construction ----------------------------------------------------------------


def test_lstm_word_head(encoders):
    model = build_model(ModelConfig(architecture="lstm", representation="word"), encoders)
    head = model.layers["dense2"]
    assert head.weights.shape == (100, 1) and head.activation == "sigmoid"
    assert model.layers["dense1"].weights.shape == (600, 100)


def test_charcnn_bilstm_input_is_492(encoders):
    model = build_model(ModelConfig(architecture="charcnn_lstm", representation="char+word"), encoders)
    assert model.layers["bilstm"].forward.w_in.shape == (492, 4 * 300)
    assert [c.weights.shape for c in model.layers["char_convs"]] == [(2, 50, 64), (3, 50, 64), (4, 50, 64)]


def test_subword_head_is_softmax(encoders):
    model = build_model(ModelConfig(architecture="cnn", representation="subword"), encoders)
    assert model.layers["dense2"].weights.shape == (100, 3)
    assert model.layers["dense2"].activation == "softmax"


def test_same_seed_same_parameters(encoders):
    a = build_model(ModelConfig(architecture="cnn_lstm", representation="word", seed=5), encoders)
    b = build_model(ModelConfig(architecture="cnn_lstm", representation="word", seed=5), encoders)
    c = build_model(ModelConfig(architecture="cnn_lstm", representation="word", seed=6), encoders)
    for x, y in zip(a.snapshot(), b.snapshot()):
        np.testing.assert_array_equal(x, y)
    assert any(not np.array_equal(x, y) for x, y in zip(a.snapshot(), c.snapshot()))


def test_padding_row_is_zero(encoders):
    model = build_model(ModelConfig(architecture="lstm", representation="word"), encoders)
    assert not model.layers["embed"].weights.data[0].any()


def test_parameter_counts_at_default_sizes(encoders):
    V, S, C = len(encoders.word), len(encoders.subword), len(encoders.char)
    hand = {
        ("cnn", "word"): V * 300 + (4 * 300 * 64 + 64) + (64 * 100 + 100) + (100 + 1),
        ("multi_cnn", "subword"): S * 300 + (9 * 300 * 64 + 3 * 64) + (192 * 100 + 100) + (100 * 3 + 3),
        ("lstm", "word"): V * 300 + 2 * (300 * 1200 + 300 * 1200 + 1200) + (600 * 100 + 100) + 101,
        ("cnn_lstm", "word"): V * 300 + 76864 + 2 * (64 * 1200 + 300 * 1200 + 1200) + 60100 + 101,
        ("charcnn_lstm", "char+word"): V * 300 + C * 50 + (9 * 50 * 64 + 192)
        + 2 * (492 * 1200 + 300 * 1200 + 1200) + 60100 + 101,
    }
    for (arch, rep), n in hand.items():
        cfg = ModelConfig(architecture=arch, representation=rep)
        model = build_model(cfg, encoders)
        rows = S if rep == "subword" else V
        assert model.n_parameters() == n == expected_parameter_count(cfg, rows, C), arch
    conv = build_model(ModelConfig(architecture="cnn"), encoders).layers["conv"]
    assert conv.weights.size + conv.bias.size == 4 * 300 * 64 + 64


@pytest.mark.parametrize("arch,rep", PAIRS)
def test_small_parameter_counts(arch, rep):
    model, _, enc = tiny_setup(arch, rep)
    rows = len(enc.subword) if rep == "subword" else len(enc.word)
    assert model.n_parameters() == expected_parameter_count(model.config, rows, len(enc.char))


# --- forward -------------------------------------------------------------------------


@pytest.mark.parametrize("arch,rep", PAIRS)
def test_output_shape(arch, rep):
    model, sents, _ = tiny_setup(arch, rep)
    batch = first_batch(model, sents, 5)
    out = forward(model, batch).data
    assert out.shape == batch.ids.shape + (model.config.head_size,)
    if model.config.head_size == 3:
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
    else:
        assert ((out > 0) & (out < 1)).all()


@pytest.mark.parametrize("arch", ["cnn", "multi_cnn", "lstm", "cnn_lstm"])
def test_zero_head_gives_half(arch):
    model, sents, _ = tiny_setup(arch, "word")
    model.layers["dense2"].weights.data[...] = 0.0
    model.layers["dense2"].bias.data[...] = 0.0
    probs = class_probabilities(model, first_batch(model, sents, 6))
    assert (probs == 0.5).all()


def test_forward_rejects_wrong_batch_kind():
    model, sents, enc = tiny_setup("cnn", "word")
    batch = make_batches(sents[:2], enc, "subword")[0]
    with pytest.raises(ConfigError):
        forward(model, batch)


@pytest.mark.parametrize("arch,rep", PAIRS)
def test_batch_permutation_equivariance(arch, rep):
    model, sents, _ = tiny_setup(arch, rep)
    randomize(model, np.random.default_rng(0))
    chosen = sents[:5]
    perm = [3, 0, 4, 2, 1]
    a = make_batches(chosen, model.encoders, rep, batch_size=5)[0]
    b = make_batches([chosen[i] for i in perm], model.encoders, rep, batch_size=5)[0]
    np.testing.assert_allclose(forward(model, a).data[perm], forward(model, b).data, rtol=0, atol=1e-12)


@pytest.mark.parametrize("arch,rep,mask_dummy",
                         [(a, r, False) for a, r in PAIRS] + [(a, r, True) for a, r in PAIRS if r == "subword"])
def test_loss_invariant_to_pad_extension(arch, rep, mask_dummy):
    model, sents, _ = tiny_setup(arch, rep, mask_dummy_loss=mask_dummy)
    randomize(model, np.random.default_rng(1))
    batch = first_batch(model, sents, 4)
    base = compute_loss(model, batch).item()
    for extra in (1, 3):
        assert compute_loss(model, pad_extend(batch, extra)).item() == pytest.approx(base, rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("arch,rep", PAIRS)
@pytest.mark.parametrize("seed", [0, 1])
def test_end_to_end_gradients(arch, rep, seed):
    model, sents, _ = tiny_setup(arch, rep, seed=seed)
    rng = np.random.default_rng(seed)
    randomize(model, rng)
    batch = first_batch(model, sents[seed * 3:], 3)
    dropout_seed = 7 if "lstm" in arch else None
    assert model_gradient_error(model, batch, rng, probes=6, dropout_seed=dropout_seed) < 1e-4


def test_dropout_only_in_training():
    model, sents, _ = tiny_setup("lstm", "word")
    batch = first_batch(model, sents)
    a = forward(model, batch, training=False).data
    np.testing.assert_array_equal(a, forward(model, batch, training=False).data)
    t1 = forward(model, batch, training=True, rng=np.random.default_rng(1)).data
    t2 = forward(model, batch, training=True, rng=np.random.default_rng(1)).data
    np.testing.assert_array_equal(t1, t2)
    assert not np.array_equal(a, t1)


# --- prediction ---------------------------------------------------------------------


@pytest.mark.parametrize("arch,rep", PAIRS)
def test_predict_lengths(arch, rep):
    model, sents, _ = tiny_setup(arch, rep)
    (only,) = predict(model, ["ab"])
    assert only[0] == "ab" and only[1] in (EN, HI)
    rng = random.Random(0)
    for _ in range(20):
        tokens = ["".join(rng.choice("abcdefghijklmnopqrstuvwxyz") for _ in range(rng.randint(1, 14)))
                  for _ in range(rng.randint(1, 9))]
        out = predict(model, tokens)
        assert [t for t, _ in out] == tokens
        assert all(lab in (EN, HI) for _, lab in out)


def test_predict_empty():
    model, _, _ = tiny_setup("cnn", "word")
    with pytest.raises(ValueError):
        predict(model, [])


def test_subword_prediction_reads_first_pieces_only():
    model, sents, _ = tiny_setup("lstm", "subword")
    batch = first_batch(model, sents, 6)
    probs = class_probabilities(model, batch)
    decided = decide(model, probs)
    for b, labels in enumerate(predict_batch(model, batch)):
        assert len(labels) == len(batch.sentences[b])
        assert [int(v) for v in labels] == decided[b][batch.first_mask[b]].tolist()


def test_dummy_argmax_falls_back_to_larger_language():
    model, _, _ = tiny_setup("cnn", "subword")
    probs = np.array([[[0.3, 0.2, 0.5], [0.1, 0.4, 0.5], [0.6, 0.3, 0.1]]])
    assert decide(model, probs).tolist() == [[EN, HI, EN]]
    assert decide(model, probs, dummy_fallback=False).tolist() == [[2, 2, EN]]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.floats(0.05, 0.95))
def test_binary_threshold_consistency(ps, threshold):
    model, _, _ = tiny_setup("cnn", "word")
    model.config.sigmoid_threshold = threshold
    p = np.array(ps)
    probs = np.stack([p, 1 - p], axis=-1)
    labels = decide(model, probs)
    assert ((labels == EN) == (p >= threshold)).all()
    order = np.argsort(p)
    # monotone in P(En): once En, always En for larger probabilities
    seq = (labels[order] == EN).astype(int)
    assert (np.diff(seq) >= 0).all()


# --- persistence --------------------------------------------------------------------


@pytest.mark.parametrize("arch,rep", PAIRS)
def test_save_load_bit_exact(tmp_path, arch, rep):
    model, sents, _ = tiny_setup(arch, rep, n=60)
    randomize(model, np.random.default_rng(2))
    path = tmp_path / "m.bin"
    save_model(model, path)
    back = load_model(path)
    assert back.config == model.config
    for seed in range(10):
        batch = make_batches(sents, model.encoders, rep, batch_size=6, seed=seed)[0]
        np.testing.assert_array_equal(forward(model, batch).data, forward(back, batch).data)
    assert [l for s in sents[:8] for _, l in predict(model, s.tokens)] == \
           [l for s in sents[:8] for _, l in predict(back, s.tokens)]


@pytest.fixture
def saved(tmp_path):
    model, _, _ = tiny_setup("cnn", "word")
    path = tmp_path / "m.bin"
    save_model(model, path)
    return path


def test_corrupted_byte_fails_checksum(saved):
    blob = bytearray(saved.read_bytes())
    blob[-5] ^= 0x01
    saved.write_bytes(bytes(blob))
    with pytest.raises(ModelFileError, match="checksum"):
        load_model(saved)


def test_truncated_file(saved):
    saved.write_bytes(saved.read_bytes()[:-16])
    with pytest.raises(ModelFileError, match="truncated"):
        load_model(saved)


def test_version_mismatch(saved):
    saved.write_bytes(saved.read_bytes().replace(b"CMLID-MODEL 1", b"CMLID-MODEL 9", 1))
    with pytest.raises(ModelFileError, match="version"):
        load_model(saved)


def test_not_a_model_file(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"hello world\n")
    with pytest.raises(ModelFileError):
        load_model(p)


def test_loading_cnn_as_lstm(saved):
    with pytest.raises(ConfigError, match="architecture"):
        load_model(saved, expect={"architecture": "lstm"})
    assert load_model(saved, expect={"architecture": "CNN", "representation": "word"}).config.architecture == "cnn"


def test_save_leaves_no_temp_files(saved):
    assert [p.name for p in saved.parent.iterdir()] == ["m.bin"]

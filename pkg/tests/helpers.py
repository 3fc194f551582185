"""Shared fixtures: tiny model configs, pad extension and a whole-model gradient check."""

import dataclasses

import numpy as np

from codemix_lid import tensor as tc
from codemix_lid.corpus import Encoders, generate_synthetic_corpus, make_batches
from codemix_lid.labels import LanguageLabel
from codemix_lid.models import ModelConfig, build_model, compute_loss
from codemix_lid.tokenizers import build_char_vocab, build_word_vocab, train_unigram, word_frequencies

PAIRS = [
    ("cnn", "word"), ("cnn", "subword"),
    ("multi_cnn", "word"), ("multi_cnn", "subword"),
    ("lstm", "word"), ("lstm", "subword"),
    ("cnn_lstm", "word"), ("cnn_lstm", "subword"),
    ("charcnn_lstm", "char+word"),
]
ARCH_REPR = {"cnn": "subword", "multi_cnn": "word", "lstm": "subword", "cnn_lstm": "word", "charcnn_lstm": "char+word"}

SMALL = dict(embedding_dim=6, cnn_kernel=3, cnn_filters=4, multi_kernels=(2, 3), lstm_hidden=5,
             dense_hidden=4, char_embedding_dim=3)


def small_config(arch, rep, seed=0, **over):
    return ModelConfig(architecture=arch, representation=rep, seed=seed, **{**SMALL, **over})


def tiny_encoders(sentences):
    return Encoders(word=build_word_vocab(sentences, 1), char=build_char_vocab(sentences),
                    subword=train_unigram(word_frequencies(sentences), target_vocab=80))


def tiny_setup(arch, rep, n=30, seed=0, **over):
    sents = generate_synthetic_corpus(n, seed=seed)
    enc = tiny_encoders(sents)
    return build_model(small_config(arch, rep, seed=seed, **over), enc), sents, enc


def pad_extend(batch, extra):
    """Append ``extra`` padding steps (and, for char+word, padding characters)."""
    def grow(a, fill, axis=1, n=extra):
        widths = [(0, 0)] * a.ndim
        widths[axis] = (0, n)
        return np.pad(a, widths, constant_values=fill)

    char_ids = char_mask = None
    if batch.char_ids is not None:
        char_ids = grow(grow(batch.char_ids, 0), 0, axis=2, n=2)
        char_mask = grow(grow(batch.char_mask, False), False, axis=2, n=2)
    return dataclasses.replace(
        batch,
        ids=grow(batch.ids, 0),
        labels=grow(batch.labels, int(LanguageLabel.PAD)),
        loss_mask=grow(batch.loss_mask, False),
        first_mask=grow(batch.first_mask, False),
        char_ids=char_ids,
        char_mask=char_mask,
    )


def randomize(model, rng, scale=0.3):
    """Move every parameter off zero so relu and max kinks are not sat on."""
    for p in model.parameters():
        p.data[...] = rng.normal(scale=scale, size=p.shape)


def model_gradient_error(model, batch, rng, probes=4, dropout_seed=None):
    """Worst relative error between backprop and central differences over sampled entries."""
    def loss_value():
        drng = None if dropout_seed is None else np.random.default_rng(dropout_seed)
        return compute_loss(model, batch, training=dropout_seed is not None, rng=drng).item()

    model.zero_grad()
    drng = None if dropout_seed is None else np.random.default_rng(dropout_seed)
    with tc.Tape() as tape:
        loss = compute_loss(model, batch, training=dropout_seed is not None, rng=drng)
    tc.backward(loss, tape)
    worst = 0.0
    for p in model.parameters():
        idx = rng.choice(p.size, size=min(probes, p.size), replace=False)
        numeric = tc.finite_difference_grad(lambda _: loss_value(), p, 1e-5, indices=idx)
        analytic = np.zeros(p.size)
        analytic[idx] = p.grad.reshape(-1)[idx]
        worst = max(worst, tc.relative_error(analytic, numeric.reshape(-1)))
    return worst


def first_batch(model, sents, size=4):
    return make_batches(sents[:size], model.encoders, model.config.representation, batch_size=size)[0]

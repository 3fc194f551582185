"""End-to-end pipeline shared by the CLI, scripts and acceptance tests."""

from __future__ import annotations

from typing import Sequence

from .corpus import Encoders, generate_synthetic_corpus, split_train_val
from .harness import Metrics, TrainConfig, evaluate, train
from .labels import LabeledSentence
from .models import ModelConfig, ModelInstance, build_model
from .tokenizers import SubwordModel, build_char_vocab, build_word_vocab, train_unigram, word_frequencies

PAIRS = [
    ("cnn", "word"),
    ("cnn", "subword"),
    ("multi_cnn", "word"),
    ("multi_cnn", "subword"),
    ("lstm", "word"),
    ("lstm", "subword"),
    ("cnn_lstm", "word"),
    ("cnn_lstm", "subword"),
    ("charcnn_lstm", "char+word"),
]

DEFAULT_MIN_FREQUENCY = 2
DEFAULT_SUBWORD_VOCAB = 12000


def build_encoders(train_set: Sequence[LabeledSentence], representation: str,
                   subword: SubwordModel | None = None, min_frequency: int = DEFAULT_MIN_FREQUENCY,
                   subword_vocab: int = DEFAULT_SUBWORD_VOCAB) -> Encoders:
    if representation == "subword":
        if subword is None:
            subword = train_unigram(word_frequencies(train_set), subword_vocab)
        return Encoders(subword=subword)
    enc = Encoders(word=build_word_vocab(train_set, min_frequency))
    if representation == "char+word":
        enc.char = build_char_vocab(train_set)
    return enc


def fit(train_set, val_set, model_cfg: ModelConfig, train_cfg: TrainConfig,
        subword: SubwordModel | None = None, min_frequency: int = DEFAULT_MIN_FREQUENCY,
        on_epoch=None):
    encoders = build_encoders(train_set, model_cfg.representation, subword, min_frequency)
    model = build_model(model_cfg, encoders)
    return train(model, train_set, val_set, train_cfg, on_epoch)


def synthetic_split(n_sentences: int = 2000, seed: int = 0, test_fraction: float = 0.2,
                    val_fraction: float = 0.1):
    """(train, val, test) carved out of one synthetic corpus."""
    corpus = generate_synthetic_corpus(n_sentences, seed)
    rest, test = split_train_val(corpus, test_fraction, seed)
    train_set, val_set = split_train_val(rest, val_fraction, seed + 1)
    return train_set, val_set, test


def synthetic_run(arch: str, representation: str, n_sentences: int = 2000, seed: int = 0,
                  epochs_max: int = 30, patience: int = 3, **model_overrides) -> tuple[Metrics, list]:
    train_set, val_set, test = synthetic_split(n_sentences, seed)
    model_cfg = ModelConfig(arch, representation, seed=seed, **model_overrides)
    train_cfg = TrainConfig(epochs_max=epochs_max, patience=min(patience, epochs_max - 1), seed=seed)
    model, reports = fit(train_set, val_set, model_cfg, train_cfg)
    return evaluate(model, test), reports


def trained_synthetic_model(arch: str, representation: str, n_sentences: int = 2000, seed: int = 0,
                            epochs_max: int = 30, **model_overrides) -> tuple[ModelInstance, list, list]:
    train_set, val_set, test = synthetic_split(n_sentences, seed)
    model_cfg = ModelConfig(arch, representation, seed=seed, **model_overrides)
    model, reports = fit(train_set, val_set, model_cfg, TrainConfig(epochs_max=epochs_max, seed=seed))
    return model, reports, test


LSTM_FAMILY = {"word": "lstm", "char+word": "charcnn_lstm", "subword": "lstm"}


def lstm_family(train_path, test_path, seed: int = 0, val_fraction: float = 0.10, on_epoch=None) -> dict:
    """Default-configuration LSTM runs per representation on an external split.

    Returns ``{representation: Metrics}`` on the test file.
    """
    from .corpus import parse_corpus_file

    train_all = parse_corpus_file(train_path)
    test = parse_corpus_file(test_path)
    train_set, val_set = split_train_val(train_all, val_fraction, seed)
    out = {}
    for rep, arch in LSTM_FAMILY.items():
        model, _ = fit(train_set, val_set, ModelConfig(arch, rep, seed=seed), TrainConfig(seed=seed),
                       on_epoch=on_epoch)
        out[rep] = evaluate(model, test)
    return out

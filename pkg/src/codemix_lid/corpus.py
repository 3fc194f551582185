"""Corpus ingestion, splitting, batching and a synthetic two-language generator.

Corpus files are token-per-line, ``token<TAB>label``, with a blank line
between sentences.
"""

from __future__ import annotations

import math
import os
import random
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .labels import LabeledSentence, LabelError, LanguageLabel, normalize_label
from .tokenizers import CharVocab, SubwordModel, WordVocab, _atomic_write_text, align_subword_labels


KINDS = ("word", "char+word", "subword")


class CorpusFormatError(ValueError):
    pass


class EncoderMismatchError(ValueError):
    pass


def parse_corpus_text(text: str, source: str = "<string>", policy: str = "error",
                      fallback: LanguageLabel | None = None) -> list[LabeledSentence]:
    sentences: list[LabeledSentence] = []
    tokens: list[str] = []
    labels: list[LanguageLabel] = []

    def flush():
        if tokens:
            sentences.append(LabeledSentence(tuple(tokens), tuple(labels)))
            tokens.clear()
            labels.clear()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            flush()
            continue
        fields = line.split("\t")
        if len(fields) != 2 or not fields[0] or any(ch.isspace() for ch in fields[0]):
            raise CorpusFormatError(f"{source}:{lineno}: expected 'token<TAB>label', got {line!r}")
        try:
            label = normalize_label(fields[1], policy, fallback)
        except LabelError as exc:
            raise CorpusFormatError(f"{source}:{lineno}: {exc}") from None
        if label is None:
            continue
        tokens.append(fields[0])
        labels.append(label)
    flush()
    return sentences


def parse_corpus_file(path, policy: str = "error", fallback: LanguageLabel | None = None) -> list[LabeledSentence]:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusFormatError(f"cannot read corpus {path}: {exc}") from None
    sentences = parse_corpus_text(text, os.fspath(path), policy, fallback)
    if not sentences:
        raise CorpusFormatError(f"{path}: no sentences found")
    return sentences


def format_corpus(sentences: Sequence[LabeledSentence]) -> str:
    blocks = []
    for s in sentences:
        blocks.append("".join(f"{tok}\t{lab.tag}\n" for tok, lab in zip(s.tokens, s.labels)))
    return "\n".join(blocks)


def write_corpus_file(sentences: Sequence[LabeledSentence], path) -> None:
    _atomic_write_text(path, format_corpus(sentences))


def split_train_val(sentences: Sequence[LabeledSentence], fraction: float = 0.10, seed: int = 0):
    n = len(sentences)
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"validation fraction must be in (0, 1), got {fraction}")
    if n < 2:
        raise ValueError("need at least two sentences to split")
    n_val = int(math.floor(fraction * n + 0.5))
    if n_val == 0 or n_val == n:
        raise ValueError(f"fraction {fraction} of {n} sentences leaves an empty side")
    order = np.random.default_rng(seed).permutation(n)
    val = [sentences[i] for i in order[:n_val]]
    train = [sentences[i] for i in order[n_val:]]
    return train, val


# ---------------------------------------------------------------------------
# batching


@dataclass
class Encoders:
    word: WordVocab | None = None
    char: CharVocab | None = None
    subword: SubwordModel | None = None

    def check(self, kind: str) -> None:
        if kind not in KINDS:
            raise EncoderMismatchError(f"unknown representation {kind!r}")
        if kind == "word" and self.word is None:
            raise EncoderMismatchError("word representation needs a word vocabulary")
        if kind == "char+word" and (self.word is None or self.char is None):
            raise EncoderMismatchError("char+word representation needs word and character vocabularies")
        if kind == "subword" and self.subword is None:
            raise EncoderMismatchError("subword representation needs a sub-word model")


@dataclass
class Batch:
    kind: str
    ids: np.ndarray  # (B, T)
    labels: np.ndarray  # (B, T), LanguageLabel values, PAD beyond length
    loss_mask: np.ndarray  # (B, T) bool, False exactly at padding
    first_mask: np.ndarray  # (B, T) bool, positions scored at word level
    lengths: np.ndarray  # (B,)
    sentences: list[LabeledSentence]
    char_ids: np.ndarray | None = None  # (B, T, W)
    char_mask: np.ndarray | None = None  # (B, T, W)

    @property
    def size(self) -> int:
        return self.ids.shape[0]

    @property
    def time(self) -> int:
        return self.ids.shape[1]


def _encode(sent: LabeledSentence, enc: Encoders, kind: str):
    if kind == "subword":
        segs = [enc.subword.segment(tok) for tok in sent.tokens]
        pairs, first = align_subword_labels(sent.tokens, sent.labels, segs)
        ids = [p for p, _ in pairs]
        labels = [int(l) for _, l in pairs]
        return ids, labels, first, None
    ids = [enc.word.encode(tok) for tok in sent.tokens]
    chars = [[enc.char.encode(ch) for ch in tok] for tok in sent.tokens] if kind == "char+word" else None
    return ids, [int(l) for l in sent.labels], [True] * len(ids), chars


def _collate(sents: list[LabeledSentence], enc: Encoders, kind: str) -> Batch:
    encoded = [_encode(s, enc, kind) for s in sents]
    B = len(sents)
    T = max(len(e[0]) for e in encoded)
    ids = np.zeros((B, T), dtype=np.int64)
    labels = np.full((B, T), int(LanguageLabel.PAD), dtype=np.int64)
    loss_mask = np.zeros((B, T), dtype=bool)
    first_mask = np.zeros((B, T), dtype=bool)
    lengths = np.zeros(B, dtype=np.int64)
    char_ids = char_mask = None
    if kind == "char+word":
        W = max(len(w) for e in encoded for w in e[3])
        char_ids = np.zeros((B, T, W), dtype=np.int64)
        char_mask = np.zeros((B, T, W), dtype=bool)
    for b, (i, l, f, chars) in enumerate(encoded):
        n = len(i)
        ids[b, :n] = i
        labels[b, :n] = l
        loss_mask[b, :n] = True
        first_mask[b, :n] = f
        lengths[b] = n
        if chars is not None:
            for t, word in enumerate(chars):
                char_ids[b, t, : len(word)] = word
                char_mask[b, t, : len(word)] = True
    return Batch(kind, ids, labels, loss_mask, first_mask, lengths, list(sents), char_ids, char_mask)


def make_batches(sentences: Sequence[LabeledSentence], encoders: Encoders, kind: str, batch_size: int = 32,
                 seed=None) -> list[Batch]:
    """Pad to the per-batch maximum. ``seed=None`` keeps input order."""
    if not sentences:
        raise ValueError("no sentences to batch")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    encoders.check(kind)
    order = np.arange(len(sentences))
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(sentences))
    return [
        _collate([sentences[i] for i in order[k:k + batch_size]], encoders, kind)
        for k in range(0, len(order), batch_size)
    ]


# ---------------------------------------------------------------------------
# synthetic corpus

_ALPHABET_A = "abcdefghijklm"
_ALPHABET_B = "hijklmnopqrstuvwxyz"
LEXICON_SIZE = 150
ZIPF_EXPONENT = 0.8
ELONGATION_RATE = 0.05


def _bigram_table(rng: random.Random, alphabet: str) -> dict[str, list[float]]:
    table = {"^": [rng.random() ** 3 + 1e-3 for _ in alphabet]}
    for ch in alphabet:
        table[ch] = [rng.random() ** 3 + 1e-3 for _ in alphabet]
    return table


def _make_word(rng: random.Random, alphabet: str, table) -> str:
    n = rng.randint(2, 10)
    prev = "^"
    out = []
    for _ in range(n):
        prev = rng.choices(alphabet, weights=table[prev])[0]
        out.append(prev)
    return "".join(out)


def _elongate(rng: random.Random, word: str) -> str:
    k = rng.randrange(len(word))
    return word[: k + 1] + word[k] * rng.randint(2, 4) + word[k + 1:]


def generate_synthetic_corpus(n_sentences: int, seed: int = 0) -> list[LabeledSentence]:
    """Two artificial languages with overlapping alphabets and distinct bigram statistics.

    Language A (labelled En) draws letters from a-m, language B (labelled Hi)
    from h-z. Each has a fixed Zipfian lexicon; sentences of 3-15 tokens are
    built from 1-3 alternating language runs (at least two when the sentence
    has 6 or more tokens) and ~5% of tokens get a repeated-letter elongation.
    """
    if n_sentences < 1:
        raise ValueError("n_sentences must be at least 1")
    rng = random.Random(seed)
    langs = []
    seen: set[str] = set()
    for alphabet in (_ALPHABET_A, _ALPHABET_B):
        table = _bigram_table(rng, alphabet)
        lexicon: list[str] = []
        while len(lexicon) < LEXICON_SIZE:
            w = _make_word(rng, alphabet, table)
            if w not in seen:
                seen.add(w)
                lexicon.append(w)
        weights = [1.0 / (r + 1) ** ZIPF_EXPONENT for r in range(LEXICON_SIZE)]
        langs.append((lexicon, weights))
    labels = (LanguageLabel.EN, LanguageLabel.HI)

    out = []
    for _ in range(n_sentences):
        length = rng.randint(3, 15)
        runs = rng.choice((2, 3)) if length >= 6 else rng.choice((1, 2))
        cuts = sorted(rng.sample(range(1, length), runs - 1))
        bounds = [0] + cuts + [length]
        lang = rng.randrange(2)
        tokens, tags = [], []
        for r in range(runs):
            lexicon, weights = langs[lang]
            for _ in range(bounds[r + 1] - bounds[r]):
                w = rng.choices(lexicon, weights=weights)[0]
                if rng.random() < ELONGATION_RATE:
                    w = _elongate(rng, w)
                tokens.append(w)
                tags.append(labels[lang])
            lang = 1 - lang
        out.append(LabeledSentence(tuple(tokens), tuple(tags)))
    return out

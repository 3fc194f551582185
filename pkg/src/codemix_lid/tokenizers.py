"""Word and character vocabularies, and a unigram sub-word model.

The sub-word model is trained with hard-EM (Viterbi counts) and pruned by
exact per-piece likelihood loss. Segmentation is strictly per word; there
are no pieces spanning word boundaries.
"""

from __future__ import annotations

import math
import os
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .labels import LabeledSentence, LanguageLabel

PAD_ID = 0
UNK_ID = 1
N_RESERVED = 2
UNK_PENALTY = 10.0
NEG_INF = float("-inf")


class VocabSizeError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


def _atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# word / character vocabularies


@dataclass
class _CountVocab:
    counts: dict[str, int]
    ids: dict[str, int] = field(init=False, repr=False)

    kind = "vocab"

    def __post_init__(self):
        order = sorted(self.counts, key=lambda s: (-self.counts[s], s))
        self.counts = {s: self.counts[s] for s in order}
        self.ids = {s: i + N_RESERVED for i, s in enumerate(order)}

    def __len__(self) -> int:
        return len(self.ids) + N_RESERVED

    def __contains__(self, item: str) -> bool:
        return item in self.ids

    def encode(self, item: str) -> int:
        return self.ids.get(item, UNK_ID)

    def header(self) -> str:
        return f"{self.kind}-v1 {len(self)}"

    def to_text(self) -> str:
        lines = [self.header()]
        lines += [f"{s}\t{c}" for s, c in self.counts.items()]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        _atomic_write_text(path, self.to_text())

    @classmethod
    def _parse(cls, text: str) -> tuple[list[str], dict[str, int]]:
        lines = text.split("\n")
        head = lines[0].split()
        if not head or head[0] != f"{cls.kind}-v1":
            raise ModelFormatError(f"expected a {cls.kind}-v1 header, got {lines[0]!r}")
        counts = {}
        for lineno, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ModelFormatError(f"line {lineno}: expected 'item<TAB>count'")
            counts[parts[0]] = int(parts[1])
        return head, counts


@dataclass
class WordVocab(_CountVocab):
    min_frequency: int = 1

    kind = "word-vocab"

    def header(self) -> str:
        return f"{self.kind}-v1 {len(self)} {self.min_frequency}"

    @classmethod
    def from_text(cls, text: str) -> "WordVocab":
        head, counts = cls._parse(text)
        min_freq = int(head[2]) if len(head) > 2 else 1
        return cls(counts, min_freq)

    @classmethod
    def load(cls, path) -> "WordVocab":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


@dataclass
class CharVocab(_CountVocab):
    kind = "char-vocab"

    @classmethod
    def from_text(cls, text: str) -> "CharVocab":
        return cls(cls._parse(text)[1])

    @classmethod
    def load(cls, path) -> "CharVocab":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def build_word_vocab(corpus: Sequence[LabeledSentence], min_frequency: int = 1) -> WordVocab:
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = Counter(tok for sent in corpus for tok in sent.tokens)
    kept = {w: c for w, c in counts.items() if c >= min_frequency}
    return WordVocab(kept, min_frequency)


def build_char_vocab(corpus: Sequence[LabeledSentence]) -> CharVocab:
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = Counter(ch for sent in corpus for tok in sent.tokens for ch in tok)
    return CharVocab(dict(counts))


# ---------------------------------------------------------------------------
# unigram sub-word model


@dataclass(frozen=True)
class Segmentation:
    pieces: tuple[str, ...]
    ids: tuple[int, ...]
    score: float

    def __len__(self) -> int:
        return len(self.pieces)


def _viterbi(word: str, logp: Mapping[str, float], max_len: int,
             unk_logp: float | None = None, exclude: str | None = None):
    """Best segmentation of ``word`` as (score, pieces), or (-inf, None).

    Runs over suffixes so that, among equal (score, piece count), the
    candidate with the longest first piece is kept; recursion extends that
    to a lexicographic longest-first tie-break. Scores are ``math.fsum`` of
    piece log-probabilities, so equal multisets of pieces compare equal.
    """
    n = len(word)
    best: list = [None] * (n + 1)
    best[n] = (0.0, (), ())
    for i in range(n - 1, -1, -1):
        chosen = None
        for j in range(min(n, i + max_len), i, -1):
            rest = best[j]
            if rest is None:
                continue
            piece = word[i:j]
            lp = logp.get(piece)
            if piece == exclude:
                lp = None
            if lp is None:
                if j == i + 1 and unk_logp is not None and piece not in logp:
                    lp = unk_logp
                else:
                    continue
            if lp == NEG_INF:
                continue
            lps = (lp,) + rest[2]
            score = math.fsum(lps)
            count = len(lps)
            if chosen is None or score > chosen[0] or (score == chosen[0] and count < len(chosen[2])):
                chosen = (score, (piece,) + rest[1], lps)
        best[i] = chosen
    if best[0] is None:
        return NEG_INF, None
    return best[0][0], best[0][1]


@dataclass
class SubwordModel:
    """Unigram piece distribution. ``pieces`` maps piece -> natural log-probability,
    in id order (ids start at 2)."""

    pieces: dict[str, float]
    vocab_size: int
    history: list[list[float]] = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        if not self.pieces:
            raise ValueError("a sub-word model needs at least one piece")
        self.ids = {p: i + N_RESERVED for i, p in enumerate(self.pieces)}
        self.max_len = max(len(p) for p in self.pieces)
        self.unk_logp = min(self.pieces.values()) - UNK_PENALTY
        self._cache: dict[str, Segmentation] = {}

    def __len__(self) -> int:
        return len(self.pieces) + N_RESERVED

    def segment(self, word: str) -> Segmentation:
        seg = self._cache.get(word)
        if seg is None:
            seg = segment_viterbi(word, self)
            self._cache[word] = seg
        return seg

    def piece_id(self, piece: str) -> int:
        return self.ids.get(piece, UNK_ID)

    def to_text(self) -> str:
        lines = [f"unigram-v1 {self.vocab_size}"]
        lines += [f"{p}\t{lp!r}" for p, lp in self.pieces.items()]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        _atomic_write_text(path, self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "SubwordModel":
        lines = text.split("\n")
        head = lines[0].split()
        if len(head) != 2 or head[0] != "unigram-v1":
            raise ModelFormatError(f"expected 'unigram-v1 <vocab_size>' header, got {lines[0]!r}")
        pieces = {}
        for lineno, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ModelFormatError(f"line {lineno}: expected 'piece<TAB>log_prob'")
            pieces[parts[0]] = float(parts[1])
        return cls(pieces, int(head[1]))

    @classmethod
    def load(cls, path) -> "SubwordModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def segment_viterbi(word: str, model: SubwordModel) -> Segmentation:
    """Maximum log-probability lossless split of ``word``.

    Characters missing from the model become unknown pieces scored at the
    lowest piece log-probability minus 10.
    """
    if not word:
        raise ValueError("cannot segment an empty word")
    score, pieces = _viterbi(word, model.pieces, max(model.max_len, 1), unk_logp=model.unk_logp)
    ids = tuple(model.piece_id(p) for p in pieces)
    return Segmentation(tuple(pieces), ids, score)


def _as_freqs(corpus) -> dict[str, int]:
    if isinstance(corpus, Mapping):
        freqs = dict(corpus)
    else:
        freqs = Counter()
        for item in corpus:
            if isinstance(item, str):
                freqs[item] += 1
            else:
                word, f = item
                freqs[word] += f
        freqs = dict(freqs)
    freqs = {w: f for w, f in freqs.items() if w and f > 0}
    if not freqs:
        raise ValueError("cannot train a sub-word model on an empty corpus")
    return freqs


def corpus_log_likelihood(logp: Mapping[str, float], freqs: Mapping[str, int], max_len: int | None = None) -> float:
    """Sum over words of frequency times the best segmentation score."""
    max_len = max_len or max(len(p) for p in logp)
    return math.fsum(f * _viterbi(w, logp, max_len)[0] for w, f in freqs.items())


def _normalize(counts: Mapping[str, float]) -> dict[str, float]:
    total = math.fsum(counts.values())
    return {p: (math.log(c / total) if c > 0 else NEG_INF) for p, c in counts.items()}


def _e_step(logp: Mapping[str, float], freqs: Mapping[str, int], max_len: int):
    segs = {}
    parts = []
    for w, f in freqs.items():
        score, pieces = _viterbi(w, logp, max_len)
        segs[w] = pieces
        parts.append(f * score)
    return segs, math.fsum(parts)


def _hard_counts(segs, freqs, pieces) -> dict[str, float]:
    counts = dict.fromkeys(pieces, 0.0)
    for w, seg in segs.items():
        for p in seg:
            counts[p] += freqs[w]
    return counts


def piece_utilities(logp: Mapping[str, float], freqs: Mapping[str, int], segs=None,
                    max_len: int | None = None) -> dict[str, float]:
    """Corpus log-likelihood lost if each multi-character piece were removed.

    Probabilities are not renormalized after removal. Only words whose best
    segmentation uses a piece can change when it is removed.
    """
    max_len = max_len or max(len(p) for p in logp)
    if segs is None:
        segs = _e_step(logp, freqs, max_len)[0]
    users: dict[str, list[str]] = {}
    for w, seg in segs.items():
        if seg is None:
            continue
        for p in set(seg):
            users.setdefault(p, []).append(w)
    util = {}
    for p in logp:
        if len(p) == 1:
            continue
        loss = 0.0
        for w in users.get(p, ()):
            base = math.fsum(logp[q] for q in segs[w])
            alt = _viterbi(w, logp, max_len, exclude=p)[0]
            loss += freqs[w] * (base - alt)
        util[p] = loss
    return util


def train_unigram(corpus, target_vocab: int = 12000, seed_multiplier: int = 4, max_piece_len: int = 8,
                  min_seed_freq: int = 2, shrink: float = 0.25, max_em_rounds: int = 8,
                  tol: float = 1e-9) -> SubwordModel:
    """Train a unigram sub-word model from words (or (word, freq) pairs, or a mapping).

    ``target_vocab`` counts the two reserved ids. The returned model's
    ``history`` holds the corpus log-likelihood after every EM round, one
    list per pruning stage.
    """
    freqs = _as_freqs(corpus)
    char_freq = Counter()
    sub_freq = Counter()
    for w, f in freqs.items():
        n = len(w)
        for i in range(n):
            char_freq[w[i]] += f
            for j in range(i + 2, min(n, i + max_piece_len) + 1):
                sub_freq[w[i:j]] += f
    alphabet = len(char_freq)
    if target_vocab < alphabet + N_RESERVED:
        raise VocabSizeError(
            f"vocab size {target_vocab} is below the minimum {alphabet + N_RESERVED} "
            f"({alphabet} characters plus {N_RESERVED} reserved ids)"
        )
    seeds = sorted((s for s, c in sub_freq.items() if c >= min_seed_freq), key=lambda s: (-sub_freq[s], s))
    seeds = seeds[: seed_multiplier * target_vocab]
    counts: dict[str, float] = {ch: float(c) for ch, c in sorted(char_freq.items())}
    counts.update((s, float(sub_freq[s])) for s in seeds)
    limit = target_vocab - N_RESERVED
    history: list[list[float]] = []

    while True:
        max_len = max(len(p) for p in counts)
        logp = _normalize({p: c + 1.0 for p, c in counts.items()})
        segs, ll = _e_step(logp, freqs, max_len)
        trace = [ll]
        for _ in range(max_em_rounds):
            logp = _normalize(_hard_counts(segs, freqs, logp))
            segs, ll_new = _e_step(logp, freqs, max_len)
            trace.append(ll_new)
            done = ll_new - ll <= tol * max(1.0, abs(ll))
            ll = ll_new
            if done:
                break
        history.append(trace)
        counts = _hard_counts(segs, freqs, logp)
        if len(counts) <= limit:
            break
        util = piece_utilities(logp, freqs, segs, max_len)
        n_drop = min(math.ceil(shrink * len(counts)), len(counts) - limit)
        for p in sorted(util, key=lambda q: (util[q], q))[:n_drop]:
            del counts[p]

    final = {p: c for p, c in counts.items() if c > 0 or len(p) == 1}
    final = {p: (c if c > 0 else 0.5) for p, c in final.items()}
    logp = _normalize(final)
    ordered = dict(sorted(logp.items(), key=lambda kv: (-kv[1], kv[0])))
    return SubwordModel(ordered, target_vocab, history=history)


# ---------------------------------------------------------------------------
# label alignment


def align_subword_labels(words: Sequence[str], labels: Sequence[LanguageLabel],
                         segmentations: Sequence[Segmentation]):
    """Flatten a sentence to pieces; the first piece of each word keeps its label.

    Returns ``(pairs, first_mask)`` where ``pairs`` is a list of
    ``(piece_id, label)`` and later pieces carry ``LanguageLabel.DUMMY``.
    """
    if not (len(words) == len(labels) == len(segmentations)):
        raise ValueError(
            f"length mismatch: {len(words)} words, {len(labels)} labels, {len(segmentations)} segmentations"
        )
    pairs: list[tuple[int, LanguageLabel]] = []
    first: list[bool] = []
    for label, seg in zip(labels, segmentations):
        if len(seg) == 0:
            raise ValueError("empty segmentation")
        for k, pid in enumerate(seg.ids):
            pairs.append((pid, LanguageLabel(label) if k == 0 else LanguageLabel.DUMMY))
            first.append(k == 0)
    return pairs, first


def detokenize(pieces: Sequence[str], labels: Sequence[LanguageLabel], first_mask: Sequence[bool]):
    """Inverse of alignment: join pieces into words, keep first-piece labels."""
    words: list[str] = []
    out_labels: list[LanguageLabel] = []
    for piece, label, first in zip(pieces, labels, first_mask):
        if first:
            words.append(piece)
            out_labels.append(label)
        else:
            words[-1] += piece
    return words, out_labels


def word_frequencies(sentences: Iterable[LabeledSentence]) -> dict[str, int]:
    return dict(Counter(tok for s in sentences for tok in s.tokens))

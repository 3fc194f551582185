"""The five token-classification architectures, prediction, and model files."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tc
from .corpus import Batch, Encoders, make_batches
from .labels import LabeledSentence, LanguageLabel
from .layers import (
    BiLstmParams,
    Conv1dParams,
    DenseParams,
    EmbeddingTable,
    bce_loss,
    bilstm_forward,
    cce_loss,
    conv1d_forward,
    dense_forward,
    embedding_forward,
    max_pool_over_time,
)
from .tensor import Tensor
from .tokenizers import CharVocab, SubwordModel, WordVocab

ARCHITECTURES = ("cnn", "multi_cnn", "lstm", "cnn_lstm", "charcnn_lstm")
REPRESENTATIONS = ("word", "subword", "char+word")
FORMAT_MAGIC = b"CMLID-MODEL"
FORMAT_VERSION = 1
_MASK_NEG = -1e30


class ConfigError(ValueError):
    pass


class ModelFileError(ValueError):
    pass


def canonical_arch(name: str) -> str:
    return name.strip().lower().replace("-", "_").replace("+", "_")


@dataclass
class ModelConfig:
    architecture: str = "lstm"
    representation: str = "word"
    embedding_dim: int = 300
    cnn_kernel: int = 4
    cnn_filters: int = 64
    multi_kernels: tuple[int, ...] = (2, 3, 4)
    lstm_hidden: int = 300
    lstm_dropout: float = 0.4
    dense_hidden: int = 100
    char_embedding_dim: int = 50
    output_classes: int | None = None
    mask_dummy_loss: bool = False
    sigmoid_threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.architecture = canonical_arch(self.architecture)
        self.multi_kernels = tuple(self.multi_kernels)
        if self.output_classes is None:
            self.output_classes = 3 if self.representation == "subword" else 2
        self.validate()

    def validate(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}; choose from {ARCHITECTURES}")
        if self.representation not in REPRESENTATIONS:
            raise ConfigError(f"unknown representation {self.representation!r}; choose from {REPRESENTATIONS}")
        if self.architecture == "charcnn_lstm" and self.representation != "char+word":
            raise ConfigError("charcnn_lstm requires the char+word representation")
        if self.representation == "char+word" and self.architecture != "charcnn_lstm":
            raise ConfigError("the char+word representation is only used by charcnn_lstm")
        expected = 3 if self.representation == "subword" else 2
        if self.output_classes != expected:
            raise ConfigError(f"{self.representation} models have {expected} output classes, got {self.output_classes}")

    @property
    def head_size(self) -> int:
        return 1 if self.output_classes == 2 else self.output_classes

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["multi_kernels"] = list(self.multi_kernels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ModelInstance:
    config: ModelConfig
    layers: dict
    encoders: Encoders
    _order: list[str] = field(default_factory=list, repr=False)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for key in self._order:
            layer = self.layers[key]
            items = layer if isinstance(layer, list) else [layer]
            for item in items:
                out.extend((p.name, p) for p in item.parameters())
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def snapshot(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def restore(self, arrays) -> None:
        for p, a in zip(self.parameters(), arrays):
            p.data[...] = a


def _vocab_rows(config: ModelConfig, encoders: Encoders) -> int:
    if config.representation == "subword":
        return len(encoders.subword)
    return len(encoders.word)


def _encoder_kind(config: ModelConfig) -> str:
    return config.representation


def build_model(config: ModelConfig, encoders: Encoders) -> ModelInstance:
    config.validate()
    encoders.check(config.representation)
    rng = np.random.default_rng(config.seed)
    E = config.embedding_dim
    layers: dict = {"embed": EmbeddingTable.init(_vocab_rows(config, encoders), E, rng, "embed")}
    arch = config.architecture
    if arch == "charcnn_lstm":
        layers["char_embed"] = EmbeddingTable.init(len(encoders.char), config.char_embedding_dim, rng, "char_embed")
        layers["char_convs"] = [
            Conv1dParams.init(k, config.char_embedding_dim, config.cnn_filters, rng, f"char_conv{k}")
            for k in config.multi_kernels
        ]
        feat = E + config.cnn_filters * len(config.multi_kernels)
    elif arch in ("cnn", "cnn_lstm"):
        layers["conv"] = Conv1dParams.init(config.cnn_kernel, E, config.cnn_filters, rng, "conv")
        feat = config.cnn_filters
    elif arch == "multi_cnn":
        layers["convs"] = [Conv1dParams.init(k, E, config.cnn_filters, rng, f"conv{k}") for k in config.multi_kernels]
        feat = config.cnn_filters * len(config.multi_kernels)
    else:
        feat = E
    if arch in ("lstm", "cnn_lstm", "charcnn_lstm"):
        layers["bilstm"] = BiLstmParams.init(feat, config.lstm_hidden, rng, config.lstm_dropout, "bilstm")
        feat = 2 * config.lstm_hidden
    layers["dense1"] = DenseParams.init(feat, config.dense_hidden, "relu", rng, "dense1")
    head_act = "sigmoid" if config.head_size == 1 else "softmax"
    layers["dense2"] = DenseParams.init(config.dense_hidden, config.head_size, head_act, rng, "dense2")
    return ModelInstance(config, layers, encoders, list(layers))


def expected_parameter_count(config: ModelConfig, vocab_rows: int, char_rows: int = 0) -> int:
    """Closed-form parameter count for ``config``."""
    E, F, H, D = config.embedding_dim, config.cnn_filters, config.lstm_hidden, config.dense_hidden
    conv = lambda k, d: k * d * F + F  # noqa: E731
    lstm = lambda d: 2 * (d * 4 * H + H * 4 * H + 4 * H)  # noqa: E731
    n = vocab_rows * E
    arch = config.architecture
    if arch == "cnn":
        n += conv(config.cnn_kernel, E)
        feat = F
    elif arch == "multi_cnn":
        n += sum(conv(k, E) for k in config.multi_kernels)
        feat = F * len(config.multi_kernels)
    elif arch == "lstm":
        n += lstm(E)
        feat = 2 * H
    elif arch == "cnn_lstm":
        n += conv(config.cnn_kernel, E) + lstm(F)
        feat = 2 * H
    else:
        C = config.char_embedding_dim
        n += char_rows * C + sum(conv(k, C) for k in config.multi_kernels)
        n += lstm(E + F * len(config.multi_kernels))
        feat = 2 * H
    n += feat * D + D + D * config.head_size + config.head_size
    return n


# ---------------------------------------------------------------------------
# forward / loss / prediction


def _char_word_features(model: ModelInstance, batch: Batch) -> Tensor:
    B, T, W = batch.char_ids.shape
    cm = batch.char_mask
    x = embedding_forward(batch.char_ids, model.layers["char_embed"])
    x = tc.mul(x, cm[..., None].astype(np.float64))
    x = tc.reshape(x, (B * T, W, x.shape[-1]))
    real_word = cm.any(axis=-1, keepdims=True)
    # pad characters inside real words must never win the max
    bias = np.where(cm & real_word, 0.0, np.where(real_word, _MASK_NEG, 0.0)).reshape(B * T, W, 1)
    pooled = [
        max_pool_over_time(tc.relu(conv1d_forward(x, conv)), bias) for conv in model.layers["char_convs"]
    ]
    feats = tc.reshape(tc.concat(pooled, axis=-1), (B, T, -1))
    return feats


def forward(model: ModelInstance, batch: Batch, training: bool = False,
            rng: np.random.Generator | None = None) -> Tensor:
    """Per-position head outputs, (B, T, 1) sigmoid P(En) or (B, T, 3) softmax."""
    cfg = model.config
    if batch.kind != cfg.representation:
        raise ConfigError(f"batch representation {batch.kind!r} does not match model {cfg.representation!r}")
    mask = batch.loss_mask.astype(np.float64)
    x = embedding_forward(batch.ids, model.layers["embed"])
    x = tc.mul(x, mask[..., None])
    arch = cfg.architecture
    if arch == "charcnn_lstm":
        x = tc.concat([x, _char_word_features(model, batch)], axis=-1)
    elif arch in ("cnn", "cnn_lstm"):
        x = tc.relu(conv1d_forward(x, model.layers["conv"]))
    elif arch == "multi_cnn":
        x = tc.concat([tc.relu(conv1d_forward(x, conv)) for conv in model.layers["convs"]], axis=-1)
    if "bilstm" in model.layers:
        x = bilstm_forward(x, model.layers["bilstm"], training=training, mask=mask, rng=rng)
    x = dense_forward(x, model.layers["dense1"])
    return dense_forward(x, model.layers["dense2"])


def loss_targets(model: ModelInstance, batch: Batch):
    mask = batch.loss_mask.copy()
    if model.config.head_size == 1:
        return (batch.labels == LanguageLabel.EN).astype(np.float64), mask
    if model.config.mask_dummy_loss:
        mask &= batch.labels != LanguageLabel.DUMMY
    return np.where(mask, batch.labels, 0), mask


def compute_loss(model: ModelInstance, batch: Batch, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
    out = forward(model, batch, training, rng)
    targets, mask = loss_targets(model, batch)
    if model.config.head_size == 1:
        return bce_loss(out, targets, mask)
    return cce_loss(out, targets, mask)


def class_probabilities(model: ModelInstance, batch: Batch) -> np.ndarray:
    """(B, T, K) with columns P(En), P(Hi)[, P(Dummy)]."""
    out = forward(model, batch, training=False).data
    if model.config.head_size == 1:
        p = out[..., 0]
        return np.stack([p, 1.0 - p], axis=-1)
    return out


def decide(model: ModelInstance, probs: np.ndarray, dummy_fallback: bool = True) -> np.ndarray:
    """Label id per position from class probabilities."""
    if model.config.head_size == 1:
        return np.where(probs[..., 0] >= model.config.sigmoid_threshold, LanguageLabel.EN, LanguageLabel.HI)
    arg = probs.argmax(axis=-1)
    if dummy_fallback:
        lang = np.where(probs[..., 0] >= probs[..., 1], LanguageLabel.EN, LanguageLabel.HI)
        arg = np.where(arg == LanguageLabel.DUMMY, lang, arg)
    return arg


def predict_batch(model: ModelInstance, batch: Batch, dummy_fallback: bool = True) -> list[list[LanguageLabel]]:
    """Word-level labels per sentence, read at first-subword (or every word) position."""
    decided = decide(model, class_probabilities(model, batch), dummy_fallback)
    out = []
    for b in range(batch.size):
        row = decided[b][batch.first_mask[b]]
        out.append([LanguageLabel(int(v)) for v in row])
    return out


def predict(model: ModelInstance, tokens) -> list[tuple[str, LanguageLabel]]:
    tokens = list(tokens)
    if not tokens:
        raise ValueError("cannot label an empty sentence")
    placeholder = LabeledSentence(tuple(tokens), (LanguageLabel.EN,) * len(tokens))
    batch = make_batches([placeholder], model.encoders, model.config.representation, batch_size=1)[0]
    return list(zip(tokens, predict_batch(model, batch)[0]))


# ---------------------------------------------------------------------------
# persistence


def _encoder_texts(enc: Encoders) -> dict:
    return {
        "word": enc.word.to_text() if enc.word is not None else None,
        "char": enc.char.to_text() if enc.char is not None else None,
        "subword": enc.subword.to_text() if enc.subword is not None else None,
    }


def _encoders_from_texts(d: dict) -> Encoders:
    return Encoders(
        word=WordVocab.from_text(d["word"]) if d.get("word") else None,
        char=CharVocab.from_text(d["char"]) if d.get("char") else None,
        subword=SubwordModel.from_text(d["subword"]) if d.get("subword") else None,
    )


def save_model(model: ModelInstance, path) -> None:
    named = model.named_parameters()
    header = json.dumps(
        {
            "config": model.config.to_dict(),
            "params": [[name, list(p.shape)] for name, p in named],
            "encoders": _encoder_texts(model.encoders),
        },
        sort_keys=True,
    ).encode("utf-8")
    payload = b"".join(p.data.astype("<f8").tobytes() for _, p in named)
    digest = hashlib.sha256(header + payload).hexdigest()
    prefix = FORMAT_MAGIC + b" %d\n%d %d %s\n" % (FORMAT_VERSION, len(header), len(payload), digest.encode())
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(prefix + header + payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_model(path, expect: dict | None = None) -> ModelInstance:
    """Read a model file. ``expect`` maps config fields to required values."""
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        line1, line2, rest = blob.split(b"\n", 2)
        magic, version = line1.split(b" ")
        if magic != FORMAT_MAGIC:
            raise ModelFileError(f"{path}: not a model file")
        if int(version) != FORMAT_VERSION:
            raise ModelFileError(f"{path}: format version {int(version)} is not supported (need {FORMAT_VERSION})")
        hlen, plen, digest = line2.split(b" ")
        hlen, plen = int(hlen), int(plen)
    except ModelFileError:
        raise
    except ValueError:
        raise ModelFileError(f"{path}: malformed or truncated header") from None
    if len(rest) != hlen + plen:
        raise ModelFileError(f"{path}: truncated file ({len(rest)} of {hlen + plen} bytes)")
    if hashlib.sha256(rest).hexdigest().encode() != digest:
        raise ModelFileError(f"{path}: checksum mismatch, file is corrupted")
    header = json.loads(rest[:hlen].decode("utf-8"))
    payload = rest[hlen:]
    config = ModelConfig.from_dict(header["config"])
    for key, want in (expect or {}).items():
        got = getattr(config, key)
        if key == "architecture":
            want = canonical_arch(want)
        if got != want:
            raise ConfigError(f"{path}: model has {key}={got!r}, expected {want!r}")
    model = build_model(config, _encoders_from_texts(header["encoders"]))
    named = model.named_parameters()
    if [[n, list(p.shape)] for n, p in named] != header["params"]:
        raise ModelFileError(f"{path}: parameter layout does not match its config")
    offset = 0
    for _, p in named:
        nbytes = p.size * 8
        p.data[...] = np.frombuffer(payload[offset:offset + nbytes], dtype="<f8").reshape(p.shape)
        offset += nbytes
    return model

"""Training loop with validation-based model selection, and word-level metrics."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as tc
from .corpus import make_batches
from .labels import LabeledSentence, LanguageLabel
from .models import ModelInstance, compute_loss, predict_batch

log = logging.getLogger(__name__)

CLASSES = (LanguageLabel.EN, LanguageLabel.HI)


class NumericError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs_max: int = 30
    batch_size: int = 32
    patience: int = 3
    seed: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    eval_batch_size: int = 128

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0 <= self.patience < self.epochs_max:
            raise ValueError(f"patience {self.patience} must be in [0, epochs_max={self.epochs_max})")


@dataclass
class EpochReport:
    epoch: int
    loss: float
    val_accuracy: float
    wall_time: float
    seed: int
    batch_losses: list[float] = field(default_factory=list, repr=False)

    def to_record(self) -> dict:
        d = asdict(self)
        d["first_batch_loss"] = self.batch_losses[0] if self.batch_losses else None
        del d["batch_losses"]
        return d


class EarlyStopping:
    """Stop once ``patience + 1`` consecutive epochs fail to beat the best score."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, score: float) -> tuple[bool, bool]:
        """Returns (improved, stop)."""
        if score > self.best:
            self.best, self.best_epoch, self.wait = score, epoch, 0
            return True, False
        self.wait += 1
        return False, self.wait > self.patience


def train(model: ModelInstance, train_set: Sequence[LabeledSentence], val_set: Sequence[LabeledSentence],
          cfg: TrainConfig, on_epoch=None) -> tuple[ModelInstance, list[EpochReport]]:
    """Adam training; the returned model carries the best-validation-accuracy parameters."""
    if not train_set or not val_set:
        raise ValueError("training and validation sets must be nonempty")
    kind = model.config.representation
    params = model.parameters()
    state = tc.AdamState.for_params(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon)
    val_batches = make_batches(val_set, model.encoders, kind, cfg.eval_batch_size)
    stopper = EarlyStopping(cfg.patience)
    best = model.snapshot()
    reports: list[EpochReport] = []
    for epoch in range(1, cfg.epochs_max + 1):
        t0 = time.perf_counter()
        batches = make_batches(train_set, model.encoders, kind, cfg.batch_size, seed=(cfg.seed, epoch))
        drop_rng = np.random.default_rng((cfg.seed, epoch, 1))
        losses = []
        for b_idx, batch in enumerate(batches):
            model.zero_grad()
            with tc.Tape() as tape:
                loss = compute_loss(model, batch, training=True, rng=drop_rng)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(
                    f"non-finite loss {value} at epoch {epoch}, batch {b_idx} (lr={cfg.lr})"
                )
            tc.backward(loss, tape)
            tc.adam_step(params, state)
            losses.append(value)
        val_acc = _accuracy(model, val_batches)
        report = EpochReport(epoch, float(np.mean(losses)), val_acc, time.perf_counter() - t0, cfg.seed, losses)
        reports.append(report)
        log.info("epoch %d loss %.5f val_acc %.2f time %.1fs seed %d",
                 epoch, report.loss, val_acc, report.wall_time, cfg.seed)
        if on_epoch is not None:
            on_epoch(report)
        improved, stop = stopper.update(epoch, val_acc)
        if improved:
            best = model.snapshot()
        if stop:
            break
    model.restore(best)
    return model, reports


def _word_predictions(model: ModelInstance, batches, dummy_fallback: bool = True):
    pred, gold = [], []
    for batch in batches:
        for sent, labels in zip(batch.sentences, predict_batch(model, batch, dummy_fallback)):
            pred.extend(labels)
            gold.extend(sent.labels)
    return pred, gold


def _accuracy(model: ModelInstance, batches) -> float:
    pred, gold = _word_predictions(model, batches)
    return 100.0 * sum(p == g for p, g in zip(pred, gold)) / len(gold)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class Metrics:
    """Per-class precision/recall/F1 and accuracy, all derived from ``confusion``.

    ``confusion[g][p]`` counts gold class ``g`` (En, Hi) predicted as ``p``
    (En, Hi, Dummy).
    """

    confusion: list[list[int]]

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.confusion)

    def precision(self, c: LanguageLabel) -> float:
        predicted = self.confusion[0][c] + self.confusion[1][c]
        return 100.0 * self.confusion[c][c] / predicted if predicted else 0.0

    def recall(self, c: LanguageLabel) -> float:
        gold = sum(self.confusion[c])
        return 100.0 * self.confusion[c][c] / gold if gold else 0.0

    def f1(self, c: LanguageLabel) -> float:
        p, r = self.precision(c), self.recall(c)
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    @property
    def accuracy(self) -> float:
        n = self.total
        return 100.0 * (self.confusion[0][0] + self.confusion[1][1]) / n if n else 0.0

    def rows(self) -> list[dict]:
        return [
            {
                "lang": c.tag,
                "precision": round(self.precision(c), 2),
                "recall": round(self.recall(c), 2),
                "f1": round(self.f1(c), 2),
            }
            for c in CLASSES
        ]

    def to_records(self) -> list[dict]:
        return self.rows() + [{"accuracy": round(self.accuracy, 2), "confusion": self.confusion}]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.to_records())

    @classmethod
    def from_jsonl(cls, text: str) -> "Metrics":
        for line in text.splitlines():
            rec = json.loads(line)
            if "confusion" in rec:
                return cls(rec["confusion"])
        raise ValueError("no confusion record found")

    def table(self) -> str:
        lines = [f"{'lang':<6}{'precision':>11}{'recall':>9}{'f1-score':>10}"]
        for r in self.rows():
            lines.append(f"{r['lang']:<6}{r['precision']:>11.2f}{r['recall']:>9.2f}{r['f1']:>10.2f}")
        lines.append(f"accuracy {self.accuracy:.2f}")
        return "\n".join(lines)


def compute_metrics(pred: Sequence[LanguageLabel], gold: Sequence[LanguageLabel]) -> Metrics:
    if len(pred) != len(gold):
        raise ValueError(f"{len(pred)} predictions for {len(gold)} gold labels")
    confusion = [[0, 0, 0], [0, 0, 0]]
    for p, g in zip(pred, gold):
        if g not in CLASSES:
            raise ValueError(f"gold label {LanguageLabel(g).name} is not En or Hi")
        if p not in (LanguageLabel.EN, LanguageLabel.HI, LanguageLabel.DUMMY):
            raise ValueError(f"prediction {LanguageLabel(p).name} is not a scoreable class")
        confusion[int(g)][int(p)] += 1
    return Metrics(confusion)


def evaluate(model: ModelInstance, test_set: Sequence[LabeledSentence], batch_size: int = 128,
             dummy_fallback: bool = True) -> Metrics:
    """Word-level metrics; sub-word models are read at first-subword positions only."""
    if not test_set:
        raise ValueError("empty test set")
    batches = make_batches(test_set, model.encoders, model.config.representation, batch_size)
    pred, gold = _word_predictions(model, batches, dummy_fallback)
    return compute_metrics(pred, gold)

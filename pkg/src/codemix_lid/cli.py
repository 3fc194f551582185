"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

from .corpus import (
    CorpusFormatError,
    EncoderMismatchError,
    generate_synthetic_corpus,
    parse_corpus_file,
    split_train_val,
    write_corpus_file,
)
from .experiment import DEFAULT_MIN_FREQUENCY, build_encoders
from .harness import NumericError, TrainConfig, evaluate, train
from .labels import LabelError, LanguageLabel
from .models import ConfigError, ModelConfig, ModelFileError, build_model, canonical_arch, load_model, predict, save_model
from .tokenizers import ModelFormatError, SubwordModel, VocabSizeError, _atomic_write_text, train_unigram, word_frequencies

log = logging.getLogger("codemix_lid")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: dict
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    started: str = ""
    finished: str = ""

    def write(self, path) -> None:
        _atomic_write_text(path, json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest(args, command: str, inputs: list[str]) -> RunManifest:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    seeds = {"seed": getattr(args, "seed", None)}
    missing = [p for p in inputs if p and not os.path.exists(p)]
    if missing:
        raise CorpusFormatError(f"input file not found: {missing[0]}")
    return RunManifest(command, cfg, seeds, {p: _digest(p) for p in inputs if p}, [], _now())


def _read(path, policy):
    return parse_corpus_file(path, policy=policy.split(":")[0], fallback=_policy_fallback(policy))


def _policy_fallback(policy: str):
    if policy.startswith("map:"):
        return {"en": LanguageLabel.EN, "hi": LanguageLabel.HI}[policy.split(":", 1)[1]]
    return None


# ---------------------------------------------------------------------------
# commands


def cmd_train_tokenizer(args) -> int:
    manifest = _manifest(args, "train-tokenizer", [args.input])
    sentences = _read(args.input, args.label_policy)
    model = train_unigram(word_frequencies(sentences), args.vocab_size, seed_multiplier=args.seed_multiplier)
    model.save(args.out)
    manifest.outputs = [args.out]
    manifest.finished = _now()
    manifest.write(args.out + ".manifest.json")
    print(f"wrote {len(model) - 2} pieces to {args.out}")
    return EXIT_OK


def _model_config(args) -> ModelConfig:
    return ModelConfig(
        architecture=args.arch,
        representation=args.repr,
        embedding_dim=args.embedding_dim,
        cnn_kernel=args.cnn_kernel,
        cnn_filters=args.cnn_filters,
        lstm_hidden=args.lstm_hidden,
        lstm_dropout=args.dropout,
        dense_hidden=args.dense_hidden,
        char_embedding_dim=args.char_embedding_dim,
        mask_dummy_loss=args.mask_dummy_loss,
        seed=args.seed,
    )


def cmd_train(args) -> int:
    try:
        model_cfg = _model_config(args)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if model_cfg.representation == "subword" and not args.subword_model:
        raise UsageError("--repr subword needs --subword-model (see train-tokenizer)")
    if model_cfg.representation != "subword" and args.subword_model:
        raise UsageError("--subword-model is only valid with --repr subword")
    try:
        train_cfg = TrainConfig(epochs_max=args.epochs, batch_size=args.batch_size, patience=args.patience,
                                seed=args.seed, lr=args.lr)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    manifest = _manifest(args, "train", [args.train, args.subword_model])
    sentences = _read(args.train, args.label_policy)
    train_set, val_set = split_train_val(sentences, args.val_fraction, args.seed)
    subword = SubwordModel.load(args.subword_model) if args.subword_model else None
    encoders = build_encoders(train_set, model_cfg.representation, subword, args.min_frequency)
    model = build_model(model_cfg, encoders)
    log_path = args.out + ".log.jsonl"
    records = []

    def on_epoch(report):
        records.append(report.to_record())
        print(f"epoch {report.epoch}: loss {report.loss:.5f}  val acc {report.val_accuracy:.2f}  "
              f"({report.wall_time:.1f}s)", flush=True)

    model, reports = train(model, train_set, val_set, train_cfg, on_epoch)
    best = max(r.val_accuracy for r in reports)
    records.append({"final": True, "best_val_accuracy": best, "epochs": len(reports), "seed": args.seed})
    save_model(model, args.out)
    _atomic_write_text(log_path, "".join(json.dumps(r) + "\n" for r in records))
    manifest.outputs = [args.out, log_path]
    manifest.finished = _now()
    manifest.write(args.out + ".manifest.json")
    print(f"best validation accuracy {best:.2f}; model written to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    expect = {}
    if args.arch:
        expect["architecture"] = canonical_arch(args.arch)
    if args.repr:
        expect["representation"] = args.repr
    try:
        model = load_model(args.model, expect)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    test = _read(args.test, args.label_policy)
    metrics = evaluate(model, test)
    out = args.metrics_out or args.model + ".metrics.jsonl"
    _atomic_write_text(out, metrics.to_jsonl())
    print(metrics.table())
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    for lineno, line in enumerate(sys.stdin, start=1):
        tokens = line.split()
        if not tokens:
            log.warning("line %d is empty; skipped", lineno)
            continue
        labelled = predict(model, tokens)
        print(" ".join(f"{tok}/{lab.tag}" for tok, lab in labelled), flush=True)
    return EXIT_OK


def cmd_synth(args) -> int:
    write_corpus_file(generate_synthetic_corpus(args.sentences, args.seed), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="codemix-lid", description="Word-level language identification for Hindi-English code-mixed text.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def policy(p):
        p.add_argument("--label-policy", default="error",
                       help="unknown tags: error (default), drop, map:en or map:hi")

    p = sub.add_parser("train-tokenizer", help="train a unigram sub-word model")
    p.add_argument("--input", required=True, help="token<TAB>label corpus file")
    p.add_argument("--vocab-size", type=int, default=12000)
    p.add_argument("--seed-multiplier", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    policy(p)
    p.set_defaults(func=cmd_train_tokenizer)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--train", required=True)
    p.add_argument("--arch", required=True, help="cnn, multi-cnn, lstm, cnn-lstm, charcnn-lstm")
    p.add_argument("--repr", required=True, choices=["word", "subword", "char+word"])
    p.add_argument("--subword-model")
    p.add_argument("--out", required=True)
    p.add_argument("--val-fraction", type=float, default=0.10)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--embedding-dim", type=int, default=300)
    p.add_argument("--cnn-kernel", type=int, default=4)
    p.add_argument("--cnn-filters", type=int, default=64)
    p.add_argument("--lstm-hidden", type=int, default=300)
    p.add_argument("--dropout", type=float, default=0.4)
    p.add_argument("--dense-hidden", type=int, default=100)
    p.add_argument("--char-embedding-dim", type=int, default=50)
    p.add_argument("--min-frequency", type=int, default=DEFAULT_MIN_FREQUENCY)
    p.add_argument("--mask-dummy-loss", action="store_true")
    policy(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a model on a labelled corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--metrics-out")
    p.add_argument("--arch")
    p.add_argument("--repr", choices=["word", "subword", "char+word"])
    policy(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="label whitespace-tokenized sentences from stdin")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="write a synthetic two-language corpus")
    p.add_argument("--sentences", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorpusFormatError, LabelError, ModelFileError, ModelFormatError, VocabSizeError,
            EncoderMismatchError, ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Word-level language identification for Hindi-English code-mixed text."""

from .labels import LabeledSentence, LanguageLabel

__version__ = "0.1.0"

__all__ = ["LabeledSentence", "LanguageLabel"]

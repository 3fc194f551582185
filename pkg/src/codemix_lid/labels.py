from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum


class LanguageLabel(IntEnum):
    EN = 0
    HI = 1
    DUMMY = 2
    PAD = 3

    @property
    def tag(self) -> str:
        return self.name.lower()


class LabelError(ValueError):
    pass


_ALIASES = {"eng": LanguageLabel.EN, "en": LanguageLabel.EN, "hin": LanguageLabel.HI, "hi": LanguageLabel.HI}


def normalize_label(raw: str, policy: str = "error", fallback: LanguageLabel | None = None) -> LanguageLabel | None:
    """Map a raw tag to En/Hi.

    Unknown tags raise under ``policy="error"``, return ``None`` under
    ``"drop"`` (the caller skips the token) and return ``fallback`` under
    ``"map"``.
    """
    label = _ALIASES.get(raw.strip().lower())
    if label is not None:
        return label
    if policy == "drop":
        return None
    if policy == "map":
        if fallback not in (LanguageLabel.EN, LanguageLabel.HI):
            raise ValueError("map policy needs an En or Hi fallback")
        return fallback
    if policy != "error":
        raise ValueError(f"unknown label policy {policy!r}")
    raise LabelError(f"unknown language label {raw!r}")


@dataclass(frozen=True)
class LabeledSentence:
    tokens: tuple[str, ...]
    labels: tuple[LanguageLabel, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "labels", tuple(LanguageLabel(x) for x in self.labels))
        if not self.tokens:
            raise ValueError("a sentence needs at least one token")
        if len(self.tokens) != len(self.labels):
            raise ValueError(f"{len(self.tokens)} tokens but {len(self.labels)} labels")
        for tok in self.tokens:
            if not tok or any(ch.isspace() for ch in tok):
                raise ValueError(f"token {tok!r} is empty or contains whitespace")
        for lab in self.labels:
            if lab not in (LanguageLabel.EN, LanguageLabel.HI):
                raise ValueError(f"sentence labels must be En or Hi, got {lab.name}")

    def __len__(self) -> int:
        return len(self.tokens)

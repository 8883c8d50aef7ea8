"""Domain types: utterances, intent spans, feature labels, IOBES codec, corpus I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

__all__ = [
    "FEATURE_DIMENSIONS",
    "DEFAULT_FEATURE_VALUES",
    "IntentSpan",
    "AnnotatedUtterance",
    "MaskedExample",
    "Vocabulary",
    "CorpusError",
    "encode_iobes",
    "decode_iobes",
    "iobes_tag_set",
    "load_corpus",
    "save_corpus",
    "utterance_from_json",
    "utterance_to_json",
    "build_vocabularies",
    "masked_examples",
]


# Label order within a dimension fixes the label's class index everywhere.
FEATURE_DIMENSIONS: dict[str, tuple[str, ...]] = {
    "communicative_function": (
        "inform",
        "issue",
        "request-action",
        "request-confirm",
        "request-info",
    ),
    "attr_cf": ("self", "other"),
    "attr_ev": ("self", "other"),
    "negation": ("positive", "negative"),
    "tense": ("past", "present", "future"),
    "modality": ("modal-poss", "modal-try", "other"),
}

# Fallback feature values for spans no feature model said anything about.
DEFAULT_FEATURE_VALUES: dict[str, str] = {
    "communicative_function": "inform",
    "attr_cf": "self",
    "attr_ev": "self",
    "negation": "positive",
    "tense": "present",
    "modality": "other",
}


class CorpusError(ValueError):
    """Raised for malformed corpus files or inconsistent annotations."""


@dataclass
class IntentSpan:
    """Half-open token range [start, end) carrying an intent label.

    ``features`` maps dimension name to value. Corpus rows carry all six
    dimensions; model outputs may carry a subset or none.
    """

    start: int
    end: int
    intent: str
    features: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.end:
            raise CorpusError(f"bad span bounds [{self.start}, {self.end})")
        for dim, value in self.features.items():
            if dim not in FEATURE_DIMENSIONS:
                raise CorpusError(f"unknown feature dimension {dim!r}")
            if value not in FEATURE_DIMENSIONS[dim]:
                raise CorpusError(f"bad value {value!r} for dimension {dim!r}")

    def token_range(self) -> range:
        return range(self.start, self.end)


@dataclass
class AnnotatedUtterance:
    tokens: list[str]
    spans: list[IntentSpan]

    def __post_init__(self) -> None:
        if not self.tokens:
            raise CorpusError("utterance has no tokens")
        prev_end = 0
        for s in sorted(self.spans, key=lambda s: s.start):
            if s.start < prev_end:
                raise CorpusError(f"overlapping spans at token {s.start}")
            if s.end > len(self.tokens):
                raise CorpusError(
                    f"span [{s.start}, {s.end}) exceeds utterance length {len(self.tokens)}"
                )
            prev_end = s.end
        self.spans = sorted(self.spans, key=lambda s: s.start)

    def require_full_features(self) -> None:
        for s in self.spans:
            missing = [d for d in FEATURE_DIMENSIONS if d not in s.features]
            if missing:
                raise CorpusError(
                    f"span [{s.start}, {s.end}) missing feature dimensions {missing}"
                )


@dataclass
class MaskedExample:
    """A classification instance: full token sequence, span mask, gold class index."""

    tokens: list[str]
    mask: list[int]
    gold: int

    def __post_init__(self) -> None:
        if len(self.mask) != len(self.tokens):
            raise CorpusError("mask length disagrees with token count")
        if not any(self.mask):
            raise CorpusError("mask selects no tokens")
        if any(bit not in (0, 1) for bit in self.mask):
            raise CorpusError("mask entries must be 0 or 1")

    def span_positions(self) -> list[int]:
        return [i for i, bit in enumerate(self.mask) if bit]


class Vocabulary:
    """Token-to-index map with reserved padding (0) and unknown (1) slots."""

    PAD = 0
    UNK = 1
    PAD_TOKEN = "<pad>"
    UNK_TOKEN = "<unk>"

    def __init__(self, tokens: Iterable[str] = ()) -> None:
        self._index: dict[str, int] = {self.PAD_TOKEN: self.PAD, self.UNK_TOKEN: self.UNK}
        for t in tokens:
            if t not in self._index:
                self._index[t] = len(self._index)

    @classmethod
    def build(cls, sequences: Iterable[Sequence[str]], min_count: int = 2) -> "Vocabulary":
        """Count tokens across sequences; those seen fewer than min_count times map to UNK."""
        counts: dict[str, int] = {}
        for seq in sequences:
            for t in seq:
                counts[t] = counts.get(t, 0) + 1
        kept = [t for t, c in counts.items() if c >= min_count]
        return cls(kept)

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def lookup(self, token: str) -> int:
        return self._index.get(token, self.UNK)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.lookup(t) for t in tokens]

    def to_dict(self) -> dict[str, int]:
        return dict(self._index)

    @classmethod
    def from_dict(cls, mapping: dict[str, int]) -> "Vocabulary":
        if mapping.get(cls.PAD_TOKEN) != cls.PAD or mapping.get(cls.UNK_TOKEN) != cls.UNK:
            raise CorpusError("vocabulary mapping lacks reserved pad/unk entries")
        vocab = cls()
        for token, idx in sorted(mapping.items(), key=lambda kv: kv[1]):
            if token in (cls.PAD_TOKEN, cls.UNK_TOKEN):
                continue
            if idx != len(vocab._index):
                raise CorpusError(f"vocabulary indices not contiguous at {token!r}")
            vocab._index[token] = idx
        return vocab


# ---------------------------------------------------------------------------
# IOBES codec
# ---------------------------------------------------------------------------


def iobes_tag_set(labels: Sequence[str]) -> list[str]:
    """All tags for a label set: O first (index 0), then B/I/E/S per label."""
    tags = ["O"]
    for label in labels:
        tags.extend([f"B-{label}", f"I-{label}", f"E-{label}", f"S-{label}"])
    return tags


def encode_iobes(spans: Sequence[IntentSpan], length: int, key: str | None = None) -> list[str]:
    """Render non-overlapping spans as an IOBES tag sequence of the given length.

    With ``key`` set, tag suffixes come from that feature dimension instead of
    the intent label.
    """
    tags = ["O"] * length
    for s in spans:
        if s.end > length:
            raise CorpusError(f"span [{s.start}, {s.end}) exceeds length {length}")
        label = s.features[key] if key is not None else s.intent
        if s.end - s.start == 1:
            tags[s.start] = f"S-{label}"
        else:
            tags[s.start] = f"B-{label}"
            for i in range(s.start + 1, s.end - 1):
                tags[i] = f"I-{label}"
            tags[s.end - 1] = f"E-{label}"
    return tags


def _split_tag(tag: str) -> tuple[str, str | None]:
    if tag == "O":
        return "O", None
    if len(tag) > 2 and tag[1] == "-" and tag[0] in "BIES":
        return tag[0], tag[2:]
    raise CorpusError(f"malformed tag {tag!r}")


def decode_iobes(tags: Sequence[str]) -> tuple[list[IntentSpan], int]:
    """Recover spans from tags, repairing scheme violations instead of failing.

    A dangling or inconsistent partial span is closed at the position where the
    violation appears. Returns the spans plus how many repairs were applied, so
    callers can distinguish clean decodes from salvaged ones.
    """
    spans: list[IntentSpan] = []
    repairs = 0
    open_start: int | None = None
    open_label: str | None = None

    def close(end: int) -> None:
        nonlocal open_start, open_label
        if open_start is not None:
            spans.append(IntentSpan(open_start, end, open_label))
            open_start = None
            open_label = None

    for i, tag in enumerate(tags):
        prefix, label = _split_tag(tag)
        if prefix in ("I", "E"):
            if open_start is None or label != open_label:
                repairs += 1
                close(i)
                open_start, open_label = i, label
            if prefix == "E":
                close(i + 1)
        else:
            if open_start is not None:
                repairs += 1
                close(i)
            if prefix == "B":
                open_start, open_label = i, label
            elif prefix == "S":
                spans.append(IntentSpan(i, i + 1, label))
    if open_start is not None:
        repairs += 1
        close(len(tags))
    return spans, repairs


# ---------------------------------------------------------------------------
# corpus I/O (one JSON object per line)
# ---------------------------------------------------------------------------


def utterance_from_json(obj) -> AnnotatedUtterance:
    if not isinstance(obj, dict):
        raise CorpusError("corpus row is not an object")
    tokens = obj.get("tokens")
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise CorpusError("'tokens' must be a list of strings")
    raw_spans = obj.get("spans")
    if not isinstance(raw_spans, list):
        raise CorpusError("'spans' must be a list")
    spans = []
    for raw in raw_spans:
        if not isinstance(raw, dict):
            raise CorpusError("span entry is not an object")
        try:
            spans.append(
                IntentSpan(
                    start=int(raw["start"]),
                    end=int(raw["end"]),
                    intent=str(raw["intent"]),
                    features=dict(raw.get("features", {})),
                )
            )
        except KeyError as missing:
            raise CorpusError(f"span entry missing field {missing}") from None
    return AnnotatedUtterance(tokens=list(tokens), spans=spans)


def utterance_to_json(u: AnnotatedUtterance) -> dict:
    return {
        "tokens": list(u.tokens),
        "spans": [
            {
                "start": s.start,
                "end": s.end,
                "intent": s.intent,
                "features": {k: s.features[k] for k in sorted(s.features)},
            }
            for s in u.spans
        ],
    }


def load_corpus(path: str | Path, require_features: bool = True) -> list[AnnotatedUtterance]:
    utterances = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                u = utterance_from_json(obj)
                if require_features:
                    u.require_full_features()
            except (json.JSONDecodeError, CorpusError) as err:
                raise CorpusError(f"{path}:{lineno}: {err}") from None
            utterances.append(u)
    return utterances


def save_corpus(utterances: Iterable[AnnotatedUtterance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for u in utterances:
            handle.write(json.dumps(utterance_to_json(u), ensure_ascii=False) + "\n")


def build_vocabularies(corpus: Iterable[AnnotatedUtterance]) -> tuple[Vocabulary, Vocabulary]:
    """Word and character vocabularies from a training corpus.

    Words below the frequency cutoff fall back to the unknown slot; characters
    are kept unconditionally. Word keys are lowercased to match lookup.
    """
    utterances = list(corpus)
    word_vocab = Vocabulary.build([[t.lower() for t in u.tokens] for u in utterances])
    char_vocab = Vocabulary.build(
        [list(t) for u in utterances for t in u.tokens], min_count=1
    )
    return word_vocab, char_vocab


def masked_examples(
    corpus: Iterable[AnnotatedUtterance], dimension: str
) -> list[MaskedExample]:
    """One classification instance per annotated span, for one feature dimension."""
    labels = FEATURE_DIMENSIONS.get(dimension)
    if labels is None:
        raise CorpusError(f"unknown feature dimension {dimension!r}")
    examples = []
    for u in corpus:
        for s in u.spans:
            mask = [0] * len(u.tokens)
            for i in s.token_range():
                mask[i] = 1
            examples.append(
                MaskedExample(
                    tokens=list(u.tokens),
                    mask=mask,
                    gold=labels.index(s.features[dimension]),
                )
            )
    return examples

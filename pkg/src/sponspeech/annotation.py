"""Annotated transcripts: behavior taxonomy, label expansion, syntactic features.

A corpus record carries characters with per-character behavior labels, the
phoneme sequence with per-character fan-out counts, and (optionally) audio or
a codec token grid with per-phoneme frame boundaries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ParseError, ValidationError

NONE_ID = 0

DISFLUENCY = "disfluency"
INTERJECTION = "interjection"
NON_SPEECH_SOUND = "non_speech_sound"

# Ordered 1..19; id 0 is the reserved NONE sentinel.
_BEHAVIORS = (
    ("filled pause", DISFLUENCY),
    ("repetitions", DISFLUENCY),
    ("stuttering", DISFLUENCY),
    ("prolongation", DISFLUENCY),
    ("doubt", INTERJECTION),
    ("response", INTERJECTION),
    ("surprise", INTERJECTION),
    ("positive feedback", INTERJECTION),
    ("reminder", INTERJECTION),
    ("realization", INTERJECTION),
    ("sigh", INTERJECTION),
    ("coquetry", INTERJECTION),
    ("snort", INTERJECTION),
    ("smile", NON_SPEECH_SOUND),
    ("cachinnation", NON_SPEECH_SOUND),
    ("wry smile", NON_SPEECH_SOUND),
    ("awkward laughter", NON_SPEECH_SOUND),
    ("scoff", NON_SPEECH_SOUND),
    ("involuntary laughter", NON_SPEECH_SOUND),
)

DEFAULT_PUNCTUATION = frozenset("，。！？、；：,.!?;:")


class BehaviorTaxonomy:
    """The fixed inventory of spontaneous behaviors plus the NONE sentinel."""

    def __init__(self):
        self.entries = tuple(
            (i + 1, name, category) for i, (name, category) in enumerate(_BEHAVIORS)
        )
        self._by_name = {"NONE": NONE_ID}
        self._by_id = {NONE_ID: "NONE"}
        for bid, name, _ in self.entries:
            self._by_name[name] = bid
            self._by_id[bid] = name

    def __len__(self):
        return len(self.entries)

    @property
    def num_classes(self):
        """Label classes including NONE."""
        return len(self.entries) + 1

    def behavior_id(self, name: str) -> int:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"unknown behavior name: {name!r}") from None

    def name(self, behavior_id: int) -> str:
        try:
            return self._by_id[behavior_id]
        except KeyError:
            raise KeyError(f"unknown behavior id: {behavior_id!r}") from None

    def category(self, behavior_id: int) -> Optional[str]:
        if behavior_id == NONE_ID:
            return None
        for bid, _, category in self.entries:
            if bid == behavior_id:
                return category
        raise KeyError(f"unknown behavior id: {behavior_id!r}")

    def category_counts(self) -> dict:
        counts: dict = {}
        for _, _, category in self.entries:
            counts[category] = counts.get(category, 0) + 1
        return counts


TAXONOMY = BehaviorTaxonomy()


def behavior_id(name: str) -> int:
    """Look up a behavior id by name ("NONE" maps to 0)."""
    return TAXONOMY.behavior_id(name)


def behavior_name(bid: int) -> str:
    return TAXONOMY.name(bid)


_RECORD_FIELDS = {
    "id",
    "chars",
    "char_labels",
    "phonemes",
    "char_phoneme_counts",
    "audio_path",
    "tokens",
    "phoneme_boundaries",
}


@dataclass
class AnnotatedUtterance:
    """One corpus record.

    `tokens` is a (T, Q) integer grid or None; `audio_path` points at a mono
    PCM16 WAV or is None. `phoneme_boundaries` are half-open [start, end)
    codec-frame intervals, contiguous from 0, one per phoneme.
    """

    id: str
    chars: list
    char_labels: list
    phonemes: list
    char_phoneme_counts: list
    phoneme_boundaries: list
    audio_path: Optional[str] = None
    tokens: Optional[np.ndarray] = None

    def __eq__(self, other):
        if not isinstance(other, AnnotatedUtterance):
            return NotImplemented
        if self.tokens is None or other.tokens is None:
            tokens_equal = self.tokens is None and other.tokens is None
        else:
            tokens_equal = np.array_equal(self.tokens, other.tokens)
        return (
            self.id == other.id
            and self.chars == other.chars
            and self.char_labels == other.char_labels
            and self.phonemes == other.phonemes
            and self.char_phoneme_counts == other.char_phoneme_counts
            and self.phoneme_boundaries == other.phoneme_boundaries
            and self.audio_path == other.audio_path
            and tokens_equal
        )

    @property
    def num_frames(self) -> Optional[int]:
        if self.tokens is not None:
            return int(self.tokens.shape[0])
        if self.phoneme_boundaries:
            return int(self.phoneme_boundaries[-1][1])
        return 0 if not self.phonemes else None

    def validate(self):
        """Raise ValidationError if any domain invariant is violated."""
        if len(self.char_labels) != len(self.chars):
            raise ValidationError(
                f"{self.id}: {len(self.char_labels)} labels for {len(self.chars)} chars"
            )
        for i, lab in enumerate(self.char_labels):
            if not 0 <= lab <= len(TAXONOMY):
                raise ValidationError(f"{self.id}: char_labels[{i}]={lab} outside 0..19")
        if len(self.char_phoneme_counts) != len(self.chars):
            raise ValidationError(
                f"{self.id}: {len(self.char_phoneme_counts)} counts for "
                f"{len(self.chars)} chars"
            )
        for i, c in enumerate(self.char_phoneme_counts):
            if c < 1:
                raise ValidationError(
                    f"{self.id}: char_phoneme_counts[{i}]={c} must be positive"
                )
        if sum(self.char_phoneme_counts) != len(self.phonemes):
            raise ValidationError(
                f"{self.id}: char_phoneme_counts sum to "
                f"{sum(self.char_phoneme_counts)} but there are "
                f"{len(self.phonemes)} phonemes"
            )
        if len(self.phoneme_boundaries) != len(self.phonemes):
            raise ValidationError(
                f"{self.id}: {len(self.phoneme_boundaries)} boundaries for "
                f"{len(self.phonemes)} phonemes"
            )
        prev_end = 0
        for i, (start, end) in enumerate(self.phoneme_boundaries):
            if start != prev_end:
                raise ValidationError(
                    f"{self.id}: boundary {i} starts at {start}, expected {prev_end}"
                )
            if end < start:
                raise ValidationError(f"{self.id}: boundary {i} has end {end} < start {start}")
            prev_end = end
        if self.tokens is not None:
            if self.tokens.ndim != 2:
                raise ValidationError(f"{self.id}: token grid must be 2-D")
            if self.phoneme_boundaries and self.phoneme_boundaries[-1][1] != self.tokens.shape[0]:
                raise ValidationError(
                    f"{self.id}: boundaries cover {self.phoneme_boundaries[-1][1]} "
                    f"frames but the grid has {self.tokens.shape[0]}"
                )

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "chars": list(self.chars),
            "char_labels": [int(x) for x in self.char_labels],
            "phonemes": [int(x) for x in self.phonemes],
            "char_phoneme_counts": [int(x) for x in self.char_phoneme_counts],
            "audio_path": self.audio_path,
            "tokens": None if self.tokens is None else self.tokens.tolist(),
            "phoneme_boundaries": [[int(s), int(e)] for s, e in self.phoneme_boundaries],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), ensure_ascii=False, sort_keys=True)


def _require(record, key, types, path):
    if key not in record:
        raise ParseError(path + key, "missing field")
    value = record[key]
    if not isinstance(value, types):
        raise ParseError(path + key, f"expected {types}, got {type(value).__name__}")
    return value


def _int_list(record, key, path=""):
    value = _require(record, key, list, path)
    out = []
    for i, x in enumerate(value):
        if isinstance(x, bool) or not isinstance(x, int):
            raise ParseError(f"{path}{key}[{i}]", f"expected int, got {type(x).__name__}")
        out.append(x)
    return out


def parse_transcript(record) -> AnnotatedUtterance:
    """Parse one corpus record (a JSON string or an already-decoded dict).

    Schema violations raise ParseError with the offending field path;
    invariant violations raise ValidationError.
    """
    if isinstance(record, (str, bytes)):
        try:
            record = json.loads(record)
        except json.JSONDecodeError as exc:
            raise ParseError("<record>", f"invalid JSON: {exc}") from None
    if not isinstance(record, dict):
        raise ParseError("<record>", f"expected object, got {type(record).__name__}")
    unknown = set(record) - _RECORD_FIELDS
    if unknown:
        raise ParseError(sorted(unknown)[0], "unknown field")

    rid = _require(record, "id", str, "")
    chars = _require(record, "chars", list, "")
    for i, c in enumerate(chars):
        if not isinstance(c, str) or not c:
            raise ParseError(f"chars[{i}]", "expected non-empty string")
    char_labels = _int_list(record, "char_labels")
    phonemes = _int_list(record, "phonemes")
    for i, p in enumerate(phonemes):
        if p < 0:
            raise ParseError(f"phonemes[{i}]", "phoneme ids must be non-negative")
    counts = _int_list(record, "char_phoneme_counts")

    audio_path = record.get("audio_path")
    if audio_path is not None and not isinstance(audio_path, str):
        raise ParseError("audio_path", "expected string or null")

    tokens_raw = record.get("tokens")
    tokens = None
    if tokens_raw is not None:
        if not isinstance(tokens_raw, list):
            raise ParseError("tokens", "expected list of rows or null")
        width = None
        for t, row in enumerate(tokens_raw):
            if not isinstance(row, list):
                raise ParseError(f"tokens[{t}]", "expected list of ints")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(f"tokens[{t}]", "ragged token grid")
            for q, x in enumerate(row):
                if isinstance(x, bool) or not isinstance(x, int):
                    raise ParseError(f"tokens[{t}][{q}]", "expected int")
        tokens = np.asarray(tokens_raw, dtype=np.int64)
        if tokens.size == 0:
            tokens = tokens.reshape(len(tokens_raw), width or 0)

    bounds_raw = _require(record, "phoneme_boundaries", list, "")
    boundaries = []
    for i, pair in enumerate(bounds_raw):
        if not isinstance(pair, list) or len(pair) != 2:
            raise ParseError(f"phoneme_boundaries[{i}]", "expected [start, end]")
        s, e = pair
        for name, v in (("start", s), ("end", e)):
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise ParseError(
                    f"phoneme_boundaries[{i}]", f"{name} must be a non-negative int"
                )
        boundaries.append((s, e))

    utt = AnnotatedUtterance(
        id=rid,
        chars=list(chars),
        char_labels=char_labels,
        phonemes=phonemes,
        char_phoneme_counts=counts,
        phoneme_boundaries=boundaries,
        audio_path=audio_path,
        tokens=tokens,
    )
    utt.validate()
    return utt


def expand_labels(char_labels: Sequence[int], char_phoneme_counts: Sequence[int]) -> np.ndarray:
    """Repeat each character's label over that character's phonemes."""
    if len(char_labels) != len(char_phoneme_counts):
        raise ValueError(
            f"{len(char_labels)} labels vs {len(char_phoneme_counts)} counts"
        )
    counts = np.asarray(char_phoneme_counts, dtype=np.int64)
    if counts.size and counts.min() < 0:
        raise ValueError("counts must be non-negative")
    return np.repeat(np.asarray(char_labels, dtype=np.int64), counts)


def expand_rows(rows: np.ndarray, char_phoneme_counts: Sequence[int]) -> np.ndarray:
    """Row-wise analogue of expand_labels for per-character feature matrices."""
    rows = np.asarray(rows)
    if rows.shape[0] != len(char_phoneme_counts):
        raise ValueError(f"{rows.shape[0]} rows vs {len(char_phoneme_counts)} counts")
    return np.repeat(rows, np.asarray(char_phoneme_counts, dtype=np.int64), axis=0)


def split_subsentences(chars: Sequence[str], punctuation=DEFAULT_PUNCTUATION):
    """Half-open index spans of maximal punctuation-free runs."""
    spans = []
    start = None
    for i, c in enumerate(chars):
        if c in punctuation:
            if start is not None:
                spans.append((start, i))
                start = None
        elif start is None:
            start = i
    if start is not None:
        spans.append((start, len(chars)))
    return spans


def syntactic_features(
    chars: Sequence[str],
    char_labels: Sequence[int],
    punctuation=DEFAULT_PUNCTUATION,
) -> np.ndarray:
    """Per-character (index-in-subsentence, subsentence-length,
    subsentence-index, subsentence-count) vectors; zero rows at NONE labels.

    Positions whose label is NONE get all-zero rows; labeled positions get the
    position of the character within its subsentence and of the subsentence
    within the sentence. Labels on punctuation are rejected: a separator
    belongs to no subsentence.
    """
    if len(chars) != len(char_labels):
        raise ValueError(f"{len(chars)} chars vs {len(char_labels)} labels")
    spans = split_subsentences(chars, punctuation)
    n_spans = len(spans)
    feats = np.zeros((len(chars), 4), dtype=np.int64)
    span_of = {}
    for j, (s, e) in enumerate(spans):
        for i in range(s, e):
            span_of[i] = j
    for i, lab in enumerate(char_labels):
        if lab == NONE_ID:
            continue
        if i not in span_of:
            raise ValidationError(
                f"char {i} ({chars[i]!r}) carries label {lab} but is punctuation"
            )
        j = span_of[i]
        s, e = spans[j]
        feats[i] = (i - s, e - s, j, n_spans)
    return feats


def load_corpus(path):
    """Read a corpus JSONL file; returns a list of AnnotatedUtterance."""
    utterances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                utterances.append(parse_transcript(line))
            except ParseError as exc:
                raise ParseError(f"line {lineno}: {exc.field}", str(exc)) from None
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from None
    return utterances


def save_corpus(utterances, path):
    with open(path, "w", encoding="utf-8") as fh:
        for utt in utterances:
            fh.write(utt.to_json() + "\n")

"""Tokenization, corpus and lexicon I/O, and immutable token edits."""

from __future__ import annotations

import csv
import json
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

PUNCTUATION = frozenset(string.punctuation)


class DataError(ValueError):
    """Raised for malformed corpus or lexicon files."""


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[str, ...]
    raw: str = ""

    def __post_init__(self):
        if any(not t for t in self.tokens):
            raise ValueError("tokens must be non-empty strings")

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Sentence":
        tokens = tuple(tokens)
        return cls(tokens, detokenize(tokens))

    @property
    def text(self) -> str:
        return detokenize(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class LabeledExample:
    sentence: Sentence
    label: int


@dataclass(frozen=True)
class Dataset:
    examples: tuple[LabeledExample, ...]
    class_count: int
    name: str = ""

    def __post_init__(self):
        if self.class_count < 1:
            raise DataError("class_count must be positive")
        for ex in self.examples:
            if not 0 <= ex.label < self.class_count:
                raise DataError(
                    f"label {ex.label} outside [0, {self.class_count}) in dataset {self.name!r}"
                )

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    @property
    def labels(self) -> list[int]:
        return [ex.label for ex in self.examples]


def _peel(chunk: str) -> list[str]:
    start, end = 0, len(chunk)
    while start < end and chunk[start] in PUNCTUATION:
        start += 1
    if start == end:
        return [chunk]
    while chunk[end - 1] in PUNCTUATION:
        end -= 1
    out = []
    if start:
        out.append(chunk[:start])
    out.append(chunk[start:end])
    if end < len(chunk):
        out.append(chunk[end:])
    return out


def tokenize(text: str) -> Sentence:
    """Split on whitespace, peel leading/trailing ASCII punctuation runs, lowercase.

    >>> tokenize("The movie was great.").tokens
    ('the', 'movie', 'was', 'great', '.')
    """
    tokens: list[str] = []
    for chunk in text.split():
        tokens.extend(_peel(chunk.lower()))
    return Sentence(tuple(tokens), text)


def detokenize(tokens: Iterable[str]) -> str:
    return " ".join(tokens)


def substitute(s: Sentence, index: int, replacement: str) -> Sentence:
    if not 0 <= index < len(s.tokens):
        raise IndexError(f"token index {index} out of range for {len(s.tokens)} tokens")
    tokens = list(s.tokens)
    tokens[index] = replacement
    return Sentence.from_tokens(tokens)


@dataclass(frozen=True)
class SynonymLexicon:
    entries: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, Iterable[str]]]) -> "SynonymLexicon":
        merged: dict[str, list[str]] = {}
        for head, syns in pairs:
            head = head.strip().lower()
            bucket = merged.setdefault(head, [])
            for syn in syns:
                syn = syn.strip().lower()
                if syn and syn != head and syn not in bucket:
                    bucket.append(syn)
        return cls({h: tuple(v) for h, v in merged.items()})

    def synonyms(self, word: str) -> tuple[str, ...]:
        return self.entries.get(word, ())

    def __contains__(self, word: str) -> bool:
        return bool(self.entries.get(word))

    def __len__(self) -> int:
        return len(self.entries)


def load_lexicon(path: str | Path) -> SynonymLexicon:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise DataError(f"{path}:{lineno}: expected 'headword<TAB>synonyms'")
            head, rest = line.split("\t", 1)
            pairs.append((head, rest.split(",")))
    return SynonymLexicon.from_pairs(pairs)


def write_lexicon(lexicon: SynonymLexicon, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for head, syns in lexicon.entries.items():
            fh.write(f"{head}\t{','.join(syns)}\n")


def _coerce_label(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, str) and value.strip().lstrip("-").isdigit():
            value = int(value)
        else:
            raise DataError(f"{where}: label {value!r} is not an integer")
    if value < 0:
        raise DataError(f"{where}: label {value} is negative")
    return value


def _read_records(path: Path, fmt: str) -> list[tuple[str, int]]:
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        if fmt == "jsonl":
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                where = f"{path}:{lineno}"
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{where}: invalid JSON ({exc.msg})") from None
                if not isinstance(obj, dict) or not isinstance(obj.get("text"), str) or "label" not in obj:
                    raise DataError(f"{where}: record needs a string 'text' and a 'label'")
                records.append((obj["text"], _coerce_label(obj["label"], where)))
        elif fmt == "csv":
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"text", "label"} <= set(reader.fieldnames):
                raise DataError(f"{path}:1: csv header must contain text,label")
            for row in reader:
                where = f"{path}:{reader.line_num}"
                if row.get("text") is None or row.get("label") is None:
                    raise DataError(f"{where}: missing field")
                records.append((row["text"], _coerce_label(row["label"], where)))
        else:
            raise DataError(f"unknown dataset format {fmt!r}")
    return records


def load_dataset(path: str | Path, format: str | None = None, class_count: int | None = None) -> Dataset:
    path = Path(path)
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "jsonl")
    records = _read_records(path, fmt)
    inferred = max((label for _, label in records), default=-1) + 1
    if class_count is None:
        class_count = max(inferred, 1)
    elif inferred > class_count:
        raise DataError(f"{path}: label {inferred - 1} outside declared class_count {class_count}")
    examples = tuple(LabeledExample(tokenize(text), label) for text, label in records)
    return Dataset(examples, class_count, path.stem)


def write_dataset(dataset: Dataset | Sequence[LabeledExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in dataset:
            fh.write(json.dumps({"text": ex.sentence.text, "label": ex.label}) + "\n")

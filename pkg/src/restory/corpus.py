"""Code corpus handling: NLOC measurement, strata, sampling, dataset files.

NLOC here means non-blank physical lines that contain at least one token
outside comments. The lexer recognizes `//` line comments, `/* */` block
comments, and `"`/`'`-delimited literals (so comment markers inside string
or character literals are not treated as comments). Exotic literal forms
(raw strings, digit separators) are not specially handled; preprocessor
lines count as code.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError

SUPPORTED_LANGUAGES = ("cpp",)

STRATUM_WIDTH = 10
STRATUM_COUNT = 35
MAX_NLOC = STRATUM_WIDTH * STRATUM_COUNT  # 350


class UnsupportedLanguageError(DataError):
    pass


class UnterminatedCommentError(DataError):
    def __init__(self, line: int):
        super().__init__(f"unterminated block comment starting at line {line}")
        self.line = line


class NoCodeError(DataError):
    pass


class NlocRangeError(DataError):
    pass


class DeficientStrataError(DataError):
    def __init__(self, labels: Sequence[str]):
        super().__init__("deficient strata: " + ", ".join(labels))
        self.labels = tuple(labels)


class DatasetError(DataError):
    pass


def count_nloc(source: str, language_tag: str = "cpp") -> int:
    """Count non-blank, non-comment lines in `source`.

    Raises NoCodeError when no line holds code, UnterminatedCommentError
    (with the start line) for an unclosed block comment, and
    UnsupportedLanguageError for languages without lexing rules.
    """
    if language_tag not in SUPPORTED_LANGUAGES:
        raise UnsupportedLanguageError(f"unsupported language tag: {language_tag!r}")

    count = 0
    line = 1
    i = 0
    n = len(source)
    in_block = False
    block_start = 0
    in_string = False
    in_char = False
    line_has_code = False

    while i < n:
        c = source[i]
        nxt = source[i + 1] if i + 1 < n else ""

        if c == "\n":
            if line_has_code:
                count += 1
            line_has_code = False
            in_string = False  # plain literals cannot span lines
            in_char = False
            line += 1
            i += 1
            continue

        if in_block:
            if c == "*" and nxt == "/":
                in_block = False
                i += 2
            else:
                i += 1
            continue

        if in_string or in_char:
            line_has_code = True
            if c == "\\":
                if nxt == "\n":  # line continuation inside a literal
                    count += 1
                    line_has_code = False
                    line += 1
                i += 2
                continue
            if in_string and c == '"':
                in_string = False
            elif in_char and c == "'":
                in_char = False
            i += 1
            continue

        if c == "/" and nxt == "/":
            while i < n and source[i] != "\n":
                i += 1
            continue
        if c == "/" and nxt == "*":
            in_block = True
            block_start = line
            i += 2
            continue
        if c == '"':
            in_string = True
            line_has_code = True
            i += 1
            continue
        if c == "'":
            in_char = True
            line_has_code = True
            i += 1
            continue
        if not c.isspace():
            line_has_code = True
        i += 1

    if in_block:
        raise UnterminatedCommentError(block_start)
    if line_has_code:
        count += 1
    if count == 0:
        raise NoCodeError("no code lines")
    return count


@dataclass(frozen=True)
class Stratum:
    """One NLOC band of width 10; the 35 bands partition [1, 350]."""

    index: int

    @property
    def lower(self) -> int:
        return STRATUM_WIDTH * self.index + 1

    @property
    def upper(self) -> int:
        return STRATUM_WIDTH * (self.index + 1)

    @property
    def label(self) -> str:
        return f"{self.lower}-{self.upper}"


STRATA = tuple(Stratum(i) for i in range(STRATUM_COUNT))


def stratum_for_nloc(nloc: int) -> int:
    """Map an NLOC value to its stratum index, rejecting values outside [1, 350]."""
    if not 1 <= nloc <= MAX_NLOC:
        raise NlocRangeError(f"nloc {nloc} outside [1, {MAX_NLOC}]")
    return (nloc - 1) // STRATUM_WIDTH


@dataclass(frozen=True)
class CodeSnippet:
    id: str
    source_text: str
    language_tag: str
    nloc: int
    stratum_index: int

    def __post_init__(self):
        if not self.id:
            raise DataError("snippet id must be non-empty")
        if self.nloc < 1:
            raise DataError(f"snippet {self.id}: nloc must be >= 1, got {self.nloc}")
        physical = len(self.source_text.splitlines())
        if self.nloc > physical:
            raise DataError(
                f"snippet {self.id}: nloc {self.nloc} exceeds {physical} physical lines"
            )
        expected = stratum_for_nloc(self.nloc)
        if self.stratum_index != expected:
            raise DataError(
                f"snippet {self.id}: stratum_index {self.stratum_index} "
                f"inconsistent with nloc {self.nloc} (expected {expected})"
            )

    @classmethod
    def from_source(cls, id: str, source_text: str, language_tag: str = "cpp") -> "CodeSnippet":
        nloc = count_nloc(source_text, language_tag)
        return cls(
            id=id,
            source_text=source_text,
            language_tag=language_tag,
            nloc=nloc,
            stratum_index=stratum_for_nloc(nloc),
        )


@dataclass(frozen=True)
class DatasetRecord:
    snippet: CodeSnippet
    reference_story: str

    def __post_init__(self):
        if not self.reference_story:
            raise DataError(f"record {self.snippet.id}: reference_story must be non-empty")


def sample_stratified(
    corpus: Sequence[CodeSnippet], per_stratum: int, seed: int
) -> list[CodeSnippet]:
    """Draw exactly `per_stratum` snippets from every populated stratum.

    Selection is a seeded shuffle within each stratum (members ordered by id
    first, so the draw is independent of input order) followed by a prefix.
    Populated strata with fewer than `per_stratum` members raise
    DeficientStrataError naming the shortfalls; strata with no members at
    all are skipped.
    """
    if per_stratum < 1:
        raise DataError("per_stratum must be >= 1")
    groups: dict[int, list[CodeSnippet]] = {}
    for snip in corpus:
        if not 1 <= snip.nloc <= MAX_NLOC:
            raise NlocRangeError(f"snippet {snip.id}: nloc {snip.nloc} outside [1, {MAX_NLOC}]")
        groups.setdefault(snip.stratum_index, []).append(snip)

    deficient = [
        STRATA[idx].label for idx in sorted(groups) if len(groups[idx]) < per_stratum
    ]
    if deficient:
        raise DeficientStrataError(deficient)

    rng = random.Random(seed)
    out: list[CodeSnippet] = []
    for idx in sorted(groups):
        members = sorted(groups[idx], key=lambda s: s.id)
        rng.shuffle(members)
        out.extend(members[:per_stratum])
    return out


def record_to_json(record: DatasetRecord) -> str:
    return json.dumps(
        {
            "id": record.snippet.id,
            "language": record.snippet.language_tag,
            "code": record.snippet.source_text,
            "nloc": record.snippet.nloc,
            "stratum": record.snippet.stratum_index,
            "reference_story": record.reference_story,
        },
        sort_keys=True,
        ensure_ascii=False,
    )


def save_dataset(records: Iterable[DatasetRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record_to_json(record) + "\n")


def load_dataset(path: str | Path) -> list[DatasetRecord]:
    """Load a JSON Lines dataset, validating every record's invariants.

    Malformed lines report their line number; invariant violations report
    the offending record id.
    """
    records: list[DatasetRecord] = []
    seen_ids: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}: malformed JSON on line {lineno}: {exc}") from exc
            if not isinstance(obj, dict):
                raise DatasetError(f"{path}: line {lineno} is not an object")
            missing = {"id", "language", "code", "nloc", "stratum", "reference_story"} - set(obj)
            if missing:
                raise DatasetError(
                    f"{path}: line {lineno} missing keys: {', '.join(sorted(missing))}"
                )
            rec_id = obj["id"]
            if rec_id in seen_ids:
                raise DatasetError(f"{path}: duplicate record id {rec_id!r} on line {lineno}")
            seen_ids.add(rec_id)
            try:
                snippet = CodeSnippet(
                    id=rec_id,
                    source_text=obj["code"],
                    language_tag=obj["language"],
                    nloc=obj["nloc"],
                    stratum_index=obj["stratum"],
                )
                records.append(DatasetRecord(snippet=snippet, reference_story=obj["reference_story"]))
            except (DataError, TypeError) as exc:
                raise DatasetError(f"{path}: record {rec_id!r}: {exc}") from exc
    return records


def profile_files(
    paths: Iterable[Path], language_tag: str = "cpp"
) -> tuple[list[tuple[str, int, int | None]], list[str]]:
    """Measure NLOC for each file; returns (rows, warnings).

    Each row is (path, nloc, stratum_index) with stratum None outside the
    [1, 350] design range. Files that fail to lex are skipped with a warning.
    """
    rows: list[tuple[str, int, int | None]] = []
    warnings: list[str] = []
    for p in paths:
        try:
            text = Path(p).read_text(encoding="utf-8")
            nloc = count_nloc(text, language_tag)
        except (DataError, UnicodeDecodeError, OSError) as exc:
            warnings.append(f"{p}: {exc}")
            continue
        stratum = stratum_for_nloc(nloc) if nloc <= MAX_NLOC else None
        rows.append((str(p), nloc, stratum))
    return rows, warnings

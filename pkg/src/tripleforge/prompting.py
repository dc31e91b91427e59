"""Prompt rendering and output parsing for three extraction formats.

``tableie`` emits one pipe-delimited row per triple under a fixed header and
is the only format usable zero-shot; ``textie`` and ``codeie`` are few-shot
baseline grammars.  Parsing is lenient: malformed lines are skipped and
recorded, never fatal, because model output is untrusted.
"""
from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass
from typing import Optional, Sequence

from .core import Sample, Triple, TripleSet, align_entity_offsets

log = logging.getLogger(__name__)

TABLE_HEADER = "|step|predicate|subject type|subject|object type|object|"
ZERO_SHOT_INSTRUCTION = "Extract the relational triples from the sentence below."
FEW_SHOT_INSTRUCTION = "Extract the relational triples from the sentences below."
CODE_HEADER = "def extract():"


class PromptFormat(enum.Enum):
    TABLEIE = "tableie"
    TEXTIE = "textie"
    CODEIE = "codeie"

    @classmethod
    def parse(cls, tag: str) -> "PromptFormat":
        try:
            return cls(tag.lower())
        except ValueError:
            raise ValueError(f"unknown prompt format {tag!r}, expected one of "
                             f"{[f.value for f in cls]}") from None


@dataclass(frozen=True)
class Demonstration:
    """An annotated in-context example plus its mean similarity to the test set."""

    sample: Sample
    gold: TripleSet
    similarity_score: float

    @property
    def is_empty_gold(self) -> bool:
        return len(self.gold) == 0


@dataclass(frozen=True)
class ParsedExtraction:
    """Result of parsing raw model output: recovered triples plus skip audit."""

    triples: TripleSet
    skipped_rows: int
    diagnostics: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if self.skipped_rows != len(self.diagnostics):
            raise ValueError("skipped_rows must equal the number of diagnostics")


# --- escaping -------------------------------------------------------------
# The serializers escape the backslash plus each grammar's structural
# characters so that any single-line cell content round-trips.

def _escape(text: str, specials: str) -> str:
    out = []
    for ch in text:
        if ch == "\\" or ch in specials:
            out.append("\\")
        out.append(ch)
    return "".join(out)


def _unescape(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            out.append(text[i + 1])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _split_unescaped(text: str, sep: str, maxsplit: int = -1) -> list[str]:
    """Split on an unescaped separator sequence, leaving escapes intact."""
    parts: list[str] = []
    buf: list[str] = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\\" and i + 1 < n:
            buf.append(text[i:i + 2])
            i += 2
            continue
        if text.startswith(sep, i) and (maxsplit < 0 or len(parts) < maxsplit):
            parts.append("".join(buf))
            buf = []
            i += len(sep)
            continue
        buf.append(ch)
        i += 1
    parts.append("".join(buf))
    return parts


# --- serialization --------------------------------------------------------

def _table_row(step: int, t: Triple) -> str:
    cells = (t.predicate, t.subject_type, t.subject, t.object_type, t.object)
    return "|" + "|".join([str(step)] + [_escape(c, "|") for c in cells]) + "|"


def _text_line(t: Triple) -> str:
    st, s, p, ot, o = (
        _escape(t.subject_type, ",:()"),
        _escape(t.subject, ",:()"),
        _escape(t.predicate, ",:()"),
        _escape(t.object_type, ",:()"),
        _escape(t.object, ",:()"),
    )
    return f"({st}: {s}, {p}, {ot}: {o})"


def _code_line(t: Triple) -> str:
    def q(value: str) -> str:
        return '"' + _escape(value, '"') + '"'

    return (f'    triple(predicate={q(t.predicate)}, subject_type={q(t.subject_type)}, '
            f'subject={q(t.subject)}, object_type={q(t.object_type)}, object={q(t.object)})')


def serialize_triples(fmt: PromptFormat, ts: TripleSet) -> str:
    """Serialize a triple set under the given grammar (no table header;
    the codeie block includes its ``def extract():`` opener)."""
    if fmt is PromptFormat.TABLEIE:
        return "\n".join(_table_row(k, t) for k, t in enumerate(ts, start=1))
    if fmt is PromptFormat.TEXTIE:
        return "\n".join(_text_line(t) for t in ts)
    if fmt is PromptFormat.CODEIE:
        return "\n".join([CODE_HEADER] + [_code_line(t) for t in ts])
    raise ValueError(f"unhandled format {fmt}")


# --- parsing --------------------------------------------------------------

def _is_table_header(stripped: str) -> bool:
    return stripped in (TABLE_HEADER, TABLE_HEADER.rstrip("|"))


def _split_table_cells(line: str) -> Optional[list[str]]:
    """Interior cells of a pipe row, honoring ``\\|`` escapes.

    A missing final pipe is tolerated (the residue becomes the last cell);
    returns None when the line does not start with a pipe.
    """
    if not line.startswith("|"):
        return None
    cells: list[str] = []
    buf: list[str] = []
    i = 1
    n = len(line)
    while i < n:
        ch = line[i]
        if ch == "\\" and i + 1 < n:
            buf.append(line[i:i + 2])
            i += 2
            continue
        if ch == "|":
            cells.append("".join(buf))
            buf = []
            i += 1
            continue
        buf.append(ch)
        i += 1
    residue = "".join(buf)
    if residue.strip():
        cells.append(residue)
    return cells


def _is_divider_row(cells: Sequence[str]) -> bool:
    # markdown separator rows like |---|:--:|; never produced by the
    # serializer, whose step cell is always numeric
    return all(c.strip() and set(c.strip()) <= set("-:= ") for c in cells)


def _triple_from_fields(fields: Sequence[str], sentence: str) -> Triple:
    predicate, subject_type, subject, object_type, obj = fields
    return Triple(
        predicate=predicate,
        subject_type=subject_type,
        subject=subject,
        object_type=object_type,
        object=obj,
        subject_span=align_entity_offsets(sentence, subject.strip()),
        object_span=align_entity_offsets(sentence, obj.strip()),
    )


def _parse_table(raw: str, sentence: str):
    triples: list[Triple] = []
    diagnostics: list[tuple[str, str]] = []
    for line in raw.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        if _is_table_header(stripped):
            continue
        cells = _split_table_cells(stripped)
        if cells is None:
            diagnostics.append((line, "not a table row"))
            continue
        if _is_divider_row(cells):
            continue
        if len(cells) != 6:
            diagnostics.append((line, f"wrong cell count: expected 6, got {len(cells)}"))
            continue
        fields = [_unescape(c.strip()) for c in cells[1:]]
        try:
            triples.append(_triple_from_fields(fields, sentence))
        except ValueError as exc:
            diagnostics.append((line, f"invalid triple: {exc}"))
    return triples, diagnostics


def _parse_text(raw: str, sentence: str):
    triples: list[Triple] = []
    diagnostics: list[tuple[str, str]] = []
    for line in raw.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        if not (stripped.startswith("(") and stripped.endswith(")") and len(stripped) >= 2):
            diagnostics.append((line, "not a parenthesized triple"))
            continue
        segments = _split_unescaped(stripped[1:-1], ", ")
        if len(segments) != 3:
            diagnostics.append((line, f"wrong segment count: expected 3, got {len(segments)}"))
            continue
        subj_part = _split_unescaped(segments[0], ": ", maxsplit=1)
        obj_part = _split_unescaped(segments[2], ": ", maxsplit=1)
        if len(subj_part) != 2 or len(obj_part) != 2:
            diagnostics.append((line, "missing 'type: surface' separator"))
            continue
        fields = [_unescape(x) for x in (segments[1], subj_part[0], subj_part[1],
                                         obj_part[0], obj_part[1])]
        try:
            triples.append(_triple_from_fields(fields, sentence))
        except ValueError as exc:
            diagnostics.append((line, f"invalid triple: {exc}"))
    return triples, diagnostics


_QUOTED = r'"((?:[^"\\]|\\.)*)"'

_CODE_ROW = re.compile(
    r"^triple\(predicate=" + _QUOTED
    + r", subject_type=" + _QUOTED
    + r", subject=" + _QUOTED
    + r", object_type=" + _QUOTED
    + r", object=" + _QUOTED + r"\)$"
)


def _parse_code(raw: str, sentence: str):
    triples: list[Triple] = []
    diagnostics: list[tuple[str, str]] = []
    for line in raw.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        if stripped == CODE_HEADER:
            continue
        m = _CODE_ROW.match(stripped)
        if m is None:
            diagnostics.append((line, "not a triple(...) call"))
            continue
        fields = [_unescape(g) for g in m.groups()]
        try:
            triples.append(_triple_from_fields(fields, sentence))
        except ValueError as exc:
            diagnostics.append((line, f"invalid triple: {exc}"))
    return triples, diagnostics


def parse_output(fmt: PromptFormat, raw: str, sentence: str) -> ParsedExtraction:
    """Parse raw model output against ``sentence``; never raises on bad input."""
    if fmt is PromptFormat.TABLEIE:
        triples, diagnostics = _parse_table(raw, sentence)
    elif fmt is PromptFormat.TEXTIE:
        triples, diagnostics = _parse_text(raw, sentence)
    elif fmt is PromptFormat.CODEIE:
        triples, diagnostics = _parse_code(raw, sentence)
    else:
        raise ValueError(f"unhandled format {fmt}")
    return ParsedExtraction(
        triples=TripleSet.of(triples),
        skipped_rows=len(diagnostics),
        diagnostics=tuple(diagnostics),
    )


# --- prompt assembly ------------------------------------------------------

def render_zero_shot(sample: Sample) -> str:
    """Three-line zero-shot prompt: instruction, sentence, table header."""
    return f"{ZERO_SHOT_INSTRUCTION}\n{sample.text}\n{TABLE_HEADER}"


def render_few_shot(fmt: PromptFormat, demos: Sequence[Demonstration], query: Sample) -> str:
    """Compose a few-shot prompt from demonstrations already sorted by
    ascending similarity (most similar demonstration adjacent to the query)."""
    scores = [d.similarity_score for d in demos]
    if any(a > b for a, b in zip(scores, scores[1:])):
        raise ValueError("demonstration order violated: similarity scores must be ascending")
    for d in demos:
        if d.is_empty_gold:
            log.warning("demonstration %s has no gold triples", d.sample.id)

    parts: list[str] = [FEW_SHOT_INSTRUCTION, "\n"]
    for d in demos:
        parts.append(d.sample.text)
        parts.append("\n")
        if fmt is PromptFormat.TABLEIE:
            parts.append(TABLE_HEADER)
            parts.append("\n")
        serialized = serialize_triples(fmt, d.gold)
        if serialized:
            parts.append(serialized)
            parts.append("\n")
        parts.append("\n")
    parts.append(query.text)
    if fmt is PromptFormat.TABLEIE:
        parts.append("\n")
        parts.append(TABLE_HEADER)
    return "".join(parts)


def count_characters(outputs: Sequence[str]) -> tuple[int, float, int, int]:
    """Code-point character statistics over model outputs:
    (total, average, minimum, maximum).  Raises on an empty list because the
    average and extrema are undefined."""
    if not outputs:
        raise ValueError("count_characters requires at least one output")
    lengths = [len(o) for o in outputs]
    total = sum(lengths)
    return total, total / len(lengths), min(lengths), max(lengths)

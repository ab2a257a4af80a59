"""Dataset model, ingestion, and human-score normalization.

Datasets are sequences of :class:`AnnotatedSegment`. Two on-disk formats are
supported: JSONL (one object per line, full fidelity) and TSV with a fixed
header of ``src, mt, ref, score, langs, system`` where empty cells mean an
absent value. Human scores live on a single 0-100 scale throughout the
package; MQM error counts are converted onto that scale by
:func:`mqm_to_score`.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import DataFormatError

JSONL_KEYS = ("id", "src", "mt", "ref", "langs", "system", "score", "domain", "doc")
TSV_COLUMNS = ("src", "mt", "ref", "score", "langs", "system")


@dataclass(frozen=True)
class AnnotatedSegment:
    """One (source, translation) unit with its annotations."""

    id: str
    src: str
    mt: str
    ref: Optional[str] = None
    langs: Optional[str] = None
    system: Optional[str] = None
    score: Optional[float] = None
    domain: Optional[str] = None
    doc: Optional[str] = None

    def __post_init__(self):
        if not self.src:
            raise ValueError("src must be non-empty")
        if not self.mt:
            raise ValueError("mt must be non-empty")
        if self.score is not None and not 0.0 <= self.score <= 100.0:
            raise ValueError(f"score {self.score} outside [0, 100]")

    def with_score(self, score: float) -> "AnnotatedSegment":
        return replace(self, score=score)


@dataclass(frozen=True)
class MqmAnnotation:
    """Counts of annotated MQM errors on one translation."""

    major: int
    minor: int

    def __post_init__(self):
        if self.major < 0 or self.minor < 0:
            raise ValueError("error counts must be non-negative")


def mqm_to_score(ann: MqmAnnotation) -> float:
    """Convert MQM error counts to a scalar on the 0-100 scale.

    The raw quality value is 1 - (5*major + 1*minor)/100; it is clamped at 0
    and scaled by 100 so that MQM-derived scores are bounded and live on the
    same scale as direct-assessment scores.
    """
    raw = 1.0 - (5.0 * ann.major + 1.0 * ann.minor) / 100.0
    return max(0.0, min(1.0, raw)) * 100.0


def _segment_from_mapping(values: dict, line_no: int) -> AnnotatedSegment:
    for key in ("src", "mt"):
        if not values.get(key):
            raise DataFormatError(f"line {line_no}: missing or empty field '{key}'")
    score = values.get("score")
    if score is not None:
        try:
            score = float(score)
        except (TypeError, ValueError):
            raise DataFormatError(f"line {line_no}: field 'score' is not a number: {score!r}")
    seg_id = values.get("id") or f"L{line_no}"
    try:
        return AnnotatedSegment(
            id=str(seg_id),
            src=values["src"],
            mt=values["mt"],
            ref=values.get("ref") or None,
            langs=values.get("langs") or None,
            system=values.get("system") or None,
            score=score,
            domain=values.get("domain") or None,
            doc=values.get("doc") or None,
        )
    except ValueError as exc:
        raise DataFormatError(f"line {line_no}: {exc}") from exc


def _iter_jsonl(path: Path, strict: bool) -> Iterable[AnnotatedSegment]:
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"line {line_no}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise DataFormatError(f"line {line_no}: expected an object, got {type(obj).__name__}")
            unknown = set(obj) - set(JSONL_KEYS)
            if unknown and strict:
                raise DataFormatError(f"line {line_no}: unknown field '{sorted(unknown)[0]}'")
            yield _segment_from_mapping({k: obj.get(k) for k in JSONL_KEYS}, line_no)


def _iter_tsv(path: Path, strict: bool) -> Iterable[AnnotatedSegment]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("missing TSV header row")
        if tuple(header[: len(TSV_COLUMNS)]) != TSV_COLUMNS:
            raise DataFormatError(
                f"line 1: TSV header must start with {list(TSV_COLUMNS)}, got {header}"
            )
        if len(header) > len(TSV_COLUMNS) and strict:
            raise DataFormatError(f"line 1: unknown column '{header[len(TSV_COLUMNS)]}'")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < len(TSV_COLUMNS):
                raise DataFormatError(
                    f"line {line_no}: expected {len(TSV_COLUMNS)} columns, got {len(row)}"
                )
            values = dict(zip(TSV_COLUMNS, (cell if cell != "" else None for cell in row)))
            yield _segment_from_mapping(values, line_no)


def load_dataset(path, format: Optional[str] = None, strict: bool = False) -> list[AnnotatedSegment]:
    """Load a dataset, auto-detecting the format from the suffix if not given.

    Ids are made unique: segments without an explicit id get "L<line>"; a
    duplicate explicit id is an error.
    """
    path = Path(path)
    if format is None:
        format = "tsv" if path.suffix.lower() in (".tsv", ".tab") else "jsonl"
    if format not in ("jsonl", "tsv"):
        raise ValueError(f"unknown dataset format: {format}")
    it = _iter_jsonl(path, strict) if format == "jsonl" else _iter_tsv(path, strict)
    segments: list[AnnotatedSegment] = []
    seen: set[str] = set()
    for seg in it:
        if seg.id in seen:
            raise DataFormatError(f"duplicate id '{seg.id}'")
        seen.add(seg.id)
        segments.append(seg)
    return segments


def write_dataset(path, segments: Sequence[AnnotatedSegment], format: Optional[str] = None) -> None:
    """Write segments to JSONL (full fidelity) or TSV (fixed six columns)."""
    path = Path(path)
    if format is None:
        format = "tsv" if path.suffix.lower() in (".tsv", ".tab") else "jsonl"
    if format == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for seg in segments:
                obj = {f.name: getattr(seg, f.name) for f in fields(seg)}
                obj = {k: v for k, v in obj.items() if v is not None}
                fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
    elif format == "tsv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, delimiter="\t", quoting=csv.QUOTE_NONE, lineterminator="\n")
            writer.writerow(TSV_COLUMNS)
            for seg in segments:
                score = "" if seg.score is None else format_score(seg.score)
                writer.writerow(
                    [seg.src, seg.mt, seg.ref or "", score, seg.langs or "", seg.system or ""]
                )
    else:
        raise ValueError(f"unknown dataset format: {format}")


def format_score(score: float) -> str:
    """Render a score without trailing zeros (83.0 -> "83")."""
    return f"{score:g}"


def split_by_langpair(data: Sequence[AnnotatedSegment]) -> dict[str, list[AnnotatedSegment]]:
    """Partition segments by language pair, preserving within-group order."""
    groups: dict[str, list[AnnotatedSegment]] = {}
    for seg in data:
        if not seg.langs:
            raise DataFormatError(f"segment '{seg.id}' has no language-pair tag")
        groups.setdefault(seg.langs, []).append(seg)
    return groups

"""Encode a translation corpus and write a PQE1 embedding file.

The PQE1 format is the consumer's documented on-disk interface: the 4-byte
magic "PQE1", a little-endian u32 dimension, a u64 record count, then per
record a u16 id length, the id's UTF-8 bytes, a u8 role (0=src, 1=mt,
2=ref), and dim float32 little-endian values.

One record is written per (segment, requested role present). Vectors are
L2-normalized before writing. A provenance record with the reserved id
"__meta__{json}" is prepended so the encoder identity and revision travel
inside the file; it is an ordinary record (role 0, first basis vector) that
consumers can ignore by id. The output is written to a temp file and
renamed into place.
"""

from __future__ import annotations

import csv
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

MAGIC = b"PQE1"
ROLES = ("src", "mt", "ref")
META_ID_PREFIX = "__meta__"


class ExtractError(Exception):
    pass


@dataclass(frozen=True)
class ExtractConfig:
    corpus: str
    output: str
    model: str
    roles: tuple[str, ...] = ("src", "mt")
    revision: Optional[str] = None
    batch_size: int = 32
    expect_dim: Optional[int] = None

    def __post_init__(self):
        unknown = set(self.roles) - set(ROLES)
        if unknown:
            raise ValueError(f"unknown roles {sorted(unknown)}, expected subset of {ROLES}")
        if not self.roles:
            raise ValueError("at least one role is required")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


@dataclass(frozen=True)
class Segment:
    id: str
    texts: dict[str, str] = field(default_factory=dict)  # role -> text


def read_corpus(path) -> list[Segment]:
    """Minimal reader for the consumer's JSONL/TSV dataset formats."""
    path = Path(path)
    if path.suffix.lower() in (".tsv", ".tab"):
        return _read_tsv(path)
    return _read_jsonl(path)


def _read_jsonl(path: Path) -> list[Segment]:
    segments = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ExtractError(f"{path} line {line_no}: invalid JSON: {exc}") from exc
            texts = {}
            for role, key in (("src", "src"), ("mt", "mt"), ("ref", "ref")):
                value = obj.get(key)
                if value:
                    texts[role] = value
            segments.append(Segment(id=str(obj.get("id") or f"L{line_no}"), texts=texts))
    return segments


def _read_tsv(path: Path) -> list[Segment]:
    segments = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        header = next(reader, None)
        if header is None or header[:2] != ["src", "mt"]:
            raise ExtractError(f"{path}: expected a TSV header starting with src, mt")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            texts = {}
            for role, column in (("src", 0), ("mt", 1), ("ref", 2)):
                if column < len(row) and row[column]:
                    texts[role] = row[column]
            segments.append(Segment(id=f"L{line_no}", texts=texts))
    return segments


def load_encoder(cfg: ExtractConfig):
    """Load the sentence encoder named by the config (path or model id)."""
    try:
        from sentence_transformers import SentenceTransformer
    except ImportError as exc:  # pragma: no cover - hard dependency
        raise ExtractError(f"sentence-transformers is not installed: {exc}") from exc
    try:
        if cfg.revision:
            return SentenceTransformer(cfg.model, revision=cfg.revision)
        return SentenceTransformer(cfg.model)
    except Exception as exc:
        raise ExtractError(f"cannot load encoder '{cfg.model}': {exc}") from exc


def _encode(encoder, texts: Sequence[str], batch_size: int) -> np.ndarray:
    vectors = encoder.encode(
        list(texts),
        batch_size=batch_size,
        convert_to_numpy=True,
        normalize_embeddings=False,
        show_progress_bar=False,
    )
    return np.asarray(vectors, dtype=np.float64)


def _meta_record(cfg: ExtractConfig, dim: int) -> tuple[str, str, np.ndarray]:
    provenance = {"encoder": cfg.model, "revision": cfg.revision or "unpinned"}
    basis = np.zeros(dim)
    basis[0] = 1.0
    return META_ID_PREFIX + json.dumps(provenance, sort_keys=True), "src", basis


def write_pqe1(path, dim: int, records: Sequence[tuple[str, str, np.ndarray]]) -> None:
    """Write records atomically in the PQE1 format (temp file + rename)."""
    role_byte = {name: i for i, name in enumerate(ROLES)}
    directory = Path(path).parent
    fd, tmp_name = tempfile.mkstemp(dir=directory, suffix=".pqe1.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", dim))
            fh.write(struct.pack("<Q", len(records)))
            for segment_id, role, vector in records:
                id_bytes = segment_id.encode("utf-8")
                fh.write(struct.pack("<H", len(id_bytes)))
                fh.write(id_bytes)
                fh.write(struct.pack("<B", role_byte[role]))
                fh.write(np.ascontiguousarray(vector, dtype="<f4").tobytes())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def extract(cfg: ExtractConfig, encoder=None) -> int:
    """Encode the corpus and write the embedding file; returns the record count.

    One record per (segment, requested role present), unit norm, preceded
    by the provenance record. Deterministic for a fixed encoder revision
    and input file.
    """
    segments = read_corpus(cfg.corpus)
    if encoder is None:
        encoder = load_encoder(cfg)

    jobs = [
        (seg.id, role, seg.texts[role])
        for seg in segments
        for role in cfg.roles
        if role in seg.texts
    ]
    texts = [text for _, _, text in jobs]
    if texts:
        vectors = _encode(encoder, texts, cfg.batch_size)
        if vectors.ndim != 2 or vectors.shape[0] != len(texts):
            raise ExtractError(f"encoder returned shape {vectors.shape} for {len(texts)} texts")
        dim = int(vectors.shape[1])
    else:
        vectors = np.empty((0, 0))
        dim = _encoder_dim(encoder)
    if cfg.expect_dim is not None and dim != cfg.expect_dim:
        raise ExtractError(f"encoder dimension {dim} != declared expectation {cfg.expect_dim}")

    norms = np.linalg.norm(vectors, axis=1) if len(texts) else np.empty(0)
    if np.any(norms == 0.0):
        bad = jobs[int(np.flatnonzero(norms == 0.0)[0])]
        raise ExtractError(f"encoder produced a zero vector for segment '{bad[0]}' role '{bad[1]}'")

    records = [_meta_record(cfg, dim)]
    for (segment_id, role, _), vector, norm in zip(jobs, vectors, norms):
        records.append((segment_id, role, vector / norm))
    write_pqe1(cfg.output, dim, records)
    return len(records)


def _encoder_dim(encoder) -> int:
    getter = getattr(encoder, "get_sentence_embedding_dimension", None)
    dim = getter() if callable(getter) else getattr(encoder, "dim", None)
    if not dim:
        raise ExtractError("cannot determine the encoder's output dimension for an empty corpus")
    return int(dim)

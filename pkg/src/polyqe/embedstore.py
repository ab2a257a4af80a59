"""Embedding file format and in-memory store.

Embeddings are keyed by (segment id, role) where role is one of src, mt,
ref. On disk they live in the "PQE1" binary format: the 4-byte magic,
a little-endian u32 dimension, a u64 record count, then per record a u16
id length, the id's UTF-8 bytes, a u8 role, and dim 32-bit little-endian
IEEE-754 floats. Storage is 32-bit; all arithmetic on vectors happens in
64-bit after L2 normalization.

:func:`fallback_embed` is a deterministic hashing embedder used where no
pretrained encoder output is available (hermetic tests, smoke runs).
"""

from __future__ import annotations

import hashlib
import logging
import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DataFormatError

logger = logging.getLogger(__name__)

MAGIC = b"PQE1"
ROLES = ("src", "mt", "ref")
_ROLE_TO_BYTE = {name: i for i, name in enumerate(ROLES)}


class EmbeddingStore:
    """Immutable-after-load map from (segment id, role) to a dense vector.

    Raw float32 records are kept verbatim so that a load/write round trip
    is bit-exact; :meth:`get` hands out L2-normalized float64 views for all
    downstream arithmetic.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = int(dim)
        self._raw: dict[tuple[str, str], np.ndarray] = {}
        self._unit: dict[tuple[str, str], np.ndarray] = {}

    def add(self, segment_id: str, role: str, vector) -> None:
        if role not in _ROLE_TO_BYTE:
            raise ValueError(f"unknown role '{role}', expected one of {ROLES}")
        vec = np.asarray(vector, dtype=np.float32)
        if vec.shape != (self.dim,):
            raise ValueError(f"vector for ({segment_id}, {role}) has length {vec.size}, expected {self.dim}")
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"vector for ({segment_id}, {role}) has non-finite components")
        key = (segment_id, role)
        if key in self._raw:
            logger.warning("duplicate embedding record for %s; last write wins", key)
            self._unit.pop(key, None)
        self._raw[key] = vec

    def __len__(self) -> int:
        return len(self._raw)

    def __contains__(self, key: tuple[str, str]) -> bool:
        return key in self._raw

    def keys(self) -> Iterator[tuple[str, str]]:
        return iter(self._raw)

    def get(self, segment_id: str, role: str) -> np.ndarray:
        """Return the unit-normalized float64 vector for (segment_id, role)."""
        key = (segment_id, role)
        unit = self._unit.get(key)
        if unit is None:
            raw = self._raw.get(key)
            if raw is None:
                raise KeyError(f"no embedding for segment '{segment_id}' with role '{role}'")
            unit = l2_normalize(raw.astype(np.float64))
            unit.setflags(write=False)
            self._unit[key] = unit
        return unit

    def raw(self, segment_id: str, role: str) -> np.ndarray:
        return self._raw[(segment_id, role)]


def l2_normalize(vector: np.ndarray) -> np.ndarray:
    vec = np.asarray(vector, dtype=np.float64)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return vec / norm


def cosine(a, b) -> float:
    """Cosine similarity with 64-bit accumulation, clamped to [-1, 1]."""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise ValueError(f"length mismatch: {va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine is undefined for zero-norm input")
    return float(np.clip(float(va @ vb) / (na * nb), -1.0, 1.0))


def fallback_embed(text: str, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic hashing embedder: character 3-grams into dim buckets.

    Each 3-gram is hashed with a seeded 64-bit keyed hash, bucket counts are
    accumulated, and the result is L2-normalized. Texts shorter than three
    characters hash as a single gram, so the output never has zero norm.
    Byte-identical across platforms for fixed (text, dim, seed).
    """
    if dim < 1:
        raise ValueError("dim must be positive")
    key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    grams = [text[i : i + 3] for i in range(len(text) - 2)] or [text]
    counts = np.zeros(dim, dtype=np.float64)
    for gram in grams:
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=key).digest()
        counts[int.from_bytes(digest, "little") % dim] += 1.0
    return counts / np.linalg.norm(counts)


def write_embeddings(path, store: EmbeddingStore) -> None:
    """Write the store in the PQE1 format, preserving record order."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", store.dim))
        fh.write(struct.pack("<Q", len(store)))
        for segment_id, role in store.keys():
            id_bytes = segment_id.encode("utf-8")
            if len(id_bytes) > 0xFFFF:
                raise ValueError(f"segment id too long: {segment_id[:32]}...")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(struct.pack("<B", _ROLE_TO_BYTE[role]))
            fh.write(store.raw(segment_id, role).astype("<f4").tobytes())


def load_embeddings(path) -> EmbeddingStore:
    """Load a PQE1 file, validating structure and finiteness.

    Duplicate (id, role) records are collapsed last-write-wins with a
    warning. Malformed input raises :class:`DataFormatError` naming the
    byte offset of the problem.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 16:
        raise DataFormatError(f"{path}: truncated header at byte {len(data)} (need 16 bytes)")
    if data[:4] != MAGIC:
        raise DataFormatError(f"{path}: bad magic {data[:4]!r} at byte 0, expected {MAGIC!r}")
    dim = struct.unpack_from("<I", data, 4)[0]
    count = struct.unpack_from("<Q", data, 8)[0]
    if dim < 1:
        raise DataFormatError(f"{path}: dimension {dim} at byte 4 must be positive")
    store = EmbeddingStore(dim)
    offset = 16
    vec_bytes = 4 * dim
    for index in range(count):
        if offset + 2 > len(data):
            raise DataFormatError(f"{path}: truncated record {index} at byte {offset}")
        id_len = struct.unpack_from("<H", data, offset)[0]
        offset += 2
        record_end = offset + id_len + 1 + vec_bytes
        if record_end > len(data):
            raise DataFormatError(f"{path}: truncated record {index} at byte {offset}")
        segment_id = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        role_byte = data[offset]
        offset += 1
        if role_byte >= len(ROLES):
            raise DataFormatError(f"{path}: unknown role byte {role_byte} at byte {offset - 1}")
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset)
        if not np.all(np.isfinite(vec)):
            bad = int(np.flatnonzero(~np.isfinite(vec))[0])
            raise DataFormatError(
                f"{path}: non-finite component {bad} of record {index} at byte {offset + 4 * bad}"
            )
        store.add(segment_id, ROLES[role_byte], vec)
        offset += vec_bytes
    if offset != len(data):
        raise DataFormatError(f"{path}: {len(data) - offset} trailing bytes at byte {offset}")
    return store

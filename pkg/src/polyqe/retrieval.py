"""Exact cosine top-k retrieval over an annotated knowledge base.

Keys are built from segment embeddings in one of four ways: the source
embedding, the translation embedding, their normalized sum, or their
normalized concatenation. Search is an exact scan; results are ordered by
similarity descending with ties broken by ascending entry order, which
makes every retrieval deterministic. Filters: id exclusion, (src, mt)
text-pair exclusion (the "exact match" discard used at training time), and
similarity bounds where the lower bound is inclusive and the upper bound
exclusive (an upper bound of 0.7 keeps strictly-less-similar entries).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .corpus import AnnotatedSegment
from .embedstore import EmbeddingStore, l2_normalize
from .errors import DataFormatError

KEY_MODES = ("src", "tgt", "sum", "concat")


@dataclass(frozen=True)
class Closest:
    pass


@dataclass(frozen=True)
class Nth:
    j: int

    def __post_init__(self):
        if self.j < 1:
            raise ValueError("nth selector is 1-based: j must be >= 1")


@dataclass(frozen=True)
class RandomPick:
    seed: int


Selector = Union[Closest, Nth, RandomPick]


def parse_selector(text: str) -> Selector:
    """Parse "closest", "nth:<j>", or "random:<seed>"."""
    if text == "closest":
        return Closest()
    kind, _, arg = text.partition(":")
    if kind == "nth" and arg:
        return Nth(int(arg))
    if kind == "random" and arg:
        return RandomPick(int(arg))
    raise ValueError(f"unknown selector '{text}' (use closest, nth:<j>, random:<seed>)")


@dataclass(frozen=True)
class RetrievalQuery:
    key: np.ndarray
    k: int = 5
    exclude_ids: frozenset = frozenset()
    exclude_texts: Optional[tuple[str, str]] = None
    min_similarity: Optional[float] = None
    max_similarity: Optional[float] = None
    selector: Selector = field(default_factory=Closest)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


class RetrievalIndex:
    """Immutable scan index: unit key vectors plus segment payloads."""

    def __init__(self, key_mode: str, ids: list[str], keys: np.ndarray,
                 payloads: list[AnnotatedSegment]):
        self.key_mode = key_mode
        self.ids = ids
        self.keys = keys
        self.payloads = payloads
        self.dim = int(keys.shape[1]) if keys.size else 0
        self._by_id = {seg_id: i for i, seg_id in enumerate(ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def payload(self, segment_id: str) -> AnnotatedSegment:
        return self.payloads[self._by_id[segment_id]]


def query_key(store: EmbeddingStore, segment_id: str, key_mode: str) -> np.ndarray:
    """Unit key vector for one segment under the given key construction."""
    if key_mode not in KEY_MODES:
        raise ValueError(f"unknown key mode '{key_mode}', expected one of {KEY_MODES}")
    try:
        if key_mode == "src":
            return store.get(segment_id, "src")
        if key_mode == "tgt":
            return store.get(segment_id, "mt")
        s_e = store.get(segment_id, "src")
        t_e = store.get(segment_id, "mt")
    except KeyError as exc:
        raise DataFormatError(str(exc)) from exc
    if key_mode == "sum":
        try:
            return l2_normalize(s_e + t_e)
        except ValueError:
            raise DataFormatError(
                f"segment '{segment_id}': source and translation embeddings cancel, "
                "sum key has zero norm"
            )
    return l2_normalize(np.concatenate([s_e, t_e]))


def build_index(data: Sequence[AnnotatedSegment], store: EmbeddingStore,
                key_mode: str) -> RetrievalIndex:
    """Build the scan index in input order; every entry needs its embeddings."""
    ids = []
    payloads = []
    rows = []
    for seg in data:
        rows.append(query_key(store, seg.id, key_mode))
        ids.append(seg.id)
        payloads.append(seg)
    key_dim = store.dim * (2 if key_mode == "concat" else 1)
    keys = np.vstack(rows) if rows else np.empty((0, key_dim))
    return RetrievalIndex(key_mode=key_mode, ids=ids, keys=keys, payloads=payloads)


def _ranked_order(similarities: np.ndarray) -> np.ndarray:
    # Stable sort on negated similarity: descending, ties by entry order.
    return np.argsort(-similarities, kind="stable")


def _apply_selector(pool: list[int], similarities: np.ndarray, k: int,
                    selector: Selector) -> list[int]:
    if isinstance(selector, Closest):
        return pool[:k]
    if isinstance(selector, Nth):
        return pool[selector.j - 1 : selector.j]
    if isinstance(selector, RandomPick):
        rng = np.random.default_rng(selector.seed)
        take = min(k, len(pool))
        positions = sorted(int(p) for p in rng.choice(len(pool), size=take, replace=False))
        return [pool[p] for p in positions]
    raise TypeError(f"unknown selector {selector!r}")


def topk(index: RetrievalIndex, query: RetrievalQuery) -> list[tuple[str, float]]:
    """Up to k (segment id, similarity) pairs, similarity non-increasing."""
    if not len(index):
        return []
    key = np.asarray(query.key, dtype=np.float64)
    if key.shape != (index.dim,):
        raise ValueError(f"query key has length {key.shape}, index dim is {index.dim}")
    similarities = index.keys @ l2_normalize(key)
    np.clip(similarities, -1.0, 1.0, out=similarities)
    # nth and random need the whole post-filter pool; closest only the first k
    stop_at = query.k if isinstance(query.selector, Closest) else None
    pool = []
    for i in _ranked_order(similarities):
        i = int(i)
        if index.ids[i] in query.exclude_ids:
            continue
        payload = index.payloads[i]
        if query.exclude_texts is not None and (payload.src, payload.mt) == query.exclude_texts:
            continue
        sim = float(similarities[i])
        if query.min_similarity is not None and sim < query.min_similarity:
            continue
        if query.max_similarity is not None and sim >= query.max_similarity:
            continue
        pool.append(i)
        if stop_at is not None and len(pool) == stop_at:
            break
    chosen = _apply_selector(pool, similarities, query.k, query.selector)
    return [(index.ids[i], float(similarities[i])) for i in chosen]


def group_by_source(
    data: Sequence[AnnotatedSegment],
) -> dict[tuple[Optional[str], str], list[AnnotatedSegment]]:
    """Group segments sharing (language pair, source text), in data order."""
    groups: dict[tuple[Optional[str], str], list[AnnotatedSegment]] = {}
    for seg in data:
        groups.setdefault((seg.langs, seg.src), []).append(seg)
    return groups


def rank_pool(
    pool: Sequence[AnnotatedSegment],
    store: EmbeddingStore,
    t_vec: np.ndarray,
) -> list[tuple[AnnotatedSegment, float]]:
    """Rank segments by translation cosine to ``t_vec``, ties by pool order."""
    if not pool:
        return []
    sims = np.array(
        [float(np.clip(store.get(seg.id, "mt") @ t_vec, -1.0, 1.0)) for seg in pool]
    )
    return [(pool[int(i)], float(sims[int(i)])) for i in _ranked_order(sims)]


def select_from_pool(
    pool: Sequence[tuple[AnnotatedSegment, float]],
    k: int,
    selector: Selector,
) -> list[tuple[AnnotatedSegment, float]]:
    """Apply a selector to an already-ranked (segment, similarity) pool."""
    sims = np.array([sim for _, sim in pool])
    chosen = _apply_selector(list(range(len(pool))), sims, k, selector)
    return [pool[i] for i in chosen]


def ranked_same_source_pool(
    data: Sequence[AnnotatedSegment],
    store: EmbeddingStore,
    src_id: str,
    t_id: str,
    groups: Optional[dict] = None,
) -> list[tuple[AnnotatedSegment, float]]:
    """Alternative translations of the same source, ranked by translation cosine.

    The pool holds segments sharing the src text (and language pair) of the
    segment ``src_id``, whose mt text differs from that of segment ``t_id``,
    ordered by cosine similarity between translation embeddings, ties by
    data order. Pass a prebuilt :func:`group_by_source` map to avoid the
    per-call scan when ranking many queries over one dataset.
    """
    by_id = {seg.id: seg for seg in data}
    try:
        src_seg = by_id[src_id]
        t_seg = by_id[t_id]
    except KeyError as exc:
        raise KeyError(f"segment {exc} not in dataset") from exc
    if groups is None:
        groups = group_by_source(data)
    candidates = [
        seg
        for seg in groups.get((src_seg.langs, src_seg.src), [])
        if seg.mt != t_seg.mt
    ]
    return rank_pool(candidates, store, store.get(t_id, "mt"))


def candidates_same_source(
    data: Sequence[AnnotatedSegment],
    store: EmbeddingStore,
    src_id: str,
    t_id: str,
    k: int = 1,
    selector: Selector = Closest(),
) -> list[AnnotatedSegment]:
    """Select up to k alternative translations of the same source.

    Empty pool gives an empty result; callers pad feature slots as needed.
    """
    pool = ranked_same_source_pool(data, store, src_id, t_id)
    return [seg for seg, _ in select_from_pool(pool, k, selector)]

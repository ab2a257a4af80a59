"""Turn annotated segments plus an embedding store into model inputs.

This is the glue between the data model and the estimators: it picks
additional candidates or retrieves in-context examples per segment, pads
short pools, builds feature matrices, and collects targets on the [0, 1]
training scale. Segments that cannot be assembled (missing embeddings,
missing targets where required) are skipped with a recorded reason instead
of aborting the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .corpus import AnnotatedSegment
from .embedstore import EmbeddingStore
from .errors import ConfigError
from .features import (
    FeatureLayout,
    FeatureVector,
    base_features,
    polycand_features,
    polyic_features,
    with_reference,
)
from .retrieval import (
    Closest,
    RetrievalIndex,
    RetrievalQuery,
    Selector,
    build_index,
    group_by_source,
    query_key,
    rank_pool,
    select_from_pool,
    topk,
)

ASSEMBLE_MODES = ("base", "polycand", "polyic")


@dataclass(frozen=True)
class AssembleConfig:
    mode: str = "base"
    with_ref: bool = False
    with_scores: bool = False
    joint: bool = False
    n: int = 0
    key_mode: str = "src"
    selector: Selector = field(default_factory=Closest)
    min_similarity: Optional[float] = None
    max_similarity: Optional[float] = None
    abs_product: bool = True
    exclude_self: bool = True

    def problems(self) -> list[str]:
        """Every configuration inconsistency, so callers can report them all."""
        issues = []
        if self.mode not in ASSEMBLE_MODES:
            issues.append(f"unknown mode '{self.mode}'")
        if self.mode == "base" and self.n:
            issues.append("base mode takes no additional blocks (n must be 0)")
        if self.mode in ("polycand", "polyic") and self.n < 1:
            issues.append(f"{self.mode} mode needs n >= 1")
        if self.with_scores and self.mode != "polycand":
            issues.append("score augmentation applies to polycand mode only")
        if self.joint and self.mode != "polycand":
            issues.append("joint prediction applies to polycand mode only")
        if self.joint and self.with_scores:
            issues.append("joint prediction and score augmentation are mutually exclusive")
        return issues

    def validate(self) -> None:
        issues = self.problems()
        if issues:
            raise ConfigError("; ".join(issues))

    def layout(self, dim: int) -> FeatureLayout:
        return FeatureLayout(
            mode=self.mode,
            dim=dim,
            n=self.n if self.mode != "base" else 0,
            with_scores=self.with_scores,
            with_ref=self.with_ref,
            abs_product=self.abs_product,
        )

    @property
    def n_outputs(self) -> int:
        return 1 + (self.n if self.joint else 0)


@dataclass
class Assembled:
    X: np.ndarray
    Y: Optional[np.ndarray]
    ids: list[str]
    layout: FeatureLayout
    skipped: list[tuple[str, str]]
    neighbors: dict[str, list[tuple[str, Optional[float]]]]


class _SkipSegment(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def _embedding(store: EmbeddingStore, segment_id: str, role: str) -> np.ndarray:
    try:
        return store.get(segment_id, role)
    except KeyError:
        raise _SkipSegment(f"missing embedding for role '{role}'")


def _feature_vector(
    seg: AnnotatedSegment,
    source_groups: Optional[dict],
    store: EmbeddingStore,
    cfg: AssembleConfig,
    kb_index: Optional[RetrievalIndex],
    kb_store: Optional[EmbeddingStore],
) -> tuple[FeatureVector, list, list[tuple[str, Optional[float]]]]:
    s_e = _embedding(store, seg.id, "src")
    t_e = _embedding(store, seg.id, "mt")
    neighbor_log: list[tuple[str, Optional[float]]] = []
    extra_targets: list[float] = []

    if cfg.mode == "base":
        fv = base_features(s_e, t_e)
    elif cfg.mode == "polycand":
        group = [c for c in source_groups.get((seg.langs, seg.src), []) if c.mt != seg.mt]
        ranked = rank_pool(group, store, t_e)
        cands = [cand for cand, _ in select_from_pool(ranked, cfg.n, cfg.selector)]
        entries = []
        for cand in cands:
            if (cfg.with_scores or cfg.joint) and cand.score is None:
                raise _SkipSegment(f"candidate '{cand.id}' has no gold score")
            entries.append((_embedding(store, cand.id, "mt"), cand.score))
            neighbor_log.append((cand.id, None))
            if cfg.joint:
                extra_targets.append(cand.score)
        if cfg.joint and len(entries) < cfg.n:
            raise _SkipSegment(f"joint mode needs {cfg.n} scored candidates, found {len(entries)}")
        entries.extend([None] * (cfg.n - len(entries)))
        fv = polycand_features(s_e, t_e, entries, with_scores=cfg.with_scores)
    else:  # polyic
        query = RetrievalQuery(
            key=query_key(store, seg.id, cfg.key_mode),
            k=cfg.n,
            exclude_ids=frozenset({seg.id}) if cfg.exclude_self else frozenset(),
            exclude_texts=(seg.src, seg.mt) if cfg.exclude_self else None,
            min_similarity=cfg.min_similarity,
            max_similarity=cfg.max_similarity,
            selector=cfg.selector,
        )
        retrieved = topk(kb_index, query)
        entries = []
        for neighbor_id, sim in retrieved:
            payload = kb_index.payload(neighbor_id)
            if payload.score is None:
                raise _SkipSegment(f"knowledge-base segment '{neighbor_id}' has no gold score")
            entries.append(
                (
                    _embedding(kb_store, neighbor_id, "src"),
                    _embedding(kb_store, neighbor_id, "mt"),
                    payload.score,
                )
            )
            neighbor_log.append((neighbor_id, sim))
        entries.extend([None] * (cfg.n - len(entries)))
        fv = polyic_features(s_e, t_e, entries, abs_product=cfg.abs_product)

    if cfg.with_ref:
        if seg.ref is None:
            raise _SkipSegment("segment has no reference text")
        fv = with_reference(fv, _embedding(store, seg.id, "ref"), t_e)
    return fv, extra_targets, neighbor_log


def assemble(
    data: Sequence[AnnotatedSegment],
    store: EmbeddingStore,
    cfg: AssembleConfig,
    kb_data: Optional[Sequence[AnnotatedSegment]] = None,
    kb_store: Optional[EmbeddingStore] = None,
    require_targets: bool = False,
) -> Assembled:
    """Assemble the feature matrix (and target matrix when requested).

    For polyic the knowledge base defaults to the dataset itself, which is
    the training setup; pass an external annotated corpus for scoring.
    """
    cfg.validate()
    kb_data = data if kb_data is None else kb_data
    kb_store = store if kb_store is None else kb_store
    kb_index = build_index(kb_data, kb_store, cfg.key_mode) if cfg.mode == "polyic" else None
    source_groups = group_by_source(data) if cfg.mode == "polycand" else None

    rows, targets, ids = [], [], []
    skipped: list[tuple[str, str]] = []
    neighbors: dict[str, list[tuple[str, Optional[float]]]] = {}
    layout = cfg.layout(store.dim)
    for seg in data:
        try:
            if require_targets and seg.score is None:
                raise _SkipSegment("segment has no gold score")
            fv, extra_targets, neighbor_log = _feature_vector(
                seg, source_groups, store, cfg, kb_index, kb_store
            )
        except _SkipSegment as skip:
            skipped.append((seg.id, skip.reason))
            continue
        rows.append(fv.values)
        ids.append(seg.id)
        neighbors[seg.id] = neighbor_log
        if require_targets:
            targets.append([seg.score / 100.0] + [t / 100.0 for t in extra_targets])

    if not rows:
        reasons = "; ".join(f"{sid}: {why}" for sid, why in skipped[:5])
        raise ConfigError(f"no segments could be assembled ({reasons})")
    X = np.vstack(rows)
    Y = np.array(targets) if require_targets else None
    return Assembled(X=X, Y=Y, ids=ids, layout=layout, skipped=skipped, neighbors=neighbors)

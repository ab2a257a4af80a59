import numpy as np
import pytest

from polyqe.corpus import AnnotatedSegment
from polyqe.embedstore import EmbeddingStore, fallback_embed

WORDS = (
    "river stone cloud meadow lantern harbor winter copper maple signal "
    "quiet ember falcon orchard thimble velvet anchor bramble cinder dune"
).split()


def _sentence(rng: np.random.Generator, length: int = 6) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(length))


@pytest.fixture
def make_corpus():
    """Factory for a small multi-system corpus with gold scores."""

    def build(n_sources=4, n_systems=3, langs=("en-cs", "en-de"), seed=0, with_ref=False):
        rng = np.random.default_rng(seed)
        segments = []
        for lp in langs:
            for i in range(n_sources):
                src = f"{lp} {i}: " + _sentence(rng)
                ref = f"ref {lp} {i}: " + _sentence(rng) if with_ref else None
                for sys_no in range(n_systems):
                    segments.append(
                        AnnotatedSegment(
                            id=f"{lp}-s{i}-sys{sys_no}",
                            src=src,
                            mt=f"sys{sys_no} " + _sentence(rng),
                            ref=ref,
                            langs=lp,
                            system=f"sys{sys_no}",
                            score=float(np.round(rng.uniform(0, 100), 1)),
                        )
                    )
        return segments

    return build


@pytest.fixture
def make_store():
    """Factory embedding every segment's texts with the hashing embedder."""

    def build(segments, dim=8, seed=0):
        store = EmbeddingStore(dim)
        for seg in segments:
            store.add(seg.id, "src", fallback_embed(seg.src, dim, seed))
            store.add(seg.id, "mt", fallback_embed(seg.mt, dim, seed))
            if seg.ref is not None:
                store.add(seg.id, "ref", fallback_embed(seg.ref, dim, seed))
        return store

    return build

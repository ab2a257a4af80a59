import numpy as np
import pytest

from polyqe.assemble import AssembleConfig, Assembled, assemble
from polyqe.corpus import AnnotatedSegment
from polyqe.errors import ConfigError
from polyqe.features import feature_length
from polyqe.retrieval import RandomPick


class TestConfigValidation:
    def test_valid_configs(self):
        AssembleConfig(mode="base").validate()
        AssembleConfig(mode="polycand", n=2, with_scores=True).validate()
        AssembleConfig(mode="polyic", n=3).validate()

    def test_problems_are_collected_not_first_only(self):
        cfg = AssembleConfig(mode="polyic", n=0, with_scores=True, joint=True)
        issues = cfg.problems()
        assert len(issues) >= 3
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_joint_excludes_score_augmentation(self):
        assert AssembleConfig(mode="polycand", n=1, joint=True, with_scores=True).problems()


class TestBaseMode:
    def test_shapes_and_targets(self, make_corpus, make_store):
        segments = make_corpus(n_sources=3, n_systems=2)
        store = make_store(segments, dim=8)
        out = assemble(segments, store, AssembleConfig(mode="base"), require_targets=True)
        assert out.X.shape == (len(segments), 4 * 8)
        assert out.Y.shape == (len(segments), 1)
        assert np.all((out.Y >= 0) & (out.Y <= 1))
        assert out.ids == [seg.id for seg in segments]

    def test_with_ref(self, make_corpus, make_store):
        segments = make_corpus(n_sources=2, n_systems=1, with_ref=True)
        store = make_store(segments, dim=4)
        out = assemble(segments, store, AssembleConfig(mode="base", with_ref=True))
        assert out.X.shape[1] == 7 * 4
        assert out.X.shape[1] == feature_length(out.layout)

    def test_missing_embedding_skips_with_reason(self, make_corpus, make_store):
        segments = make_corpus(n_sources=2, n_systems=1)
        store = make_store(segments[:-1], dim=4)
        out = assemble(segments, store, AssembleConfig(mode="base"))
        assert out.X.shape[0] == len(segments) - 1
        assert out.skipped == [(segments[-1].id, "missing embedding for role 'src'")]

    def test_unscored_segment_skipped_when_targets_required(self, make_corpus, make_store):
        segments = make_corpus(n_sources=2, n_systems=1)
        segments[0] = AnnotatedSegment(**{**segments[0].__dict__, "score": None})
        store = make_store(segments, dim=4)
        out = assemble(segments, store, AssembleConfig(mode="base"), require_targets=True)
        assert out.skipped == [(segments[0].id, "segment has no gold score")]

    def test_nothing_assemblable_is_error(self, make_corpus):
        from polyqe.embedstore import EmbeddingStore

        segments = make_corpus(n_sources=1, n_systems=1)
        with pytest.raises(ConfigError, match="no segments"):
            assemble(segments, EmbeddingStore(4), AssembleConfig(mode="base"))


class TestPolycandMode:
    def test_feature_length_and_padding(self, make_corpus, make_store):
        segments = make_corpus(n_sources=2, n_systems=2)  # pools of size 1
        store = make_store(segments, dim=4)
        cfg = AssembleConfig(mode="polycand", n=3, with_scores=True)
        out = assemble(segments, store, cfg)
        assert out.X.shape[1] == 4 * 4 + 3 * (3 * 4 + 1)
        # only one real candidate exists per segment; the rest are padding
        for seg in segments:
            assert len(out.neighbors[seg.id]) == 1

    def test_joint_targets_align_with_candidate_order(self, make_corpus, make_store):
        segments = make_corpus(n_sources=2, n_systems=3, langs=("en-cs",))
        store = make_store(segments, dim=4)
        cfg = AssembleConfig(mode="polycand", n=2, joint=True)
        out = assemble(segments, store, cfg, require_targets=True)
        assert out.Y.shape == (len(out.ids), 3)
        by_id = {seg.id: seg for seg in segments}
        for row, seg_id in enumerate(out.ids):
            assert out.Y[row, 0] == by_id[seg_id].score / 100.0
            for slot, (cand_id, _) in enumerate(out.neighbors[seg_id], start=1):
                assert out.Y[row, slot] == by_id[cand_id].score / 100.0

    def test_joint_requires_full_pool(self, make_corpus, make_store):
        segments = make_corpus(n_sources=2, n_systems=2, langs=("en-cs",))
        store = make_store(segments, dim=4)
        cfg = AssembleConfig(mode="polycand", n=2, joint=True)  # pools only have 1
        with pytest.raises(ConfigError):
            assemble(segments, store, cfg, require_targets=True)

    def test_with_scores_requires_candidate_scores(self, make_corpus, make_store):
        segments = make_corpus(n_sources=1, n_systems=2, langs=("en-cs",))
        segments[1] = AnnotatedSegment(**{**segments[1].__dict__, "score": None})
        store = make_store(segments, dim=4)
        cfg = AssembleConfig(mode="polycand", n=1, with_scores=True)
        out = assemble(segments, store, cfg)
        assert (segments[0].id, f"candidate '{segments[1].id}' has no gold score") in out.skipped

    def test_random_selector_is_deterministic(self, make_corpus, make_store):
        segments = make_corpus(n_sources=2, n_systems=4, langs=("en-cs",))
        store = make_store(segments, dim=4)
        cfg = AssembleConfig(mode="polycand", n=1, selector=RandomPick(11))
        first = assemble(segments, store, cfg)
        second = assemble(segments, store, cfg)
        assert first.neighbors == second.neighbors


class TestPolyicMode:
    def test_self_exclusion_during_training(self, make_corpus, make_store):
        segments = make_corpus(n_sources=3, n_systems=2)
        store = make_store(segments, dim=8)
        cfg = AssembleConfig(mode="polyic", n=2, exclude_self=True)
        out = assemble(segments, store, cfg)
        for seg_id, neighbors in out.neighbors.items():
            assert seg_id not in [nid for nid, _ in neighbors]

    def test_scoring_against_external_kb(self, make_corpus, make_store):
        queries = make_corpus(n_sources=2, n_systems=1, seed=5)
        kb = make_corpus(n_sources=4, n_systems=2, seed=9)
        query_store = make_store(queries, dim=8)
        kb_store = make_store(kb, dim=8)
        cfg = AssembleConfig(mode="polyic", n=2, exclude_self=False)
        out = assemble(queries, query_store, cfg, kb_data=kb, kb_store=kb_store)
        kb_ids = {seg.id for seg in kb}
        assert out.X.shape == (len(queries), 4 * 8 + 2 * (6 * 8 + 1))
        for neighbors in out.neighbors.values():
            assert len(neighbors) == 2
            assert all(nid in kb_ids for nid, _ in neighbors)

    def test_neighbor_similarities_recorded_descending(self, make_corpus, make_store):
        segments = make_corpus(n_sources=4, n_systems=2)
        store = make_store(segments, dim=8)
        out = assemble(segments, store, AssembleConfig(mode="polyic", n=3))
        for neighbors in out.neighbors.values():
            sims = [sim for _, sim in neighbors]
            assert sims == sorted(sims, reverse=True)

    def test_returns_assembled_dataclass(self, make_corpus, make_store):
        segments = make_corpus(n_sources=2, n_systems=1)
        store = make_store(segments, dim=8)
        out = assemble(segments, store, AssembleConfig(mode="polyic", n=1))
        assert isinstance(out, Assembled)
        assert out.layout.mode == "polyic"

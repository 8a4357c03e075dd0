import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from openkbc.kb import (
    RELATED,
    KnowledgeStore,
    SnapshotError,
    TemplateRelationError,
    Triple,
    inverse,
    load_triples_tsv,
)
from openkbc.paths import PathFeature


@pytest.fixture
def store():
    return KnowledgeStore()


class TestAddTriple:
    def test_inverse_is_stored_alongside(self, store):
        store.add_triple_labels("Obama", "BornIn", "Honolulu")
        g = store.graph
        rid = g.relations.id_of("BornIn")
        s = g.entities.id_of("Obama")
        t = g.entities.id_of("Honolulu")
        assert g.has_triple(Triple(t, inverse(rid), s))

    def test_duplicate_add_is_idempotent(self, store):
        store.add_triple_labels("a", "r", "b")
        before = len(store.graph)
        store.add_triple_labels("a", "r", "b")
        assert len(store.graph) == before

    def test_template_relation_rejected(self, store):
        a = store.graph.entities.intern("a")
        b = store.graph.entities.intern("b")
        rid = store.graph.relations.id_of(RELATED)
        with pytest.raises(TemplateRelationError):
            store.add_triple(Triple(a, rid, b))

    def test_matrix_rows_set_for_both_directions(self, store):
        t = store.add_triple_labels("a", "r", "b")
        assert store.matrix.get(t.r, (t.s, t.t)) == 1
        assert store.matrix.get(inverse(t.r), (t.t, t.s)) == 1

    def test_guess_edge_skips_matrix(self, store):
        store.add_triple_labels("x", "r", "y")
        g = store.graph
        a = g.entities.intern("a")
        y = g.entities.id_of("y")
        rid = g.relations.template_id(RELATED)
        store.add_guess_edge(Triple(a, rid, y))
        assert store.matrix.get(rid, (a, y)) == 0
        assert store.entity_known("a")


class TestLookup:
    def test_empty_graph_finds_nothing(self, store):
        assert store.lookup_query("x", "r", "y") == (0, 0, 0)

    def test_partial_matches(self, store):
        # micro-KB with one fact; probe each found-bit combination
        store.add_triple_labels("David Cameron", "CitizenOf", "UK")
        assert store.lookup_query("Obama", "CitizenOf", "USA") == (0, 0, 1)
        assert store.lookup_query("Obama", "BornIn", "UK") == (0, 1, 0)

    def test_full_match(self, store):
        store.add_triple_labels("a", "r", "b")
        assert store.lookup_query("a", "r", "b") == (1, 1, 1)

    def test_interned_but_factless_names_stay_unknown(self, store):
        store.graph.entities.intern("ghost")
        store.graph.relations.intern("ghostRel")
        assert store.lookup_query("ghost", "ghostRel", "ghost") == (0, 0, 0)


class TestRelationRegistry:
    def test_inverse_is_an_involution(self, store):
        rid = store.graph.relations.intern("r")
        assert inverse(inverse(rid)) == rid
        assert inverse(rid) != rid

    def test_interning_an_inverse_label_resolves_to_the_pair(self, store):
        reg = store.graph.relations
        rid = reg.intern("BornIn")
        assert reg.intern("BornIn" + reg.inverse_suffix) == inverse(rid)

    def test_templates_preinterned(self, store):
        reg = store.graph.relations
        assert reg.is_template(reg.template_id(RELATED))


class TestIncompleteCounts:
    def _feature(self, store):
        marker = store.graph.relations.marker_id
        r1 = store.graph.relations.intern("r1")
        return PathFeature((r1, marker), gap_index=1, gap_pair=(0, 1))

    def test_first_record_starts_at_one(self, store):
        f = self._feature(store)
        store.incomplete_counts.record(2, f, f.gap_pair)
        assert store.incomplete_counts.count(2, f, f.gap_pair) == 1

    def test_three_records_count_three(self, store):
        f = self._feature(store)
        for _ in range(3):
            store.incomplete_counts.record(2, f, f.gap_pair)
        assert store.incomplete_counts.count(2, f, f.gap_pair) == 3

    def test_complete_path_rejected(self, store):
        r1 = store.graph.relations.intern("r1")
        with pytest.raises(ValueError):
            store.incomplete_counts.record(2, PathFeature((r1,)), (0, 1))

    @given(st.lists(st.integers(0, 4), min_size=1, max_size=40))
    @settings(max_examples=30, deadline=None)
    def test_counts_equal_replayed_records(self, keys):
        store = KnowledgeStore()
        marker = store.graph.relations.marker_id
        features = [
            PathFeature((store.graph.relations.intern(f"r{i}"), marker),
                        gap_index=1, gap_pair=(i, i + 1))
            for i in range(5)
        ]
        for k in keys:
            store.incomplete_counts.record(0, features[k], features[k].gap_pair)
        for i, f in enumerate(features):
            assert store.incomplete_counts.count(0, f, f.gap_pair) == keys.count(i)


class TestTaskScores:
    def test_update_and_overwrite(self, store):
        store.task_scores.update(0, 0.3)
        store.task_scores.update(0, 0.5)
        assert store.task_scores.get(0) == 0.5

    def test_extremes_allowed(self, store):
        store.task_scores.update(0, 1.0)
        store.task_scores.update(2, -1.0)
        assert store.task_scores.get(0) == 1.0
        assert store.task_scores.get(2) == -1.0

    def test_out_of_range_rejected(self, store):
        with pytest.raises(ValueError):
            store.task_scores.update(0, 1.5)

    def test_bottom_tasks_matches_published_counts(self, store):
        # 38 tasks at 25% -> 9; 14 tasks at 25% -> 3
        for i in range(38):
            store.task_scores.update(2 * i, i / 38.0)
        assert len(store.task_scores.bottom_tasks(25)) == 9
        fresh = KnowledgeStore()
        for i in range(14):
            fresh.task_scores.update(2 * i, i / 14.0)
        assert len(fresh.task_scores.bottom_tasks(25)) == 3

    def test_bottom_tasks_empty_store(self, store):
        assert store.task_scores.bottom_tasks(25) == set()

    def test_bottom_tasks_full_percentage_sorts_ascending(self, store):
        scores = {0: 0.9, 2: -0.2, 4: 0.4}
        for rid, mcc in scores.items():
            store.task_scores.update(rid, mcc)
        ranked = sorted(store.task_scores.items().items(), key=lambda kv: (kv[1], kv[0]))
        assert store.task_scores.bottom_tasks(100) == {rid for rid, _ in ranked}

    def test_bottom_tasks_tie_breaks_by_id(self, store):
        for rid in (6, 2, 4):
            store.task_scores.update(rid, 0.0)
        assert store.task_scores.bottom_tasks(34) == {2}


class TestInvariants:
    @given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 3), st.integers(0, 6)),
                    max_size=30))
    @settings(max_examples=40, deadline=None)
    def test_inverse_closure_and_matrix_consistency(self, raw):
        store = KnowledgeStore()
        for s, r, t in raw:
            store.add_triple_labels(f"e{s}", f"r{r}", f"e{t}")
        g = store.graph
        for triple in g.triples():
            assert g.has_triple(triple.inverted())
        # M=1 entries correspond to graph triples and vice versa
        for rid, pairs in store.matrix.rows().items():
            for s, t in pairs:
                assert g.has_triple(Triple(s, rid, t))
        for triple in g.triples():
            if not g.relations.is_template(triple.r):
                assert store.matrix.get(triple.r, (triple.s, triple.t)) == 1


class TestSnapshot:
    def test_empty_round_trip(self, tmp_path):
        store = KnowledgeStore()
        path = tmp_path / "snap.json"
        store.save_snapshot(path)
        loaded = KnowledgeStore.load_snapshot(path)
        assert len(loaded.graph) == 0
        assert loaded.lookup_query("a", "r", "b") == (0, 0, 0)

    def test_round_trip_preserves_lookups_and_counts(self, tmp_path):
        store = KnowledgeStore()
        store.add_triple_labels("a", "r1", "b")
        store.add_triple_labels("b", "r2", "c")
        store.add_triple_labels("c", "r1", "a")
        store.task_scores.update(store.graph.relations.id_of("r1"), 0.25)
        marker = store.graph.relations.marker_id
        feature = PathFeature(
            (store.graph.relations.id_of("r2"), marker), gap_index=1, gap_pair=(0, 2)
        )
        store.incomplete_counts.record(0, feature, (0, 2), times=4)
        path = tmp_path / "snap.json"
        store.save_snapshot(path)
        loaded = KnowledgeStore.load_snapshot(path)
        for q in [("a", "r1", "b"), ("b", "r2", "c"), ("nope", "r1", "b"), ("a", "zz", "c")]:
            assert loaded.lookup_query(*q) == store.lookup_query(*q)
        assert loaded.incomplete_counts.count(0, feature, (0, 2)) == 4
        assert loaded.task_scores.get(store.graph.relations.id_of("r1")) == 0.25

    def test_truncated_file_reports_offset_and_no_state(self, tmp_path):
        store = KnowledgeStore()
        store.add_triple_labels("a", "r", "b")
        path = tmp_path / "snap.json"
        store.save_snapshot(path)
        text = path.read_text()
        path.write_text(text[: len(text) // 2])
        with pytest.raises(SnapshotError) as err:
            KnowledgeStore.load_snapshot(path)
        assert err.value.offset > 0

    def test_wrong_format_rejected(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text(json.dumps({"format": "something-else"}))
        with pytest.raises(SnapshotError):
            KnowledgeStore.load_snapshot(path)


class TestIngestion:
    def test_tsv_load_counts_and_inverses(self, tmp_path):
        tsv = tmp_path / "facts.tsv"
        tsv.write_text("a\tr1\tb\nb\tr2\tc\n")
        store = load_triples_tsv(tsv)
        assert len(store.graph) == 4  # two facts plus their inverses
        assert store.lookup_query("a", "r1", "b") == (1, 1, 1)

    def test_malformed_line_reports_position(self, tmp_path):
        tsv = tmp_path / "facts.tsv"
        tsv.write_text("a\tr1\tb\nbad line\n")
        with pytest.raises(ValueError, match="2"):
            load_triples_tsv(tsv)

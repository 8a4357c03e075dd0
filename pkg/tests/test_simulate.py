import numpy as np
import pytest

from openkbc.engine import EngineConfig
from openkbc.executor import Params, Question
from openkbc.kb import KnowledgeStore, Triple
from openkbc.metrics import coverage, f1_pos, mcc_score
from openkbc.paths import WalkConfig
from openkbc.predictor import TrainingConfig
from openkbc.simulate import (
    BaselineFlags,
    DatasetConfig,
    SimulatedUserChannel,
    generate_datasets,
    run_evaluation,
)


class TestMetrics:
    def test_perfect_classifier(self):
        assert mcc_score(2, 0, 2, 0) == pytest.approx(1.0)
        assert f1_pos(2, 0, 0) == pytest.approx(1.0)

    def test_balanced_confusion_is_zero(self):
        assert mcc_score(1, 1, 1, 1) == pytest.approx(0.0)

    def test_all_wrong(self):
        assert mcc_score(0, 2, 0, 2) == pytest.approx(-1.0)

    def test_zero_denominator_convention(self):
        assert mcc_score(0, 0, 0, 5) == 0.0
        assert f1_pos(0, 0, 0) == 0.0

    def test_coverage_fraction(self):
        outcomes = [True] * 47 + [False] * 53
        assert coverage(outcomes) == pytest.approx(0.47)
        assert coverage([]) == 0.0

    def test_coverage_order_invariant(self):
        rng = np.random.default_rng(0)
        outcomes = [bool(b) for b in rng.integers(0, 2, size=60)]
        shuffled = list(outcomes)
        rng.shuffle(shuffled)
        assert coverage(outcomes) == pytest.approx(coverage(shuffled))


def thousand_triple_org(extra_relations=4, seed=0) -> KnowledgeStore:
    store = KnowledgeStore()
    for i in range(1000):
        store.add_triple_labels(f"bigS{i}", "bigRel", f"bigT{i}")
    rng = np.random.default_rng(seed)
    for k in range(extra_relations):
        for i in range(30):
            store.add_triple_labels(f"e{k}_{i}", f"smallRel{k}", f"f{k}_{i}")
    return store


class TestGenerateDatasets:
    def _config(self, **over):
        base = dict(per_relation_cap=1000, min_triples=20, seed=4,
                    entity_removal_fraction=1e-9)
        base.update(over)
        return DatasetConfig(**base)

    def _big_known_bundle(self):
        # pick a seed under which the thousand-triple relation stays known
        for seed in range(10):
            bundle = generate_datasets(
                thousand_triple_org(), self._config(seed=seed))
            if "bigRel" in bundle.known_relations:
                return bundle
        raise AssertionError("no seed kept the big relation known")

    def test_partition_sizes_for_thousand_triples(self):
        bundle = self._big_known_bundle()
        split = bundle.splits["bigRel"]
        positives = lambda bucket: [q for q in bucket if q.label]
        assert len(positives(split.train)) == 600
        assert len(positives(split.val)) == 100
        assert len(positives(split.test)) == 200
        # the residue (exactly 100 here) went to the user KB
        user_facts = [
            t for t in bundle.user.graph.forward_triples()
            if bundle.user.graph.relations.label(t.r) == "bigRel"
        ]
        assert len(user_facts) == 100

    def test_negatives_two_per_positive_and_disjoint(self):
        bundle = self._big_known_bundle()
        org = bundle.original.graph
        for split in bundle.splits.values():
            for bucket in (split.train, split.val, split.test):
                pos = [q for q in bucket if q.label]
                neg = [q for q in bucket if not q.label]
                assert len(neg) == 2 * len(pos)
                for q in neg:
                    s = org.entities.id_of(q.triple.s)
                    r = org.relations.id_of(q.triple.r)
                    t = org.entities.id_of(q.triple.t)
                    if None in (s, r, t):
                        continue
                    assert not org.has_triple(Triple(s, r, t))

    def test_no_test_triple_in_base_kb(self):
        bundle = generate_datasets(thousand_triple_org(), self._config())
        base = bundle.base.graph
        for split in bundle.splits.values():
            for q in split.test:
                if not q.label:
                    continue
                s = base.entities.id_of(q.triple.s)
                r = base.relations.id_of(q.triple.r)
                t = base.entities.id_of(q.triple.t)
                if None in (s, r, t):
                    continue
                assert not base.has_triple(Triple(s, r, t))

    def test_unknown_relation_fully_absent_from_base(self):
        bundle = generate_datasets(thousand_triple_org(), self._config())
        assert bundle.unknown_relations
        for r in bundle.unknown_relations:
            assert not bundle.base.relation_known(r)

    def test_user_kb_disjoint_from_test_queries(self):
        bundle = generate_datasets(thousand_triple_org(), self._config())
        user = bundle.user.graph
        for split in bundle.splits.values():
            for q in split.test:
                s = user.entities.id_of(q.triple.s)
                r = user.relations.id_of(q.triple.r)
                t = user.entities.id_of(q.triple.t)
                if None in (s, r, t):
                    continue
                assert not user.has_triple(Triple(s, r, t))

    def test_entity_removal_moves_facts_to_user(self):
        cfg = self._config(entity_removal_fraction=0.10)
        bundle = generate_datasets(thousand_triple_org(), cfg)
        # some training positives now mention entities the base KB lost
        unknown_endpoints = 0
        for split in bundle.splits.values():
            for q in split.train:
                if not q.label:
                    continue
                sef, tef, _ = bundle.base.lookup_query(
                    q.triple.s, q.triple.r, q.triple.t)
                if not sef or not tef:
                    unknown_endpoints += 1
        assert unknown_endpoints > 0

    def test_bit_reproducible_under_seed(self):
        a = generate_datasets(thousand_triple_org(), self._config(seed=9))
        b = generate_datasets(thousand_triple_org(), self._config(seed=9))
        assert a.base.to_payload() == b.base.to_payload()
        assert a.user.to_payload() == b.user.to_payload()
        assert [
            (q.triple, q.label)
            for r in a.relation_order()
            for q in a.splits[r].train + a.splits[r].val + a.splits[r].test
        ] == [
            (q.triple, q.label)
            for r in b.relation_order()
            for q in b.splits[r].train + b.splits[r].val + b.splits[r].test
        ]

    def test_small_relations_excluded_with_warning(self):
        store = thousand_triple_org()
        store.add_triple_labels("only", "tinyRel", "one")
        with pytest.warns(UserWarning, match="tinyRel"):
            generate_datasets(store, self._config())


class TestSimulatedUser:
    def _user_kb(self):
        store = KnowledgeStore()
        store.add_triple_labels("u1", "knows", "u2")
        store.add_triple_labels("u2", "owns", "u3")
        return store

    def test_clue_always_answered_for_covered_relation(self):
        channel = SimulatedUserChannel(self._user_kb(), seed=1)
        answer = channel.ask(Question("clue", "", relation="knows"))
        assert answer.kind == "clue"
        assert answer.triple[1] == "knows"

    def test_clue_declined_for_uncovered_relation(self):
        channel = SimulatedUserChannel(self._user_kb(), seed=1)
        assert channel.ask(Question("clue", "", relation="zzz")).kind == "decline"

    def test_link_question_answered_from_direct_fact(self):
        channel = SimulatedUserChannel(self._user_kb(), seed=1)
        answer = channel.ask(Question("mlq", "", pair=("u1", "u2")))
        assert answer.kind == "link" and answer.relation == "knows"
        # inverse direction works through the stored inverse facts
        answer = channel.ask(Question("clq", "", pair=("u2", "u1")))
        assert answer.kind == "link"

    def test_link_question_declined_without_fact(self):
        channel = SimulatedUserChannel(self._user_kb(), seed=1)
        assert channel.ask(Question("mlq", "", pair=("u1", "u3"))).kind == "decline"


def clustered_org(n_relations=5, pairs_per_relation=12) -> KnowledgeStore:
    """Each positive pair gets a relation-specific two-hop detour, so the
    evidence paths carry the relation's identity."""
    store = KnowledgeStore()
    for k in range(n_relations):
        rel = f"rel{k}"
        for i in range(pairs_per_relation):
            s, h, t = f"s{k}_{i}", f"h{k}_{i}", f"t{k}_{i}"
            store.add_triple_labels(s, rel, t)
            store.add_triple_labels(s, f"via{k}A", h)
            store.add_triple_labels(h, f"via{k}B", t)
    return store


def eval_config() -> EngineConfig:
    return EngineConfig(
        params=Params(walk=WalkConfig(seed=7)),
        predictor=TrainingConfig(max_epochs=40, early_stop_patience=8,
                                 dropout=0.0, seed=2),
    )


@pytest.fixture(scope="module")
def small_bundle():
    cfg = DatasetConfig(per_relation_cap=10, min_triples=8, seed=5,
                        entity_removal_fraction=0.08)
    return generate_datasets(clustered_org(), cfg)


class TestRunEvaluation:
    def test_report_shape_and_ranges(self, trained_table, small_bundle):
        report = run_evaluation(trained_table, small_bundle,
                                BaselineFlags(), eval_config())
        assert 0.0 <= report.coverage <= 1.0
        assert set(report.averages) == {"known", "unknown", "all"}
        for row in report.relations:
            assert -1.0 <= row.mcc <= 1.0
            assert 0.0 <= row.f1 <= 1.0
        known = {r.relation for r in report.relations if r.known}
        assert known == set(small_bundle.known_relations)
        text = report.to_text()
        assert "coverage" in text and "known" in text

    def test_full_engine_wins_most_episodes(self, trained_table, small_bundle):
        report = run_evaluation(trained_table, small_bundle,
                                BaselineFlags(), eval_config())
        assert report.coverage > 0.8

    def test_named_baselines(self):
        assert BaselineFlags.named("bg").blind_guess
        assert BaselineFlags.named("sep").no_transfer
        assert BaselineFlags.named("full") == BaselineFlags()
        with pytest.raises(ValueError):
            BaselineFlags.named("nope")

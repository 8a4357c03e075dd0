"""Dataset carving, the simulated user, ablation switches, and the metric
suite for end-to-end evaluation runs.

From an original KB this builds: a reduced base KB (the engine's starting
graph), the simulated user's private KB (source of clues and link answers),
and labeled train/validation/test query splits per relation, with a share of
relations held fully unknown and a share of entities removed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .embeddings import synthesize_embeddings
from .engine import Engine, EngineConfig
from .executor import Answer, Params, Question
from .kb import KnowledgeStore, QueryTriple, Triple
from .metrics import confusion, coverage, f1_pos, mcc_score
from .strategy import DataInstance, QTable, run_episode


@dataclass
class DatasetConfig:
    unknown_fraction: float = 0.25
    per_relation_cap: int = 1000
    train_fraction: float = 0.6
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    entity_removal_fraction: float = 0.10
    negatives_per_positive: int = 2
    min_triples: int = 10
    max_relations: int | None = None
    seed: int = 0

    def __post_init__(self):
        fractions = (self.unknown_fraction, self.train_fraction,
                     self.val_fraction, self.test_fraction,
                     self.entity_removal_fraction)
        if not all(0.0 < f < 1.0 for f in fractions):
            raise ValueError("fractions must sit strictly inside (0, 1)")
        total = self.train_fraction + self.val_fraction + self.test_fraction
        if total >= 1.0:
            raise ValueError("train+val+test must leave a residue for the user KB")


@dataclass
class LabeledQuery:
    triple: QueryTriple
    label: bool


@dataclass
class RelationSplits:
    relation: str
    known: bool
    train: list[LabeledQuery] = field(default_factory=list)
    val: list[LabeledQuery] = field(default_factory=list)
    test: list[LabeledQuery] = field(default_factory=list)


@dataclass
class DatasetBundle:
    base: KnowledgeStore
    user: KnowledgeStore
    splits: dict[str, RelationSplits]
    known_relations: list[str]
    unknown_relations: list[str]
    original: KnowledgeStore

    def relation_order(self) -> list[str]:
        return sorted(self.known_relations) + sorted(self.unknown_relations)


def _forward_triples_by_relation(store: KnowledgeStore) -> dict[str, list[tuple[str, str]]]:
    g = store.graph
    by_rel: dict[str, list[tuple[str, str]]] = {}
    for t in g.forward_triples():
        label = g.relations.label(t.r)
        by_rel.setdefault(label, []).append(
            (g.entities.label(t.s), g.entities.label(t.t))
        )
    return by_rel


def generate_datasets(k_org: KnowledgeStore, cfg: DatasetConfig) -> DatasetBundle:
    """Carve the base KB, the user KB, and labeled splits out of one KB."""
    rng = np.random.default_rng(cfg.seed)
    by_rel = _forward_triples_by_relation(k_org)
    eligible = sorted(r for r, pairs in by_rel.items() if len(pairs) >= cfg.min_triples)
    skipped = sorted(set(by_rel) - set(eligible))
    if skipped:
        import warnings

        warnings.warn(f"excluded relations with too few triples: {skipped}")
    rng.shuffle(eligible)
    if cfg.max_relations is not None:
        eligible = eligible[: cfg.max_relations]
    n_unknown = math.floor(cfg.unknown_fraction * len(eligible))
    unknown = sorted(eligible[:n_unknown])
    known = sorted(eligible[n_unknown:])

    drop: set[tuple[str, str, str]] = set()       # removed from the base KB
    user_facts: set[tuple[str, str, str]] = set() # moved to the user's KB
    splits: dict[str, RelationSplits] = {}

    for r in known:
        pairs = sorted(by_rel[r])
        rng.shuffle(pairs)
        chosen = pairs[: cfg.per_relation_cap]
        leftover = pairs[cfg.per_relation_cap:]
        n = len(chosen)
        n_train = math.floor(cfg.train_fraction * n)
        n_val = math.floor(cfg.val_fraction * n)
        n_test = math.floor(cfg.test_fraction * n)
        split = RelationSplits(r, known=True)
        for s, t in chosen[:n_train]:
            split.train.append(LabeledQuery(QueryTriple(s, r, t), True))
        for s, t in chosen[n_train:n_train + n_val]:
            split.val.append(LabeledQuery(QueryTriple(s, r, t), True))
            drop.add((s, r, t))
        for s, t in chosen[n_train + n_val:n_train + n_val + n_test]:
            split.test.append(LabeledQuery(QueryTriple(s, r, t), True))
            drop.add((s, r, t))
        for s, t in chosen[n_train + n_val + n_test:]:
            user_facts.add((s, r, t))
            drop.add((s, r, t))
        for s, t in leftover:
            user_facts.add((s, r, t))
            drop.add((s, r, t))
        splits[r] = split

    for r in unknown:
        pairs = sorted(by_rel[r])
        rng.shuffle(pairs)
        n_test = math.floor(cfg.test_fraction * len(pairs))
        split = RelationSplits(r, known=False)
        for s, t in pairs[:n_test]:
            split.test.append(LabeledQuery(QueryTriple(s, r, t), True))
            drop.add((s, r, t))
        for s, t in pairs[n_test:]:
            user_facts.add((s, r, t))
            drop.add((s, r, t))
        splits[r] = split

    # a slice of the entities mentioned by the labeled data leaves the base
    # KB entirely; their facts go to the user
    dataset_entities = sorted({
        e
        for split in splits.values()
        for q in split.train + split.val + split.test
        for e in (q.triple.s, q.triple.t)
    })
    rng.shuffle(dataset_entities)
    n_removed = math.floor(cfg.entity_removal_fraction * len(dataset_entities))
    removed_entities = set(dataset_entities[:n_removed])

    g = k_org.graph
    base = KnowledgeStore(g.relations.inverse_suffix)
    user = KnowledgeStore(g.relations.inverse_suffix)
    test_keys = {
        (q.triple.s, q.triple.r, q.triple.t)
        for split in splits.values()
        for q in split.test
    }
    for t in g.forward_triples():
        key = (g.entities.label(t.s), g.relations.label(t.r), g.entities.label(t.t))
        touches_removed = key[0] in removed_entities or key[2] in removed_entities
        if touches_removed:
            if key not in test_keys:
                user.add_triple_labels(*key)
            continue
        if key in drop:
            if key in user_facts and key not in test_keys:
                user.add_triple_labels(*key)
            continue
        base.add_triple_labels(*key)

    _add_negatives(splits, k_org, cfg, rng)
    base.freeze_baseline()
    return DatasetBundle(base, user, splits, known, sorted(unknown), k_org)


def _add_negatives(splits, k_org: KnowledgeStore, cfg: DatasetConfig, rng) -> None:
    """Two corruptions per positive (source and target), never colliding
    with any positive fact of the original KB."""
    g = k_org.graph
    entity_pool = sorted(g.entities.labels())

    def exists(s, r, t):
        si = g.entities.id_of(s)
        ri = g.relations.id_of(r)
        ti = g.entities.id_of(t)
        if si is None or ri is None or ti is None:
            return False
        return g.has_triple(Triple(si, ri, ti))

    for split in splits.values():
        for bucket_name in ("train", "val", "test"):
            bucket = getattr(split, bucket_name)
            negatives = []
            for query in bucket:
                if not query.label:
                    continue
                s, r, t = query.triple.s, query.triple.r, query.triple.t
                for position in range(cfg.negatives_per_positive):
                    corrupt_source = position % 2 == 0
                    for _ in range(200):
                        e = entity_pool[int(rng.integers(len(entity_pool)))]
                        cand = (e, r, t) if corrupt_source else (s, r, e)
                        if cand[0] != cand[2] and not exists(*cand):
                            negatives.append(
                                LabeledQuery(QueryTriple(*cand), False))
                            break
            bucket.extend(negatives)


@dataclass
class BaselineFlags:
    single_model: bool = False
    no_transfer: bool = False       # "Sep"
    fixed_threshold: bool = False   # "F-th"
    blind_guess: bool = False       # "BG"
    no_pts: bool = False

    NAMES = {
        "full": {},
        "single": {"single_model": True},
        "sep": {"no_transfer": True},
        "f-th": {"fixed_threshold": True},
        "bg": {"blind_guess": True},
        "no-pts": {"no_pts": True},
    }

    @classmethod
    def named(cls, name: str) -> "BaselineFlags":
        try:
            return cls(**cls.NAMES[name.lower()])
        except KeyError:
            raise ValueError(
                f"unknown baseline {name!r}; pick one of {sorted(cls.NAMES)}"
            ) from None


class SimulatedUserChannel:
    """Answers from a private KB: clues always exist for test relations;
    link questions are answered only when a direct fact is on hand."""

    def __init__(self, user_kb: KnowledgeStore, seed: int = 0):
        self.kb = user_kb
        self.rng = np.random.default_rng(seed)
        self._by_relation = _forward_triples_by_relation(user_kb)

    def ask(self, question: Question) -> Answer:
        if question.kind == "clue":
            pool = self._by_relation.get(question.relation)
            if not pool:
                return Answer.decline()
            s, t = pool[int(self.rng.integers(len(pool)))]
            return Answer("clue", triple=(s, question.relation, t))
        if question.pair is None:
            return Answer.decline()
        return self._direct_link(*question.pair)

    def _direct_link(self, a: str, b: str) -> Answer:
        g = self.kb.graph
        ia, ib = g.entities.id_of(a), g.entities.id_of(b)
        if ia is None or ib is None:
            return Answer.decline()
        options = sorted(
            rel for rel, nb in g.neighbors(ia)
            if nb == ib and not g.relations.is_template(rel)
        )
        if not options:
            return Answer.decline()
        rel = options[int(self.rng.integers(len(options)))]
        return Answer("link", relation=g.relations.label(rel))


@dataclass
class RelationOutcome:
    relation: str
    known: bool
    episodes: int = 0
    wins: int = 0
    unresolved: int = 0
    mcc: float = 0.0
    f1: float = 0.0


@dataclass
class MetricsReport:
    coverage: float
    relations: list[RelationOutcome]
    averages: dict[str, dict[str, float]]

    def to_json(self) -> str:
        return json.dumps({
            "coverage": self.coverage,
            "relations": [vars(r) for r in self.relations],
            "averages": self.averages,
        }, indent=2)

    def to_text(self) -> str:
        lines = [
            f"coverage: {self.coverage:.4f}",
            f"{'rel type':<10} {'Avg +ve F1':>12} {'Avg MCC':>10} {'n rel':>6}",
        ]
        for kind in ("known", "unknown", "all"):
            row = self.averages[kind]
            lines.append(
                f"{kind:<10} {row['f1']:>12.4f} {row['mcc']:>10.4f} "
                f"{int(row['n']):>6d}"
            )
        return "\n".join(lines)


def _macro(rows: list[RelationOutcome]) -> dict[str, float]:
    if not rows:
        return {"f1": 0.0, "mcc": 0.0, "n": 0}
    return {
        "f1": sum(r.f1 for r in rows) / len(rows),
        "mcc": sum(r.mcc for r in rows) / len(rows),
        "n": len(rows),
    }


def run_evaluation(
    table: QTable,
    bundle: DatasetBundle,
    flags: BaselineFlags | None = None,
    config: EngineConfig | None = None,
    user_seed: int = 0,
    embedding_dim: int = 16,
) -> MetricsReport:
    """Stream every labeled instance through a full episode and score the
    eval verdicts; the engine starts from a fresh copy of the base KB."""
    flags = flags or BaselineFlags()
    config = config or EngineConfig()
    config.single_model = flags.single_model
    config.no_transfer = flags.no_transfer
    config.fixed_threshold = flags.fixed_threshold
    config.params.blind_guess = flags.blind_guess
    config.params.no_past_task_selection = flags.no_pts

    store = KnowledgeStore.from_payload(bundle.base.to_payload())
    provider = synthesize_embeddings(
        bundle.original.graph, embedding_dim, config.seed
    )
    engine = Engine(store, provider, table, config)
    channel = SimulatedUserChannel(bundle.user, seed=user_seed)

    outcomes: list[RelationOutcome] = []
    all_wins: list[bool] = []
    for relation in bundle.relation_order():
        split = bundle.splits[relation]
        out = RelationOutcome(relation, split.known)
        engine.predictor.expected_eval[relation] = len(split.test)
        for mode, queries in (("T", split.train), ("V", split.val),
                              ("E", split.test)):
            for query in queries:
                rng = engine.session_rng("eval", relation, mode,
                                         query.triple.s, query.triple.t)
                instance = DataInstance(
                    triple=query.triple,
                    budget=config.params.interaction_limit,
                    mode=mode,
                    label=query.label,
                )
                executor = engine.executor(channel, rng)
                result = run_episode(instance, table, executor, mode="act",
                                     rng=rng)
                if mode == "E":
                    out.episodes += 1
                    out.wins += 1 if result.won else 0
                    all_wins.append(result.won)
        engine.predictor.finalize(relation, engine.buffers)
        pairs = []
        for instance in engine.buffers.eval.get(relation, []):
            if instance.verdict is None:
                out.unresolved += 1
            else:
                pairs.append((instance.verdict, bool(instance.label)))
        out.unresolved += out.episodes - out.wins  # losses never got verdicts
        if pairs:
            tp, fp, tn, fn = confusion(pairs)
            out.mcc = mcc_score(tp, fp, tn, fn)
            out.f1 = f1_pos(tp, fp, fn)
        outcomes.append(out)

    known_rows = [o for o in outcomes if o.known]
    unknown_rows = [o for o in outcomes if not o.known]
    report = MetricsReport(
        coverage=coverage(all_wins),
        relations=outcomes,
        averages={
            "known": _macro(known_rows),
            "unknown": _macro(unknown_rows),
            "all": _macro(outcomes),
        },
    )
    return report

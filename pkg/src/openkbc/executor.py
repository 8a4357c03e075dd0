"""Execution of the six inference actions: KB search, clue acquisition with
negative generation, missing-link and connecting-link questions, the
template-relation guessing fallback, feature extraction, and buffer routing.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .kb import (
    LOOSELY_RELATED,
    NOT_RELATED,
    RELATED,
    TEMPLATE_LABELS,
    KnowledgeStore,
    QueryTriple,
    Triple,
)
from .mdp import CPF, ILO, INFI, NEFS, PFE, QERS, QRF, SEF, TEF, Action
from .paths import FeatureSet, PathFeature, WalkConfig, complete_with_link, extract_features
from .strategy import DataInstance, Frame, InferenceStack

CANDIDATE_POOL_LIMIT = 10_000
CANDIDATE_SAMPLE = 1_000
NEGATIVE_SAMPLE_RETRIES = 100

CLUE_TEMPLATE = "I do not know what '{r}' means. Can you provide me an example?"
CLQ_TEMPLATE = "Can you tell me how '{e_unknown}' and '{e_anchor}' are related?"
MLQ_TEMPLATE = "Can you tell me how '{e_i}' and '{e_j}' are related?"


@dataclass(frozen=True)
class Question:
    kind: str                  # "clue" | "mlq" | "clq"
    text: str
    relation: str | None = None
    pair: tuple[str, str] | None = None

    def to_json(self) -> dict:
        out = {"kind": self.kind, "text": self.text}
        if self.relation is not None:
            out["relation"] = self.relation
        if self.pair is not None:
            out["pair"] = list(self.pair)
        return out


@dataclass(frozen=True)
class Answer:
    kind: str                  # "clue" | "link" | "decline"
    triple: tuple[str, str, str] | None = None
    relation: str | None = None

    @classmethod
    def decline(cls) -> "Answer":
        return cls("decline")

    @classmethod
    def from_json(cls, payload: dict) -> "Answer":
        kind = payload.get("kind")
        if kind == "clue":
            triple = payload.get("triple")
            if not isinstance(triple, list) or len(triple) != 3:
                return cls.decline()
            return cls("clue", triple=tuple(str(x) for x in triple))
        if kind == "link":
            rel = payload.get("relation")
            if not isinstance(rel, str) or not rel:
                return cls.decline()
            return cls("link", relation=rel)
        return cls.decline()


class DeclineChannel:
    """A user who never answers anything."""

    def ask(self, question: Question) -> Answer:
        return Answer.decline()


@dataclass
class GuessThresholds:
    low: float = 0.07
    high: float = 0.2

    def __post_init__(self):
        if not -1.0 < self.low < self.high < 1.0:
            raise ValueError("thresholds must satisfy -1 < low < high < 1")


def guess_link(sim: float, thresholds: GuessThresholds) -> str:
    """Map a contextual similarity onto one of the three template relations."""
    if thresholds.low <= sim <= thresholds.high:
        return LOOSELY_RELATED
    if sim <= thresholds.low:
        return NOT_RELATED
    return RELATED


def select_mlq(
    features: FeatureSet,
    counts,
    relation_id: int,
    provider,
    graph,
) -> PathFeature:
    """The incomplete feature maximizing ln(frequency) * gap similarity.

    Ties break on the lexicographic order of the path's relation labels.
    """
    best = None
    best_key = None
    for feature, _ in features.incomplete_items():
        n = max(counts.count(relation_id, feature, feature.gap_pair), 1)
        ei, ej = feature.gap_pair
        sim = provider.similarity_or(
            graph.entities.label(ei), graph.entities.label(ej), 0.0
        )
        score = math.log(n) * sim
        labels = tuple(graph.relations.label(l) for l in feature.labels)
        key = (-score, labels)
        if best_key is None or key < best_key:
            best, best_key = feature, key
    if best is None:
        raise ValueError("no incomplete features to ask about")
    return best


class DataBuffers:
    """Per-relation train/validation/evaluation instance buffers."""

    def __init__(self):
        self.train: dict[str, list[DataInstance]] = {}
        self.val: dict[str, list[DataInstance]] = {}
        self.eval: dict[str, list[DataInstance]] = {}

    def route(self, instance: DataInstance) -> None:
        key = instance.relation
        if instance.mode in ("T", "C"):
            self.train.setdefault(key, []).append(instance)
        elif instance.mode == "V":
            self.val.setdefault(key, []).append(instance)
        else:
            self.eval.setdefault(key, []).append(instance)


@dataclass
class Params:
    """Knobs controlling action execution."""

    interaction_limit: int = 5      # questions allowed per instance
    complete_needed: int = 3        # complete features that satisfy CPF
    walk: WalkConfig = field(default_factory=WalkConfig)
    thresholds: GuessThresholds = field(default_factory=GuessThresholds)
    clue_rate: float = 0.5          # chance of re-acquiring clues (beta)
    weak_task_pct: float = 25.0     # share of worst past tasks targeted (rho)
    blind_guess: bool = False
    no_past_task_selection: bool = False


@dataclass
class StepOutcome:
    reward: float
    state: int
    terminal: bool = False


class Executor:
    """Carries out one action at a time against the shared knowledge store."""

    def __init__(
        self,
        store: KnowledgeStore,
        provider,
        channel,
        params: Params | None = None,
        buffers: DataBuffers | None = None,
        predictor=None,
        rng: np.random.Generator | None = None,
    ):
        self.store = store
        self.provider = provider
        self.channel = channel
        self.params = params or Params()
        self.buffers = buffers or DataBuffers()
        self.predictor = predictor
        self.rng = rng if rng is not None else np.random.default_rng(0)

    # -- shared helpers ------------------------------------------------------

    def _ask(self, instance: DataInstance, question: Question) -> Answer:
        instance.budget -= 1
        instance.questions_asked += 1
        try:
            answer = self.channel.ask(question)
        except Exception:
            answer = Answer.decline()
        return answer if answer is not None else Answer.decline()

    @staticmethod
    def _monitor_budget(state: int, instance: DataInstance) -> int:
        return state | ILO if instance.budget <= 0 else state

    def _lookup_bits(self, instance: DataInstance) -> int:
        sef, tef, qrf = self.store.lookup_query(
            instance.triple.s, instance.triple.r, instance.triple.t
        )
        return (SEF if sef else 0) | (TEF if tef else 0) | (QRF if qrf else 0)

    def refresh_lookup_bits(self, frame: Frame) -> int:
        """Re-check s, r, t after clue processing; bits only ever turn on."""
        if not frame.state & QERS:
            return frame.state
        return frame.state | self._lookup_bits(frame.instance)

    def _absorb_clue(self, instance: DataInstance) -> None:
        """Store a positive clue fact once both its endpoints are known."""
        if instance.mode != "C" or instance.label is not True:
            return
        t = instance.triple
        if self.store.entity_known(t.s) and self.store.entity_known(t.t):
            self.store.add_triple_labels(t.s, t.r, t.t)

    def _guess(self, sim: float) -> str:
        if self.params.blind_guess:
            return RELATED
        return guess_link(sim, self.params.thresholds)

    # -- the actions ---------------------------------------------------------

    def execute(self, action: Action, frame: Frame, stack: InferenceStack) -> StepOutcome:
        handler = {
            Action.SEARCH: self._exec_search,
            Action.ASK_CLUE: self._exec_ask_clue,
            Action.ASK_LINK: self._exec_ask_link,
            Action.ASK_CONNECT: self._exec_ask_connect,
            Action.EXTRACT: self._exec_extract,
            Action.INFER: self._exec_infer,
        }[action]
        return handler(frame, stack)

    def _exec_search(self, frame: Frame, stack: InferenceStack) -> StepOutcome:
        d = frame.instance
        self._absorb_clue(d)
        state = frame.state | QERS | self._lookup_bits(d)
        if (
            state & QRF
            and d.mode == "E"
            and not self.params.no_past_task_selection
            and self._is_weak_or_new(d.triple.r)
            and self.rng.random() < self.params.clue_rate
        ):
            state &= ~QRF
        state = self._monitor_budget(state, d)
        return StepOutcome(0.0, state)

    def _is_weak_or_new(self, relation_label: str) -> bool:
        rid = self.store.graph.relations.id_of(relation_label)
        if rid is None:
            return False
        if self.store.is_recent_relation(rid):
            return True
        weak = self.store.task_scores.bottom_tasks(self.params.weak_task_pct)
        return rid in weak

    def _exec_ask_clue(self, frame: Frame, stack: InferenceStack) -> StepOutcome:
        d = frame.instance
        question = Question(
            "clue", CLUE_TEMPLATE.format(r=d.triple.r), relation=d.triple.r
        )
        answer = self._ask(d, question)
        if answer.kind == "clue" and answer.triple and answer.triple[1] == d.triple.r:
            s, r, t = answer.triple
            positive = DataInstance(
                triple=QueryTriple(s, r, t),
                budget=self.params.interaction_limit,
                mode="C",
                label=True,
            )
            negatives = self._corrupt_clue(answer.triple)
            for neg in negatives:
                stack.push_instance(neg)
            stack.push_instance(positive)
        state = self._monitor_budget(frame.state, d)
        return StepOutcome(0.0, state)

    def _corrupt_clue(self, triple: tuple[str, str, str]) -> list[DataInstance]:
        """One source-corrupted and one target-corrupted negative example."""
        s, r, t = triple
        entities = self.store.known_entity_ids()
        out = []
        if not entities:
            return out
        for position in ("s", "t"):
            for _ in range(NEGATIVE_SAMPLE_RETRIES):
                eid = entities[int(self.rng.integers(len(entities)))]
                label = self.store.graph.entities.label(eid)
                cand = (label, r, t) if position == "s" else (s, r, label)
                if cand == triple:
                    continue
                if self._triple_in_graph(cand):
                    continue
                out.append(
                    DataInstance(
                        triple=QueryTriple(*cand),
                        budget=self.params.interaction_limit,
                        mode="C",
                        label=False,
                    )
                )
                break
        return out

    def _triple_in_graph(self, triple: tuple[str, str, str]) -> bool:
        g = self.store.graph
        s = g.entities.id_of(triple[0])
        r = g.relations.id_of(triple[1])
        t = g.entities.id_of(triple[2])
        if s is None or r is None or t is None:
            return False
        return g.has_triple(Triple(s, r, t))

    def _exec_ask_link(self, frame: Frame, stack: InferenceStack) -> StepOutcome:
        d = frame.instance
        g = self.store.graph
        if d.features is None or not d.features.incomplete_items():
            # state bits cannot see this: nothing left to ask about, so the
            # choice is penalized like an invalid action (no question posed)
            return StepOutcome(-1.0, frame.state)
        rid = g.relations.intern(d.triple.r)
        pick = select_mlq(d.features, self.store.incomplete_counts, rid,
                          self.provider, g)
        ei, ej = pick.gap_pair
        li, lj = g.entities.label(ei), g.entities.label(ej)
        question = Question("mlq", MLQ_TEMPLATE.format(e_i=li, e_j=lj), pair=(li, lj))
        answer = self._ask(d, question)
        if answer.kind == "link" and answer.relation and answer.relation not in TEMPLATE_LABELS:
            link = g.relations.intern(answer.relation)
            self.store.add_triple(Triple(ei, link, ej))
        else:
            sim = self.provider.similarity_or(li, lj, 0.0)
            link = g.relations.template_id(self._guess(sim))
        count = d.features.remove(pick)
        d.features.add(complete_with_link(pick, link), count)

        state = self._monitor_budget(frame.state, d)
        if state & ILO:
            self._guess_out_remaining(d)
            if d.features.complete_units() >= 1:
                state |= CPF
        elif d.features.complete_units() >= self.params.complete_needed:
            state |= CPF
        return StepOutcome(0.0, state)

    def _guess_out_remaining(self, d: DataInstance) -> None:
        """Budget is gone: close every remaining gap with a guessed template."""
        g = self.store.graph
        for feature, count in list(d.features.incomplete_items()):
            ei, ej = feature.gap_pair
            sim = self.provider.similarity_or(
                g.entities.label(ei), g.entities.label(ej), 0.0
            )
            link = g.relations.template_id(self._guess(sim))
            d.features.remove(feature)
            d.features.add(complete_with_link(feature, link), count)

    def _exec_ask_connect(self, frame: Frame, stack: InferenceStack) -> StepOutcome:
        d = frame.instance
        g = self.store.graph
        unknown = d.triple.s if not frame.state & SEF else d.triple.t
        anchor_id = self._pick_anchor(d.triple.s, d.triple.t)
        anchor = g.entities.label(anchor_id)
        question = Question(
            "clq", CLQ_TEMPLATE.format(e_unknown=unknown, e_anchor=anchor),
            pair=(unknown, anchor),
        )
        answer = self._ask(d, question)
        if answer.kind == "link" and answer.relation and answer.relation not in TEMPLATE_LABELS:
            self.store.add_triple_labels(unknown, answer.relation, anchor)
        else:
            sim = self.provider.similarity_or(unknown, anchor, 0.0)
            template = g.relations.template_id(self._guess(sim))
            uid = g.entities.intern(unknown)
            self.store.add_guess_edge(Triple(uid, template, anchor_id))
        self._absorb_clue(d)
        state = frame.state | self._entity_bits(d)
        if d.mode == "C":
            state |= self._lookup_bits(d)
        state = self._monitor_budget(state, d)
        return StepOutcome(0.0, state)

    def _entity_bits(self, d: DataInstance) -> int:
        sef, tef, _ = self.store.lookup_query(d.triple.s, d.triple.r, d.triple.t)
        return (SEF if sef else 0) | (TEF if tef else 0)

    def _pick_anchor(self, s_label: str, t_label: str) -> int:
        g = self.store.graph
        pool = self.store.known_entity_ids()
        skip = {g.entities.id_of(s_label), g.entities.id_of(t_label)}
        pool = [eid for eid in pool if eid not in skip]
        if not pool:
            raise RuntimeError("no anchor candidates in the KB")
        if len(pool) > CANDIDATE_POOL_LIMIT:
            idx = self.rng.choice(len(pool), size=CANDIDATE_SAMPLE, replace=False)
            pool = [pool[i] for i in sorted(idx)]
        best, best_score = None, -math.inf
        for eid in pool:
            score = self.provider.relevance_or(
                g.entities.label(eid), s_label, t_label, -2.0
            )
            if score > best_score:
                best, best_score = eid, score
        return best

    def _exec_extract(self, frame: Frame, stack: InferenceStack) -> StepOutcome:
        d = frame.instance
        g = self.store.graph
        rid = g.relations.id_of(d.triple.r)
        features = extract_features(
            g, d.triple.s, d.triple.t, self.params.walk, self.provider, rid
        )
        d.features = features
        record_rid = g.relations.intern(d.triple.r)
        for feature, count in features.incomplete_items():
            self.store.incomplete_counts.record(
                record_rid, feature, feature.gap_pair, times=count
            )
        state = frame.state | PFE
        reward = 0.0
        if features.is_empty():
            reward = -1.0
        else:
            state |= NEFS
        if features.complete_units() >= self.params.complete_needed:
            state |= CPF
        state = self._monitor_budget(state, d)
        return StepOutcome(reward, state)

    def _exec_infer(self, frame: Frame, stack: InferenceStack) -> StepOutcome:
        d = frame.instance
        state = frame.state | INFI
        won = bool(frame.state & QRF) and bool(frame.state & CPF)
        if won:
            self.buffers.route(d)
            if self.predictor is not None:
                try:
                    self.predictor.handle_win(d, self.buffers)
                except Exception as exc:  # prediction failure ends the episode anyway
                    d.verdict = None
                    logging.getLogger(__name__).warning("prediction failed: %s", exc)
        return StepOutcome(1.0 if won else -1.0, state, terminal=True)

"""Engine facade: wires the store, embeddings, policy, executor, and the
per-relation prediction models, and trains the strategy policy on a synthetic
query workload.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .embeddings import EmbeddingProvider, synthesize_embeddings
from .executor import Answer, DataBuffers, Executor, Params, Question
from .kb import KnowledgeStore, QueryTriple, inverse
from .predictor import (
    RelationModel,
    TrainingConfig,
    TrainingDataError,
    select_source_task,
    task_similarity,
    train_model,
)
from .strategy import DataInstance, EpisodeResult, QTable, run_episode

log = logging.getLogger(__name__)


@dataclass
class EngineConfig:
    """Engine-wide defaults (execution knobs plus learning schedules)."""

    params: Params = field(default_factory=Params)
    predictor: TrainingConfig = field(default_factory=TrainingConfig)
    alpha: float = 0.8
    gamma: float = 0.9
    eps_start: float = 1.0
    eps_end: float = 0.1
    pretrain_steps: int = 50_000
    single_model: bool = False
    no_transfer: bool = False
    fixed_threshold: bool = False
    seed: int = 0


class PredictionManager:
    """Owns the per-relation models: lazy training, transfer, and inference.

    Models are (re)trained when a relation's evaluation batch completes and
    its training buffer has grown since the last fit.
    """

    def __init__(self, store: KnowledgeStore, cfg: EngineConfig):
        self.store = store
        self.cfg = cfg
        self.models: dict[str, RelationModel] = {}
        self.trained_on: dict[str, int] = {}
        self.expected_eval: dict[str, int] = {}
        self.shared: RelationModel | None = None

    # -- plumbing ------------------------------------------------------------

    def _to_examples(self, instances):
        relations = self.store.graph.relations
        out = []
        for inst in instances:
            features = []
            if inst.features is not None:
                for feat, n in inst.features.complete_items():
                    features.append(
                        (tuple(relations.label(l) for l in feat.labels), n)
                    )
            out.append((features, bool(inst.label)))
        return out

    def _eval_features(self, inst):
        relations = self.store.graph.relations
        return [
            (tuple(relations.label(l) for l in feat.labels), n)
            for feat, n in inst.features.complete_items()
        ]

    # -- training ------------------------------------------------------------

    def _transfer_source(self, relation: str) -> RelationModel | None:
        if self.cfg.no_transfer or not self.models:
            return None
        registry = self.store.graph.relations
        rid = registry.id_of(relation)
        if rid is None or not self.store.matrix.row(rid):
            return None
        trained = {
            registry.id_of(label)
            for label in self.models
            if registry.id_of(label) is not None
        }
        try:
            sim = task_similarity(self.store.matrix, self.cfg.predictor.svd_rank)
        except ValueError:
            return None
        source = select_source_task(sim, rid, trained)
        if source is None:
            return None
        return self.models.get(registry.label(source))

    def ensure_trained(self, relation: str, buffers: DataBuffers) -> RelationModel:
        train_insts = buffers.train.get(relation, [])
        if not train_insts:
            raise TrainingDataError(f"no training instances for {relation!r}")
        if (
            relation in self.models
            and self.trained_on.get(relation) == len(train_insts)
        ):
            return self.models[relation]
        train = self._to_examples(train_insts)
        val = self._to_examples(buffers.val.get(relation, []))

        if self.cfg.single_model:
            model = self._fit_shared(relation, train, val)
        else:
            init = self.models.get(relation) or self._transfer_source(relation)
            model, inv_model, mcc = train_model(
                relation, train, val, self.cfg.predictor, init,
                self.store.graph.relations.inverse_suffix,
            )
            self.models[self.invert(relation)] = inv_model
            self._record_score(relation, mcc)
        if self.cfg.fixed_threshold:
            model.mu = 0.5
        self.models[relation] = model
        self.trained_on[relation] = len(train_insts)
        return model

    def _fit_shared(self, relation: str, train, val) -> RelationModel:
        from .predictor import compute_threshold, fit_model, split_validation, validation_mcc

        if self.shared is None:
            self.shared = RelationModel(relation, self.cfg.predictor)
        model = self.shared
        model.relation = relation
        model.tied = True
        model.ensure_labels([relation])
        if not val:
            train, val = split_validation(train, seed=self.cfg.predictor.seed)
        fit_model(model, train, val, finetune=relation in self.trained_on)
        model.mu = compute_threshold(model, val)
        self._record_score(relation, validation_mcc(model, val))
        return model

    def invert(self, relation: str) -> str:
        suffix = self.store.graph.relations.inverse_suffix
        if relation.endswith(suffix):
            return relation[: -len(suffix)]
        return relation + suffix

    def _record_score(self, relation: str, mcc: float) -> None:
        rid = self.store.graph.relations.intern(relation)
        self.store.task_scores.update(rid, mcc)

    # -- inference -----------------------------------------------------------

    def handle_win(self, instance: DataInstance, buffers: DataBuffers):
        """Called by the executor on a winning terminal action."""
        if instance.mode != "E":
            return None
        relation = instance.relation
        expected = self.expected_eval.get(relation, 1)
        if len(buffers.eval.get(relation, [])) < expected:
            return None
        self.finalize(relation, buffers)
        return instance.verdict

    def finalize(self, relation: str, buffers: DataBuffers) -> None:
        """Train if needed and attach verdicts to buffered eval instances."""
        pending = [
            inst for inst in buffers.eval.get(relation, []) if inst.verdict is None
        ]
        if not pending:
            return
        model = self.ensure_trained(relation, buffers)
        if self.cfg.single_model:
            model.relation = relation
        for inst in pending:
            features = self._eval_features(inst)
            if not features:
                continue
            inst.verdict = model.score(features) >= model.mu


class Engine:
    """A knowledge store plus a trained policy, answering triple queries."""

    def __init__(
        self,
        store: KnowledgeStore,
        provider: EmbeddingProvider,
        table: QTable | None = None,
        config: EngineConfig | None = None,
        predictor: PredictionManager | None = None,
    ):
        self.config = config or EngineConfig()
        self.store = store
        self.store.ensure_baseline()
        self.provider = provider
        self.table = table or QTable(
            alpha=self.config.alpha,
            gamma=self.config.gamma,
            eps_start=self.config.eps_start,
            eps_end=self.config.eps_end,
            pretrain_steps=self.config.pretrain_steps,
        )
        self.buffers = DataBuffers()
        self.predictor = predictor if predictor is not None else PredictionManager(
            store, self.config
        )
        self._session_count = 0

    def executor(self, channel, rng=None, with_predictor: bool = True) -> Executor:
        return Executor(
            self.store,
            self.provider,
            channel,
            self.config.params,
            self.buffers,
            self.predictor if with_predictor else None,
            rng if rng is not None else np.random.default_rng(self.config.seed),
        )

    def session_rng(self, *tokens) -> np.random.Generator:
        digest = hashlib.blake2b(
            "|".join(str(t) for t in (self.config.seed, *tokens)).encode(),
            digest_size=8,
        ).digest()
        return np.random.default_rng(int.from_bytes(digest, "big"))

    def answer_query(
        self,
        query: QueryTriple,
        channel,
        mode: str = "E",
        budget: int | None = None,
        rng=None,
        with_predictor: bool = True,
    ) -> tuple[EpisodeResult, DataInstance]:
        """Run one query episode with the trained policy (acting mode)."""
        self._session_count += 1
        if rng is None:
            rng = self.session_rng("session", self._session_count, query)
        instance = DataInstance(
            triple=query,
            budget=budget if budget is not None else self.config.params.interaction_limit,
            mode=mode,
            label=None if mode != "C" else True,
        )
        executor = self.executor(channel, rng, with_predictor)
        result = run_episode(instance, self.table, executor, mode="act", rng=rng)
        return result, instance

    def stats(self) -> dict:
        g = self.store.graph
        return {
            "entities": len(g.entities),
            "relations": len(g.relations),
            "triples": len(g),
            "incomplete_paths": len(self.store.incomplete_counts),
            "tasks": len(self.store.task_scores),
        }

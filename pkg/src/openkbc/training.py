"""Synthetic query workload for training the strategy policy.

The policy only observes the 10 state bits, so tiny disposable graphs
covering every combination of unknown source/target/relation, rich or sparse
connectivity, and interaction budget are enough to learn the full strategy
space.  A fresh micro-graph is built per episode; acquired facts therefore
never leak between episodes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import product

import numpy as np

from .embeddings import synthesize_embeddings
from .executor import Answer, Executor, Params, Question
from .kb import KnowledgeStore, QueryTriple
from .strategy import DataInstance, QTable, run_episode

CONNECT_RELATION = "linksTo"
# how often a clue for an unknown relation mentions the query's own source
# entity; high enough that clue-first strictly beats connect-first whenever
# both the relation and the source are unknown
CLUE_SOURCE_MENTION_RATE = 0.85


@dataclass(frozen=True)
class Scenario:
    r_known: bool
    s_known: bool
    t_known: bool
    rich: bool
    budget: int


def scenario_catalog(budgets=(0, 1, 3, 5)) -> list[Scenario]:
    out = []
    for r_known, s_known, t_known, rich, budget in product(
        (True, False), (True, False), (True, False), (True, False), budgets
    ):
        out.append(Scenario(r_known, s_known, t_known, rich, budget))
    return out


def build_scenario_store(spec: Scenario) -> tuple[KnowledgeStore, QueryTriple]:
    """A disposable micro-KB realizing the scenario's knowledge pattern."""
    store = KnowledgeStore()
    s_label = "qsrc" if spec.s_known else "newSrc"
    t_label = "qtgt" if spec.t_known else "newTgt"
    r_label = "relKnown" if spec.r_known else "relNew"

    # filler cluster: anchor pool and negative-sampling material
    store.add_triple_labels("fillA", "fillRel", "fillB")
    store.add_triple_labels("fillB", "fillRel", "fillC")
    store.add_triple_labels("fillC", "otherRel", "fillD")
    if spec.r_known:
        store.add_triple_labels("fillA", r_label, "fillD")

    if spec.rich:
        # degree-1 endpoints around a hub: walks reliably meet in the middle
        if spec.s_known:
            store.add_triple_labels(s_label, "stepOut", "hub")
        if spec.t_known:
            store.add_triple_labels("hub", "stepIn", t_label)
        store.add_triple_labels("hub", "hubRel", "fillA")
    else:
        # endpoints hang off disconnected clusters: no complete path exists
        if spec.s_known:
            store.add_triple_labels(s_label, "stepOut", "islandA")
            store.add_triple_labels("islandA", "islandRel", "islandA2")
        if spec.t_known:
            store.add_triple_labels(t_label, "stepIn", "islandB")
            store.add_triple_labels("islandB", "islandRel", "islandB2")

    return store, QueryTriple(s_label, r_label, t_label)


class TrainerChannel:
    """Always-cooperative scripted user for policy training.

    Clues for an unknown relation sometimes mention the query's own source
    entity, which is what makes asking for clues before connecting entities
    pay off (the clue can make the entity known as a side effect).
    """

    def __init__(self, store: KnowledgeStore, query: QueryTriple, rng):
        self.store = store
        self.query = query
        self.rng = rng

    def ask(self, question: Question) -> Answer:
        if question.kind == "clue":
            relation = question.relation
            if (
                not self.store.entity_known(self.query.s)
                and self.rng.random() < CLUE_SOURCE_MENTION_RATE
            ):
                return Answer("clue", triple=(self.query.s, relation, "fillB"))
            return Answer("clue", triple=("fillA", relation, "fillC"))
        return Answer("link", relation=CONNECT_RELATION)


@dataclass
class TrainingReport:
    steps: int
    episodes: int
    wins: int


ALPHA_FLOOR = 0.02


def train_policy(
    table: QTable,
    params: Params,
    steps: int | None = None,
    seed: int = 0,
    embedding_dim: int = 8,
    anneal_alpha: bool = True,
) -> TrainingReport:
    """Epsilon-greedy Q-learning over the synthetic workload.

    ``steps`` defaults to the table's pre-training step count; epsilon decays
    linearly across it and stays at its floor afterwards.  The update step
    size is annealed toward a small floor so the table converges to expected
    returns instead of echoing the most recent stochastic outcomes; the
    table's own alpha is restored afterwards for any later online updates.
    """
    total_steps = steps if steps is not None else table.pretrain_steps
    catalog = scenario_catalog()
    providers: dict[Scenario, object] = {}
    rng = np.random.default_rng(seed)
    counter = {"steps": 0}
    episodes = 0
    wins = 0
    index = 0
    base_alpha = table.alpha
    while counter["steps"] < total_steps:
        spec = catalog[index % len(catalog)]
        index += 1
        if anneal_alpha:
            frac = min(1.0, counter["steps"] / total_steps)
            table.alpha = base_alpha + frac * (ALPHA_FLOOR - base_alpha)
        store, query = build_scenario_store(spec)
        provider = providers.get(spec)
        if provider is None:
            provider = synthesize_embeddings(store.graph, embedding_dim, seed)
            providers[spec] = provider
        channel = TrainerChannel(store, query, rng)
        executor = Executor(
            store,
            provider,
            channel,
            replace(params, interaction_limit=spec.budget),
            rng=rng,
        )
        instance = DataInstance(triple=query, budget=spec.budget, mode="T")
        result = run_episode(
            instance,
            table,
            executor,
            mode="train",
            rng=rng,
            epsilon=lambda: table.epsilon(counter["steps"]),
            on_step=lambda: counter.__setitem__("steps", counter["steps"] + 1),
        )
        episodes += 1
        wins += 1 if result.won else 0
    table.alpha = base_alpha
    return TrainingReport(steps=counter["steps"], episodes=episodes, wins=wins)


def greedy_policy(table: QTable) -> dict[int, int]:
    """Greedy action per visited state (for inspection and dumps)."""
    from .strategy import choose_action

    rng = np.random.default_rng(0)
    return {
        state: int(choose_action(table, state, 0.0, rng))
        for state in sorted(table.visited)
    }

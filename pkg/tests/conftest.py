import numpy as np
import pytest

from openkbc.embeddings import EmbeddingProvider
from openkbc.executor import Answer, Params, Question
from openkbc.kb import KnowledgeStore
from openkbc.strategy import QTable
from openkbc.training import train_policy

POLICY_SEED = 3
POLICY_STEPS = 30_000


@pytest.fixture(scope="session")
def trained_table() -> QTable:
    """One policy for the whole suite; training is seeded and synthetic."""
    table = QTable(pretrain_steps=POLICY_STEPS)
    train_policy(table, Params(), steps=POLICY_STEPS, seed=POLICY_SEED)
    return table


def build_golden_store() -> KnowledgeStore:
    """The worked-example micro-KB: the query source entity and relation are
    absent, and the island city's state link is missing."""
    store = KnowledgeStore()
    store.add_triple_labels("David Cameron", "BornIn", "London")
    store.add_triple_labels("London", "CapitalOfState", "England")
    store.add_triple_labels("England", "StateOf", "UK")
    store.add_triple_labels("Hawaii", "StateOf", "USA")
    store.add_triple_labels("Honolulu", "IslandCityOf", "Pacific")
    store.freeze_baseline()
    return store


GOLDEN_VECTORS = {
    "USA": [1.0, 0.0, 0.0, 0.0],
    "Hawaii": [0.30, 0.90, -0.316, 0.0],
    "Honolulu": [0.35, 0.937, 0.0, 0.0],
    "Obama": [0.34, 0.92, 0.2, 0.0],
    "Pacific": [0.0, 0.0, 0.0, 1.0],
    "David Cameron": [0.0, 0.1, 0.99, 0.0],
    "London": [0.0, 0.0, 1.0, 0.0],
    "England": [0.05, 0.0, 0.99, 0.0],
    "UK": [0.0, 0.05, 0.99, 0.0],
}

GOLDEN_WALK_SEED = 10


def build_golden_provider() -> EmbeddingProvider:
    provider = EmbeddingProvider(4)
    for label, vec in GOLDEN_VECTORS.items():
        provider.put(label, np.array(vec))
    return provider


def write_golden_embedding_file(path) -> None:
    lines = [f"{len(GOLDEN_VECTORS)} 4"]
    for label, vec in GOLDEN_VECTORS.items():
        lines.append(label + " " + " ".join(str(x) for x in vec))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class GoldenUserChannel:
    """Scripted answers for the worked example; declines everything else."""

    def __init__(self):
        self.seen: list[Question] = []

    def ask(self, question: Question) -> Answer:
        self.seen.append(question)
        if question.kind == "clue" and question.relation == "CitizenOf":
            return Answer("clue", triple=("David Cameron", "CitizenOf", "UK"))
        if question.kind == "clq" and question.pair == ("Obama", "Honolulu"):
            return Answer("link", relation="BornIn")
        if question.kind == "mlq" and question.pair == ("Honolulu", "Hawaii"):
            return Answer("link", relation="CapitalOfState")
        return Answer.decline()

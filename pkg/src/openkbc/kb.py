"""Knowledge store: the fact graph, the relation/entity-pair matrix, per-task
quality scores, and the frequency DB of incomplete paths.

Relations are interned in forward/inverse pairs (forward ids are even,
``inverse(r) == r ^ 1``), so inverse closure is cheap and structural.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass
from pathlib import Path

RELATED = "@-RelatedTo-@"
LOOSELY_RELATED = "@-LooselyRelatedTo-@"
NOT_RELATED = "@-NotRelatedTo-@"
MISSING_LINK = "@-?-@"

TEMPLATE_LABELS = (RELATED, LOOSELY_RELATED, NOT_RELATED, MISSING_LINK)

INVERSE_SUFFIX = "⁻¹"

SNAPSHOT_FORMAT = "okbc-snapshot"
SNAPSHOT_VERSION = 1


class TemplateRelationError(ValueError):
    """A template relation was used where only real relations are allowed."""


class SnapshotError(ValueError):
    """Snapshot file is unreadable; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class EntityRegistry:
    """Bijective interning of entity labels to integer ids."""

    def __init__(self):
        self._labels: list[str] = []
        self._ids: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self._labels)

    def __contains__(self, label: str) -> bool:
        return label in self._ids

    def intern(self, label: str) -> int:
        eid = self._ids.get(label)
        if eid is None:
            eid = len(self._labels)
            self._labels.append(label)
            self._ids[label] = eid
        return eid

    def id_of(self, label: str) -> int | None:
        return self._ids.get(label)

    def label(self, eid: int) -> str:
        return self._labels[eid]

    def labels(self) -> list[str]:
        return list(self._labels)

    def ids(self) -> range:
        return range(len(self._labels))


class RelationRegistry:
    """Interning of relation labels in forward/inverse pairs.

    Forward relations get even ids; ``inverse(r) == r ^ 1`` always holds, so
    no relation is its own inverse.  The three guess templates and the
    missing-link marker are pre-interned and flagged as templates.
    """

    def __init__(self, inverse_suffix: str = INVERSE_SUFFIX):
        self._labels: list[str] = []
        self._ids: dict[str, int] = {}
        self._template: set[int] = set()
        self.inverse_suffix = inverse_suffix
        for label in TEMPLATE_LABELS:
            rid = self.intern(label)
            self._template.add(rid)
            self._template.add(inverse(rid))

    def __len__(self) -> int:
        return len(self._labels)

    def __contains__(self, label: str) -> bool:
        return label in self._ids

    def intern(self, label: str) -> int:
        """Intern a forward relation label, creating its inverse alongside."""
        rid = self._ids.get(label)
        if rid is not None:
            return rid
        rid = len(self._labels)
        self._labels.append(label)
        self._ids[label] = rid
        inv_label = label + self.inverse_suffix
        self._labels.append(inv_label)
        self._ids[inv_label] = rid + 1
        return rid

    def id_of(self, label: str) -> int | None:
        return self._ids.get(label)

    def label(self, rid: int) -> str:
        return self._labels[rid]

    def is_template(self, rid: int) -> bool:
        return rid in self._template

    def forward_ids(self) -> range:
        return range(0, len(self._labels), 2)

    @property
    def marker_id(self) -> int:
        return self._ids[MISSING_LINK]

    def template_id(self, label: str) -> int:
        rid = self._ids[label]
        assert rid in self._template
        return rid


def inverse(rid: int) -> int:
    """Inverse relation id; an involution with no fixed points."""
    return rid ^ 1


@dataclass(frozen=True)
class Triple:
    s: int
    r: int
    t: int

    def inverted(self) -> "Triple":
        return Triple(self.t, inverse(self.r), self.s)


@dataclass(frozen=True)
class QueryTriple:
    """A triple stated by the user; any part may be unknown to the KB."""

    s: str
    r: str
    t: str

    @classmethod
    def parse(cls, text: str) -> "QueryTriple":
        parts = text.split("\t") if "\t" in text else text.split()
        if len(parts) != 3:
            raise ValueError(f"expected 's r t', got {text!r}")
        return cls(*parts)


class KnowledgeGraph:
    """Directed multigraph of facts with an adjacency index.

    Every stored triple is paired with its inverse, so traversal over the
    adjacency index sees both edge directions.
    """

    def __init__(self, inverse_suffix: str = INVERSE_SUFFIX):
        self.entities = EntityRegistry()
        self.relations = RelationRegistry(inverse_suffix)
        self._adj: dict[int, list[tuple[int, int]]] = {}
        self._triples: set[tuple[int, int, int]] = set()

    # -- queries -----------------------------------------------------------

    def __len__(self) -> int:
        return len(self._triples)

    def has_triple(self, t: Triple) -> bool:
        return (t.s, t.r, t.t) in self._triples

    def neighbors(self, eid: int) -> list[tuple[int, int]]:
        """(relation, neighbor) pairs leaving ``eid`` (inverses included)."""
        return self._adj.get(eid, [])

    def triples(self):
        for s, r, t in self._triples:
            yield Triple(s, r, t)

    def forward_triples(self):
        for s, r, t in sorted(self._triples):
            if r % 2 == 0:
                yield Triple(s, r, t)

    # -- mutation ----------------------------------------------------------

    def add_edge(self, t: Triple) -> bool:
        """Insert a triple and its inverse. Returns False on duplicates."""
        key = (t.s, t.r, t.t)
        if key in self._triples:
            return False
        inv = t.inverted()
        self._triples.add(key)
        self._triples.add((inv.s, inv.r, inv.t))
        self._adj.setdefault(t.s, []).append((t.r, t.t))
        if (inv.s, inv.r, inv.t) != key:
            self._adj.setdefault(inv.s, []).append((inv.r, inv.t))
        return True

    def intern_triple(self, s: str, r: str, t: str) -> Triple:
        """Intern labels (creating them on first mention) without storing."""
        return Triple(
            self.entities.intern(s), self.relations.intern(r), self.entities.intern(t)
        )


class PairMatrix:
    """Sparse binary matrix: rows are relations, columns are entity pairs.

    ``M[r, (s, t)] == 1`` exactly when the non-template triple (s, r, t) is in
    the graph; the inverse fact is stored under the reversed pair.
    """

    def __init__(self):
        self._rows: dict[int, set[tuple[int, int]]] = {}

    def set(self, rid: int, pair: tuple[int, int]) -> None:
        self._rows.setdefault(rid, set()).add(pair)

    def get(self, rid: int, pair: tuple[int, int]) -> int:
        return 1 if pair in self._rows.get(rid, ()) else 0

    def row(self, rid: int) -> set[tuple[int, int]]:
        return self._rows.get(rid, set())

    def rows(self) -> dict[int, set[tuple[int, int]]]:
        return self._rows

    def relation_ids(self) -> list[int]:
        return sorted(self._rows)

    def nnz(self) -> int:
        return sum(len(v) for v in self._rows.values())


class TaskScores:
    """Per-relation record of past predictive quality (MCC in [-1, 1])."""

    def __init__(self):
        self._scores: dict[int, float] = {}

    def __len__(self) -> int:
        return len(self._scores)

    def __contains__(self, rid: int) -> bool:
        return rid in self._scores

    def get(self, rid: int) -> float | None:
        return self._scores.get(rid)

    def update(self, rid: int, mcc: float) -> None:
        if not -1.0 <= mcc <= 1.0:
            raise ValueError(f"MCC must be in [-1, 1], got {mcc}")
        self._scores[rid] = mcc

    def items(self) -> dict[int, float]:
        return dict(self._scores)

    def bottom_tasks(self, rho: float) -> set[int]:
        """The floor(rho% of |T|) lowest-scored relations, ties by id."""
        if not 0 <= rho <= 100:
            raise ValueError(f"rho must be a percentage, got {rho}")
        n = math.floor(rho / 100.0 * len(self._scores))
        ranked = sorted(self._scores.items(), key=lambda kv: (kv[1], kv[0]))
        return {rid for rid, _ in ranked[:n]}


class IncompletePathCounts:
    """Frequency DB of incomplete path features per query relation.

    Keys are (relation, path labels, gap pair); values count how many times
    the incomplete path was extracted.
    """

    def __init__(self):
        self._counts: dict[tuple, int] = {}

    def __len__(self) -> int:
        return len(self._counts)

    @staticmethod
    def _key(rid: int, feature, pair: tuple[int, int]) -> tuple:
        return (rid, feature.labels, feature.gap_index, pair)

    def record(self, rid: int, feature, pair: tuple[int, int], times: int = 1) -> None:
        if feature.is_complete():
            raise ValueError("only incomplete path features are recorded")
        if pair != feature.gap_pair:
            raise ValueError("gap pair does not match the feature's gap")
        key = self._key(rid, feature, pair)
        self._counts[key] = self._counts.get(key, 0) + times

    def count(self, rid: int, feature, pair: tuple[int, int]) -> int:
        return self._counts.get(self._key(rid, feature, pair), 0)

    def entries(self) -> dict[tuple, int]:
        return dict(self._counts)


class KnowledgeStore:
    """Facade bundling the graph, pair matrix, task scores, and path counts.

    Single-writer contract: all mutation goes through this object; readers
    may share it freely between mutations.
    """

    def __init__(self, inverse_suffix: str = INVERSE_SUFFIX):
        self.graph = KnowledgeGraph(inverse_suffix)
        self.matrix = PairMatrix()
        self.task_scores = TaskScores()
        self.incomplete_counts = IncompletePathCounts()
        self._baseline_relations: set[int] | None = None

    # -- fact insertion ------------------------------------------------------

    def add_triple(self, triple: Triple) -> bool:
        """Add a real fact to the graph and the pair matrix (idempotent)."""
        if self.graph.relations.is_template(triple.r):
            raise TemplateRelationError(
                f"template relation {self.graph.relations.label(triple.r)!r} "
                "cannot be asserted as a fact"
            )
        added = self.graph.add_edge(triple)
        self.matrix.set(triple.r, (triple.s, triple.t))
        self.matrix.set(inverse(triple.r), (triple.t, triple.s))
        return added

    def add_triple_labels(self, s: str, r: str, t: str) -> Triple:
        triple = self.graph.intern_triple(s, r, t)
        self.add_triple(triple)
        return triple

    def add_guess_edge(self, triple: Triple) -> bool:
        """Add a guessed template link to the graph only (never to M)."""
        if not self.graph.relations.is_template(triple.r):
            raise ValueError("add_guess_edge is for template relations only")
        return self.graph.add_edge(triple)

    def freeze_baseline(self) -> None:
        """Mark the currently known relations as the pre-existing KB."""
        self._baseline_relations = set(self.graph.relations.forward_ids())

    def ensure_baseline(self) -> None:
        if self._baseline_relations is None:
            self.freeze_baseline()

    def is_recent_relation(self, rid: int) -> bool:
        """True when the relation was learned after the baseline snapshot."""
        if self._baseline_relations is None:
            return False
        return (rid - rid % 2) not in self._baseline_relations

    # -- lookups -------------------------------------------------------------

    def entity_known(self, label: str) -> bool:
        """An entity counts as known once it has at least one stored edge."""
        eid = self.graph.entities.id_of(label)
        return eid is not None and bool(self.graph.neighbors(eid))

    def relation_known(self, label: str) -> bool:
        """A relation counts as known once it has at least one stored fact."""
        rid = self.graph.relations.id_of(label)
        return rid is not None and bool(self.matrix.row(rid))

    def lookup_query(self, s: str, r: str, t: str) -> tuple[int, int, int]:
        """(source found, target found, relation found) bits for a query."""
        return (
            1 if self.entity_known(s) else 0,
            1 if self.entity_known(t) else 0,
            1 if self.relation_known(r) else 0,
        )

    def known_entity_ids(self) -> list[int]:
        return [eid for eid in self.graph.entities.ids() if self.graph.neighbors(eid)]

    # -- persistence -----------------------------------------------------------

    def to_payload(self) -> dict:
        g = self.graph
        return {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "inverse_suffix": g.relations.inverse_suffix,
            "entities": g.entities.labels(),
            "relations": [
                {"label": g.relations.label(rid), "template": g.relations.is_template(rid)}
                for rid in g.relations.forward_ids()
            ],
            "triples": [[t.s, t.r, t.t] for t in g.forward_triples()],
            "task_scores": [[rid, mcc] for rid, mcc in sorted(self.task_scores.items().items())],
            "incomplete_counts": [
                [list(key[1]), key[2], list(key[3]), key[0], n]
                for key, n in sorted(self.incomplete_counts.entries().items())
            ],
            "baseline_relations": (
                sorted(self._baseline_relations)
                if self._baseline_relations is not None
                else None
            ),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "KnowledgeStore":
        from .paths import PathFeature  # local import to avoid a cycle

        if payload.get("format") != SNAPSHOT_FORMAT:
            raise SnapshotError("not a knowledge-store snapshot")
        if payload.get("version") != SNAPSHOT_VERSION:
            raise SnapshotError(f"unsupported snapshot version {payload.get('version')}")
        store = cls(payload.get("inverse_suffix", INVERSE_SUFFIX))
        g = store.graph
        for label in payload["entities"]:
            g.entities.intern(label)
        for rec in payload["relations"]:
            rid = g.relations.intern(rec["label"])
            if rec["template"] != g.relations.is_template(rid):
                raise SnapshotError(f"template flag mismatch for {rec['label']!r}")
        for s, r, t in payload["triples"]:
            triple = Triple(s, r, t)
            if g.relations.is_template(r):
                store.add_guess_edge(triple)
            else:
                store.add_triple(triple)
        for rid, mcc in payload["task_scores"]:
            store.task_scores.update(rid, mcc)
        for labels, gap_index, pair, rid, n in payload["incomplete_counts"]:
            feature = PathFeature(tuple(labels), gap_index, tuple(pair))
            store.incomplete_counts.record(rid, feature, tuple(pair), times=n)
        if payload.get("baseline_relations") is not None:
            store._baseline_relations = set(payload["baseline_relations"])
        return store

    def save_snapshot(self, path: str | Path, extra: dict | None = None) -> None:
        payload = self.to_payload()
        if extra:
            payload.update(extra)
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load_snapshot(cls, path: str | Path) -> "KnowledgeStore":
        return cls.from_payload(read_snapshot_payload(path))


def read_snapshot_payload(path: str | Path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SnapshotError(f"malformed snapshot: {exc.msg}", offset=exc.pos) from exc
    if not isinstance(payload, dict):
        raise SnapshotError("snapshot root must be an object")
    return payload


def encode_array(arr) -> dict:
    """Self-describing base64 encoding for numpy arrays in snapshots."""
    import numpy as np

    a = np.ascontiguousarray(arr)
    return {
        "dtype": str(a.dtype),
        "shape": list(a.shape),
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def decode_array(rec: dict):
    import numpy as np

    raw = base64.b64decode(rec["data"])
    return np.frombuffer(raw, dtype=rec["dtype"]).reshape(rec["shape"]).copy()


def load_triples_tsv(path: str | Path, store: KnowledgeStore | None = None) -> KnowledgeStore:
    """Ingest a tab-separated triples file (``source<TAB>relation<TAB>target``).

    Inverse facts are synthesized on load via the registry's inverse suffix.
    """
    store = store or KnowledgeStore()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{line_no}: expected 3 tab-separated fields")
            store.add_triple_labels(*parts)
    return store

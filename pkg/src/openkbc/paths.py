"""Path features between entity pairs, extracted by context-guided
bidirectional random walks over the knowledge graph.

A walk grows one frontier from the source and one from the target.  If the
frontiers meet, the joined relation sequence is a complete feature; if the
per-walk budget runs out first, the two frontier endpoints become the gap of
an incomplete feature bridged by the missing-link marker.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .kb import KnowledgeGraph, inverse

RELEVANCE_FLOOR = 0.01


class OracleGuardrailError(ValueError):
    """Exhaustive enumeration refused: graph or depth beyond the guardrail."""


@dataclass(frozen=True)
class PathFeature:
    """A sequence of relation ids, optionally containing one marker gap."""

    labels: tuple[int, ...]
    gap_index: int | None = None
    gap_pair: tuple[int, int] | None = None

    def __post_init__(self):
        if (self.gap_index is None) != (self.gap_pair is None):
            raise ValueError("gap index and gap pair must be set together")
        if self.gap_index is not None and not 0 <= self.gap_index < len(self.labels):
            raise ValueError("gap index out of range")

    def is_complete(self) -> bool:
        return self.gap_index is None

    def __len__(self) -> int:
        return len(self.labels)


class FeatureSet:
    """Multiset of path features split into complete and incomplete parts."""

    def __init__(self):
        self._counts: dict[PathFeature, int] = {}

    def add(self, feature: PathFeature, times: int = 1) -> None:
        self._counts[feature] = self._counts.get(feature, 0) + times

    def remove(self, feature: PathFeature) -> int:
        """Drop a feature entirely, returning its multiplicity."""
        return self._counts.pop(feature, 0)

    def items(self):
        return self._counts.items()

    def complete_items(self):
        return [(f, n) for f, n in self._counts.items() if f.is_complete()]

    def incomplete_items(self):
        return [(f, n) for f, n in self._counts.items() if not f.is_complete()]

    def complete_units(self) -> int:
        """Number of complete features counted with multiplicity."""
        return sum(n for f, n in self._counts.items() if f.is_complete())

    def total_units(self) -> int:
        return sum(self._counts.values())

    def is_empty(self) -> bool:
        return not self._counts

    def __len__(self) -> int:
        return len(self._counts)

    def __eq__(self, other) -> bool:
        return isinstance(other, FeatureSet) and self._counts == other._counts

    def __repr__(self) -> str:
        return f"FeatureSet({self._counts!r})"


@dataclass
class WalkConfig:
    max_len: int = 7   # longest feature, marker counted as one label
    walks: int = 20    # walk attempts per extraction
    seed: int = 0

    def __post_init__(self):
        if self.max_len < 2:
            raise ValueError("max_len must be at least 2")
        if self.walks < 1:
            raise ValueError("walks must be at least 1")


def pair_rng(seed: int, s_label: str, t_label: str) -> np.random.Generator:
    """RNG keyed to the entity pair, stable across runs and graph growth."""
    digest = hashlib.blake2b(
        f"{seed}|{s_label}|{t_label}".encode(), digest_size=8
    ).digest()
    return np.random.default_rng(int.from_bytes(digest, "big"))


def reverse_feature(feature: PathFeature) -> PathFeature:
    """Reverse a complete feature, inverting each relation (an involution)."""
    if not feature.is_complete():
        raise ValueError("cannot reverse an incomplete path feature")
    return PathFeature(tuple(inverse(r) for r in reversed(feature.labels)))


def complete_with_link(feature: PathFeature, link: int) -> PathFeature:
    """Replace the marker with a concrete relation, clearing the gap."""
    if feature.is_complete():
        raise ValueError("feature is already complete")
    labels = list(feature.labels)
    labels[feature.gap_index] = link
    return PathFeature(tuple(labels))


class _Frontier:
    __slots__ = ("node", "rels", "visited", "steps")

    def __init__(self, start: int):
        self.node = start
        self.rels: list[int] = []
        self.visited = {start}
        self.steps = 0


def extract_features(
    graph: KnowledgeGraph,
    s_label: str,
    t_label: str,
    cfg: WalkConfig,
    provider,
    query_relation: int | None,
) -> FeatureSet:
    """Run bidirectional walks between two entities and collect features.

    Each walk draws a total length budget, then alternates frontier steps
    weighted by each neighbor's contextual relevance to the query pair.
    Unregistered endpoints yield an empty set.  The single-link query
    relation (and its inverse) is never emitted.
    """
    out = FeatureSet()
    s = graph.entities.id_of(s_label)
    t = graph.entities.id_of(t_label)
    if s is None or t is None or s == t:
        return out
    rng = pair_rng(cfg.seed, s_label, t_label)
    marker = graph.relations.marker_id
    excluded = set()
    if query_relation is not None:
        excluded = {(query_relation,), (inverse(query_relation),)}

    weight_cache: dict[int, float] = {}

    def weight(eid: int) -> float:
        w = weight_cache.get(eid)
        if w is None:
            w = max(provider.relevance_or(graph.entities.label(eid), s_label, t_label, 0.0),
                    RELEVANCE_FLOOR)
            weight_cache[eid] = w
        return w

    for _ in range(cfg.walks):
        total = int(rng.integers(2, cfg.max_len + 1))
        fwd_budget = (total - 1 + 1) // 2
        bwd_budget = (total - 1) - fwd_budget
        fwd, bwd = _Frontier(s), _Frontier(t)
        met = False
        active = True
        while active:
            active = False
            for frontier, other, budget in ((fwd, bwd, fwd_budget), (bwd, fwd, bwd_budget)):
                if frontier.steps >= budget:
                    continue
                blocked = fwd.visited | bwd.visited
                candidates = [
                    (rel, nb)
                    for rel, nb in graph.neighbors(frontier.node)
                    if nb not in blocked or nb == other.node
                ]
                if not candidates:
                    continue
                active = True
                weights = np.array([weight(nb) for _, nb in candidates])
                idx = int(rng.choice(len(candidates), p=weights / weights.sum()))
                rel, nb = candidates[idx]
                frontier.rels.append(rel)
                frontier.visited.add(nb)
                frontier.node = nb
                frontier.steps += 1
                if nb == other.node:
                    met = True
                    break
            if met:
                break
        bwd_inverted = tuple(inverse(r) for r in reversed(bwd.rels))
        if met:
            labels = tuple(fwd.rels) + bwd_inverted
            if labels and labels not in excluded:
                out.add(PathFeature(labels))
        else:
            labels = tuple(fwd.rels) + (marker,) + bwd_inverted
            out.add(PathFeature(labels, gap_index=len(fwd.rels),
                                gap_pair=(fwd.node, bwd.node)))
    return out


def enumerate_paths_exhaustive(
    graph: KnowledgeGraph,
    s_label: str,
    t_label: str,
    max_len: int,
) -> set[PathFeature]:
    """All simple relation paths between two entities, by depth-first search.

    Test oracle only: refuses graphs or depths beyond a small guardrail.
    """
    if max_len > 6:
        raise OracleGuardrailError(f"max_len {max_len} exceeds the oracle cap of 6")
    if len(graph.entities) > 200:
        raise OracleGuardrailError(
            f"{len(graph.entities)} entities exceed the oracle cap of 200"
        )
    s = graph.entities.id_of(s_label)
    t = graph.entities.id_of(t_label)
    found: set[PathFeature] = set()
    if s is None or t is None or s == t:
        return found

    def dfs(node: int, rels: list[int], visited: set[int]) -> None:
        if len(rels) >= max_len:
            return
        for rel, nb in graph.neighbors(node):
            if nb == t:
                found.add(PathFeature(tuple(rels) + (rel,)))
                continue
            if nb in visited:
                continue
            visited.add(nb)
            rels.append(rel)
            dfs(nb, rels, visited)
            rels.pop()
            visited.remove(nb)

    dfs(s, [], {s})
    return found

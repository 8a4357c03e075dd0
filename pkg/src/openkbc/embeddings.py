"""Entity vectors backing contextual similarity and relevance scores."""

from __future__ import annotations

import hashlib
import warnings

import numpy as np

from .kb import KnowledgeGraph

CANDIDATE_POOL_LIMIT = 10_000
CANDIDATE_SAMPLE = 1_000


class MissingVectorError(KeyError):
    """No embedding vector is available for the requested entity."""


class EmbeddingFormatError(ValueError):
    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class EmbeddingProvider:
    """Fixed-dimension entity vectors, L2-normalized, keyed by label."""

    def __init__(self, dimension: int):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self._vectors: dict[str, np.ndarray] = {}

    def __contains__(self, label: str) -> bool:
        return label in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def put(self, label: str, vector: np.ndarray) -> None:
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (self.dimension,):
            raise ValueError(f"vector for {label!r} has shape {v.shape}")
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise ValueError(f"zero vector for {label!r}")
        self._vectors[label] = v / norm

    def vector(self, label: str) -> np.ndarray:
        try:
            return self._vectors[label]
        except KeyError:
            raise MissingVectorError(label) from None

    def similarity(self, a: str, b: str) -> float:
        """Cosine of the two entity vectors, clipped into [-1, 1]."""
        va, vb = self.vector(a), self.vector(b)
        return float(np.clip(np.dot(va, vb), -1.0, 1.0))

    def similarity_or(self, a: str, b: str, default: float = 0.0) -> float:
        try:
            return self.similarity(a, b)
        except MissingVectorError:
            return default

    def relevance(self, candidate: str, s: str, t: str) -> float:
        """Mean cosine of the candidate to whichever query endpoints embed."""
        vc = self.vector(candidate)
        sims = [
            float(np.clip(np.dot(vc, self._vectors[e]), -1.0, 1.0))
            for e in (s, t)
            if e in self._vectors
        ]
        if not sims:
            raise MissingVectorError(f"neither {s!r} nor {t!r} has a vector")
        return sum(sims) / len(sims)

    def relevance_or(self, candidate: str, s: str, t: str, default: float = 0.0) -> float:
        try:
            return self.relevance(candidate, s, t)
        except MissingVectorError:
            return default


def load_embeddings(path: str) -> EmbeddingProvider:
    """Parse a word2vec-style text file: ``count dim`` header, then one
    ``label v1 .. v_dim`` line per entity. Vectors are normalized on load."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise EmbeddingFormatError("header must be 'count dim'", 1)
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise EmbeddingFormatError("header must be two integers", 1) from None
        provider = EmbeddingProvider(dim)
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise EmbeddingFormatError(
                    f"expected {dim + 1} fields, got {len(parts)}", line_no
                )
            label = parts[0]
            if label in provider:
                warnings.warn(f"duplicate embedding for {label!r}; keeping the last")
            try:
                provider.put(label, np.array([float(x) for x in parts[1:]]))
            except ValueError as exc:
                raise EmbeddingFormatError(str(exc), line_no) from None
    if len(provider) != count:
        warnings.warn(
            f"embedding file declared {count} vectors but contained {len(provider)}"
        )
    return provider


def synthesize_embeddings(
    graph: KnowledgeGraph, dim: int, seed: int
) -> EmbeddingProvider:
    """Deterministic stand-in vectors: a seeded random projection of each
    entity's adjacency row, so shared neighborhoods mean high cosine."""
    if dim < 2:
        raise ValueError("dim must be at least 2")
    n = len(graph.entities)
    provider = EmbeddingProvider(dim)
    if n == 0:
        return provider
    rng = np.random.default_rng(seed)
    projection = rng.standard_normal((n, dim))
    for eid in graph.entities.ids():
        row = np.zeros(n)
        for _, nb in graph.neighbors(eid):
            row[nb] = 1.0
        vec = row @ projection
        if np.linalg.norm(vec) == 0.0:
            label = graph.entities.label(eid)
            digest = hashlib.blake2b(
                f"{seed}|{label}".encode(), digest_size=8
            ).digest()
            vec = np.random.default_rng(
                int.from_bytes(digest, "big")
            ).standard_normal(dim)
        provider.put(graph.entities.label(eid), vec)
    return provider

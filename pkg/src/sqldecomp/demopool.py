"""Demonstration pool and retrieval.

Synthesis rounds pick demonstrations by gold-SQL tree similarity; inference
picks them by cosine similarity over an embedding cache. The bundled mock
embedder (character-trigram feature hashing) keeps retrieval testable without
any model behind it.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sqlast import DEFAULT_WEIGHTS, SimWeights, parse, reward
from .sqlast.errors import AstError

MOCK_DIM = 256
MOCK_TAG = "trigram-256"


class ParseFailure(Exception):
    """Query-side SQL did not parse, so similarity is undefined."""


class EmbedderUnavailable(Exception):
    pass


class ModelTagMismatch(Exception):
    """Cache was built by a different embedder than the one supplied."""


@dataclass(frozen=True)
class Demonstration:
    question: str
    gold_sql: str
    steps: tuple[tuple[str, str], ...] = ()
    origin_round: int = 0

    def to_payload(self) -> dict:
        return {
            "question": self.question,
            "gold_sql": self.gold_sql,
            "steps": [{"q": q, "y": y} for q, y in self.steps],
            "origin_round": self.origin_round,
        }

    @classmethod
    def from_payload(cls, data: dict) -> "Demonstration":
        return cls(
            question=data["question"],
            gold_sql=data["gold_sql"],
            steps=tuple((s["q"], s["y"]) for s in data.get("steps", [])),
            origin_round=int(data.get("origin_round", 0)),
        )


def load_pool(path: str | Path) -> list[Demonstration]:
    pool = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                pool.append(Demonstration.from_payload(json.loads(line)))
    return pool


def save_pool(pool: list[Demonstration], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for demo in pool:
            handle.write(json.dumps(demo.to_payload(), sort_keys=True) + "\n")


def seed_pool() -> list[Demonstration]:
    """The three hand-written starter demonstrations shipped with the package."""
    here = Path(__file__).parent / "data" / "seed_demos.jsonl"
    return load_pool(here)


def select_by_ast(
    query_gold_sql: str,
    pool: list[Demonstration],
    w: SimWeights = DEFAULT_WEIGHTS,
    k: int = 3,
) -> list[Demonstration]:
    """Top-k pool entries by tree similarity of gold SQL, insertion order on
    ties. Pool entries that fail to parse are skipped rather than fatal."""
    try:
        query_ast = parse(query_gold_sql)
    except AstError as exc:
        raise ParseFailure(str(exc)) from exc
    scored: list[tuple[float, int, Demonstration]] = []
    for idx, demo in enumerate(pool):
        try:
            demo_ast = parse(demo.gold_sql)
        except AstError:
            continue
        scored.append((reward(query_ast, demo_ast, w), idx, demo))
    scored.sort(key=lambda item: (-item[0], item[1]))
    return [demo for _, _, demo in scored[:k]]


class MockEmbedder:
    """Hash character trigrams into a fixed 256-bucket vector, unit L2 norm.

    Deterministic across processes (crc32, not the salted builtin hash).
    """

    model_tag = MOCK_TAG
    dim = MOCK_DIM

    def embed(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for row, text in enumerate(texts):
            grams = (
                [text[i : i + 3] for i in range(len(text) - 2)] if len(text) >= 3 else [text]
            )
            for gram in grams:
                out[row, zlib.crc32(gram.encode("utf-8")) % self.dim] += 1.0
            norm = np.linalg.norm(out[row])
            if norm == 0.0:
                out[row, 0] = 1.0
            else:
                out[row] /= norm
        return out


class HttpEmbedder:
    """Remote embedding endpoint: {model, input:[...]} -> {data:[{embedding}]}."""

    def __init__(self, endpoint: str, model: str, api_key: str = "", timeout: float = 60.0):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.model_tag = model
        self.dim = 0

    def embed(self, texts: list[str]) -> np.ndarray:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = requests.post(
                self.endpoint,
                json={"model": self.model, "input": texts},
                headers=headers,
                timeout=self.timeout,
            )
            response.raise_for_status()
        except requests.RequestException as exc:
            raise EmbedderUnavailable(str(exc)) from exc
        data = response.json()["data"]
        vectors = np.array([d["embedding"] for d in data], dtype=np.float64)
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        self.dim = vectors.shape[1]
        return vectors / norms


class EmbeddingCache:
    def __init__(self, model_tag: str, dim: int):
        self.model_tag = model_tag
        self.dim = dim
        self.questions: list[str] = []
        self.vectors = np.zeros((0, dim), dtype=np.float64)
        self._index: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.questions)

    def __contains__(self, question: str) -> bool:
        return question in self._index

    def add(self, question: str, vector: np.ndarray) -> None:
        if question in self._index:
            return
        self._index[question] = len(self.questions)
        self.questions.append(question)
        self.vectors = np.vstack([self.vectors, vector.reshape(1, -1)])

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(json.dumps({"dim": self.dim, "model_tag": self.model_tag}) + "\n")
            for question, vector in zip(self.questions, self.vectors):
                handle.write(
                    json.dumps({"question": question, "vector": list(vector)}) + "\n"
                )

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingCache":
        with open(path, encoding="utf-8") as handle:
            header = json.loads(handle.readline())
            cache = cls(model_tag=header["model_tag"], dim=int(header["dim"]))
            rows = []
            for line in handle:
                if not line.strip():
                    continue
                record = json.loads(line)
                cache._index[record["question"]] = len(cache.questions)
                cache.questions.append(record["question"])
                rows.append(record["vector"])
        cache.vectors = (
            np.array(rows, dtype=np.float64)
            if rows
            else np.zeros((0, cache.dim), dtype=np.float64)
        )
        return cache


def build_embedding_cache(
    questions: list[str],
    embedder,
    cache: EmbeddingCache | None = None,
) -> EmbeddingCache:
    """Embed every question not already cached; idempotent per question."""
    if cache is None:
        probe = embedder.embed([""]) if not questions else None
        dim = embedder.dim or (probe.shape[1] if probe is not None else MOCK_DIM)
        cache = EmbeddingCache(model_tag=embedder.model_tag, dim=dim)
    elif cache.model_tag != embedder.model_tag:
        raise ModelTagMismatch(
            f"cache built with {cache.model_tag!r}, embedder is {embedder.model_tag!r}"
        )
    fresh = []
    seen = set()
    for question in questions:
        if question not in cache and question not in seen:
            fresh.append(question)
            seen.add(question)
    if fresh:
        vectors = embedder.embed(fresh)
        for question, vector in zip(fresh, vectors):
            cache.add(question, vector)
    return cache


def retrieve(
    query: str,
    cache: EmbeddingCache,
    embedder,
    k: int = 3,
    pool: list[Demonstration] | None = None,
) -> list[tuple[str, str, float]]:
    """Exact top-k by cosine over the cache; (question, gold_sql, score) rows.

    gold_sql is joined from the pool by question text when a pool is given.
    """
    if cache.model_tag != embedder.model_tag:
        raise ModelTagMismatch(
            f"cache built with {cache.model_tag!r}, embedder is {embedder.model_tag!r}"
        )
    query_vec = embedder.embed([query])[0]
    # Correctly rounded dot products. A BLAS matvec is off by an ulp often
    # enough to misorder genuine score ties, and the tie-break contract
    # (insertion order) only means something when equal scores are equal bits.
    scores = [math.fsum(row) for row in (cache.vectors * query_vec).tolist()]
    ranked = sorted(range(len(cache)), key=lambda i: (-scores[i], i))[:k]
    sql_by_question: dict[str, str] = {}
    for demo in pool or []:
        sql_by_question.setdefault(demo.question, demo.gold_sql)
    return [
        (cache.questions[i], sql_by_question.get(cache.questions[i], ""), float(scores[i]))
        for i in ranked
    ]

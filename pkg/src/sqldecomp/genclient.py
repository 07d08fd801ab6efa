"""Next-step generators producing (subtask, subSQL) candidates.

Three interchangeable backends: a deterministic oracle that walks the gold
query's own tree (with a controllable noise rate), a transcript replayer for
byte-exact reruns, and a remote chat-completion endpoint. The search layer
sees only candidate lists and cannot tell them apart.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

from .demopool import Demonstration
from .schema import SchemaDescriptor
from .sqlast import EMPTY_AST, is_subtree, merge, parse, pretty_print
from .sqlast.errors import AstError
from .sqlast.nodes import CLAUSE, OPERATOR, Ast, BuildNode, freeze


class GeneratorError(Exception):
    pass


class EndpointUnavailable(GeneratorError):
    pass


class MalformedResponse(GeneratorError):
    pass


class TranscriptMiss(GeneratorError):
    pass


@dataclass(frozen=True)
class GenerationRequest:
    question: str
    schema: SchemaDescriptor
    knowledge: str = ""
    prior_steps: tuple[tuple[str, str], ...] = ()
    demonstrations: tuple[Demonstration, ...] = ()
    n_candidates: int = 3


def request_digest(request: GenerationRequest) -> str:
    payload = {
        "question": request.question,
        "schema": request.schema.digest_payload(),
        "knowledge": request.knowledge,
        "prior_steps": [[q, y] for q, y in request.prior_steps],
        "demonstrations": [d.to_payload() for d in request.demonstrations],
        "n_candidates": request.n_candidates,
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def render_prompt(request: GenerationRequest) -> str:
    """Byte-stable prompt: schema DDL, optional knowledge, demonstrations in
    given order, the question, prior steps, and the output format contract."""
    lines = [
        "You are decomposing a database question into a sequence of subtasks,",
        "each paired with one SELECT statement that works toward the answer.",
        "",
        "Database schema:",
        request.schema.to_ddl(),
        "",
    ]
    if request.knowledge:
        lines += ["Background knowledge:", request.knowledge, ""]
    if request.demonstrations:
        lines.append("Worked examples:")
        for n, demo in enumerate(request.demonstrations, start=1):
            lines.append(f"Example {n}:")
            lines.append(f"Question: {demo.question}")
            for sn, (q, y) in enumerate(demo.steps, start=1):
                lines.append(f"Step {sn}: {q}")
                lines.append(f"SQL {sn}: {y}")
        lines.append("")
    lines.append(f"Question: {request.question}")
    if request.prior_steps:
        lines.append("Steps completed so far:")
        for sn, (q, y) in enumerate(request.prior_steps, start=1):
            lines.append(f"Step {sn}: {q}")
            lines.append(f"SQL {sn}: {y}")
    lines += [
        "",
        f"Propose exactly {request.n_candidates} candidate next steps.",
        "Format every candidate as a numbered block:",
        "1.",
        "SUBTASK: <one-line description of the next subtask>",
        "SUBSQL: <one SELECT statement on a single line>",
    ]
    return "\n".join(lines)


_CANDIDATE_RE = re.compile(
    r"SUBTASK:[ \t]*(?P<subtask>.+?)\s*\nSUBSQL:[ \t]*(?P<subsql>.+?)(?:\n|$)"
)


def parse_candidates(content: str) -> list[tuple[str, str]]:
    """Extract (subtask, subsql) pairs from a tagged response."""
    pairs = [
        (m.group("subtask").strip(), m.group("subsql").strip())
        for m in _CANDIDATE_RE.finditer(content)
    ]
    if not pairs:
        raise MalformedResponse("no SUBTASK/SUBSQL blocks found")
    return pairs


# oracle plan construction

_SECTION_LABELS = ("FROM", "WHERE", "GROUP BY", "HAVING", "ORDER BY", "LIMIT")

_SECTION_BLURBS = {
    "FROM": "Identify the tables involved and how they connect.",
    "WHERE": "Filter the rows down to the ones the question asks about.",
    "GROUP BY": "Group the rows for aggregation.",
    "HAVING": "Keep only the groups satisfying the aggregate condition.",
    "ORDER BY": "Sort the results as requested.",
    "LIMIT": "Restrict the output to the requested number of rows.",
}


def _clone(node: BuildNode) -> BuildNode:
    return BuildNode(node.category, node.label, [_clone(c) for c in node.children])


def _plan_select(select: BuildNode, out: list[tuple[str, BuildNode]]) -> None:
    distinct = None
    items: list[BuildNode] = []
    named: dict[str, BuildNode] = {}
    for child in select.children:
        if child.category == OPERATOR and child.label == "DISTINCT" and not child.children:
            distinct = child
        elif child.category == CLAUSE and child.label in _SECTION_LABELS:
            named[child.label] = child
        else:
            items.append(child)

    # Grow clause by clause with a minimal projection, completing the full
    # projection before ordering and limits.
    projection: list[BuildNode] = items[:1]
    acc: list[BuildNode] = []

    def snapshot(description: str) -> None:
        children = [_clone(c) for c in projection + acc]
        out.append((description, BuildNode(CLAUSE, "SELECT", children)))

    for label in ("FROM", "WHERE", "GROUP BY", "HAVING"):
        if label in named:
            acc.append(named[label])
            snapshot(_SECTION_BLURBS[label])
    if distinct is not None or len(items) > 1:
        projection = ([distinct] if distinct is not None else []) + items
        snapshot("Select all the output columns the question asks for.")
    for label in ("ORDER BY", "LIMIT"):
        if label in named:
            acc.append(named[label])
            snapshot(_SECTION_BLURBS[label])


def _plan_tree(node: BuildNode, out: list[tuple[str, BuildNode]]) -> None:
    if node.label == "SELECT":
        _plan_select(node, out)
        return
    arms = [
        c
        for c in node.children
        if c.category == CLAUSE and c.label not in ("ORDER BY", "LIMIT")
    ]
    trail = [
        c
        for c in node.children
        if c.category == CLAUSE and c.label in ("ORDER BY", "LIMIT")
    ]
    if not arms:
        return
    _plan_tree(arms[0], out)
    cumulative = [arms[0]]
    for arm in arms[1:]:
        cumulative.append(arm)
        tree = BuildNode(node.category, node.label, [_clone(c) for c in cumulative])
        out.append(("Combine with the next result set.", tree))
    current = list(cumulative)
    for tail in trail:
        current.append(tail)
        tree = BuildNode(node.category, node.label, [_clone(c) for c in current])
        out.append((_SECTION_BLURBS[tail.label], tree))


def build_oracle_plan(
    gold_ast: Ast, schema: SchemaDescriptor | None = None
) -> list[tuple[str, str, Ast]]:
    """Cumulative decomposition of the gold tree into full SELECT statements.

    Every emitted step is verified to parse back as a subtree of the gold tree
    and to strictly advance the running merge; anything that does not survives
    filtering is dropped. The plan always ends at the complete statement.
    """
    drafts: list[tuple[str, BuildNode]] = []
    _plan_tree(gold_ast.to_build()[0], drafts)

    plan: list[tuple[str, str, Ast]] = []
    merged = EMPTY_AST
    for description, tree in drafts:
        try:
            sql = pretty_print(freeze([tree], canonical=True))
            ast = parse(sql, schema)
        except AstError:
            continue
        if not is_subtree(ast, gold_ast) or is_subtree(ast, merged):
            continue
        merged = merge(merged, ast)
        plan.append((description, sql, ast))

    final_sql = pretty_print(gold_ast)
    if not plan or plan[-1][1] != final_sql:
        plan.append(
            (
                "Assemble the complete query answering the question.",
                final_sql,
                parse(final_sql, schema),
            )
        )
    return plan


class OracleBackend:
    """Walks the gold tree's own decomposition; noise swaps candidates for
    redundant repeats, off-target probes, or broken SQL."""

    def __init__(
        self,
        gold_sql: str,
        schema: SchemaDescriptor | None = None,
        noise: float = 0.0,
        seed: int = 0,
    ):
        self.schema = schema
        self.gold_ast = parse(gold_sql, schema)
        self.plan = build_oracle_plan(self.gold_ast, schema)
        self.noise = noise
        self.rng = random.Random(seed)

    def generate(self, request: GenerationRequest) -> list[tuple[str, str]]:
        merged = EMPTY_AST
        for _, y in request.prior_steps:
            try:
                merged = merge(merged, parse(y, self.schema))
            except AstError:
                continue
        progress = len(self.plan)
        for idx, (_, _, ast) in enumerate(self.plan):
            if not is_subtree(ast, merged):
                progress = idx
                break

        # One clause-rooted increment per step; extra clean slots restate it.
        description, sql, _ = self.plan[min(progress, len(self.plan) - 1)]
        candidates: list[tuple[str, str]] = []
        for _ in range(request.n_candidates):
            if self.noise > 0 and self.rng.random() < self.noise:
                candidates.append(self._noise_candidate(request))
            else:
                candidates.append((description, sql))
        return candidates

    def _noise_candidate(self, request: GenerationRequest) -> tuple[str, str]:
        roll = self.rng.random()
        if request.prior_steps and roll < 0.3:
            _, y = request.prior_steps[self.rng.randrange(len(request.prior_steps))]
            return ("Re-examine an earlier step.", y)
        if roll < 0.8:
            return ("Probe a value outside the question.", "SELECT 'out_of_scope_probe'")
        return ("Attempt a malformed statement.", "SELECT FROM WHERE ((")


class ReplayBackend:
    """Re-issues recorded candidate lists keyed by request digest, in order."""

    def __init__(self, transcript_path: str | Path):
        self.queues: dict[str, list[list[tuple[str, str]]]] = {}
        with open(transcript_path, encoding="utf-8") as handle:
            for line in handle:
                if not line.strip():
                    continue
                record = json.loads(line)
                batch = [(c["subtask"], c["subsql"]) for c in record["candidates"]]
                self.queues.setdefault(record["digest"], []).append(batch)

    def generate(self, request: GenerationRequest) -> list[tuple[str, str]]:
        digest = request_digest(request)
        queue = self.queues.get(digest)
        if not queue:
            raise TranscriptMiss(f"no recorded response for digest {digest[:12]}…")
        return queue.pop(0)


class RecordingBackend:
    """Wraps any backend and logs (digest, candidates) for later replay."""

    def __init__(self, inner, transcript_path: str | Path):
        self.inner = inner
        self.path = Path(transcript_path)
        self.path.write_text("", encoding="utf-8")

    def generate(self, request: GenerationRequest) -> list[tuple[str, str]]:
        candidates = self.inner.generate(request)
        record = {
            "digest": request_digest(request),
            "candidates": [{"subtask": q, "subsql": y} for q, y in candidates],
        }
        with open(self.path, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
        return candidates


@dataclass
class HttpBackend:
    """Chat-completion endpoint speaking {model, messages, temperature, n}."""

    endpoint: str
    model: str
    api_key: str = ""
    temperature: float = 0.0
    timeout: float = 120.0
    retries: int = 3
    backoff: float = 0.5
    calls: int = field(default=0, init=False)

    def generate(self, request: GenerationRequest) -> list[tuple[str, str]]:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": render_prompt(request)}],
            "temperature": self.temperature,
            "n": 1,
        }
        network_errors = 0
        for attempt in range(self.retries):
            self.calls += 1
            try:
                response = requests.post(
                    self.endpoint, json=body, headers=headers, timeout=self.timeout
                )
                response.raise_for_status()
                content = response.json()["choices"][0]["message"]["content"]
            except requests.RequestException as exc:
                network_errors += 1
                if network_errors >= self.retries:
                    raise EndpointUnavailable(str(exc)) from exc
                time.sleep(self.backoff * (2**attempt))
                continue
            try:
                pairs = parse_candidates(content)
            except MalformedResponse:
                continue
            return pairs[: request.n_candidates]
        # Retry budget exhausted on malformed output: a silent no-op expansion.
        return []

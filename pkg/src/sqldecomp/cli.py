"""Single entry point wiring search, datasets, evaluation, and tooling.

Exit codes: 0 clean, 1 when the run finished but some cases failed, 2 for
configuration or environment problems. Every file artifact embeds the full
run configuration and the digests of its inputs.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import os
import sys
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import evalx, report
from .datagen import PreferenceBatch, SftBatch, dpo_loss, emit_datasets, mdpo_loss, sft_loss
from .decomposer import SearchConfig, SearchOutcome, run_search
from .demopool import (
    Demonstration,
    EmbeddingCache,
    HttpEmbedder,
    MockEmbedder,
    ModelTagMismatch,
    build_embedding_cache,
    load_pool,
    retrieve,
    save_pool,
    seed_pool,
    select_by_ast,
)
from .genclient import (
    GenerationRequest,
    GeneratorError,
    HttpBackend,
    OracleBackend,
    RecordingBackend,
    ReplayBackend,
)
from .schema import SchemaDescriptor, load_schema, schema_from_sqlite
from .sqlast import AstError, DEFAULT_WEIGHTS, SimWeights, parse, reward, sim_node, sim_struct

EXIT_OK = 0
EXIT_CASES = 1
EXIT_CONFIG = 2

SEED_DEMO_COUNT = 3


class ConfigError(Exception):
    """Invalid configuration; the message names the offending key."""


@dataclass
class RunConfig:
    command: str = ""
    tasks: str = ""
    db_root: str = ""
    out: str = ""
    pred: str = ""
    gold: str = ""
    report_path: str = ""
    pool: str = ""
    cache: str = ""
    backend: str = "oracle"
    embedder: str = "mock"
    endpoint: str = ""
    model: str = ""
    transcript: str = ""
    record: str = ""
    rounds: int = 3
    iterations: int = 50
    width: int = 3
    depth: int = 8
    c: float = 1.414
    alpha: float = 0.75
    weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    dpo_beta: float = 0.2
    k: int = 3
    seed: int = 0
    noise: float = 0.0
    prune: bool = True
    temperature: float = 0.0
    timeout: float = evalx.DEFAULT_TIMEOUT
    float_tolerance: float | None = None
    jobs: int = 1
    api_key: str = field(default="", repr=False)

    def validate(self) -> None:
        checks = [
            ("rounds", self.rounds >= 1, "must be >= 1"),
            ("iterations", self.iterations >= 1, "must be >= 1"),
            ("width", self.width >= 1, "must be >= 1"),
            ("depth", self.depth >= 1, "must be >= 1"),
            ("c", self.c >= 0, "must be >= 0"),
            ("alpha", 0 <= self.alpha <= 1, "must be in [0, 1]"),
            ("dpo_beta", self.dpo_beta > 0, "must be > 0"),
            ("k", self.k >= 1, "must be >= 1"),
            ("noise", 0 <= self.noise <= 1, "must be in [0, 1]"),
            ("timeout", self.timeout > 0, "must be > 0"),
            ("jobs", self.jobs >= 1, "must be >= 1"),
            ("backend", self.backend in ("oracle", "http", "replay"), "unknown backend"),
            ("embedder", self.embedder in ("mock", "http"), "unknown embedder"),
            (
                "weights",
                len(self.weights) == 3
                and all(w >= 0 for w in self.weights)
                and abs(sum(self.weights) - 1.0) <= 1e-9,
                "need three non-negative values summing to 1",
            ),
        ]
        if self.float_tolerance is not None:
            checks.append(("float_tolerance", self.float_tolerance >= 0, "must be >= 0"))
        for key, ok, message in checks:
            if not ok:
                raise ConfigError(f"{key}: {message}")
        if self.record and self.jobs > 1:
            raise ConfigError("record: transcript recording requires jobs=1")
        if self.backend == "replay" and self.jobs > 1:
            raise ConfigError("jobs: replay backend requires jobs=1")
        if self.backend == "http" and not self.endpoint:
            raise ConfigError("endpoint: required for the http backend")
        if self.backend == "replay" and not self.transcript:
            raise ConfigError("transcript: required for the replay backend")

    def sim_weights(self) -> SimWeights:
        wc, wo, wv = self.weights
        return SimWeights(w_clause=wc, w_operator=wo, w_operand=wv, alpha=self.alpha,
                          beta=1.0 - self.alpha)

    def search_config(self, seed: int) -> SearchConfig:
        return SearchConfig(
            c=self.c,
            max_iterations=self.iterations,
            max_depth=self.depth,
            expansion_width=self.width,
            sim_weights=self.sim_weights(),
            seed=seed,
            prune_enabled=self.prune,
        )

    def echo(self) -> dict:
        # The credential never lands in an artifact.
        out = {}
        for spec in fields(self):
            if spec.name == "api_key":
                continue
            value = getattr(self, spec.name)
            out[spec.name] = list(value) if isinstance(value, tuple) else value
        return out


def _digest_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _input_digests(config: RunConfig, keys: list[str]) -> dict:
    digests = {}
    for key in keys:
        value = getattr(config, key)
        if value and Path(value).is_file():
            digests[key] = _digest_file(value)
    return digests


def _task_seed(base: int, task_id: str) -> int:
    return (base * 1_000_003 + zlib.crc32(task_id.encode("utf-8"))) & 0x7FFFFFFF


def _require_file(path: str, key: str) -> Path:
    if not path:
        raise ConfigError(f"{key}: required")
    resolved = Path(path)
    if not resolved.is_file():
        raise ConfigError(f"{key}: no such file: {path}")
    return resolved


def _load_schema_arg(path: str | None) -> SchemaDescriptor | None:
    if not path:
        return None
    resolved = _require_file(path, "schema")
    if resolved.suffix in (".sqlite", ".db"):
        return schema_from_sqlite(resolved)
    return load_schema(resolved)


def _schema_for(db_root: str, db_id: str, memo: dict) -> SchemaDescriptor:
    if db_id not in memo:
        memo[db_id] = schema_from_sqlite(evalx.db_path(db_root, db_id))
    return memo[db_id]


# synthesize


def _make_backend(config: RunConfig, task: evalx.TaskInstance, schema, shared):
    if config.backend == "oracle":
        return OracleBackend(
            task.gold_sql, schema, noise=config.noise, seed=_task_seed(config.seed, task.task_id)
        )
    return shared


def _run_one_search(config, task, schema, backend, demos, db):
    try:
        return run_search(
            task,
            backend,
            tuple(demos),
            config.search_config(_task_seed(config.seed, task.task_id)),
            db,
            schema=schema,
        )
    except (AstError, evalx.SqlError, GeneratorError) as exc:
        print(f"task {task.task_id}: {exc}", file=sys.stderr)
        return None


def cmd_synthesize(config: RunConfig) -> int:
    tasks_path = _require_file(config.tasks, "tasks")
    if not config.out:
        raise ConfigError("out: required")
    tasks = evalx.load_tasks(tasks_path)
    if not tasks:
        raise ConfigError("tasks: file contains no tasks")

    # Validate the environment before writing anything.
    if not Path(config.db_root).is_dir():
        raise ConfigError(f"db_root: no such directory: {config.db_root}")
    for task in tasks:
        if not evalx.db_path(config.db_root, task.db_id).is_file():
            raise ConfigError(f"db_root: missing database for {task.db_id}")

    pool = load_pool(_require_file(config.pool, "pool")) if config.pool else seed_pool()
    shared = _shared_backend(config)

    out = Path(config.out)
    (out / "trees").mkdir(parents=True, exist_ok=True)
    schemas: dict[str, SchemaDescriptor] = {}

    unsolved = list(tasks)
    solved_round: dict[str, int] = {}
    stats_by_task: dict[str, dict] = {
        task.task_id: {
            "task_id": task.task_id,
            "solved_round": 0,
            "iterations": 0,
            "expanded": 0,
            "pruned": 0,
            "generator_calls": 0,
        }
        for task in tasks
    }
    outcomes: list[SearchOutcome] = []
    round_rows = []
    pool_questions = {demo.question for demo in pool}

    for round_no in range(1, config.rounds + 1):
        if not unsolved:
            break
        jobs = []
        for task in unsolved:
            schema = _schema_for(config.db_root, task.db_id, schemas)
            if round_no == 1:
                demos = pool[:SEED_DEMO_COUNT]
            else:
                demos = select_by_ast(task.gold_sql, pool, w=config.sim_weights(), k=config.k)
            backend = _make_backend(config, task, schema, shared)
            db = evalx.db_path(config.db_root, task.db_id)
            jobs.append((task, schema, backend, demos, db))

        if config.jobs > 1:
            with concurrent.futures.ThreadPoolExecutor(max_workers=config.jobs) as pool_exec:
                results = list(
                    pool_exec.map(lambda j: _run_one_search(config, *j), jobs)
                )
        else:
            # Recording requires this sequential path; the single recorder
            # swaps its inner backend just before each task runs.
            results = []
            for task, schema, backend, demos, db in jobs:
                if config.record:
                    backend = _recorder_for(config, backend)
                results.append(_run_one_search(config, task, schema, backend, demos, db))

        solved_now = []
        still_unsolved = []
        for (task, schema, _, _, _), outcome in zip(jobs, results):
            if outcome is None:
                still_unsolved.append(task)
                continue
            outcomes.append(outcome)
            row = stats_by_task[task.task_id]
            row["iterations"] += outcome.tree_stats.generator_calls
            row["expanded"] += outcome.tree_stats.expanded_nodes
            row["pruned"] += outcome.tree_stats.pruned_nodes
            row["generator_calls"] += outcome.tree_stats.generator_calls
            tree_payload = {
                "task_id": task.task_id,
                "round": round_no,
                "success": outcome.success,
                "stats": outcome.tree_stats.to_payload(),
                "tree": outcome.root.to_payload(),
                "config": config.echo(),
            }
            report.write_json(out / "trees" / f"{task.task_id}.round{round_no}.json", tree_payload)
            if outcome.success:
                solved_round[task.task_id] = round_no
                row["solved_round"] = round_no
                solved_now.append((task, outcome))
            else:
                still_unsolved.append(task)

        # Pool growth happens strictly between rounds.
        for task, outcome in solved_now:
            if outcome.best_trajectory and task.question not in pool_questions:
                pool.append(
                    Demonstration(
                        question=task.question,
                        gold_sql=task.gold_sql,
                        steps=outcome.best_trajectory,
                        origin_round=round_no,
                    )
                )
                pool_questions.add(task.question)

        round_rows.append(
            {
                "round": round_no,
                "attempted": len(jobs),
                "solved": len(solved_now),
                "cumulative_solved": len(solved_round),
                "total": len(tasks),
            }
        )
        unsolved = still_unsolved
        print(
            f"round {round_no}: solved {len(solved_now)}/{len(jobs)}, "
            f"cumulative {len(solved_round)}/{len(tasks)}"
        )

    echo = config.echo()
    echo["inputs"] = _input_digests(config, ["tasks", "pool", "transcript"])
    emit_datasets(outcomes, out, config_echo=echo)
    save_pool(pool, out / "pool.jsonl")
    task_rows = [stats_by_task[task.task_id] for task in tasks]
    report.write_synthesis_outputs(out, round_rows, task_rows, echo)
    return EXIT_OK if len(solved_round) == len(tasks) else EXIT_CASES


_RECORDER: RecordingBackend | None = None


def _recorder_for(config: RunConfig, inner) -> RecordingBackend:
    # One transcript per run; the recorder swaps its inner backend per task.
    global _RECORDER
    if _RECORDER is None or str(_RECORDER.path) != config.record:
        _RECORDER = RecordingBackend(inner, config.record)
    else:
        _RECORDER.inner = inner
    return _RECORDER


def _shared_backend(config: RunConfig):
    if config.backend == "http":
        return HttpBackend(
            endpoint=config.endpoint,
            model=config.model,
            api_key=config.api_key,
            temperature=config.temperature,
        )
    if config.backend == "replay":
        return ReplayBackend(_require_file(config.transcript, "transcript"))
    return None


# infer


def _greedy_decompose(config: RunConfig, backend, task, schema, demos) -> str:
    steps: list[tuple[str, str]] = []
    for _ in range(config.depth):
        request = GenerationRequest(
            question=task.question,
            schema=schema,
            knowledge=task.knowledge,
            prior_steps=tuple(steps),
            demonstrations=tuple(demos),
            n_candidates=1,
        )
        try:
            candidates = backend.generate(request)
        except GeneratorError:
            break
        if not candidates:
            break
        subtask, subsql = candidates[0]
        if steps and subsql == steps[-1][1]:
            break
        steps.append((subtask, subsql))
    for _, subsql in reversed(steps):
        try:
            parse(subsql, schema)
            return subsql
        except AstError:
            continue
    return steps[-1][1] if steps else ""


def cmd_infer(config: RunConfig) -> int:
    tasks = evalx.load_tasks(_require_file(config.tasks, "tasks"))
    if not config.out:
        raise ConfigError("out: required")
    if not config.cache or not Path(config.cache).is_file():
        raise ConfigError(
            f"cache: no embedding cache at {config.cache or '<unset>'}; "
            "run `sqldecomp demos embed` first"
        )
    pool = load_pool(_require_file(config.pool, "pool"))
    embedder = _make_embedder(config)
    cache = EmbeddingCache.load(config.cache)
    if len(cache) == 0:
        raise ConfigError("cache: embedding cache is empty")
    k = config.k
    if k > len(cache):
        print(f"k={k} exceeds cache size {len(cache)}; using the whole pool", file=sys.stderr)
        k = len(cache)

    by_question = {demo.question: demo for demo in pool}
    schemas: dict[str, SchemaDescriptor] = {}
    shared = _shared_backend(config)
    failures = 0
    lines = []
    for task in tasks:
        schema = _schema_for(config.db_root, task.db_id, schemas)
        ranked = retrieve(task.question, cache, embedder, k=k, pool=pool)
        demos = [by_question[q] for q, _, _ in ranked if q in by_question]
        backend = _make_backend(config, task, schema, shared)
        if config.record:
            backend = _recorder_for(config, backend)
        sql = _greedy_decompose(config, backend, task, schema, demos)
        if not sql:
            failures += 1
        lines.append(json.dumps({"task_id": task.task_id, "sql": sql}, sort_keys=True))

    out = Path(config.out)
    if out.parent != Path("."):
        out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    echo = config.echo()
    echo["inputs"] = _input_digests(config, ["tasks", "pool", "cache", "transcript"])
    report.write_json(Path(str(out) + ".manifest.json"), echo)
    print(f"wrote {len(lines)} predictions ({failures} failed) to {out}")
    return EXIT_OK if failures == 0 else EXIT_CASES


def _make_embedder(config: RunConfig):
    if config.embedder == "http":
        if not config.endpoint:
            raise ConfigError("endpoint: required for the http embedder")
        return HttpEmbedder(config.endpoint, config.model, api_key=config.api_key)
    return MockEmbedder()


# eval


def cmd_eval(config: RunConfig) -> int:
    pred = _require_file(config.pred, "pred")
    gold = _require_file(config.gold, "gold")
    if not Path(config.db_root).is_dir():
        raise ConfigError(f"db_root: no such directory: {config.db_root}")
    result = evalx.evaluate_run(
        pred,
        gold,
        config.db_root,
        timeout=config.timeout,
        float_tolerance=config.float_tolerance,
        jobs=config.jobs,
    )
    echo = config.echo()
    echo["inputs"] = _input_digests(config, ["pred", "gold"])
    report_path = config.report_path or "eval_report.json"
    report.write_eval_outputs(result, report_path, echo)
    print(
        f"EX {result.total_matches}/{result.total_count} = {result.ex_percent:.2f}% "
        f"({len(result.gold_errors)} gold-side errors excluded); report at {report_path}"
    )
    return EXIT_OK if result.total_matches == result.total_count else EXIT_CASES


# ast


def _ast_payload(ast) -> dict:
    nodes = sorted(key.render() for key in ast.node_keys())
    edges = sorted((p.render(), c.render()) for p, c in ast.edge_keys())
    return {"nodes": nodes, "edges": [list(e) for e in edges]}


def cmd_ast(config: RunConfig, args) -> int:
    schema = _load_schema_arg(args.schema)
    try:
        left = parse(args.sql, schema)
    except AstError as exc:
        raise ConfigError(f"sql: {exc}") from exc
    if args.ast_command == "parse":
        print(json.dumps(_ast_payload(left), indent=2, sort_keys=True))
        return EXIT_OK

    try:
        right = parse(args.sql2, schema)
    except AstError as exc:
        raise ConfigError(f"sql2: {exc}") from exc
    if args.ast_command == "sim":
        weights = config.sim_weights()
        payload = {
            "sim_node": sim_node(left, right, weights),
            "sim_struct": sim_struct(left, right),
            "reward": reward(left, right, weights),
        }
        print(json.dumps(payload, indent=2, sort_keys=True))
        return EXIT_OK

    left_nodes, right_nodes = set(left.node_keys()), set(right.node_keys())
    left_edges, right_edges = set(left.edge_keys()), set(right.edge_keys())
    payload = {
        "nodes": {
            "only_left": sorted(k.render() for k in left_nodes - right_nodes),
            "only_right": sorted(k.render() for k in right_nodes - left_nodes),
            "shared": len(left_nodes & right_nodes),
        },
        "edges": {
            "only_left": sorted(f"{p.render()} -> {c.render()}" for p, c in left_edges - right_edges),
            "only_right": sorted(f"{p.render()} -> {c.render()}" for p, c in right_edges - left_edges),
            "shared": len(left_edges & right_edges),
        },
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


# demos


def cmd_demos(config: RunConfig, args) -> int:
    if args.demos_command == "embed":
        pool = load_pool(_require_file(config.pool, "pool"))
        if not config.cache:
            raise ConfigError("cache: required")
        embedder = _make_embedder(config)
        existing = (
            EmbeddingCache.load(config.cache) if Path(config.cache).is_file() else None
        )
        cache = build_embedding_cache([d.question for d in pool], embedder, cache=existing)
        cache.save(config.cache)
        print(
            json.dumps(
                {"count": len(cache), "dim": cache.dim, "model_tag": cache.model_tag},
                sort_keys=True,
            )
        )
        return EXIT_OK

    if args.demos_command == "select":
        pool = load_pool(_require_file(config.pool, "pool"))
        picked = select_by_ast(args.sql, pool, w=config.sim_weights(), k=config.k)
        payload = [
            {"question": d.question, "gold_sql": d.gold_sql, "origin_round": d.origin_round}
            for d in picked
        ]
        print(json.dumps(payload, indent=2, sort_keys=True))
        return EXIT_OK

    # retrieve
    pool = load_pool(_require_file(config.pool, "pool"))
    cache = EmbeddingCache.load(_require_file(config.cache, "cache"))
    embedder = _make_embedder(config)
    rows = retrieve(args.query, cache, embedder, k=config.k, pool=pool)
    payload = [{"question": q, "gold_sql": g, "score": s} for q, g, s in rows]
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


# loss


def cmd_loss(config: RunConfig, args) -> int:
    data = json.loads(_require_file(args.batch, "batch").read_text(encoding="utf-8"))
    try:
        if args.loss_command == "sft":
            value = sft_loss(SftBatch.from_payload(data))
            print(json.dumps({"loss": value}, sort_keys=True))
            return EXIT_OK
        batch = PreferenceBatch.from_payload(data)
        if "beta" not in data:
            batch.beta = config.dpo_beta
        fn = mdpo_loss if args.loss_command == "mdpo" else dpo_loss
        value, grads = fn(batch)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"batch: {exc}") from exc
    payload = {
        "loss": value,
        "gradients": {name: list(array) for name, array in sorted(grads.items())},
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


# argument plumbing


def _add_common_search_args(sub):
    sub.add_argument("--backend", choices=["oracle", "http", "replay"])
    sub.add_argument("--iters", type=int, dest="iterations")
    sub.add_argument("--width", type=int)
    sub.add_argument("--depth", type=int)
    sub.add_argument("--c", type=float)
    sub.add_argument("--alpha", type=float)
    sub.add_argument("--weights")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--noise", type=float)
    sub.add_argument("--prune", action=argparse.BooleanOptionalAction)
    sub.add_argument("--endpoint")
    sub.add_argument("--model")
    sub.add_argument("--temperature", type=float)
    sub.add_argument("--transcript")
    sub.add_argument("--record")
    sub.add_argument("--jobs", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sqldecomp",
        description="Decomposition search, preference datasets, and execution scoring for NL2SQL.",
    )
    parser.add_argument("--config", help="JSON file of defaults; explicit flags win")
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synthesize", help="run decomposition search rounds")
    synth.add_argument("--tasks", required=True)
    synth.add_argument("--db-root", dest="db_root", required=True)
    synth.add_argument("--out", required=True)
    synth.add_argument("--rounds", type=int)
    synth.add_argument("--pool")
    _add_common_search_args(synth)

    infer = commands.add_parser("infer", help="predict SQL with retrieved demonstrations")
    infer.add_argument("--tasks", required=True)
    infer.add_argument("--db-root", dest="db_root", required=True)
    infer.add_argument("--out", required=True)
    infer.add_argument("--pool", required=True)
    infer.add_argument("--cache", required=True)
    infer.add_argument("--k", type=int)
    infer.add_argument("--embedder", choices=["mock", "http"])
    _add_common_search_args(infer)

    evalp = commands.add_parser("eval", help="score predictions by execution accuracy")
    evalp.add_argument("--pred", required=True)
    evalp.add_argument("--gold", required=True)
    evalp.add_argument("--db-root", dest="db_root", required=True)
    evalp.add_argument("--timeout", type=float)
    evalp.add_argument("--report", dest="report_path")
    evalp.add_argument("--float-tolerance", dest="float_tolerance", type=float)
    evalp.add_argument("--jobs", type=int)

    astp = commands.add_parser("ast", help="inspect and compare SQL trees")
    ast_sub = astp.add_subparsers(dest="ast_command", required=True)
    for name in ("parse", "sim", "diff"):
        one = ast_sub.add_parser(name)
        one.add_argument("--sql", required=True)
        if name != "parse":
            one.add_argument("--sql2", required=True)
        one.add_argument("--schema")
        one.add_argument("--alpha", type=float)
        one.add_argument("--weights")

    demosp = commands.add_parser("demos", help="manage the demonstration pool")
    demos_sub = demosp.add_subparsers(dest="demos_command", required=True)
    embed = demos_sub.add_parser("embed")
    embed.add_argument("--pool", required=True)
    embed.add_argument("--cache", required=True)
    embed.add_argument("--embedder", choices=["mock", "http"])
    embed.add_argument("--endpoint")
    embed.add_argument("--model")
    select = demos_sub.add_parser("select")
    select.add_argument("--pool", required=True)
    select.add_argument("--sql", required=True)
    select.add_argument("--k", type=int)
    select.add_argument("--alpha", type=float)
    select.add_argument("--weights")
    retr = demos_sub.add_parser("retrieve")
    retr.add_argument("--pool", required=True)
    retr.add_argument("--cache", required=True)
    retr.add_argument("--query", required=True)
    retr.add_argument("--k", type=int)
    retr.add_argument("--embedder", choices=["mock", "http"])
    retr.add_argument("--endpoint")
    retr.add_argument("--model")

    lossp = commands.add_parser("loss", help="loss oracles over log-prob batches")
    loss_sub = lossp.add_subparsers(dest="loss_command", required=True)
    for name in ("mdpo", "dpo", "sft"):
        one = loss_sub.add_parser(name)
        one.add_argument("--batch", required=True)
        if name != "sft":
            one.add_argument("--beta", type=float, dest="dpo_beta")

    return parser


def _parse_weights(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"weights: {exc}") from exc
    if len(parts) != 3:
        raise ConfigError("weights: need exactly three comma-separated values")
    return parts


def make_config(args: argparse.Namespace) -> RunConfig:
    file_values = {}
    if getattr(args, "config", None):
        try:
            file_values = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config: {exc}") from exc
        if not isinstance(file_values, dict):
            raise ConfigError("config: top level must be an object")

    config = RunConfig(command=args.command)
    config.endpoint = os.environ.get("SQLDECOMP_ENDPOINT", "")
    config.api_key = os.environ.get("SQLDECOMP_API_KEY", "")
    valid = {spec.name for spec in fields(RunConfig)}
    for source in (file_values, vars(args)):
        for key, value in source.items():
            if key not in valid or value is None:
                continue
            if key == "weights" and isinstance(value, str):
                value = _parse_weights(value)
            if key == "weights" and isinstance(value, list):
                value = tuple(value)
            setattr(config, key, value)
    config.command = args.command
    config.validate()
    return config


def main(argv: list[str] | None = None) -> int:
    global _RECORDER
    _RECORDER = None  # each invocation starts a fresh transcript
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = make_config(args)
        if args.command == "synthesize":
            return cmd_synthesize(config)
        if args.command == "infer":
            return cmd_infer(config)
        if args.command == "eval":
            return cmd_eval(config)
        if args.command == "ast":
            return cmd_ast(config, args)
        if args.command == "demos":
            return cmd_demos(config, args)
        return cmd_loss(config, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (
        OSError,
        AstError,
        evalx.SqlError,
        evalx.JoinFailure,
        GeneratorError,
        ModelTagMismatch,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

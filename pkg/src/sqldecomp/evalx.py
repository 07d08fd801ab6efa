"""Execute predicted and gold SQL against SQLite databases and score
Execution Accuracy.

Comparison semantics are deliberately strict: values compare by exact
engine-native rendering with no float tolerance (an opt-in tolerance knob
exists), row order matters only when the gold query has a top-level ORDER BY,
and NULL equals NULL inside tuples.
"""

from __future__ import annotations

import json
import sqlite3
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .sqlast.errors import SqlSyntaxError
from .sqlast.lexer import IDENT, SYMBOL, tokenize

DEFAULT_TIMEOUT = 30.0

# value / shape / error / timeout, per mismatch taxonomy
CATEGORY_VALUE = "value"
CATEGORY_SHAPE = "shape"
CATEGORY_ERROR = "error"
CATEGORY_TIMEOUT = "timeout"


class SqlError(Exception):
    """The engine rejected the statement."""


class Timeout(Exception):
    """Execution exceeded its time budget."""


class JoinFailure(Exception):
    """A prediction's task_id does not match any task."""


@dataclass(frozen=True)
class TaskInstance:
    task_id: str
    question: str
    db_id: str
    gold_sql: str
    knowledge: str = ""
    difficulty: str = ""


@dataclass(frozen=True)
class ExecResult:
    columns: int
    rows: tuple[tuple[str, ...], ...]
    ordered: bool


@dataclass
class CaseVerdict:
    task_id: str
    match: bool
    category: str = ""  # empty on match
    detail: str = ""


@dataclass
class EvalReport:
    total_count: int = 0
    total_matches: int = 0
    by_difficulty: dict[str, tuple[int, int]] = field(default_factory=dict)
    gold_errors: list[str] = field(default_factory=list)
    verdicts: list[CaseVerdict] = field(default_factory=list)

    @property
    def ex_percent(self) -> float:
        if self.total_count == 0:
            return 0.0
        return 100.0 * self.total_matches / self.total_count

    def to_payload(self) -> dict:
        groups = {}
        for name in sorted(self.by_difficulty):
            matches, count = self.by_difficulty[name]
            groups[name] = {
                "count": count,
                "matches": matches,
                "ex": 100.0 * matches / count if count else 0.0,
            }
        return {
            "total": {
                "count": self.total_count,
                "matches": self.total_matches,
                "ex": self.ex_percent,
            },
            "by_difficulty": groups,
            "gold_errors": sorted(self.gold_errors),
            "verdicts": [
                {
                    "task_id": v.task_id,
                    "match": v.match,
                    "category": v.category,
                    "detail": v.detail,
                }
                for v in self.verdicts
            ],
        }


def db_path(db_root: str | Path, db_id: str) -> Path:
    return Path(db_root) / db_id / f"{db_id}.sqlite"


def open_database(path: str | Path) -> sqlite3.Connection:
    """Read-only connection; missing files raise instead of being created."""
    resolved = Path(path)
    if not resolved.exists():
        raise SqlError(f"database file not found: {resolved}")
    uri = f"file:{resolved}?mode=ro"
    return sqlite3.connect(uri, uri=True)


def render_value(value) -> str:
    """Engine-native text for one cell; the comparison unit for ex_match."""
    if value is None:
        return "NULL"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, bytes):
        return "X'" + value.hex() + "'"
    return str(value)


def has_top_level_order_by(sql: str) -> bool:
    """Token scan for ORDER at parenthesis depth 0, so subquery ORDER BY does
    not force ordered comparison."""
    try:
        tokens = tokenize(sql)
    except SqlSyntaxError:
        return " order by " in " ".join(sql.lower().split())
    depth = 0
    for tok in tokens:
        if tok.kind == SYMBOL:
            if tok.text == "(":
                depth += 1
            elif tok.text == ")":
                depth -= 1
        elif tok.kind == IDENT and depth == 0 and tok.upper() == "ORDER":
            return True
    return False


def execute(
    sql: str,
    db: sqlite3.Connection,
    timeout: float = DEFAULT_TIMEOUT,
) -> ExecResult:
    """Run one statement read-only and capture the full rendered result set."""
    deadline = time.monotonic() + timeout
    timed_out = False

    def watchdog():
        nonlocal timed_out
        if time.monotonic() > deadline:
            timed_out = True
            return 1
        return 0

    db.set_progress_handler(watchdog, 2000)
    try:
        cursor = db.execute(sql)
        raw_rows = cursor.fetchall()
    except sqlite3.Error as exc:
        if timed_out:
            raise Timeout(f"query exceeded {timeout:.0f}s") from exc
        raise SqlError(str(exc)) from exc
    finally:
        db.set_progress_handler(None, 0)

    columns = len(cursor.description) if cursor.description else 0
    rows = tuple(tuple(render_value(v) for v in row) for row in raw_rows)
    return ExecResult(columns=columns, rows=rows, ordered=has_top_level_order_by(sql))


def _close_enough(a: str, b: str, tolerance: float) -> bool:
    if a == b:
        return True
    try:
        return abs(float(a) - float(b)) <= tolerance
    except ValueError:
        return False


def ex_match(
    pred: ExecResult,
    gold: ExecResult,
    float_tolerance: float | None = None,
) -> bool:
    """True iff shapes agree and row collections are equal, ordered when the
    gold query orders its result."""
    if pred.columns != gold.columns:
        return False
    if float_tolerance is None:
        if gold.ordered:
            return pred.rows == gold.rows
        return Counter(pred.rows) == Counter(gold.rows)
    if len(pred.rows) != len(gold.rows):
        return False
    left = pred.rows if gold.ordered else tuple(sorted(pred.rows))
    right = gold.rows if gold.ordered else tuple(sorted(gold.rows))
    return all(
        len(pr) == len(gr) and all(_close_enough(a, b, float_tolerance) for a, b in zip(pr, gr))
        for pr, gr in zip(left, right)
    )


def load_tasks(path: str | Path) -> list[TaskInstance]:
    """Read a benchmark task file (JSON array or JSON Lines)."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        raw = json.loads(text)
    else:
        raw = [json.loads(line) for line in text.splitlines() if line.strip()]
    tasks = []
    for idx, entry in enumerate(raw):
        task_id = entry.get("task_id", entry.get("question_id", idx))
        gold = entry.get("SQL") or entry.get("query") or entry.get("gold_sql") or ""
        tasks.append(
            TaskInstance(
                task_id=str(task_id),
                question=entry.get("question", ""),
                db_id=entry.get("db_id", ""),
                gold_sql=gold,
                knowledge=entry.get("evidence") or entry.get("knowledge") or "",
                difficulty=entry.get("difficulty", ""),
            )
        )
    return tasks


def load_predictions(path: str | Path) -> dict[str, str]:
    preds: dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            record = json.loads(line)
            preds[str(record["task_id"])] = record.get("sql", "")
    return preds


def _judge_case(
    task: TaskInstance,
    pred_sql: str,
    db_root: str | Path,
    timeout: float,
    float_tolerance: float | None,
) -> tuple[CaseVerdict, bool]:
    """Returns (verdict, gold_ok); gold_ok False excludes the case."""
    path = db_path(db_root, task.db_id)
    try:
        with open_database(path) as db:
            gold_result = execute(task.gold_sql, db, timeout)
    except (SqlError, Timeout) as exc:
        return CaseVerdict(task.task_id, False, CATEGORY_ERROR, f"gold: {exc}"), False

    if not pred_sql.strip():
        return CaseVerdict(task.task_id, False, CATEGORY_ERROR, "empty prediction"), True
    try:
        with open_database(path) as db:
            pred_result = execute(pred_sql, db, timeout)
    except Timeout as exc:
        return CaseVerdict(task.task_id, False, CATEGORY_TIMEOUT, str(exc)), True
    except SqlError as exc:
        return CaseVerdict(task.task_id, False, CATEGORY_ERROR, str(exc)), True

    if ex_match(pred_result, gold_result, float_tolerance):
        return CaseVerdict(task.task_id, True), True
    if (
        pred_result.columns != gold_result.columns
        or len(pred_result.rows) != len(gold_result.rows)
    ):
        category = CATEGORY_SHAPE
    else:
        category = CATEGORY_VALUE
    return CaseVerdict(task.task_id, False, category), True


def evaluate_run(
    predictions: str | Path,
    tasks: str | Path,
    db_root: str | Path,
    timeout: float = DEFAULT_TIMEOUT,
    float_tolerance: float | None = None,
    jobs: int = 1,
) -> EvalReport:
    """Join predictions to tasks, execute both sides, reduce to an EvalReport.

    Gold-side failures exclude the case from the EX denominator and are listed
    separately. A task without a prediction scores as an error case.
    """
    task_list = load_tasks(tasks)
    preds = load_predictions(predictions)
    known = {t.task_id for t in task_list}
    orphans = sorted(set(preds) - known)
    if orphans:
        raise JoinFailure(f"predictions reference unknown task ids: {orphans[:5]}")

    def work(task: TaskInstance) -> tuple[CaseVerdict, bool]:
        return _judge_case(task, preds.get(task.task_id, ""), db_root, timeout, float_tolerance)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, task_list))
    else:
        results = [work(t) for t in task_list]

    report = EvalReport()
    for task, (verdict, gold_ok) in zip(task_list, results):
        if not gold_ok:
            report.gold_errors.append(task.task_id)
            report.verdicts.append(verdict)
            continue
        report.verdicts.append(verdict)
        report.total_count += 1
        matches, count = report.by_difficulty.get(task.difficulty or "all", (0, 0))
        matched = 1 if verdict.match else 0
        report.total_matches += matched
        report.by_difficulty[task.difficulty or "all"] = (matches + matched, count + 1)
    return report

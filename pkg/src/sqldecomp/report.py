"""Report rendering: delimited summaries and figures next to each JSON report.

Everything written here is a pure function of its inputs (no timestamps, no
environment probes), so reruns produce identical bytes.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

# Pinned so PNG text chunks don't drift with the toolkit version.
_PNG_METADATA = {"Software": "sqldecomp"}


def _save_figure(fig, path: Path) -> None:
    fig.savefig(path, format="png", dpi=100, metadata=_PNG_METADATA)
    plt.close(fig)


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_eval_outputs(report, report_path: str | Path, config_echo: dict) -> None:
    """JSON report plus ex_by_difficulty.csv and .png siblings."""
    report_path = Path(report_path)
    payload = report.to_payload()
    payload["config"] = config_echo
    write_json(report_path, payload)

    groups = sorted(report.by_difficulty.items())
    rows = [
        (name, matches, count, 100.0 * matches / count if count else 0.0)
        for name, (matches, count) in groups
    ]
    rows.append(("total", report.total_matches, report.total_count, report.ex_percent))

    csv_path = report_path.with_suffix(".csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["difficulty", "matches", "count", "ex_percent"])
        for name, matches, count, percent in rows:
            writer.writerow([name, matches, count, f"{percent:.2f}"])

    fig, ax = plt.subplots(figsize=(6, 4))
    labels = [r[0] for r in rows]
    values = [r[3] for r in rows]
    bars = ax.bar(range(len(rows)), values, color="#4878a8")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylim(0, 100)
    ax.set_ylabel("execution accuracy (%)")
    ax.set_title("Execution accuracy by difficulty")
    for bar, value in zip(bars, values):
        ax.annotate(
            f"{value:.1f}",
            (bar.get_x() + bar.get_width() / 2, value),
            ha="center",
            va="bottom",
            fontsize=8,
        )
    fig.tight_layout()
    _save_figure(fig, report_path.with_suffix(".png"))


def write_synthesis_outputs(
    out_dir: str | Path,
    round_rows: list[dict],
    task_rows: list[dict],
    config_echo: dict,
) -> None:
    """summary.json, rounds.csv, tasks.csv, and two figures under out_dir.

    round_rows: per-round {round, attempted, solved, cumulative_solved, total}.
    task_rows: per-task {task_id, solved_round, iterations, expanded, pruned,
    generator_calls}; solved_round is 0 for tasks never solved.
    """
    out = Path(out_dir)
    total = round_rows[-1]["total"] if round_rows else 0

    summary = {
        "rounds": round_rows,
        "tasks_total": total,
        "tasks_solved": round_rows[-1]["cumulative_solved"] if round_rows else 0,
        "config": config_echo,
    }
    write_json(out / "summary.json", summary)

    with open(out / "rounds.csv", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["round", "attempted", "solved", "cumulative_solved", "cumulative_percent"])
        for row in round_rows:
            percent = 100.0 * row["cumulative_solved"] / row["total"] if row["total"] else 0.0
            writer.writerow(
                [row["round"], row["attempted"], row["solved"], row["cumulative_solved"], f"{percent:.2f}"]
            )

    with open(out / "tasks.csv", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["task_id", "solved_round", "iterations", "expanded", "pruned", "generator_calls"]
        )
        for row in task_rows:
            writer.writerow(
                [
                    row["task_id"],
                    row["solved_round"],
                    row["iterations"],
                    row["expanded"],
                    row["pruned"],
                    row["generator_calls"],
                ]
            )

    fig, ax = plt.subplots(figsize=(6, 4))
    rounds = [row["round"] for row in round_rows]
    climbing = [
        100.0 * row["cumulative_solved"] / row["total"] if row["total"] else 0.0
        for row in round_rows
    ]
    ax.plot(rounds, climbing, marker="o", color="#4878a8")
    ax.set_xticks(rounds)
    ax.set_ylim(0, 105)
    ax.set_xlabel("round")
    ax.set_ylabel("cumulative success (%)")
    ax.set_title("Decomposition success by round")
    for x, y in zip(rounds, climbing):
        ax.annotate(f"{y:.1f}", (x, y), ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    _save_figure(fig, out / "rounds.png")

    fig, ax = plt.subplots(figsize=(6, 4))
    expanded = [row["expanded"] for row in task_rows]
    pruned = [row["pruned"] for row in task_rows]
    positions = range(len(task_rows))
    ax.bar(positions, expanded, color="#4878a8", label="expanded")
    ax.bar(positions, pruned, color="#c44e52", label="pruned")
    ax.set_xlabel("task (in input order)")
    ax.set_ylabel("search-tree nodes")
    ax.set_title("Expansion and pruning per task")
    ax.legend()
    fig.tight_layout()
    _save_figure(fig, out / "expansion.png")

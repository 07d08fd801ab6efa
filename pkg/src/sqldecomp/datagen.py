"""Training-data materialization and loss oracles.

The losses are pure functions over externally supplied log-probabilities, not
a training loop: they exist so the preference and fine-tuning math can be
checked independently of any model. Margin-annotated preference pairs demand
a larger implicit-reward gap for wins the tree search scored as bigger.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import jsonschema
import numpy as np


class IoFailure(Exception):
    pass


class SchemaViolation(Exception):
    """An emitted record failed its own schema; this is a bug, not bad input."""


@dataclass(frozen=True)
class Trajectory:
    task_id: str
    question: str
    schema_id: str
    knowledge: str
    steps: tuple[tuple[str, str], ...]
    final_sql: str

    def to_payload(self) -> dict:
        return {
            "task_id": self.task_id,
            "question": self.question,
            "schema_id": self.schema_id,
            "knowledge": self.knowledge,
            "steps": [{"q": q, "y": y} for q, y in self.steps],
            "final_sql": self.final_sql,
        }


@dataclass(frozen=True)
class ContrastivePair:
    task_id: str
    question: str
    schema_id: str
    knowledge: str
    prefix: tuple[tuple[str, str], ...]
    winner: tuple[str, str, float]  # (subtask, subsql, reward)
    loser: tuple[str, str, float]
    margin: float

    def to_payload(self) -> dict:
        return {
            "task_id": self.task_id,
            "question": self.question,
            "schema_id": self.schema_id,
            "knowledge": self.knowledge,
            "prefix": [{"q": q, "y": y} for q, y in self.prefix],
            "winner": {"q": self.winner[0], "y": self.winner[1], "reward": self.winner[2]},
            "loser": {"q": self.loser[0], "y": self.loser[1], "reward": self.loser[2]},
            "margin": self.margin,
        }


def compute_margin(winner_reward: float, loser_reward: float) -> float:
    """Δr = R(winner) − R(loser); antisymmetric under swap."""
    return winner_reward - loser_reward


@dataclass
class PreferenceBatch:
    """Sequence log-probs (natural log) for winner and loser under the policy
    and the frozen reference, one entry per pair, plus the demanded margins."""

    policy_w: np.ndarray
    policy_l: np.ndarray
    ref_w: np.ndarray
    ref_l: np.ndarray
    margins: np.ndarray
    beta: float = 0.2

    def __post_init__(self):
        arrays = [
            np.asarray(a, dtype=np.float64)
            for a in (self.policy_w, self.policy_l, self.ref_w, self.ref_l, self.margins)
        ]
        self.policy_w, self.policy_l, self.ref_w, self.ref_l, self.margins = arrays
        lengths = {a.shape for a in arrays}
        if len(lengths) != 1 or arrays[0].ndim != 1 or arrays[0].size == 0:
            raise ValueError("batch arrays must be equal-length non-empty vectors")
        if not all(np.isfinite(a).all() for a in arrays):
            raise ValueError("batch contains non-finite values")
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    @classmethod
    def from_payload(cls, data: dict) -> "PreferenceBatch":
        pairs = data["pairs"]
        return cls(
            policy_w=np.array([p["policy_winner"] for p in pairs]),
            policy_l=np.array([p["policy_loser"] for p in pairs]),
            ref_w=np.array([p["ref_winner"] for p in pairs]),
            ref_l=np.array([p["ref_loser"] for p in pairs]),
            margins=np.array([p.get("margin", 0.0) for p in pairs]),
            beta=float(data.get("beta", 0.2)),
        )


@dataclass
class SftBatch:
    """Per-example arrays of target-token log-probabilities."""

    token_logprobs: list[np.ndarray]

    def __post_init__(self):
        self.token_logprobs = [np.asarray(t, dtype=np.float64) for t in self.token_logprobs]
        if not self.token_logprobs:
            raise ValueError("empty batch")
        for tokens in self.token_logprobs:
            if tokens.ndim != 1 or tokens.size == 0:
                raise ValueError("each example needs at least one token log-prob")
            if not np.isfinite(tokens).all():
                raise ValueError("batch contains non-finite values")

    @classmethod
    def from_payload(cls, data: dict) -> "SftBatch":
        return cls(token_logprobs=[np.array(e) for e in data["examples"]])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    shrink = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + shrink), shrink / (1.0 + shrink))


def mdpo_loss(batch: PreferenceBatch) -> tuple[float, dict[str, np.ndarray]]:
    """−mean log σ(r̂_w − r̂_l − Δr) with r̂ = β·(policy − reference) log-probs.

    Returns the loss and its analytic gradient with respect to every log-prob
    input. Larger margins demand a larger implicit-reward gap, so the loss is
    increasing in Δr at fixed log-ratios.
    """
    beta = batch.beta
    z = (
        beta * (batch.policy_w - batch.ref_w)
        - beta * (batch.policy_l - batch.ref_l)
        - batch.margins
    )
    per_pair = np.logaddexp(0.0, -z)  # −log σ(z), stable
    loss = float(per_pair.mean())

    count = z.size
    dz = -_sigmoid(-z) / count  # d loss / d z per pair
    grads = {
        "policy_w": dz * beta,
        "policy_l": dz * -beta,
        "ref_w": dz * -beta,
        "ref_l": dz * beta,
    }
    return loss, grads


def dpo_loss(batch: PreferenceBatch) -> tuple[float, dict[str, np.ndarray]]:
    """Plain preference loss: the margin-annotated loss with all margins zero."""
    return mdpo_loss(replace(batch, margins=np.zeros_like(batch.margins)))


def sft_loss(batch: SftBatch) -> float:
    """Negative mean sequence log-likelihood: −(1/B)·Σ_examples Σ_tokens log p."""
    total = sum(float(tokens.sum()) for tokens in batch.token_logprobs)
    return -total / len(batch.token_logprobs)


_STEP_SCHEMA = {
    "type": "object",
    "properties": {"q": {"type": "string"}, "y": {"type": "string"}},
    "required": ["q", "y"],
    "additionalProperties": False,
}

_SFT_SCHEMA = {
    "type": "object",
    "properties": {
        "task_id": {"type": "string"},
        "question": {"type": "string"},
        "schema_id": {"type": "string"},
        "knowledge": {"type": "string"},
        "steps": {"type": "array", "items": _STEP_SCHEMA, "minItems": 1},
        "final_sql": {"type": "string", "minLength": 1},
    },
    "required": ["task_id", "question", "schema_id", "knowledge", "steps", "final_sql"],
    "additionalProperties": False,
}

_SIDE_SCHEMA = {
    "type": "object",
    "properties": {
        "q": {"type": "string"},
        "y": {"type": "string"},
        "reward": {"type": "number", "minimum": 0, "maximum": 1},
    },
    "required": ["q", "y", "reward"],
    "additionalProperties": False,
}

_PAIR_SCHEMA = {
    "type": "object",
    "properties": {
        "task_id": {"type": "string"},
        "question": {"type": "string"},
        "schema_id": {"type": "string"},
        "knowledge": {"type": "string"},
        "prefix": {"type": "array", "items": _STEP_SCHEMA},
        "winner": _SIDE_SCHEMA,
        "loser": _SIDE_SCHEMA,
        "margin": {"type": "number", "minimum": -1, "maximum": 1},
    },
    "required": [
        "task_id",
        "question",
        "schema_id",
        "knowledge",
        "prefix",
        "winner",
        "loser",
        "margin",
    ],
    "additionalProperties": False,
}


def _write_jsonl(path: Path, payloads: list[dict], schema: dict) -> str:
    """Validate then write; returns the sha256 of the file bytes."""
    for payload in payloads:
        try:
            jsonschema.validate(payload, schema)
        except jsonschema.ValidationError as exc:
            raise SchemaViolation(f"{path.name}: {exc.message}") from exc
    try:
        text = "".join(
            json.dumps(p, sort_keys=True, ensure_ascii=False) + "\n" for p in payloads
        )
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def emit_datasets(outcomes, out_dir: str | Path, config_echo: dict | None = None) -> dict:
    """Write sft.jsonl and pairs.jsonl from finished searches plus a manifest
    with counts and content digests. Every line is schema-validated first."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    sft_payloads = [
        trajectory.to_payload() for outcome in outcomes for trajectory in outcome.trajectories
    ]
    pair_payloads = [
        pair.to_payload() for outcome in outcomes for pair in outcome.collected_pairs
    ]

    sft_digest = _write_jsonl(out / "sft.jsonl", sft_payloads, _SFT_SCHEMA)
    pair_digest = _write_jsonl(out / "pairs.jsonl", pair_payloads, _PAIR_SCHEMA)

    manifest = {
        "counts": {"sft": len(sft_payloads), "pairs": len(pair_payloads)},
        "sha256": {"sft.jsonl": sft_digest, "pairs.jsonl": pair_digest},
        "config": config_echo or {},
        "loss_reduction": "mean",
    }
    try:
        (out / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return manifest

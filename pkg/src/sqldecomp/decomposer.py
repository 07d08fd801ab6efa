"""Tree search over decomposition states.

Selection walks the tree by upper confidence bounds, expansion asks the
generator for candidate next steps, every candidate is classified against the
target tree, and the blended tree-similarity reward is backed up immediately.
Redundant and invalid children are pruned: they stay in the tree as preference
losers but are never expanded further.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import evalx
from .datagen import ContrastivePair, Trajectory, compute_margin
from .demopool import Demonstration
from .evalx import TaskInstance
from .genclient import GenerationRequest
from .schema import SchemaDescriptor, schema_from_sqlite
from .sqlast import (
    DEFAULT_WEIGHTS,
    EMPTY_AST,
    Ast,
    SimWeights,
    StepClass,
    classify,
    merge,
    parse,
    reward,
)
from .sqlast.errors import AstError


class Exhausted(Exception):
    """No expandable node remains anywhere in the tree."""


@dataclass
class SearchConfig:
    c: float = 1.414
    max_iterations: int = 50
    max_depth: int = 8
    expansion_width: int = 3
    sim_weights: SimWeights = DEFAULT_WEIGHTS
    seed: int = 0
    stop_on_success: bool = True
    prune_enabled: bool = True

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("exploration constant must be ≥ 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be ≥ 1")
        if self.expansion_width < 1:
            raise ValueError("expansion_width must be ≥ 1")


@dataclass
class SearchState:
    subtask: str = ""
    subsql: str = ""
    ast: Ast | None = None
    merged: Ast = EMPTY_AST
    reward_est: float = 0.0
    classification: StepClass = StepClass.ROOT
    visit_count: int = 0
    value: float = 0.0
    parent: "SearchState | None" = None
    children: list["SearchState"] = field(default_factory=list)
    terminal: bool = False
    pruned: bool = False
    expanded: bool = False
    depth: int = 0

    def path_steps(self) -> tuple[tuple[str, str], ...]:
        """(subtask, subsql) pairs from the first step down to this state."""
        steps: list[tuple[str, str]] = []
        node: SearchState | None = self
        while node is not None and node.parent is not None:
            steps.append((node.subtask, node.subsql))
            node = node.parent
        return tuple(reversed(steps))

    def to_payload(self) -> dict:
        return {
            "subtask": self.subtask,
            "subsql": self.subsql,
            "classification": self.classification.value,
            "reward": self.reward_est,
            "visits": self.visit_count,
            "value": self.value,
            "terminal": self.terminal,
            "pruned": self.pruned,
            "children": [c.to_payload() for c in self.children],
        }


@dataclass
class TreeStats:
    expanded_nodes: int = 0
    pruned_nodes: int = 0
    generator_calls: int = 0

    def to_payload(self) -> dict:
        return {
            "expanded_nodes": self.expanded_nodes,
            "pruned_nodes": self.pruned_nodes,
            "generator_calls": self.generator_calls,
        }


@dataclass
class SearchOutcome:
    success: bool
    best_trajectory: tuple[tuple[str, str], ...] | None
    tree_stats: TreeStats
    collected_pairs: list[ContrastivePair]
    trajectories: list[Trajectory]
    root: SearchState


@dataclass
class SearchContext:
    """Per-task fixtures the expansion step needs."""

    task: TaskInstance
    schema: SchemaDescriptor
    target: Ast
    check_execution: Callable[[str], bool]
    stats: TreeStats = field(default_factory=TreeStats)


def classify_action(state: SearchState, target: Ast) -> StepClass:
    if state.parent is None:
        return StepClass.ROOT
    return classify(state.ast, state.parent.merged, target)


def _expandable(node: SearchState, config: SearchConfig) -> bool:
    return (
        not node.terminal
        and not node.pruned
        and not node.expanded
        and node.depth < config.max_depth
    )


def _viable(node: SearchState, config: SearchConfig) -> bool:
    if node.terminal or node.pruned:
        return False
    if not node.expanded:
        return node.depth < config.max_depth
    if any(_viable(child, config) for child in node.children):
        return True
    # An expansion whose children were all cut may be retried: the node is
    # still expandable, and the generator draws fresh candidates.
    return all(child.pruned for child in node.children) and node.depth < config.max_depth


def select_leaf(tree: SearchState, config: SearchConfig) -> SearchState:
    """Descend by Q + c·sqrt(ln N(s) / N(s,a)); unvisited children have
    infinite priority, ties go to the lowest child index."""
    if not _viable(tree, config):
        raise Exhausted("no expandable node remains")
    node = tree
    while node.expanded:
        best: SearchState | None = None
        best_priority = -math.inf
        for child in node.children:
            if not _viable(child, config):
                continue
            if child.visit_count == 0:
                priority = math.inf
            else:
                priority = child.value + config.c * math.sqrt(
                    math.log(node.visit_count) / child.visit_count
                )
            if priority > best_priority:
                best, best_priority = child, priority
        if best is None:
            break  # every child was cut: retry this node's expansion
        node = best
    return node


def evaluate_and_backprop(child: SearchState, target: Ast, context: SearchContext,
                          config: SearchConfig) -> None:
    """Score a fresh child, check for terminal success, and back the value up.

    Progressive children back up their reward; everything else backs up 0 so
    selection drifts away from parents that breed dead ends. Rewards are
    clamped to [0, 1] (an off-target merge can push the structural term
    negative).
    """
    if child.ast is None:
        child.reward_est = 0.0
    else:
        raw = reward(child.merged, target, config.sim_weights)
        child.reward_est = min(1.0, max(0.0, raw))

    if (
        child.classification is StepClass.PROGRESSIVE
        and child.merged.node_keys() == target.node_keys()
        and child.merged.edge_keys() == target.edge_keys()
        and context.check_execution(child.subsql)
    ):
        child.terminal = True

    backed_value = (
        child.reward_est if child.classification is StepClass.PROGRESSIVE else 0.0
    )
    child.visit_count = 1
    child.value = backed_value
    node = child.parent
    while node is not None:
        node.visit_count += 1
        node.value += (backed_value - node.value) / node.visit_count
        node = node.parent


def expand(
    leaf: SearchState,
    generator,
    demos: tuple[Demonstration, ...],
    config: SearchConfig,
    context: SearchContext,
) -> list[SearchState]:
    """Request candidates, attach each as a classified child, prune the
    non-progressive ones, and back up every new child once."""
    leaf.expanded = True
    request = GenerationRequest(
        question=context.task.question,
        schema=context.schema,
        knowledge=context.task.knowledge,
        prior_steps=leaf.path_steps(),
        demonstrations=tuple(demos),
        n_candidates=config.expansion_width,
    )
    context.stats.generator_calls += 1
    candidates = generator.generate(request)

    children = []
    for subtask, subsql in candidates:
        try:
            ast = parse(subsql, context.schema)
        except AstError:
            ast = None
        classification = classify(ast, leaf.merged, context.target)
        merged = merge(leaf.merged, ast) if ast is not None else leaf.merged
        child = SearchState(
            subtask=subtask,
            subsql=subsql,
            ast=ast,
            merged=merged,
            classification=classification,
            parent=leaf,
            depth=leaf.depth + 1,
        )
        if classification is not StepClass.PROGRESSIVE and config.prune_enabled:
            child.pruned = True
        # A child cut at birth never joins the live tree count.
        if child.pruned:
            context.stats.pruned_nodes += 1
        else:
            context.stats.expanded_nodes += 1
        leaf.children.append(child)
        evaluate_and_backprop(child, context.target, context, config)
        children.append(child)
    return children


def _success_leaves(root: SearchState) -> list[SearchState]:
    out = []
    stack = [root]
    while stack:
        node = stack.pop()
        if node.terminal:
            out.append(node)
        stack.extend(reversed(node.children))
    return out


def _trajectory_key(leaf: SearchState) -> tuple:
    path = []
    node: SearchState | None = leaf
    while node is not None and node.parent is not None:
        path.append(node)
        node = node.parent
    path.reverse()
    cumulative = sum(s.reward_est for s in path)
    visits = tuple(-s.visit_count for s in path)
    return (len(path), -cumulative, visits)


def run_search(
    task: TaskInstance,
    generator,
    demos: tuple[Demonstration, ...],
    config: SearchConfig,
    db: str | Path,
    schema: SchemaDescriptor | None = None,
) -> SearchOutcome:
    """Iterate select / expand / evaluate / backprop until a terminal success
    or the iteration budget runs out."""
    if schema is None:
        schema = schema_from_sqlite(db, task.db_id)
    target = parse(task.gold_sql, schema)

    with evalx.open_database(db) as conn:
        gold_result = evalx.execute(task.gold_sql, conn)

    def check_execution(subsql: str) -> bool:
        try:
            with evalx.open_database(db) as conn:
                predicted = evalx.execute(subsql, conn)
        except (evalx.SqlError, evalx.Timeout):
            return False
        return evalx.ex_match(predicted, gold_result)

    context = SearchContext(
        task=task, schema=schema, target=target, check_execution=check_execution
    )
    root = SearchState(merged=EMPTY_AST, classification=StepClass.ROOT)

    success = False
    for _ in range(config.max_iterations):
        try:
            leaf = select_leaf(root, config)
        except Exhausted:
            break
        children = expand(leaf, generator, demos, config, context)
        if any(child.terminal for child in children):
            success = True
            if config.stop_on_success:
                break

    trajectories, pairs = collect_training_data(root, task)
    success = success or bool(trajectories)
    best = None
    leaves = _success_leaves(root)
    if leaves:
        best_leaf = min(leaves, key=_trajectory_key)
        best = best_leaf.path_steps()
    return SearchOutcome(
        success=success,
        best_trajectory=best,
        tree_stats=context.stats,
        collected_pairs=pairs,
        trajectories=trajectories,
        root=root,
    )


def collect_training_data(
    root: SearchState, task: TaskInstance, schema_id: str = ""
) -> tuple[list[Trajectory], list[ContrastivePair]]:
    """Harvest one trajectory per terminal-success leaf and one contrastive
    pair per (progressive winner, non-progressive sibling) under each parent
    that has both kinds of children."""
    schema_id = schema_id or task.db_id
    trajectories = []
    seen_steps = set()
    for leaf in _success_leaves(root):
        steps = tuple(
            (s.subtask, s.subsql)
            for s in _path_states(leaf)
            if s.classification is StepClass.PROGRESSIVE
        )
        # Distinct leaves can replay the same step sequence; keep one copy.
        if not steps or steps in seen_steps:
            continue
        seen_steps.add(steps)
        trajectories.append(
            Trajectory(
                task_id=task.task_id,
                question=task.question,
                schema_id=schema_id,
                knowledge=task.knowledge,
                steps=steps,
                final_sql=leaf.subsql,
            )
        )

    pairs = []
    seen_pairs = set()
    stack = [root]
    while stack:
        node = stack.pop(0)
        stack.extend(node.children)
        winners = [c for c in node.children if c.classification is StepClass.PROGRESSIVE]
        losers = [
            c for c in node.children if c.classification in (StepClass.REDUNDANT, StepClass.INVALID)
        ]
        if not winners or not losers:
            continue
        winner = max(winners, key=lambda c: c.reward_est)
        prefix = node.path_steps()
        for loser in losers:
            key = (prefix, winner.subsql, loser.subsql)
            if key in seen_pairs:
                continue
            seen_pairs.add(key)
            pairs.append(
                ContrastivePair(
                    task_id=task.task_id,
                    question=task.question,
                    schema_id=schema_id,
                    knowledge=task.knowledge,
                    prefix=prefix,
                    winner=(winner.subtask, winner.subsql, winner.reward_est),
                    loser=(loser.subtask, loser.subsql, loser.reward_est),
                    margin=compute_margin(winner.reward_est, loser.reward_est),
                )
            )
    return trajectories, pairs


def _path_states(leaf: SearchState) -> list[SearchState]:
    path = []
    node: SearchState | None = leaf
    while node is not None and node.parent is not None:
        path.append(node)
        node = node.parent
    path.reverse()
    return path

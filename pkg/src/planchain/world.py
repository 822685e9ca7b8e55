"""Simulated device layer: predicate-valued world state, getVal/execute and fault scripts.

The world never checks preconditions. Whether an action may run is decided by
the contract layer; the device will actuate whatever it is told to.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

from .plan import ActionSpec, Literal, Plan, parse_literals, format_literals


class WorldError(KeyError):
    pass


class OutcomeKind(str, Enum):
    NOMINAL = "nominal"
    FAIL = "fail"
    PARTIAL = "partial"
    DELAY = "delay"


@dataclass(frozen=True)
class Outcome:
    kind: OutcomeKind = OutcomeKind.NOMINAL
    effects: frozenset[Literal] = frozenset()
    steps: int = 0


NOMINAL = Outcome()


@dataclass
class OutcomeScript:
    """Per-action device behaviour; actions without an entry behave nominally."""

    outcomes: dict[str, Outcome] = field(default_factory=dict)

    def for_action(self, action_id: str) -> Outcome:
        return self.outcomes.get(action_id, NOMINAL)


@dataclass(frozen=True)
class ExecResult:
    action: str
    succeeded: bool
    step_completed: int


@dataclass
class WorldState:
    values: dict[str, bool]
    step: int = 0
    actions: frozenset[str] = frozenset()
    # (due step, action id, literals) for delayed actuations
    pending: list[tuple[int, str, tuple[Literal, ...]]] = field(default_factory=list)

    def snapshot(self) -> dict[str, bool]:
        return dict(sorted(self.values.items()))


def init_world(plan: Plan) -> WorldState:
    values = {p: False for p in plan.predicates}
    for p in plan.init:
        values[p] = True
    return WorldState(values=values, step=0, actions=frozenset(plan.action_ids))


def get_val(world: WorldState, predicate: str) -> bool:
    try:
        return world.values[predicate]
    except KeyError:
        raise WorldError(f"unknown predicate {predicate!r}") from None


def read_values(world: WorldState, predicates: Iterable[str]) -> dict[str, bool]:
    """Read several predicates at one step (a single snapshot)."""
    return {p: get_val(world, p) for p in sorted(set(predicates))}


def _apply(world: WorldState, literals: Iterable[Literal]) -> None:
    literals = list(literals)
    for lit in literals:
        if lit.positive:
            world.values[lit.predicate] = True
    for lit in literals:
        if not lit.positive:
            world.values[lit.predicate] = False


def advance(world: WorldState, steps: int = 1) -> None:
    """Move time forward, applying any delayed effects that fall due."""
    for _ in range(steps):
        world.step += 1
        due = [p for p in world.pending if p[0] <= world.step]
        world.pending = [p for p in world.pending if p[0] > world.step]
        for _, _, literals in due:
            _apply(world, literals)


def execute_action(world: WorldState, action: ActionSpec, script: OutcomeScript) -> ExecResult:
    if world.actions and action.id not in world.actions:
        raise WorldError(f"unknown action {action.id!r}")
    for lit in action.effect:
        get_val(world, lit.predicate)
    outcome = script.for_action(action.id)
    advance(world)
    if outcome.kind is OutcomeKind.FAIL:
        return ExecResult(action.id, False, world.step)
    if outcome.kind is OutcomeKind.PARTIAL:
        _apply(world, outcome.effects)
        return ExecResult(action.id, True, world.step)
    if outcome.kind is OutcomeKind.DELAY and outcome.steps > 0:
        due = world.step + outcome.steps
        world.pending.append((due, action.id, tuple(sorted(action.effect))))
        return ExecResult(action.id, True, due)
    _apply(world, action.effect)
    return ExecResult(action.id, True, world.step)


def parse_fault_script(document: str | Mapping[str, Any], plan: Plan) -> OutcomeScript:
    """Parse ``{action id: {"kind": ..., "effects": [...], "steps": n}}``.

    All problems are collected into one :class:`ValueError`.
    """
    if isinstance(document, str):
        document = json.loads(document)
    if not isinstance(document, Mapping):
        raise ValueError("fault script must be a JSON object")
    problems: list[str] = []
    outcomes: dict[str, Outcome] = {}
    known = set(plan.action_ids)
    for aid, spec in document.items():
        if aid not in known:
            problems.append(f"fault script names unknown action {aid!r}")
            continue
        if not isinstance(spec, Mapping):
            problems.append(f"fault for {aid!r} must be an object")
            continue
        try:
            kind = OutcomeKind(spec.get("kind", "nominal"))
        except ValueError:
            problems.append(f"fault for {aid!r}: unknown kind {spec.get('kind')!r}")
            continue
        effects = parse_literals(spec.get("effects", []))
        steps = spec.get("steps", 0)
        if kind is OutcomeKind.PARTIAL and not effects <= plan.action(aid).effect:
            problems.append(f"fault for {aid!r}: partial effects must be a subset of the action's effect")
        if not isinstance(steps, int) or steps < 0:
            problems.append(f"fault for {aid!r}: steps must be a non-negative integer")
            continue
        outcomes[aid] = Outcome(kind, effects, steps)
    if problems:
        raise ValueError("; ".join(problems))
    return OutcomeScript(outcomes)


def load_fault_script(path: str | Path, plan: Plan) -> OutcomeScript:
    return parse_fault_script(Path(path).read_text(), plan)


def fault_script_to_document(script: OutcomeScript) -> dict[str, Any]:
    return {
        aid: {"kind": o.kind.value, "effects": format_literals(o.effects), "steps": o.steps}
        for aid, o in sorted(script.outcomes.items())
    }

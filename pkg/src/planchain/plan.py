"""Partial-order plans: parsing, validation, local-plan projection and ordering checks."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence


class PlanError(ValueError):
    """Raised for malformed or invalid plans. ``problems`` lists every issue found."""

    def __init__(self, problems: Sequence[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True, order=True)
class Literal:
    predicate: str
    positive: bool = True

    @classmethod
    def parse(cls, text: str) -> "Literal":
        if not isinstance(text, str):
            raise PlanError(f"literal must be a string, got {text!r}")
        positive = not text.startswith("!")
        name = text if positive else text[1:]
        if not name:
            raise PlanError(f"empty predicate in literal {text!r}")
        return cls(name, positive)

    def holds(self, values: Mapping[str, bool]) -> bool:
        return bool(values[self.predicate]) == self.positive

    def __str__(self) -> str:
        return self.predicate if self.positive else "!" + self.predicate


def parse_literals(items: Iterable[str]) -> frozenset[Literal]:
    return frozenset(Literal.parse(item) for item in items)


def format_literals(literals: Iterable[Literal]) -> list[str]:
    return [str(lit) for lit in sorted(literals)]


def contradictions(literals: Iterable[Literal]) -> list[str]:
    """Predicates that appear both positively and negatively."""
    pos = {lit.predicate for lit in literals if lit.positive}
    neg = {lit.predicate for lit in literals if not lit.positive}
    return sorted(pos & neg)


@dataclass(frozen=True)
class ActionSpec:
    id: str
    agent: str
    precond: frozenset[Literal] = frozenset()
    effect: frozenset[Literal] = frozenset()


@dataclass(frozen=True)
class Plan:
    """A global partial-order plan.

    ``deps`` holds pairs ``(before, after)``: ``after`` depends on ``before``.
    Actions keep their declaration order, which fixes tie-breaks everywhere.
    """

    agents: tuple[str, ...]
    predicates: tuple[str, ...]
    actions: tuple[ActionSpec, ...]
    deps: frozenset[tuple[str, str]]
    init: frozenset[str] = frozenset()
    goal: frozenset[Literal] = frozenset()
    _index: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        by_id: dict[str, ActionSpec] = {}
        for a in self.actions:
            by_id.setdefault(a.id, a)
        order = {a.id: i for i, a in reversed(list(enumerate(self.actions)))}
        ins: dict[str, set[str]] = {a: set() for a in by_id}
        outs: dict[str, set[str]] = {a: set() for a in by_id}
        for before, after in self.deps:
            ins.setdefault(after, set()).add(before)
            outs.setdefault(before, set()).add(after)
        object.__setattr__(
            self, "_index", {"by_id": by_id, "order": order, "in": ins, "out": outs}
        )

    @property
    def action_ids(self) -> tuple[str, ...]:
        return tuple(a.id for a in self.actions)

    def action(self, action_id: str) -> ActionSpec:
        try:
            return self._index["by_id"][action_id]
        except KeyError:
            raise PlanError(f"unknown action {action_id!r}") from None

    def loc(self, action_id: str) -> str:
        return self.action(action_id).agent

    def dep(self, action_id: str) -> frozenset[str]:
        return frozenset(self._index["in"].get(action_id, ()))

    def out(self, action_id: str) -> frozenset[str]:
        return frozenset(self._index["out"].get(action_id, ()))

    def ordered(self, ids: Iterable[str]) -> list[str]:
        """Sort action ids by declaration order."""
        order = self._index["order"]
        return sorted(ids, key=lambda a: (order.get(a, len(order)), a))

    def actions_of(self, agent: str) -> list[ActionSpec]:
        return [a for a in self.actions if a.agent == agent]


def _require_list(doc: Mapping[str, Any], key: str, problems: list[str]) -> list:
    value = doc.get(key, [])
    if not isinstance(value, list):
        problems.append(f"'{key}' must be a list")
        return []
    return value


def parse_plan(document: str | bytes | Mapping[str, Any]) -> Plan:
    """Build a :class:`Plan` from a JSON document (text or already-decoded mapping).

    Raises :class:`PlanError` listing every problem when the document is malformed
    or the resulting plan violates an invariant.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise PlanError(f"malformed plan document: {exc}") from None
    if not isinstance(document, Mapping):
        raise PlanError("plan document must be a JSON object")

    problems: list[str] = []
    agents = _require_list(document, "agents", problems)
    predicates = _require_list(document, "predicates", problems)
    raw_actions = _require_list(document, "actions", problems)
    raw_deps = _require_list(document, "deps", problems)
    raw_init = _require_list(document, "init", problems)
    raw_goal = _require_list(document, "goal", problems)

    actions: list[ActionSpec] = []
    seen: set[str] = set()
    for i, raw in enumerate(raw_actions):
        if not isinstance(raw, Mapping) or "id" not in raw or "agent" not in raw:
            problems.append(f"action #{i} must be an object with 'id' and 'agent'")
            continue
        aid = str(raw["id"])
        if aid in seen:
            problems.append(f"duplicate action id {aid!r}")
            continue
        seen.add(aid)
        try:
            actions.append(
                ActionSpec(
                    id=aid,
                    agent=str(raw["agent"]),
                    precond=parse_literals(raw.get("precond", [])),
                    effect=parse_literals(raw.get("effect", [])),
                )
            )
        except PlanError as exc:
            problems.extend(f"action {aid!r}: {p}" for p in exc.problems)

    deps: set[tuple[str, str]] = set()
    for pair in raw_deps:
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            problems.append(f"dependency {pair!r} must be a [before, after] pair")
            continue
        deps.add((str(pair[0]), str(pair[1])))

    goal: frozenset[Literal] = frozenset()
    try:
        goal = parse_literals(raw_goal)
    except PlanError as exc:
        problems.extend(f"goal: {p}" for p in exc.problems)

    if problems:
        raise PlanError(problems)

    plan = Plan(
        agents=tuple(str(a) for a in agents),
        predicates=tuple(dict.fromkeys(str(p) for p in predicates)),
        actions=tuple(actions),
        deps=frozenset(deps),
        init=frozenset(str(p) for p in raw_init),
        goal=goal,
    )
    violations = validate_plan(plan)
    if violations:
        raise PlanError(violations)
    return plan


def load_plan(path: str | Path) -> Plan:
    return parse_plan(Path(path).read_text())


def plan_to_document(plan: Plan) -> dict[str, Any]:
    """Inverse of :func:`parse_plan`; deps are listed in a stable order."""
    order = {a: i for i, a in enumerate(plan.action_ids)}
    deps = sorted(plan.deps, key=lambda d: (order.get(d[1], -1), order.get(d[0], -1), d))
    return {
        "agents": list(plan.agents),
        "predicates": list(plan.predicates),
        "actions": [
            {
                "id": a.id,
                "agent": a.agent,
                "precond": format_literals(a.precond),
                "effect": format_literals(a.effect),
            }
            for a in plan.actions
        ],
        "deps": [list(d) for d in deps],
        "init": sorted(plan.init),
        "goal": format_literals(plan.goal),
    }


def find_cycle(nodes: Iterable[str], edges: Iterable[tuple[str, str]]) -> list[str] | None:
    """Return the nodes left over by Kahn's algorithm (all on or behind a cycle), or None."""
    nodes = set(nodes)
    succ: dict[str, list[str]] = {n: [] for n in nodes}
    indeg = {n: 0 for n in nodes}
    for before, after in edges:
        if before not in nodes or after not in nodes:
            continue
        succ[before].append(after)
        indeg[after] += 1
    queue = deque(n for n in nodes if indeg[n] == 0)
    removed = 0
    while queue:
        n = queue.popleft()
        removed += 1
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                queue.append(m)
    if removed == len(nodes):
        return None
    return sorted(n for n in nodes if indeg[n] > 0)


def validate_plan(plan: Plan) -> list[str]:
    """Return every invariant violation of ``plan`` as a message; empty means valid."""
    violations: list[str] = []
    ids = [a.id for a in plan.actions]
    known = set(ids)
    agents = set(plan.agents)
    universe = set(plan.predicates)

    if len(ids) != len(known):
        dupes = sorted({a for a in ids if ids.count(a) > 1})
        violations.extend(f"duplicate action id {a!r}" for a in dupes)

    for a in plan.actions:
        if a.agent not in agents:
            violations.append(f"action {a.id!r}: agent {a.agent!r} is not declared")
        for label, lits in (("precond", a.precond), ("effect", a.effect)):
            for p in contradictions(lits):
                violations.append(f"action {a.id!r}: {label} contains both {p!r} and '!{p}'")
            for lit in sorted(lits):
                if lit.predicate not in universe:
                    violations.append(
                        f"action {a.id!r}: {label} predicate {lit.predicate!r} is not declared"
                    )

    for before, after in sorted(plan.deps):
        for end in (before, after):
            if end not in known:
                violations.append(f"dependency ({before!r}, {after!r}) references undeclared action {end!r}")

    for p in sorted(plan.init - universe):
        violations.append(f"init predicate {p!r} is not declared")
    for lit in sorted(plan.goal):
        if lit.predicate not in universe:
            violations.append(f"goal predicate {lit.predicate!r} is not declared")
    for p in contradictions(plan.goal):
        violations.append(f"goal contains both {p!r} and '!{p}'")

    cyclic = find_cycle(known, plan.deps)
    if cyclic:
        violations.append(f"dependency cycle through actions {cyclic}")
    return violations


@dataclass(frozen=True)
class LocalEntry:
    in_set: frozenset[str]
    precond: frozenset[Literal]
    action: str
    effect: frozenset[Literal]
    out_set: frozenset[str]


@dataclass(frozen=True)
class LocalPlan:
    agent: str
    entries: tuple[LocalEntry, ...] = ()

    def entry(self, action_id: str) -> LocalEntry:
        for e in self.entries:
            if e.action == action_id:
                return e
        raise PlanError(f"action {action_id!r} is not in the local plan of {self.agent!r}")

    @property
    def action_ids(self) -> tuple[str, ...]:
        return tuple(e.action for e in self.entries)


def derive_local_plans(plan: Plan) -> dict[str, LocalPlan]:
    """Project the global plan onto each agent as ``<In(a), precond, a, effect, Out(a)>`` entries."""
    violations = validate_plan(plan)
    if violations:
        raise PlanError(violations)
    entries: dict[str, list[LocalEntry]] = {agent: [] for agent in plan.agents}
    for a in plan.actions:
        entries[a.agent].append(
            LocalEntry(
                in_set=plan.dep(a.id),
                precond=a.precond,
                action=a.id,
                effect=a.effect,
                out_set=plan.out(a.id),
            )
        )
    return {agent: LocalPlan(agent, tuple(es)) for agent, es in entries.items()}


def enabled_actions(plan: Plan, completed: Iterable[str]) -> frozenset[str]:
    completed = frozenset(completed)
    unknown = completed - set(plan.action_ids)
    if unknown:
        raise PlanError(f"unknown actions in completed set: {sorted(unknown)}")
    return frozenset(
        a for a in plan.action_ids if a not in completed and plan.dep(a) <= completed
    )


@dataclass(frozen=True)
class TraceEntry:
    action: str
    dispatched: int
    completed: int


Trace = Sequence[TraceEntry]


def trace_from_order(order: Sequence[str]) -> list[TraceEntry]:
    """Sequential trace: action i is dispatched at step 2i and completes at 2i+1."""
    return [TraceEntry(a, 2 * i, 2 * i + 1) for i, a in enumerate(order)]


def is_linear_extension(trace: Trace, plan: Plan, partial: bool = False) -> bool:
    """Check that ``trace`` executes ``plan`` in an order consistent with every dependency.

    With ``partial=True`` the trace may omit actions, but every dependency of a
    traced action must itself be traced and complete first (a valid prefix).
    """
    seen: dict[str, TraceEntry] = {}
    for entry in trace:
        if entry.action in seen or entry.completed <= entry.dispatched:
            return False
        seen[entry.action] = entry
    ids = set(plan.action_ids)
    if not set(seen) <= ids:
        return False
    if not partial and set(seen) != ids:
        return False
    for before, after in plan.deps:
        if after not in seen:
            continue
        if before not in seen or seen[before].completed >= seen[after].dispatched:
            return False
    return True


def goal_satisfied(plan: Plan, values: Mapping[str, bool]) -> bool:
    return all(lit.holds(values) for lit in plan.goal)

"""Scenario loading, deployment, the deterministic event loop and run reports."""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .agents import (
    HONEST,
    AgentBehavior,
    AgentRuntime,
    BehaviorKind,
    OracleResponder,
    Scheduler,
    check_behavior,
    completed_actions,
)
from .contracts import COMPLETED, ROLLBACK, Deployment, action_args, plan_init
from .ledger import DEPLOY, Identity, Ledger, Receipt, verify_audit_records
from .plan import (
    Literal,
    Plan,
    PlanError,
    TraceEntry,
    derive_local_plans,
    goal_satisfied,
    is_linear_extension,
    parse_plan,
    plan_to_document,
)
from .world import OutcomeScript, advance, fault_script_to_document, init_world, parse_fault_script

MODES = ("centralized", "decentralized")
DEPLOYER = "deployer"
ORACLE = "oracle"


class ScenarioError(ValueError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class ScenarioConfig:
    plan_file: str | None = None
    fault_script_file: str | None = None
    mode: str = "centralized"
    behaviors: dict[str, AgentBehavior] = field(default_factory=dict)
    seed: int = 0
    stall_timeout_ticks: int | None = None
    abort_on_violation: bool = True


@dataclass
class Scenario:
    config: ScenarioConfig
    plan: Plan
    script: OutcomeScript = field(default_factory=OutcomeScript)

    def with_config(self, **changes) -> "Scenario":
        cfg = ScenarioConfig(**{**asdict_shallow(self.config), **changes})
        return Scenario(cfg, self.plan, self.script)

    def stall_timeout(self) -> int:
        if self.config.stall_timeout_ticks is not None:
            return self.config.stall_timeout_ticks
        return max(1, 10 * len(self.plan.actions))


def asdict_shallow(obj) -> dict:
    return {k: getattr(obj, k) for k in obj.__dataclass_fields__}


def _load_part(value, base: Path, problems: list[str], what: str):
    """A scenario part is either inline JSON or a path relative to the scenario file."""
    if isinstance(value, str):
        path = (base / value) if not Path(value).is_absolute() else Path(value)
        try:
            return json.loads(path.read_text()), str(path)
        except FileNotFoundError:
            problems.append(f"{what} file not found: {path}")
        except json.JSONDecodeError as exc:
            problems.append(f"{what} file {path} is not valid JSON: {exc}")
        return None, str(path)
    return value, None


def scenario_from_document(doc: Mapping[str, Any], base: Path = Path(".")) -> Scenario:
    """Validate a scenario document, reporting every problem at once."""
    problems: list[str] = []
    if not isinstance(doc, Mapping):
        raise ScenarioError(["scenario must be a JSON object"])

    plan_doc, plan_file = _load_part(doc.get("plan"), base, problems, "plan")
    plan = None
    if plan_doc is None and plan_file is None:
        problems.append("scenario has no 'plan'")
    elif plan_doc is not None:
        try:
            plan = parse_plan(plan_doc)
        except PlanError as exc:
            problems.extend(f"plan: {p}" for p in exc.problems)

    mode = doc.get("mode", "centralized")
    if mode not in MODES:
        problems.append(f"unknown mode {mode!r} (expected one of {', '.join(MODES)})")

    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        problems.append("seed must be an integer")
    timeout = doc.get("stall_timeout_ticks")
    if timeout is not None and (not isinstance(timeout, int) or timeout < 1):
        problems.append("stall_timeout_ticks must be an integer >= 1")
    abort = doc.get("abort_on_violation", True)
    if not isinstance(abort, bool):
        problems.append("abort_on_violation must be a boolean")

    behaviors: dict[str, AgentBehavior] = {}
    raw_behaviors = doc.get("behaviors", {}) or {}
    if not isinstance(raw_behaviors, Mapping):
        problems.append("behaviors must be an object")
        raw_behaviors = {}
    for agent, raw in raw_behaviors.items():
        try:
            behaviors[agent] = AgentBehavior.from_document(raw)
        except (ValueError, AttributeError) as exc:
            problems.append(f"agent {agent!r}: {exc}")
            continue
        if plan is not None:
            if agent not in plan.agents:
                problems.append(f"behavior for unknown agent {agent!r}")
            else:
                problems.extend(check_behavior(plan, agent, behaviors[agent]))

    script = OutcomeScript()
    fault_doc, fault_file = _load_part(doc.get("fault_script"), base, problems, "fault script")
    if fault_doc is not None and plan is not None:
        try:
            script = parse_fault_script(fault_doc, plan)
        except ValueError as exc:
            problems.append(f"fault script: {exc}")

    if problems:
        raise ScenarioError(problems)
    config = ScenarioConfig(
        plan_file=plan_file,
        fault_script_file=fault_file,
        mode=mode,
        behaviors=behaviors,
        seed=seed,
        stall_timeout_ticks=timeout,
        abort_on_violation=abort,
    )
    return Scenario(config, plan, script)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ScenarioError([f"scenario file not found: {path}"]) from None
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"scenario file {path} is not valid JSON: {exc}"]) from None
    return scenario_from_document(doc, path.parent)


def scenario_to_document(scenario: Scenario) -> dict[str, Any]:
    cfg = scenario.config
    return {
        "plan": plan_to_document(scenario.plan),
        "fault_script": fault_script_to_document(scenario.script),
        "mode": cfg.mode,
        "behaviors": {a: b.to_document() for a, b in sorted(cfg.behaviors.items())},
        "seed": cfg.seed,
        "stall_timeout_ticks": cfg.stall_timeout_ticks,
        "abort_on_violation": cfg.abort_on_violation,
    }


BUNDLED = Path(__file__).parent / "scenarios"


def bundled_scenario(name: str) -> Path:
    return BUNDLED / (name if name.endswith(".json") else name + ".json")


# ---------------------------------------------------------------------------
# deployment


class _Submitter:
    def __init__(self, ledger: Ledger, identity: Identity):
        self.ledger = ledger
        self.identity = identity
        self.nonce = 0

    def __call__(self, target: str, op: str, **args) -> Receipt:
        r = self.ledger.submit(self.identity.sign(target, op, args, self.nonce))
        self.nonce += 1
        if not r.accepted:
            raise RuntimeError(f"deployment step {op} on {target or 'new contract'} rejected: {r.reason}")
        return r


def deploy_centralized(ledger: Ledger, deployer: Identity, oracle: Identity, plan: Plan) -> tuple[Deployment, int]:
    """Oracle, then one ActSC per agent, then RegisterSC (with setAct), then PlanSC."""
    send = _Submitter(ledger, deployer)
    oracle_addr = send("", DEPLOY, contract="OracleSC", args={"responder": oracle.id}).result
    acts: dict[str, str] = {}
    for agent in plan.agents:
        actions = [action_args(plan, a.id) for a in plan.actions_of(agent)]
        acts[agent] = send("", DEPLOY, contract="ActSC", args={"oracle": oracle_addr, "actions": actions}).result
    register = send("", DEPLOY, contract="RegisterSC", args={}).result
    for agent in plan.agents:
        ids = [a.id for a in plan.actions_of(agent)]
        if ids:
            send(register, "set_act", actions=ids, act=acts[agent])
    state = plan_init(plan)
    plan_addr = send("", DEPLOY, contract="PlanSC", args={"dag": state.dag, "register": register}).result
    for agent in plan.agents:
        send(acts[agent], "set_dispatcher", dispatcher=plan_addr)
    return Deployment("centralized", oracle_addr, register, plan_addr, acts), send.nonce


def deploy_decentralized(ledger: Ledger, deployer: Identity, oracle: Identity, plan: Plan) -> tuple[Deployment, int]:
    """Oracle, then one PlanActSC per agent, then RegisterSC (with setAct)."""
    send = _Submitter(ledger, deployer)
    oracle_addr = send("", DEPLOY, contract="OracleSC", args={"responder": oracle.id}).result
    local = derive_local_plans(plan)
    contracts: dict[str, str] = {}
    for agent in plan.agents:
        entries = []
        for e in local[agent].entries:
            entry = action_args(plan, e.action)
            entry["in"] = plan.ordered(e.in_set)
            entry["out"] = plan.ordered(e.out_set)
            entries.append(entry)
        contracts[agent] = send(
            "", DEPLOY, contract="PlanActSC", args={"owner": agent, "oracle": oracle_addr, "entries": entries}
        ).result
    register = send("", DEPLOY, contract="RegisterSC", args={}).result
    for agent in plan.agents:
        ids = [a.id for a in plan.actions_of(agent)]
        if ids:
            send(register, "set_act", actions=ids, act=contracts[agent])
        send(contracts[agent], "set_register", register=register)
    return Deployment("decentralized", oracle_addr, register, None, contracts), send.nonce


# ---------------------------------------------------------------------------
# reports


@dataclass
class Violation:
    agent: str
    kind: str
    action: str | None = None
    evidence: dict = field(default_factory=dict)


@dataclass
class RunReport:
    mode: str
    seed: int
    terminal: str  # done | stalled | aborted
    ticks: int
    trace: list[TraceEntry]
    completed: list[str]
    violations: list[Violation]
    stall: dict | None
    goal_satisfied: bool
    chain_valid: bool
    final_world: dict[str, bool]
    injections: list[dict]
    receipts: list[dict]

    @property
    def violators(self) -> set[str]:
        return {v.agent for v in self.violations}


def _attribute(receipt: Receipt, plan: Plan) -> Violation | None:
    """Map a rejected, chain-included receipt to the agent responsible for it."""
    if receipt.accepted or receipt.block is None or receipt.sender == ORACLE:
        return None
    action = next((e.args.get("action") for e in receipt.events if e.name == ROLLBACK), None)
    if action is None:
        action = next((e.args.get("action") for e in receipt.events if "action" in e.args), None)
    if receipt.sender == DEPLOYER:
        if action is None:
            return None
        agent = plan.loc(action)
    else:
        agent = receipt.sender
    return Violation(agent, receipt.reason, action, {"seq": receipt.seq, "block": receipt.block})


def build_trace(receipts: Sequence[Receipt]) -> list[TraceEntry]:
    dispatched: dict[str, int] = {}
    completed: dict[str, int] = {}
    for r in receipts:
        if not r.accepted:
            continue
        for e in r.events:
            if e.name == "action_dispatched":
                dispatched.setdefault(e.args["action"], r.seq)
            elif e.name == COMPLETED:
                completed.setdefault(e.args["action"], r.seq)
    entries = [TraceEntry(a, dispatched.get(a, seq), seq) for a, seq in completed.items()]
    return sorted(entries, key=lambda t: t.completed)


def stall_analysis(plan: Plan, completed: set[str]) -> dict:
    """Frontier = unfinished actions whose dependencies are all done; blocked = the rest."""
    remaining = [a for a in plan.action_ids if a not in completed]
    frontier = [a for a in remaining if plan.dep(a) <= completed]
    blocked = [a for a in remaining if a not in frontier]
    responsible = sorted({plan.loc(a) for a in frontier})
    return {"frontier": frontier, "blocked": blocked, "responsible": responsible}


class Simulation:
    """One scenario run: ledger, world, deployed contracts and the actors driving them."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        cfg = scenario.config
        self.plan = plan = scenario.plan
        self.ledger = Ledger()
        self.world = init_world(plan)
        self.rng = random.Random(cfg.seed)
        secret = f"seed:{cfg.seed}"
        self.deployer = Identity.create(DEPLOYER, secret)
        self.oracle_identity = Identity.create(ORACLE, secret)
        for ident in (self.deployer, self.oracle_identity):
            self.ledger.register(ident)

        local = derive_local_plans(plan)
        self.agents: dict[str, AgentRuntime] = {}
        for agent in plan.agents:
            ident = Identity.create(agent, secret)
            self.ledger.register(ident)
            self.agents[agent] = AgentRuntime(
                ident, plan, cfg.behaviors.get(agent, HONEST), local[agent], scenario.script
            )

        if cfg.mode == "centralized":
            self.deployment, nonce = deploy_centralized(self.ledger, self.deployer, self.oracle_identity, plan)
            self.scheduler = Scheduler(self.deployer, self.deployment.plan, nonce)
        else:
            self.deployment, _ = deploy_decentralized(self.ledger, self.deployer, self.oracle_identity, plan)
            self.scheduler = None
        self.oracle = OracleResponder(self.oracle_identity)
        self.ledger.seal_block()
        self.tick_count = 0
        self.violations: list[Violation] = []
        self._seen_receipts = len(self.ledger.receipts)

    def completed(self) -> set[str]:
        return completed_actions(self.ledger, self.deployment)

    def tick(self) -> None:
        self.tick_count += 1
        t = self.tick_count
        actors: list[Any] = [self.agents[a] for a in self.plan.agents]
        if self.scheduler is not None:
            actors.append(self.scheduler)
        self.rng.shuffle(actors)
        for actor in actors:
            if actor is self.scheduler:
                self.scheduler.tick(self.ledger, abort_failed=not self.scenario.config.abort_on_violation)
            elif self.deployment.mode == "centralized":
                actor.tick_centralized(self.ledger, self.deployment, self.world, t)
            else:
                actor.tick_decentralized(self.ledger, self.deployment, self.world, t)
        self.oracle.tick(self.ledger, self.deployment, self.world, self.agents, self.plan, t)
        advance(self.world)
        self.ledger.seal_block()
        for r in self.ledger.receipts[self._seen_receipts:]:
            v = _attribute(r, self.plan)
            if v is not None:
                self.violations.append(v)
        self._seen_receipts = len(self.ledger.receipts)

    def run(self) -> RunReport:
        cfg = self.scenario.config
        timeout = self.scenario.stall_timeout()
        n = len(self.plan.actions)
        last_progress, last_count = 0, -1
        terminal, stall = "done", None
        while True:
            done = self.completed()
            if len(done) == n:
                terminal = "done"
                break
            if self.violations and cfg.abort_on_violation:
                terminal = "aborted"
                break
            if len(done) != last_count:
                last_count, last_progress = len(done), self.tick_count
            elif self.tick_count - last_progress >= timeout:
                terminal = "stalled"
                stall = stall_analysis(self.plan, done)
                for agent in stall["responsible"]:
                    frontier = [a for a in stall["frontier"] if self.plan.loc(a) == agent]
                    self.violations.append(
                        Violation(agent, "stall", frontier[0], {"blocked": stall["blocked"], "frontier": frontier})
                    )
                break
            self.tick()
        return self._report(terminal, stall)

    def _report(self, terminal: str, stall: dict | None) -> RunReport:
        done = self.completed()
        injections = [asdict(i) for a in self.plan.agents for i in self.agents[a].injections]
        return RunReport(
            mode=self.scenario.config.mode,
            seed=self.scenario.config.seed,
            terminal=terminal,
            ticks=self.tick_count,
            trace=build_trace(self.ledger.receipts),
            completed=self.plan.ordered(done),
            violations=list(self.violations),
            stall=stall,
            goal_satisfied=goal_satisfied(self.plan, self.world.values),
            chain_valid=self.ledger.verify_chain(),
            final_world=self.world.snapshot(),
            injections=sorted(injections, key=lambda d: (d["tick"], d["agent"])),
            receipts=self.ledger.audit_records(),
        )


def run_scenario(scenario: Scenario) -> RunReport:
    return Simulation(scenario).run()


# ---------------------------------------------------------------------------
# report formats


def report_to_records(report: RunReport) -> list[dict]:
    summary = {
        "type": "summary",
        "mode": report.mode,
        "seed": report.seed,
        "terminal": report.terminal,
        "ticks": report.ticks,
        "goal_satisfied": report.goal_satisfied,
        "chain_valid": report.chain_valid,
        "completed": report.completed,
        "stall": report.stall,
        "final_world": report.final_world,
    }
    records = [summary]
    records += [{"type": "trace", **asdict(t)} for t in report.trace]
    records += [{"type": "violation", **asdict(v)} for v in report.violations]
    records += [{"type": "injection", **i} for i in report.injections]
    records += [{"type": "receipt", **r} for r in report.receipts]
    return records


def emit_report(report: RunReport, format: str = "text") -> str:
    if format in ("structured", "json-lines", "json"):
        return "".join(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n" for rec in report_to_records(report))
    if format != "text":
        raise ValueError(f"unknown report format {format!r}")
    lines = [
        f"mode: {report.mode}  seed: {report.seed}",
        f"terminal: {report.terminal} after {report.ticks} ticks",
        f"goal satisfied: {'yes' if report.goal_satisfied else 'no'}",
        f"chain valid: {'yes' if report.chain_valid else 'no'}",
        f"completed ({len(report.completed)}): {' '.join(report.completed) or '-'}",
        "trace:",
    ]
    lines += [f"  {t.action}: dispatched @{t.dispatched}, completed @{t.completed}" for t in report.trace] or ["  (empty)"]
    if report.stall:
        lines.append(
            f"stall: blocked {report.stall['blocked']} behind {report.stall['frontier']}, "
            f"responsible {', '.join(report.stall['responsible'])}"
        )
    if not report.violations:
        lines.append("violations: none")
    else:
        lines.append(f"violations: {len(report.violations)}")
        for v in report.violations:
            where = f" seq {v.evidence['seq']}" if "seq" in v.evidence else ""
            lines.append(f"  {v.agent}: {v.kind} on {v.action}{where}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> RunReport:
    """Rebuild a report from its structured (JSON lines) form."""
    summary = None
    trace, violations, injections, receipts = [], [], [], []
    for line in text.splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        kind = rec.pop("type")
        if kind == "summary":
            summary = rec
        elif kind == "trace":
            trace.append(TraceEntry(**rec))
        elif kind == "violation":
            violations.append(Violation(**rec))
        elif kind == "injection":
            injections.append(rec)
        elif kind == "receipt":
            receipts.append({k: rec[k] for k in AUDIT_FIELDS})
    if summary is None:
        raise ValueError("report has no summary record")
    return RunReport(
        trace=trace, violations=violations, injections=injections, receipts=receipts, **summary
    )


AUDIT_FIELDS = (
    "seq", "block", "sender", "target", "op", "status", "events", "reason", "result",
    "nonce", "payload", "signature", "tx_digest", "block_prev", "block_digest",
)


# ---------------------------------------------------------------------------
# offline audit-log verification


def read_audit_log(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def deps_from_audit(records: Sequence[dict]) -> set[tuple[str, str]]:
    """Recover the plan's dependency pairs from the contract deployment payloads."""
    deps: set[tuple[str, str]] = set()
    for rec in records:
        if rec["op"] != DEPLOY or rec["status"] != "accepted" or not rec.get("payload"):
            continue
        payload = json.loads(rec["payload"])
        args = payload.get("args", {})
        if payload.get("contract") == "PlanSC":
            for row in args.get("dag", []):
                deps.update((b, row[0]) for b in row[1:])
        elif payload.get("contract") == "PlanActSC":
            for e in args.get("entries", []):
                deps.update((b, e["id"]) for b in e.get("in", []))
    return deps


def verify_audit_log(records: Sequence[dict]) -> list[str]:
    """Chain integrity plus ordering safety: every completion follows its dependencies."""
    problems = verify_audit_records(records)
    deps = deps_from_audit(records)
    completed_at: dict[str, int] = {}
    for rec in records:
        if rec["status"] != "accepted":
            continue
        for _, name, args in rec["events"]:
            if name == COMPLETED:
                a = args["action"]
                if a in completed_at:
                    problems.append(f"action {a!r} completed twice")
                completed_at.setdefault(a, rec["seq"])
    for before, after in sorted(deps):
        if after in completed_at and completed_at.get(before, completed_at[after] + 1) >= completed_at[after]:
            problems.append(f"action {after!r} completed before its dependency {before!r}")
    return problems


# ---------------------------------------------------------------------------
# random scenarios


def random_plan(rng: random.Random, n_actions: int, n_agents: int, edge_prob: float = 0.35) -> Plan:
    """Random DAG over ``a0..a{n-1}`` (edges only go forward) with one done-flag per action."""
    ids = [f"a{i}" for i in range(n_actions)]
    agents = [f"agent{i}" for i in range(n_agents)]
    deps = [(ids[i], ids[j]) for j in range(n_actions) for i in range(j) if rng.random() < edge_prob]
    owners = {a: rng.choice(agents) for a in ids}
    use_power = {a: rng.random() < 0.5 for a in ids}
    dep_of = {a: [b for b, c in deps if c == a] for a in ids}
    doc = {
        "agents": agents,
        "predicates": ["power"] + [f"done_{a}" for a in ids],
        "actions": [
            {
                "id": a,
                "agent": owners[a],
                "precond": [f"!done_{a}"] + [f"done_{b}" for b in dep_of[a]] + (["power"] if use_power[a] else []),
                "effect": [f"done_{a}"],
            }
            for a in ids
        ],
        "deps": [list(d) for d in deps],
        "init": ["power"],
        "goal": [f"done_{a}" for a in ids],
    }
    return parse_plan(doc)


def _related(plan: Plan, a: str) -> set[str]:
    """Ancestors and descendants of ``a`` (including ``a``)."""
    seen = {a}
    for step in (plan.dep, plan.out):
        stack = [a]
        while stack:
            for b in step(stack.pop()):
                if b not in seen:
                    seen.add(b)
                    stack.append(b)
    return seen


def add_guard(plan: Plan, target: str, guard: str) -> Plan:
    """Require ``guard``'s effect in ``target``'s precondition without a dependency edge."""
    doc = plan_to_document(plan)
    for a in doc["actions"]:
        if a["id"] == target:
            a["precond"] = sorted(set(a["precond"]) | {f"done_{guard}"})
    return parse_plan(doc)


def random_scenario(
    seed: int,
    n_actions: int | None = None,
    n_agents: int | None = None,
    mode: str = "centralized",
    behavior: BehaviorKind | str = BehaviorKind.HONEST,
) -> tuple[Scenario, str | None]:
    """A seeded random scenario, optionally with one adversarial agent.

    Returns the scenario and the adversarial agent (``None`` when honest). Targets
    are chosen so that the deviation can actually occur: out-of-order and
    centralized ignore-precondition targets have dependencies, and decentralized
    ignore-precondition targets get a guard literal from an unrelated action.
    """
    rng = random.Random(seed)
    behavior = BehaviorKind(behavior)
    for _ in range(1000):
        n = n_actions if n_actions is not None else rng.randint(2, 10)
        k = n_agents if n_agents is not None else rng.randint(1, 4)
        plan = random_plan(rng, n, k)
        if behavior is BehaviorKind.HONEST:
            return Scenario(ScenarioConfig(mode=mode, seed=seed), plan), None
        candidates = list(plan.action_ids)
        guard = None
        if behavior is BehaviorKind.OUT_OF_ORDER or (
            behavior is BehaviorKind.IGNORE_PRECONDITION and mode == "centralized"
        ):
            candidates = [a for a in candidates if plan.dep(a)]
        if behavior is BehaviorKind.IGNORE_PRECONDITION and mode == "decentralized":
            pairs = [(a, g) for a in candidates for g in plan.action_ids if g not in _related(plan, a)]
            if not pairs:
                continue
            target, guard = rng.choice(pairs)
            plan = add_guard(plan, target, guard)
        elif not candidates:
            continue
        else:
            target = rng.choice(candidates)
        agent = plan.loc(target)
        cfg = ScenarioConfig(mode=mode, seed=seed, behaviors={agent: AgentBehavior(behavior, target)})
        return Scenario(cfg, plan), agent
    raise RuntimeError(f"no triggerable {behavior.value} scenario found for seed {seed}")

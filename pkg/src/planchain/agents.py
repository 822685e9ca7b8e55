"""Off-chain actors: the scheduler, device agents (honest or adversarial) and the oracle responder.

Adversaries act only through transactions signed with their own identity. Each
non-skip deviation is injected once; afterwards the agent behaves honestly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping

from .contracts import (
    EFFECT_READY,
    PRECOND_READY,
    Deployment,
    authenticity_tag,
    literals_hold,
)
from .ledger import Identity, Ledger, Receipt
from .plan import LocalPlan, Plan, PlanError
from .world import ExecResult, OutcomeScript, WorldState, execute_action, get_val, read_values


class BehaviorKind(str, Enum):
    HONEST = "honest"
    SKIP_ACTION = "skip-action"
    OUT_OF_ORDER = "out-of-order"
    IGNORE_PRECONDITION = "ignore-precondition"
    FALSE_COMPLETION = "false-completion"


@dataclass(frozen=True)
class AgentBehavior:
    kind: BehaviorKind = BehaviorKind.HONEST
    target: str | None = None

    @classmethod
    def from_document(cls, doc: Mapping[str, Any] | str) -> "AgentBehavior":
        if isinstance(doc, str):
            doc = {"kind": doc}
        kind = BehaviorKind(doc.get("kind", "honest"))
        target = doc.get("target")
        if kind is not BehaviorKind.HONEST and target is None:
            raise ValueError(f"behavior {kind.value!r} needs a target action")
        return cls(kind, None if target is None else str(target))

    def to_document(self) -> dict[str, Any]:
        if self.kind is BehaviorKind.HONEST:
            return {"kind": "honest"}
        return {"kind": self.kind.value, "target": self.target}

    @property
    def honest(self) -> bool:
        return self.kind is BehaviorKind.HONEST


HONEST = AgentBehavior()


def check_behavior(plan: Plan, agent: str, behavior: AgentBehavior) -> list[str]:
    if behavior.honest:
        return []
    try:
        owner = plan.loc(behavior.target)
    except PlanError:
        return [f"agent {agent!r}: behavior targets unknown action {behavior.target!r}"]
    if owner != agent:
        return [f"agent {agent!r}: behavior targets action {behavior.target!r} owned by {owner!r}"]
    return []


@dataclass
class Injection:
    """Ground-truth record of an adversarial deviation (never used for detection)."""

    agent: str
    kind: str
    action: str
    tick: int


def completed_actions(ledger: Ledger, deployment: Deployment) -> set[str]:
    done: set[str] = set()
    for address in deployment.agent_contracts.values():
        done.update(ledger.contract(address).state.completed_list)
    return done


class AgentRuntime:
    def __init__(
        self,
        identity: Identity,
        plan: Plan,
        behavior: AgentBehavior = HONEST,
        local_plan: LocalPlan | None = None,
        script: OutcomeScript | None = None,
    ):
        self.identity = identity
        self.plan = plan
        self.behavior = behavior
        self.local_plan = local_plan
        self.script = script or OutcomeScript()
        self.nonce = 0
        self.injected = False
        self.injections: list[Injection] = []

    @property
    def id(self) -> str:
        return self.identity.id

    def send(self, ledger: Ledger, target: str, op: str, **args) -> Receipt:
        tx = self.identity.sign(target, op, args, self.nonce)
        self.nonce += 1
        return ledger.submit(tx)

    def _targets(self, kind: BehaviorKind, action: str) -> bool:
        return self.behavior.kind is kind and self.behavior.target == action

    def _record(self, kind: BehaviorKind, action: str, tick: int, once: bool = True) -> None:
        if once and self.injected:
            return
        self.injected = True
        self.injections.append(Injection(self.id, kind.value, action, tick))

    # -- device side ----------------------------------------------------------

    def actuate(self, action: str, world: WorldState, tick: int = 0) -> ExecResult | None:
        """Handle an outbound execute request from the oracle. ``None`` means refused."""
        if self._targets(BehaviorKind.SKIP_ACTION, action):
            self._record(BehaviorKind.SKIP_ACTION, action, tick)
            return None
        return execute_action(world, self.plan.action(action), self.script)

    def precondition_holds(self, action: str, world: WorldState) -> bool:
        return all(get_val(world, lit.predicate) == lit.positive for lit in self.plan.action(action).precond)

    # -- centralized mode -----------------------------------------------------

    def tick_centralized(self, ledger: Ledger, deployment: Deployment, world: WorldState, tick: int = 0) -> list[Receipt]:
        """Honest device agents never transact in centralized mode; adversaries may."""
        receipt = inject_adversarial_tx(self, ledger, deployment, world, tick)
        return [receipt] if receipt is not None else []

    # -- decentralized mode ---------------------------------------------------

    def tick_decentralized(self, ledger: Ledger, deployment: Deployment, world: WorldState, tick: int = 0) -> list[Receipt]:
        receipts: list[Receipt] = []
        own = deployment.agent_contracts[self.id]
        if self.behavior.kind is BehaviorKind.FALSE_COMPLETION and not self.injected:
            receipt = inject_adversarial_tx(self, ledger, deployment, world, tick)
            if receipt is not None:
                receipts.append(receipt)

        for entry in self.local_plan.entries:
            a = entry.action
            contract = ledger.contract(own)
            phase = contract.phase(a, ledger.height)
            if phase in ("completed", "failed"):
                continue
            if not contract.eligible(a):
                if self._targets(BehaviorKind.OUT_OF_ORDER, a) and not self.injected:
                    self._record(BehaviorKind.OUT_OF_ORDER, a, tick)
                    receipts.append(self.send(ledger, own, "execute", action=a))
                continue
            if self._targets(BehaviorKind.SKIP_ACTION, a):
                self._record(BehaviorKind.SKIP_ACTION, a, tick)
                continue
            bypass = self._targets(BehaviorKind.IGNORE_PRECONDITION, a) and not self.injected
            if phase in ("idle", "stale"):
                if bypass or self.precondition_holds(a, world):
                    receipts.append(self.send(ledger, own, "execute", action=a))
            elif phase == PRECOND_READY:
                if literals_hold(contract.spec_of(a)["precond"], contract.reading(a)):
                    receipts.append(self.send(ledger, own, "execute", action=a))
                elif bypass:
                    self._record(BehaviorKind.IGNORE_PRECONDITION, a, tick)
                    receipts.append(self.send(ledger, own, "execute", action=a))
            elif phase == EFFECT_READY:
                r = self.send(ledger, own, "execute", action=a)
                receipts.append(r)
                if r.accepted and r.result == "completed":
                    receipts.extend(self.notify_completion(ledger, deployment, a))
                elif not r.accepted and r.reason == "effect":
                    receipts.append(self.send(ledger, own, "abort", action=a))
        return receipts

    def notify_completion(self, ledger: Ledger, deployment: Deployment, action: str) -> list[Receipt]:
        """Send ``update`` to the contracts hosting the actions that depend on ``action``."""
        own = deployment.agent_contracts[self.id]
        recipients = sorted({deployment.contract_of(self.plan, b) for b in self.plan.out(action)} - {own})
        return [self.send(ledger, addr, "update", action=action) for addr in recipients]


def inject_adversarial_tx(
    agent: AgentRuntime, ledger: Ledger, deployment: Deployment, world: WorldState, tick: int = 0
) -> Receipt | None:
    """Submit the agent's one-shot deviating transaction if its trigger condition holds now.

    Skip-action never produces a transaction; it is handled by :meth:`AgentRuntime.actuate`
    and the decentralized tick.
    """
    b = agent.behavior
    if b.honest or b.kind is BehaviorKind.SKIP_ACTION or agent.injected:
        return None
    plan, t = agent.plan, b.target
    done = completed_actions(ledger, deployment)
    if t in done:
        return None
    act = deployment.contract_of(plan, t)

    if b.kind is BehaviorKind.FALSE_COMPLETION:
        agent._record(b.kind, t, tick)
        if deployment.mode == "centralized":
            return agent.send(ledger, deployment.plan, "report_completion", action=t)
        recipients = sorted({deployment.contract_of(plan, x) for x in plan.out(t)} - {act}) or [act]
        receipts = [agent.send(ledger, addr, "update", action=t) for addr in recipients]
        return receipts[0]

    if deployment.mode != "centralized":
        return None
    if b.kind is BehaviorKind.OUT_OF_ORDER and not plan.dep(t) <= done:
        agent._record(b.kind, t, tick)
        return agent.send(ledger, act, "execute", action=t)
    if b.kind is BehaviorKind.IGNORE_PRECONDITION and not agent.precondition_holds(t, world):
        agent._record(b.kind, t, tick)
        return agent.send(ledger, act, "execute", action=t)
    return None


# ---------------------------------------------------------------------------


@dataclass
class SchedulerTick:
    verdict: str  # progress | idle | done | aborted
    action: str | None = None
    receipt: Receipt | None = None
    reason: str | None = None


class Scheduler:
    """Drives PlanSC with one ``dispatch_next`` transaction per tick."""

    def __init__(self, identity: Identity, plan_address: str, nonce: int = 0):
        self.identity = identity
        self.plan_address = plan_address
        self.nonce = nonce

    @property
    def id(self) -> str:
        return self.identity.id

    def send(self, ledger: Ledger, target: str, op: str, **args) -> Receipt:
        tx = self.identity.sign(target, op, args, self.nonce)
        self.nonce += 1
        return ledger.submit(tx)

    def tick(self, ledger: Ledger, abort_failed: bool = True) -> SchedulerTick:
        r = self.send(ledger, self.plan_address, "dispatch_next")
        if not r.accepted:
            action = next((e.args.get("action") for e in r.events if "action" in e.args), None)
            if abort_failed and action is not None:
                self.send(ledger, self.plan_address, "abort_action", action=action, reason=r.reason)
            return SchedulerTick("aborted", action, r, r.reason)
        verdict = r.result["verdict"]
        if verdict == "dispatched":
            return SchedulerTick("progress", r.result["action"], r)
        return SchedulerTick(verdict, None, r)


def scheduler_tick(ledger: Ledger, scheduler: Scheduler) -> SchedulerTick:
    return scheduler.tick(ledger, abort_failed=False)


def agent_tick_decentralized(agent: AgentRuntime, ledger: Ledger, deployment: Deployment, world: WorldState, tick: int = 0) -> list[Receipt]:
    return agent.tick_decentralized(ledger, deployment, world, tick)


# ---------------------------------------------------------------------------


class OracleResponder:
    """The trusted off-chain oracle: answers pending queries by reading or actuating devices."""

    def __init__(self, identity: Identity):
        self.identity = identity
        self.nonce = 0
        self.inflight: dict[int, ExecResult] = {}

    def callback(self, ledger: Ledger, oracle: str, query: int, values: dict) -> Receipt:
        tag = authenticity_tag(query, values)
        tx = self.identity.sign(oracle, "callback", {"query": query, "values": values, "tag": tag}, self.nonce)
        self.nonce += 1
        return ledger.submit(tx)

    def tick(
        self,
        ledger: Ledger,
        deployment: Deployment,
        world: WorldState,
        agents: Mapping[str, AgentRuntime],
        plan: Plan,
        tick: int = 0,
    ) -> list[Receipt]:
        receipts = []
        for qid, q in ledger.contract(deployment.oracle).pending_queries():
            if q["kind"] == "execute":
                result = self.inflight.get(qid)
                if result is None:
                    result = agents[plan.loc(q["action"])].actuate(q["action"], world, tick)
                    if result is None:
                        continue
                    self.inflight[qid] = result
                if world.step < result.step_completed:
                    continue
                del self.inflight[qid]
            values = read_values(world, q["predicates"])
            receipts.append(self.callback(ledger, deployment.oracle, qid, values))
        return receipts

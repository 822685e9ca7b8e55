"""Contract state machines for plan execution.

Centralized mode uses OracleSC, ActSC (one per agent), RegisterSC and PlanSC.
Decentralized mode replaces PlanSC/ActSC with one PlanActSC per agent.

Every action runs through the same three-transaction pipeline:

1. ``execute`` posts an oracle read of the precondition predicates;
2. once the reading is delivered, ``execute`` checks it, and on success asks the
   oracle to actuate the device and re-read the effect predicates;
3. once that reading is delivered, ``execute`` checks the effect and appends
   the action to the completed list.

A reading is only usable in the block right after its delivery; older readings
are refreshed with a new query instead of being trusted.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, Mapping

from .ledger import CallContext, Contract, encode_fields, register_contract
from .plan import Literal, Plan, format_literals

ROLLBACK = "Transaction_Rollback"
COMPLETED = "Action_Completed"
DEPLOYED = "logDeployedContract"
LIST_UPDATED = "completed_list_updated"

# pipeline phases
PRECOND_QUERY = "precond-query"
PRECOND_READY = "precond-ready"
EXEC_QUERY = "exec-query"
EFFECT_QUERY = "effect-query"
EFFECT_READY = "effect-ready"
_AWAITING = {PRECOND_QUERY, EXEC_QUERY, EFFECT_QUERY}
_READY = {PRECOND_READY, EFFECT_READY}


def authenticity_tag(query: int, values: Mapping[str, bool]) -> str:
    """Simulated oracle proof binding a response to its query id."""
    items = [(p, bool(v)) for p, v in sorted(values.items())]
    return hashlib.sha256(encode_fields("oracle-proof", query, items)).hexdigest()


def literals_hold(literals: list[str], values: Mapping[str, bool]) -> bool:
    for text in literals:
        lit = Literal.parse(text)
        if lit.predicate not in values or bool(values[lit.predicate]) != lit.positive:
            return False
    return True


def _predicates(literals: list[str]) -> list[str]:
    return sorted({Literal.parse(t).predicate for t in literals})


# ---------------------------------------------------------------------------


@dataclass
class OracleState:
    responder: str
    next_query: int = 0
    pending: dict[int, dict] = field(default_factory=dict)
    answered: set[int] = field(default_factory=set)


@register_contract
class OracleSC(Contract):
    kind = "OracleSC"

    @classmethod
    def construct(cls, ctx: CallContext, responder: str) -> OracleState:
        return OracleState(responder=responder)

    def op_query(self, ctx: CallContext, predicates: list, kind: str = "read", action: str | None = None, uri: str = ""):
        if not ctx.exists(ctx.sender):
            ctx.abort("auth")
        if kind not in ("read", "execute"):
            ctx.abort("bad-query")
        qid = self.state.next_query
        self.state.next_query += 1
        self.state.pending[qid] = {
            "requester": ctx.sender,
            "predicates": sorted(set(predicates)),
            "kind": kind,
            "action": action,
            "uri": uri,
        }
        ctx.emit("oracle_query", query=qid, requester=ctx.sender, kind=kind, action=action)
        return qid

    def op_callback(self, ctx: CallContext, query: int, values: dict, tag: str):
        st = self.state
        if ctx.sender != st.responder:
            ctx.abort("auth")
        if query in st.answered:
            ctx.abort("duplicate")
        if query not in st.pending:
            ctx.abort("unknown-query")
        if tag != authenticity_tag(query, values):
            ctx.abort("bad-proof")
        request = st.pending.pop(query)
        if sorted(values) != request["predicates"]:
            ctx.abort("bad-values")
        st.answered.add(query)
        ctx.emit("oracle_callback", query=query, values=values)
        ctx.call(request["requester"], "oracle_callback", query=query, values=values, tag=tag)
        return query

    def pending_queries(self) -> list[tuple[int, dict]]:
        return sorted(self.state.pending.items())


# ---------------------------------------------------------------------------


@dataclass
class RegisterState:
    deployer: str
    action_to_act: dict[str, str] = field(default_factory=dict)


@register_contract
class RegisterSC(Contract):
    kind = "RegisterSC"

    @classmethod
    def construct(cls, ctx: CallContext) -> RegisterState:
        return RegisterState(deployer=ctx.sender)

    def op_set_act(self, ctx: CallContext, actions: list, act: str):
        if ctx.sender != self.state.deployer:
            ctx.abort("auth")
        if not ctx.exists(act):
            ctx.abort("no-contract")
        taken = sorted(a for a in actions if a in self.state.action_to_act)
        if taken:
            ctx.abort("remap")
        for a in actions:
            self.state.action_to_act[str(a)] = act
        ctx.emit(DEPLOYED, tenant=act, s="new_contract_address")
        return act

    def op_get_act(self, ctx: CallContext, action: str):
        act = self.state.action_to_act.get(action)
        if act is None:
            ctx.abort("no-mapping")
        return act

    def lookup(self, action: str) -> str | None:
        return self.state.action_to_act.get(action)


# ---------------------------------------------------------------------------


@dataclass
class PipelineState:
    deployer: str
    oracle: str
    # action id -> {"uri", "precond", "effect"}
    actions: dict[str, dict]
    completed_list: list[str] = field(default_factory=list)
    attempts: dict[str, dict] = field(default_factory=dict)
    failed: set[str] = field(default_factory=set)


class _PipelineContract(Contract):
    """Shared precondition / actuation / effect pipeline of ActSC and PlanActSC."""

    def _advance(self, ctx: CallContext, action: str) -> str:
        st = self.state
        spec = st.actions[action]
        if action in st.completed_list:
            ctx.abort("duplicate", ROLLBACK, action=action)
        if action in st.failed:
            ctx.abort("failed", ROLLBACK, action=action)
        att = st.attempts.get(action)
        stale = att is not None and att["phase"] in _READY and att["block"] < ctx.block - 1

        if att is None or (stale and att["phase"] == PRECOND_READY):
            qid = ctx.call(st.oracle, "query", predicates=_predicates(spec["precond"]), kind="read", action=action)
            st.attempts[action] = {"phase": PRECOND_QUERY, "query": qid, "values": None, "block": None}
            ctx.emit("action_dispatched" if att is None else "reading_refreshed", action=action)
            return "dispatched"
        if stale:
            qid = ctx.call(st.oracle, "query", predicates=_predicates(spec["effect"]), kind="read", action=action)
            st.attempts[action] = {"phase": EFFECT_QUERY, "query": qid, "values": None, "block": None}
            ctx.emit("reading_refreshed", action=action)
            return "dispatched"
        if att["phase"] in _AWAITING:
            return "pending"
        if att["phase"] == PRECOND_READY:
            if not literals_hold(spec["precond"], att["values"]):
                ctx.abort("precond", ROLLBACK, action=action)
            qid = ctx.call(
                st.oracle, "query", predicates=_predicates(spec["effect"]),
                kind="execute", action=action, uri=spec["uri"],
            )
            st.attempts[action] = {"phase": EXEC_QUERY, "query": qid, "values": None, "block": None}
            ctx.emit("callAPI", action=action, uri=spec["uri"])
            return "executing"
        # EFFECT_READY
        if not literals_hold(spec["effect"], att["values"]):
            ctx.abort("effect", ROLLBACK, action=action)
        del st.attempts[action]
        st.completed_list.append(action)
        ctx.emit(COMPLETED, action=action)
        return "completed"

    def op_oracle_callback(self, ctx: CallContext, query: int, values: dict, tag: str):
        st = self.state
        if ctx.sender != st.oracle:
            ctx.abort("auth")
        for action, att in sorted(st.attempts.items()):
            if att["query"] == query and att["phase"] in _AWAITING:
                att["values"] = dict(values)
                att["block"] = ctx.block
                att["phase"] = PRECOND_READY if att["phase"] == PRECOND_QUERY else EFFECT_READY
                return action
        ctx.emit("orphan_callback", query=query)
        return None

    # -- read-only views ----------------------------------------------------

    def phase(self, action: str, block: int) -> str:
        """One of idle, awaiting, precond-ready, effect-ready, stale, completed, failed."""
        st = self.state
        if action in st.completed_list:
            return "completed"
        if action in st.failed:
            return "failed"
        att = st.attempts.get(action)
        if att is None:
            return "idle"
        if att["phase"] in _AWAITING:
            return "awaiting"
        if att["block"] < block - 1:
            return "stale"
        return att["phase"]

    def actionable(self, action: str, block: int) -> bool:
        return self.phase(action, block) in ("idle", "stale", PRECOND_READY, EFFECT_READY)

    def reading(self, action: str) -> dict | None:
        att = self.state.attempts.get(action)
        return None if att is None else att["values"]

    def spec_of(self, action: str) -> dict:
        return self.state.actions[action]


def _action_table(actions: list[dict]) -> dict[str, dict]:
    return {
        str(a["id"]): {
            "uri": a.get("uri", ""),
            "precond": sorted(a.get("precond", [])),
            "effect": sorted(a.get("effect", [])),
        }
        for a in actions
    }


@dataclass
class ActState(PipelineState):
    dispatcher: str | None = None


@register_contract
class ActSC(_PipelineContract):
    kind = "ActSC"

    @classmethod
    def construct(cls, ctx: CallContext, oracle: str, actions: list) -> ActState:
        if not ctx.exists(oracle):
            ctx.abort("no-contract")
        return ActState(deployer=ctx.sender, oracle=oracle, actions=_action_table(actions))

    def op_set_dispatcher(self, ctx: CallContext, dispatcher: str):
        if ctx.sender != self.state.deployer or self.state.dispatcher is not None:
            ctx.abort("auth")
        self.state.dispatcher = dispatcher
        return dispatcher

    def op_execute(self, ctx: CallContext, action: str):
        if action not in self.state.actions:
            ctx.abort("unknown-action", ROLLBACK, action=action)
        if self.state.dispatcher is None or ctx.sender != self.state.dispatcher:
            ctx.abort("auth", ROLLBACK, action=action)
        return self._advance(ctx, action)

    def op_cancel(self, ctx: CallContext, action: str):
        if ctx.sender != self.state.dispatcher:
            ctx.abort("auth")
        self.state.attempts.pop(action, None)
        self.state.failed.add(action)
        return action

    def op_get_completed_list(self, ctx: CallContext):
        return list(self.state.completed_list)


# ---------------------------------------------------------------------------


@dataclass
class PlanState:
    dag: list[list[str]]
    action_count: int
    completed_list_length: int = 0
    register: str = ""
    scheduler: str = ""
    observed: list[str] = field(default_factory=list)
    failed: set[str] = field(default_factory=set)


def plan_init(plan: Plan) -> PlanState:
    """Build the list-of-lists plan representation: one row ``[a, *dep(a)]`` per action."""
    dag = [[a, *plan.ordered(plan.dep(a))] for a in plan.action_ids]
    return PlanState(dag=dag, action_count=len(dag))


@register_contract
class PlanSC(Contract):
    kind = "PlanSC"

    @classmethod
    def construct(cls, ctx: CallContext, dag: list, register: str) -> PlanState:
        heads = [row[0] for row in dag if row]
        if len(heads) != len(dag) or len(set(heads)) != len(heads):
            ctx.abort("bad-plan")
        if any(t not in heads for row in dag for t in row[1:]):
            ctx.abort("bad-plan")
        if not ctx.exists(register):
            ctx.abort("no-contract")
        return PlanState(
            dag=[[str(x) for x in row] for row in dag],
            action_count=len(dag),
            register=register,
            scheduler=ctx.sender,
        )

    def op_dispatch_next(self, ctx: CallContext):
        st = self.state
        if st.completed_list_length == st.action_count:
            return {"verdict": "done"}
        for row in st.dag:
            if len(row) != 1 or row[0] in st.failed:
                continue
            head = row[0]
            act = ctx.call(st.register, "get_act", action=head)
            if not ctx.view(act).actionable(head, ctx.block):
                continue
            step = ctx.call(act, "execute", action=head)
            if step == "completed":
                self._mark_completed(ctx, head)
            return {"verdict": "dispatched", "action": head, "step": step}
        return {"verdict": "idle"}

    def op_report_completion(self, ctx: CallContext, action: str):
        act = ctx.call(self.state.register, "get_act", action=action)
        if action not in ctx.view(act).state.completed_list:
            ctx.abort("false-completion", "completion_rejected", action=action, sender=ctx.sender)
        if action not in self.state.observed:
            self._mark_completed(ctx, action)
        return action

    def op_abort_action(self, ctx: CallContext, action: str, reason: str = ""):
        st = self.state
        if ctx.sender != st.scheduler:
            ctx.abort("auth")
        row = next((r for r in st.dag if r and r[0] == action), None)
        if row is None or len(row) != 1 or action in st.failed:
            ctx.abort("not-dispatchable")
        act = ctx.call(st.register, "get_act", action=action)
        ctx.call(act, "cancel", action=action)
        st.failed.add(action)
        row.clear()
        ctx.emit("plan_abort", action=action, reason=reason)
        return action

    def _mark_completed(self, ctx: CallContext, action: str) -> None:
        st = self.state
        for row in st.dag:
            while action in row:
                row.remove(action)
        st.observed.append(action)
        st.completed_list_length = len(st.observed)
        ctx.emit(LIST_UPDATED, list=list(st.observed))

    def is_done(self) -> bool:
        return self.state.completed_list_length == self.state.action_count


# ---------------------------------------------------------------------------


@dataclass
class PlanActState(PipelineState):
    owner: str = ""
    register: str | None = None
    # action id -> {"in": [...], "out": [...]}
    entries: dict[str, dict] = field(default_factory=dict)
    local_completed: set[str] = field(default_factory=set)


@register_contract
class PlanActSC(_PipelineContract):
    kind = "PlanActSC"

    @classmethod
    def construct(cls, ctx: CallContext, owner: str, oracle: str, entries: list) -> PlanActState:
        if not ctx.exists(oracle):
            ctx.abort("no-contract")
        return PlanActState(
            deployer=ctx.sender,
            oracle=oracle,
            actions=_action_table(entries),
            owner=owner,
            entries={
                str(e["id"]): {"in": sorted(e.get("in", [])), "out": sorted(e.get("out", []))}
                for e in entries
            },
        )

    def op_set_register(self, ctx: CallContext, register: str):
        if ctx.sender != self.state.deployer or self.state.register is not None:
            ctx.abort("auth")
        self.state.register = register
        return register

    def op_execute(self, ctx: CallContext, action: str):
        st = self.state
        if action not in st.entries:
            ctx.abort("unknown-action", ROLLBACK, action=action)
        if ctx.sender != st.owner:
            ctx.abort("auth", ROLLBACK, action=action)
        if not set(st.entries[action]["in"]) <= st.local_completed:
            ctx.abort("order", ROLLBACK, action=action)
        step = self._advance(ctx, action)
        if step == "completed":
            st.local_completed.add(action)
            ctx.emit(LIST_UPDATED, list=list(st.completed_list))
            self._announce_enabled(ctx, action)
        return step

    def op_update(self, ctx: CallContext, action: str):
        st = self.state
        if st.register is None:
            ctx.abort("no-register")
        host = ctx.call(st.register, "get_act", action=action)
        host_state = ctx.view(host).state
        if ctx.sender not in (host_state.owner, host):
            ctx.abort("auth", "completion_rejected", action=action, sender=ctx.sender)
        if action not in host_state.completed_list:
            ctx.abort("false-completion", "completion_rejected", action=action, sender=ctx.sender)
        if action in st.local_completed:
            return []
        st.local_completed.add(action)
        ctx.emit("update_received", action=action, sender=ctx.sender)
        return self._announce_enabled(ctx, action)

    def op_abort(self, ctx: CallContext, action: str):
        st = self.state
        if ctx.sender != st.owner:
            ctx.abort("auth")
        if action not in st.entries or action in st.completed_list:
            ctx.abort("unknown-action")
        st.attempts.pop(action, None)
        st.failed.add(action)
        ctx.emit("plan_abort", action=action)
        return action

    def _announce_enabled(self, ctx: CallContext, completed: str) -> list[str]:
        st = self.state
        enabled = []
        for a, entry in sorted(st.entries.items()):
            if completed in entry["in"] and set(entry["in"]) <= st.local_completed:
                if a not in st.completed_list:
                    enabled.append(a)
                    ctx.emit("action_enabled", action=a)
        return enabled

    def eligible(self, action: str) -> bool:
        return set(self.state.entries[action]["in"]) <= self.state.local_completed


# ---------------------------------------------------------------------------


@dataclass
class Deployment:
    """Addresses produced by the deployment sequence."""

    mode: str
    oracle: str
    register: str
    plan: str | None = None
    # agent id -> ActSC (centralized) or PlanActSC (decentralized) address
    agent_contracts: dict[str, str] = field(default_factory=dict)

    def contract_of(self, plan: Plan, action: str) -> str:
        return self.agent_contracts[plan.loc(action)]


def action_args(plan: Plan, action_id: str) -> dict[str, Any]:
    a = plan.action(action_id)
    return {
        "id": a.id,
        "uri": f"sim://{a.agent}/{a.id}",
        "precond": format_literals(a.precond),
        "effect": format_literals(a.effect),
    }

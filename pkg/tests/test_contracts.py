import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import plans
from planchain.contracts import COMPLETED, DEPLOYED, LIST_UPDATED, ROLLBACK, authenticity_tag, plan_init
from planchain.harness import Scenario, ScenarioConfig, Simulation
from planchain.ledger import DEPLOY, Identity
from planchain.plan import parse_plan
from planchain.world import Outcome, OutcomeKind, OutcomeScript, parse_literals


def sim(plan, mode="centralized", script=None, **cfg):
    return Simulation(Scenario(ScenarioConfig(mode=mode, **cfg), plan, script or OutcomeScript()))


def respond(s):
    s.oracle.tick(s.ledger, s.deployment, s.world, s.agents, s.plan)


def dispatch(s):
    r = s.scheduler.send(s.ledger, s.deployment.plan, "dispatch_next")
    respond(s)
    s.ledger.seal_block()
    return r


def names(receipt):
    return [e.name for e in receipt.events]


# -- plan_init -----------------------------------------------------------------


def test_plan_init_six_action(six_action):
    st_ = plan_init(six_action)
    assert st_.dag == [["1"], ["2"], ["3", "1"], ["4", "2"], ["5", "2", "3"], ["6", "5"]]
    assert st_.action_count == 6


def test_plan_init_seven_action_and_empty(seven_action):
    assert ["e", "c", "d"] in plan_init(seven_action).dag
    empty = parse_plan({"agents": [], "predicates": [], "actions": [], "deps": [], "init": [], "goal": []})
    assert plan_init(empty).dag == [] and plan_init(empty).action_count == 0


# -- register ------------------------------------------------------------------


def test_register(six_action):
    s = sim(six_action)
    reg = s.ledger.contract(s.deployment.register)
    acts = s.deployment.agent_contracts
    assert reg.lookup("3") == acts["Agent1"]
    assert reg.lookup("4") == acts["Agent2"] != acts["Agent1"]
    deploy = s.scheduler.send(s.ledger, s.deployment.register, "get_act", action="99")
    assert deploy.reason == "no-mapping"


def test_register_events_and_remap(six_action):
    s = sim(six_action)
    logs = s.ledger.query_events(s.deployment.register, DEPLOYED)
    assert len(logs) == 2 and logs[0].args["s"] == "new_contract_address"
    act = s.deployment.agent_contracts["Agent2"]
    r = s.scheduler.send(s.ledger, s.deployment.register, "set_act", actions=["1"], act=act)
    assert r.reason == "remap"
    assert s.ledger.contract(s.deployment.register).lookup("1") == s.deployment.agent_contracts["Agent1"]


def test_register_set_act_is_deployer_only(six_action):
    s = sim(six_action)
    agent = s.agents["Agent2"]
    r = agent.send(s.ledger, s.deployment.register, "set_act", actions=["7"], act=s.deployment.agent_contracts["Agent2"])
    assert r.reason == "auth"


def test_register_accepts_new_mapping():
    ledger_sim = sim(parse_plan({"agents": ["A"], "predicates": [], "actions": [], "deps": [], "init": [], "goal": []}))
    s = ledger_sim
    send = s.scheduler.send
    oracle = s.deployment.oracle
    a1 = send(s.ledger, "", DEPLOY, contract="ActSC", args={"oracle": oracle, "actions": [{"id": "1"}]}).result
    a2 = send(s.ledger, "", DEPLOY, contract="ActSC", args={"oracle": oracle, "actions": [{"id": "2"}]}).result
    r = send(s.ledger, s.deployment.register, "set_act", actions=["1"], act=a1)
    assert r.accepted and names(r) == [DEPLOYED]
    send(s.ledger, s.deployment.register, "set_act", actions=["2"], act=a2)
    reg = s.ledger.contract(s.deployment.register)
    assert reg.lookup("1") == a1 and reg.lookup("2") == a2


# -- dispatch ------------------------------------------------------------------


def test_dispatch_step_sequence(six_action):
    s = sim(six_action)
    first = dispatch(s)
    assert first.result == {"verdict": "dispatched", "action": "1", "step": "dispatched"}
    second = dispatch(s)
    assert second.result["step"] == "executing" and "callAPI" in names(second)
    third = dispatch(s)
    assert third.result["step"] == "completed"
    assert COMPLETED in names(third) and LIST_UPDATED in names(third)
    assert s.ledger.contract(s.deployment.agent_contracts["Agent1"]).state.completed_list == ["1"]


def test_dispatch_order_and_done(six_action, expected_trace):
    s = sim(six_action)
    order = []
    for _ in range(40):
        r = dispatch(s)
        if r.result["verdict"] == "done":
            break
        if r.result.get("step") == "completed":
            order.append(r.result["action"])
    assert order == expected_trace["dispatch_order"]
    assert dispatch(s).result == {"verdict": "done"}
    assert len(s.ledger.query_events(name=COMPLETED)) == 6


def test_dispatch_empty_plan_done():
    empty = parse_plan({"agents": [], "predicates": [], "actions": [], "deps": [], "init": [], "goal": []})
    s = sim(empty)
    assert dispatch(s).result == {"verdict": "done"}


def test_failed_root_leaves_plan_idle(six_action):
    s = sim(six_action, script=OutcomeScript({"1": Outcome(OutcomeKind.FAIL)}))
    verdicts = [dispatch(s) for _ in range(8)]
    rejected = [r for r in verdicts if not r.accepted]
    assert rejected and rejected[0].reason == "effect"
    assert any(e.name == ROLLBACK and e.args["action"] == "1" for e in rejected[0].events)
    s.scheduler.send(s.ledger, s.deployment.plan, "abort_action", action="1", reason="effect")
    done = set()
    for _ in range(12):
        r = dispatch(s)
        if r.accepted and r.result.get("step") == "completed":
            done.add(r.result["action"])
    assert done == {"2", "4"}
    assert dispatch(s).result == {"verdict": "idle"}


def test_precondition_false_rolls_back(six_action):
    s = sim(six_action)
    s.world.values["precond1_0"] = False
    dispatch(s)
    before = s.ledger.state_digest()
    world_before = dict(s.world.values)
    r = dispatch(s)
    assert r.reason == "precond"
    assert [e.args for e in r.events if e.name == ROLLBACK] == [{"action": "1"}]
    assert s.ledger.state_digest() == before
    assert s.world.values == world_before


def test_partial_effect_aborts():
    plan = parse_plan(
        {
            "agents": ["A"],
            "predicates": ["p", "q"],
            "actions": [{"id": "x", "agent": "A", "precond": [], "effect": ["p", "q"]}],
            "deps": [],
            "init": [],
            "goal": [],
        }
    )
    s = sim(plan, script=OutcomeScript({"x": Outcome(OutcomeKind.PARTIAL, parse_literals(["p"]))}))
    results = [dispatch(s) for _ in range(3)]
    assert results[-1].reason == "effect"
    assert s.ledger.contract(s.deployment.agent_contracts["A"]).state.completed_list == []


def test_direct_execute_needs_dispatcher(six_action):
    s = sim(six_action)
    r = s.agents["Agent1"].send(s.ledger, s.deployment.agent_contracts["Agent1"], "execute", action="1")
    assert r.reason == "auth"
    r = s.scheduler.send(s.ledger, s.deployment.agent_contracts["Agent1"], "execute", action="1")
    assert r.reason == "auth"


def test_stale_reading_refreshed(six_action):
    s = sim(six_action)
    dispatch(s)
    for _ in range(3):
        s.ledger.seal_block()
    r = dispatch(s)
    assert r.result["step"] == "dispatched" and "reading_refreshed" in names(r)


# -- oracle --------------------------------------------------------------------


def test_oracle_delivers_reading(seven_action):
    s = sim(seven_action)
    dispatch(s)
    calls = s.ledger.query_events(s.deployment.oracle, "oracle_callback")
    assert calls[0].args["values"] == {"atA": True}


def test_oracle_callback_auth_and_once(seven_action):
    s = sim(seven_action)
    s.scheduler.send(s.ledger, s.deployment.plan, "dispatch_next")
    (qid, _), = s.ledger.contract(s.deployment.oracle).pending_queries()
    values = {"atA": True}
    agent = s.agents["Agent1"]
    before = s.ledger.state_digest()
    r = agent.send(s.ledger, s.deployment.oracle, "callback", query=qid, values=values, tag=authenticity_tag(qid, values))
    assert r.reason == "auth" and s.ledger.state_digest() == before
    forged = {"query": qid, "values": values, "tag": "0" * 64}
    r = s.ledger.submit(s.oracle_identity.sign(s.deployment.oracle, "callback", forged, s.oracle.nonce))
    s.oracle.nonce += 1
    assert r.reason == "bad-proof"
    assert s.oracle.callback(s.ledger, s.deployment.oracle, qid, values).accepted
    assert s.oracle.callback(s.ledger, s.deployment.oracle, qid, values).reason == "duplicate"
    assert s.oracle.callback(s.ledger, s.deployment.oracle, 77, values).reason == "unknown-query"


def test_oracle_queries_need_contract(seven_action):
    s = sim(seven_action)
    r = s.agents["Agent1"].send(s.ledger, s.deployment.oracle, "query", predicates=["atA"])
    assert r.reason == "auth"


# -- decentralized update -------------------------------------------------------


def run_until(s, done, limit=60):
    for _ in range(limit):
        if done <= s.completed():
            return
        s.tick()
    raise AssertionError(f"did not complete {done}")


def test_updates_enable_e(seven_action):
    s = sim(seven_action, mode="decentralized")
    host = s.ledger.contract(s.deployment.agent_contracts["Agent2"])
    run_until(s, {"c"})
    if not {"c", "d"} <= s.completed():
        assert not host.eligible("e")
    run_until(s, {"c", "d"})
    assert host.eligible("e")
    enabled = s.ledger.query_events(host.address, "action_enabled")
    assert any(e.args["action"] == "e" for e in enabled)


def test_duplicate_update_is_idempotent(seven_action):
    s = sim(seven_action, mode="decentralized")
    run_until(s, {"d"})
    host = s.deployment.agent_contracts["Agent2"]
    before = s.ledger.state_digest()
    r = s.agents["Agent1"].send(s.ledger, host, "update", action="d")
    assert r.accepted and r.result == []
    assert s.ledger.state_digest() == before


def test_update_without_completion_rejected(seven_action):
    s = sim(seven_action, mode="decentralized")
    agent2 = s.agents["Agent2"]
    for target in ("Agent1", "Agent3"):
        r = agent2.send(s.ledger, s.deployment.agent_contracts[target], "update", action="e")
        assert r.reason == "false-completion"
        assert names(r) == ["completion_rejected"]


def test_update_from_non_owner_rejected(seven_action):
    s = sim(seven_action, mode="decentralized")
    run_until(s, {"a"})
    r = s.agents["Agent3"].send(s.ledger, s.deployment.agent_contracts["Agent2"], "update", action="a")
    assert r.reason == "auth"


def test_execute_gated_on_in_set(seven_action):
    s = sim(seven_action, mode="decentralized")
    r = s.agents["Agent2"].send(s.ledger, s.deployment.agent_contracts["Agent2"], "execute", action="e")
    assert r.reason == "order"
    r = s.agents["Agent1"].send(s.ledger, s.deployment.agent_contracts["Agent2"], "execute", action="b")
    assert r.reason == "auth"


# -- invariants over random plans -----------------------------------------------


def _completion_records(s):
    return [(r.seq, r.sender, r.op, e.args["action"]) for r in s.ledger.receipts if r.accepted for e in r.events if e.name == COMPLETED]


@settings(max_examples=40, deadline=None)
@given(plans, st.sampled_from(["centralized", "decentralized"]), st.integers(0, 50))
def test_contract_invariants(plan, mode, seed):
    s = sim(plan, mode=mode, seed=seed)
    report = s.run()
    assert report.terminal == "done"
    records = _completion_records(s)
    # one completion per action, never twice
    assert sorted(a for *_, a in records) == sorted(plan.action_ids)
    pos = {a: seq for seq, *_, a in records}
    for before, after in plan.deps:
        assert pos[before] < pos[after]
    for seq, sender, op, action in records:
        if mode == "centralized":
            assert (sender, op) == ("deployer", "dispatch_next")
        else:
            assert (sender, op) == (plan.loc(action), "execute")
        assert all(lit.holds(s.world.values) for lit in plan.action(action).effect)
    # the scheduler never dispatched an action after it completed
    if mode == "centralized":
        dispatched_after = [
            r for r in s.ledger.receipts
            if r.op == "dispatch_next" and r.accepted and r.result.get("action") in pos and r.seq > pos[r.result["action"]]
        ]
        assert dispatched_after == []


@settings(max_examples=40, deadline=None)
@given(plans, st.integers(0, 20))
def test_rejections_never_change_state(plan, seed):
    s = sim(plan, mode="decentralized", seed=seed)
    original = s.ledger.submit
    checked = []

    def guarded(tx):
        before = s.ledger.state_digest()
        r = original(tx)
        if not r.accepted:
            assert s.ledger.state_digest() == before
            checked.append(r)
        return r

    s.ledger.submit = guarded
    for agent in plan.agents:
        for a in plan.action_ids:
            s.agents[agent].send(s.ledger, s.deployment.contract_of(plan, a), "update", action=a)
    s.run()

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import plans
from planchain.plan import ActionSpec, parse_literals, parse_plan
from planchain.world import (
    Outcome,
    OutcomeKind,
    OutcomeScript,
    WorldError,
    advance,
    execute_action,
    fault_script_to_document,
    get_val,
    init_world,
    parse_fault_script,
    read_values,
)


def small_plan(init=("atA",)):
    return parse_plan(
        {
            "agents": ["A"],
            "predicates": ["atA", "atB", "atC"],
            "actions": [{"id": "a", "agent": "A", "precond": ["atA"], "effect": ["atB", "!atA"]},
                        {"id": "b", "agent": "A", "precond": [], "effect": ["atB", "atC"]}],
            "deps": [],
            "init": list(init),
            "goal": [],
        }
    )


def test_init_seven_action(seven_action):
    w = init_world(seven_action)
    assert w.values["atA"] is True
    assert not any(v for p, v in w.values.items() if p != "atA")


def test_init_empty_and_idempotent():
    empty = parse_plan({"agents": [], "predicates": [], "actions": [], "deps": [], "init": [], "goal": []})
    assert init_world(empty).values == {}
    w = init_world(small_plan(init=("atA", "atA")))
    assert w.values == {"atA": True, "atB": False, "atC": False}


def test_get_val():
    w = init_world(small_plan())
    assert get_val(w, "atA") is True
    assert get_val(w, "atB") is False
    with pytest.raises(WorldError):
        get_val(w, "nope")


def test_nominal_sets_then_clears():
    plan = small_plan()
    w = init_world(plan)
    r = execute_action(w, plan.action("a"), OutcomeScript())
    assert r.succeeded
    assert w.values == {"atA": False, "atB": True, "atC": False}


def test_fail_leaves_world_alone():
    plan = small_plan()
    w = init_world(plan)
    before = dict(w.values)
    r = execute_action(w, plan.action("a"), OutcomeScript({"a": Outcome(OutcomeKind.FAIL)}))
    assert not r.succeeded and w.values == before


def test_partial_applies_subset():
    plan = small_plan()
    w = init_world(plan)
    script = OutcomeScript({"b": Outcome(OutcomeKind.PARTIAL, parse_literals(["atB"]))})
    assert execute_action(w, plan.action("b"), script).succeeded
    assert w.values["atB"] and not w.values["atC"]


def test_delay():
    plan = small_plan()
    w = init_world(plan)
    r = execute_action(w, plan.action("b"), OutcomeScript({"b": Outcome(OutcomeKind.DELAY, steps=2)}))
    assert r.step_completed == w.step + 2
    assert not w.values["atC"]
    advance(w)
    assert not w.values["atC"]
    advance(w)
    assert w.values["atC"] and w.pending == []


def test_unknown_action():
    w = init_world(small_plan())
    with pytest.raises(WorldError):
        execute_action(w, ActionSpec("zz", "A"), OutcomeScript())


def test_precondition_not_checked_here():
    plan = small_plan(init=())
    w = init_world(plan)
    assert execute_action(w, plan.action("a"), OutcomeScript()).succeeded
    assert w.values["atB"]


def test_fault_script_parsing():
    plan = small_plan()
    script = parse_fault_script({"a": {"kind": "fail"}, "b": {"kind": "partial", "effects": ["atB"]}}, plan)
    assert script.for_action("a").kind is OutcomeKind.FAIL
    assert script.for_action("zz").kind is OutcomeKind.NOMINAL
    assert parse_fault_script(fault_script_to_document(script), plan) == script


def test_fault_script_errors_collected():
    with pytest.raises(ValueError) as err:
        parse_fault_script(
            {"zz": {"kind": "fail"}, "a": {"kind": "melt"}, "b": {"kind": "partial", "effects": ["atA"]}},
            small_plan(),
        )
    msg = str(err.value)
    assert "zz" in msg and "melt" in msg and "subset" in msg


outcomes = st.one_of(
    st.just(Outcome()),
    st.just(Outcome(OutcomeKind.FAIL)),
    st.integers(0, 3).map(lambda n: Outcome(OutcomeKind.DELAY, steps=n)),
)


@settings(max_examples=150, deadline=None)
@given(plans, st.data())
def test_frame_property(plan, data):
    if not plan.actions:
        return
    action = plan.action(data.draw(st.sampled_from(plan.action_ids)))
    outcome = data.draw(outcomes)
    w = init_world(plan)
    before = dict(w.values)
    execute_action(w, action, OutcomeScript({action.id: outcome}))
    advance(w, 4)
    touched = {lit.predicate for lit in action.effect}
    for p, v in w.values.items():
        if p not in touched:
            assert v == before[p]


@settings(max_examples=100, deadline=None)
@given(plans, st.data())
def test_reads_are_pure(plan, data):
    w = init_world(plan)
    preds = data.draw(st.lists(st.sampled_from(plan.predicates))) if plan.predicates else []
    assert read_values(w, preds) == read_values(w, preds)
    assert w.step == 0


@settings(max_examples=150, deadline=None)
@given(plans, st.data())
def test_nominal_establishes_effect(plan, data):
    if not plan.actions:
        return
    action = plan.action(data.draw(st.sampled_from(plan.action_ids)))
    w = init_world(plan)
    for lit in action.precond:
        w.values[lit.predicate] = lit.positive
    execute_action(w, action, OutcomeScript())
    assert all(lit.holds(w.values) for lit in action.effect)

import json
from pathlib import Path

import pytest
from hypothesis import strategies as st

from planchain.harness import bundled_scenario
from planchain.plan import load_plan, parse_plan

DATA = Path(__file__).parent / "data"


@pytest.fixture
def seven_action():
    return load_plan(bundled_scenario("fig2_plan"))


@pytest.fixture
def six_action():
    return load_plan(bundled_scenario("appendix_plan"))


@pytest.fixture
def expected_trace():
    return json.loads((DATA / "appendix_expected_trace.json").read_text())


def chain_plan(n=3, agents=("A", "B")):
    """a0 -> a1 -> ... with done flags, owners alternating."""
    ids = [f"a{i}" for i in range(n)]
    return parse_plan(
        {
            "agents": list(agents),
            "predicates": [f"done_{a}" for a in ids],
            "actions": [
                {
                    "id": a,
                    "agent": agents[i % len(agents)],
                    "precond": [f"!done_{a}"] + ([f"done_{ids[i - 1]}"] if i else []),
                    "effect": [f"done_{a}"],
                }
                for i, a in enumerate(ids)
            ],
            "deps": [[ids[i], ids[i + 1]] for i in range(n - 1)],
            "init": [],
            "goal": [f"done_{a}" for a in ids],
        }
    )


@st.composite
def plan_documents(draw, max_actions=8, max_agents=3):
    """Random acyclic plan documents: edges only point from lower to higher index."""
    n = draw(st.integers(1, max_actions))
    k = draw(st.integers(1, max_agents))
    ids = [f"a{i}" for i in range(n)]
    agents = [f"g{i}" for i in range(k)]
    pairs = [(ids[i], ids[j]) for j in range(n) for i in range(j)]
    deps = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs))) if pairs else []
    owners = draw(st.lists(st.sampled_from(agents), min_size=n, max_size=n))
    return {
        "agents": agents,
        "predicates": [f"done_{a}" for a in ids],
        "actions": [
            {
                "id": a,
                "agent": owners[i],
                "precond": [f"!done_{a}"] + sorted(f"done_{b}" for b, c in deps if c == a),
                "effect": [f"done_{a}"],
            }
            for i, a in enumerate(ids)
        ],
        "deps": [list(d) for d in deps],
        "init": [],
        "goal": [f"done_{a}" for a in ids],
    }


plans = plan_documents().map(parse_plan)


# -- acceptance summary ---------------------------------------------------------

ACCEPTANCE: list[tuple[str, bool, str]] = []


def record(criterion: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}" + (f": {detail}" if detail else "")
    ACCEPTANCE.append((criterion, ok, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, _, line in ACCEPTANCE:
            terminalreporter.write_line(line)

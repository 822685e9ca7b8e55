"""Three agents share the seven-action plan with no central scheduler.

Every agent runs its own contract. It only executes an action once the
dependencies arrive as ``update`` calls, and each of those calls is checked
against the ledger.
"""

from planchain.harness import Simulation, bundled_scenario, emit_report, load_scenario
from planchain.plan import derive_local_plans

scenario = load_scenario(bundled_scenario("fig2_honest")).with_config(mode="decentralized")

for agent, local in derive_local_plans(scenario.plan).items():
    print(agent)
    for e in local.entries:
        print(f"   In={sorted(e.in_set)!s:12} {e.action}  Out={sorted(e.out_set)}")
print()

sim = Simulation(scenario)
report = sim.run()
print(emit_report(report))

print("update traffic:")
owner = {addr: agent for agent, addr in sim.deployment.agent_contracts.items()}
for r in sim.ledger.receipts:
    if r.op == "update":
        print(f"  seq {r.seq:3d}: {r.sender} -> {owner[r.target]}  ({r.status})")

"""Each misbehaviour, in both modes, and what the ledger makes of it.

The adversary only ever signs its own transactions. Detection never looks at
the behaviour configuration. It reads rejected receipts and stalls off the
chain and attributes them to whoever is responsible.
"""

from planchain.harness import bundled_scenario, load_scenario, random_scenario, run_scenario

print("bundled stories")
for name in ["fig2_outoforder_e", "fig2_falsecompletion_e", "kitchen_ignore_precondition", "appendix_skip_1"]:
    report = run_scenario(load_scenario(bundled_scenario(name)))
    found = ", ".join(f"{v.agent}:{v.kind}@{v.action}" for v in report.violations)
    print(f"  {name:30s} {report.terminal:8s} {found}")

print("\nrandom plans, seed 11")
for mode in ["centralized", "decentralized"]:
    for behavior in ["skip-action", "out-of-order", "ignore-precondition", "false-completion"]:
        scenario, adversary = random_scenario(11, mode=mode, behavior=behavior)
        report = run_scenario(scenario)
        kinds = sorted({v.kind for v in report.violations})
        print(
            f"  {mode:13s} {behavior:20s} adversary {adversary:7s} "
            f"-> blamed {sorted(report.violators)} via {kinds}, {len(report.completed)}/{len(scenario.plan.actions)} done"
        )

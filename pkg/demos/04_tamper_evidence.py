"""Export an audit log, check it offline, then doctor it and watch the check fail."""

import json
import tempfile
from pathlib import Path

from planchain.harness import bundled_scenario, load_scenario, read_audit_log, run_scenario, verify_audit_log

report = run_scenario(load_scenario(bundled_scenario("fig2_honest")))
log = Path(tempfile.mkdtemp()) / "audit.jsonl"
log.write_text("".join(json.dumps(r) + "\n" for r in report.receipts))
print(f"{len(report.receipts)} receipts written to {log}")
print("problems in the clean log:", verify_audit_log(read_audit_log(log)) or "none")

records = read_audit_log(log)
victim = next(r for r in records if any(e[1] == "Action_Completed" for e in r["events"]))
victim["status"] = "rejected"
print(f"\nflipping receipt {victim['seq']} from accepted to rejected")
for p in verify_audit_log(records):
    print("  ", p)

records = read_audit_log(log)
completions = [e for r in records for e in r["events"] if e[1] == "Action_Completed"]
completions[0][2]["action"], completions[-1][2]["action"] = completions[-1][2]["action"], completions[0][2]["action"]
print("\nswapping the first and last completion records")
for p in verify_audit_log(records):
    print("  ", p)

"""Smart-contract supervised execution of partial-order plans on a simulated ledger."""

from .agents import AgentBehavior, BehaviorKind
from .harness import (
    RunReport,
    Scenario,
    ScenarioConfig,
    ScenarioError,
    Violation,
    emit_report,
    load_scenario,
    parse_report,
    random_scenario,
    run_scenario,
    verify_audit_log,
)
from .ledger import Ledger
from .plan import Plan, PlanError, load_plan, parse_plan, validate_plan
from .world import OutcomeScript, parse_fault_script

__all__ = [
    "AgentBehavior",
    "BehaviorKind",
    "Ledger",
    "OutcomeScript",
    "Plan",
    "PlanError",
    "RunReport",
    "Scenario",
    "ScenarioConfig",
    "ScenarioError",
    "Violation",
    "emit_report",
    "load_plan",
    "load_scenario",
    "parse_fault_script",
    "parse_plan",
    "parse_report",
    "random_scenario",
    "run_scenario",
    "validate_plan",
    "verify_audit_log",
]

"""Deterministic fleet simulator: scenarios, constrained transport, reports."""

from .report import REPORT_FILES, EventRow, ScenarioReport, write_report
from .scenario import (
    ATTACK_KINDS,
    AttackSpec,
    ConfigError,
    DeviceSpec,
    FleetSimulation,
    ScenarioConfig,
    UnknownAttackKindError,
    load_scenario,
    make_firmware,
    parse_scenario,
    rng_stream,
    run_scenario,
    simulate_to_dir,
)
from .transport import (
    MissingFragmentError,
    MtuTooSmallError,
    PayloadTooLargeError,
    ReassemblyError,
    SimLink,
    fragment,
    reassemble,
)

__all__ = [
    "ATTACK_KINDS",
    "AttackSpec",
    "ConfigError",
    "DeviceSpec",
    "EventRow",
    "FleetSimulation",
    "MissingFragmentError",
    "MtuTooSmallError",
    "PayloadTooLargeError",
    "REPORT_FILES",
    "ReassemblyError",
    "ScenarioConfig",
    "ScenarioReport",
    "SimLink",
    "UnknownAttackKindError",
    "fragment",
    "load_scenario",
    "make_firmware",
    "parse_scenario",
    "reassemble",
    "rng_stream",
    "run_scenario",
    "simulate_to_dir",
    "write_report",
]

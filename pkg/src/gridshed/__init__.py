"""Quasi-steady-state cascading-outage simulator with a centralized,
thermal-limit-driven load-shedding controller."""

from .cascade import (
    CascadeEngine,
    EventLog,
    EventRecord,
    FrequencyParams,
    Scenario,
    ScenarioEvent,
    SystemState,
    detect_islands,
    initial_state,
    load_scenario,
    redistribute_droop,
    run,
    step_frequency,
)
from .controller import (
    ImpactFactorTable,
    PolicyConfig,
    ShedCommand,
    assign_times,
    control_step,
    critical_line,
    impact_factors,
    loading_rates,
    priority_order,
)
from .model import (
    Bus,
    CaseError,
    Generator,
    Line,
    Load,
    Network,
    OrientedIncidence,
    Violation,
    build_incidence,
    load_case,
    serialize_case,
    validate,
)
from .powerflow import (
    PowerFlowSolution,
    SolverConfig,
    effective_load,
    line_current,
    power_mismatch,
    solve_ac,
)
from .relay import (
    CURVES,
    DEFAULT_CURVE,
    RelayCurve,
    RelayState,
    overcurrent_rate,
    remaining_time,
    step_relay,
    trip_time,
)
from .report import TraceSet, read_csv, render_svg, write_csv, write_report

__version__ = "0.1.0"

"""Centralized shedding policy driven by line thermal stress.

Every load bus gets an impact factor per line: the signed product of the
line's flow direction at that bus and its loading rate.  A positive entry
means the line delivers power into the bus, so shedding there relieves
it.  Each load's critical line is the one with the largest impact factor;
the remaining trip time of that line's relay becomes the load's urgency,
and loads are shed in ascending order of that time, one feeder stage per
control interval, while any relay is both above pickup and inside the
safety margin.

All functions here are pure over (solution, relays) snapshots; the engine
hands them a consistent view, so nothing is mutated concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Network, OrientedIncidence, build_incidence
from .powerflow import PowerFlowSolution
from .relay import RelayState, overcurrent_rate, remaining_time


@dataclass(frozen=True)
class PolicyConfig:
    enabled: bool = True
    trigger_rate: float = 1.0
    control_interval_s: float = 0.5
    safety_margin_s: float | None = None  # default: twice the control interval

    @property
    def margin(self) -> float:
        if self.safety_margin_s is not None:
            return self.safety_margin_s
        return 2.0 * self.control_interval_s


@dataclass(frozen=True)
class ShedCommand:
    load_bus: int
    stage: int  # 1-based feeder stage index
    issue_time: float
    cause: int  # line id whose stress motivated the shed


@dataclass
class ImpactFactorTable:
    """Impact factors plus the per-load critical line and urgency."""

    if_matrix: np.ndarray  # n_bus x n_line
    load_buses: list[int]
    critical_line: dict[int, int | None]  # bus -> line id
    assigned_time: dict[int, float]  # bus -> seconds (inf if no inbound stress)


def loading_rates(solution: PowerFlowSolution, network: Network) -> np.ndarray:
    """Per-line overcurrent rate; zero for out-of-service/unsolved lines."""
    rates = np.zeros(network.n_line)
    for col, ln in enumerate(network.lines):
        if solution.line_solved[col]:
            rates[col] = overcurrent_rate(solution.i_line_pu[col], ln.pickup_current)
    return rates


def impact_factors(incidence: OrientedIncidence, rates: np.ndarray) -> np.ndarray:
    """Signed direction times loading rate, for every (bus, line) pair."""
    entries = incidence.entries
    if entries.shape[1] != len(rates):
        raise ValueError(
            f"dimension mismatch: incidence has {entries.shape[1]} lines, "
            f"rates has {len(rates)}"
        )
    return entries * np.asarray(rates, dtype=float)


def critical_line(if_row: np.ndarray, urgency: np.ndarray) -> int | None:
    """Column index of the max impact factor, or None if the max is <= 0.

    Ties go to the smaller remaining trip time (most urgent line), then to
    the lower line index.
    """
    best: int | None = None
    for k in range(len(if_row)):
        if if_row[k] <= 0.0:
            continue
        if best is None or if_row[k] > if_row[best]:
            best = k
        elif if_row[k] == if_row[best] and urgency[k] < urgency[best]:
            best = k
    return best


def assign_times(
    table: ImpactFactorTable, remaining: np.ndarray
) -> ImpactFactorTable:
    """Fill assigned_time: the critical line's remaining trip time per load."""
    for bus in table.load_buses:
        c = table.critical_line[bus]
        table.assigned_time[bus] = math.inf if c is None else float(remaining[c - 1])
    return table


def priority_order(table: ImpactFactorTable) -> list[int]:
    """Load buses in shedding order: least remaining time first.

    Loads whose critical line is not timing (infinite sentinel) are
    excluded.  Ties break toward the larger impact factor at the critical
    line, then the lower bus id.
    """
    entries = []
    for bus in table.load_buses:
        t = table.assigned_time[bus]
        if math.isinf(t):
            continue
        c = table.critical_line[bus]
        impact = table.if_matrix[bus - 1, c - 1]
        entries.append((t, -impact, bus))
    entries.sort()
    return [bus for _, _, bus in entries]


def remaining_times(
    network: Network, rates: np.ndarray, relays: list[RelayState]
) -> np.ndarray:
    out = np.empty(network.n_line)
    for col, ln in enumerate(network.lines):
        out[col] = remaining_time(relays[col], rates[col], ln.curve)
    return out


def urgent_lines(
    network: Network,
    rates: np.ndarray,
    remaining: np.ndarray,
    policy: PolicyConfig,
) -> list[int]:
    """Line ids that exceed the trigger rate inside the safety margin."""
    return [
        ln.id
        for col, ln in enumerate(network.lines)
        if rates[col] > policy.trigger_rate and remaining[col] < policy.margin
    ]


def build_table(
    network: Network,
    state,
    solution: PowerFlowSolution,
    rates: np.ndarray,
    remaining: np.ndarray,
) -> ImpactFactorTable:
    """Assemble the impact table for the buses that still host load."""
    incidence = build_incidence(network, solution)
    ifm = impact_factors(incidence, rates)
    energized = np.asarray(state.bus_energized, dtype=bool)
    load_buses = sorted(
        {
            ld.bus
            for li, ld in enumerate(network.loads)
            if ld.p0 > 0
            and energized[network.bus_row(ld.bus)]
            and any(state.stage_status[li])
        }
    )
    urgency = remaining  # column-aligned with lines
    table = ImpactFactorTable(
        if_matrix=ifm, load_buses=load_buses, critical_line={}, assigned_time={}
    )
    for bus in load_buses:
        col = critical_line(ifm[network.bus_row(bus)], urgency)
        table.critical_line[bus] = None if col is None else network.lines[col].id
    return assign_times(table, remaining)


def control_step(
    network: Network,
    state,
    solution: PowerFlowSolution,
    relays: list[RelayState],
    policy: PolicyConfig,
) -> list[ShedCommand]:
    """One control interval: at most one stage of the top-priority load.

    A shed is issued only while some line is above the trigger rate with
    its relay inside the safety margin.  Fully-shed loads are skipped in
    priority order; an empty result with urgency still present means the
    controller is exhausted (the engine logs that).
    """
    rates = loading_rates(solution, network)
    remaining = remaining_times(network, rates, relays)
    if not urgent_lines(network, rates, remaining, policy):
        return []
    table = build_table(network, state, solution, rates, remaining)
    for bus in priority_order(table):
        for li, ld in enumerate(network.loads):
            if ld.bus != bus:
                continue
            status = state.stage_status[li]
            for si, connected in enumerate(status):
                if connected:
                    return [
                        ShedCommand(
                            load_bus=bus,
                            stage=si + 1,
                            issue_time=float(state.time),
                            cause=table.critical_line[bus],
                        )
                    ]
    return []

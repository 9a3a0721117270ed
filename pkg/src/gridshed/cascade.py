"""Quasi-static cascade engine.

Each step: apply due contingencies, redistribute generation by governor
droop against the current frequency deviation, solve every live island,
advance the center-of-inertia frequency proxy, step the line relays,
invoke the shedding controller on its interval, process relay trips with
an immediate topology resolve, and append traces.  Islands without
generation black out; an island whose power flow collapses blacks out.
Everything is deterministic: same scenario and case give bit-identical
logs and traces.

One engine instance per scenario, single-threaded; a batch driver may run
many engines in parallel since they share only the immutable Network.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import PolicyConfig, control_step, loading_rates, remaining_times, urgent_lines
from .model import CaseError, Network, load_case
from .powerflow import PowerFlowSolution, SolverConfig, effective_load, solve_ac
from .relay import RelayState, step_relay
from .report import TraceSet

EVENT_KINDS = ("generator_outage", "line_outage", "load_outage")


@dataclass(frozen=True)
class ScenarioEvent:
    t: float
    kind: str
    target: int  # bus id for generator/load outages, line id for line outages


@dataclass(frozen=True)
class FrequencyParams:
    damping_pu: float = 1.0


@dataclass(frozen=True)
class CoiParams:
    """Aggregate swing parameters for one frequency step."""

    h_sys: float  # capacity-weighted inertia, seconds
    s_sys: float  # total in-service generator MVA
    f0: float
    damping: float = 1.0


@dataclass(frozen=True)
class Scenario:
    network: Network
    events: tuple[ScenarioEvent, ...] = ()
    t_end: float = 20.0
    dt: float = 0.1
    controller: PolicyConfig = PolicyConfig()
    frequency: FrequencyParams = FrequencyParams()
    solver: SolverConfig = SolverConfig()
    name: str = "scenario"
    dump_solver: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        for ev in self.events:
            if ev.kind not in EVENT_KINDS:
                raise ValueError(f"unknown event kind {ev.kind!r}")
            if not (0.0 <= ev.t <= self.t_end):
                raise ValueError(f"event time {ev.t} outside [0, {self.t_end}]")
            if ev.kind == "line_outage":
                if not (1 <= ev.target <= self.network.n_line):
                    raise ValueError(f"line_outage targets unknown line {ev.target}")
            elif not (1 <= ev.target <= self.network.n_bus):
                raise ValueError(f"{ev.kind} targets unknown bus {ev.target}")


def load_scenario(path, controller_override: bool | None = None) -> Scenario:
    """Read a scenario JSON file; the case path resolves relative to it."""
    path = Path(path)
    doc = json.loads(path.read_text())
    case_ref = doc.get("case")
    if case_ref is None:
        raise CaseError(f"scenario {path}: missing 'case'")
    case_path = Path(case_ref)
    if not case_path.is_absolute():
        case_path = path.parent / case_path
    network = load_case(case_path)

    try:
        events = tuple(
            ScenarioEvent(t=float(e["t"]), kind=str(e["kind"]), target=int(e["target"]))
            for e in doc.get("events", [])
        )
    except (KeyError, TypeError) as exc:
        raise CaseError(
            f"scenario {path}: events need numeric 't', 'kind', 'target' ({exc})"
        ) from exc
    ctrl = doc.get("controller", {})
    enabled = ctrl.get("enabled", True)
    if controller_override is not None:
        enabled = controller_override
    policy = PolicyConfig(
        enabled=bool(enabled),
        trigger_rate=float(ctrl.get("trigger_rate", 1.0)),
        control_interval_s=float(ctrl.get("control_interval_s", 0.5)),
        safety_margin_s=(
            float(ctrl["safety_margin_s"]) if "safety_margin_s" in ctrl else None
        ),
    )
    freq = doc.get("frequency", {})
    return Scenario(
        network=network,
        events=events,
        t_end=float(doc.get("t_end", 20.0)),
        dt=float(doc.get("dt", 0.1)),
        controller=policy,
        frequency=FrequencyParams(damping_pu=float(freq.get("damping_pu", 1.0))),
        name=str(doc.get("name", path.stem)),
    )


@dataclass
class SystemState:
    """Mutable per-step state the engine evolves."""

    time: float
    line_in_service: np.ndarray
    gen_in_service: np.ndarray
    stage_status: list[list[bool]]
    bus_energized: np.ndarray
    df: float
    gen_p_mech: np.ndarray
    relays: list[RelayState]
    last_solution: PowerFlowSolution | None = None


def initial_state(network: Network) -> SystemState:
    return SystemState(
        time=0.0,
        line_in_service=np.array([ln.in_service for ln in network.lines], dtype=bool),
        gen_in_service=np.array([g.in_service for g in network.generators], dtype=bool),
        stage_status=[list(ld.stage_status) for ld in network.loads],
        bus_energized=np.ones(network.n_bus, dtype=bool),
        df=0.0,
        gen_p_mech=np.array([g.p_set for g in network.generators], dtype=float),
        relays=[RelayState() for _ in network.lines],
    )


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: str
    subject: str
    cause: str

    def as_dict(self) -> dict:
        return {"t": self.time, "kind": self.kind, "subject": self.subject, "cause": self.cause}


@dataclass
class EventLog:
    records: list[EventRecord] = field(default_factory=list)

    def append(self, time: float, kind: str, subject: str, cause: str) -> None:
        self.records.append(EventRecord(float(time), kind, subject, cause))

    def of_kind(self, kind: str) -> list[EventRecord]:
        return [r for r in self.records if r.kind == kind]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.as_dict()) + "\n" for r in self.records)


# ---------------------------------------------------------------------------
# Physics helpers
# ---------------------------------------------------------------------------


def step_frequency(df: float, imbalance_mw: float, params: CoiParams, dt: float) -> float:
    """Forward-Euler step of the aggregate swing proxy.

    2 H S / f0 * d(df)/dt = imbalance - D * S * df / f0
    """
    if params.h_sys <= 0 or params.s_sys <= 0:
        return df
    accel = (
        (imbalance_mw - params.damping * params.s_sys * df / params.f0)
        * params.f0
        / (2.0 * params.h_sys * params.s_sys)
    )
    return df + dt * accel


def redistribute_droop(network: Network, state: SystemState, df: float) -> np.ndarray:
    """Mechanical power per generator after proportional governor action.

    Pickup is -(1/R) * (df/f0) * mva_base, clamped to the unit's headroom;
    out-of-service units produce nothing.
    """
    out = np.zeros(len(network.generators))
    for gi, g in enumerate(network.generators):
        if not state.gen_in_service[gi]:
            continue
        delta = -(1.0 / g.droop) * (df / network.f0) * g.mva_base
        delta = min(max(delta, 0.0), g.p_max - g.p_set)
        out[gi] = g.p_set + delta
    return out


@dataclass(frozen=True)
class Island:
    buses: tuple[int, ...]
    gen_capacity_mw: float
    load_mw: float


def detect_islands(network: Network, state: SystemState) -> list[Island]:
    """Connected components over energized buses and in-service lines."""
    alive = [b.id for b in network.buses if state.bus_energized[network.bus_row(b.id)]]
    adjacency: dict[int, list[int]] = {b: [] for b in alive}
    for col, ln in enumerate(network.lines):
        if (
            state.line_in_service[col]
            and ln.from_bus in adjacency
            and ln.to_bus in adjacency
        ):
            adjacency[ln.from_bus].append(ln.to_bus)
            adjacency[ln.to_bus].append(ln.from_bus)
    seen: set[int] = set()
    islands = []
    for start in alive:
        if start in seen:
            continue
        comp = {start}
        stack = [start]
        while stack:
            for nxt in adjacency[stack.pop()]:
                if nxt not in comp:
                    comp.add(nxt)
                    stack.append(nxt)
        seen |= comp
        cap = sum(
            g.p_max
            for gi, g in enumerate(network.generators)
            if state.gen_in_service[gi] and g.bus in comp
        )
        load = sum(
            ld.p0 * sum(s for s, on in zip(ld.stages, state.stage_status[li]) if on)
            for li, ld in enumerate(network.loads)
            if ld.bus in comp
        )
        islands.append(Island(tuple(sorted(comp)), cap, load))
    return islands


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------


class CascadeEngine:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.network = scenario.network
        self.state = initial_state(self.network)
        self.log = EventLog()
        self.solver_log: list[dict] = []
        self._trace_rows: list[tuple] = []
        self._pending = sorted(
            scenario.events, key=lambda e: (e.t, e.kind, e.target)
        )
        self._control_every = max(
            1, round(scenario.controller.control_interval_s / scenario.dt)
        )
        self._terminated = False
        self._solved_df = 0.0
        self._solved_stages: list[tuple] = [tuple(s) for s in self.state.stage_status]
        self._island_slacks: set[int] = set()
        # per-step (t, generation, load, losses) in MW, for balance checks
        self.balance_log: list[tuple[float, float, float, float]] = []

    # -- island handling ----------------------------------------------------

    def _island_slack(self, island: Island) -> int | None:
        """Base slack if present and generating, else the largest unit's bus."""
        base_slack = self.network.slack_bus()
        gens = [
            (gi, g)
            for gi, g in enumerate(self.network.generators)
            if self.state.gen_in_service[gi] and g.bus in island.buses
        ]
        if not gens:
            return None
        if any(g.bus == base_slack for _, g in gens):
            return base_slack
        best = max(gens, key=lambda item: (item[1].p_max, -item[1].bus))
        return best[1].bus

    def _blackout(self, island: Island, cause: str) -> None:
        for bus in island.buses:
            self.state.bus_energized[self.network.bus_row(bus)] = False
        for col, ln in enumerate(self.network.lines):
            if ln.from_bus in island.buses or ln.to_bus in island.buses:
                self.state.line_in_service[col] = False
        for gi, g in enumerate(self.network.generators):
            if g.bus in island.buses:
                self.state.gen_in_service[gi] = False
        subject = f"island buses {','.join(str(b) for b in island.buses)}"
        self.log.append(self.state.time, "island-blackout", subject, cause)

    def _resolve(self) -> tuple[PowerFlowSolution, float]:
        """Solve every live island; black out the unsolvable ones.

        Returns the composite solution and the total system imbalance
        (mechanical minus electrical, MW) summed over surviving islands.
        """
        net = self.network
        composite = _empty_solution(net, self.state.time)
        imbalance = 0.0
        self._solved_df = self.state.df
        self._solved_stages = [tuple(s) for s in self.state.stage_status]
        self._island_slacks = set()
        for island in detect_islands(net, self.state):
            slack = self._island_slack(island)
            if slack is None:
                self._blackout(island, "no generation")
                continue
            sol = solve_ac(
                net,
                self.state,
                self.scenario.solver,
                bus_ids=island.buses,
                slack_bus=slack,
            )
            if self.scenario.dump_solver:
                self.solver_log.append(
                    {
                        "t": self.state.time,
                        "island": list(island.buses[:4]) + (["..."] if len(island.buses) > 4 else []),
                        "converged": sol.converged,
                        "iterations": sol.iterations,
                        "max_mismatch": sol.max_mismatch,
                        "history": list(sol.mismatch_history),
                    }
                )
            if not sol.converged:
                self.log.append(
                    self.state.time,
                    "solver-failure",
                    f"island buses {island.buses[0]}..{island.buses[-1]}",
                    sol.failure or "no convergence",
                )
                self._blackout(island, "voltage collapse (power flow diverged)")
                continue
            _merge_solution(composite, sol)
            self._island_slacks.add(slack)
            mech_slack = sum(
                self.state.gen_p_mech[gi]
                for gi, g in enumerate(net.generators)
                if self.state.gen_in_service[gi] and g.bus == slack
            )
            imbalance += mech_slack - sol.p_slack
        self.state.last_solution = composite
        if not self.state.bus_energized.any() and not self._terminated:
            self.log.append(
                self.state.time, "island-blackout", "entire network", "total collapse"
            )
            self._terminated = True
        return composite, imbalance

    # -- events ---------------------------------------------------------------

    def _apply_event(self, ev: ScenarioEvent) -> None:
        net = self.network
        if ev.kind == "generator_outage":
            hit = [
                gi
                for gi, g in enumerate(net.generators)
                if g.bus == ev.target and self.state.gen_in_service[gi]
            ]
            for gi in hit:
                self.state.gen_in_service[gi] = False
            mw = sum(net.generators[gi].p_set for gi in hit)
            self.log.append(
                ev.t,
                "applied-contingency",
                f"generator@bus{ev.target}",
                f"scheduled outage ({mw:g} MW dispatched)",
            )
        elif ev.kind == "line_outage":
            col = ev.target - 1
            self.state.line_in_service[col] = False
            self.log.append(
                ev.t, "applied-contingency", f"line{ev.target}", "scheduled outage"
            )
        elif ev.kind == "load_outage":
            for li, ld in enumerate(net.loads):
                if ld.bus == ev.target:
                    self.state.stage_status[li] = [False] * len(ld.stages)
            self.log.append(
                ev.t, "applied-contingency", f"load@bus{ev.target}", "scheduled outage"
            )

    # -- main loop -------------------------------------------------------------

    def run(self) -> tuple[EventLog, TraceSet]:
        if self._trace_rows:
            raise RuntimeError("engine already ran; create a new CascadeEngine")
        scenario = self.scenario
        state = self.state
        n_steps = round(scenario.t_end / scenario.dt)

        while self._pending and self._pending[0].t <= 0.0:
            self._apply_event(self._pending.pop(0))
        solution, _ = self._resolve()
        rates = loading_rates(solution, self.network)
        if scenario.controller.enabled:
            self._control(solution)
        self._record(solution, rates)

        for step in range(1, n_steps + 1):
            if self._terminated:
                break
            t = round(step * scenario.dt, 9)
            state.time = t

            while self._pending and self._pending[0].t <= t + 1e-12:
                self._apply_event(self._pending.pop(0))

            state.gen_p_mech = redistribute_droop(self.network, state, state.df)
            solution, imbalance = self._resolve()
            if self._terminated:
                self._record(solution, loading_rates(solution, self.network))
                break

            params = self._coi_params()
            state.df = step_frequency(state.df, imbalance, params, scenario.dt)

            rates = loading_rates(solution, self.network)
            tripped_now: list[int] = []
            for col, ln in enumerate(self.network.lines):
                if not state.line_in_service[col]:
                    continue
                r = rates[col]
                before = state.relays[col]
                after = step_relay(before, r, scenario.dt, ln.curve, now=t - scenario.dt)
                state.relays[col] = after
                if after.tripped and not before.tripped:
                    tripped_now.append(col)

            if scenario.controller.enabled and step % self._control_every == 0:
                self._control(solution)

            if tripped_now:
                for col in tripped_now:
                    ln = self.network.lines[col]
                    state.line_in_service[col] = False
                    self.log.append(
                        t,
                        "relay-trip",
                        f"line{ln.id}",
                        f"overcurrent travel complete at rate {rates[col]:.3f}",
                    )
                solution, _ = self._resolve()
                rates = loading_rates(solution, self.network)

            self._record(solution, rates)

        return self.log, self._traces()

    def _coi_params(self) -> CoiParams:
        gens = [
            g
            for gi, g in enumerate(self.network.generators)
            if self.state.gen_in_service[gi]
        ]
        s_sys = sum(g.mva_base for g in gens)
        h_sys = (
            sum(g.inertia_h * g.mva_base for g in gens) / s_sys if s_sys > 0 else 0.0
        )
        return CoiParams(
            h_sys=h_sys,
            s_sys=s_sys,
            f0=self.network.f0,
            damping=self.scenario.frequency.damping_pu,
        )

    def _control(self, solution: PowerFlowSolution) -> None:
        state = self.state
        commands = control_step(
            self.network, state, solution, state.relays, self.scenario.controller
        )
        for cmd in commands:
            # mirror the controller's pick: first load at the bus that still
            # has a connected stage, and that load's first connected stage
            for li, ld in enumerate(self.network.loads):
                if ld.bus != cmd.load_bus:
                    continue
                first = next(
                    (si for si, on in enumerate(state.stage_status[li]) if on), None
                )
                if first is not None:
                    state.stage_status[li][first] = False
                    break
            self.log.append(
                cmd.issue_time,
                "shed-command",
                f"load@bus{cmd.load_bus} stage {cmd.stage}",
                f"line{cmd.cause}",
            )
        if not commands:
            rates = loading_rates(solution, self.network)
            remaining = remaining_times(self.network, rates, state.relays)
            urgent = urgent_lines(self.network, rates, remaining, self.scenario.controller)
            if urgent:
                self.log.append(
                    state.time,
                    "controller-exhausted",
                    "controller",
                    f"no sheddable load left for lines {urgent}",
                )

    def _record(self, solution: PowerFlowSolution, rates: np.ndarray) -> None:
        state = self.state
        net = self.network
        # Load power evaluated at the df and stage flags the solve used, so
        # the recorded balance matches the converged power flow exactly.
        p_loads = []
        for li, ld in enumerate(net.loads):
            row = net.bus_row(ld.bus)
            if state.bus_energized[row] and solution.bus_solved[row]:
                p, _ = effective_load(
                    ld, solution.v_mag[row], self._solved_df, self._solved_stages[li]
                )
            else:
                p = 0.0
            p_loads.append(p)
        gen_mw = solution.p_slack + sum(
            float(state.gen_p_mech[gi])
            for gi, g in enumerate(net.generators)
            if state.gen_in_service[gi]
            and g.bus not in self._island_slacks
            and solution.bus_solved[net.bus_row(g.bus)]
        )
        loss_mw = float(
            np.sum(solution.p_from[solution.line_solved])
            + np.sum(solution.p_to[solution.line_solved])
        )
        self.balance_log.append((state.time, gen_mw, float(sum(p_loads)), loss_mw))
        self._trace_rows.append(
            (
                state.time,
                solution.v_mag.copy(),
                state.df,
                np.array(p_loads),
                rates.copy(),
            )
        )

    def _traces(self) -> TraceSet:
        net = self.network
        rows = self._trace_rows
        return TraceSet(
            time=np.array([r[0] for r in rows]),
            bus_ids=[b.id for b in net.buses],
            v=np.vstack([r[1] for r in rows]),
            df=np.array([r[2] for r in rows]),
            load_buses=_load_bus_order(net),
            p_load=_aggregate_loads(net, np.vstack([r[3] for r in rows])),
            line_ids=[ln.id for ln in net.lines],
            rate=np.vstack([r[4] for r in rows]),
        )


def _load_bus_order(network: Network) -> list[int]:
    return sorted({ld.bus for ld in network.loads})


def _aggregate_loads(network: Network, per_load: np.ndarray) -> np.ndarray:
    """Sum per-load traces into one column per load bus."""
    buses = _load_bus_order(network)
    out = np.zeros((per_load.shape[0], len(buses)))
    for li, ld in enumerate(network.loads):
        out[:, buses.index(ld.bus)] += per_load[:, li]
    return out


def _empty_solution(network: Network, t: float) -> PowerFlowSolution:
    n, b = network.n_bus, network.n_line
    return PowerFlowSolution(
        v_mag=np.zeros(n),
        v_ang=np.zeros(n),
        p_from=np.zeros(b),
        q_from=np.zeros(b),
        p_to=np.zeros(b),
        q_to=np.zeros(b),
        i_line_pu=np.zeros(b),
        i_line_amps=np.zeros(b),
        p_slack=0.0,
        converged=True,
        iterations=0,
        max_mismatch=0.0,
        bus_solved=np.zeros(n, dtype=bool),
        line_solved=np.zeros(b, dtype=bool),
        solved_at=t,
    )


def _merge_solution(composite: PowerFlowSolution, part: PowerFlowSolution) -> None:
    bus = part.bus_solved
    line = part.line_solved
    composite.v_mag[bus] = part.v_mag[bus]
    composite.v_ang[bus] = part.v_ang[bus]
    composite.bus_solved |= bus
    for name in ("p_from", "q_from", "p_to", "q_to", "i_line_pu", "i_line_amps"):
        getattr(composite, name)[line] = getattr(part, name)[line]
    composite.line_solved |= line
    composite.p_slack += part.p_slack
    composite.iterations = max(composite.iterations, part.iterations)
    composite.max_mismatch = max(composite.max_mismatch, part.max_mismatch)


def run(scenario: Scenario) -> tuple[EventLog, TraceSet]:
    """Run one scenario to completion (the one-call engine entry point)."""
    return CascadeEngine(scenario).run()

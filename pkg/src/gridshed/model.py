"""Grid data model, case-file ingestion, and incidence-matrix construction.

A Network is the immutable description of the grid: buses, lines (with
relay settings), generators, and loads split into switchable feeder
stages.  Cases are JSON documents; see docs/case-schema.md.  The oriented
incidence matrix encodes the instantaneous power-flow direction of every
in-service line: entry (i, k) is +1 where line k delivers power into bus
i, -1 where power leaves bus i into the line, and 0 elsewhere.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from . import relay as relay_mod
from .relay import RelayCurve

if TYPE_CHECKING:  # pragma: no cover
    from .powerflow import PowerFlowSolution

BUS_KINDS = ("slack", "pv", "pq")

# Flows smaller than this (pu) get the deterministic from->to orientation.
FLOW_DIRECTION_EPS = 1e-6


class CaseError(ValueError):
    """Raised when a case file violates the schema or the model invariants."""


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    base_kv: float
    v_setpoint: float | None = None


@dataclass(frozen=True)
class Line:
    """Transmission branch with its overcurrent relay settings.

    `pickup_current` is the relay pickup as a fraction of `rating_amps`
    (1.0 means pickup at the thermal rating).
    """

    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_shunt: float
    rating_amps: float
    pickup_current: float = 1.0
    curve: RelayCurve = relay_mod.DEFAULT_CURVE
    in_service: bool = True


@dataclass(frozen=True)
class Load:
    """Demand at a bus, split into feeder stages sheddable one at a time.

    P = p0 * (connected stage fraction) * v**kpv * (1 + kpf * df)
    Q = q0 * (connected stage fraction) * v**kqv

    `stage_status` holds the base-case connected flags; the cascade engine
    tracks the live flags in its mutable state.
    """

    bus: int
    p0: float
    q0: float
    stages: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    stage_status: tuple[bool, ...] | None = None
    kpv: float = 1.0
    kqv: float = 2.0
    kpf: float = 1.0

    def __post_init__(self):
        if self.stage_status is None:
            object.__setattr__(self, "stage_status", (True,) * len(self.stages))


@dataclass(frozen=True)
class Generator:
    bus: int
    p_set: float
    p_max: float
    droop: float = 0.05
    inertia_h: float = 4.0
    mva_base: float = 100.0
    in_service: bool = True


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    loads: tuple[Load, ...]
    generators: tuple[Generator, ...]
    s_base: float = 100.0
    f0: float = 60.0

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_line(self) -> int:
        return len(self.lines)

    def bus_row(self, bus_id: int) -> int:
        """0-based matrix row of a bus id (ids are dense 1..n)."""
        return bus_id - 1

    def slack_bus(self) -> int:
        for b in self.buses:
            if b.kind == "slack":
                return b.id
        raise CaseError("network has no slack bus")

    def base_current_amps(self, bus_id: int) -> float:
        """System base current at a bus's voltage level, in amperes."""
        kv = self.buses[self.bus_row(bus_id)].base_kv
        return self.s_base * 1e6 / (math.sqrt(3) * kv * 1e3)

    def loads_at(self, bus_id: int) -> list[Load]:
        return [ld for ld in self.loads if ld.bus == bus_id]

    def generators_at(self, bus_id: int) -> list[Generator]:
        return [g for g in self.generators if g.bus == bus_id]


@dataclass(frozen=True)
class OrientedIncidence:
    """n x b signed matrix of instantaneous flow directions."""

    entries: np.ndarray
    valid_at: float = 0.0


@dataclass(frozen=True)
class Violation:
    element: str
    rule: str

    def __str__(self) -> str:
        return f"{self.element}: {self.rule}"


# ---------------------------------------------------------------------------
# Case ingestion
# ---------------------------------------------------------------------------

_BUS_REQUIRED = ("id", "kind", "base_kv")
_LINE_REQUIRED = ("id", "from_bus", "to_bus", "r", "x", "b_shunt", "rating_amps")
_LOAD_REQUIRED = ("bus", "p0", "q0")
_GEN_REQUIRED = ("bus", "p_set", "p_max")


def _read_source(source) -> dict:
    if isinstance(source, dict):
        doc = source
    else:
        if isinstance(source, (str, Path)):
            text = Path(source).read_text()
        elif isinstance(source, (bytes, bytearray)):
            text = source.decode("utf-8")
        elif isinstance(source, io.IOBase) or hasattr(source, "read"):
            data = source.read()
            text = data.decode("utf-8") if isinstance(data, bytes) else data
        else:
            raise CaseError(f"cannot read case from {type(source).__name__}")
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CaseError(f"case file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CaseError("case document must be a JSON object")
    return doc


def _require(record: dict, keys, what: str):
    for key in keys:
        if key not in record:
            raise CaseError(f"{what}: missing required field {key!r}")


def _num(record: dict, key: str, what: str, default=None) -> float:
    value = record.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CaseError(f"{what}: field {key!r} must be a number, got {value!r}")
    return float(value)


def load_case(source) -> Network:
    """Parse and validate a case document (path, bytes, stream, or dict)."""
    doc = _read_source(source)
    for key in ("s_base_mva", "f0_hz", "buses", "lines", "loads", "generators"):
        if key not in doc:
            raise CaseError(f"case: missing top-level key {key!r}")

    s_base = _num(doc, "s_base_mva", "case")
    f0 = _num(doc, "f0_hz", "case")

    buses = []
    for rec in doc["buses"]:
        _require(rec, _BUS_REQUIRED, f"bus {rec.get('id', '?')}")
        what = f"bus {rec['id']}"
        kind = rec["kind"]
        if kind not in BUS_KINDS:
            raise CaseError(f"{what}: kind must be one of {BUS_KINDS}, got {kind!r}")
        v_set = rec.get("v_setpoint")
        if v_set is not None:
            v_set = _num(rec, "v_setpoint", what)
        buses.append(
            Bus(
                id=int(_num(rec, "id", what)),
                kind=kind,
                base_kv=_num(rec, "base_kv", what),
                v_setpoint=v_set,
            )
        )

    lines = []
    for rec in doc["lines"]:
        _require(rec, _LINE_REQUIRED, f"line {rec.get('id', '?')}")
        what = f"line {rec['id']}"
        lines.append(
            Line(
                id=int(_num(rec, "id", what)),
                from_bus=int(_num(rec, "from_bus", what)),
                to_bus=int(_num(rec, "to_bus", what)),
                r=_num(rec, "r", what),
                x=_num(rec, "x", what),
                b_shunt=_num(rec, "b_shunt", what),
                rating_amps=_num(rec, "rating_amps", what),
                pickup_current=_num(rec, "pickup_current", what, default=1.0),
                curve=relay_mod.resolve_curve(rec.get("curve")),
                in_service=bool(rec.get("in_service", True)),
            )
        )

    loads = []
    for rec in doc["loads"]:
        _require(rec, _LOAD_REQUIRED, f"load at bus {rec.get('bus', '?')}")
        what = f"load at bus {rec['bus']}"
        stages = rec.get("stages", [0.25, 0.25, 0.25, 0.25])
        if not isinstance(stages, list) or not stages:
            raise CaseError(f"{what}: stages must be a non-empty list")
        status = rec.get("stage_status")
        if status is not None:
            if not isinstance(status, list) or len(status) != len(stages):
                raise CaseError(f"{what}: stage_status must match stages length")
            status = tuple(bool(s) for s in status)
        loads.append(
            Load(
                bus=int(_num(rec, "bus", what)),
                p0=_num(rec, "p0", what),
                q0=_num(rec, "q0", what),
                stages=tuple(float(s) for s in stages),
                stage_status=status,
                kpv=_num(rec, "kpv", what, default=1.0),
                kqv=_num(rec, "kqv", what, default=2.0),
                kpf=_num(rec, "kpf", what, default=1.0),
            )
        )

    generators = []
    for rec in doc["generators"]:
        _require(rec, _GEN_REQUIRED, f"generator at bus {rec.get('bus', '?')}")
        what = f"generator at bus {rec['bus']}"
        generators.append(
            Generator(
                bus=int(_num(rec, "bus", what)),
                p_set=_num(rec, "p_set", what),
                p_max=_num(rec, "p_max", what),
                droop=_num(rec, "droop", what, default=0.05),
                inertia_h=_num(rec, "inertia_h", what, default=4.0),
                mva_base=_num(rec, "mva_base", what, default=100.0),
                in_service=bool(rec.get("in_service", True)),
            )
        )

    network = Network(
        buses=tuple(buses),
        lines=tuple(lines),
        loads=tuple(loads),
        generators=tuple(generators),
        s_base=s_base,
        f0=f0,
    )
    problems = validate(network)
    if problems:
        detail = "; ".join(str(p) for p in problems)
        raise CaseError(f"case violates model invariants: {detail}")
    return network


def serialize_case(network: Network) -> dict:
    """Emit the JSON document form of a network (inverse of load_case)."""
    return {
        "s_base_mva": network.s_base,
        "f0_hz": network.f0,
        "buses": [
            {
                "id": b.id,
                "kind": b.kind,
                "base_kv": b.base_kv,
                **({"v_setpoint": b.v_setpoint} if b.v_setpoint is not None else {}),
            }
            for b in network.buses
        ],
        "lines": [
            {
                "id": ln.id,
                "from_bus": ln.from_bus,
                "to_bus": ln.to_bus,
                "r": ln.r,
                "x": ln.x,
                "b_shunt": ln.b_shunt,
                "rating_amps": ln.rating_amps,
                "pickup_current": ln.pickup_current,
                "curve": relay_mod.serialize_curve(ln.curve),
                "in_service": ln.in_service,
            }
            for ln in network.lines
        ],
        "loads": [
            {
                "bus": ld.bus,
                "p0": ld.p0,
                "q0": ld.q0,
                "stages": list(ld.stages),
                "stage_status": list(ld.stage_status),
                "kpv": ld.kpv,
                "kqv": ld.kqv,
                "kpf": ld.kpf,
            }
            for ld in network.loads
        ],
        "generators": [
            {
                "bus": g.bus,
                "p_set": g.p_set,
                "p_max": g.p_max,
                "droop": g.droop,
                "inertia_h": g.inertia_h,
                "mva_base": g.mva_base,
                "in_service": g.in_service,
            }
            for g in network.generators
        ],
    }


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate(network: Network) -> list[Violation]:
    """Check every model invariant; empty list means the network is sound."""
    out: list[Violation] = []
    add = out.append

    if network.s_base <= 0:
        add(Violation("case", f"s_base_mva must be positive, got {network.s_base}"))
    if network.f0 <= 0:
        add(Violation("case", f"f0_hz must be positive, got {network.f0}"))

    ids = [b.id for b in network.buses]
    if sorted(ids) != list(range(1, len(ids) + 1)):
        add(Violation("buses", f"ids must be dense 1..{len(ids)}, got {sorted(ids)}"))
        return out  # downstream checks assume dense ids
    known = set(ids)

    slacks = [b.id for b in network.buses if b.kind == "slack"]
    if len(slacks) == 0:
        add(Violation("buses", "no slack bus"))
    elif len(slacks) > 1:
        add(Violation("buses", f"multiple slack buses: {slacks}"))

    for b in network.buses:
        if b.base_kv <= 0:
            add(Violation(f"bus {b.id}", f"base_kv must be positive, got {b.base_kv}"))
        if b.kind in ("slack", "pv") and b.v_setpoint is not None and b.v_setpoint <= 0:
            add(Violation(f"bus {b.id}", f"v_setpoint must be positive, got {b.v_setpoint}"))

    line_ids = [ln.id for ln in network.lines]
    if line_ids != list(range(1, len(line_ids) + 1)):
        add(Violation("lines", f"ids must be dense 1..{len(line_ids)} in order"))
    for ln in network.lines:
        what = f"line {ln.id}"
        for end, bus in (("from_bus", ln.from_bus), ("to_bus", ln.to_bus)):
            if bus not in known:
                add(Violation(what, f"{end} references unknown bus {bus}"))
        if ln.from_bus == ln.to_bus:
            add(Violation(what, f"from_bus equals to_bus ({ln.from_bus})"))
        if ln.x == 0:
            add(Violation(what, "series reactance x must be nonzero"))
        if ln.rating_amps <= 0:
            add(Violation(what, f"rating_amps must be positive, got {ln.rating_amps}"))
        if ln.pickup_current <= 0:
            add(Violation(what, f"pickup_current must be positive, got {ln.pickup_current}"))

    for ld in network.loads:
        what = f"load at bus {ld.bus}"
        if ld.bus not in known:
            add(Violation(what, f"references unknown bus {ld.bus}"))
        if ld.p0 < 0:
            add(Violation(what, f"p0 must be nonnegative, got {ld.p0}"))
        if any(s <= 0 for s in ld.stages):
            add(Violation(what, f"stage fractions must be positive, got {ld.stages}"))
        total = sum(ld.stages)
        if abs(total - 1.0) > 1e-9:
            add(Violation(what, f"stages sum {total:.9g} != 1"))
        if len(ld.stage_status) != len(ld.stages):
            add(Violation(what, "stage_status length differs from stages"))

    for g in network.generators:
        what = f"generator at bus {g.bus}"
        if g.bus not in known:
            add(Violation(what, f"references unknown bus {g.bus}"))
        if not (0 <= g.p_set <= g.p_max):
            add(Violation(what, f"p_set {g.p_set} outside [0, p_max={g.p_max}]"))
        if g.droop <= 0:
            add(Violation(what, f"droop must be positive, got {g.droop}"))
        if g.inertia_h < 0:
            add(Violation(what, f"inertia_h must be nonnegative, got {g.inertia_h}"))
        if g.mva_base <= 0:
            add(Violation(what, f"mva_base must be positive, got {g.mva_base}"))

    if network.buses and not out:
        comp = _base_component(network)
        if len(comp) != network.n_bus:
            missing = sorted(set(ids) - comp)
            add(Violation("network", f"base topology disconnected; unreachable buses {missing}"))
    return out


def _base_component(network: Network) -> set[int]:
    """Buses reachable from bus 1 over in-service lines (base topology)."""
    adjacency: dict[int, list[int]] = {b.id: [] for b in network.buses}
    for ln in network.lines:
        if ln.in_service:
            adjacency[ln.from_bus].append(ln.to_bus)
            adjacency[ln.to_bus].append(ln.from_bus)
    start = network.buses[0].id
    seen = {start}
    stack = [start]
    while stack:
        for nxt in adjacency[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


# ---------------------------------------------------------------------------
# Oriented incidence
# ---------------------------------------------------------------------------


def build_incidence(network: Network, flows: "PowerFlowSolution") -> OrientedIncidence:
    """Orient every in-service line by the sign of its sending-end MW flow.

    Columns of out-of-service (or unsolved) lines are all zero.  Flows with
    |P| below FLOW_DIRECTION_EPS pu get the from->to orientation so the
    matrix is deterministic.
    """
    entries = np.zeros((network.n_bus, network.n_line), dtype=np.int8)
    eps_mw = FLOW_DIRECTION_EPS * network.s_base
    for col, ln in enumerate(network.lines):
        if not flows.line_solved[col]:
            continue
        i = network.bus_row(ln.from_bus)
        j = network.bus_row(ln.to_bus)
        if flows.p_from[col] >= -eps_mw:
            entries[i, col] = -1  # power leaves the from bus
            entries[j, col] = +1  # and enters the to bus
        else:
            entries[i, col] = +1
            entries[j, col] = -1
    return OrientedIncidence(entries=entries, valid_at=flows.solved_at)

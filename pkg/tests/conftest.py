import json
from pathlib import Path

import numpy as np
import pytest

from gridshed import (
    Network,
    SolverConfig,
    initial_state,
    load_case,
    solve_ac,
)

REPO = Path(__file__).resolve().parent.parent
CASE_39 = REPO / "cases" / "ieee39.json"
SCENARIO_G1 = REPO / "scenarios" / "g1-outage.json"
SCENARIO_NOOP = REPO / "scenarios" / "noop.json"


@pytest.fixture(scope="session")
def ieee39() -> Network:
    return load_case(CASE_39)


@pytest.fixture(scope="session")
def ieee39_base(ieee39):
    """Base-case solution of the bundled system (flat start)."""
    state = initial_state(ieee39)
    sol = solve_ac(ieee39, state, SolverConfig(flat_start=True))
    assert sol.converged
    return sol


def two_bus_doc(p_load=0.0, q_load=0.0) -> dict:
    """Minimal two-bus case: slack feeding one PQ bus over one line."""
    doc = {
        "s_base_mva": 100.0,
        "f0_hz": 60.0,
        "buses": [
            {"id": 1, "kind": "slack", "base_kv": 138.0, "v_setpoint": 1.0},
            {"id": 2, "kind": "pq", "base_kv": 138.0},
        ],
        "lines": [
            {
                "id": 1,
                "from_bus": 1,
                "to_bus": 2,
                "r": 0.01,
                "x": 0.1,
                "b_shunt": 0.0,
                "rating_amps": 400.0,
            }
        ],
        "loads": [],
        "generators": [
            {"bus": 1, "p_set": min(max(p_load, 0.0), 400.0), "p_max": 500.0, "mva_base": 500.0}
        ],
    }
    if p_load or q_load:
        doc["loads"] = [{"bus": 2, "p0": p_load, "q0": q_load, "kpf": 0.0}]
    return doc


def random_network(rng: np.random.Generator, n_min=4, n_max=8) -> Network:
    """Small random connected network that usually solves: one slack, one
    PV unit, a few PQ loads, spanning tree plus extra meshing edges."""
    n = int(rng.integers(n_min, n_max + 1))
    edges = set()
    for i in range(2, n + 1):
        j = int(rng.integers(1, i))
        edges.add((j, i))
    extra = int(rng.integers(0, n // 2 + 1))
    for _ in range(extra):
        a, b = int(rng.integers(1, n + 1)), int(rng.integers(1, n + 1))
        if a != b and (min(a, b), max(a, b)) not in edges:
            edges.add((min(a, b), max(a, b)))

    lines = []
    for k, (f, t) in enumerate(sorted(edges), start=1):
        x = float(rng.uniform(0.02, 0.12))
        lines.append(
            {
                "id": k,
                "from_bus": f,
                "to_bus": t,
                "r": round(x / 10, 6),
                "x": round(x, 6),
                "b_shunt": round(float(rng.uniform(0.0, 0.08)), 6),
                "rating_amps": 400.0,
            }
        )

    load_buses = [b for b in range(2, n + 1) if rng.random() < 0.7] or [n]
    loads = [
        {
            "bus": b,
            "p0": round(float(rng.uniform(15.0, 60.0)), 3),
            "q0": round(float(rng.uniform(2.0, 20.0)), 3),
            "kpf": 0.02,
        }
        for b in load_buses
    ]
    total_p = sum(ld["p0"] for ld in loads)

    pv_bus = int(rng.integers(2, n + 1))
    generators = [
        {"bus": 1, "p_set": 0.0, "p_max": 2000.0, "mva_base": 1000.0},
        {
            "bus": pv_bus,
            "p_set": round(total_p * float(rng.uniform(0.2, 0.6)), 3),
            "p_max": 2000.0,
            "mva_base": 500.0,
        },
    ]
    buses = []
    for b in range(1, n + 1):
        if b == 1:
            buses.append({"id": 1, "kind": "slack", "base_kv": 138.0, "v_setpoint": 1.0})
        elif b == pv_bus:
            buses.append({"id": b, "kind": "pv", "base_kv": 138.0, "v_setpoint": 1.02})
        else:
            buses.append({"id": b, "kind": "pq", "base_kv": 138.0})
    return load_case(
        {
            "s_base_mva": 100.0,
            "f0_hz": 60.0,
            "buses": buses,
            "lines": lines,
            "loads": loads,
            "generators": generators,
        }
    )


def solved_random_network(rng, stressed=False, n_min=4, n_max=8):
    """Draw random networks until one converges; optionally rescale the
    line ratings so loading rates land around and above 1.0."""
    for _ in range(50):
        net = random_network(rng, n_min, n_max)
        state = initial_state(net)
        sol = solve_ac(net, state, SolverConfig(flat_start=True))
        if not sol.converged:
            continue
        if not stressed:
            return net, state, sol
        doc = json.loads(json.dumps(_serialize(net)))
        changed = False
        for k, rec in enumerate(doc["lines"]):
            amps = float(sol.i_line_amps[k])
            if amps <= 1e-9:
                continue
            target = float(rng.uniform(0.4, 1.6))
            rec["rating_amps"] = amps / target
            changed = True
        if not changed:
            continue
        net2 = load_case(doc)
        state2 = initial_state(net2)
        sol2 = solve_ac(net2, state2, SolverConfig(flat_start=True))
        if sol2.converged:
            return net2, state2, sol2
    raise RuntimeError("could not draw a convergent random network")


def _serialize(net):
    from gridshed import serialize_case

    return serialize_case(net)

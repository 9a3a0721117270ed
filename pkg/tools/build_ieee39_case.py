#!/usr/bin/env python3
"""Build cases/ieee39.json from the public New England 39-bus data.

Transcribed from the MATPOWER case39 tables (Athay et al. test system),
with the following adjustments:

* bus labels 30 and 39 swapped, so the large system-equivalent unit G1
  and the big load sit at bus 30 on the two-line corridor to buses 1/9;
* transformer branches carried as plain lines (tap ratios dropped);
* G1 dispatched at 1012 MW; the bus-30 load sized so that shedding three
  of its four feeder stages clears the post-outage corridor overload
  while total shed stays below the lost generation;
* line thermal ratings are derived from the solved base case so every
  line starts at exactly 85 % loading;
* the slack unit's p_set is baked to its solved base output so the
  no-event scenario is a strict equilibrium.

Running this script regenerates the bundled case deterministically.
"""

import json
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from gridshed import initial_state, load_case, solve_ac, SolverConfig  # noqa: E402

# fbus, tbus, r, x, b  (per unit on 100 MVA; tap ratios of the original
# transformer rows dropped).  Bus labels already carry the 30<->39 swap.
BRANCHES = [
    (1, 2, 0.0035, 0.0411, 0.6987),
    (1, 30, 0.0010, 0.0250, 0.7500),
    (2, 3, 0.0013, 0.0151, 0.2572),
    (2, 25, 0.0070, 0.0086, 0.1460),
    (2, 39, 0.0000, 0.0181, 0.0000),
    (3, 4, 0.0013, 0.0213, 0.2214),
    (3, 18, 0.0011, 0.0133, 0.2138),
    (4, 5, 0.0008, 0.0128, 0.1342),
    (4, 14, 0.0008, 0.0129, 0.1382),
    (5, 6, 0.0002, 0.0026, 0.0434),
    (5, 8, 0.0008, 0.0112, 0.1476),
    (6, 7, 0.0006, 0.0092, 0.1130),
    (6, 11, 0.0007, 0.0082, 0.1389),
    (6, 31, 0.0000, 0.0250, 0.0000),
    (7, 8, 0.0004, 0.0046, 0.0780),
    (8, 9, 0.0023, 0.0363, 0.3804),
    (9, 30, 0.0010, 0.0250, 1.2000),
    (10, 11, 0.0004, 0.0043, 0.0729),
    (10, 13, 0.0004, 0.0043, 0.0729),
    (10, 32, 0.0000, 0.0200, 0.0000),
    (12, 11, 0.0016, 0.0435, 0.0000),
    (12, 13, 0.0016, 0.0435, 0.0000),
    (13, 14, 0.0009, 0.0101, 0.1723),
    (14, 15, 0.0018, 0.0217, 0.3660),
    (15, 16, 0.0009, 0.0094, 0.1710),
    (16, 17, 0.0007, 0.0089, 0.1342),
    (16, 19, 0.0016, 0.0195, 0.3040),
    (16, 21, 0.0008, 0.0135, 0.2548),
    (16, 24, 0.0003, 0.0059, 0.0680),
    (17, 18, 0.0007, 0.0082, 0.1319),
    (17, 27, 0.0013, 0.0173, 0.3216),
    (19, 20, 0.0007, 0.0138, 0.0000),
    (19, 33, 0.0007, 0.0142, 0.0000),
    (20, 34, 0.0009, 0.0180, 0.0000),
    (21, 22, 0.0008, 0.0140, 0.2565),
    (22, 23, 0.0006, 0.0096, 0.1846),
    (22, 35, 0.0000, 0.0143, 0.0000),
    (23, 24, 0.0022, 0.0350, 0.3610),
    (23, 36, 0.0005, 0.0272, 0.0000),
    (25, 26, 0.0032, 0.0323, 0.5310),
    (25, 37, 0.0006, 0.0232, 0.0000),
    (26, 27, 0.0014, 0.0147, 0.2396),
    (26, 28, 0.0043, 0.0474, 0.7802),
    (26, 29, 0.0057, 0.0625, 1.0290),
    (28, 29, 0.0014, 0.0151, 0.2490),
    (29, 38, 0.0008, 0.0156, 0.0000),
]

# bus, p0, q0 (MW / MVAr).  The published bus-39 load lives at bus 30
# after the swap; its size is tuned (see module docstring).
LOAD_30_P = 1320.0
LOADS = [
    (3, 322.0, 2.4),
    (4, 500.0, 184.0),
    (7, 233.8, 84.0),
    (8, 522.0, 176.6),
    (12, 8.53, 88.0),
    (15, 320.0, 153.0),
    (16, 329.0, 32.3),
    (18, 158.0, 30.0),
    (20, 680.0, 103.0),
    (21, 274.0, 115.0),
    (23, 247.5, 84.6),
    (24, 308.6, -92.2),
    (25, 224.0, 47.2),
    (26, 139.0, 17.0),
    (27, 281.0, 75.5),
    (28, 206.0, 27.6),
    (29, 283.5, 26.9),
    (30, LOAD_30_P, 250.0),
    (31, 9.2, 4.6),
]

# bus, p_set, p_max, v_set, mva_base, inertia_h (droop 0.05 throughout).
# G1 is the 1012 MW system equivalent at bus 30; bus 31 is the slack and
# its p_set is overwritten with the solved base value below.
GENERATORS = [
    (30, 1012.0, 1100.0, 1.0300, 1250.0, 5.0),
    (31, 900.0, 1200.0, 0.9820, 1300.0, 4.2),
    (32, 650.0, 725.0, 0.9841, 800.0, 3.8),
    (33, 632.0, 652.0, 0.9972, 750.0, 3.6),
    (34, 508.0, 508.0, 1.0123, 600.0, 4.1),
    (35, 650.0, 687.0, 1.0494, 800.0, 4.35),
    (36, 560.0, 580.0, 1.0636, 700.0, 3.77),
    (37, 540.0, 564.0, 1.0275, 700.0, 3.47),
    (38, 830.0, 865.0, 1.0265, 1000.0, 3.45),
    (39, 250.0, 1040.0, 1.0499, 1150.0, 4.2),
]

BASE_LOADING = 0.85
SLACK_BUS = 31


def build_document() -> dict:
    gen_buses = {g[0] for g in GENERATORS}
    buses = []
    for bid in range(1, 40):
        if bid == SLACK_BUS:
            kind = "slack"
        elif bid in gen_buses:
            kind = "pv"
        else:
            kind = "pq"
        rec = {"id": bid, "kind": kind, "base_kv": 345.0}
        if kind != "pq":
            rec["v_setpoint"] = next(g[3] for g in GENERATORS if g[0] == bid)
        buses.append(rec)

    lines = [
        {
            "id": k + 1,
            "from_bus": f,
            "to_bus": t,
            "r": r,
            "x": x,
            "b_shunt": b,
            "rating_amps": 1000.0,  # placeholder, baked below
            "pickup_current": 1.0,
            "curve": "very_inverse",
            "in_service": True,
        }
        for k, (f, t, r, x, b) in enumerate(BRANCHES)
    ]

    loads = [
        {
            "bus": bus,
            "p0": p,
            "q0": q,
            "stages": [0.25, 0.25, 0.25, 0.25],
            "kpv": 1.0,
            "kqv": 2.0,
            "kpf": 0.02,
        }
        for bus, p, q in LOADS
    ]

    generators = [
        {
            "bus": bus,
            "p_set": p_set,
            "p_max": p_max,
            "droop": 0.05,
            "inertia_h": h,
            "mva_base": mva,
            "in_service": True,
        }
        for bus, p_set, p_max, _v, mva, h in GENERATORS
    ]

    return {
        "s_base_mva": 100.0,
        "f0_hz": 60.0,
        "buses": buses,
        "lines": lines,
        "loads": loads,
        "generators": generators,
    }


def bake(doc: dict) -> dict:
    """Solve the base case; bake ratings (85 % rule) and slack dispatch."""
    network = load_case(doc)
    state = initial_state(network)
    sol = solve_ac(network, state, SolverConfig(tol=1e-10, max_iter=30, flat_start=True))
    if not sol.converged:
        raise RuntimeError(f"base case did not converge: {sol.failure}")

    for k, rec in enumerate(doc["lines"]):
        rec["rating_amps"] = round(float(sol.i_line_amps[k]) / BASE_LOADING, 3)

    for rec in doc["generators"]:
        if rec["bus"] == SLACK_BUS:
            rec["p_set"] = round(float(sol.p_slack), 3)

    # verify: re-solve and check the 85 % base loading
    network = load_case(doc)
    sol2 = solve_ac(network, initial_state(network), SolverConfig(flat_start=True))
    rates = sol2.i_line_pu
    print(f"base solve: {sol2.iterations} iterations, mismatch {sol2.max_mismatch:.2e}")
    print(f"loading rates: min {rates.min():.6f} max {rates.max():.6f}")
    print(f"slack output: {sol2.p_slack:.3f} MW")
    return doc


def main() -> None:
    doc = bake(build_document())
    out = REPO / "cases" / "ieee39.json"
    out.write_text(json.dumps(doc, indent=1) + "\n")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()

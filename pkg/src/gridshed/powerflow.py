"""AC power flow: full Newton-Raphson in polar form.

Load injections are voltage- and frequency-dependent and are recomputed
from the current voltage magnitudes on every Newton iteration; their
voltage derivatives enter the Jacobian analytically.  The solver works on
one connected component at a time (the cascade engine handles islands)
and returns flows, currents, and slack power for the whole network, with
unsolved elements masked out.

Solves hold no shared mutable state: many scenarios can solve in
parallel, one solver call per scenario; a single solve is sequential.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .model import Load, Network


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-8
    max_iter: int = 20
    flat_start: bool = False

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass
class PowerFlowSolution:
    """Converged operating point plus per-line flows and currents.

    Flow sign convention: p_from/q_from are injected into the line at the
    from end (positive means power leaves the from bus).  i_line_pu is the
    larger end current in per-unit of the line's thermal rating.
    """

    v_mag: np.ndarray
    v_ang: np.ndarray
    p_from: np.ndarray
    q_from: np.ndarray
    p_to: np.ndarray
    q_to: np.ndarray
    i_line_pu: np.ndarray
    i_line_amps: np.ndarray
    p_slack: float
    converged: bool
    iterations: int
    max_mismatch: float
    bus_solved: np.ndarray
    line_solved: np.ndarray
    solved_at: float = 0.0
    mismatch_history: tuple[float, ...] = ()
    failure: str | None = None


def effective_load(load: Load, v: float, df: float, stage_status=None) -> tuple[float, float]:
    """Actual (P MW, Q MVAr) drawn by a load at voltage v and deviation df.

    Only connected stages count; stage_status overrides the load's own
    flags (the cascade engine passes its live flags here).
    """
    status = load.stage_status if stage_status is None else stage_status
    fraction = sum(s for s, on in zip(load.stages, status) if on)
    p = load.p0 * fraction * v**load.kpv * (1.0 + load.kpf * df)
    q = load.q0 * fraction * v**load.kqv
    return p, q


def line_current(solution: PowerFlowSolution, k: int) -> float:
    """Loading of line id k in per-unit of its rating (max of both ends)."""
    col = k - 1
    if col < 0 or col >= len(solution.line_solved) or not solution.line_solved[col]:
        raise ValueError(f"line {k} is out of service or not in the solved component")
    return float(solution.i_line_pu[col])


class _SolveContext:
    """Reduced single-component view: index maps, Ybus, injections."""

    def __init__(self, network: Network, state, bus_ids=None, slack_bus=None):
        self.network = network
        n = network.n_bus
        if bus_ids is None:
            bus_ids = [b.id for b in network.buses]
        self.rows = sorted(network.bus_row(b) for b in bus_ids)
        self.local = {row: k for k, row in enumerate(self.rows)}
        self.m = len(self.rows)

        line_in = np.asarray(state.line_in_service, dtype=bool)
        self.line_cols = [
            c
            for c, ln in enumerate(network.lines)
            if line_in[c]
            and network.bus_row(ln.from_bus) in self.local
            and network.bus_row(ln.to_bus) in self.local
        ]

        self.slack_id = slack_bus if slack_bus is not None else network.slack_bus()
        slack_row = network.bus_row(self.slack_id)
        if slack_row not in self.local:
            raise ValueError(f"slack bus {self.slack_id} is not in the solved component")
        self.slack_local = self.local[slack_row]

        # Effective bus types: PV where an in-service generator holds voltage.
        gen_in = np.asarray(state.gen_in_service, dtype=bool)
        self.gen_p_bus = np.zeros(self.m)
        pv_set = set()
        gen_p = np.asarray(state.gen_p_mech, dtype=float)
        for gi, g in enumerate(network.generators):
            row = network.bus_row(g.bus)
            if not gen_in[gi] or row not in self.local:
                continue
            loc = self.local[row]
            self.gen_p_bus[loc] += gen_p[gi]
            pv_set.add(loc)
        pv_set.discard(self.slack_local)
        self.pv = np.array(sorted(pv_set), dtype=int)
        self.pq = np.array(
            sorted(set(range(self.m)) - pv_set - {self.slack_local}), dtype=int
        )
        self.pvpq = np.concatenate([self.pv, self.pq]).astype(int)

        # Loads grouped per local bus, with their live stage flags.
        self.bus_loads: list[list[tuple[Load, tuple]]] = [[] for _ in range(self.m)]
        for li, ld in enumerate(network.loads):
            row = network.bus_row(ld.bus)
            if row in self.local:
                status = tuple(state.stage_status[li])
                self.bus_loads[self.local[row]].append((ld, status))

        self.df = float(state.df)
        self.ybus = self._build_ybus()
        self.v_sched = self._scheduled_voltages()

    def _build_ybus(self):
        m = len(self.line_cols)
        data = np.zeros(4 * m, dtype=complex)
        ii = np.zeros(4 * m, dtype=int)
        jj = np.zeros(4 * m, dtype=int)
        for k, col in enumerate(self.line_cols):
            ln = self.network.lines[col]
            f = self.local[self.network.bus_row(ln.from_bus)]
            t = self.local[self.network.bus_row(ln.to_bus)]
            ys = 1.0 / complex(ln.r, ln.x)
            ysh = 0.5j * ln.b_shunt
            base = 4 * k
            data[base : base + 4] = (ys + ysh, ys + ysh, -ys, -ys)
            ii[base : base + 4] = (f, t, f, t)
            jj[base : base + 4] = (f, t, t, f)
        return sp.csr_matrix((data, (ii, jj)), shape=(self.m, self.m))

    def _scheduled_voltages(self) -> np.ndarray:
        v = np.ones(self.m)
        for loc in list(self.pv) + [self.slack_local]:
            bus = self.network.buses[self.rows[loc]]
            if bus.v_setpoint is not None:
                v[loc] = bus.v_setpoint
        return v

    def load_terms(self, vm: np.ndarray):
        """Per-local-bus load P, Q (MW/MVAr) and their d/dVm at voltage vm."""
        p = np.zeros(self.m)
        q = np.zeros(self.m)
        dp = np.zeros(self.m)
        dq = np.zeros(self.m)
        for loc, entries in enumerate(self.bus_loads):
            v = vm[loc]
            for ld, status in entries:
                pl, ql = effective_load(ld, v, self.df, status)
                p[loc] += pl
                q[loc] += ql
                dp[loc] += ld.kpv * pl / v
                dq[loc] += ld.kqv * ql / v
        return p, q, dp, dq

    def mismatch(self, vm: np.ndarray, va: np.ndarray):
        """F(x) stacked [dP(pv+pq); dQ(pq)] in pu, plus load derivatives."""
        V = vm * np.exp(1j * va)
        s_calc = V * np.conj(self.ybus @ V)
        p_load, q_load, dp, dq = self.load_terms(vm)
        s_spec = (self.gen_p_bus - p_load) / self.network.s_base - 1j * q_load / self.network.s_base
        mis = s_calc - s_spec
        f = np.concatenate([mis.real[self.pvpq], mis.imag[self.pq]])
        return f, V, s_calc, dp / self.network.s_base, dq / self.network.s_base

    def jacobian(self, V: np.ndarray, dp_dv: np.ndarray, dq_dv: np.ndarray):
        ibus = self.ybus @ V
        diag_v = sp.diags(V)
        diag_i = sp.diags(ibus)
        diag_vn = sp.diags(V / np.abs(V))
        ds_dvm = diag_v @ (self.ybus @ diag_vn).conj() + diag_i.conj() @ diag_vn
        ds_dva = 1j * diag_v @ (diag_i - self.ybus @ diag_v).conj()
        # Voltage-dependent loads add diagonal terms (spec = gen - load).
        ds_dvm = ds_dvm + sp.diags(dp_dv + 1j * dq_dv)
        j11 = ds_dva[np.ix_(self.pvpq, self.pvpq)].real
        j12 = ds_dvm[np.ix_(self.pvpq, self.pq)].real
        j21 = ds_dva[np.ix_(self.pq, self.pvpq)].imag
        j22 = ds_dvm[np.ix_(self.pq, self.pq)].imag
        return sp.bmat([[j11, j12], [j21, j22]], format="csr")


def solve_ac(
    network: Network,
    state,
    config: SolverConfig | None = None,
    bus_ids=None,
    slack_bus=None,
) -> PowerFlowSolution:
    """Newton-Raphson solve of one connected component.

    Warm-starts from state.last_solution unless config.flat_start; returns
    converged=False with a failure cause instead of raising on
    non-convergence or a singular Jacobian.
    """
    config = config or SolverConfig()
    ctx = _SolveContext(network, state, bus_ids=bus_ids, slack_bus=slack_bus)

    vm = ctx.v_sched.copy()
    va = np.zeros(ctx.m)
    last = getattr(state, "last_solution", None)
    if not config.flat_start and last is not None:
        prev_ok = np.asarray(last.bus_solved, dtype=bool)
        pv_set = set(ctx.pv.tolist())
        for loc, row in enumerate(ctx.rows):
            if prev_ok[row] and loc != ctx.slack_local and loc not in pv_set:
                vm[loc] = last.v_mag[row]
        for loc, row in enumerate(ctx.rows):
            if prev_ok[row]:
                va[loc] = last.v_ang[row]
        va -= va[ctx.slack_local]

    history = []
    failure = None
    converged = False
    iterations = 0
    n_pvpq = len(ctx.pvpq)
    for _ in range(config.max_iter + 1):
        f, V, s_calc, dp_dv, dq_dv = ctx.mismatch(vm, va)
        max_mis = float(np.max(np.abs(f))) if f.size else 0.0
        history.append(max_mis)
        if max_mis <= config.tol:
            converged = True
            break
        if iterations >= config.max_iter:
            failure = f"no convergence after {iterations} iterations"
            break
        jac = ctx.jacobian(V, dp_dv, dq_dv)
        with np.errstate(all="ignore"):
            dx = spsolve(jac.tocsc(), f)
        if not np.all(np.isfinite(dx)):
            failure = "singular Jacobian"
            break
        iterations += 1
        va[ctx.pvpq] -= dx[:n_pvpq]
        vm[ctx.pq] -= dx[n_pvpq:]
        if np.any(vm[ctx.pq] <= 0):
            failure = "voltage magnitude collapsed below zero"
            break

    return _assemble_solution(ctx, vm, va, converged, iterations, history, failure, state)


def _assemble_solution(
    ctx: _SolveContext, vm, va, converged, iterations, history, failure, state
) -> PowerFlowSolution:
    net = ctx.network
    n, b = net.n_bus, net.n_line
    sol = PowerFlowSolution(
        v_mag=np.zeros(n),
        v_ang=np.zeros(n),
        p_from=np.zeros(b),
        q_from=np.zeros(b),
        p_to=np.zeros(b),
        q_to=np.zeros(b),
        i_line_pu=np.zeros(b),
        i_line_amps=np.zeros(b),
        p_slack=0.0,
        converged=converged,
        iterations=iterations,
        max_mismatch=history[-1] if history else math.inf,
        bus_solved=np.zeros(n, dtype=bool),
        line_solved=np.zeros(b, dtype=bool),
        solved_at=float(getattr(state, "time", 0.0)),
        mismatch_history=tuple(history),
        failure=failure,
    )
    if not converged:
        return sol

    for loc, row in enumerate(ctx.rows):
        sol.v_mag[row] = vm[loc]
        sol.v_ang[row] = va[loc]
        sol.bus_solved[row] = True

    V = vm * np.exp(1j * va)
    for col in ctx.line_cols:
        ln = net.lines[col]
        f = ctx.local[net.bus_row(ln.from_bus)]
        t = ctx.local[net.bus_row(ln.to_bus)]
        ys = 1.0 / complex(ln.r, ln.x)
        ysh = 0.5j * ln.b_shunt
        i_f = (V[f] - V[t]) * ys + V[f] * ysh
        i_t = (V[t] - V[f]) * ys + V[t] * ysh
        s_f = V[f] * np.conj(i_f) * net.s_base
        s_t = V[t] * np.conj(i_t) * net.s_base
        sol.p_from[col] = s_f.real
        sol.q_from[col] = s_f.imag
        sol.p_to[col] = s_t.real
        sol.q_to[col] = s_t.imag
        amps_f = abs(i_f) * net.base_current_amps(ln.from_bus)
        amps_t = abs(i_t) * net.base_current_amps(ln.to_bus)
        sol.i_line_amps[col] = max(amps_f, amps_t)
        sol.i_line_pu[col] = sol.i_line_amps[col] / ln.rating_amps
        sol.line_solved[col] = True

    # Slack generation = network injection plus local load.
    s_calc = V * np.conj(ctx.ybus @ V)
    p_load, _, _, _ = ctx.load_terms(vm)
    sol.p_slack = float(
        s_calc.real[ctx.slack_local] * net.s_base + p_load[ctx.slack_local]
    )
    return sol


def power_mismatch(network: Network, state, solution: PowerFlowSolution, bus_ids=None, slack_bus=None) -> float:
    """Re-evaluate max |mismatch| (pu) at a returned solution (certificate)."""
    ctx = _SolveContext(network, state, bus_ids=bus_ids, slack_bus=slack_bus)
    vm = np.array([solution.v_mag[row] for row in ctx.rows])
    va = np.array([solution.v_ang[row] for row in ctx.rows])
    f, *_ = ctx.mismatch(vm, va)
    return float(np.max(np.abs(f))) if f.size else 0.0

import numpy as np
import pytest

import oracles
from conftest import SCENARIO_G1, SCENARIO_NOOP, solved_random_network
from gridshed import (
    FrequencyParams,
    PolicyConfig,
    Scenario,
    ScenarioEvent,
    detect_islands,
    initial_state,
    load_scenario,
    redistribute_droop,
    run,
    step_frequency,
)
from gridshed.cascade import CascadeEngine, CoiParams


class TestStepFrequency:
    def test_equilibrium(self):
        params = CoiParams(h_sys=4.0, s_sys=8000.0, f0=60.0, damping=1.0)
        assert step_frequency(0.0, 0.0, params, 0.1) == 0.0

    def test_generation_loss_lowers_frequency(self):
        params = CoiParams(h_sys=4.0, s_sys=8000.0, f0=60.0, damping=1.0)
        assert step_frequency(0.0, -500.0, params, 0.1) < 0.0

    def test_undamped_slope_closed_form(self):
        params = CoiParams(h_sys=5.0, s_sys=6000.0, f0=60.0, damping=0.0)
        df = 0.0
        imbalance = -300.0
        n, dt = 40, 0.1
        for _ in range(n):
            df = step_frequency(df, imbalance, params, dt)
        expect = n * dt * imbalance * params.f0 / (2 * params.h_sys * params.s_sys)
        assert df == pytest.approx(expect, rel=1e-12)


class TestRedistributeDroop:
    def test_zero_deviation_keeps_dispatch(self, ieee39):
        state = initial_state(ieee39)
        mech = redistribute_droop(ieee39, state, 0.0)
        np.testing.assert_allclose(mech, [g.p_set for g in ieee39.generators])

    def test_symmetric_units_pick_up_equally(self, ieee39):
        state = initial_state(ieee39)
        mech = redistribute_droop(ieee39, state, -0.3)
        gens = ieee39.generators
        pickup = mech - np.array([g.p_set for g in gens])
        # same droop everywhere: pickup proportional to mva_base unless clamped
        free = [
            gi
            for gi, g in enumerate(gens)
            if pickup[gi] < g.p_max - g.p_set - 1e-9
        ]
        ratios = {round(pickup[gi] / gens[gi].mva_base, 9) for gi in free}
        assert len(ratios) == 1

    def test_clamp_hits_p_max_exactly(self, ieee39):
        state = initial_state(ieee39)
        mech = redistribute_droop(ieee39, state, -3.0)  # absurd dip forces clamps
        for gi, g in enumerate(ieee39.generators):
            assert mech[gi] <= g.p_max + 1e-12
        g5 = next(gi for gi, g in enumerate(ieee39.generators) if g.bus == 34)
        assert mech[g5] == ieee39.generators[g5].p_max  # zero-headroom unit

    def test_out_of_service_unit_produces_nothing(self, ieee39):
        state = initial_state(ieee39)
        state.gen_in_service[0] = False
        mech = redistribute_droop(ieee39, state, -0.2)
        assert mech[0] == 0.0


class TestDetectIslands:
    def test_intact_network_single_component(self, ieee39):
        state = initial_state(ieee39)
        islands = detect_islands(ieee39, state)
        assert len(islands) == 1
        assert len(islands[0].buses) == 39
        assert islands[0].gen_capacity_mw == pytest.approx(
            sum(g.p_max for g in ieee39.generators)
        )

    def test_bridge_removal_splits_two_components(self, ieee39):
        state = initial_state(ieee39)
        bridge = next(
            k for k, ln in enumerate(ieee39.lines) if {ln.from_bus, ln.to_bus} == {2, 39}
        )
        state.line_in_service[bridge] = False
        islands = detect_islands(ieee39, state)
        assert len(islands) == 2
        parts = sorted(islands, key=lambda i: len(i.buses))
        assert parts[0].buses == (39,)
        assert len(parts[1].buses) == 38

    def test_random_removals_match_union_find(self, ieee39):
        rng = np.random.default_rng(77)
        for _ in range(30):
            state = initial_state(ieee39)
            kill = rng.choice(ieee39.n_line, size=rng.integers(1, 12), replace=False)
            state.line_in_service[kill] = False
            mine = sorted(i.buses for i in detect_islands(ieee39, state))
            assert mine == oracles.islands_by_union_find(ieee39, state)


class TestRunScenarios:
    def test_noop_is_flat(self):
        scenario = load_scenario(SCENARIO_NOOP)
        log, traces = run(scenario)
        assert log.records == []
        assert traces.time[0] == 0.0 and traces.time[-1] == pytest.approx(20.0)
        np.testing.assert_allclose(traces.rate, 0.85, atol=1e-3)
        np.testing.assert_allclose(traces.df, 0.0, atol=1e-4)
        np.testing.assert_allclose(traces.v, np.tile(traces.v[0], (len(traces.time), 1)), atol=1e-6)

    def test_g1_outage_without_controller_trips_a_relay(self):
        scenario = load_scenario(SCENARIO_G1, controller_override=False)
        log, _ = run(scenario)
        assert len(log.of_kind("relay-trip")) >= 1

    def test_g1_outage_with_controller_sheds_instead(self):
        scenario = load_scenario(SCENARIO_G1, controller_override=True)
        log, traces = run(scenario)
        assert log.of_kind("relay-trip") == []
        sheds = log.of_kind("shed-command")
        assert sheds
        assert all("bus30" in r.subject for r in sheds)
        assert traces.rate[-1].max() < 1.0

    def test_every_shed_relieves_its_cause_line(self):
        scenario = load_scenario(SCENARIO_G1, controller_override=True)
        log, traces = run(scenario)
        times = list(traces.time)
        for r in log.of_kind("shed-command"):
            line_id = int(r.cause.replace("line", ""))
            col = traces.line_ids.index(line_id)
            at = times.index(pytest.approx(r.time))
            assert traces.rate[at + 1, col] < traces.rate[at, col]

    def test_monotone_shed_count(self):
        scenario = load_scenario(SCENARIO_G1, controller_override=True)
        log, _ = run(scenario)
        shed_times = [r.time for r in log.of_kind("shed-command")]
        assert shed_times == sorted(shed_times)

    def test_relay_trip_preceded_by_overload(self):
        scenario = load_scenario(SCENARIO_G1, controller_override=False)
        log, traces = run(scenario)
        times = list(traces.time)
        for r in log.of_kind("relay-trip"):
            col = traces.line_ids.index(int(r.subject.replace("line", "")))
            at = times.index(pytest.approx(r.time))
            before = traces.rate[:at, col]
            assert (before > 1.0).sum() >= 5  # sustained overload, not a glitch

    def test_log_ordered_by_time(self):
        for mode in (True, False):
            scenario = load_scenario(SCENARIO_G1, controller_override=mode)
            log, _ = run(scenario)
            ts = [r.time for r in log.records]
            assert ts == sorted(ts)

    def test_determinism_bitwise(self):
        scenario = load_scenario(SCENARIO_G1, controller_override=True)
        log1, traces1 = run(scenario)
        log2, traces2 = run(scenario)
        assert log1.to_jsonl() == log2.to_jsonl()
        np.testing.assert_array_equal(traces1.v, traces2.v)
        np.testing.assert_array_equal(traces1.rate, traces2.rate)
        np.testing.assert_array_equal(traces1.df, traces2.df)
        np.testing.assert_array_equal(traces1.p_load, traces2.p_load)

    def test_line_outage_strands_generator_island_survives(self, ieee39):
        # removing line 5 strands bus 39 with its own unit: the island
        # keeps running on a local slack while the main grid continues
        scenario = Scenario(
            network=ieee39,
            events=(ScenarioEvent(t=0.5, kind="line_outage", target=5),),
            t_end=2.0,
            controller=PolicyConfig(enabled=False),
        )
        log, traces = run(scenario)
        assert any(r.kind == "applied-contingency" for r in log.records)
        assert not log.of_kind("island-blackout")
        col = traces.line_ids.index(5)
        assert traces.rate[-1, col] == 0.0
        assert traces.v[-1, 38] > 0.5  # bus 39 alive on its own

    def test_generationless_island_blacks_out(self, ieee39):
        # cutting lines 32 (19-20) and 34 (20-34) strands load bus 20
        scenario = Scenario(
            network=ieee39,
            events=(
                ScenarioEvent(t=0.5, kind="line_outage", target=32),
                ScenarioEvent(t=0.5, kind="line_outage", target=34),
            ),
            t_end=2.0,
            controller=PolicyConfig(enabled=False),
        )
        log, traces = run(scenario)
        blackout = [r for r in log.of_kind("island-blackout") if r.subject == "island buses 20"]
        assert blackout and blackout[0].cause == "no generation"
        assert traces.v[-1, 19] == 0.0
        col = traces.load_buses.index(20)
        assert traces.p_load[-1, col] == 0.0

    def test_load_outage_event_kind(self, ieee39):
        scenario = Scenario(
            network=ieee39,
            events=(ScenarioEvent(t=0.5, kind="load_outage", target=20),),
            t_end=2.0,
            controller=PolicyConfig(enabled=False),
        )
        log, traces = run(scenario)
        bus_col = traces.load_buses.index(20)
        assert traces.p_load[0, bus_col] > 0
        assert traces.p_load[-1, bus_col] == 0.0

    def test_total_blackout_terminates_early(self, ieee39):
        events = tuple(
            ScenarioEvent(t=0.5, kind="generator_outage", target=g.bus)
            for g in ieee39.generators
        )
        scenario = Scenario(
            network=ieee39, events=events, t_end=5.0, controller=PolicyConfig(enabled=False)
        )
        log, traces = run(scenario)
        assert any(
            r.kind == "island-blackout" and r.subject == "entire network"
            for r in log.records
        )
        assert traces.time[-1] < 5.0

    def test_unknown_event_kind_rejected(self, ieee39):
        with pytest.raises(ValueError, match="unknown event kind"):
            Scenario(
                network=ieee39,
                events=(ScenarioEvent(t=0.5, kind="meteor", target=1),),
            )

    def test_event_time_outside_horizon_rejected(self, ieee39):
        with pytest.raises(ValueError, match="outside"):
            Scenario(
                network=ieee39,
                events=(ScenarioEvent(t=30.0, kind="line_outage", target=1),),
                t_end=20.0,
            )

    def test_event_unknown_target_rejected(self, ieee39):
        with pytest.raises(ValueError, match="unknown line"):
            Scenario(
                network=ieee39,
                events=(ScenarioEvent(t=1.0, kind="line_outage", target=99),),
            )
        with pytest.raises(ValueError, match="unknown bus"):
            Scenario(
                network=ieee39,
                events=(ScenarioEvent(t=1.0, kind="generator_outage", target=77),),
            )

    def test_engine_is_single_use(self):
        scenario = load_scenario(SCENARIO_NOOP)
        engine = CascadeEngine(scenario)
        engine.run()
        with pytest.raises(RuntimeError, match="already ran"):
            engine.run()


class TestControllerExhaustion:
    def test_outbound_only_load_never_shed_and_exhaustion_logged(self):
        """Overloaded line whose receiving bus hosts no load: the only load
        sits at the sending bus (negative impact factor), so the controller
        has nothing to shed and reports exhaustion."""
        from gridshed import load_case

        doc = {
            "s_base_mva": 100.0,
            "f0_hz": 60.0,
            "buses": [
                {"id": 1, "kind": "slack", "base_kv": 138.0, "v_setpoint": 1.0},
                {"id": 2, "kind": "pv", "base_kv": 138.0, "v_setpoint": 1.0},
            ],
            "lines": [
                {
                    "id": 1,
                    "from_bus": 1,
                    "to_bus": 2,
                    "r": 0.005,
                    "x": 0.05,
                    "b_shunt": 0.0,
                    "rating_amps": 150.0,  # well under the exported flow
                }
            ],
            "loads": [{"bus": 2, "p0": 20.0, "q0": 4.0, "kpf": 0.0}],
            "generators": [
                {"bus": 1, "p_set": 0.0, "p_max": 500.0, "mva_base": 500.0},
                {"bus": 2, "p_set": 120.0, "p_max": 200.0, "mva_base": 200.0},
            ],
        }
        net = load_case(doc)
        scenario = Scenario(
            network=net,
            t_end=2.0,
            controller=PolicyConfig(enabled=True, safety_margin_s=1e9),
        )
        log, _ = run(scenario)
        assert log.of_kind("shed-command") == []
        assert log.of_kind("controller-exhausted")


class TestMultiLoadBus:
    def test_shed_targets_the_load_the_controller_picked(self):
        """Two loads at one receiving bus: repeated sheds walk the first
        load's stages before touching the second load."""
        from gridshed import load_case
        from gridshed.controller import control_step
        from gridshed.powerflow import SolverConfig, solve_ac
        from gridshed import initial_state

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
                    "r": 0.005,
                    "x": 0.05,
                    "b_shunt": 0.0,
                    "rating_amps": 200.0,
                }
            ],
            "loads": [
                {"bus": 2, "p0": 60.0, "q0": 10.0, "kpf": 0.0},
                {"bus": 2, "p0": 40.0, "q0": 5.0, "kpf": 0.0},
            ],
            "generators": [
                {"bus": 1, "p_set": 100.0, "p_max": 500.0, "mva_base": 500.0}
            ],
        }
        net = load_case(doc)
        scenario = Scenario(
            network=net,
            t_end=3.0,
            controller=PolicyConfig(enabled=True, safety_margin_s=1e9),
        )
        engine = CascadeEngine(scenario)
        log, _ = engine.run()
        sheds = log.of_kind("shed-command")
        assert sheds
        # the first load's four stages go first, then the second load's
        first_load_stages = sum(
            1 for on in engine.state.stage_status[0] if not on
        )
        second_load_stages = sum(
            1 for on in engine.state.stage_status[1] if not on
        )
        assert first_load_stages == 4 or second_load_stages == 0


class TestEventAtTimeZero:
    def test_applies_before_first_record(self, ieee39):
        scenario = Scenario(
            network=ieee39,
            events=(ScenarioEvent(t=0.0, kind="load_outage", target=20),),
            t_end=1.0,
            controller=PolicyConfig(enabled=False),
        )
        log, traces = run(scenario)
        assert log.records[0].time == 0.0
        col = traces.load_buses.index(20)
        assert traces.p_load[0, col] == 0.0


class TestIslandContinuation:
    def test_islanded_generator_survives_with_local_slack(self, ieee39):
        """Cutting both corridor lines at once strands bus 30 with its own
        unit: that island keeps running on a local slack, the main grid
        continues, nothing blacks out."""
        scenario = Scenario(
            network=ieee39,
            events=(
                ScenarioEvent(t=0.5, kind="line_outage", target=2),
                ScenarioEvent(t=0.5, kind="line_outage", target=17),
            ),
            t_end=3.0,
            controller=PolicyConfig(enabled=False),
        )
        log, traces = run(scenario)
        assert not log.of_kind("island-blackout")
        assert traces.v[-1, 29] > 0.5  # bus 30 still energized
        assert traces.v[-1, 0] > 0.5


class TestBalanceLog:
    def test_every_step_conserves_power(self):
        scenario = load_scenario(SCENARIO_G1, controller_override=True)
        engine = CascadeEngine(scenario)
        engine.run()
        worst = max(abs(g - l - s) for _, g, l, s in engine.balance_log)
        assert worst / scenario.network.s_base < 10 * scenario.solver.tol

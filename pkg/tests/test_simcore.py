"""Simulator core: device dynamics, dispatch traces, conservation fuzz."""

import numpy as np
import pytest

from offgrid.data import ExogenousSeries, SynthParams, synth_series
from offgrid.simcore import (
    ContractViolation,
    ControlAction,
    CostBreakdown,
    FailureProcess,
    META_ACTIONS,
    MetaAction,
    Microgrid,
    MicrogridConfig,
    SimState,
    balance_and_costs,
    battery_step,
    dispatch,
    fuel_cost,
    initial_state,
    observe,
    reward,
    step,
)


def make_state(soc=50.0, cap=120.0, available=True, h=1, load=20.0, pv=10.0, cycles=0.0):
    return SimState(
        soc=soc,
        cycles=cycles,
        battery_available=available,
        effective_capacity=cap,
        t=0,
        load_hist=np.full(h + 1, float(load)),
        pv_hist=np.full(h + 1, float(pv)),
    )


def flat_series(n, load=20.0, pv=10.0):
    t0 = np.datetime64("2016-01-01T00:00", "s")
    ts = t0 + np.arange(n) * np.timedelta64(1, "h")
    return ExogenousSeries(ts, np.full(n, float(load)), np.full(n, float(pv)))


CFG = MicrogridConfig()


class TestBatteryStep:
    def test_charge_hand_value(self):
        s = battery_step(make_state(soc=50.0), 10.0, 0.0, CFG)
        assert s.soc == pytest.approx(50.0 + 0.75 * 10.0)  # 57.5

    def test_zero_flows_identity(self):
        s0 = make_state(soc=50.0)
        s = battery_step(s0, 0.0, 0.0, CFG)
        assert s.soc == 50.0
        assert s.cycles == 0.0

    def test_discharge_to_empty(self):
        s = battery_step(make_state(soc=10.0), 0.0, 7.5, CFG)
        assert s.soc == pytest.approx(0.0)

    def test_cycle_counting_throughput(self):
        s = battery_step(make_state(soc=50.0), 10.0, 0.0, CFG)
        assert s.cycles == pytest.approx((0.75 * 10.0) / (2 * 120.0))

    def test_degradation_shrinks_capacity(self):
        cfg = MicrogridConfig(degradation_slope=10.0)
        s = battery_step(make_state(soc=0.0), 10.0, 0.0, cfg)
        assert s.effective_capacity == pytest.approx(120.0 - 10.0 * s.cycles)

    def test_infeasible_flow_is_contract_violation(self):
        with pytest.raises(ContractViolation):
            battery_step(make_state(soc=119.0), 100.0, 0.0, CFG)


class TestFuelCost:
    def test_off_is_free(self):
        assert fuel_cost(0.0, False, CFG) == (0.0, 0.0)

    def test_linear_curve(self):
        liters, euros = fuel_cost(9.0, True, CFG)
        assert liters == pytest.approx(9.0)
        assert euros == pytest.approx(9.0)

    def test_fixed_term_when_idling(self):
        cfg = MicrogridConfig(f1=2.0)
        liters, euros = fuel_cost(0.0, True, cfg)
        assert liters == pytest.approx(2.0)
        assert euros == pytest.approx(2.0)

    def test_band_violation(self):
        cfg = MicrogridConfig(p_gen_min=2.0)
        with pytest.raises(ValueError):
            fuel_cost(1.0, True, cfg)


class TestBalance:
    def test_surplus_curtails(self):
        costs = balance_and_costs(30.0, 20.0, ControlAction(), CFG)
        assert costs.curtailed_kw == pytest.approx(10.0)
        assert costs.shed_kw == 0.0
        assert costs.curt_cost == pytest.approx(15.0)

    def test_deficit_sheds(self):
        costs = balance_and_costs(0.0, 5.0, ControlAction(), CFG)
        assert costs.shed_kw == pytest.approx(5.0)
        assert costs.shed_cost == pytest.approx(50.0)

    def test_exact_balance(self):
        costs = balance_and_costs(20.0, 20.0, ControlAction(), CFG)
        assert costs.curtailed_kw == 0.0
        assert costs.shed_kw == 0.0

    def test_reward_is_negated_total(self):
        costs = CostBreakdown(fuel_cost=2.0, curt_cost=3.0, shed_cost=5.0)
        assert reward(costs) == -10.0
        assert reward(CostBreakdown()) == 0.0


class TestDispatch:
    def test_surplus_charge(self):
        a = dispatch(20.0, MetaAction.CHARGE, make_state(soc=0.0), CFG)
        assert a == ControlAction(p_ch=20.0)

    def test_deficit_discharge_full_cover(self):
        a = dispatch(-15.0, MetaAction.DISCHARGE, make_state(soc=50.0), CFG)
        assert a.p_dis == pytest.approx(15.0)
        assert a.p_gen == 0.0

    def test_deficit_discharge_cascades_to_generator(self):
        # only 5 kW deliverable: soc * eta_dis = 6.667 * 0.75 = 5
        state = make_state(soc=5.0 / 0.75)
        a = dispatch(-15.0, MetaAction.DISCHARGE, state, CFG)
        assert a.p_dis == pytest.approx(5.0)
        assert a.p_gen == pytest.approx(9.0)
        costs = balance_and_costs(0.0, 15.0, a, CFG)
        assert costs.shed_kw == pytest.approx(1.0)

    def test_generator_first_then_battery(self):
        a = dispatch(-15.0, MetaAction.GENERATOR, make_state(soc=50.0), CFG)
        assert a.p_gen == pytest.approx(9.0)
        assert a.p_dis == pytest.approx(6.0)

    def test_failed_battery_generator(self):
        a = dispatch(-8.0, MetaAction.GENERATOR, make_state(available=False), CFG)
        assert a == ControlAction(p_gen=8.0)

    def test_failed_battery_discharge_cascades(self):
        a = dispatch(-8.0, MetaAction.DISCHARGE, make_state(available=False), CFG)
        assert a.p_dis == 0.0
        assert a.p_gen == pytest.approx(8.0)

    def test_surplus_with_discharge_is_idle(self):
        a = dispatch(20.0, MetaAction.DISCHARGE, make_state(), CFG)
        assert a == ControlAction()

    def test_deficit_with_charge_is_idle(self):
        a = dispatch(-20.0, MetaAction.CHARGE, make_state(), CFG)
        assert a == ControlAction()

    def test_charge_clipped_by_headroom(self):
        state = make_state(soc=119.0, cap=120.0)
        a = dispatch(50.0, MetaAction.CHARGE, state, CFG)
        assert a.p_ch == pytest.approx(1.0 / 0.75)

    def test_generator_minimum_floor(self):
        cfg = MicrogridConfig(p_gen_min=3.0)
        a = dispatch(-1.0, MetaAction.GENERATOR, make_state(soc=0.0), cfg)
        assert a.p_gen == pytest.approx(3.0)


class TestObserve:
    def test_layout_h0(self):
        assert observe(make_state(h=0)).shape == (3,)

    def test_layout_values(self):
        v = observe(make_state(soc=57.5, h=1, load=10.0, pv=20.0))
        assert np.allclose(v, [57.5, 10.0, 10.0, 20.0, 20.0])

    def test_equal_states_equal_vectors(self):
        a, b = make_state(), make_state()
        assert np.array_equal(observe(a), observe(b))

    def test_failed_battery_reads_zero(self):
        v = observe(make_state(soc=40.0, available=False))
        assert v[0] == 0.0


class TestStep:
    def test_composition_identity(self):
        series = flat_series(4, load=10.0, pv=30.0)
        cfg = MicrogridConfig()
        s0 = initial_state(series, cfg, h=2)
        s1, rew, costs, action = step(s0, MetaAction.CHARGE, series, cfg)
        expect_action = dispatch(s0.delta_p, MetaAction.CHARGE, s0, cfg)
        assert action == expect_action
        assert costs == balance_and_costs(s0.pv, s0.load, expect_action, cfg)
        assert s1.soc == battery_step(s0, action.p_ch, action.p_dis, cfg).soc
        assert rew == reward(costs)

    def test_no_failure_with_degenerate_process(self):
        series = flat_series(50)
        env = Microgrid(series, h=1, failure=FailureProcess(p0=1.0, enabled=True), seed=3)
        env.reset()
        done = False
        while not done:
            _, _, _, _, done = env.step_meta(MetaAction.DISCHARGE)
            assert env.state.battery_available

    def test_series_exhaustion_signals_episode_end(self):
        series = flat_series(3)
        env = Microgrid(series, h=1)
        env.reset()
        _, _, _, _, done = env.step_meta(MetaAction.CHARGE)
        assert not done
        _, _, _, _, done = env.step_meta(MetaAction.CHARGE)
        assert done
        with pytest.raises(IndexError):
            env.step_meta(MetaAction.CHARGE)

    def test_failed_battery_deficit_generator(self):
        series = flat_series(4, load=8.0, pv=0.0)
        cfg = MicrogridConfig()
        s0 = initial_state(series, cfg, h=1, soc0=50.0)
        fp = FailureProcess(p0=0.0, enabled=True)  # fails immediately
        s1, _, costs, action = step(s0, MetaAction.GENERATOR, series, cfg, fp, np.random.default_rng(0))
        assert action.p_dis == 0.0
        assert action.p_gen == pytest.approx(8.0)
        assert costs.shed_kw == pytest.approx(0.0)


class TestFailureProcess:
    def test_repair_countdown(self):
        fp = FailureProcess(p0=0.0, repair_hours=3, enabled=True)
        rng = np.random.default_rng(0)
        avail = [fp.advance(rng, t) for t in range(4)]
        # fails at t=0, down for exactly repair_hours steps, then draws again
        assert avail == [False, False, False, False]  # p stays 0 -> fails again

    def test_restore_after_repair(self):
        fp = FailureProcess(p0=1.0, repair_hours=3, enabled=True)
        fp.hours_down = 3
        rng = np.random.default_rng(0)
        avail = [fp.advance(rng, t) for t in range(5)]
        assert avail == [False, False, False, True, True]

    def test_linear_decay_clips_at_zero(self):
        fp = FailureProcess(p0=0.99, decay_per_step=0.1, enabled=True)
        assert fp.survival_probability(0) == pytest.approx(0.99)
        assert fp.survival_probability(5) == pytest.approx(0.49)
        assert fp.survival_probability(100) == 0.0

    def test_disabled_never_fails(self):
        fp = FailureProcess(p0=0.0, enabled=False)
        rng = np.random.default_rng(0)
        assert all(fp.advance(rng, t) for t in range(100))


def test_conservation_fuzz():
    """Balance identity, SoC bounds and exact reward accounting under random
    meta-actions, degradation, and battery failures."""
    params = SynthParams(seed=5, days=30, mean_load_kw=15, load_daily_amp=8, pv_peak_kw=60)
    series = synth_series(params)
    cfg = MicrogridConfig(degradation_slope=0.5)
    env = Microgrid(
        series,
        cfg,
        h=4,
        failure=FailureProcess(p0=0.95, decay_per_step=0.001, enabled=True),
        seed=11,
    )
    env.reset()
    rng = np.random.default_rng(8)
    done = False
    while not done:
        state = env.state
        y = META_ACTIONS[rng.integers(3)]
        _, rew, costs, action, done = env.step_meta(y)
        lhs = state.pv + action.p_gen + action.p_dis + costs.shed_kw
        rhs = action.p_ch + costs.curtailed_kw + state.load
        assert abs(lhs - rhs) <= 1e-9
        assert rew == -(costs.fuel_cost + costs.curt_cost + costs.shed_cost)
        assert rew <= 0.0
        assert action.p_ch == 0.0 or action.p_dis == 0.0
        s = env.state
        assert -1e-12 <= s.soc <= s.effective_capacity + 1e-12


def test_static_regime_capacity_constant():
    series = flat_series(100, load=5.0, pv=20.0)
    env = Microgrid(series, MicrogridConfig(degradation_slope=0.0), h=1)
    env.reset()
    done = False
    while not done:
        _, _, _, _, done = env.step_meta(MetaAction.CHARGE)
        assert env.state.effective_capacity == 120.0


def test_determinism_same_seed_same_trajectory():
    params = SynthParams(seed=1, days=10)
    series = synth_series(params)
    actions = [META_ACTIONS[i % 3] for i in range(len(series) - 1)]

    def run():
        env = Microgrid(
            series, h=3, failure=FailureProcess(p0=0.9, enabled=True), seed=42, record=True
        )
        env.reset()
        out = []
        for a in actions:
            _, rew, _, _, done = env.step_meta(a)
            out.append(rew)
            if done:
                break
        return out

    assert run() == run()


def test_trace_export_roundtrip(tmp_path):
    series = flat_series(10, load=5.0, pv=20.0)
    env = Microgrid(series, h=1, record=True)
    env.reset()
    total = 0.0
    done = False
    while not done:
        _, rew, _, _, done = env.step_meta(MetaAction.CHARGE)
        total += rew
    path = tmp_path / "trace.csv"
    env.write_trace(path)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "t,soc,load,pv,p_ch,p_dis,p_gen,curt,shed,reward"
    resummed = sum(float(r.split(",")[-1]) for r in rows[1:])
    assert resummed == pytest.approx(total, abs=1e-9)
    assert len(rows) - 1 == env.n_steps

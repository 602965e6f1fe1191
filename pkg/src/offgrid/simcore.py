"""Microgrid MDP core: device dynamics, dispatch, costs, failures.

All power flows are kW, energies kWh, prices EUR/kWh, one simulation step
is ``dt`` hours. A step consumes the realized load/PV of the current hour
(already part of the state), expands the chosen meta-action into a feasible
dispatch, books the resulting costs, and shifts the exogenous histories by
one hour. The meta-action path can never violate device limits; direct
continuous actions (the MPC) are clipped to what the devices can do.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .data import ExogenousSeries

BALANCE_TOL = 1e-9
SOC_SNAP = 1e-6  # absorbs LP-solution float dust on the direct-action path


class ContractViolation(RuntimeError):
    """An internal caller handed the simulator an infeasible post-state."""


@dataclass(frozen=True)
class MicrogridConfig:
    """Physical and economic parameters; defaults are the reference sizing."""

    s_max: float = 120.0  # battery capacity, kWh
    p_ch_max: float = 100.0  # max charge rate, kW
    p_dis_max: float = 100.0  # max discharge rate, kW
    eta_ch: float = 0.75
    eta_dis: float = 0.75
    p_gen_max: float = 9.0  # generator capacity, kW
    p_gen_min: float = 0.0  # minimum stable generation, kW
    f1: float = 0.0  # fixed fuel draw while running, l/h
    f2: float = 1.0  # marginal fuel slope, l/kWh
    price_fuel: float = 1.0  # EUR per unit fuel
    price_curt: float = 1.5  # EUR/kWh curtailed
    price_shed: float = 10.0  # EUR/kWh shed
    dt: float = 1.0  # step length, h
    p_res_max: float = 120.0  # PV nameplate, kW
    degradation_slope: float = 0.0  # capacity loss per cycle, kWh/cycle
    eta_ch_slope: float = 0.0  # optional efficiency loss per cycle
    eta_dis_slope: float = 0.0

    def __post_init__(self):
        if self.s_max < 0 or self.dt <= 0:
            raise ValueError("s_max >= 0 and dt > 0 required")
        if not (0 < self.eta_ch <= 1 and 0 < self.eta_dis <= 1):
            raise ValueError("efficiencies must lie in (0, 1]")
        if not 0 <= self.p_gen_min <= self.p_gen_max:
            raise ValueError("generator band invalid")
        if min(self.price_fuel, self.price_curt, self.price_shed) < 0:
            raise ValueError("prices must be non-negative")
        if min(self.p_ch_max, self.p_dis_max, self.p_res_max) < 0:
            raise ValueError("rate limits must be non-negative")


class MetaAction(enum.IntEnum):
    CHARGE = 0
    DISCHARGE = 1
    GENERATOR = 2


META_ACTIONS = (MetaAction.CHARGE, MetaAction.DISCHARGE, MetaAction.GENERATOR)


@dataclass(frozen=True)
class ControlAction:
    p_ch: float = 0.0
    p_dis: float = 0.0
    p_gen: float = 0.0

    def validate(self, cfg: MicrogridConfig, allow_simultaneous: bool = False) -> None:
        if min(self.p_ch, self.p_dis, self.p_gen) < 0:
            raise ValueError("negative power flow")
        if self.p_ch > cfg.p_ch_max + 1e-9 or self.p_dis > cfg.p_dis_max + 1e-9:
            raise ValueError("battery rate limit exceeded")
        if self.p_gen > cfg.p_gen_max + 1e-9:
            raise ValueError("generator above capacity")
        if 1e-9 < self.p_gen < cfg.p_gen_min - 1e-9:
            raise ValueError("generator below minimum stable generation")
        if not allow_simultaneous and self.p_ch > 1e-9 and self.p_dis > 1e-9:
            raise ValueError("simultaneous charge and discharge")


@dataclass(frozen=True)
class CostBreakdown:
    fuel_cost: float = 0.0
    curt_cost: float = 0.0
    shed_cost: float = 0.0
    curtailed_kw: float = 0.0
    shed_kw: float = 0.0
    fuel_liters: float = 0.0

    @property
    def total(self) -> float:
        return self.fuel_cost + self.curt_cost + self.shed_cost


@dataclass
class SimState:
    """Deterministic part (battery, time) + stochastic part (histories).

    Histories are ordered newest-first: ``load_hist[0]`` is the realized load
    of the current hour, ``load_hist[h]`` the value h hours ago.
    """

    soc: float
    cycles: float
    battery_available: bool
    effective_capacity: float
    t: int
    load_hist: np.ndarray
    pv_hist: np.ndarray

    @property
    def usable_capacity(self) -> float:
        return self.effective_capacity if self.battery_available else 0.0

    @property
    def usable_soc(self) -> float:
        return self.soc if self.battery_available else 0.0

    @property
    def load(self) -> float:
        return float(self.load_hist[0])

    @property
    def pv(self) -> float:
        return float(self.pv_hist[0])

    @property
    def delta_p(self) -> float:
        """Residual generation of the current hour (realized PV minus load)."""
        return self.pv - self.load


@dataclass
class FailureProcess:
    """Abrupt battery-failure process: survive each hour w.p. p_t, where
    p_t = max(p0 - decay_per_step * t, 0); a failure takes the battery out
    for repair_hours steps, then capacity is restored."""

    p0: float = 1.0
    decay_per_step: float = 0.0
    repair_hours: int = 370
    enabled: bool = False
    hours_down: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p0 <= 1.0:
            raise ValueError("p0 must be a probability")
        if self.repair_hours < 1:
            raise ValueError("repair_hours must be >= 1")

    def survival_probability(self, t: int) -> float:
        return max(self.p0 - self.decay_per_step * t, 0.0)

    def advance(self, rng: np.random.Generator, t: int) -> bool:
        """One hour of the process; returns availability for this step."""
        if not self.enabled:
            return True
        if self.hours_down > 0:
            self.hours_down -= 1
            return False
        if rng.random() < self.survival_probability(t):
            return True
        self.hours_down = self.repair_hours - 1  # this hour is the first one down
        return False

    def copy(self) -> "FailureProcess":
        return FailureProcess(
            self.p0, self.decay_per_step, self.repair_hours, self.enabled, self.hours_down
        )


def battery_step(state: SimState, p_ch: float, p_dis: float, cfg: MicrogridConfig) -> SimState:
    """Advance SoC, cycle count and degraded capacity by one step.

    Flows must already be feasible (see dispatch / the env's direct-action
    clipping); an out-of-bounds post-state beyond float dust is a bug in the
    caller and raises ContractViolation.
    """
    eta_ch = max(cfg.eta_ch - cfg.eta_ch_slope * state.cycles, 1e-6)
    eta_dis = max(cfg.eta_dis - cfg.eta_dis_slope * state.cycles, 1e-6)
    soc = state.soc + cfg.dt * (eta_ch * p_ch - p_dis / eta_dis)
    cycles = state.cycles
    if cfg.s_max > 0:
        cycles += cfg.dt * (eta_ch * p_ch + p_dis / eta_dis) / (2.0 * cfg.s_max)
    capacity = max(cfg.s_max - cfg.degradation_slope * cycles, 0.0)
    if soc < -SOC_SNAP or soc > capacity + SOC_SNAP:
        raise ContractViolation(
            f"SoC {soc:.9f} outside [0, {capacity:.9f}] after flows ch={p_ch}, dis={p_dis}"
        )
    soc = min(max(soc, 0.0), capacity)
    return replace(state, soc=soc, cycles=cycles, effective_capacity=capacity)


def fuel_cost(p_gen: float, on: bool, cfg: MicrogridConfig):
    """Fuel use of the generator hour: (liters, euros)."""
    if not on:
        if p_gen != 0.0:
            raise ValueError("generator off but p_gen nonzero")
        return 0.0, 0.0
    if not cfg.p_gen_min - 1e-9 <= p_gen <= cfg.p_gen_max + 1e-9:
        raise ValueError(f"p_gen {p_gen} outside [{cfg.p_gen_min}, {cfg.p_gen_max}]")
    liters = (cfg.f1 + cfg.f2 * p_gen) * cfg.dt
    return liters, liters * cfg.price_fuel


def balance_and_costs(
    p_res: float, load: float, action: ControlAction, cfg: MicrogridConfig
) -> CostBreakdown:
    """Book the power balance of one hour and its costs.

    residual = p_res + p_gen + p_dis - p_ch - load; a positive residual is
    curtailed, a negative one shed, so the balance identity
    p_res + p_gen + p_dis + shed = p_ch + curtailed + load holds exactly.
    """
    residual = p_res + action.p_gen + action.p_dis - action.p_ch - load
    curtailed = max(residual, 0.0)
    shed = max(-residual, 0.0)
    liters, fuel_eur = fuel_cost(action.p_gen, action.p_gen > 0.0, cfg)
    return CostBreakdown(
        fuel_cost=fuel_eur,
        curt_cost=curtailed * cfg.dt * cfg.price_curt,
        shed_cost=shed * cfg.dt * cfg.price_shed,
        curtailed_kw=curtailed,
        shed_kw=shed,
        fuel_liters=liters,
    )


def reward(costs: CostBreakdown) -> float:
    """Non-positive reward: the negated cost of the hour."""
    return -(costs.fuel_cost + costs.curt_cost + costs.shed_cost)


def dispatch(
    delta_p: float, y: MetaAction, state: SimState, cfg: MicrogridConfig
) -> ControlAction:
    """Expand a meta-action into a feasible dispatch for the realized residual.

    Surplus hours only act on CHARGE; deficit hours allocate either battery
    first (DISCHARGE) or generator first (GENERATOR), each covering what the
    prior device could not. All flows are clipped to rate limits and to the
    energy actually storable/deliverable, so the result never violates the
    battery bounds; whatever remains becomes curtailment or shedding.
    """
    p_ch = p_dis = p_gen = 0.0
    eta_ch = max(cfg.eta_ch - cfg.eta_ch_slope * state.cycles, 1e-6)
    eta_dis = max(cfg.eta_dis - cfg.eta_dis_slope * state.cycles, 1e-6)
    # charging itself consumes cycles, shrinking capacity within the step
    k = cfg.degradation_slope / (2.0 * cfg.s_max) if cfg.s_max > 0 else 0.0
    if delta_p >= 0.0:
        if y == MetaAction.CHARGE and state.battery_available:
            headroom_kw = (state.effective_capacity - state.soc) / (eta_ch * cfg.dt * (1.0 + k))
            p_ch = min(delta_p, cfg.p_ch_max, max(headroom_kw, 0.0))
    else:
        deficit = -delta_p
        deliverable_kw = state.usable_soc * eta_dis / cfg.dt
        if y == MetaAction.DISCHARGE:
            if state.battery_available:
                p_dis = min(deficit, cfg.p_dis_max, deliverable_kw)
            remaining = deficit - p_dis
            if remaining > 1e-12:
                p_gen = min(remaining, cfg.p_gen_max)
        elif y == MetaAction.GENERATOR:
            p_gen = min(deficit, cfg.p_gen_max)
            remaining = deficit - p_gen
            if remaining > 1e-12 and state.battery_available:
                p_dis = min(remaining, cfg.p_dis_max, deliverable_kw)
        # CHARGE during a deficit leaves every device idle (full shed)
    if 0.0 < p_gen < cfg.p_gen_min:
        p_gen = cfg.p_gen_min  # stable-generation floor; excess is curtailed
    return ControlAction(p_ch=p_ch, p_dis=p_dis, p_gen=p_gen)


def initial_state(series: ExogenousSeries, cfg: MicrogridConfig, h: int, t0: int = 0,
                  soc0: float | None = None) -> SimState:
    """State at series index t0 with histories backfilled before the start."""
    if not 0 <= t0 < len(series):
        raise ValueError("t0 outside series")
    idx = np.maximum(t0 - np.arange(h + 1), 0)
    soc = 0.0 if soc0 is None else float(soc0)
    if not 0.0 <= soc <= cfg.s_max:
        raise ValueError("initial SoC outside capacity")
    return SimState(
        soc=soc,
        cycles=0.0,
        battery_available=True,
        effective_capacity=cfg.s_max,
        t=t0,
        load_hist=series.load_kw[idx].copy(),
        pv_hist=series.pv_kw[idx].copy(),
    )


def _shift_histories(state: SimState, series: ExogenousSeries, t_next: int) -> SimState:
    load_hist = np.empty_like(state.load_hist)
    pv_hist = np.empty_like(state.pv_hist)
    load_hist[1:] = state.load_hist[:-1]
    pv_hist[1:] = state.pv_hist[:-1]
    load_hist[0] = series.load_kw[t_next]
    pv_hist[0] = series.pv_kw[t_next]
    return replace(state, t=t_next, load_hist=load_hist, pv_hist=pv_hist)


def step_action(
    state: SimState,
    action: ControlAction,
    series: ExogenousSeries,
    cfg: MicrogridConfig,
    failure: FailureProcess | None = None,
    rng: np.random.Generator | None = None,
    episode_t: int | None = None,
):
    """Advance one hour under a continuous dispatch action.

    The action is clipped to device feasibility (dead battery, SoC bounds,
    rate and band limits) exactly as the physical plant would refuse
    infeasible commands; costs are booked on what actually flowed.
    Returns (next_state, reward, costs, applied_action).
    """
    if state.t + 1 >= len(series):
        raise IndexError("series exhausted; episode is over")
    if failure is not None:
        t_clock = state.t if episode_t is None else episode_t
        available = failure.advance(rng if rng is not None else np.random.default_rng(), t_clock)
        was_available = state.battery_available
        state = replace(state, battery_available=available)
        if available and not was_available:
            state = replace(state, soc=min(state.soc, state.effective_capacity))

    eta_ch = max(cfg.eta_ch - cfg.eta_ch_slope * state.cycles, 1e-6)
    eta_dis = max(cfg.eta_dis - cfg.eta_dis_slope * state.cycles, 1e-6)
    k = cfg.degradation_slope / (2.0 * cfg.s_max) if cfg.s_max > 0 else 0.0
    p_ch = min(max(action.p_ch, 0.0), cfg.p_ch_max)
    p_dis = min(max(action.p_dis, 0.0), cfg.p_dis_max)
    if not state.battery_available:
        p_ch = p_dis = 0.0
    else:
        # keep soc' within [0, capacity'], where capacity' shrinks with the
        # cycle throughput of this very step
        cap_room = (state.effective_capacity - state.soc) / cfg.dt
        p_ch_max_soc = (cap_room + p_dis * (1.0 - k) / eta_dis) / (eta_ch * (1.0 + k))
        if p_ch > p_ch_max_soc:
            p_ch = max(p_ch_max_soc, 0.0)
        if state.soc + cfg.dt * (eta_ch * p_ch - p_dis / eta_dis) < 0.0:
            p_dis = min(p_dis, max((state.soc / cfg.dt + eta_ch * p_ch) * eta_dis, 0.0))
    p_gen = min(max(action.p_gen, 0.0), cfg.p_gen_max)
    if 0.0 < p_gen < cfg.p_gen_min:
        p_gen = cfg.p_gen_min
    applied = ControlAction(p_ch=p_ch, p_dis=p_dis, p_gen=p_gen)

    costs = balance_and_costs(state.pv, state.load, applied, cfg)
    next_state = battery_step(state, p_ch, p_dis, cfg)
    next_state = _shift_histories(next_state, series, state.t + 1)
    return next_state, reward(costs), costs, applied


def step(
    state: SimState,
    y: MetaAction,
    series: ExogenousSeries,
    cfg: MicrogridConfig,
    failure: FailureProcess | None = None,
    rng: np.random.Generator | None = None,
    episode_t: int | None = None,
):
    """Advance one hour under a meta-action (failure draw, dispatch, booking)."""
    if state.t + 1 >= len(series):
        raise IndexError("series exhausted; episode is over")
    if failure is not None:
        t_clock = state.t if episode_t is None else episode_t
        available = failure.advance(rng if rng is not None else np.random.default_rng(), t_clock)
        was_available = state.battery_available
        state = replace(state, battery_available=available)
        if available and not was_available:
            state = replace(state, soc=min(state.soc, state.effective_capacity))
    action = dispatch(state.delta_p, y, state, cfg)
    costs = balance_and_costs(state.pv, state.load, action, cfg)
    next_state = battery_step(state, action.p_ch, action.p_dis, cfg)
    next_state = _shift_histories(next_state, series, state.t + 1)
    return next_state, reward(costs), costs, action


def observe(state: SimState) -> np.ndarray:
    """Fixed-layout observation: [usable SoC, load history, PV history].

    Length 1 + 2*(h+1). A failed battery reads as SoC 0, which is the only
    signal a controller gets about the outage.
    """
    return np.concatenate(([state.usable_soc], state.load_hist, state.pv_hist))


@dataclass
class Microgrid:
    """Stateful episode wrapper around the pure step functions.

    One instance per worker; the only stochasticity it owns is the failure
    process, driven by the instance rng.
    """

    series: ExogenousSeries
    cfg: MicrogridConfig = field(default_factory=MicrogridConfig)
    h: int = 24
    failure: FailureProcess | None = None
    seed: int = 0
    soc0: float | None = None
    record: bool = False

    def __post_init__(self):
        if (self.series.pv_kw > self.cfg.p_res_max + 1e-9).any():
            raise ValueError("series PV exceeds the configured nameplate p_res_max")
        if len(self.series) < 2:
            raise ValueError("need at least two hours of data for one step")
        self.state: SimState | None = None
        self.rng = np.random.default_rng(self.seed)
        self._episode_t = 0
        self._failure: FailureProcess | None = None
        self.trace: list = []

    @property
    def n_steps(self) -> int:
        return len(self.series) - 1

    @property
    def obs_dim(self) -> int:
        return 1 + 2 * (self.h + 1)

    def reset(self) -> np.ndarray:
        self.state = initial_state(self.series, self.cfg, self.h, soc0=self.soc0)
        self._episode_t = 0
        self._failure = self.failure.copy() if self.failure is not None else None
        self.trace = []
        return observe(self.state)

    def _record(self, state, action, costs, rew):
        if self.record:
            self.trace.append(
                (
                    state.t,
                    state.soc,
                    state.load,
                    state.pv,
                    action.p_ch,
                    action.p_dis,
                    action.p_gen,
                    costs.curtailed_kw,
                    costs.shed_kw,
                    rew,
                )
            )

    def step_meta(self, y: MetaAction):
        pre = self.state
        self.state, rew, costs, action = step(
            pre, y, self.series, self.cfg, self._failure, self.rng, self._episode_t
        )
        self._episode_t += 1
        self._record(pre, action, costs, rew)
        done = self.state.t + 1 >= len(self.series)
        return observe(self.state), rew, costs, action, done

    def step_continuous(self, action: ControlAction):
        pre = self.state
        self.state, rew, costs, applied = step_action(
            pre, action, self.series, self.cfg, self._failure, self.rng, self._episode_t
        )
        self._episode_t += 1
        self._record(pre, applied, costs, rew)
        done = self.state.t + 1 >= len(self.series)
        return observe(self.state), rew, costs, applied, done

    def write_trace(self, path) -> None:
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["t", "soc", "load", "pv", "p_ch", "p_dis", "p_gen", "curt", "shed", "reward"]
            )
            writer.writerows(self.trace)

"""Receding-horizon model-predictive controller over the embedded solver.

Each decision step builds a mixed-integer program covering the next N hours
(power balance with forecasts, SoC recursion with charge/discharge
efficiencies, rate and capacity bounds, generator commitment band) and
applies only the first action. Forecasts are perfect by construction: the
controller reads the future realizations of the series.

Degradation and failures are never modeled inside the horizon; the problem
is rebuilt from the currently observed SoC and usable capacity, so a battery
failure is only picked up at the next re-solve, after the committed action
has already misfired once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ExogenousSeries
from .lpsolve import LinearProgram, LpSolution, MilpProblem, branch_and_bound, simplex_solve
from .simcore import ControlAction, MicrogridConfig, SimState


@dataclass(frozen=True)
class ForecastWindow:
    """Per-hour load and PV forecasts for the next N hours (k = 0 is now)."""

    load_hat: np.ndarray
    pv_hat: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "load_hat", np.asarray(self.load_hat, dtype=np.float64))
        object.__setattr__(self, "pv_hat", np.asarray(self.pv_hat, dtype=np.float64))
        if self.load_hat.size != self.pv_hat.size or self.load_hat.size < 1:
            raise ValueError("forecast arrays must share a length >= 1")
        if (self.load_hat < 0).any() or (self.pv_hat < 0).any():
            raise ValueError("forecasts must be non-negative")

    def __len__(self) -> int:
        return self.load_hat.size


def perfect_forecast(series: ExogenousSeries, t: int, n: int) -> ForecastWindow:
    """The true future realizations for hours t .. t+n-1."""
    if n < 1:
        raise ValueError("horizon must be >= 1")
    if t < 0 or t + n > len(series) - 1:
        raise IndexError(f"horizon {n} at t={t} runs past the series")
    return ForecastWindow(series.load_kw[t : t + n].copy(), series.pv_kw[t : t + n].copy())


# variable blocks, each of length N: indices into the flat LP vector
_BLOCKS = ("p_ch", "p_dis", "p_gen", "curt", "shed", "soc", "n")


def block(name: str, n: int) -> slice:
    i = _BLOCKS.index(name)
    return slice(i * n, (i + 1) * n)


def build_problem(
    cfg: MicrogridConfig,
    soc0: float,
    fc: ForecastWindow,
    capacity: float | None = None,
) -> MilpProblem:
    """Horizon dispatch MILP. soc variables hold SoC at hours t+1 .. t+N.

    Objective: sum over the horizon of fuel, curtailment and shedding cost,
    exactly as the simulator books them. The binary n_k forces generator
    output into [p_gen_min, p_gen_max] when committed and pays the fixed
    fuel term f1.
    """
    n = len(fc)
    cap = cfg.s_max if capacity is None else float(capacity)
    soc0 = min(max(float(soc0), 0.0), cap)
    nv = 7 * n

    c = np.zeros(nv)
    c[block("p_gen", n)] = cfg.f2 * cfg.dt * cfg.price_fuel
    c[block("n", n)] = cfg.f1 * cfg.dt * cfg.price_fuel
    c[block("curt", n)] = cfg.dt * cfg.price_curt
    c[block("shed", n)] = cfg.dt * cfg.price_shed

    lower = np.zeros(nv)
    upper = np.empty(nv)
    upper[block("p_ch", n)] = cfg.p_ch_max
    upper[block("p_dis", n)] = cfg.p_dis_max
    upper[block("p_gen", n)] = cfg.p_gen_max
    upper[block("curt", n)] = np.inf
    upper[block("shed", n)] = np.inf
    upper[block("soc", n)] = cap
    upper[block("n", n)] = 1.0

    rows = []
    senses = []
    rhs = []
    pch0 = block("p_ch", n).start
    pdis0 = block("p_dis", n).start
    pgen0 = block("p_gen", n).start
    curt0 = block("curt", n).start
    shed0 = block("shed", n).start
    soc_0 = block("soc", n).start
    n_0 = block("n", n).start

    for k in range(n):
        # power balance: pv + p_gen + p_dis + shed = p_ch + curt + load
        row = np.zeros(nv)
        row[pgen0 + k] = 1.0
        row[pdis0 + k] = 1.0
        row[shed0 + k] = 1.0
        row[pch0 + k] = -1.0
        row[curt0 + k] = -1.0
        rows.append(row)
        senses.append("=")
        rhs.append(fc.load_hat[k] - fc.pv_hat[k])

        # SoC recursion: soc_{k+1} = soc_k + dt (eta_ch p_ch - p_dis / eta_dis)
        row = np.zeros(nv)
        row[soc_0 + k] = 1.0
        if k > 0:
            row[soc_0 + k - 1] = -1.0
        row[pch0 + k] = -cfg.dt * cfg.eta_ch
        row[pdis0 + k] = cfg.dt / cfg.eta_dis
        rows.append(row)
        senses.append("=")
        rhs.append(soc0 if k == 0 else 0.0)

        # generator commitment band
        row = np.zeros(nv)
        row[pgen0 + k] = 1.0
        row[n_0 + k] = -cfg.p_gen_max
        rows.append(row)
        senses.append("<=")
        rhs.append(0.0)
        if cfg.p_gen_min > 0.0:
            row = np.zeros(nv)
            row[pgen0 + k] = 1.0
            row[n_0 + k] = -cfg.p_gen_min
            rows.append(row)
            senses.append(">=")
            rhs.append(0.0)

    lp = LinearProgram(c, np.asarray(rows), senses, np.asarray(rhs), lower, upper)
    return MilpProblem(lp, binary=list(range(n_0, n_0 + n)))


def solve_problem(p: MilpProblem, cfg: MicrogridConfig) -> LpSolution:
    """Solve the horizon problem; with a free generator floor and no fixed
    fuel term the commitment binaries are non-binding, so the continuous
    relaxation with all of them at 1 is already exact."""
    if cfg.p_gen_min == 0.0 and cfg.f1 == 0.0:
        lower = p.lp.lower.copy()
        upper = p.lp.upper.copy()
        for j in p.binary:
            lower[j] = upper[j] = 1.0
        return simplex_solve(
            LinearProgram(p.lp.c, p.lp.a, list(p.lp.senses), p.lp.b, lower, upper)
        )
    return branch_and_bound(p)


def _first_action(sol: LpSolution, cfg: MicrogridConfig, n: int) -> ControlAction:
    def clean(v):
        return 0.0 if abs(v) < 1e-9 else float(v)

    p_ch = clean(sol.x[block("p_ch", n).start])
    p_dis = clean(sol.x[block("p_dis", n).start])
    p_gen = clean(sol.x[block("p_gen", n).start])
    if 0.0 < p_gen < cfg.p_gen_min:
        p_gen = cfg.p_gen_min  # solver dust below the commitment band
    return ControlAction(p_ch=p_ch, p_dis=p_dis, p_gen=p_gen)


def mpc_act(
    cfg: MicrogridConfig,
    state: SimState,
    series: ExogenousSeries,
    t: int,
    n: int,
) -> ControlAction:
    """First action of the horizon plan from the current state.

    The horizon is truncated at the series end; shedding and curtailment act
    as slacks, so the problem is always feasible and this call is total.
    """
    remaining = len(series) - 1 - t
    horizon = min(n, remaining)
    if horizon < 1:
        raise IndexError("no steps remain in the series")
    fc = perfect_forecast(series, t, horizon)
    problem = build_problem(cfg, state.usable_soc, fc, capacity=state.usable_capacity)
    sol = solve_problem(problem, cfg)
    if sol.status != "optimal":
        raise RuntimeError(f"horizon problem unexpectedly {sol.status}")
    return _first_action(sol, cfg, horizon)


def solve_full_episode(cfg: MicrogridConfig, series: ExogenousSeries, soc0: float = 0.0):
    """Open-loop optimum over the whole series: (objective, solution, problem)."""
    fc = perfect_forecast(series, 0, len(series) - 1)
    problem = build_problem(cfg, soc0, fc)
    sol = solve_problem(problem, cfg)
    if sol.status != "optimal":
        raise RuntimeError(f"episode problem unexpectedly {sol.status}")
    return sol.objective, sol, problem


class MpcController:
    """Receding-horizon controller bound to a horizon length."""

    def __init__(self, horizon: int):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.horizon = horizon
        self.name = f"mpc-{horizon}"

    def act(self, env) -> ControlAction:
        return mpc_act(env.cfg, env.state, env.series, env.state.t, self.horizon)

"""Dense two-phase simplex and branch-and-bound MILP solver.

Sized for the receding-horizon controller's problems (a few hundred
variables, a few dozen binaries). Variable upper bounds are handled natively
by the bounded-variable simplex (nonbasic-at-upper represented through
column complementation), which keeps the tableau small. Pivoting is Dantzig
by default and switches to Bland's rule after a run of degenerate
iterations, which guarantees termination.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FEAS_TOL = 1e-7
PIVOT_TOL = 1e-9
INT_TOL = 1e-6


@dataclass
class LinearProgram:
    """min c @ x  s.t.  a @ x (senses) b,  lower <= x <= upper."""

    c: np.ndarray
    a: np.ndarray
    senses: list
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        n = self.c.size
        m = self.b.size
        if self.a.shape != (m, n):
            raise ValueError(f"A shape {self.a.shape} inconsistent with c ({n}) and b ({m})")
        if len(self.senses) != m:
            raise ValueError("one sense per row required")
        for s in self.senses:
            if s not in ("<=", ">=", "="):
                raise ValueError(f"unknown sense {s!r}")
        if self.lower.size != n or self.upper.size != n:
            raise ValueError("bounds length mismatch")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n_vars(self) -> int:
        return self.c.size


@dataclass
class MilpProblem:
    """A LinearProgram plus the index set of binary variables."""

    lp: LinearProgram
    binary: list

    def __post_init__(self):
        n = self.lp.n_vars
        for j in self.binary:
            if not 0 <= j < n:
                raise ValueError(f"binary index {j} out of range")
            if self.lp.lower[j] < -INT_TOL or self.lp.upper[j] > 1 + INT_TOL:
                raise ValueError(f"binary variable {j} must be bounded in [0, 1]")


@dataclass
class LpSolution:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None = None
    objective: float | None = None
    # standard-form certificate (y, A, b, c, w) for duality checks; may be None
    certificate: tuple | None = field(default=None, repr=False)


class _Standard:
    """min c @ w  s.t.  A @ w = b, 0 <= w <= ub, plus the map back to x."""

    def __init__(self, lp: LinearProgram):
        n = lp.n_vars
        b = lp.b.copy()
        senses = list(lp.senses)

        self.transforms = []
        cols = []
        c = []
        ub = []
        for j in range(n):
            lo, hi = lp.lower[j], lp.upper[j]
            col = lp.a[:, j]
            if np.isfinite(lo):
                self.transforms.append(("shift", j, lo))
                cols.append(col)
                c.append(lp.c[j])
                ub.append(hi - lo)
                if lo != 0.0:
                    b = b - col * lo
            elif np.isfinite(hi):
                self.transforms.append(("flip", j, hi))
                cols.append(-col)
                c.append(-lp.c[j])
                ub.append(np.inf)
                b = b - col * hi
            else:
                self.transforms.append(("split", j, 0.0))
                cols.append(col)
                c.append(lp.c[j])
                ub.append(np.inf)
                cols.append(-col)
                c.append(-lp.c[j])
                ub.append(np.inf)

        a = np.column_stack(cols) if cols else np.zeros((lp.b.size, 0))

        # flip rows to rhs >= 0 so slacks/artificials start feasible
        for i in range(b.size):
            if b[i] < 0:
                a[i] *= -1.0
                b[i] *= -1.0
                senses[i] = {"<=": ">=", ">=": "<=", "=": "="}[senses[i]]

        m = b.size
        slack_cols = []
        self.slack_basic = {}
        self.surplus_rows = []
        for i, s in enumerate(senses):
            if s in ("<=", ">="):
                col = np.zeros(m)
                col[i] = 1.0 if s == "<=" else -1.0
                if s == "<=":
                    self.slack_basic[i] = a.shape[1] + len(slack_cols)
                else:
                    self.surplus_rows.append(i)
                slack_cols.append(col)
        if slack_cols:
            a = np.hstack([a, np.column_stack(slack_cols)])
            c.extend([0.0] * len(slack_cols))
            ub.extend([np.inf] * len(slack_cols))

        self.a = a
        self.b = b
        self.c = np.asarray(c, dtype=np.float64)
        self.ub = np.asarray(ub, dtype=np.float64)
        self.senses = senses
        self.n_orig = n

    def recover(self, w: np.ndarray) -> np.ndarray:
        x = np.zeros(self.n_orig)
        k = 0
        for kind, j, val in self.transforms:
            if kind == "shift":
                x[j] = val + w[k]
                k += 1
            elif kind == "flip":
                x[j] = val - w[k]
                k += 1
            else:
                x[j] = w[k] - w[k + 1]
                k += 2
        return x


class _Tableau:
    """Full-tableau bounded-variable simplex state.

    Nonbasic variables always sit at 0 in the working coordinates; a variable
    resting at its upper bound is represented by complementing its column
    (w -> ub - w), tracked in ``comp``.
    """

    def __init__(self, a, b, ub):
        m, n = a.shape
        self.m = m
        self.n = n
        self.tab = np.zeros((m + 1, n + 1))
        self.tab[:m, :n] = a
        self.tab[:m, -1] = b
        self.ub = ub
        self.comp = np.zeros(n, dtype=bool)
        self.basis = np.full(m, -1, dtype=int)
        self.in_basis = np.zeros(n, dtype=bool)

    def set_objective(self, c) -> None:
        row = c.copy()
        row[self.comp] *= -1.0  # complemented columns carry negated costs
        self.tab[-1, : self.n] = row
        self.tab[-1, -1] = 0.0
        for i in range(self.m):
            cb = self.tab[-1, self.basis[i]]
            if cb != 0.0:
                self.tab[-1] -= cb * self.tab[i]

    def complement(self, j) -> None:
        u = self.ub[j]
        colv = self.tab[:, j].copy()
        self.tab[:, -1] -= u * colv
        self.tab[:, j] = -colv
        self.comp[j] = not self.comp[j]

    def pivot(self, row, col) -> None:
        tab = self.tab
        tab[row] /= tab[row, col]
        colv = tab[:, col].copy()
        colv[row] = 0.0
        tab -= np.outer(colv, tab[row])
        tab[:, col] = 0.0
        tab[row, col] = 1.0
        self.in_basis[self.basis[row]] = False
        self.basis[row] = col
        self.in_basis[col] = True

    def solution(self) -> np.ndarray:
        w = np.zeros(self.n)
        w[self.basis] = np.maximum(self.tab[: self.m, -1], 0.0)
        w = np.where(self.comp, self.ub - w, w)
        return w

    def iterate(self, n_allowed, stall_limit=40, max_iter=100_000) -> str:
        tab = self.tab
        m = self.m
        stall = 0
        bland = False
        last = tab[-1, -1]
        for _ in range(max_iter):
            red = tab[-1, :n_allowed]
            if bland:
                cand = np.flatnonzero((red < -PIVOT_TOL) & ~self.in_basis[:n_allowed])
                if cand.size == 0:
                    return "optimal"
                col = int(cand[0])
            else:
                col = int(np.argmin(red))
                if red[col] >= -PIVOT_TOL:
                    return "optimal"
            colv = tab[:m, col]
            rhs = tab[:m, -1]
            limit = self.ub[col]
            row = -1
            leave_upper = False
            pos = colv > PIVOT_TOL
            if pos.any():
                ratios = np.where(pos, rhs / np.where(pos, colv, 1.0), np.inf)
                r = int(np.argmin(ratios))
                tied = np.flatnonzero(np.abs(ratios - ratios[r]) <= 1e-12)
                if tied.size > 1:
                    r = int(tied[np.argmin(self.basis[tied])])
                if ratios[r] < limit - 1e-12:
                    limit, row, leave_upper = ratios[r], r, False
            neg = colv < -PIVOT_TOL
            if neg.any():
                bub = self.ub[self.basis]
                finite = neg & np.isfinite(bub)
                if finite.any():
                    ratios = np.where(finite, (bub - rhs) / np.where(finite, -colv, 1.0), np.inf)
                    r = int(np.argmin(ratios))
                    tied = np.flatnonzero(np.abs(ratios - ratios[r]) <= 1e-12)
                    if tied.size > 1:
                        r = int(tied[np.argmin(self.basis[tied])])
                    if ratios[r] < limit - 1e-12:
                        limit, row, leave_upper = ratios[r], r, True
            if not np.isfinite(limit):
                return "unbounded"
            if row < 0:
                self.complement(col)  # entering variable flips to its upper bound
            else:
                if leave_upper:
                    self.complement(self.basis[row])
                self.pivot(row, col)
            obj = tab[-1, -1]  # minus the objective; grows on improvement
            if obj <= last + 1e-12:
                stall += 1
                if stall >= stall_limit:
                    bland = True
            else:
                stall = 0
            last = obj
        raise RuntimeError("simplex iteration limit exceeded")


def simplex_solve(lp: LinearProgram, tol: float = FEAS_TOL) -> LpSolution:
    """Solve an LP with the two-phase bounded-variable dense simplex."""
    std = _Standard(lp)
    a, b, c, ub = std.a, std.b, std.c, std.ub
    m, n = a.shape

    art_rows = [i for i in range(m) if i not in std.slack_basic]
    n_art = len(art_rows)
    if n_art:
        art = np.zeros((m, n_art))
        for k, i in enumerate(art_rows):
            art[i, k] = 1.0
        a_full = np.hstack([a, art])
        ub_full = np.concatenate([ub, np.full(n_art, np.inf)])
    else:
        a_full = a
        ub_full = ub

    t = _Tableau(a_full, b, ub_full)
    for i in range(m):
        t.basis[i] = std.slack_basic.get(i, -1)
    for k, i in enumerate(art_rows):
        t.basis[i] = n + k
    t.in_basis[t.basis] = True

    if n_art:
        c1 = np.zeros(n + n_art)
        c1[n:] = 1.0
        t.set_objective(c1)
        status = t.iterate(n + n_art)
        if status != "optimal" or t.tab[-1, -1] < -tol:
            return LpSolution(status="infeasible")
        for i in range(m):
            if t.basis[i] >= n:  # zero-level artificial: pivot out if possible
                cand = np.flatnonzero(np.abs(t.tab[i, :n]) > PIVOT_TOL)
                cand = [j for j in cand if not t.in_basis[j]]
                if cand:
                    t.pivot(i, int(cand[0]))
        keep = [i for i in range(m) if t.basis[i] < n]
        if len(keep) < m:  # drop redundant rows pinned to zero artificials
            t.tab = np.vstack([t.tab[keep], t.tab[-1:]])
            t.basis = t.basis[keep]
            t.m = len(keep)
            m = t.m

    t.tab = np.hstack([t.tab[:, :n], t.tab[:, -1:]])
    t.n = n
    t.comp = t.comp[:n]
    t.in_basis = t.in_basis[:n]
    t.ub = t.ub[:n]
    t.set_objective(c)
    status = t.iterate(n)
    if status == "unbounded":
        return LpSolution(status="unbounded")

    w = t.solution()
    x = std.recover(w)
    objective = float(lp.c @ x)

    cert = None
    if m == std.a.shape[0]:
        try:
            # dual of min{c w : A w = b, 0 <= w <= u} is max{b y - u z} with
            # A' y - z <= c, z >= 0; z picks up nonbasic-at-upper reduced costs
            y = np.linalg.solve(std.a[:, t.basis].T, std.c[t.basis])
            d = std.c - y @ std.a
            z = np.where(np.isfinite(std.ub), np.maximum(-d, 0.0), 0.0)
            cert = (y, z, std.a, std.b, std.c, std.ub, w)
        except np.linalg.LinAlgError:
            cert = None
    return LpSolution(status="optimal", x=x, objective=objective, certificate=cert)


def check_feasible(lp: LinearProgram, x: np.ndarray, tol: float = FEAS_TOL) -> float:
    """Max constraint/bound violation of x (0 means feasible)."""
    resid = [0.0]
    ax = lp.a @ x
    for i, s in enumerate(lp.senses):
        if s == "<=":
            resid.append(ax[i] - lp.b[i])
        elif s == ">=":
            resid.append(lp.b[i] - ax[i])
        else:
            resid.append(abs(ax[i] - lp.b[i]))
    resid.append(np.max(lp.lower - x, initial=0.0))
    resid.append(np.max(x - lp.upper, initial=0.0))
    return float(max(np.max(r) if np.ndim(r) else r for r in resid))


def _fix_binary(lp: LinearProgram, fixes: dict) -> LinearProgram:
    lower = lp.lower.copy()
    upper = lp.upper.copy()
    for j, v in fixes.items():
        lower[j], upper[j] = v, v
    return LinearProgram(lp.c, lp.a, list(lp.senses), lp.b, lower, upper)


def branch_and_bound(p: MilpProblem) -> LpSolution:
    """Depth-first branch and bound with best-bound pruning.

    Branches on the most fractional binary. The incumbent is re-solved with
    all binaries fixed so the reported solution is exactly an LP optimum of
    one binary assignment.
    """
    root = simplex_solve(p.lp)
    if root.status != "optimal":
        return root
    if not p.binary:
        return root

    best_obj = np.inf
    best_fixes = None
    stack = [(root.objective, {})]
    while stack:
        bound, fixes = stack.pop()
        if bound >= best_obj - 1e-9:
            continue
        sol = simplex_solve(_fix_binary(p.lp, fixes))
        if sol.status != "optimal" or sol.objective >= best_obj - 1e-9:
            continue
        frac = [(abs(sol.x[j] - round(sol.x[j])), j) for j in p.binary if j not in fixes]
        frac = [(f, j) for f, j in frac if f > INT_TOL]
        if not frac:
            rounded = {j: int(round(sol.x[j])) for j in p.binary if j not in fixes}
            cand = {**fixes, **rounded}
            cand_sol = simplex_solve(_fix_binary(p.lp, cand))
            if cand_sol.status == "optimal" and cand_sol.objective < best_obj:
                best_obj = cand_sol.objective
                best_fixes = cand
            continue
        _, j = max(frac)
        scored = []
        for v in (0, 1):
            ch = {**fixes, j: v}
            ch_sol = simplex_solve(_fix_binary(p.lp, ch))
            if ch_sol.status == "optimal" and ch_sol.objective < best_obj - 1e-9:
                frac_ch = [
                    abs(ch_sol.x[jj] - round(ch_sol.x[jj])) for jj in p.binary if jj not in ch
                ]
                if not frac_ch or max(frac_ch) <= INT_TOL:
                    rounded = {jj: int(round(ch_sol.x[jj])) for jj in p.binary if jj not in ch}
                    cand = {**ch, **rounded}
                    cand_sol = simplex_solve(_fix_binary(p.lp, cand))
                    if cand_sol.status == "optimal" and cand_sol.objective < best_obj:
                        best_obj = cand_sol.objective
                        best_fixes = cand
                else:
                    scored.append((ch_sol.objective, ch))
        # push worse bound first so the better child is explored next (DFS)
        for obj_ch, ch in sorted(scored, key=lambda s: -s[0]):
            stack.append((obj_ch, ch))

    if best_fixes is None:
        return LpSolution(status="infeasible")
    return simplex_solve(_fix_binary(p.lp, best_fixes))

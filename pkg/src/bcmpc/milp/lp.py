"""LP relaxation of the MPC problem and a dense bounded-variable simplex.

Variable layout (N = horizon), all blocks length N::

    u | v_up | v_down | pen_under | pen_over

Rows: switch balance (equality), dwell-time rows for on and off, and one
comfort row per bounded side of every non-away step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import MpcInstance, SolverError

INF = np.inf


@dataclass
class LinearProgram:
    c: np.ndarray
    a_ub: np.ndarray
    b_ub: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    n_int: int  # the first n_int variables are binary in the MILP

    @property
    def n(self) -> int:
        return len(self.c)


@dataclass
class LpResult:
    x: np.ndarray
    objective: float
    status: str  # "optimal" | "infeasible" | "unbounded"
    iterations: int = 0


class LpFailure(SolverError):
    pass


def history_switch_constants(instance: MpcInstance):
    """Contribution of already-implemented switches to each dwell row.

    Returns (on_const[j], off_const[j]) = sum of v_up / v_down at history
    positions i < 0 inside the window of step j.
    """
    cyc = instance.cycle
    h = np.array(cyc.history)
    nh = len(h)
    # v at history offset -t (t=1..nh-1): switch between h[nh-t-1] and h[nh-t]
    vu_hist = {}
    vd_hist = {}
    for t in range(1, nh):
        d = h[nh - t] - h[nh - t - 1]
        vu_hist[-t] = max(d, 0)
        vd_hist[-t] = max(-d, 0)
    n = instance.horizon
    on_c = np.zeros(n)
    off_c = np.zeros(n)
    for j in range(min(n, max(cyc.min_on, cyc.min_off))):
        on_c[j] = sum(vu_hist.get(i, 0) for i in range(j - cyc.min_on + 1, 0))
        off_c[j] = sum(vd_hist.get(i, 0) for i in range(j - cyc.min_off + 1, 0))
    return on_c, off_c


def relaxation(instance: MpcInstance) -> LinearProgram:
    n = instance.horizon
    cyc = instance.cycle
    nv = 5 * n
    iu, ivu, ivd, isu, iso = (np.arange(n) + k * n for k in range(5))

    c = np.zeros(nv)
    c[iu] = instance.energy_cost()
    c[isu] = instance.penalties.under
    c[iso] = instance.penalties.over

    # u_j - u_{j-1} - vu_j + vd_j = 0   (u_{-1} from history)
    a_eq = np.zeros((n, nv))
    b_eq = np.zeros(n)
    rows = np.arange(n)
    a_eq[rows, iu] = 1.0
    a_eq[rows[1:], iu[:-1]] = -1.0
    a_eq[rows, ivu] = -1.0
    a_eq[rows, ivd] = 1.0
    b_eq[0] = cyc.history[-1]

    on_c, off_c = history_switch_constants(instance)
    a_on = np.zeros((n, nv))
    a_off = np.zeros((n, nv))
    for j in range(n):
        a_on[j, ivu[max(0, j - cyc.min_on + 1): j + 1]] = 1.0
        a_on[j, iu[j]] = -1.0
        a_off[j, ivd[max(0, j - cyc.min_off + 1): j + 1]] = 1.0
        a_off[j, iu[j]] = 1.0
    b_on = -on_c
    b_off = 1.0 - off_c

    fa = instance.free_response()[:, 0]
    g = instance.response_matrix()
    comfort = instance.comfort
    occupied = ~comfort.away
    occ = np.flatnonzero(occupied)
    a_lo = np.zeros((len(occ), nv))
    a_lo[:, :n] = -g[occ]
    a_lo[np.arange(len(occ)), isu[occ]] = -1.0
    b_lo = fa[occ] - comfort.lower[occ]
    a_hi = np.zeros((len(occ), nv))
    a_hi[:, :n] = g[occ]
    a_hi[np.arange(len(occ)), iso[occ]] = -1.0
    b_hi = comfort.upper[occ] - fa[occ]

    lb = np.zeros(nv)
    ub = np.ones(nv)
    ub[isu] = INF
    ub[iso] = INF
    away = np.flatnonzero(~occupied)
    ub[isu[away]] = 0.0
    ub[iso[away]] = 0.0

    return LinearProgram(
        c=c,
        a_ub=np.vstack([a_on, a_off, a_lo, a_hi]),
        b_ub=np.concatenate([b_on, b_off, b_lo, b_hi]),
        a_eq=a_eq,
        b_eq=b_eq,
        lb=lb,
        ub=ub,
        n_int=n,
    )


# ---------------------------------------------------------------------------
# dense bounded-variable primal simplex


class _Tableau:
    """min c x  s.t.  A x = b (b >= 0),  0 <= x <= u."""

    def __init__(self, a, b, u, basis, tol=1e-9):
        self.t = a.astype(float).copy()
        self.beta = b.astype(float).copy()
        self.u = u
        self.basis = np.array(basis)
        self.at_upper = np.zeros(a.shape[1], dtype=bool)
        self.tol = tol
        self.iterations = 0

    def x(self):
        x = np.where(self.at_upper, self.u, 0.0)
        x[self.basis] = self.beta
        return x

    def run(self, c, max_iter, degenerate_switch=50):
        m, n = self.t.shape
        tol = self.tol
        basic = np.zeros(n, dtype=bool)
        basic[self.basis] = True
        d = c - c[self.basis] @ self.t
        degenerate = 0
        u = self.u
        while True:
            if self.iterations >= max_iter:
                raise LpFailure("simplex iteration limit")
            elig_lo = (~basic) & (~self.at_upper) & (d < -tol)
            elig_up = (~basic) & self.at_upper & (d > tol)
            elig = elig_lo | elig_up
            if not elig.any():
                return "optimal"
            if degenerate > degenerate_switch:
                j = int(np.flatnonzero(elig)[0])  # Bland
            else:
                score = np.where(elig, np.abs(d), -1.0)
                j = int(np.argmax(score))
            sign = 1.0 if elig_lo[j] else -1.0
            col = self.t[:, j] * sign
            # basic vars move by -col * step
            step = u[j]
            leave = -1
            leave_to_upper = False
            with np.errstate(divide="ignore", invalid="ignore"):
                pos = col > tol
                neg = col < -tol
                ub_b = u[self.basis]
                r1 = np.where(pos, self.beta / np.where(pos, col, 1.0), INF)
                r2 = np.where(neg & np.isfinite(ub_b), (ub_b - self.beta) / np.where(neg, -col, 1.0), INF)
            r1 = np.maximum(r1, 0.0)
            r2 = np.maximum(r2, 0.0)
            ratios = np.minimum(r1, r2)
            if ratios.size:
                best = ratios.min()
                if best < step - tol or (not np.isfinite(step) and np.isfinite(best)):
                    cands = np.flatnonzero(ratios <= best + tol)
                    # Bland-style tie break on basic variable index
                    leave = int(cands[np.argmin(self.basis[cands])])
                    step = ratios[leave]
                    leave_to_upper = r2[leave] <= r1[leave]
            if not np.isfinite(step):
                return "unbounded"
            self.iterations += 1
            degenerate = degenerate + 1 if step <= tol else 0
            self.beta -= step * col
            if leave < 0:
                self.at_upper[j] = not self.at_upper[j]
                continue
            entering_val = step if sign > 0 else u[j] - step
            out = self.basis[leave]
            self.at_upper[out] = leave_to_upper
            self.at_upper[j] = False
            basic[out] = False
            basic[j] = True
            self.basis[leave] = j
            self.beta[leave] = entering_val
            self._pivot(leave, j)
            d = d - d[j] * self.t[leave]

    def _pivot(self, r, j):
        t = self.t
        t[r] /= t[r, j]
        colj = t[:, j].copy()
        colj[r] = 0.0
        t -= np.outer(colj, t[r])


def simplex(lp: LinearProgram, max_iter: int = 50_000, tol: float = 1e-9) -> LpResult:
    """Two-phase bounded-variable primal simplex on a dense tableau.

    Dantzig pricing, switching to Bland's rule after a run of degenerate
    pivots so the method terminates.
    """
    lb, ub = lp.lb, lp.ub
    if np.any(ub < lb - tol):
        return LpResult(np.full(lp.n, np.nan), INF, "infeasible")
    span = ub - lb
    m_ub, m_eq = len(lp.b_ub), len(lp.b_eq)
    b_ub = lp.b_ub - lp.a_ub @ lb
    b_eq = lp.b_eq - lp.a_eq @ lb
    n = lp.n
    m = m_ub + m_eq
    # columns: x (n) | slacks (m_ub) | artificials (m)
    a = np.zeros((m, n + m_ub + m))
    b = np.concatenate([b_ub, b_eq])
    a[:m_ub, :n] = lp.a_ub
    a[:m_ub, n:n + m_ub] = np.eye(m_ub)
    a[m_ub:, :n] = lp.a_eq
    flip = b < 0
    a[flip] *= -1
    b = np.abs(b)
    basis = np.empty(m, dtype=int)
    need_art = np.ones(m, dtype=bool)
    ok_slack = np.flatnonzero(~flip[:m_ub])
    basis[ok_slack] = n + ok_slack
    need_art[ok_slack] = False
    art_rows = np.flatnonzero(need_art)
    art_cols = n + m_ub + art_rows
    a[art_rows, art_cols] = 1.0
    basis[art_rows] = art_cols
    keep = np.concatenate([np.arange(n + m_ub), art_cols])
    a = a[:, keep]
    art_cols = np.arange(n + m_ub, n + m_ub + len(art_rows))
    basis[art_rows] = art_cols
    u = np.concatenate([span, np.full(m_ub, INF), np.full(len(art_rows), INF)])

    tab = _Tableau(a, b, u, basis, tol)
    if len(art_rows):
        c1 = np.zeros(a.shape[1])
        c1[art_cols] = 1.0
        status = tab.run(c1, max_iter)
        infeas = tab.x()[art_cols].sum()
        if infeas > 1e-7 * max(1.0, np.abs(b).max()):
            return LpResult(np.full(n, np.nan), INF, "infeasible", tab.iterations)
        # drive remaining artificials out where possible, then freeze them at zero
        for r in range(m):
            bj = tab.basis[r]
            if bj in set(art_cols.tolist()):
                row = tab.t[r, : n + m_ub]
                nz = np.flatnonzero(np.abs(row) > 1e-9)
                nz = [k for k in nz if k not in set(tab.basis.tolist())]
                if nz:
                    k = nz[0]
                    tab.at_upper[bj] = False
                    val = tab.x()[k]
                    tab.basis[r] = k
                    tab.beta[r] = val
                    tab.at_upper[k] = False
                    tab._pivot(r, k)
        tab.u = u.copy()
        tab.u[art_cols] = 0.0
    c2 = np.concatenate([lp.c, np.zeros(a.shape[1] - n)])
    status = tab.run(c2, max_iter)
    if status != "optimal":
        return LpResult(np.full(n, np.nan), -INF, status, tab.iterations)
    x = tab.x()[:n] + lb
    return LpResult(x, float(lp.c @ x), "optimal", tab.iterations)


def highs(lp: LinearProgram) -> LpResult:
    from scipy.optimize import linprog

    res = linprog(
        lp.c, A_ub=lp.a_ub, b_ub=lp.b_ub, A_eq=lp.a_eq, b_eq=lp.b_eq,
        bounds=np.column_stack([lp.lb, lp.ub]), method="highs",
    )
    if res.status == 2:
        return LpResult(np.full(lp.n, np.nan), INF, "infeasible")
    if res.status != 0:
        raise LpFailure(f"HiGHS LP failed: {res.message}")
    return LpResult(res.x, float(res.fun), "optimal", int(res.nit))


def solve_lp(lp: LinearProgram, method: str = "simplex") -> LpResult:
    if method == "simplex":
        return simplex(lp)
    if method == "highs":
        return highs(lp)
    raise ValueError(f"unknown LP method {method!r}")

"""Dense two-phase simplex method with Bland's anti-cycling rule.

Problems here are tiny (at most a few hundred columns), so the solver works
on a full tableau and favours determinism over speed: the entering column is
always the lowest-index column with a negative reduced cost and ratio-test
ties go to the basic variable with the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from invmono.optkit.programs import LinearProgram, SolveReport

MAX_PIVOTS = 50_000
PIVOT_TOL = 1e-11


@dataclass
class StandardForm:
    """``min c @ s`` s.t. ``A @ s == b``, ``s >= 0`` with ``x = shift + T @ s[:T.shape[1]]``."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    shift: np.ndarray
    T: np.ndarray
    n_struct: int
    row_sign: np.ndarray
    n_eq: int
    n_ub: int
    const: float


def standard_form(lp: LinearProgram) -> StandardForm:
    """Rewrite ``lp`` with nonnegative variables and equality rows only."""
    n = lp.n
    shift = np.zeros(n)
    cols = []
    bound_rows = []
    for j in range(n):
        lo, hi = lp.lb[j], lp.ub[j]
        if np.isfinite(lo):
            shift[j] = lo
            cols.append((j, 1.0))
            if np.isfinite(hi):
                bound_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            shift[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    n_s = len(cols)
    T = np.zeros((n, n_s))
    for k, (j, sgn) in enumerate(cols):
        T[j, k] = sgn

    A_eq = lp.A_eq @ T
    b_eq = lp.b_eq - lp.A_eq @ shift
    A_ub = lp.A_ub @ T
    b_ub = lp.b_ub - lp.A_ub @ shift
    if bound_rows:
        extra = np.zeros((len(bound_rows), n_s))
        for r, (k, width) in enumerate(bound_rows):
            extra[r, k] = 1.0
        A_ub = np.vstack([A_ub, extra])
        b_ub = np.concatenate([b_ub, [w for _, w in bound_rows]])

    m_eq, m_ub = A_eq.shape[0], A_ub.shape[0]
    A = np.zeros((m_eq + m_ub, n_s + m_ub))
    A[:m_eq, :n_s] = A_eq
    A[m_eq:, :n_s] = A_ub
    A[m_eq:, n_s:] = np.eye(m_ub)
    b = np.concatenate([b_eq, b_ub])
    c = np.concatenate([T.T @ lp.cost, np.zeros(m_ub)])
    sign = np.where(b < 0, -1.0, 1.0)
    A *= sign[:, None]
    b = b * sign
    return StandardForm(A, b, c, shift, T, n_s, sign, m_eq, m_ub, float(lp.cost @ shift))


def _pivot(tab, r, j):
    tab[r] /= tab[r, j]
    col = tab[:, j].copy()
    col[r] = 0.0
    tab -= np.outer(col, tab[r])


def _bland(tab, basis, n_allowed, cost_tol, budget):
    """Run simplex pivots in place; returns (status, entering column, pivots)."""
    pivots = 0
    while True:
        red = tab[-1, :n_allowed]
        neg = np.flatnonzero(red < -cost_tol)
        if neg.size == 0:
            return "optimal", None, pivots
        j = int(neg[0])
        col = tab[:-1, j]
        rows = np.flatnonzero(col > PIVOT_TOL)
        if rows.size == 0:
            return "unbounded", j, pivots
        if pivots >= budget:
            return "iteration-limit", None, pivots
        ratios = tab[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * (1.0 + abs(best))]
        r = int(min(ties, key=lambda i: basis[i]))
        _pivot(tab, r, j)
        basis[r] = j
        pivots += 1


def solve_lp(lp: LinearProgram, max_pivots: int = MAX_PIVOTS) -> SolveReport:
    """Solve ``lp`` exactly up to floating point by the two-phase simplex method.

    Infeasible problems carry a Farkas vector ``y`` for the standard form
    (``A.T @ y <= 0`` and ``b @ y > 0``); unbounded ones carry a recession ray
    ``d`` in the original variables with ``cost @ d < 0``.
    """
    sf = standard_form(lp)
    A, b, c = sf.A, sf.b, sf.c
    m, ns = A.shape
    cost_tol = 1e-10 * max(1.0, float(np.max(np.abs(c), initial=0.0)))
    feas_tol = 1e-9 * (1.0 + float(np.max(np.abs(b), initial=0.0)))

    # Rows whose slack enters with +1 can start with the slack basic.
    basis = [-1] * m
    for i in range(sf.n_eq, m):
        if sf.row_sign[i] > 0:
            basis[i] = sf.n_struct + (i - sf.n_eq)
    art_rows = [i for i in range(m) if basis[i] < 0]
    n_art = len(art_rows)
    tab = np.zeros((m + 1, ns + n_art + 1))
    tab[:m, :ns] = A
    tab[:m, -1] = b
    for k, i in enumerate(art_rows):
        tab[i, ns + k] = 1.0
        basis[i] = ns + k
    for i in art_rows:
        tab[-1] -= tab[i]
    tab[-1, ns:ns + n_art] = 0.0

    status, _, it1 = _bland(tab, basis, ns + n_art, 1e-12, max_pivots)
    if status == "iteration-limit":
        return SolveReport("iteration-limit", np.nan, np.full(lp.n, np.nan), np.inf, it1)
    if -tab[-1, -1] > feas_tol:
        full = np.hstack([A, np.zeros((m, n_art))])
        for k, i in enumerate(art_rows):
            full[i, ns + k] = 1.0
        c1 = np.concatenate([np.zeros(ns), np.ones(n_art)])
        y = np.linalg.lstsq(full[:, basis].T, c1[basis], rcond=None)[0]
        return SolveReport("infeasible", np.inf, np.full(lp.n, np.nan), np.inf, it1, certificate=y)

    # Drive zero-level artificials out of the basis, dropping redundant rows.
    keep = list(range(m))
    for r in range(m):
        if basis[r] >= ns:
            nz = np.flatnonzero(np.abs(tab[r, :ns]) > 1e-9)
            if nz.size:
                _pivot(tab, r, int(nz[0]))
                basis[r] = int(nz[0])
            else:
                keep.remove(r)
    tab = np.vstack([tab[keep], tab[-1:]])
    tab = np.hstack([tab[:, :ns], tab[:, -1:]])
    basis = [basis[r] for r in keep]

    cb = c[basis]
    tab[-1, :ns] = c - cb @ tab[:-1, :ns]
    tab[-1, -1] = -cb @ tab[:-1, -1]
    status, enter, it2 = _bland(tab, basis, ns, cost_tol, max_pivots - it1)
    iters = it1 + it2
    if status == "iteration-limit":
        return SolveReport("iteration-limit", np.nan, np.full(lp.n, np.nan), np.inf, iters)

    s = np.zeros(ns)
    s[basis] = tab[:-1, -1]
    if status == "unbounded":
        d = np.zeros(ns)
        d[enter] = 1.0
        d[basis] = -tab[:-1, enter]
        ray = sf.T @ d[: sf.n_struct]
        return SolveReport("unbounded", -np.inf, sf.shift + sf.T @ s[: sf.n_struct], np.inf,
                           iters, certificate=ray)

    # Recompute the vertex and duals from the final basis for a clean certificate.
    Ak, bk = A[keep], b[keep]
    B = Ak[:, basis]
    s = np.zeros(ns)
    s[basis] = np.linalg.solve(B, bk)
    s = np.maximum(s, 0.0)
    y = np.linalg.solve(B.T, c[basis])
    red = c - Ak.T @ y
    primal = float(np.max(np.abs(Ak @ s - bk), initial=0.0)) / (1.0 + float(np.max(np.abs(bk), initial=0.0)))
    dual = float(np.max(-red, initial=0.0)) / (1.0 + float(np.max(np.abs(c), initial=0.0)))
    gap = abs(float(c @ s - bk @ y)) / (1.0 + abs(float(c @ s)))
    x = sf.shift + sf.T @ s[: sf.n_struct]
    y_full = np.zeros(m)
    y_full[keep] = y
    y_full *= sf.row_sign
    duals = {"eq": y_full[: sf.n_eq], "ub": y_full[sf.n_eq: sf.n_eq + lp.A_ub.shape[0]]}
    return SolveReport("optimal", float(lp.cost @ x), x, max(primal, dual, gap), iters, duals=duals)

"""Primal active-set method for convex quadratic programs.

Each iteration minimizes the objective over the affine subspace cut out by
the working set (equalities plus the inequalities held active).  The
subproblem is solved in a null-space basis ``Z`` of the working rows:

* if the reduced gradient has a component along a zero-curvature direction
  of ``Z'QZ`` the iterate moves along that direction until a constraint
  blocks (an LP-like edge step; no blocking constraint means unbounded);
* otherwise the step is the Newton step ``-pinv(Z'QZ) Z'g`` clipped by the
  first blocking constraint.

At a subspace minimizer the multipliers of the working inequalities are
checked; the most negative one is released.  After a run of zero-length
steps the choice rules switch to lowest-index (Bland) order to rule out
cycling on degenerate vertices.
"""

from __future__ import annotations

import numpy as np

from invmono.optkit.lp import solve_lp
from invmono.optkit.programs import LinearProgram, QuadraticProgram, SolveReport

MAX_ITER = 10_000
KKT_TOL = 1e-9


def _stack_inequalities(qp):
    n = qp.n
    rows = [qp.A_ub]
    rhs = [qp.b_ub]
    up = np.flatnonzero(np.isfinite(qp.ub))
    lo = np.flatnonzero(np.isfinite(qp.lb))
    if up.size:
        rows.append(np.eye(n)[up])
        rhs.append(qp.ub[up])
    if lo.size:
        rows.append(-np.eye(n)[lo])
        rhs.append(-qp.lb[lo])
    return np.vstack(rows), np.concatenate(rhs)


def _independent_rows(E, e, tol=1e-10):
    """Greedy subset of linearly independent rows of ``E`` (lowest index first)."""
    kept = []
    basis = np.zeros((0, E.shape[1]))
    for i in range(E.shape[0]):
        if _adds_rank(basis, E[i], tol):
            kept.append(i)
            basis = _orth_append(basis, E[i])
    return E[kept], e[kept]


def _orth_append(Qrows, a):
    r = a - Qrows.T @ (Qrows @ a) if Qrows.shape[0] else a.copy()
    r = r - Qrows.T @ (Qrows @ r) if Qrows.shape[0] else r
    return np.vstack([Qrows, r / np.linalg.norm(r)])


def _adds_rank(Qrows, a, tol):
    na = np.linalg.norm(a)
    if na == 0.0:
        return False
    r = a - Qrows.T @ (Qrows @ a) if Qrows.shape[0] else a
    return np.linalg.norm(r) > tol * na


def _null_space(A, n):
    if A.shape[0] == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(A)
    rank = int(np.sum(s > 1e-12 * max(1.0, s[0])))
    return vt[rank:].T


def _kkt(Q, c, E, e, G, h, z, W):
    """Multipliers on the working set and the scaled KKT residual at ``z``."""
    g = Q @ z + c
    AW = np.vstack([E, G[W]])
    if AW.shape[0]:
        y = np.linalg.lstsq(AW.T, -g, rcond=None)[0]
        stat = g + AW.T @ y
    else:
        y = np.zeros(0)
        stat = g
    y_in = y[E.shape[0]:]
    scale = 1.0 + float(np.max(np.abs(c), initial=0.0)) + float(np.max(np.abs(Q @ z), initial=0.0))
    slack = h - G @ z
    hscale = 1.0 + float(np.max(np.abs(h), initial=0.0)) + float(np.max(np.abs(e), initial=0.0))
    res = max(
        float(np.max(np.abs(stat), initial=0.0)) / scale,
        float(np.max(np.abs(E @ z - e), initial=0.0)) / hscale,
        float(np.max(-slack, initial=0.0)) / hscale,
        float(np.max(-y_in, initial=0.0)) / scale,
        float(np.max(np.abs(y_in * slack[W]), initial=0.0)) / (scale * hscale),
    )
    return y, res


def solve_qp(qp: QuadraticProgram, x0=None, max_iter: int = MAX_ITER, tol: float = KKT_TOL) -> SolveReport:
    """Minimize ``qp`` by the primal active-set method.

    ``x0`` is an optional feasible starting point; without it a feasible
    vertex is obtained from a phase-one LP.  The report's ``duals`` hold the
    final working set (``"active"``) and its multipliers.
    """
    n = qp.n
    Q, c = qp.Q, qp.c
    G, h = _stack_inequalities(qp)
    E, e = qp.A_eq, qp.b_eq
    hscale = 1.0 + float(np.max(np.abs(h), initial=0.0)) + float(np.max(np.abs(e), initial=0.0))

    if x0 is None:
        start = solve_lp(LinearProgram(np.zeros(n), qp.A_eq, qp.b_eq, qp.A_ub, qp.b_ub, qp.lb, qp.ub))
        if start.status != "optimal":
            status = "infeasible" if start.status == "infeasible" else start.status
            return SolveReport(status, np.inf, np.full(n, np.nan), np.inf, start.iterations,
                               certificate=start.certificate)
        z = start.x.copy()
    else:
        z = np.asarray(x0, dtype=float).copy()
        viol = max(float(np.max(np.abs(E @ z - e), initial=0.0)), float(np.max(G @ z - h, initial=0.0)))
        if viol > 1e-9 * hscale:
            raise ValueError(f"starting point is infeasible (violation {viol:.3e})")

    E, e = _independent_rows(E, e)
    act_tol = 1e-10 * hscale
    W = []
    Qrows = np.zeros((0, n))
    for i in range(E.shape[0]):
        Qrows = _orth_append(Qrows, E[i])
    slack = h - G @ z
    for j in np.flatnonzero(slack <= act_tol):
        if _adds_rank(Qrows, G[j], 1e-9):
            W.append(int(j))
            Qrows = _orth_append(Qrows, G[j])

    gscale = 1.0 + float(np.max(np.abs(c), initial=0.0))
    gnorm = 1.0 + np.linalg.norm(G, axis=1)
    in_w = np.zeros(len(h), dtype=bool)
    in_w[W] = True
    degenerate_run = 0
    it = 0
    while it < max_iter:
        it += 1
        bland = degenerate_run > 2 * (n + len(h))
        g = Q @ z + c
        AW = np.vstack([E, G[W]])
        Z = _null_space(AW, n)
        r = Z.T @ g
        tol_r = 1e-11 * (gscale + float(np.max(np.abs(g), initial=0.0)))
        if Z.shape[1] == 0 or np.linalg.norm(r) <= tol_r:
            y, _ = _kkt(Q, c, E, e, G, h, z, W)
            y_in = y[E.shape[0]:]
            neg = np.flatnonzero(y_in < -1e-13 * (gscale + float(np.max(np.abs(g), initial=0.0))))
            if neg.size == 0:
                break
            if bland:
                k = int(min(neg, key=lambda i: W[i]))
            else:
                k = int(neg[np.argmin(y_in[neg])])
            in_w[W[k]] = False
            del W[k]
            continue

        H = Z.T @ Q @ Z
        w, V = np.linalg.eigh(H)
        curv = w > 1e-10 * max(1.0, float(np.max(np.abs(w), initial=0.0)))
        r_null = V[:, ~curv] @ (V[:, ~curv].T @ r)
        ray = np.linalg.norm(r_null) > tol_r
        if ray:
            u = -r_null
        else:
            Vc = V[:, curv]
            u = -Vc @ ((Vc.T @ r) / w[curv])
        p = Z @ u

        Gp = G @ p
        cand = np.flatnonzero((Gp > 1e-12 * np.linalg.norm(p) * gnorm) & ~in_w)
        alpha_block = np.inf
        block = None
        if cand.size:
            ratios = np.maximum(h[cand] - G[cand] @ z, 0.0) / Gp[cand]
            alpha_block = float(ratios.min())
            ties = cand[ratios <= alpha_block + 1e-14 * (1.0 + alpha_block)]
            block = int(ties[0])
        if ray and block is None:
            return SolveReport("unbounded", -np.inf, z, np.inf, it, certificate=p)
        alpha = alpha_block if ray else min(1.0, alpha_block)
        z = z + alpha * p
        if block is not None and (ray or alpha_block <= 1.0):
            W.append(block)
            in_w[block] = True
        degenerate_run = degenerate_run + 1 if alpha == 0.0 else 0
    else:
        y, res = _kkt(Q, c, E, e, G, h, z, W)
        return SolveReport("iteration-limit", float(0.5 * z @ Q @ z + c @ z), z, res, it)

    y, res = _kkt(Q, c, E, e, G, h, z, W)
    value = float(0.5 * z @ Q @ z + c @ z)
    status = "optimal" if res <= max(tol, 1e-8) else "iteration-limit"
    return SolveReport(status, value, z, res, it,
                       duals={"active": list(W), "eq": y[:E.shape[0]], "ineq": y[E.shape[0]:]})

"""Small convex-analysis utilities built on the LP solver."""

from __future__ import annotations

import numpy as np

from invmono.errors import InputError
from invmono.optkit.lp import solve_lp
from invmono.optkit.programs import LinearProgram, as_vector

HULL_TOL = 1e-7


def project_simplex(w):
    """Euclidean projection of ``w`` onto the unit simplex.

    Sort-based threshold rule: find the largest ``k`` with
    ``u_k > (sum(u_1..u_k) - 1) / k`` for ``u`` sorted decreasingly and shift.
    """
    w = as_vector(w, "w")
    if w.size == 0:
        raise InputError("cannot project an empty vector")
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, w.size + 1)
    rho = np.flatnonzero(u > css / k)[-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(w - theta, 0.0)


def grid_conjugate(values, grid, dual_grid=None):
    """Discrete Legendre-Fenchel transform on a rectangular grid.

    Parameters
    ----------
    values : ndarray
        Samples ``f(z)`` on the product grid; ``+inf`` marks points outside
        the domain and is skipped by the maximum.
    grid : sequence of 1-D arrays
        Node coordinates along each axis (at least two per axis).
    dual_grid : sequence of 1-D arrays, optional
        Nodes where the conjugate is evaluated; defaults to ``grid``.

    Returns
    -------
    ndarray
        ``out[s] = max_z <s, z> - f(z)`` over the grid nodes ``z``.  The
        maximum over a product grid factorizes, so the transform is applied
        one axis at a time.
    """
    values = np.asarray(values, dtype=float)
    grid = [np.asarray(g, dtype=float) for g in grid]
    dual_grid = grid if dual_grid is None else [np.asarray(g, dtype=float) for g in dual_grid]
    if values.ndim != len(grid) or len(dual_grid) != len(grid):
        raise InputError("grid dimension does not match the value array")
    for ax, g in enumerate(grid):
        if g.ndim != 1 or g.size < 2:
            raise InputError("each grid axis needs at least two nodes")
        if values.shape[ax] != g.size:
            raise InputError(f"axis {ax} has {values.shape[ax]} values for {g.size} nodes")
    if np.any(np.isnan(values)) or np.any(values == -np.inf):
        raise InputError("values must be finite or +inf")
    if np.all(values == np.inf):
        raise InputError("conjugate of the constant +inf function is undefined")

    # h_k(s_1..s_k, z_{k+1}..) = max_{z_1..z_k} sum s_i z_i - f(z)
    out = -values
    for ax, (g, s) in enumerate(zip(grid, dual_grid)):
        moved = np.moveaxis(out, ax, -1)
        pair = moved[..., None, :] + s[:, None] * g[None, :]
        out = np.moveaxis(pair.max(axis=-1), -1, ax)
    return out


def hull_membership(point, generators, tol=HULL_TOL):
    """Decide whether ``point`` lies in the convex hull of ``generators``.

    Minimizes the l1 residual ``|sum_i lam_i g_i - point|_1`` over simplex
    weights with one LP; the point is a member iff the optimal residual is at
    most ``tol``.  Returns ``(member, weights)`` with ``weights`` set to
    ``None`` for non-members.
    """
    point = as_vector(point, "point")
    G = np.atleast_2d(np.asarray(generators, dtype=float))
    if G.shape[0] == 0:
        raise InputError("generator list is empty")
    if G.shape[1] != point.size:
        raise InputError(f"generators have dimension {G.shape[1]}, point has {point.size}")
    n, d = G.shape
    # variables: lam (n), r_plus (d), r_minus (d)
    cost = np.concatenate([np.zeros(n), np.ones(2 * d)])
    A = np.zeros((d + 1, n + 2 * d))
    A[:d, :n] = G.T
    A[:d, n:n + d] = np.eye(d)
    A[:d, n + d:] = -np.eye(d)
    A[d, :n] = 1.0
    b = np.concatenate([point, [1.0]])
    rep = solve_lp(LinearProgram(cost, A_eq=A, b_eq=b, lb=np.zeros(n + 2 * d)))
    lam = rep.x[:n]
    residual = float(np.abs(G.T @ lam - point).sum())
    if residual <= tol:
        return True, lam
    return False, None

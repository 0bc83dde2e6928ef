"""Dyadic model of a standard probability space.

The space is ``{0, ..., N-1}`` with ``N = 2^m`` atoms of mass ``1/N``.  Level
``k`` blocks are the runs of ``2^(m-k)`` consecutive atoms, measure-preserving
maps are permutations and couplings of the uniform law with itself are
nonnegative matrices with all row and column sums equal to ``1/N``.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
from scipy.optimize import linear_sum_assignment

from invmono.errors import CapacityError, InputError, LawMismatchError
from invmono.jsonio import read_json, require
from invmono.optkit import LinearProgram, solve_lp

MAX_LEVEL = 20
MARGIN_TOL = 1e-12
LAW_TOL = 1e-9


class DyadicSpace:
    """``2^level`` atoms of equal mass."""

    def __init__(self, level):
        level = int(level)
        if level < 0:
            raise InputError(f"level must be nonnegative, got {level}")
        if level > MAX_LEVEL:
            raise CapacityError(f"level {level} exceeds the refinement cap {MAX_LEVEL}")
        self.level = level
        self.size = 2 ** level
        self.weight = 1.0 / self.size

    def __eq__(self, other):
        return isinstance(other, DyadicSpace) and other.level == self.level

    def __hash__(self):
        return hash(self.level)

    def __repr__(self):
        return f"DyadicSpace(level={self.level})"


def _level_of(n):
    m = int(n).bit_length() - 1
    if n < 1 or 2 ** m != n:
        raise InputError(f"{n} is not a power of two")
    return m


class Permutation:
    """Bijection of ``{0, ..., N-1}`` stored as the array ``j -> mapping[j]``."""

    def __init__(self, mapping):
        arr = np.asarray(mapping)
        if arr.ndim != 1 or arr.size == 0:
            raise InputError("a permutation is a nonempty 1-D index array")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(arr == np.round(arr)):
                raise InputError("permutation entries must be integers")
            arr = arr.astype(np.int64)
        arr = arr.astype(np.int64)
        if not np.array_equal(np.sort(arr), np.arange(arr.size)):
            raise InputError("mapping is not a bijection")
        self.mapping = arr
        self.mapping.setflags(write=False)

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n))

    @property
    def order(self):
        return self.mapping.size

    def __call__(self, j):
        return self.mapping[j]

    def __len__(self):
        return self.order

    def __eq__(self, other):
        return isinstance(other, Permutation) and np.array_equal(self.mapping, other.mapping)

    def __hash__(self):
        return hash(self.mapping.tobytes())

    def compose(self, other):
        """``self o other``: first ``other``, then ``self``."""
        if other.order != self.order:
            raise InputError("permutation orders differ")
        return Permutation(self.mapping[other.mapping])

    def inverse(self):
        inv = np.empty_like(self.mapping)
        inv[self.mapping] = np.arange(self.order)
        return Permutation(inv)

    def matrix(self):
        """0/1 matrix with ``P[j, mapping[j]] = 1``."""
        P = np.zeros((self.order, self.order))
        P[np.arange(self.order), self.mapping] = 1.0
        return P

    def tolist(self):
        return self.mapping.tolist()

    def __repr__(self):
        return f"Permutation({self.mapping.tolist()})"


class DoublyStochastic:
    """Coupling of the uniform law on ``N`` atoms with itself.

    Entries are probability masses: every row and column sums to ``1/N``.
    """

    def __init__(self, matrix, tol=MARGIN_TOL):
        B = np.atleast_2d(np.asarray(matrix, dtype=float))
        if B.ndim != 2 or B.shape[0] != B.shape[1] or B.shape[0] == 0:
            raise InputError(f"coupling must be a nonempty square matrix, got shape {B.shape}")
        if not np.all(np.isfinite(B)):
            raise InputError("coupling has non-finite entries")
        if np.any(B < -tol):
            raise InputError("coupling has negative entries")
        N = B.shape[0]
        if np.max(np.abs(B.sum(axis=1) - 1.0 / N)) > tol or np.max(np.abs(B.sum(axis=0) - 1.0 / N)) > tol:
            raise InputError("row and column sums must all equal 1/N")
        self.matrix = np.maximum(B, 0.0)
        self.matrix.setflags(write=False)

    @property
    def order(self):
        return self.matrix.shape[0]

    @classmethod
    def from_dict(cls, data):
        order = int(require(data, "order", "coupling"))
        out = cls(require(data, "matrix", "coupling"))
        if out.order != order:
            raise InputError(f"coupling declares order {order} but the matrix has order {out.order}")
        return out

    @classmethod
    def load(cls, path):
        return cls.from_dict(read_json(path))

    def to_dict(self):
        return {"order": self.order, "matrix": self.matrix.tolist()}

    def __repr__(self):
        return f"DoublyStochastic(order={self.order})"


class EmpiricalSample:
    """A random variable on the dyadic space: one value row per atom."""

    def __init__(self, values, level=None):
        X = np.asarray(values, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] == 0:
            raise InputError(f"sample values must be an (N, d) array, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise InputError("sample has non-finite entries")
        m = _level_of(X.shape[0])
        if level is not None and int(level) != m:
            raise InputError(f"level {level} needs {2 ** int(level)} rows, got {X.shape[0]}")
        self.space = DyadicSpace(m)
        self.values = X
        self.values.setflags(write=False)

    @property
    def level(self):
        return self.space.level

    @property
    def size(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]

    def compose(self, g):
        """``X o g``: the sample ``j -> X[g(j)]``."""
        if g.order != self.size:
            raise InputError("permutation order does not match the sample size")
        return EmpiricalSample(self.values[g.mapping])

    def refine(self, level):
        """Same random variable on a finer space (each value repeated)."""
        if level < self.level:
            raise InputError("cannot refine to a coarser level")
        DyadicSpace(level)
        return EmpiricalSample(np.repeat(self.values, 2 ** (level - self.level), axis=0))

    def law(self):
        """Distinct rows (lexicographically sorted) and their masses."""
        rows, counts = np.unique(self.values, axis=0, return_counts=True)
        return rows, counts / self.size

    @classmethod
    def from_dict(cls, data):
        level = int(require(data, "level", "sample"))
        dim = int(require(data, "dim", "sample"))
        out = cls(require(data, "values", "sample"), level=level)
        if out.dim != dim:
            raise InputError(f"sample declares dim {dim} but values have dim {out.dim}")
        return out

    @classmethod
    def load(cls, path):
        return cls.from_dict(read_json(path))

    def to_dict(self):
        return {"level": self.level, "dim": self.dim, "values": self.values.tolist()}

    def __repr__(self):
        return f"EmpiricalSample(level={self.level}, dim={self.dim})"


def coarsen(sample, k):
    """Block average at level ``k``, returned block-constant on the original space."""
    k = int(k)
    if k < 0 or k > sample.level:
        raise InputError(f"level {k} is outside 0..{sample.level}")
    s = 2 ** (sample.level - k)
    X = sample.values.reshape(2 ** k, s, sample.dim)
    means = X.mean(axis=1, keepdims=True)
    return EmpiricalSample(np.broadcast_to(means, X.shape).reshape(sample.size, sample.dim))


def lift_permutation(sigma, m):
    """Lift a permutation of the level-k blocks to the atoms of level ``m``.

    Atom ``j`` in block ``i`` goes to the same offset inside block ``sigma(i)``.
    """
    if not isinstance(sigma, Permutation):
        sigma = Permutation(sigma)
    k = _level_of(sigma.order)
    if k > m:
        raise InputError(f"block level {k} exceeds target level {m}")
    DyadicSpace(m)
    s = 2 ** (m - k)
    j = np.arange(2 ** m)
    return Permutation(sigma.mapping[j // s] * s + j % s)


def count_matrix(g, blocks):
    """``C[i, i'] = #{j in block i : g(j) in block i'}`` for ``blocks`` equal blocks."""
    n = g.order
    if n % blocks:
        raise InputError("block count must divide the permutation order")
    s = n // blocks
    C = np.zeros((blocks, blocks), dtype=np.int64)
    np.add.at(C, (np.arange(n) // s, g.mapping // s), 1)
    return C


def _support_matching(M):
    """Perfect matching inside the support of a nonnegative matrix, heaviest first."""
    N = M.shape[0]
    top = float(M.max())
    cost = np.where(M > 0, -M / top, float(N + 1))
    rows, cols = linear_sum_assignment(cost)
    if np.any(M[rows, cols] <= 0):
        return None
    return cols


def round_counts(target):
    """Integer matrix within distance < 1 of ``target`` with its (integral) margins.

    Entries are floored and the fractional parts are rounded by one LP over
    the transportation polytope, whose vertices are integral; the objective
    favours rounding up the largest fractions.
    """
    base = np.floor(target + 1e-9)
    frac = np.clip(target - base, 0.0, None)
    frac[frac < 1e-9] = 0.0
    row_def = np.rint(target.sum(axis=1) - base.sum(axis=1))
    col_def = np.rint(target.sum(axis=0) - base.sum(axis=0))
    if not np.any(row_def):
        return base.astype(np.int64)
    idx = np.argwhere(frac > 0)
    nv = len(idx)
    N = target.shape[0]
    A = np.zeros((2 * N, nv))
    for k, (i, j) in enumerate(idx):
        A[i, k] = 1.0
        A[N + j, k] = 1.0
    b = np.concatenate([row_def, col_def])
    rep = solve_lp(LinearProgram(-frac[idx[:, 0], idx[:, 1]], A_eq=A, b_eq=b,
                                 lb=np.zeros(nv), ub=np.ones(nv)))
    if not rep.optimal:
        raise InputError(f"count rounding failed with status {rep.status}")
    out = base.copy()
    out[idx[:, 0], idx[:, 1]] += np.rint(rep.x)
    return out.astype(np.int64)


def approx_coupling(B, K):
    """Permutation of ``N K`` atoms whose block transitions reproduce ``B``.

    The target counts ``N K B`` are rounded to an integer matrix with row and
    column sums ``K``, split into ``K`` permutations of the blocks by repeated
    perfect matchings, and the ``k``-th sub-atom of block ``i`` is sent to the
    ``k``-th sub-atom of block ``pi_k(i)``.
    """
    if not isinstance(B, DoublyStochastic):
        B = DoublyStochastic(B)
    K = int(K)
    if K < 1:
        raise InputError(f"refinement must be at least 1, got {K}")
    N = B.order
    C = round_counts(N * K * B.matrix)
    mapping = np.empty(N * K, dtype=np.int64)
    R = C.copy()
    for k in range(K):
        cols = _support_matching(R.astype(float))
        if cols is None:
            raise InputError("count matrix admits no perfect matching")
        R[np.arange(N), cols] -= 1
        mapping[np.arange(N) * K + k] = cols * K + k
    return Permutation(mapping)


def _aggregate(points, weights):
    rows, inv = np.unique(points, axis=0, return_inverse=True)
    w = np.zeros(len(rows))
    np.add.at(w, inv.ravel(), weights)
    keep = w > 0
    return rows[keep], w[keep]


def _transport(P, a, Q, b, p):
    """Optimal transport LP between weighted point lists; returns (cost, plan)."""
    n, m = len(a), len(b)
    cost = np.linalg.norm(P[:, None, :] - Q[None, :, :], axis=2) ** p
    A = np.zeros((n + m, n * m))
    for i in range(n):
        A[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        A[n + j, j::m] = 1.0
    rep = solve_lp(LinearProgram(cost.ravel(), A_eq=A, b_eq=np.concatenate([a, b]), lb=np.zeros(n * m)))
    if not rep.optimal:
        raise InputError(f"transport LP ended with status {rep.status}")
    plan = rep.x.reshape(n, m)
    return max(float(np.sum(cost * plan)), 0.0), plan


def _weighted(measure, name):
    pts, w = measure
    pts = np.asarray(pts, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    w = np.asarray(w, dtype=float).ravel()
    if pts.shape[0] == 0:
        raise InputError(f"{name} has empty support")
    if pts.shape[0] != w.size:
        raise InputError(f"{name}: {pts.shape[0]} points but {w.size} weights")
    if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
        raise InputError(f"{name}: weights must be positive and sum to 1")
    return pts, w


def wasserstein(p, mu, nu):
    """Exact ``W_p`` between two weighted point lists ``(points, weights)``.

    Returns ``(W_p, plan)`` with ``plan[i, j]`` the mass moved from the
    ``i``-th point of ``mu`` to the ``j``-th point of ``nu``.
    """
    p = float(p)
    if p < 1:
        raise InputError(f"exponent must be at least 1, got {p}")
    P, a = _weighted(mu, "mu")
    Q, b = _weighted(nu, "nu")
    if P.shape[1] != Q.shape[1]:
        raise InputError("measures live in different dimensions")
    cost, plan = _transport(P, a, Q, b, p)
    return cost ** (1.0 / p), plan


def coupling_discrepancy(sigma, B, Z, Zp):
    """``W_2`` between the law of ``(Z, Z' o sigma)`` and the coupling ``B`` of ``Z``, ``Z'``.

    ``Z`` and ``Z'`` live on ``N`` atoms and ``sigma`` on ``N K`` atoms, each
    coarse value being repeated over its ``K`` sub-atoms.
    """
    if not isinstance(B, DoublyStochastic):
        B = DoublyStochastic(B)
    N = B.order
    if Z.size != N or Zp.size != N:
        raise InputError("samples must have as many atoms as the coupling order")
    if sigma.order % N:
        raise InputError(f"permutation order {sigma.order} is not a refinement of {N} atoms")
    K = sigma.order // N
    C = count_matrix(sigma, N)
    ii, jj = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    pts = np.hstack([Z.values[ii.ravel()], Zp.values[jj.ravel()]])
    P, a = _aggregate(pts, C.ravel() / (N * K))
    Q, b = _aggregate(pts, B.matrix.ravel())
    cost, _ = _transport(P, a / a.sum(), Q, b / b.sum(), 2.0)
    return float(np.sqrt(cost))


def _dyadic_level(weights, start):
    for m in range(start, MAX_LEVEL + 1):
        scaled = weights * 2 ** m
        if np.all(np.abs(scaled - np.rint(scaled)) <= 1e-6):
            return m
    raise CapacityError(f"weights are not representable with at most 2^{MAX_LEVEL} atoms")


def lp_distance(X, Y, p):
    """``(mean |X_j - Y_j|^p)^(1/p)`` for samples on the same space."""
    if X.size != Y.size:
        raise InputError("samples live on different spaces")
    return float(np.mean(np.linalg.norm(X.values - Y.values, axis=1) ** p) ** (1.0 / p))


def monge_match(X, nu, p, eps=0.0):
    """Transport map realizing ``W_p`` from the law of ``X`` to ``nu``.

    ``X`` is refined until every weight of ``nu`` is a whole number of atoms,
    then an optimal assignment pairs atoms with copies of the target points.
    Returns ``(X_refined, Y)`` with ``Y`` distributed as ``nu`` exactly and
    ``|X - Y|_p = W_p`` (the assignment is optimal, so no slack ``eps`` is
    spent).
    """
    if eps < 0:
        raise InputError("eps must be nonnegative")
    Q, b = _weighted(nu, "nu")
    if Q.shape[1] != X.dim:
        raise InputError("target measure lives in a different dimension")
    m = _dyadic_level(b, X.level)
    Xr = X.refine(m)
    counts = np.rint(b * 2 ** m).astype(np.int64)
    targets = np.repeat(Q, counts, axis=0)
    cost = np.linalg.norm(Xr.values[:, None, :] - targets[None, :, :], axis=2) ** p
    rows, cols = linear_sum_assignment(cost)
    Y = np.empty_like(targets)
    Y[rows] = targets[cols]
    return Xr, EmpiricalSample(Y)


def align_same_law(first, second, tol=LAW_TOL):
    """Permutation ``g`` with ``(X' o g, Y' o g) = (X, Y)`` row by row.

    ``first = (X, Y)`` and ``second = (X', Y')``; ``Y`` parts may be ``None``.
    Raises :class:`LawMismatchError` naming a row of ``(X, Y)`` that has no
    partner when the joint laws differ.
    """
    def rows(pair):
        X, Y = pair
        X = X.values if isinstance(X, EmpiricalSample) else np.asarray(X, dtype=float)
        X = X[:, None] if X.ndim == 1 else X
        if Y is None:
            return X
        Y = Y.values if isinstance(Y, EmpiricalSample) else np.asarray(Y, dtype=float)
        Y = Y[:, None] if Y.ndim == 1 else Y
        if Y.shape[0] != X.shape[0]:
            raise InputError("paired samples differ in length")
        return np.hstack([X, Y])

    Z, Zp = rows(first), rows(second)
    if Z.shape != Zp.shape:
        raise InputError(f"row arrays of shapes {Z.shape} and {Zp.shape} cannot share a law")
    cost = np.max(np.abs(Z[:, None, :] - Zp[None, :, :]), axis=2)
    cost = np.where(cost <= tol, 0.0, 1.0 + cost)
    r, c = linear_sum_assignment(cost)
    bad = np.flatnonzero(cost[r, c] > 0)
    if bad.size:
        j = int(r[bad[0]])
        raise LawMismatchError(f"row {j} ({Z[j].tolist()}) has no partner with the same value", row=j)
    g = np.empty(Z.shape[0], dtype=np.int64)
    g[r] = c
    return Permutation(g)


def birkhoff_decompose(B, max_denominator=10 ** 6):
    """Write ``N B`` as a convex combination of permutation matrices.

    Entries of ``N B`` are rationalized with denominator at most
    ``max_denominator``, permutations are peeled off by perfect matchings on
    the support (exact integer arithmetic), and the list is thinned to at
    most ``N^2 - 2N + 2`` terms by removing affine dependencies.
    Returns ``[(weight, Permutation), ...]``.
    """
    if not isinstance(B, DoublyStochastic):
        B = DoublyStochastic(B)
    N = B.order
    fr = [[Fraction(float(v)).limit_denominator(max_denominator) for v in row] for row in N * B.matrix]
    q = 1
    for row in fr:
        for v in row:
            q = math.lcm(q, v.denominator)
            if q > max_denominator:
                raise InputError(f"common denominator exceeds {max_denominator}")
    M = np.array([[int(v * q) for v in row] for row in fr], dtype=np.int64)
    if np.any(M.sum(axis=0) != q) or np.any(M.sum(axis=1) != q):
        raise InputError("rationalized matrix is not doubly stochastic")
    terms = []
    while M.any():
        cols = _support_matching(M.astype(float))
        if cols is None:
            raise InputError("no perfect matching on the support; the matrix is not doubly stochastic")
        w = int(M[np.arange(N), cols].min())
        M[np.arange(N), cols] -= w
        terms.append([w / q, Permutation(cols)])
    terms = _thin(terms, N)
    return [(float(w), g) for w, g in terms]


def _thin(terms, N):
    """Caratheodory reduction of a convex combination of permutation matrices."""
    limit = N * N - 2 * N + 2
    while len(terms) > limit:
        A = np.array([g.matrix().ravel() for _, g in terms]).T
        A = np.vstack([A, np.ones(len(terms))])
        null = np.linalg.svd(A)[2][-1]
        w = np.array([t[0] for t in terms])
        pos = null > 1e-12
        if not np.any(pos):
            null = -null
            pos = null > 1e-12
        ratio = w[pos] / null[pos]
        k = np.flatnonzero(pos)[int(np.argmin(ratio))]
        w = np.maximum(w - ratio.min() * null, 0.0)
        w[k] = 0.0
        terms = [[wi, g] for wi, (_, g) in zip(w, terms) if wi > 0.0]
    return terms


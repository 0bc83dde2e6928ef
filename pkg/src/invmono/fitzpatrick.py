"""Finite monotone graphs and their maximal monotone extension.

A finite graph ``A = {(x_k, v_k)}`` in ``R^d x R^d`` is monotone when
``<v_i - v_j, x_i - x_j> >= 0`` for all pairs.  With ``c_k = <v_k, x_k>``:

* ``F_A(x, v) = max_k <v_k, x> + <v, x_k> - c_k`` (finite max);
* ``P_A(v, x) = min { sum l_k c_k : l in simplex, sum l_k (x_k, v_k) = (x, v) }``;
* ``f = F_A + indicator(D x R^d)`` with ``D = conv{x_k}``, whose conjugate is
  ``f*(v, x) = min_{v1 + v2 = v} P_A(v1, x) + sigma_D(v2)`` and
  ``sigma_D(b) = max_k <b, x_k>``.

The kernel average with ``psi(x, v) = |x|^2/2 + |v|^2/2`` is

    R(x, v) = min  f(z1)/2 + f*(v2, x2)/2 + psi(z1 - z2)/4
              s.t. (x, v) = (z1 + z2)/2,

and its contact set ``{R(x, v) = <v, x>}`` is a maximal monotone operator
containing ``A`` whose domain stays inside ``D``.

Joint QP
--------
Nothing is evaluated in a nested loop.  Write ``X``, ``V`` for the ``d x n``
matrices with columns ``x_k``, ``v_k``.  The variables are

    z = [mu (n), lam (n), b (d), t, s]

with ``mu`` the hull weights of ``x1 = X mu``, ``lam`` the weights of the
``P_A`` term (``x2 = X lam``, its dual part ``V lam``), ``b`` the
``sigma_D`` argument, ``t`` the epigraph of ``F_A`` and ``s`` the epigraph of
``sigma_D``.  Then ``v2 = V lam + b`` and ``v1 = 2v - v2``, and ``R(x, v)``
equals

    min  t/2 + (c'lam + s)/2 + |X(mu - lam)|^2/8 + |v - b - V lam|^2/2
    s.t. t >= <v_k, X mu> + <x_k, 2v - b - V lam> - c_k   (all k)
         s >= <x_k, b>                                    (all k)
         mu, lam >= 0,  1'mu = 1'lam = 1,  X(mu + lam) = 2x.

The last term is ``psi(z1 - z2)/4`` because ``z1 - z2 = (X(mu - lam), 2(v - v2))``.
Minimizing over ``t`` and ``s`` recovers ``F_A(z1)`` and ``sigma_D(b)``, and
minimizing over ``lam`` and ``b`` recovers ``f*(v2, x2)``.

For the resolvent at ``y`` with step ``tau`` the equality ``X(mu + lam) = 2x``
is dropped, ``x = X(mu + lam)/2`` and ``v = (y - x)/tau`` become linear
expressions in ``z``, and ``|x|^2/tau - <y, x>/tau`` is added so the objective
is ``R(x, v) - <v, x> >= 0``.  Its zero set is the unique point ``x`` with
``(y - x)/tau`` in the extension at ``x``.
"""

from __future__ import annotations

import itertools

import numpy as np

from invmono.errors import InputError, InvariantViolation, SolverError, UnsupportedKernel
from invmono.jsonio import read_json, require
from invmono.optkit import LinearProgram, QuadraticProgram, as_vector, hull_membership, solve_lp, solve_qp

MONO_TOL = 1e-10
DEDUP_TOL = 1e-10
MATCH_TOL = 1e-8
CONTACT_TOL = 1e-6


class MonotoneGraph:
    """Finite monotone graph stored as arrays ``X`` (n, d) and ``V`` (n, d)."""

    def __init__(self, X, V, check=True):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        V = np.atleast_2d(np.asarray(V, dtype=float))
        if X.shape[0] == 0:
            raise InputError("a graph needs at least one pair")
        if X.shape != V.shape:
            raise InputError(f"primal points {X.shape} and dual points {V.shape} differ in shape")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(V))):
            raise InputError("graph has non-finite entries")
        self.X = X
        self.V = V
        self.X.setflags(write=False)
        self.V.setflags(write=False)
        if check:
            ok, worst = check_monotone(self)
            if not ok:
                i, j, val = worst
                raise InvariantViolation(f"pairs {i} and {j} violate monotonicity (pairing {val:.3e})")

    @classmethod
    def from_pairs(cls, pairs, check=True):
        pairs = list(pairs)
        if not pairs:
            raise InputError("a graph needs at least one pair")
        xs, vs = [], []
        for x, v in pairs:
            xs.append(np.atleast_1d(np.asarray(x, dtype=float)))
            vs.append(np.atleast_1d(np.asarray(v, dtype=float)))
        dims = {a.shape for a in xs + vs}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise InputError("all graph vectors must share one dimension")
        return cls(np.array(xs), np.array(vs), check=check)

    @classmethod
    def from_dict(cls, data):
        dim = int(require(data, "dim", "graph"))
        graph = cls.from_pairs(require(data, "pairs", "graph"))
        if graph.dim != dim:
            raise InputError(f"graph declares dim {dim} but pairs have dim {graph.dim}")
        return graph

    @classmethod
    def load(cls, path):
        return cls.from_dict(read_json(path))

    def to_dict(self):
        return {"dim": self.dim, "pairs": [[x.tolist(), v.tolist()] for x, v in self.pairs()]}

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def size(self):
        return self.X.shape[0]

    @property
    def pairing(self):
        """The values ``<v_k, x_k>``."""
        return np.einsum("ij,ij->i", self.X, self.V)

    def pairs(self):
        return list(zip(self.X, self.V))

    def __len__(self):
        return self.size

    def __repr__(self):
        return f"MonotoneGraph(dim={self.dim}, size={self.size})"


def _as_arrays(pairs):
    if isinstance(pairs, MonotoneGraph):
        return pairs.X, pairs.V
    g = MonotoneGraph.from_pairs(pairs, check=False)
    return g.X, g.V


def check_monotone(pairs, tol=MONO_TOL):
    """Check monotonicity of a finite pair set.

    Returns ``(ok, (i, j, value))`` where ``value`` is the smallest pairing
    ``<v_i - v_j, x_i - x_j>`` over ``i < j`` (``None`` for a single pair).
    """
    X, V = _as_arrays(pairs)
    n = X.shape[0]
    if n < 2:
        return True, None
    dX = X[:, None, :] - X[None, :, :]
    dV = V[:, None, :] - V[None, :, :]
    M = np.einsum("ijk,ijk->ij", dX, dV)
    iu = np.triu_indices(n, 1)
    k = int(np.argmin(M[iu]))
    i, j = int(iu[0][k]), int(iu[1][k])
    val = float(M[i, j])
    return val >= -tol, (i, j, val)


class KernelPsi:
    """Self-dual kernel ``psi(x, v) = |x|^p / p + |v|^q / q`` with ``1/p + 1/q = 1``."""

    def __init__(self, p=2.0):
        p = float(p)
        if not (p > 1.0 and np.isfinite(p)):
            raise InputError(f"kernel exponent must lie in (1, inf), got {p}")
        self.p = p
        self.q = p / (p - 1.0)

    def __call__(self, x, v):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        v = np.atleast_1d(np.asarray(v, dtype=float))
        return float(np.linalg.norm(x) ** self.p / self.p + np.linalg.norm(v) ** self.q / self.q)

    @property
    def quadratic(self):
        return self.p == 2.0

    def __repr__(self):
        return f"KernelPsi(p={self.p:g})"


class IsometryGroup:
    """Finite group of orthogonal ``d x d`` matrices.

    Construction verifies orthogonality, presence of the identity and closure
    under products and inverses.
    """

    def __init__(self, matrices, dim=None, tol=1e-10):
        mats = [np.atleast_2d(np.asarray(m, dtype=float)) for m in matrices]
        if not mats:
            raise InputError("a group needs at least one element")
        d = mats[0].shape[0] if dim is None else int(dim)
        for m in mats:
            if m.shape != (d, d):
                raise InputError(f"group element of shape {m.shape}, expected {(d, d)}")
            if np.max(np.abs(m.T @ m - np.eye(d))) > tol:
                raise InvariantViolation("group element is not orthogonal")
        self.dim = d
        self.elements = mats
        self.tol = tol
        if self.index_of(np.eye(d)) is None:
            raise InvariantViolation("group does not contain the identity")
        for a in mats:
            if self.index_of(a.T) is None:
                raise InvariantViolation("group is not closed under inverses")
            for b in mats:
                if self.index_of(a @ b) is None:
                    raise InvariantViolation("group is not closed under products")

    def index_of(self, m):
        for k, e in enumerate(self.elements):
            if np.max(np.abs(e - m)) <= self.tol:
                return k
        return None

    def __len__(self):
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    @classmethod
    def generate(cls, generators, dim=None, max_order=10_000):
        """Close a list of orthogonal generators under multiplication."""
        gens = [np.atleast_2d(np.asarray(g, dtype=float)) for g in generators]
        d = gens[0].shape[0] if gens else int(dim)
        elems = [np.eye(d)]
        frontier = [np.eye(d)]
        while frontier:
            nxt = []
            for a in frontier:
                for g in gens:
                    m = g @ a
                    if not any(np.max(np.abs(m - e)) <= 1e-9 for e in elems):
                        elems.append(m)
                        nxt.append(m)
                        if len(elems) > max_order:
                            raise InputError("generated group exceeds the order cap")
            frontier = nxt
        return cls(elems, dim=d)

    @classmethod
    def trivial(cls, d):
        return cls([np.eye(d)])

    @classmethod
    def sign(cls, d):
        """The group ``{I, -I}``."""
        return cls([np.eye(d), -np.eye(d)])

    @classmethod
    def rotations(cls, order):
        """Cyclic group of planar rotations by multiples of ``2 pi / order``."""
        mats = []
        for k in range(int(order)):
            a = 2.0 * np.pi * k / order
            c, s = np.cos(a), np.sin(a)
            mats.append(np.array([[c, -s], [s, c]]))
        return cls(mats)

    @classmethod
    def block_permutations(cls, blocks, block_dim):
        """All permutations of ``blocks`` coordinate blocks of size ``block_dim``."""
        d = blocks * block_dim
        mats = []
        for perm in itertools.permutations(range(blocks)):
            m = np.zeros((d, d))
            for i, j in enumerate(perm):
                m[j * block_dim:(j + 1) * block_dim, i * block_dim:(i + 1) * block_dim] = np.eye(block_dim)
            mats.append(m)
        return cls(mats)

    @classmethod
    def from_dict(cls, data):
        dim = int(require(data, "dim", "group"))
        return cls(require(data, "matrices", "group"), dim=dim)

    @classmethod
    def load(cls, path):
        return cls.from_dict(read_json(path))

    def to_dict(self):
        return {"dim": self.dim, "matrices": [m.tolist() for m in self.elements]}

    def __repr__(self):
        return f"IsometryGroup(dim={self.dim}, order={len(self)})"


def _check_point(graph, x, v):
    x = as_vector(x, "x")
    v = as_vector(v, "v")
    if x.size != graph.dim or v.size != graph.dim:
        raise InputError(f"query dimension ({x.size}, {v.size}) does not match graph dim {graph.dim}")
    return x, v


def fitzpatrick_eval(graph, x, v):
    """``max_k <v_k, x> + <v, x_k> - <v_k, x_k>``."""
    x, v = _check_point(graph, x, v)
    return float(np.max(graph.V @ x + graph.X @ v - graph.pairing))


def penot_eval(graph, v, x):
    """Convex relaxation of the pairing restricted to the graph.

    Solves ``min sum l_k c_k`` over simplex weights reproducing ``(x, v)``;
    returns ``inf`` when ``(x, v)`` lies outside the convex hull of the graph.
    """
    x, v = _check_point(graph, x, v)
    n = graph.size
    A = np.vstack([graph.X.T, graph.V.T, np.ones((1, n))])
    b = np.concatenate([x, v, [1.0]])
    rep = solve_lp(LinearProgram(graph.pairing, A_eq=A, b_eq=b, lb=np.zeros(n)))
    if rep.status == "infeasible":
        return np.inf
    if not rep.optimal:
        raise SolverError(f"penot LP ended with status {rep.status}", rep)
    return rep.value


def fstar_eval(graph, v, x):
    """Conjugate of ``F_A + indicator(conv{x_k} x R^d)`` at ``(v, x)``.

    One LP over weights ``l >= 0`` (the ``P_A`` part), a free split
    ``b = v - V l`` and an epigraph variable ``s >= max_k <b, x_k>``.
    """
    x, v = _check_point(graph, x, v)
    n, d = graph.size, graph.dim
    # variables: l (n), b (d), s
    cost = np.concatenate([graph.pairing, np.zeros(d), [1.0]])
    A = np.zeros((2 * d + 1, n + d + 1))
    A[:d, :n] = graph.X.T
    A[d:2 * d, :n] = graph.V.T
    A[d:2 * d, n:n + d] = np.eye(d)
    A[2 * d, :n] = 1.0
    b = np.concatenate([x, v, [1.0]])
    G = np.zeros((n, n + d + 1))
    G[:, n:n + d] = graph.X
    G[:, -1] = -1.0
    lb = np.concatenate([np.zeros(n), np.full(d + 1, -np.inf)])
    rep = solve_lp(LinearProgram(cost, A_eq=A, b_eq=b, A_ub=G, b_ub=np.zeros(n), lb=lb))
    if rep.status == "infeasible":
        return np.inf
    if not rep.optimal:
        raise SolverError(f"conjugate LP ended with status {rep.status}", rep)
    return rep.value


class ExtensionProgram:
    """Joint QP template for the kernel average of a monotone graph.

    The graph-dependent blocks are assembled once; each query only adds its
    right-hand sides.  See the module docstring for the derivation.
    """

    def __init__(self, graph, kernel=None, group=None):
        if not isinstance(graph, MonotoneGraph):
            graph = MonotoneGraph.from_pairs(graph)
        self.graph = graph
        self.kernel = kernel if kernel is not None else KernelPsi(2.0)
        self.group = group
        if group is not None:
            if group.dim != graph.dim:
                raise InputError("group and graph dimensions differ")
            if not check_invariance(graph, group):
                raise InvariantViolation("graph is not invariant under the group")
        n, d = graph.size, graph.dim
        self.n, self.d = n, d
        self.nvar = 2 * n + d + 2
        self.sl_mu = slice(0, n)
        self.sl_lam = slice(n, 2 * n)
        self.sl_b = slice(2 * n, 2 * n + d)
        self.i_t = 2 * n + d
        self.i_s = 2 * n + d + 1
        Xm, Vm = graph.X.T, graph.V.T
        self.Xm, self.Vm = Xm, Vm
        c = graph.pairing
        self.c = c

        # x1 - x2 = X(mu - lam)
        self.P_diff = np.zeros((d, self.nvar))
        self.P_diff[:, self.sl_mu] = Xm
        self.P_diff[:, self.sl_lam] = -Xm
        # v2 = V lam + b
        self.P_v2 = np.zeros((d, self.nvar))
        self.P_v2[:, self.sl_lam] = Vm
        self.P_v2[:, self.sl_b] = np.eye(d)
        # x = X(mu + lam)/2
        self.P_x = np.zeros((d, self.nvar))
        self.P_x[:, self.sl_mu] = Xm / 2
        self.P_x[:, self.sl_lam] = Xm / 2

        self.lin = np.zeros(self.nvar)
        self.lin[self.i_t] = 0.5
        self.lin[self.sl_lam] = 0.5 * c
        self.lin[self.i_s] = 0.5

        # t rows without the query-dependent 2<x_k, v> part
        self.G_t = np.zeros((n, self.nvar))
        self.G_t[:, self.sl_mu] = graph.V @ Xm
        self.G_t[:, self.sl_lam] = -graph.X @ Vm
        self.G_t[:, self.sl_b] = -graph.X
        self.G_t[:, self.i_t] = -1.0
        self.G_s = np.zeros((n, self.nvar))
        self.G_s[:, self.sl_b] = graph.X
        self.G_s[:, self.i_s] = -1.0

        self.E_simplex = np.zeros((2, self.nvar))
        self.E_simplex[0, self.sl_mu] = 1.0
        self.E_simplex[1, self.sl_lam] = 1.0
        self.lb = np.full(self.nvar, -np.inf)
        self.lb[: 2 * n] = 0.0

    def _require_quadratic(self):
        if not self.kernel.quadratic:
            raise UnsupportedKernel(f"only the p = 2 kernel yields a QP, got {self.kernel}")

    def _start(self, mu, lam, G, h):
        z = np.zeros(self.nvar)
        z[self.sl_mu] = mu
        z[self.sl_lam] = lam
        # t and s sit on the tightest of their affine lower bounds
        for col in (self.i_t, self.i_s):
            rows = np.flatnonzero(G[:, col] == -1.0)
            rest = G[rows] @ z - h[rows]
            z[col] = float(np.max(rest))
        return z

    def assemble_rf(self, x, v, weights=None):
        """QP whose optimal value is ``R(x, v)``; ``weights`` seed a feasible start."""
        self._require_quadratic()
        x = as_vector(x, "x")
        v = as_vector(v, "v")
        Q = np.zeros((self.nvar, self.nvar))
        q = self.lin.copy()
        const = 0.0
        Q += 2 * (1 / 8) * self.P_diff.T @ self.P_diff
        # |v - v2|^2 / 2
        Q += self.P_v2.T @ self.P_v2
        q += -self.P_v2.T @ v
        const += 0.5 * float(v @ v)
        G = np.vstack([self.G_t, self.G_s])
        h = np.concatenate([self.c - 2 * self.graph.X @ v, np.zeros(self.n)])
        E = np.vstack([self.E_simplex, 2 * self.P_x])
        e = np.concatenate([[1.0, 1.0], 2 * x])
        qp = QuadraticProgram(0.5 * (Q + Q.T), q, A_eq=E, b_eq=e, A_ub=G, b_ub=h, lb=self.lb)
        z0 = None if weights is None else self._start(weights, weights, G, h)
        return qp, const, z0

    def assemble_resolvent(self, tau, y):
        """QP whose optimal value is ``min_x R(x, (y-x)/tau) - <(y-x)/tau, x>``."""
        self._require_quadratic()
        y = as_vector(y, "y")
        it = 1.0 / tau
        Q = np.zeros((self.nvar, self.nvar))
        q = self.lin.copy()
        const = 0.0
        Q += 2 * (1 / 8) * self.P_diff.T @ self.P_diff
        # |v - v2|^2 / 2 with v = (y - x)/tau
        P = -it * self.P_x - self.P_v2
        p0 = it * y
        Q += P.T @ P
        q += P.T @ p0
        const += 0.5 * float(p0 @ p0)
        # |x|^2/tau - <y, x>/tau
        Q += 2 * it * self.P_x.T @ self.P_x
        q += -it * self.P_x.T @ y
        # 2<x_k, v> = 2<x_k, y>/tau - 2<x_k, x>/tau moves partly into the rows
        G_t = self.G_t - 2 * it * self.graph.X @ self.P_x
        G = np.vstack([G_t, self.G_s])
        h = np.concatenate([self.c - 2 * it * self.graph.X @ y, np.zeros(self.n)])
        qp = QuadraticProgram(0.5 * (Q + Q.T), q, A_eq=self.E_simplex, b_eq=[1.0, 1.0],
                              A_ub=G, b_ub=h, lb=self.lb)
        e0 = np.zeros(self.n)
        e0[0] = 1.0
        return qp, const, self._start(e0, e0, G, h)

    def split(self, z, x=None, v=None, tau=None, y=None):
        """Recover ``(x, v, x1, v1, x2, v2)`` from a QP point ``z``."""
        x_ = self.P_x @ z if x is None else x
        v_ = (y - x_) / tau if v is None else v
        x1 = self.Xm @ z[self.sl_mu]
        x2 = self.Xm @ z[self.sl_lam]
        v2 = self.P_v2 @ z
        v1 = 2 * v_ - v2
        return x_, v_, x1, v1, x2, v2


def _solve(qp, z0, what):
    try:
        rep = solve_qp(qp, x0=z0)
    except ValueError:
        # warm start off by rounding; fall back to a phase-one start
        rep = solve_qp(qp)
    if not rep.optimal:
        raise SolverError(f"{what}: QP ended with status {rep.status} "
                          f"(KKT residual {rep.kkt_residual:.3e})", rep)
    return rep


def _program(obj):
    return obj if isinstance(obj, ExtensionProgram) else ExtensionProgram(obj)


def rf_eval(program, x, v, return_report=False):
    """Kernel average ``R(x, v)``; ``inf`` when ``x`` is outside the primal hull."""
    program = _program(program)
    program._require_quadratic()
    x, v = _check_point(program.graph, x, v)
    member, w = hull_membership(x, program.graph.X)
    if not member:
        return (np.inf, None) if return_report else np.inf
    qp, const, z0 = program.assemble_rf(x, v, weights=np.maximum(w, 0.0) / np.maximum(w, 0.0).sum())
    rep = _solve(qp, z0, "kernel average")
    value = rep.value + const
    return (value, rep) if return_report else value


def resolvent_mono(program, tau, y, return_value=False):
    """Resolvent ``(I + tau A~)^{-1}(y)`` of the maximal extension.

    Solves the joint QP; its optimal value certifies contact and must not
    exceed ``1e-6``.  With ``return_value`` the pair ``(x, value)`` is
    returned.
    """
    program = _program(program)
    tau = float(tau)
    if not (tau > 0 and np.isfinite(tau)):
        raise InputError(f"step must be positive and finite, got {tau}")
    y = as_vector(y, "y")
    if y.size != program.d:
        raise InputError(f"point has dimension {y.size}, graph has {program.d}")
    qp, const, z0 = program.assemble_resolvent(tau, y)
    rep = _solve(qp, z0, "resolvent")
    value = rep.value + const
    scale = 1.0 + float(y @ y) / tau
    if value > CONTACT_TOL * scale:
        raise SolverError(f"resolvent contact value {value:.3e} exceeds tolerance", rep)
    x = program.P_x @ rep.x
    return (x, value) if return_value else x


def saturate_orbit(graph, group):
    """Close the graph under ``(x, v) -> (Ux, Uv)`` and verify monotonicity."""
    if group.dim != graph.dim:
        raise InputError("group and graph dimensions differ")
    xs, vs = [], []
    for x, v in graph.pairs():
        for U in group:
            ux, uv = U @ x, U @ v
            dup = any(np.max(np.abs(ux - a)) <= DEDUP_TOL and np.max(np.abs(uv - b)) <= DEDUP_TOL
                      for a, b in zip(xs, vs))
            if not dup:
                xs.append(ux)
                vs.append(uv)
    out = MonotoneGraph(np.array(xs), np.array(vs), check=False)
    ok, worst = check_monotone(out)
    if not ok:
        i, j, val = worst
        raise InvariantViolation(f"orbit pairs {i} and {j} violate monotonicity (pairing {val:.3e})")
    return out


def check_invariance(graph, group, tol=MATCH_TOL):
    """True iff every ``(Ux_i, Uv_i)`` matches a graph pair within ``tol``."""
    if group.dim != graph.dim:
        raise InputError("group and graph dimensions differ")
    Z = np.hstack([graph.X, graph.V])
    for U in group:
        UZ = np.hstack([graph.X @ U.T, graph.V @ U.T])
        dist = np.max(np.abs(UZ[:, None, :] - Z[None, :, :]), axis=2)
        if np.any(dist.min(axis=1) > tol):
            return False
    return True

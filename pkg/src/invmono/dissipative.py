"""Dissipative operators on ``R^n`` and the maps they generate.

An operator ``B`` is ``lam``-dissipative when
``<B(x) - B(y), x - y> <= lam |x - y|^2``.  For ``0 < tau < 1/lam+`` the
resolvent ``J = (I - tau B)^{-1}`` is ``1/(1 - lam tau)``-Lipschitz, the
Yosida map is ``(J - I)/tau`` and the semigroup is approximated by the
exponential formula ``(J_{t/n})^n``.

States of ``N`` particles in ``R^d`` are flat vectors of length ``N d``; the
row ``i`` of ``x.reshape(N, d)`` is the value at atom ``i``.
"""

from __future__ import annotations

import hashlib

import numpy as np

from invmono.errors import ConvergenceError, InputError, InvariantViolation, NonInvarianceError
from invmono.fitzpatrick import ExtensionProgram, MonotoneGraph, resolvent_mono
from invmono.jsonio import read_json, require
from invmono.mps import EmpiricalSample, Permutation

PROBE_SEED = 20240611
PROBE_COUNT = 32
RESIDUAL_TOL = 1e-10
MAX_ITER = 1_000_000
DIVERGENCE_CAP = 1e6
TABLE_TOL = 1e-7


def make_probes(dim, count=PROBE_COUNT, seed=PROBE_SEED, scale=1.0):
    """Deterministic standard-normal probe vectors, one per row."""
    return scale * np.random.default_rng(seed).standard_normal((count, dim))


class OperatorSpec:
    """Base class: a ``lam``-dissipative operator on ``R^dim``."""

    def __init__(self, lam, dim):
        lam = float(lam)
        if not np.isfinite(lam):
            raise InputError("dissipativity modulus must be finite")
        self.lam = lam
        self.dim = int(dim)

    @property
    def max_step(self):
        """Supremum of admissible steps ``1/lam+``."""
        return np.inf if self.lam <= 0 else 1.0 / self.lam

    def check_step(self, tau):
        tau = float(tau)
        if not (tau > 0 and tau < self.max_step and np.isfinite(tau)):
            raise InputError(f"step {tau} outside (0, {self.max_step})")
        return tau

    def check_point(self, y):
        y = np.asarray(y, dtype=float).ravel()
        if y.size != self.dim:
            raise InputError(f"point has {y.size} coordinates, operator acts on {self.dim}")
        if not np.all(np.isfinite(y)):
            raise InputError("point has non-finite entries")
        return y

    def resolvent(self, tau, y):
        raise NotImplementedError


class ExplicitLipschitz(OperatorSpec):
    """Single-valued Lipschitz operator given by an evaluation handle.

    The dissipativity inequality is checked on consecutive probe pairs.
    """

    def __init__(self, fn, lip, lam, dim, probes=None, name="explicit"):
        super().__init__(lam, dim)
        lip = float(lip)
        if not (lip >= 0 and np.isfinite(lip)):
            raise InputError(f"Lipschitz bound must be finite and nonnegative, got {lip}")
        self.fn = fn
        self.lip = lip
        self.name = name
        P = make_probes(self.dim) if probes is None else np.atleast_2d(probes)
        for a, b in zip(P[:-1], P[1:]):
            d = a - b
            excess = float((self(a) - self(b)) @ d) - self.lam * float(d @ d)
            if excess > 1e-8:
                raise InvariantViolation(f"{name}: dissipativity fails on a probe pair (excess {excess:.3e})")

    def __call__(self, x):
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float).ravel()

    def resolvent(self, tau, y):
        """Solve ``x - tau B(x) = y`` by a relaxed fixed-point iteration.

        ``G(x) = x - tau B(x) - y`` is ``m = 1 - lam tau`` strongly monotone
        and ``M = 1 + tau lip`` Lipschitz, so ``x <- x - theta G(x)`` with
        ``theta = m / M^2`` contracts with factor ``sqrt(1 - m^2/M^2)``.  When
        ``tau lip < 1`` the plain iteration ``x <- y + tau B(x)`` contracts
        with factor ``tau lip`` and is used if it is faster.
        """
        tau = self.check_step(tau)
        y = self.check_point(y)
        m = 1.0 - self.lam * tau
        M = 1.0 + tau * self.lip
        rate_relaxed = np.sqrt(max(0.0, 1.0 - (m / M) ** 2))
        rate_plain = tau * self.lip
        theta = 1.0 if rate_plain < rate_relaxed else m / M ** 2
        x = y.copy()
        target = RESIDUAL_TOL * max(1.0, float(np.linalg.norm(y)))
        for _ in range(MAX_ITER):
            g = x - tau * self(x) - y
            res = float(np.linalg.norm(g))
            if res <= target:
                return x
            x = x - theta * g
        raise ConvergenceError(f"{self.name}: resolvent iteration stalled at residual {res:.3e}", res)


class LinearMatrix(OperatorSpec):
    """``B(x) = M x`` with symmetric part bounded by ``lam``."""

    def __init__(self, M, lam):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape[0] != M.shape[1]:
            raise InputError(f"matrix must be square, got {M.shape}")
        super().__init__(lam, M.shape[0])
        top = float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])
        if top > self.lam + 1e-10:
            raise InvariantViolation(f"symmetric part has eigenvalue {top:.6g} above lambda {self.lam:.6g}")
        self.M = M
        self.lip = float(np.linalg.norm(M, 2))

    def __call__(self, x):
        return self.M @ np.asarray(x, dtype=float).ravel()

    def resolvent(self, tau, y):
        tau = self.check_step(tau)
        y = self.check_point(y)
        return np.linalg.solve(np.eye(self.dim) - tau * self.M, y)


class GraphExtension(OperatorSpec):
    """Maximal ``lam``-dissipative extension of a finite graph of ``B``.

    The pairs ``(x_i, b_i)`` with ``b_i`` in ``B(x_i)`` are turned into the
    monotone graph ``A = lam I - B``: ``(x_i, lam x_i - b_i)``.  Then
    ``x - tau B(x) = y`` reads ``(1 - lam tau) x + tau A(x) = y``, i.e.
    ``x = J^A_s(y / (1 - lam tau))`` with ``s = tau / (1 - lam tau)``.
    """

    def __init__(self, pairs, lam):
        X = np.atleast_2d(np.asarray([p[0] for p in pairs], dtype=float))
        Bv = np.atleast_2d(np.asarray([p[1] for p in pairs], dtype=float))
        super().__init__(lam, X.shape[1])
        self.points = X
        self.values = Bv
        self.graph = MonotoneGraph(X, self.lam * X - Bv)
        self.program = ExtensionProgram(self.graph)

    def resolvent(self, tau, y):
        tau = self.check_step(tau)
        y = self.check_point(y)
        m = 1.0 - self.lam * tau
        return resolvent_mono(self.program, tau / m, y / m)


def _centering(N, d):
    def fn(x):
        X = x.reshape(N, d)
        return (X - X.mean(axis=0)).ravel()
    return fn


BUILTINS = {
    # name: (factory(N, d) -> callable, lipschitz bound, lambda)
    "neg_id": (lambda N, d: (lambda x: -x), 1.0, -1.0),
    "centering": (_centering, 1.0, 1.0),
    "componentwise_relu_neg": (lambda N, d: (lambda x: -np.maximum(x, 0.0)), 1.0, 0.0),
    "meanfield": (lambda N, d: (lambda x: -_centering(N, d)(x)), 1.0, 0.0),
}


def builtin(name, atoms, dim=1, lam=None):
    """Named particle operator on ``R^(atoms * dim)``.

    ``neg_id`` is ``-X`` (``lam = -1``), ``centering`` is ``X - mean X``
    (``lam = 1``), ``componentwise_relu_neg`` is ``-max(X, 0)`` and
    ``meanfield`` is ``-(X - mean X)`` (both ``lam = 0``).  A larger ``lam``
    may be requested; a smaller one is rejected.
    """
    if name not in BUILTINS:
        raise InputError(f"unknown builtin operator {name!r}; choose from {sorted(BUILTINS)}")
    factory, lip, sharp = BUILTINS[name]
    if lam is None:
        lam = sharp
    elif lam < sharp - 1e-12:
        raise InvariantViolation(f"builtin {name} is only {sharp}-dissipative, not {lam}")
    op = ExplicitLipschitz(factory(atoms, dim), lip, lam, atoms * dim, name=name)
    op.atoms, op.block = atoms, dim
    return op


def operator_from_dict(data):
    """Build an operator from ``{"lambda": .., "variant": .., ...}``."""
    lam = float(require(data, "lambda", "operator"))
    variant = require(data, "variant", "operator")
    if variant == "matrix":
        return LinearMatrix(require(data, "matrix", "operator"), lam)
    if variant == "graph":
        return GraphExtension(require(data, "pairs", "operator"), lam)
    if isinstance(variant, str) and variant.startswith("builtin:"):
        return builtin(variant.split(":", 1)[1], int(data.get("atoms", 1)), int(data.get("dim", 1)), lam)
    raise InputError(f"unknown operator variant {variant!r}")


def load_operator(path):
    return operator_from_dict(read_json(path))


def resolvent(op, tau, y):
    """``J_tau(y)``: the solution of ``x - tau B(x) = y``."""
    return op.resolvent(tau, y)


def yosida(op, tau, x):
    """``B_tau(x) = (J_tau(x) - x) / tau``."""
    x = op.check_point(x)
    return (op.resolvent(tau, x) - x) / tau


def minimal_selection(op, x, schedule, cap=DIVERGENCE_CAP):
    """Approximate the least-norm element of ``B(x)`` by Yosida maps.

    ``schedule`` is a decreasing list of steps.  Returns ``(value, log,
    diverged)`` where ``value`` is the Yosida map at the last step, ``log[k]``
    is ``(1 - lam tau_k) |B_tau_k(x)|`` (nondecreasing when ``x`` lies in the
    domain) and ``diverged`` flags growth past ``cap (1 + |x|)``.
    """
    x = op.check_point(x)
    taus = [float(t) for t in schedule]
    if not taus or any(b >= a for a, b in zip(taus, taus[1:])):
        raise InputError("schedule must be a nonempty strictly decreasing sequence")
    log = []
    value = None
    diverged = False
    for tau in taus:
        value = yosida(op, tau, x)
        nrm = float(np.linalg.norm(value))
        log.append((1.0 - op.lam * tau) * nrm)
        if nrm > cap * (1.0 + float(np.linalg.norm(x))):
            diverged = True
            break
    return value, log, diverged


def flow(op, x0, t, n, record=False):
    """Exponential formula ``(J_{t/n})^n x0``; with ``record`` also the iterates."""
    x = op.check_point(x0)
    t = float(t)
    n = int(n)
    if t < 0 or n < 1:
        raise InputError("need t >= 0 and n >= 1")
    traj = [(0.0, x.copy())]
    if t == 0:
        return (x, traj) if record else x
    h = op.check_step(t / n)
    for k in range(n):
        x = op.resolvent(h, x)
        if record:
            traj.append(((k + 1) * h, x.copy()))
    return (x, traj) if record else x


def cauchy_gap(op, x0, t, n):
    """``|flow(n) - flow(n/2)|``: the truncation monitor of the exponential formula."""
    if n < 2:
        raise InputError("need n >= 2 to compare with n/2")
    return float(np.linalg.norm(flow(op, x0, t, n) - flow(op, x0, t, n // 2)))


class BlockAction:
    """Relabel ``N`` blocks of size ``d``: ``(U x)_j = x_{g(j)}``."""

    def __init__(self, atoms, block, perm):
        if not isinstance(perm, Permutation):
            perm = Permutation(perm)
        if perm.order != atoms:
            raise InputError(f"permutation of order {perm.order} cannot act on {atoms} blocks")
        self.atoms = int(atoms)
        self.block = int(block)
        self.perm = perm

    def __call__(self, x):
        X = np.asarray(x, dtype=float).reshape(self.atoms, self.block)
        return X[self.perm.mapping].ravel()

    def matrix(self):
        return np.kron(self.perm.matrix(), np.eye(self.block))


def check_invariance_flow(op, action, probes=None, tau=0.25, times=(0.5, 1.0), n=32):
    """Largest commutation defects of resolvent, Yosida map and flow with ``action``.

    Returns a dict with keys ``resolvent``, ``yosida``, ``flow`` and ``max``.
    """
    P = make_probes(op.dim) if probes is None else np.atleast_2d(probes)
    tau = op.check_step(tau)
    res = {"resolvent": 0.0, "yosida": 0.0, "flow": 0.0}
    for p in P:
        Up = action(p)
        res["resolvent"] = max(res["resolvent"], float(np.linalg.norm(
            op.resolvent(tau, Up) - action(op.resolvent(tau, p)))))
        res["yosida"] = max(res["yosida"], float(np.linalg.norm(
            yosida(op, tau, Up) - action(yosida(op, tau, p)))))
        for t in times:
            res["flow"] = max(res["flow"], float(np.linalg.norm(
                flow(op, Up, t, n) - action(flow(op, p, t, n)))))
    res["max"] = max(res.values())
    return res


def law_key(values):
    """Canonical identifier of the empirical law of the rows of ``values``."""
    X = np.atleast_2d(np.asarray(values, dtype=float)) + 0.0  # folds -0.0 into 0.0
    X = X[np.lexsort(X.T[::-1])]
    return hashlib.sha256(np.ascontiguousarray(X).tobytes() + str(X.shape).encode()).hexdigest()[:16]


class EulerTable:
    """Samples ``(x, value)`` of a pointwise representation, tagged by law."""

    def __init__(self, xs, values, keys, lip=None):
        self.xs = np.atleast_2d(np.asarray(xs, dtype=float))
        self.values = np.atleast_2d(np.asarray(values, dtype=float))
        self.keys = list(keys)
        if not (len(self.xs) == len(self.values) == len(self.keys)):
            raise InputError("table columns differ in length")
        self.lip = lip

    def __len__(self):
        return len(self.keys)

    def laws(self):
        return sorted(set(self.keys))

    def section(self, key):
        idx = [i for i, k in enumerate(self.keys) if k == key]
        return self.xs[idx], self.values[idx]

    def merge(self, other):
        lip = None if self.lip is None or other.lip is None else max(self.lip, other.lip)
        return EulerTable(np.vstack([self.xs, other.xs]), np.vstack([self.values, other.values]),
                          self.keys + other.keys, lip)

    def lookup(self, x, key, tol=1e-9):
        xs, vals = self.section(key)
        hit = np.flatnonzero(np.max(np.abs(xs - np.asarray(x, dtype=float)), axis=1) <= tol)
        return None if hit.size == 0 else vals[hit[0]]


def euler_map_extract(L, X, lip=None, tol=TABLE_TOL, check_invariance=True):
    """Tabulate ``(X_i, (L X)_i)`` for a permutation-invariant map ``L``.

    ``L`` acts on flat states of ``X.size`` blocks of size ``X.dim``.  Equal
    inputs must give equal outputs within ``tol`` and the table must respect
    the Lipschitz bound ``lip`` (taken from ``L.lip`` when present); otherwise
    :class:`NonInvarianceError` names the offending indices.
    """
    if not isinstance(X, EmpiricalSample):
        X = EmpiricalSample(X)
    N, d = X.size, X.dim
    if lip is None:
        lip = getattr(L, "lip", None)
    if check_invariance and N > 1:
        probes = make_probes(N * d, count=4)
        rng = np.random.default_rng(PROBE_SEED)
        for p in probes:
            act = BlockAction(N, d, rng.permutation(N))
            defect = float(np.max(np.abs(L(act(p)) - act(L(p)))))
            if defect > tol * (1.0 + float(np.max(np.abs(p)))):
                raise NonInvarianceError(f"map does not commute with relabelling (defect {defect:.3e})")
    Y = np.asarray(L(X.values.ravel()), dtype=float).reshape(N, d)
    dx = np.linalg.norm(X.values[:, None, :] - X.values[None, :, :], axis=2)
    dy = np.linalg.norm(Y[:, None, :] - Y[None, :, :], axis=2)
    same = (dx <= 1e-9) & (dy > tol)
    if np.any(same):
        i, j = map(int, np.argwhere(same)[0])
        raise NonInvarianceError(f"atoms {i} and {j} share a value but map to different outputs", (i, j))
    if lip is not None:
        over = dy - lip * dx - tol
        if np.any(over > 0):
            i, j = map(int, np.unravel_index(np.argmax(over), over.shape))
            raise NonInvarianceError(f"atoms {i} and {j} break the Lipschitz bound {lip}", (i, j))
    key = law_key(X.values)
    return EulerTable(X.values.copy(), Y, [key] * N, lip)


def check_dissipative_sections(table, lam, tol=TABLE_TOL):
    """True iff each law section satisfies ``<l(x) - l(x'), x - x'> <= lam |x - x'|^2 + tol``."""
    for key in table.laws():
        xs, vals = table.section(key)
        dx = xs[:, None, :] - xs[None, :, :]
        dv = vals[:, None, :] - vals[None, :, :]
        lhs = np.einsum("ijk,ijk->ij", dv, dx)
        rhs = lam * np.einsum("ijk,ijk->ij", dx, dx) + tol
        if np.any(lhs > rhs):
            return False
    return True

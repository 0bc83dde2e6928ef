"""Problem containers for the LP/QP solvers.

Both program types use the same constraint layout::

    A_eq @ x == b_eq
    A_ub @ x <= b_ub
    lb <= x <= ub

Missing constraint blocks are stored as empty ``(0, n)`` matrices and
missing bounds default to ``-inf`` / ``+inf`` (free variables).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from invmono.errors import InputError

STATUSES = ("optimal", "infeasible", "unbounded", "iteration-limit")


def as_vector(values, name="vector"):
    """Return ``values`` as a finite 1-D float array or raise InputError."""
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.ndim != 1:
        raise InputError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} has non-finite entries")
    return arr


def _matrix(a, n, name):
    if a is None:
        return np.zeros((0, n))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return np.zeros((0, n))
    if a.shape[1] != n:
        raise InputError(f"{name} has {a.shape[1]} columns, expected {n}")
    if not np.all(np.isfinite(a)):
        raise InputError(f"{name} has non-finite entries")
    return a


def _rhs(b, m, name):
    if b is None:
        b = np.zeros(0)
    b = np.atleast_1d(np.asarray(b, dtype=float)).ravel()
    if b.shape[0] != m:
        raise InputError(f"{name} has length {b.shape[0]}, expected {m}")
    if not np.all(np.isfinite(b)):
        raise InputError(f"{name} has non-finite entries")
    return b


def _bounds(lb, ub, n):
    lb = np.full(n, -np.inf) if lb is None else np.broadcast_to(np.asarray(lb, float), (n,)).copy()
    ub = np.full(n, np.inf) if ub is None else np.broadcast_to(np.asarray(ub, float), (n,)).copy()
    if np.any(np.isnan(lb)) or np.any(np.isnan(ub)):
        raise InputError("bounds contain NaN")
    if np.any(lb == np.inf) or np.any(ub == -np.inf):
        raise InputError("bounds exclude every finite value")
    return lb, ub


def _normalize_constraints(obj, n):
    set_ = object.__setattr__
    set_(obj, "A_eq", _matrix(obj.A_eq, n, "A_eq"))
    set_(obj, "b_eq", _rhs(obj.b_eq, obj.A_eq.shape[0], "b_eq"))
    set_(obj, "A_ub", _matrix(obj.A_ub, n, "A_ub"))
    set_(obj, "b_ub", _rhs(obj.b_ub, obj.A_ub.shape[0], "b_ub"))
    lb, ub = _bounds(obj.lb, obj.ub, n)
    set_(obj, "lb", lb)
    set_(obj, "ub", ub)


@dataclass(frozen=True)
class LinearProgram:
    """``min cost @ x`` subject to the standard constraint layout."""

    cost: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        cost = as_vector(self.cost, "cost")
        object.__setattr__(self, "cost", cost)
        _normalize_constraints(self, cost.shape[0])

    @property
    def n(self):
        return self.cost.shape[0]


@dataclass(frozen=True)
class QuadraticProgram:
    """``min 0.5 x'Qx + c'x`` with symmetric positive semidefinite ``Q``."""

    Q: np.ndarray
    c: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        c = as_vector(self.c, "c")
        n = c.shape[0]
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if Q.shape != (n, n):
            raise InputError(f"Q has shape {Q.shape}, expected {(n, n)}")
        if not np.all(np.isfinite(Q)):
            raise InputError("Q has non-finite entries")
        scale = max(1.0, float(np.max(np.abs(Q), initial=0.0)))
        if np.max(np.abs(Q - Q.T), initial=0.0) > 1e-12 * scale:
            raise InputError("Q is not symmetric")
        if n and np.linalg.eigvalsh(Q)[0] < -1e-9 * scale:
            raise InputError("Q is not positive semidefinite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "c", c)
        _normalize_constraints(self, n)

    @property
    def n(self):
        return self.c.shape[0]


@dataclass(frozen=True)
class SolveReport:
    """Outcome of an LP or QP solve.

    ``certificate`` holds a Farkas vector (infeasible) or a recession ray
    (unbounded) when one is available.
    """

    status: str
    value: float
    x: np.ndarray
    kkt_residual: float
    iterations: int
    certificate: np.ndarray | None = None
    duals: dict = field(default_factory=dict)

    @property
    def optimal(self):
        return self.status == "optimal"

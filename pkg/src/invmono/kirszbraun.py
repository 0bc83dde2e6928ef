"""Lipschitz extension of finite data, by two independent routes.

Route 1 (envelope formula).  For data ``w_i = f(y_i)`` with constant ``L``
put ``b_i = (-L y_i, w_i)`` and ``c_i = L |y_i|^2 / 2`` and consider

    g(z) = min_i  L|z|^2 + <b_i, z> + c_i,      z = (x, y) in R^d x R^d.

All pieces share the Hessian ``2L I``, so the lower convex envelope is
obtained by splitting ``z = sum l_i (z + u_i)`` with ``sum l_i u_i = 0``; the
optimal shifts are ``u_i = -(b_i - bbar)/(2L)`` with ``bbar = sum l_i b_i``,
which gives

    env g(z) = min_l  L|z|^2 + <bbar, z> + |bbar|^2/(4L)
                      - sum l_i |b_i|^2/(4L) + sum l_i c_i.

At ``z = (x, 0)`` this is a QP over the simplex with Hessian ``B'B/(2L)``
(columns of ``B`` are the ``b_i``) and linear part
``-L<x, y_i> - |b_i|^2/(4L) + c_i``.  By the envelope theorem the gradient in
the second argument is the second block of ``bbar``, that is
``F(x) = sum l*_i w_i``.

Route 2 (Cayley).  After scaling the values by ``1/L`` the data is a
nonexpansive map whose rotated graph ``((y - w)/sqrt2, (y + w)/sqrt2)`` is
monotone.  Extending that graph maximally and rotating back gives a
nonexpansive map on all of ``R^d``: ``F(x) = L (x - sqrt2 J(sqrt2 x))`` with
``J`` the unit-step resolvent of the extension.
"""

from __future__ import annotations

import numpy as np

from invmono.errors import InputError, InvariantViolation, SolverError
from invmono.fitzpatrick import ExtensionProgram, MonotoneGraph, check_monotone, resolvent_mono
from invmono.jsonio import read_json, require
from invmono.optkit import QuadraticProgram, as_vector, solve_qp

SQRT2 = np.sqrt(2.0)
LIP_TOL = 1e-10
SITE_TOL = 1e-12
CONST_L = 1e-12


def _pairwise(sites, values):
    dy = np.linalg.norm(sites[:, None, :] - sites[None, :, :], axis=2)
    dw = np.linalg.norm(values[:, None, :] - values[None, :, :], axis=2)
    return dy, dw


class LipschitzData:
    """Sites ``y_i``, values ``w_i`` and a declared Lipschitz constant ``L``.

    The declared constant may exceed the sharp constant of the data; the
    extensions are then ``L``-Lipschitz for the declared value.
    """

    def __init__(self, sites, values, L):
        sites = np.atleast_2d(np.asarray(sites, dtype=float))
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if sites.shape[0] == 0:
            raise InputError("at least one site is required")
        if sites.shape != values.shape:
            raise InputError(f"sites {sites.shape} and values {values.shape} differ in shape")
        if not (np.all(np.isfinite(sites)) and np.all(np.isfinite(values))):
            raise InputError("data has non-finite entries")
        L = float(L)
        if not (L >= 0 and np.isfinite(L)):
            raise InputError(f"Lipschitz constant must be finite and nonnegative, got {L}")
        dy, dw = _pairwise(sites, values)
        iu = np.triu_indices(sites.shape[0], 1)
        if np.any(dy[iu] <= SITE_TOL):
            raise InputError("sites must be pairwise distinct")
        excess = dw[iu] - L * dy[iu]
        if excess.size and excess.max() > LIP_TOL:
            k = int(np.argmax(excess))
            raise InvariantViolation(f"sites {iu[0][k]} and {iu[1][k]} violate the declared constant {L}")
        self.sites = sites
        self.values = values
        self.L = L

    @property
    def dim(self):
        return self.sites.shape[1]

    @property
    def size(self):
        return self.sites.shape[0]

    @classmethod
    def from_dict(cls, data):
        dim = int(require(data, "dim", "lipschitz data"))
        out = cls(require(data, "sites", "lipschitz data"), require(data, "values", "lipschitz data"),
                  require(data, "L", "lipschitz data"))
        if out.dim != dim:
            raise InputError(f"data declares dim {dim} but sites have dim {out.dim}")
        return out

    @classmethod
    def load(cls, path):
        return cls.from_dict(read_json(path))

    def to_dict(self):
        return {"dim": self.dim, "L": self.L, "sites": self.sites.tolist(), "values": self.values.tolist()}


def lip_constant(sites, values):
    """Sharp Lipschitz constant ``max |w_i - w_j| / |y_i - y_j|`` of finite data."""
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if sites.shape[0] == 0 or sites.shape[0] != values.shape[0]:
        raise InputError("sites and values must be nonempty and of equal length")
    dy, dw = _pairwise(sites, values)
    iu = np.triu_indices(sites.shape[0], 1)
    dy, dw = dy[iu], dw[iu]
    same = dy <= SITE_TOL
    if np.any(same & (dw > SITE_TOL)):
        raise InputError("a repeated site carries two different values")
    keep = ~same
    if not np.any(keep):
        return 0.0
    return float(np.max(dw[keep] / dy[keep]))


def alm_extend(data, x):
    """Envelope-formula extension at ``x``; returns ``(F(x), weights)``."""
    x = as_vector(x, "x")
    if x.size != data.dim:
        raise InputError(f"query has dimension {x.size}, data has {data.dim}")
    n = data.size
    if n == 1:
        return data.values[0].copy(), np.ones(1)
    L = data.L
    if L < CONST_L:
        return data.values[0].copy(), np.full(n, 1.0 / n)
    B = np.hstack([-L * data.sites, data.values]).T
    bb = np.einsum("ij,ij->j", B, B)
    c = 0.5 * L * np.einsum("ij,ij->i", data.sites, data.sites)
    Q = B.T @ B / (2 * L)
    q = -L * (data.sites @ x) - bb / (4 * L) + c
    qp = QuadraticProgram(0.5 * (Q + Q.T), q, A_eq=np.ones((1, n)), b_eq=[1.0], lb=np.zeros(n))
    start = np.full(n, 1.0 / n)
    rep = solve_qp(qp, x0=start)
    if not rep.optimal:
        raise SolverError(f"envelope QP ended with status {rep.status}", rep)
    lam = np.maximum(rep.x, 0.0)
    lam /= lam.sum()
    return lam @ data.values, lam


def cayley_transform(pair, direction="forward"):
    """Rotate a pair ``(a, b)`` by 45 degrees in the product space."""
    a, b = pair
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InputError("both components must have the same shape")
    if direction == "forward":
        return (a - b) / SQRT2, (a + b) / SQRT2
    if direction == "inverse":
        return (a + b) / SQRT2, (b - a) / SQRT2
    raise InputError(f"unknown direction {direction!r}")


class CayleyExtension:
    """Cached monotone-extension program for the rotated, rescaled data."""

    def __init__(self, data):
        self.data = data
        self.constant = data.L < CONST_L
        if self.constant:
            if np.max(np.abs(data.values - data.values[0])) > LIP_TOL:
                raise InputError("zero Lipschitz constant requires equal values")
            self.program = None
            return
        scaled = data.values / data.L
        P, D = cayley_transform((data.sites, scaled), "forward")
        ok, worst = check_monotone(MonotoneGraph(P, D, check=False))
        if not ok:
            raise InvariantViolation(f"rotated graph is not monotone at pairs {worst[:2]}; "
                                     "the data exceeds its declared constant")
        self.program = ExtensionProgram(MonotoneGraph(P, D, check=False))

    def __call__(self, x):
        x = as_vector(x, "x")
        if x.size != self.data.dim:
            raise InputError(f"query has dimension {x.size}, data has {self.data.dim}")
        if self.constant:
            return self.data.values[0].copy()
        xs = resolvent_mono(self.program, 1.0, SQRT2 * x)
        return self.data.L * (x - SQRT2 * xs)


def cayley_extend(data, x):
    """Rotation-route extension at ``x`` (builds the program on every call)."""
    return CayleyExtension(data)(x)

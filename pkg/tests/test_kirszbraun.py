import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from invmono.errors import InputError, InvariantViolation
from invmono.fitzpatrick import IsometryGroup
from invmono.kirszbraun import (CayleyExtension, LipschitzData, alm_extend, cayley_extend, cayley_transform,
                                lip_constant)

from oracles import alm_grid, alm_objective, envelope_d1

IDENTITY = LipschitzData([[-1.0], [1.0]], [[-1.0], [1.0]], 1.0)


def random_data(seed, dmax=3, nmax=6, L=None):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, dmax + 1))
    n = int(rng.integers(1, nmax + 1))
    sites = rng.normal(size=(n, d)) * 2
    values = rng.normal(size=(n, d))
    lip = lip_constant(sites, values)
    if L is None:
        L = float(rng.uniform(0.5, 2.0))
    if lip > 0:
        values *= L / lip
    return rng, LipschitzData(sites, values, L)


def lipschitz_ratio(points, values):
    worst = 0.0
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            dist = np.linalg.norm(points[i] - points[j])
            if dist > 1e-9:
                worst = max(worst, np.linalg.norm(values[i] - values[j]) / dist)
    return worst


class TestData:
    @pytest.mark.parametrize("sites, values, expected", [
        ([[0.0]], [[5.0]], 0.0),
        ([[-1.0], [1.0]], [[-1.0], [1.0]], 1.0),
        ([[0.0], [1.0]], [[0.0], [3.0]], 3.0),
    ])
    def test_lip_constant(self, sites, values, expected):
        assert lip_constant(sites, values) == pytest.approx(expected)

    def test_duplicate_site_conflict(self):
        with pytest.raises(InputError):
            lip_constant([[0.0], [0.0]], [[1.0], [2.0]])

    def test_declared_constant_too_small(self):
        with pytest.raises(InvariantViolation):
            LipschitzData([[0.0], [1.0]], [[0.0], [3.0]], 2.0)

    def test_declared_constant_may_exceed(self):
        data = LipschitzData([[0.0], [1.0]], [[0.0], [1.0]], 4.0)
        assert alm_extend(data, [0.5])[0][0] == pytest.approx(0.5, abs=1e-9)

    def test_distinct_sites_required(self):
        with pytest.raises(InputError):
            LipschitzData([[0.0], [0.0]], [[1.0], [1.0]], 1.0)

    def test_round_trip(self):
        back = LipschitzData.from_dict(IDENTITY.to_dict())
        assert np.array_equal(back.sites, IDENTITY.sites)


class TestEnvelopeRoute:
    def test_single_site(self):
        data = LipschitzData([[1.0, 2.0]], [[3.0, -1.0]], 1.0)
        for x in ([0.0, 0.0], [10.0, -3.0]):
            assert np.allclose(alm_extend(data, x)[0], [3.0, -1.0])

    def test_origin_by_symmetry(self):
        assert alm_extend(IDENTITY, [0.0])[0][0] == pytest.approx(0.0, abs=1e-9)

    def test_beyond_data(self):
        # objective x^2 - x u + u^2/2 over u = 2s - 1 in [-1, 1] is minimized at u = 1
        F, lam = alm_extend(IDENTITY, [2.0])
        assert F[0] == pytest.approx(1.0, abs=1e-9)
        assert np.allclose(lam, [0.0, 1.0], atol=1e-9)
        assert alm_grid(IDENTITY.sites, IDENTITY.values, 1.0, np.array([2.0]))[0][0] == pytest.approx(1.0, abs=1e-3)

    @pytest.mark.parametrize("seed", range(12))
    def test_against_lambda_grid(self, seed):
        rng = np.random.default_rng(seed)
        n, d = 2 + seed % 2, 1 + (seed // 2) % 2
        sites = rng.normal(size=(n, d)) * 1.5
        values = rng.normal(size=(n, d))
        values *= 1.0 / lip_constant(sites, values)
        data = LipschitzData(sites, values, 1.0)
        x = rng.normal(size=d) * 2
        F, lam = alm_extend(data, x)
        Fg, vg = alm_grid(sites, values, 1.0, x)
        assert alm_objective(sites, values, 1.0, x, lam) <= vg + 1e-12
        assert np.allclose(F, Fg, atol=1e-3)

    @pytest.mark.parametrize("seed", range(6))
    def test_against_direct_envelope(self, seed):
        rng = np.random.default_rng(50 + seed)
        n = 2 + seed % 2
        sites = np.sort(rng.uniform(-1.5, 1.5, size=(n, 1)), axis=0)
        values = rng.normal(size=(n, 1))
        L = 1.5
        values *= L / lip_constant(sites, values)
        data = LipschitzData(sites, values, L)
        x = float(rng.uniform(-1.5, 1.5))
        F, lam = alm_extend(data, [x])
        env, slope = envelope_d1(sites, values, L, x)
        # grid interpolation overestimates the envelope by at most L h^2 / 2
        assert alm_objective(sites, values, L, np.array([x]), lam) == pytest.approx(env, abs=L * 0.05 ** 2)
        # the LP dual is a subgradient of the sampled envelope
        assert F[0] == pytest.approx(slope, abs=2 * L * 0.05)

    @given(st.integers(0, 10 ** 6))
    @settings(max_examples=30, deadline=None)
    def test_weights_on_simplex(self, seed):
        rng, data = random_data(seed)
        F, lam = alm_extend(data, rng.normal(size=data.dim) * 3)
        assert np.all(lam >= 0)
        assert lam.sum() == pytest.approx(1.0, abs=1e-10)
        assert np.allclose(F, lam @ data.values, atol=1e-12)


class TestCayley:
    def test_forward_examples(self):
        a, b = cayley_transform(([0.0], [0.0]))
        assert np.allclose(a, 0.0) and np.allclose(b, 0.0)
        a, b = cayley_transform(([1.0], [0.0]))
        assert np.allclose(a, 1 / np.sqrt(2)) and np.allclose(b, 1 / np.sqrt(2))

    @given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4))
    @settings(max_examples=50)
    def test_inverse(self, nums):
        y, w = np.array(nums[:2]), np.array(nums[2:])
        a, b = cayley_transform(cayley_transform((y, w)), "inverse")
        assert np.allclose(a, y, atol=1e-12 * (1 + np.abs(y).max()))
        assert np.allclose(b, w, atol=1e-12 * (1 + np.abs(w).max()))

    def test_unknown_direction(self):
        with pytest.raises(InputError):
            cayley_transform(([0.0], [0.0]), "sideways")

    def test_identity_data_far_query(self):
        # the rotated graph is {(0, -sqrt2), (0, sqrt2)}: its domain is {0}, so the
        # resolvent is 0 everywhere and the extension is the identity
        assert cayley_extend(IDENTITY, [5.0])[0] == pytest.approx(5.0, abs=1e-6)

    @pytest.mark.parametrize("x", [-4.0, 0.0, 0.3, 7.0])
    def test_single_site_is_translation(self, x):
        # a one-point rotated graph has a one-point domain, which makes the
        # extension the translation x - y0 + w0/L scaled by L
        y0, w0, L = 1.0, 3.0, 2.0
        data = LipschitzData([[y0]], [[w0]], L)
        assert cayley_extend(data, [x])[0] == pytest.approx(L * (x - y0) + w0, abs=1e-6)

    def test_origin_by_symmetry(self):
        data = LipschitzData([[-1.0], [2.0], [1.0], [-2.0]], [[-0.5], [0.8], [0.5], [-0.8]], 1.0)
        assert abs(cayley_extend(data, [0.0])[0]) <= 1e-6

    def test_zero_constant(self):
        data = LipschitzData([[0.0], [1.0]], [[2.0], [2.0]], 0.0)
        assert cayley_extend(data, [5.0])[0] == 2.0


class TestProperties:
    @given(st.integers(0, 10 ** 6))
    @settings(max_examples=25, deadline=None)
    def test_both_routes_interpolate(self, seed):
        _, data = random_data(seed)
        cay = CayleyExtension(data)
        for y, w in zip(data.sites, data.values):
            assert np.allclose(alm_extend(data, y)[0], w, atol=1e-6)
            assert np.allclose(cay(y), w, atol=1e-6)

    @given(st.integers(0, 10 ** 6))
    @settings(max_examples=15, deadline=None)
    def test_both_routes_lipschitz(self, seed):
        rng, data = random_data(seed)
        cay = CayleyExtension(data)
        pts = np.vstack([data.sites, rng.normal(size=(12, data.dim)) * 3])
        for F in (lambda x: alm_extend(data, x)[0], cay):
            vals = np.array([F(p) for p in pts])
            assert lipschitz_ratio(pts, vals) <= data.L * (1 + 1e-6)

    @pytest.mark.parametrize("group", [IsometryGroup.sign(1), IsometryGroup.sign(2), IsometryGroup.rotations(4)],
                             ids=["sign-1d", "sign-2d", "rot4"])
    def test_equivariance(self, group):
        rng = np.random.default_rng(len(group) + group.dim)
        base = rng.normal(size=(2, group.dim)) * 2
        sites = np.vstack([base @ U.T for U in group])
        M = rng.normal(size=(group.dim, group.dim))
        # an equivariant linear map: average of U' M U over the group
        A = sum(U.T @ M @ U for U in group) / len(group)
        values = sites @ A.T
        data = LipschitzData(sites, values, max(lip_constant(sites, values), 1e-3))
        cay = CayleyExtension(data)
        for _ in range(10):
            x = rng.normal(size=group.dim) * 3
            fa, fc = alm_extend(data, x)[0], cay(x)
            for U in group:
                assert np.allclose(alm_extend(data, U @ x)[0], U @ fa, atol=1e-6)
                assert np.allclose(cay(U @ x), U @ fc, atol=1e-6)

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from invmono.errors import CapacityError, InputError, LawMismatchError
from invmono.mps import (DoublyStochastic, DyadicSpace, EmpiricalSample, Permutation, align_same_law,
                         approx_coupling, birkhoff_decompose, coarsen, count_matrix, coupling_discrepancy,
                         lift_permutation, lp_distance, monge_match, wasserstein)

from oracles import brute_wasserstein, transport_lp


def random_coupling(rng, N, terms=3, denominator=None):
    """Random mixture of permutation matrices, scaled to total mass 1."""
    w = rng.dirichlet(np.ones(terms))
    if denominator is not None:
        w = np.maximum(np.round(w * denominator), 1)
        w = w / w.sum()
    M = sum(wk * np.eye(N)[rng.permutation(N)] for wk in w)
    return DoublyStochastic(M / N)


def sample_pairs(sigma, Z, Zp):
    K = sigma.order // Z.size
    j = np.arange(sigma.order)
    return np.hstack([Z.values[j // K], Zp.values[sigma.mapping // K]])


class TestBasics:
    def test_dyadic_space(self):
        s = DyadicSpace(3)
        assert s.size == 8 and s.weight == 0.125

    def test_level_cap(self):
        with pytest.raises(CapacityError):
            DyadicSpace(21)

    def test_permutation_must_be_bijective(self):
        with pytest.raises(InputError):
            Permutation([0, 0, 1])

    def test_compose_and_inverse(self):
        g = Permutation([2, 0, 1])
        assert g.compose(g.inverse()) == Permutation.identity(3)
        assert np.array_equal(g.matrix() @ np.arange(3), g.mapping)

    def test_sample_needs_power_of_two(self):
        with pytest.raises(InputError):
            EmpiricalSample(np.zeros((3, 1)))

    def test_coupling_margins(self):
        with pytest.raises(InputError):
            DoublyStochastic([[0.5, 0.0], [0.0, 0.25]])


class TestCoarsenLift:
    def test_coarsen_identity_level(self):
        X = EmpiricalSample(np.arange(4.0))
        assert np.array_equal(coarsen(X, 2).values, X.values)

    def test_coarsen_global_mean(self):
        X = EmpiricalSample(np.arange(8.0))
        assert np.allclose(coarsen(X, 0).values, 3.5)

    def test_coarsen_midpoint(self):
        assert np.allclose(coarsen(EmpiricalSample([0.0, 2.0]), 0).values.ravel(), [1.0, 1.0])

    def test_coarsen_too_fine(self):
        with pytest.raises(InputError):
            coarsen(EmpiricalSample([0.0, 2.0]), 2)

    def test_lift_identity(self):
        assert lift_permutation(Permutation.identity(2), 3) == Permutation.identity(8)

    def test_lift_half_swap(self):
        assert lift_permutation(Permutation([1, 0]), 2).tolist() == [2, 3, 0, 1]

    def test_lift_same_level(self):
        g = Permutation([3, 1, 0, 2])
        assert lift_permutation(g, 2) == g

    def test_lift_too_coarse(self):
        with pytest.raises(InputError):
            lift_permutation(Permutation.identity(4), 1)

    @given(st.integers(0, 3), st.integers(0, 2), st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_lift_commutes_with_block_average(self, k, extra, seed):
        rng = np.random.default_rng(seed)
        m = k + extra
        sigma = Permutation(rng.permutation(2 ** k))
        g = lift_permutation(sigma, m)
        X = EmpiricalSample(rng.normal(size=(2 ** m, 2)))
        lifted = lift_permutation(sigma, m)
        left = coarsen(X.compose(g), k)
        right = coarsen(X, k).compose(lifted)
        assert np.allclose(left.values, right.values, atol=1e-12)
        # the lift maps blocks onto blocks
        assert np.array_equal(count_matrix(g, 2 ** k), sigma.matrix().astype(int) * 2 ** extra)


class TestApproxCoupling:
    @pytest.mark.parametrize("K", [1, 3, 8])
    def test_diagonal(self, K):
        g = approx_coupling(DoublyStochastic(np.eye(3) / 3), K)
        assert np.array_equal(count_matrix(g, 3), K * np.eye(3, dtype=int))

    def test_uniform_two_by_two(self):
        g = approx_coupling(DoublyStochastic(np.full((2, 2), 0.25)), 2)
        C = count_matrix(g, 2)
        assert C.tolist() == [[1, 1], [1, 1]]
        admissible = [p for p in itertools.permutations(range(4))
                      if count_matrix(Permutation(p), 2).tolist() == [[1, 1], [1, 1]]]
        assert tuple(g.tolist()) in admissible
        assert len(admissible) == 16

    def test_integral_target(self):
        B = DoublyStochastic([[3 / 8, 1 / 8], [1 / 8, 3 / 8]])
        assert count_matrix(approx_coupling(B, 4), 2).tolist() == [[3, 1], [1, 3]]

    def test_bad_refinement(self):
        with pytest.raises(InputError):
            approx_coupling(DoublyStochastic(np.eye(2) / 2), 0)

    def test_deterministic(self):
        B = random_coupling(np.random.default_rng(0), 4)
        assert approx_coupling(B, 8) == approx_coupling(B, 8)

    @pytest.mark.parametrize("seed", range(25))
    def test_count_bound(self, seed):
        rng = np.random.default_rng(seed)
        N = int(rng.integers(1, 5))
        B = random_coupling(rng, N, terms=int(rng.integers(1, 5)))
        for K in (1, 2, 4, 8):
            C = count_matrix(approx_coupling(B, K), N)
            assert np.all(np.abs(C / (N * K) - B.matrix) <= 1 / (N * K) + 1e-12)
            assert np.all(C.sum(axis=0) == K) and np.all(C.sum(axis=1) == K)

    @pytest.mark.parametrize("seed", range(10))
    def test_exact_when_integral(self, seed):
        rng = np.random.default_rng(100 + seed)
        N, K = 4, 4
        w = rng.multinomial(N * K // N, np.ones(3) / 3)
        M = sum(wk * np.eye(N)[rng.permutation(N)] for wk in w)
        B = DoublyStochastic(M / (N * K))
        C = count_matrix(approx_coupling(B, K), N)
        assert np.array_equal(C, M.astype(int))


class TestDiscrepancy:
    def test_exact_counts_give_zero(self):
        B = DoublyStochastic([[3 / 8, 1 / 8], [1 / 8, 3 / 8]])
        Z = EmpiricalSample([0.0, 1.0])
        assert coupling_discrepancy(approx_coupling(B, 4), B, Z, Z) == pytest.approx(0.0, abs=1e-12)

    def test_identity(self):
        Z = EmpiricalSample(np.eye(4))
        B = DoublyStochastic(np.eye(4) / 4)
        assert coupling_discrepancy(Permutation.identity(4), B, Z, Z) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("mapping", [[0, 1], [1, 0]])
    def test_single_permutation_against_product(self, mapping):
        Z = EmpiricalSample([0.0, 1.0])
        B = DoublyStochastic(np.full((2, 2), 0.25))
        d = coupling_discrepancy(Permutation(mapping), B, Z, Z)
        # oracle: transport between the two-point law of (Z, Z o sigma) and the product law
        pts = sample_pairs(Permutation(mapping), Z, Z)
        prod = np.array([[a, b] for a in (0.0, 1.0) for b in (0.0, 1.0)])
        C = np.sum((pts[:, None, :] - prod[None, :, :]) ** 2, axis=2)
        w2sq = transport_lp(np.full(2, 0.5), np.full(4, 0.25), C)
        assert w2sq == pytest.approx(0.5, abs=1e-9)
        assert d == pytest.approx(np.sqrt(0.5), abs=1e-9)

    def test_order_mismatch(self):
        Z = EmpiricalSample([0.0, 1.0])
        B = DoublyStochastic(np.eye(2) / 2)
        with pytest.raises(InputError):
            coupling_discrepancy(Permutation.identity(3), B, Z, Z)

    @pytest.mark.parametrize("seed", range(30))
    def test_nonincreasing_with_separating_embedding(self, seed):
        rng = np.random.default_rng(300 + seed)
        N = [2, 4][seed % 2]
        B = random_coupling(rng, N, terms=int(rng.integers(2, 5)), denominator=int(rng.integers(3, 13)))
        Z = EmpiricalSample(np.eye(N))
        ds = [coupling_discrepancy(approx_coupling(B, K), B, Z, Z) for K in (1, 2, 4, 8)]
        assert all(b <= a + 1e-9 for a, b in zip(ds, ds[1:]))

    def test_embedding_with_ties_can_increase(self):
        # with a non-separating embedding (two atoms share a value) the
        # discrepancy is not monotone in K and can sit above 2 diam/(N K)
        rng = np.random.default_rng(41)
        B = random_coupling(rng, 4, terms=int(rng.integers(2, 5)), denominator=int(rng.integers(3, 13)))
        Z = EmpiricalSample(rng.normal(size=(4, 1)).round(1))
        ds = [coupling_discrepancy(approx_coupling(B, K), B, Z, Z) for K in (1, 2, 4, 8)]
        diam = np.sqrt(2) * np.ptp(Z.values)
        assert ds[2] > ds[1] + 1e-3
        assert ds[2] >= 2 * diam / (4 * 4)
        assert ds[3] < ds[0]

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_highs_transport(self, seed):
        rng = np.random.default_rng(400 + seed)
        N, K = 4, 2
        B = random_coupling(rng, N)
        Z = EmpiricalSample(rng.normal(size=(N, 1)))
        Zp = EmpiricalSample(rng.normal(size=(N, 1)))
        g = approx_coupling(B, K)
        pts = sample_pairs(g, Z, Zp)
        targ = np.array([[a, b] for a in Z.values.ravel() for b in Zp.values.ravel()])
        C = np.sum((pts[:, None, :] - targ[None, :, :]) ** 2, axis=2)
        ref = transport_lp(np.full(N * K, 1 / (N * K)), B.matrix.ravel(), C)
        assert coupling_discrepancy(g, B, Z, Zp) == pytest.approx(np.sqrt(max(ref, 0.0)), abs=1e-7)


class TestWasserstein:
    def test_equal_measures(self):
        mu = (np.array([[0.0], [1.0]]), [0.5, 0.5])
        assert wasserstein(2, mu, mu)[0] == pytest.approx(0.0, abs=1e-12)

    def test_dirac(self):
        val, plan = wasserstein(2, ([[0.0, 0.0]], [1.0]), ([[3.0, 4.0]], [1.0]))
        assert val == pytest.approx(5.0)
        assert plan.tolist() == [[1.0]]

    def test_repeated_target(self):
        val, _ = wasserstein(1, ([[0.0], [1.0]], [0.5, 0.5]), ([[0.5], [0.5]], [0.5, 0.5]))
        assert val == pytest.approx(0.5, abs=1e-12)

    def test_empty(self):
        with pytest.raises(InputError):
            wasserstein(1, (np.zeros((0, 1)), []), ([[0.0]], [1.0]))

    def test_weights_must_sum_to_one(self):
        with pytest.raises(InputError):
            wasserstein(1, ([[0.0]], [0.9]), ([[0.0]], [1.0]))

    @pytest.mark.parametrize("seed", range(20))
    def test_against_permutations(self, seed):
        rng = np.random.default_rng(500 + seed)
        N = int(rng.integers(1, 7))
        d = int(rng.integers(1, 3))
        p = 1 + seed % 2
        X, Y = rng.normal(size=(N, d)), rng.normal(size=(N, d))
        w = np.full(N, 1 / N)
        val, plan = wasserstein(p, (X, w), (Y, w))
        assert val == pytest.approx(brute_wasserstein(X, Y, p), abs=1e-9)
        assert np.max(np.abs(plan.sum(axis=1) - w)) <= 1e-9
        assert np.max(np.abs(plan.sum(axis=0) - w)) <= 1e-9

    @given(st.integers(0, 2 ** 32 - 1), st.sampled_from([1, 2]))
    @settings(max_examples=30, deadline=None)
    def test_metric_axioms(self, seed, p):
        rng = np.random.default_rng(seed)
        ms = []
        for _ in range(3):
            n = int(rng.integers(1, 5))
            ms.append((rng.normal(size=(n, 2)), rng.dirichlet(np.ones(n))))
        ab = wasserstein(p, ms[0], ms[1])[0]
        assert ab == pytest.approx(wasserstein(p, ms[1], ms[0])[0], abs=1e-9)
        assert ab <= wasserstein(p, ms[0], ms[2])[0] + wasserstein(p, ms[2], ms[1])[0] + 1e-9


class TestMongeMatch:
    def test_same_law(self):
        X = EmpiricalSample([0.0, 1.0])
        Xr, Y = monge_match(X, ([[1.0], [0.0]], [0.5, 0.5]), 2)
        assert np.array_equal(Xr.values, Y.values)

    def test_shift(self):
        X = EmpiricalSample([0.0, 1.0])
        Xr, Y = monge_match(X, ([[2.0], [3.0]], [0.5, 0.5]), 1)
        assert Y.values.ravel().tolist() == [2.0, 3.0]
        assert lp_distance(Xr, Y, 1) == pytest.approx(2.0)

    def test_forced_split(self):
        X = EmpiricalSample([0.0])
        Xr, Y = monge_match(X, ([[-1.0], [1.0]], [0.5, 0.5]), 2)
        assert Xr.size == 2
        assert sorted(Y.values.ravel().tolist()) == [-1.0, 1.0]
        assert lp_distance(Xr, Y, 2) == pytest.approx(1.0)

    def test_capacity(self):
        with pytest.raises(CapacityError):
            monge_match(EmpiricalSample([0.0]), ([[0.0], [1.0]], [1 / 3, 2 / 3]), 1)

    @pytest.mark.parametrize("seed", range(15))
    def test_random(self, seed):
        rng = np.random.default_rng(600 + seed)
        m = int(rng.integers(0, 4))
        p = 1 + seed % 2
        X = EmpiricalSample(rng.normal(size=(2 ** m, 2)))
        k = int(rng.integers(1, 5))
        counts = rng.multinomial(2 ** (m + 1) - k, np.ones(k) / k) + 1
        pts = rng.normal(size=(k, 2))
        nu = (pts, counts / counts.sum())
        Xr, Y = monge_match(X, nu, p)
        rows, mass = Y.law()
        ref_rows, ref_idx = np.unique(pts, axis=0, return_inverse=True)
        ref_mass = np.bincount(ref_idx.ravel(), weights=nu[1])
        assert np.array_equal(rows, ref_rows)
        assert np.allclose(mass, ref_mass, atol=1e-15)
        w = wasserstein(p, (X.values, np.full(X.size, 1 / X.size)), nu)[0]
        assert lp_distance(Xr, Y, p) <= w + 1e-9


class TestAlign:
    def test_identity(self):
        X = EmpiricalSample(np.arange(4.0))
        assert align_same_law((X, None), (X, None)) == Permutation.identity(4)

    def test_swap(self):
        assert align_same_law(([0.0, 1.0], None), ([1.0, 0.0], None)).tolist() == [1, 0]

    def test_paired_unique(self):
        g = align_same_law(([0, 0, 1], [5, 6, 7]), ([0, 1, 0], [6, 7, 5]))
        X2 = np.array([[0, 6], [1, 7], [0, 5]], dtype=float)
        assert np.array_equal(X2[g.mapping], [[0, 5], [0, 6], [1, 7]])
        matches = [p for p in itertools.permutations(range(3))
                   if np.array_equal(X2[list(p)], [[0, 5], [0, 6], [1, 7]])]
        assert matches == [tuple(g.tolist())]

    def test_mismatch_names_row(self):
        with pytest.raises(LawMismatchError) as err:
            align_same_law(([0.0, 1.0, 2.0, 3.0], None), ([0.0, 1.0, 2.0, 4.0], None))
        assert err.value.row == 3

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_random_same_law(self, seed):
        rng = np.random.default_rng(seed)
        N = 2 ** int(rng.integers(0, 5))
        X = rng.integers(0, 3, size=(N, 2)).astype(float)
        Y = rng.normal(size=(N, 1))
        perm = rng.permutation(N)
        g = align_same_law((X, Y), (X[perm], Y[perm]))
        assert np.array_equal(X[perm][g.mapping], X)
        assert np.array_equal(Y[perm][g.mapping], Y)


class TestBirkhoff:
    def test_permutation(self):
        g = Permutation([2, 0, 1])
        terms = birkhoff_decompose(DoublyStochastic(g.matrix() / 3))
        assert len(terms) == 1
        assert terms[0][0] == pytest.approx(1.0) and terms[0][1] == g

    def test_uniform_two(self):
        terms = birkhoff_decompose(DoublyStochastic(np.full((2, 2), 0.25)))
        got = sorted((tuple(g.tolist()), w) for w, g in terms)
        assert got == [((0, 1), 0.5), ((1, 0), 0.5)]

    def test_identity_plus_cycle(self):
        C = Permutation([1, 2, 0]).matrix()
        B = (2 / 3 * np.eye(3) + 1 / 3 * C) / 3
        terms = birkhoff_decompose(DoublyStochastic(B))
        assert sorted(w for w, _ in terms) == pytest.approx([1 / 3, 2 / 3])
        assert np.allclose(sum(w * g.matrix() for w, g in terms), 3 * B, atol=1e-12)

    def test_denominator_cap(self):
        a, b = 1 / 97, 1 / 89
        P = Permutation([1, 2, 0]).matrix()
        B = (a * np.eye(3) + b * P + (1 - a - b) * P @ P) / 3
        with pytest.raises(InputError):
            birkhoff_decompose(DoublyStochastic(B), max_denominator=100)

    @pytest.mark.parametrize("seed", range(15))
    def test_random(self, seed):
        rng = np.random.default_rng(700 + seed)
        N = int(rng.integers(2, 6))
        B = random_coupling(rng, N, terms=N * N, denominator=50)
        terms = birkhoff_decompose(B)
        assert len(terms) <= N * N - 2 * N + 2
        assert sum(w for w, _ in terms) == pytest.approx(1.0, abs=1e-9)
        assert np.allclose(sum(w * g.matrix() for w, g in terms), N * B.matrix, atol=1e-9)

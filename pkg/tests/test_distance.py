"""Mahalanobis machinery, reference distributions, and threshold rules."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import f as f_dist

from matchrand.core import InsufficientDataError, ValidationError
from matchrand.distance import (BIG, RELAXED, ContradictionError,
                                DistanceMatrix, ReferenceDistribution,
                                ThresholdSpec, build_matrix, covariance_pinv,
                                dynamic_quantile, empirical_reference,
                                mahalanobis_sq, mahalanobis_sq_matrix,
                                quantile)


class TestCovariancePinv:
    def test_two_points_1d(self):
        out = covariance_pinv(np.array([[0.0], [2.0]]))
        assert out.shape == (1, 1)
        assert out[0, 0] == pytest.approx(0.5)  # S = 2, inverse 0.5

    def test_identical_rows_zero_matrix(self):
        out = covariance_pinv(np.ones((5, 3)))
        assert np.allclose(out, 0.0)

    def test_orthogonal_unit_variance_identity(self):
        # 4 points with exactly unit variances and zero covariance.
        X = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
        X *= math.sqrt(3) / 2  # var (ddof=1) of a +-sqrt(3)/2 column is 1
        out = covariance_pinv(X)
        assert np.allclose(out, np.eye(2), atol=1e-12)

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            covariance_pinv(np.array([[1.0, 2.0]]))


class TestMahalanobisSq:
    def test_identity_is_sq_euclidean(self):
        assert mahalanobis_sq([0, 0], [3, 4], np.eye(2)) == pytest.approx(25)

    def test_zero_for_equal(self):
        assert mahalanobis_sq([1.5, 2], [1.5, 2], np.eye(2)) == 0.0

    def test_diag_half(self):
        assert mahalanobis_sq([2, 0], [0, 0], np.diag([0.5, 0.5])) \
            == pytest.approx(2.0)

    def test_symmetry_and_nullspace(self):
        s = np.diag([1.0, 0.0])
        assert mahalanobis_sq([0, 5], [0, -5], s) == 0.0
        assert mahalanobis_sq([1, 0], [0, 0], s) == \
            mahalanobis_sq([0, 0], [1, 0], s)

    @given(arrays(float, (6, 3),
                  elements=st.floats(-50, 50, allow_nan=False)))
    @settings(max_examples=60, deadline=None)
    def test_matrix_matches_pairwise(self, X):
        s = np.eye(3)
        D = mahalanobis_sq_matrix(X, s)
        for i in range(6):
            for j in range(6):
                assert D[i, j] == pytest.approx(
                    mahalanobis_sq(X[i], X[j], s), abs=1e-8)

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_affine_invariance(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(12, 3))
        # Well-conditioned invertible map.
        A = np.eye(3) + 0.2 * rng.normal(size=(3, 3))
        while abs(np.linalg.det(A)) < 0.3:
            A = np.eye(3) + 0.2 * rng.normal(size=(3, 3))
        D1 = mahalanobis_sq_matrix(X, covariance_pinv(X))
        Y = X @ A.T
        D2 = mahalanobis_sq_matrix(Y, covariance_pinv(Y))
        assert np.allclose(D1, D2, atol=1e-8)


class TestDistanceMatrix:
    def test_validation(self):
        with pytest.raises(ValidationError):
            DistanceMatrix(d=np.array([[0, 1], [2, 0]], dtype=float))
        with pytest.raises(ValidationError):
            DistanceMatrix(d=np.array([[1.0]]))
        with pytest.raises(ValidationError):
            DistanceMatrix(d=np.array([[0, -1], [-1, 0]], dtype=float))

    def test_sentinels_detected(self):
        d = np.array([[0, BIG, 1], [BIG, 0, np.inf], [1, np.inf, 0]])
        m = DistanceMatrix(d=d)
        assert m.forbidden[0, 1] and m.forbidden[1, 2]
        assert not m.forbidden[0, 2]
        assert m.free_mask()[0, 2] and not m.free_mask()[0, 1]

    def test_build_matrix_constraints(self):
        X = np.array([[0.0], [1.0], [2.0], [5.0]])
        s = covariance_pinv(X)
        m = build_matrix(X, s, force=[(0, 1)], prevent=[(2, 3)])
        assert m.d[0, 1] == 0.0 and m.forced[0, 1]
        assert np.isinf(m.d[2, 3]) and m.forbidden[2, 3]
        assert m.d[0, 2] == pytest.approx(mahalanobis_sq(X[0], X[2], s))

    def test_contradiction(self):
        X = np.zeros((3, 1))
        with pytest.raises(ContradictionError):
            build_matrix(X, np.eye(1), force=[(0, 1)], prevent=[(1, 0)])

    def test_text_dump(self):
        d = np.array([[0, 1.5, np.inf], [1.5, 0, 2], [np.inf, 2, 0]])
        text = DistanceMatrix(d=d).to_text()
        assert "INF" in text and "1.5" in text


def const_matrix(n, c):
    d = np.full((n, n), float(c))
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix(d=d)


class TestEmpiricalReference:
    def test_constant_matrix(self):
        ref = empirical_reference(const_matrix(4, 3.0), 25,
                                  np.random.default_rng(0))
        assert all(np.all(np.asarray(s) == 3.0) for s in ref.samples)
        assert ref.n_boot == 25

    def test_sample_is_disjoint_pairing(self):
        # n=4: every sample's 2 distances must come from one of the 3
        # perfect pairings of 4 items.
        d = np.array([[0, 1, 2, 3],
                      [1, 0, 4, 5],
                      [2, 4, 0, 6],
                      [3, 5, 6, 0]], dtype=float)
        m = DistanceMatrix(d=d)
        pairings = [{1.0, 6.0}, {2.0, 5.0}, {3.0, 4.0}]
        ref = empirical_reference(m, 100, np.random.default_rng(1))
        for s in ref.samples:
            assert len(s) == 2
            assert set(np.asarray(s).tolist()) in pairings

    def test_odd_n_sample_size(self):
        ref = empirical_reference(const_matrix(5, 1.0), 10,
                                  np.random.default_rng(2))
        assert all(len(s) == 2 for s in ref.samples)

    def test_sentinels_excluded(self):
        d = np.full((4, 4), 2.0)
        np.fill_diagonal(d, 0.0)
        d[0, 1] = d[1, 0] = np.inf
        ref = empirical_reference(DistanceMatrix(d=d), 200,
                                  np.random.default_rng(3))
        assert all(np.all(np.isfinite(np.asarray(s))) for s in ref.samples)

    def test_too_small(self):
        with pytest.raises(InsufficientDataError):
            empirical_reference(const_matrix(3, 1.0), 10,
                                np.random.default_rng(0))


class TestQuantile:
    def test_nearest_rank_median(self):
        ref = ReferenceDistribution(mode="empirical",
                                    samples=[[1, 2, 3, 4]] * 5, n_boot=5)
        assert quantile(ref, 0.5) == 2.0  # k = ceil(0.5 * 4) = 2

    def test_constant(self):
        ref = ReferenceDistribution(mode="empirical",
                                    samples=[[7.0, 7.0]], n_boot=1)
        for q in (0.01, 0.5, 0.99):
            assert quantile(ref, q) == 7.0

    def test_mean_across_samples(self):
        ref = ReferenceDistribution(mode="empirical",
                                    samples=[[1.0], [3.0]], n_boot=2)
        assert quantile(ref, 0.5) == 2.0

    def test_parametric_scaling(self):
        ref = ReferenceDistribution(mode="parametric", p=2, n=52)
        assert quantile(ref, 0.2) == pytest.approx(
            4 * f_dist.ppf(0.2, 2, 50))

    def test_q_bounds(self):
        ref = ReferenceDistribution(mode="parametric", p=2, n=52)
        for bad in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ValidationError):
                quantile(ref, bad)

    @given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1,
                    max_size=30),
           st.floats(0.01, 0.99), st.floats(0.01, 0.99))
    @settings(max_examples=80, deadline=None)
    def test_monotone_in_q(self, values, q1, q2):
        ref = ReferenceDistribution(mode="empirical", samples=[values],
                                    n_boot=1)
        lo, hi = sorted([q1, q2])
        assert quantile(ref, lo) <= quantile(ref, hi)

    def test_reference_validation(self):
        with pytest.raises(ValidationError):
            ReferenceDistribution(mode="empirical", samples=[])
        with pytest.raises(ValidationError):
            ReferenceDistribution(mode="empirical", samples=[[-1.0]])
        with pytest.raises(ValidationError):
            ReferenceDistribution(mode="parametric", p=3, n=3)


class TestDynamicQuantile:
    def test_paper_formula(self):
        assert dynamic_quantile(3, 7) == pytest.approx(2 / 9)

    def test_relaxed_branch(self):
        assert dynamic_quantile(10, 10) == RELAXED
        assert math.isinf(dynamic_quantile(11, 10))

    def test_zero_numerator(self):
        assert dynamic_quantile(1, 5) == 0.0

    @given(st.integers(1, 200), st.integers(0, 200), st.integers(1, 50))
    def test_monotonicity(self, u, r, du):
        a, b = dynamic_quantile(u, r), dynamic_quantile(u + du, r)
        assert b >= a or math.isinf(b)
        if not math.isinf(dynamic_quantile(u, r + du + u)):
            assert dynamic_quantile(u, r + du + u) <= \
                dynamic_quantile(u, max(r, u + 1))

    def test_validation(self):
        with pytest.raises(ValidationError):
            dynamic_quantile(0, 5)
        with pytest.raises(ValidationError):
            dynamic_quantile(1, -1)


class TestThresholdSpec:
    def test_fixed_requires_q(self):
        ThresholdSpec(kind="fixed", q=0.2)
        with pytest.raises(ValidationError):
            ThresholdSpec(kind="fixed")
        with pytest.raises(ValidationError):
            ThresholdSpec(kind="fixed", q=1.0)

    def test_dynamic_rejects_q(self):
        ThresholdSpec(kind="dynamic")
        with pytest.raises(ValidationError):
            ThresholdSpec(kind="dynamic", q=0.5)

    def test_estimation_modes(self):
        ThresholdSpec(kind="fixed", q=0.2, estimation="F")
        with pytest.raises(ValidationError):
            ThresholdSpec(kind="fixed", q=0.2, estimation="X")

import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import stats

from priorcg.cg import CGConfig, pcg_solve
from priorcg.diagnostics import (
    check_spectrum_bounds,
    effective_sample_size,
    error_trace,
    preconditioned_spectrum,
    standardized_difference_test,
    submatrix_spectra,
    tau_lambda_profile,
)
from priorcg.precond import (
    block_threshold,
    identity_preconditioner,
    jacobi_preconditioner,
    prior_preconditioner,
)
from priorcg.sampler import PrecisionOperator
from priorcg.sparse import SparseDesignMatrix


def make_instance(rng, n, p):
    dense = rng.standard_normal((n, p))
    dense[rng.random((n, p)) > 0.7] = 0.0
    X = SparseDesignMatrix.from_dense(dense)
    omega = rng.uniform(0.1, 1.0, size=n)
    tau = rng.uniform(0.2, 2.0)
    lam = rng.uniform(0.1, 3.0, size=p)
    return X, dense, omega, tau, lam


class TestPreconditionedSpectrum:
    def test_zero_design_prior(self):
        X = SparseDesignMatrix.from_dense(np.zeros((4, 6)))
        lam = np.linspace(0.5, 3.0, 6)
        rep = preconditioned_spectrum(X, np.ones(4), 0.7, lam,
                                      prior_preconditioner(0.7, lam))
        np.testing.assert_allclose(rep.eigenvalues, np.ones(6), atol=1e-13)
        assert rep.counts.sum() == 6
        assert rep.trim_range == (0.0, 1.0)

    def test_rank_one_design(self):
        rng = np.random.default_rng(50)
        a = rng.standard_normal(15)
        b = rng.standard_normal(7)
        X = SparseDesignMatrix.from_dense(np.outer(a, b))
        omega = rng.uniform(0.2, 1.5, size=15)
        tau, lam = 0.8, rng.uniform(0.3, 2.0, size=7)
        rep = preconditioned_spectrum(X, omega, tau, lam,
                                      prior_preconditioner(tau, lam))
        s = float(a @ (omega * a)) * float(np.sum((lam * b) ** 2))
        expected = np.concatenate([[1.0 + tau ** 2 * s], np.ones(6)])
        np.testing.assert_allclose(rep.eigenvalues, expected, rtol=1e-10)

    def test_prior_floor_and_jacobi_diag(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            X, dense, omega, tau, lam = make_instance(rng, 30, 12)
            prior = preconditioned_spectrum(X, omega, tau, lam,
                                            prior_preconditioner(tau, lam))
            assert prior.eigenvalues.min() >= 1.0 - 1e-8
            assert np.all(np.diff(prior.eigenvalues) <= 0)
            M = jacobi_preconditioner(X, omega, tau, lam)
            phi = dense.T @ (omega[:, None] * dense) + np.diag(
                (tau * lam) ** -2.0)
            d = np.sqrt(M.inv_diagonal)
            np.testing.assert_allclose(np.diag(d[:, None] * phi * d[None, :]),
                                       np.ones(12), atol=1e-12)
            jac = preconditioned_spectrum(X, omega, tau, lam, M)
            assert jac.trim_range == (-1.0, 0.0)

    def test_full_block_is_exact(self):
        rng = np.random.default_rng(51)
        X, _, omega, tau, lam = make_instance(rng, 25, 8)
        M = block_threshold(X, omega, tau, lam, 8)
        rep = preconditioned_spectrum(X, omega, tau, lam, M)
        np.testing.assert_allclose(rep.eigenvalues, np.ones(8), atol=1e-8)
        assert rep.trim_range == (-0.5, 0.5)

    def test_trimmed_view(self):
        X = SparseDesignMatrix.from_dense(np.diag([3.0, 0.0, 0.0]))
        lam = np.ones(3)
        rep = preconditioned_spectrum(X, np.ones(3), 1.0, lam,
                                      prior_preconditioner(1.0, lam))
        # spectrum is (10, 1, 1); the (0, 1) window hides the ones
        np.testing.assert_allclose(rep.eigenvalues, [10.0, 1.0, 1.0])
        assert rep.trimmed_eigenvalues().size == 0 or \
            np.allclose(rep.trimmed_eigenvalues(), [10.0])

    def test_histogram_partition(self):
        rng = np.random.default_rng(52)
        X, _, omega, tau, lam = make_instance(rng, 40, 20)
        rep = preconditioned_spectrum(X, omega, tau, lam,
                                      identity_preconditioner(20))
        assert rep.counts.sum() == 20
        widths = np.diff(rep.bin_edges)
        assert np.all(widths[1:-1] - 0.1 < 1e-9)


class TestSpectrumBounds:
    def test_zero_design(self):
        X = SparseDesignMatrix.from_dense(np.zeros((3, 4)))
        checks = check_spectrum_bounds(X, np.ones(3), 1.3, np.ones(4),
                                       [(0, 0), (1, 1)])
        for c in checks:
            assert c.passed
            np.testing.assert_allclose([c.observed, c.submatrix_bound,
                                        c.full_bound], np.ones(3), atol=1e-12)

    def test_two_by_two_equalities(self):
        # Diagonal case where both the k=0 and k=1 bounds are tight.
        X = SparseDesignMatrix.from_dense(np.diag([math.sqrt(2.0), 1.0]))
        lam = np.array([10.0, 1.0])
        checks = check_spectrum_bounds(X, np.ones(2), 1.0, lam,
                                       [(0, 0), (1, 0), (0, 1)])
        by_key = {(c.k, c.ell): c for c in checks}
        np.testing.assert_allclose(by_key[(0, 0)].observed, 201.0)
        np.testing.assert_allclose(by_key[(0, 0)].submatrix_bound, 201.0)
        np.testing.assert_allclose(by_key[(1, 0)].observed, 2.0)
        np.testing.assert_allclose(by_key[(1, 0)].submatrix_bound, 2.0)
        np.testing.assert_allclose(by_key[(1, 0)].full_bound, 3.0)
        np.testing.assert_allclose(by_key[(0, 1)].observed, 2.0)
        assert all(c.passed for c in checks)

    def test_random_instances(self):
        grid = [(k, ell) for k in (0, 1, 5) for ell in (0, 1, 10)]
        for seed in range(20):
            rng = np.random.default_rng(200 + seed)
            X, _, omega, tau, lam = make_instance(rng, 50, 25)
            checks = check_spectrum_bounds(X, omega, tau, lam, grid)
            assert all(c.passed for c in checks)

    def test_out_of_range_grid(self):
        X = SparseDesignMatrix.from_dense(np.eye(3))
        with pytest.raises(ValueError):
            check_spectrum_bounds(X, np.ones(3), 1.0, np.ones(3), [(3, 0)])
        with pytest.raises(ValueError):
            check_spectrum_bounds(X, np.ones(3), 1.0, np.ones(3), [(1, 2)])

    def test_submatrix_spectra_drop_order(self):
        X = SparseDesignMatrix.from_dense(np.diag([2.0, 3.0, 4.0]))
        lam = np.array([5.0, 1.0, 0.5])
        spectra = submatrix_spectra(X, np.ones(3), lam, [0, 1, 2])
        np.testing.assert_allclose(spectra[0], [16.0, 9.0, 4.0])
        # k=1 removes column 0 (largest lambda)
        np.testing.assert_allclose(spectra[1], [16.0, 9.0])
        np.testing.assert_allclose(spectra[2], [16.0])


class TestErrorTrace:
    def phi_for(self, dense, omega, prior):
        X = SparseDesignMatrix.from_dense(dense)
        return PrecisionOperator(X, omega, prior)

    def test_exact_start_is_zero(self):
        phi = self.phi_for(np.zeros((1, 2)), np.ones(1), np.ones(2))
        b = np.array([0.5, -1.5])
        report = pcg_solve(phi, b, prior_preconditioner(1.0, np.ones(2)),
                           x0=b.copy(), config=CGConfig(trace_level="full"))
        tr = error_trace(report, b, phi)
        assert np.all(tr.l2_error == 0.0)
        assert np.all(tr.phi_norm_error == 0.0)
        assert np.all(tr.rel_coord_error == 0.0)

    def test_single_coordinate_hand_values(self):
        phi = self.phi_for(np.array([[math.sqrt(3.0)]]), np.ones(1),
                           np.ones(1))
        report = pcg_solve(phi, np.array([8.0]),
                           prior_preconditioner(1.0, np.ones(1)),
                           config=CGConfig(trace_level="full"))
        tr = error_trace(report, np.array([2.0]), phi)
        np.testing.assert_allclose(tr.l2_error, [2.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(tr.phi_norm_error, [4.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(tr.rel_coord_error, [1.0, 0.0], atol=1e-12)
        assert tr.n_guarded_coords == 0

    def test_zero_oracle_coordinate_guarded(self):
        phi = self.phi_for(np.zeros((1, 2)), np.ones(1), np.array([1.0, 4.0]))
        report = pcg_solve(phi, np.array([0.0, 8.0]),
                           prior_preconditioner(1.0, np.array([1.0, 0.5])),
                           config=CGConfig(trace_level="full"))
        tr = error_trace(report, np.array([0.0, 2.0]), phi)
        assert tr.n_guarded_coords == 1
        np.testing.assert_allclose(tr.rel_coord_error[0], 1.0)

    def test_requires_full_trace(self):
        phi = self.phi_for(np.zeros((1, 2)), np.ones(1), np.ones(2))
        report = pcg_solve(phi, np.ones(2),
                           prior_preconditioner(1.0, np.ones(2)))
        with pytest.raises(ValueError):
            error_trace(report, np.ones(2), phi)

    def test_phi_norm_matches_residual_decay(self):
        rng = np.random.default_rng(53)
        dense = rng.standard_normal((30, 10))
        phi = self.phi_for(dense, rng.uniform(0.2, 1.0, 30),
                           rng.uniform(0.5, 2.0, 10))
        b = rng.standard_normal(10)
        report = pcg_solve(phi, b, prior_preconditioner(
            1.0, phi.prior_precision_diag ** -0.5),
            config=CGConfig(rtol=1e-12, trace_level="full"))
        full = phi.dense_matrix()
        star = np.linalg.solve(full, b)
        tr = error_trace(report, star, phi)
        assert np.all(np.diff(tr.phi_norm_error) <= 1e-9 * tr.phi_norm_error[0])
        assert tr.l2_error[-1] <= 1e-6 * tr.l2_error[0]
        assert len(tr.l2_error) == report.iterations + 1


class TestTauLambdaProfile:
    def test_sorted_profile(self):
        state = SimpleNamespace(tau=0.1, lam=np.array([1.0, 2.0, 3.0]))
        prof = tau_lambda_profile(state)
        np.testing.assert_allclose(prof.sorted_values, [0.3, 0.2, 0.1])
        np.testing.assert_allclose(prof.relative_top, [1.0, 2.0 / 3.0,
                                                       1.0 / 3.0])

    def test_flat_profile(self):
        state = SimpleNamespace(tau=2.0, lam=np.full(10, 0.5))
        prof = tau_lambda_profile(state)
        np.testing.assert_allclose(prof.sorted_values, np.ones(10))
        np.testing.assert_allclose(prof.relative_top, np.ones(10))
        assert prof.counts.sum() == 10

    def test_top_truncation(self):
        rng = np.random.default_rng(54)
        state = SimpleNamespace(tau=1.0, lam=rng.uniform(0.1, 5.0, 400))
        prof = tau_lambda_profile(state)
        assert prof.relative_top.size == 250
        assert prof.sorted_values.size == 400
        assert prof.relative_top[0] == 1.0


class TestEffectiveSampleSize:
    def test_iid_near_n(self):
        rng = np.random.default_rng(55)
        x = rng.standard_normal(4000)
        ess = effective_sample_size(x)
        assert 0.7 * 4000 <= ess <= 4000

    def test_ar1_matches_theory(self):
        rng = np.random.default_rng(56)
        n, phi = 50_000, 0.9
        eps = rng.standard_normal(n)
        x = np.empty(n)
        x[0] = eps[0]
        for i in range(1, n):
            x[i] = phi * x[i - 1] + eps[i]
        ess = effective_sample_size(x)
        expected = n * (1 - phi) / (1 + phi)
        assert 0.6 * expected <= ess <= 1.6 * expected

    def test_constant_series(self):
        assert effective_sample_size(np.full(50, 3.0)) == 50.0

    def test_cap(self):
        # strongly antithetic series would exceed n without the cap
        x = np.tile([1.0, -1.0], 500)
        assert effective_sample_size(x) <= 1000.0


class TestStandardizedDifference:
    def test_identical_chains(self):
        rng = np.random.default_rng(57)
        draws = rng.standard_normal((600, 5))
        res = standardized_difference_test(draws, draws)
        np.testing.assert_array_equal(res.z_scores, np.zeros(5))
        assert not res.excluded.any()

    def test_iid_null_is_standard_normal(self):
        rng = np.random.default_rng(58)
        a = rng.standard_normal((2000, 40))
        b = rng.standard_normal((2000, 40))
        res = standardized_difference_test(a, b)
        assert stats.kstest(res.z_scores, "norm").pvalue > 0.01

    def test_detects_mean_offset(self):
        rng = np.random.default_rng(59)
        a = rng.standard_normal((1000, 4)) + 5.0
        b = rng.standard_normal((1000, 4))
        res = standardized_difference_test(a, b)
        assert np.all(np.abs(res.z_scores) > 3.0)

    def test_low_ess_flagged(self):
        rng = np.random.default_rng(60)
        n = 800
        a = rng.standard_normal((n, 2))
        a[:, 1] = np.linspace(0.0, 1.0, n)  # trend: autocorrelation ~ 1
        b = rng.standard_normal((n, 2))
        res = standardized_difference_test(a, b)
        assert not res.excluded[0]
        assert res.excluded[1]

    def test_shape_validation(self):
        rng = np.random.default_rng(61)
        with pytest.raises(ValueError):
            standardized_difference_test(rng.standard_normal((100, 3)),
                                         rng.standard_normal((100, 4)))
        with pytest.raises(ValueError):
            standardized_difference_test(rng.standard_normal((1, 3)),
                                         rng.standard_normal((100, 3)))

    def test_chain_objects_accepted(self):
        rng = np.random.default_rng(62)
        a = SimpleNamespace(draws=rng.standard_normal((500, 3)))
        b = SimpleNamespace(draws=rng.standard_normal((500, 3)))
        res = standardized_difference_test(a, b)
        assert res.z_scores.shape == (3,)

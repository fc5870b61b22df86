import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from oracles import lambda_expanded, lambda_gradient_fd
from seedbank.dynamics import DemographicParams, ObservedDataset, observe, simulate
from seedbank.errors import CollinearityError, DomainError
from seedbank.incomplete import (
    PHI_NAMES,
    Box,
    FitOptions,
    IdentifiableParams,
    fisher_matrix,
    fit_phi_full,
    fit_phi_reduced,
    identifiable_set,
    incomplete_loglik,
    incomplete_score,
    invert_information,
    lambda_gradient,
    lambda_sequence,
    linear_design,
    simulate_via_intensity,
)
from seedbank.scoring import fit_identity_poisson

REF = DemographicParams.reference()
PHI0 = IdentifiableParams(a=0.15, g=0.006, bm=6.5, bu=40.0, bs=25.0, bt=25.0)


def single(r, f=None):
    """One population observed for ``len(r)`` cycles; V = R, F as given (default 0)."""
    r = np.asarray(r)
    f = np.zeros_like(r) if f is None else np.asarray(f)
    return ObservedDataset(np.stack([r, r, f], axis=-1)[None])


def random_phi(rng):
    return IdentifiableParams(
        a=rng.uniform(0.05, 0.95), g=rng.uniform(0.001, 2.0), bm=rng.uniform(0.1, 20),
        bu=rng.uniform(0.1, 100), bs=rng.uniform(0.1, 100), bt=rng.uniform(0.1, 100),
    )


class TestIdentifiableParams:
    def test_from_reference(self):
        phi = IdentifiableParams.from_demographic(REF)
        assert phi.to_array() == pytest.approx(PHI0.to_array())

    def test_box(self):
        box = Box()
        assert box.contains(PHI0)
        with pytest.raises(DomainError, match="bs"):
            box.check(IdentifiableParams(0.15, 0.006, 6.5, 40, 0.0, 25))

    def test_degeneracy_flag(self):
        assert PHI0.full_identifiability
        assert not IdentifiableParams(0.2, 0.2, 1, 1, 1, 1).full_identifiability


class TestIntensity:
    def test_worked_values(self):
        lam = lambda_sequence(PHI0, [2, 3]).lam
        assert lam == pytest.approx([50.0, 56.9, 60.403], rel=1e-14)

    def test_batched_matches_single(self):
        F = np.array([[2, 3, 0], [0, 1, 5]])
        batched = lambda_sequence(PHI0, F).lam
        for k in range(2):
            assert np.array_equal(batched[k], lambda_sequence(PHI0, F[k]).lam)

    @given(
        st.floats(0.01, 0.99), st.floats(1e-3, 5), st.floats(1e-3, 50), st.floats(1e-3, 200),
        st.floats(1e-3, 200), st.floats(1e-3, 200), st.lists(st.integers(0, 40), max_size=10),
    )
    @settings(max_examples=200, deadline=None)
    def test_recursion_matches_expanded_form(self, a, g, bm, bu, bs, bt, F):
        got = lambda_sequence(IdentifiableParams(a, g, bm, bu, bs, bt), F).lam
        want = np.array(lambda_expanded((a, g, bm, bu, bs, bt), F), dtype=float)
        assert np.allclose(got, want, rtol=1e-12, atol=0)

    def test_gradient_at_start(self):
        assert lambda_gradient(PHI0, [2, 3])[0].tolist() == [0, 0, 0, 0, 1, 1]

    def test_gradient_power_term(self):
        assert lambda_gradient(PHI0, [2, 3])[2, 4] == pytest.approx(0.0225)

    def test_gradient_matches_exact_finite_differences(self):
        rng = np.random.default_rng(2718)
        worst = 0.0
        for _ in range(100):
            phi = random_phi(rng)
            F = rng.integers(0, 30, size=rng.integers(0, 7))
            analytic = lambda_gradient(phi, F)
            fd = lambda_gradient_fd(tuple(phi.to_array()), F)
            nz = fd != 0
            assert np.all(analytic[~nz] == 0)
            worst = max(worst, float(np.max(np.abs(analytic[nz] - fd[nz]) / np.abs(fd[nz]), initial=0)))
        assert worst < 1e-6

    def test_gradient_positive_after_start(self):
        grad = lambda_gradient(PHI0, [2, 3, 1, 4])
        assert np.all(grad[1:, 1:] > 0)

    def test_linear_in_amplitudes(self):
        # Lambda = sum over amplitudes of amplitude * its gradient column
        F = [3, 0, 2, 5]
        grad = lambda_gradient(PHI0, F)
        lam = lambda_sequence(PHI0, F).lam
        assert np.allclose(grad[:, 2:] @ PHI0.to_array()[2:], lam, rtol=1e-13)


class TestLikelihood:
    def test_empty_count(self):
        assert incomplete_loglik(PHI0, single([0])) == pytest.approx(-50.0)

    def test_count_at_mean(self):
        assert incomplete_loglik(PHI0, single([50])) == pytest.approx(50 * math.log(50) - 50)
        assert incomplete_loglik(PHI0, single([50])) == pytest.approx(145.601, abs=5e-4)

    def test_permutation_invariance(self):
        data = observe(simulate(REF, 4, 40, 5))
        perm = np.random.default_rng(0).permutation(40)
        shuffled = ObservedDataset(data.counts[perm])
        assert incomplete_loglik(PHI0, shuffled) == pytest.approx(incomplete_loglik(PHI0, data), rel=1e-14)

    def test_box_violation(self):
        with pytest.raises(DomainError):
            incomplete_loglik(IdentifiableParams(0.9999, 1, 1, 1, 1, 1), single([3]))

    def test_equal_phi_equal_loglik(self):
        other = REF.replace(b=0.25, sigma=100.0, a_prime=0.012)
        phi_a = IdentifiableParams.from_demographic(REF)
        phi_b = IdentifiableParams.from_demographic(other)
        assert phi_a == phi_b
        data = observe(simulate(REF, 4, 50, 8))
        assert incomplete_loglik(phi_a, data) == incomplete_loglik(phi_b, data)

    def test_score_matches_numerical_derivative(self):
        data = observe(simulate(REF, 4, 30, 9))
        score = incomplete_score(PHI0, data)
        x = PHI0.to_array()
        for p in range(6):
            h = 1e-6 * max(1.0, abs(x[p]))
            up, dn = x.copy(), x.copy()
            up[p] += h
            dn[p] -= h
            num = (incomplete_loglik(IdentifiableParams.from_array(up), data)
                   - incomplete_loglik(IdentifiableParams.from_array(dn), data)) / (2 * h)
            assert score[p] == pytest.approx(num, rel=1e-5, abs=1e-6)


def _loglik_change(phi_a, phi_b, data):
    la, lb = incomplete_loglik(phi_a, data), incomplete_loglik(phi_b, data)
    return abs(la - lb) / abs(la)


class TestFlatDirections:
    def test_n0_only_the_sum_matters(self):
        data = observe(simulate(REF, 0, 200, 1))
        rng = np.random.default_rng(1)
        for _ in range(20):
            shift = rng.uniform(-20, 20)
            moved = IdentifiableParams(rng.uniform(0.01, 0.99), rng.uniform(0.001, 3), rng.uniform(0.1, 30),
                                       rng.uniform(0.1, 100), PHI0.bs + shift, PHI0.bt - shift)
            assert _loglik_change(PHI0, moved, data) < 1e-10

    def test_n1_preserving_bm_c0_c1(self):
        data = observe(simulate(REF, 1, 200, 2))
        c0 = PHI0.bs + PHI0.bt
        c1 = PHI0.a * PHI0.bs + PHI0.g * PHI0.bt + PHI0.bu
        rng = np.random.default_rng(2)
        for _ in range(20):
            a, g = rng.uniform(0.01, 0.99), rng.uniform(0.001, 1.0)
            bs = rng.uniform(1, 49)
            bt = c0 - bs
            bu = c1 - a * bs - g * bt
            moved = IdentifiableParams(a, g, PHI0.bm, bu, bs, bt)
            assert _loglik_change(PHI0, moved, data) < 1e-10

    def test_n2_one_dimensional_family(self):
        data = observe(simulate(REF, 2, 200, 3))
        g = PHI0.g
        lam_coeffs = lambda a: np.array([[1, 1, 0], [a, g, 1], [a * a, a * g, 1 + g]])
        target = lam_coeffs(PHI0.a) @ np.array([PHI0.bs, PHI0.bt, PHI0.bu])
        for a in (0.1, 0.2, 0.3):
            bs, bt, bu = np.linalg.solve(lam_coeffs(a), target)
            assert min(bs, bt, bu) > 0
            moved = IdentifiableParams(a, g, PHI0.bm, bu, bs, bt)
            assert _loglik_change(PHI0, moved, data) < 1e-10

    def test_n3_information_full_rank(self):
        data = observe(simulate(REF, 3, 300, 4))
        info = fisher_matrix(PHI0, data)
        assert np.linalg.matrix_rank(info) == 6
        _, cond = invert_information(info, data.K)
        assert math.isfinite(cond)


class TestFisher:
    def test_n0_entries(self):
        data = single([47])
        info = fisher_matrix(PHI0, data)
        expected = np.zeros((6, 6))
        expected[4:, 4:] = 0.02
        assert np.allclose(info, expected, atol=1e-15)
        assert np.linalg.matrix_rank(info) == 1

    def test_symmetric(self):
        info = fisher_matrix(PHI0, observe(simulate(REF, 4, 30, 6)))
        assert np.array_equal(info, info.T)

    def test_inversion_refused_when_singular(self):
        info = fisher_matrix(PHI0, single([47]))
        cov, cond = invert_information(info, 1)
        assert cov is None and cond == math.inf


@pytest.fixture(scope="module")
def rounded_fit():
    """Reduced fit to counts set to round(Lambda) at the true phi."""
    F = observe(simulate(REF, 4, 500, 12)).F
    lam = lambda_sequence(PHI0, F[:, :-1]).lam
    counts = np.stack([np.round(lam), np.round(lam), F], axis=-1).astype(int)
    return fit_phi_reduced(ObservedDataset(counts), PHI0.a, PHI0.g)


class TestReducedFit:
    def test_rounded_counts_recover_rate_terms(self, rounded_fit):
        est = rounded_fit.phi_hat
        assert (est.bm, est.bu) == pytest.approx((PHI0.bm, PHI0.bu), rel=0.01)
        assert est.bs + est.bt == pytest.approx(PHI0.bs + PHI0.bt, rel=0.01)

    @pytest.mark.xfail(strict=True, reason="rounding bias is amplified by 1/(a - g) in the bs/bt contrast")
    def test_rounded_counts_recover_initial_terms(self, rounded_fit):
        est = rounded_fit.phi_hat
        assert (est.bs, est.bt) == pytest.approx((PHI0.bs, PHI0.bt), rel=0.01)

    def test_exact_means_recover_everything(self):
        F = observe(simulate(REF, 4, 500, 12)).F
        X = linear_design(PHI0.a, PHI0.g, ObservedDataset(np.stack([F, F, F], axis=-1)))
        y = lambda_sequence(PHI0, F[:, :-1]).lam.ravel()
        res = fit_identity_poisson(X, y, np.full(4, 1e-6), np.full(4, 1e6))
        assert res.beta == pytest.approx(PHI0.to_array()[2:], rel=1e-6)

    def test_single_replicate_within_three_se(self):
        rep = fit_phi_reduced(observe(simulate(REF, 4, 300, 13)), PHI0.a, PHI0.g)
        assert rep.converged and rep.method == "reduced"
        se = rep.std_errors()
        for name in ("bm", "bu", "bs", "bt"):
            assert abs(getattr(rep.phi_hat, name) - getattr(PHI0, name)) <= 3 * se[name]
        assert math.isnan(se["a"])

    def test_monotone_path(self):
        rep = fit_phi_reduced(observe(simulate(REF, 4, 300, 14)), PHI0.a, PHI0.g, init=[1.0, 1.0, 1.0, 1.0])
        path = np.array(rep.loglik_path)
        assert len(path) > 2 and np.all(np.diff(path) >= 0)

    def test_n0_is_rank_deficient(self):
        with pytest.raises(CollinearityError) as err:
            fit_phi_reduced(observe(simulate(REF, 0, 100, 15)), PHI0.a, PHI0.g)
        assert {"bs", "bt"} <= set(err.value.parameters)

    def test_bad_known_values(self):
        data = observe(simulate(REF, 4, 10, 16))
        with pytest.raises(DomainError):
            fit_phi_reduced(data, 1.2, 0.006)
        with pytest.raises(DomainError):
            fit_phi_reduced(data, 0.15, 0.0)


class TestFullFit:
    def test_dominates_truth(self):
        for seed in range(3):
            data = observe(simulate(REF, 4, 300, 300 + seed))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rep = fit_phi_full(data, options=FitOptions(seed=seed))
            assert rep.loglik >= incomplete_loglik(PHI0, data) - 1e-9 * abs(rep.loglik)

    def test_short_horizon_returns_identifiable_functionals(self):
        data = observe(simulate(REF, 1, 300, 17))
        rep = fit_phi_full(data)
        assert rep.method == "partial" and rep.phi_hat is None
        assert set(rep.partial) == {"bm", "c0", "c1"}
        truth = {"bm": PHI0.bm, "c0": PHI0.bs + PHI0.bt, "c1": PHI0.a * PHI0.bs + PHI0.g * PHI0.bt + PHI0.bu}
        for name, (est, se) in rep.partial.items():
            assert abs(est - truth[name]) <= 4 * se

    def test_horizon_two_profiles_g(self):
        rep = fit_phi_full(observe(simulate(REF, 2, 300, 18)))
        assert set(rep.partial) == {"g", "bm", "c0", "c1", "c2"}

    def test_supplied_start(self):
        data = observe(simulate(REF, 4, 300, 19))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = fit_phi_full(data, init_strategy=PHI0, options=FitOptions(n_starts=2))
        assert rep.phi_hat is not None and rep.fisher.shape == (6, 6)
        with pytest.raises(DomainError):
            fit_phi_full(data, init_strategy="moments")

    @pytest.mark.slow
    def test_fisher_interval_coverage(self):
        hits = np.zeros(6)
        total = 0
        for rep_id in range(50):
            data = observe(simulate(REF, 4, 300, 900 + rep_id))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rep = fit_phi_full(data, options=FitOptions(seed=rep_id))
            cov, _ = invert_information(fisher_matrix(PHI0, data), data.K)
            se = np.sqrt(np.diag(cov))
            hits += np.abs(rep.phi_hat.to_array() - PHI0.to_array()) <= 1.96 * se
            total += 1
        coverage = hits / total
        assert np.all(coverage >= 0.90), dict(zip(PHI_NAMES, coverage))

    @pytest.mark.slow
    @pytest.mark.xfail(strict=True, reason="K=300 cannot pin a, g, bs, bt to 10%; see README")
    def test_median_within_ten_percent(self):
        est = []
        for rep_id in range(20):
            data = observe(simulate(REF, 4, 300, 500 + rep_id))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                est.append(fit_phi_full(data, options=FitOptions(seed=rep_id)).phi_hat.to_array())
        median = np.median(np.array(est), axis=0)
        assert np.all(np.abs(median - PHI0.to_array()) <= 0.10 * PHI0.to_array())


class TestIdentifiableSet:
    def test_cases(self):
        assert identifiable_set(0).functionals == ("c0",)
        assert identifiable_set(1).functionals == ("bm", "c0", "c1")
        assert set(identifiable_set(2).functionals) == {"g", "bm", "c0", "c1", "c2"}
        assert identifiable_set(3).functionals == PHI_NAMES

    def test_no_gain_beyond_three(self):
        three, five = identifiable_set(3), identifiable_set(5)
        assert three.functionals == five.functionals
        assert three.degenerate_functionals == five.degenerate_functionals

    def test_description(self):
        lines = identifiable_set(0).lines()
        assert lines == ["horizon n = 0", "identifiable: c0 = b*sigma + b'*tau"]
        assert any("a = a'*b/b'" in line for line in identifiable_set(4).lines())

    def test_negative(self):
        with pytest.raises(DomainError):
            identifiable_set(-1)


class TestIntensitySimulator:
    def test_deterministic(self):
        d1 = simulate_via_intensity(PHI0, 3, 20, 4, 0.21, 0.01)
        d2 = simulate_via_intensity(PHI0, 3, 20, 4, 0.21, 0.01)
        assert np.array_equal(d1.counts, d2.counts)

    def test_initial_mean(self):
        d = simulate_via_intensity(PHI0, 0, 10**5, 5, 0.21, 0.01)
        assert abs(d.R[:, 0].mean() - 50) <= 4 * math.sqrt(50 / 10**5)

    def test_rejects_bad_probability(self):
        with pytest.raises(DomainError):
            simulate_via_intensity(PHI0, 1, 2, 0, 1.5, 0.01)


def two_sample_moments_agree(x, y, k=4.0):
    """Means and variances of two samples agree within ``k`` standard errors."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    se_mean = math.sqrt(x.var(ddof=1) / len(x) + y.var(ddof=1) / len(y))
    ok_mean = abs(x.mean() - y.mean()) <= k * se_mean

    def var_se(z):
        m4 = np.mean((z - z.mean()) ** 4)
        return (m4 - z.var() ** 2) / len(z)

    se_var = math.sqrt(var_se(x) + var_se(y))
    ok_var = abs(x.var(ddof=1) - y.var(ddof=1)) <= k * se_var
    return ok_mean and ok_var


@pytest.fixture(scope="module")
def matched_samples():
    K = 10**4
    full = observe(simulate(REF, 4, K, 77))
    direct = simulate_via_intensity(PHI0, 4, K, 78, REF.c, REF.d)
    return full, direct


def test_intensity_simulator_matches_full_model(matched_samples):
    full, direct = matched_samples
    for i in range(5):
        assert two_sample_moments_agree(full.R[:, i], direct.R[:, i]), ("R", i)
        assert two_sample_moments_agree(full.F[:, i], direct.F[:, i]), ("F", i)


def test_initial_rosette_histograms_agree(matched_samples):
    full, direct = matched_samples
    edges = np.concatenate([[-0.5], np.arange(35.5, 66, 2.0), [np.inf]])
    table = np.array([np.histogram(full.R[:, 0], edges)[0], np.histogram(direct.R[:, 0], edges)[0]])
    assert stats.chi2_contingency(table).pvalue > 0.01

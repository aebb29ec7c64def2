import math

import numpy as np
import pytest
from helpers import REF_EIGENVALUES, model_from_eigenvalues
from numpy.testing import assert_allclose

from inclpanel import multivariate as mv
from inclpanel import numerics as nm
from inclpanel.errors import DimensionMismatch, NotStandardized, SingularMatrix


def standardized_factor_data(seed, n=1200, p=6, k=2, scale=2.0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, k)) @ (scale * rng.standard_normal((p, k))).T
    x = x + rng.standard_normal((n, p))
    return (x - x.mean(0)) / x.std(0, ddof=1)


def kmo_textbook(r: np.ndarray) -> float:
    # Independent reimplementation straight from the definition.
    inv = np.linalg.inv(r)
    d = 1.0 / np.sqrt(np.diag(inv))
    partial = -inv * np.outer(d, d)
    np.fill_diagonal(partial, 0.0)
    raw = r.copy()
    np.fill_diagonal(raw, 0.0)
    return float((raw ** 2).sum() / ((raw ** 2).sum() + (partial ** 2).sum()))


class TestKaiserRetention:
    def test_reference_spectrum_retains_five(self):
        assert mv.kaiser_retained(REF_EIGENVALUES) == 5

    def test_random_lists_straddling_one(self):
        rng = np.random.default_rng(44)
        for _ in range(50):
            above = rng.integers(0, 6)
            below = rng.integers(1, 6)
            lam = np.concatenate([1.0 + rng.uniform(0.01, 4.0, above),
                                  1.0 - rng.uniform(0.01, 0.99, below)])
            rng.shuffle(lam)
            assert mv.kaiser_retained(lam) == above


class TestVarianceTable:
    def test_share_matches_arithmetic_oracle(self):
        model = model_from_eigenvalues(REF_EIGENVALUES)
        table = model.variance_table()
        assert abs(table[0]["pct_of_variance"] - 100.0 * 4.854 / 15.0) < 1e-9
        # agreement with the published rounded share is bounded by the input
        # rounding (half an ulp of the printed eigenvalue: 100*0.0005/15)
        assert abs(table[0]["pct_of_variance"] - 32.358) < 0.0034

    def test_cumulative_of_retained(self):
        model = model_from_eigenvalues(REF_EIGENVALUES)
        cum5 = model.variance_table()[4]["cumulative_pct"]
        assert abs(cum5 - 100.0 * REF_EIGENVALUES[:5].sum() / 15.0) < 1e-9
        assert abs(cum5 - 75.674) < 0.001

    def test_percentages_sum_to_hundred(self):
        x = standardized_factor_data(1)
        model = mv.pca_fit(x)
        table = model.variance_table()
        total = sum(row["pct_of_variance"] for row in table)
        assert abs(total - 100.0) < 1e-6
        cums = [row["cumulative_pct"] for row in table]
        assert all(b >= a - 1e-12 for a, b in zip(cums, cums[1:]))


class TestPcaFit:
    def test_requires_standardized_columns(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((100, 3)) * 5.0
        with pytest.raises(NotStandardized):
            mv.pca_fit(x)

    def test_full_retention_reconstructs_correlation(self):
        x = standardized_factor_data(3)
        model = mv.pca_fit(x, retention=x.shape[1])
        recon = model.loadings @ model.loadings.T
        assert np.abs(recon - model.correlation.entries).max() < 1e-8

    def test_communalities_over_all_components(self):
        x = standardized_factor_data(5)
        model = mv.pca_fit(x, retention=x.shape[1])
        communality = (model.loadings ** 2).sum(axis=1)
        assert np.abs(communality - 1.0).max() < 1e-8

    def test_independent_columns_variance_sums(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((4000, 6))
        x = (x - x.mean(0)) / x.std(0, ddof=1)
        model = mv.pca_fit(x)
        total = sum(r["pct_of_variance"] for r in model.variance_table())
        assert abs(total - 100.0) < 1e-6

    def test_rank_deficient_flag(self):
        rng = np.random.default_rng(11)
        base = rng.standard_normal(500)
        x = np.column_stack([base, base, rng.standard_normal(500)])
        x = (x - x.mean(0)) / x.std(0, ddof=1)
        model = mv.pca_fit(x)
        assert model.rank_deficient
        assert model.kmo is None  # singular matrix, no adequacy statistic

    def test_planted_factors_retained(self):
        x = standardized_factor_data(13, n=3000, p=9, k=3, scale=3.0)
        model = mv.pca_fit(x)
        assert model.retained == 3


class TestVarimax:
    def test_single_column_rejected(self):
        with pytest.raises(DimensionMismatch):
            mv.varimax(np.ones((5, 1)))

    def test_perfect_simple_structure_is_fixed_point(self):
        lam = np.zeros((6, 3))
        lam[[0, 1], 0] = 0.9
        lam[[2, 3], 1] = 0.8
        lam[[4, 5], 2] = 0.7
        rotated, q = mv.varimax(lam)
        assert abs(mv.varimax_criterion(rotated) - mv.varimax_criterion(lam)) < 1e-10

    def test_random_loadings_properties(self):
        rng = np.random.default_rng(23)
        for _ in range(25):
            p = int(rng.integers(3, 11))
            m = int(rng.integers(2, 5))
            lam = rng.standard_normal((p, m))
            rotated, q = mv.varimax(lam)
            # criterion evaluated directly, independent of the module helper
            def criterion(a):
                h = np.sqrt((a ** 2).sum(axis=1))
                h[h == 0] = 1.0
                sq = (a / h[:, None]) ** 2
                return float(((sq ** 2).mean(0) - sq.mean(0) ** 2).sum())

            assert criterion(rotated) >= criterion(lam) - 1e-15
            assert np.abs(q.T @ q - np.eye(m)).max() < 1e-10
            drift = np.abs((rotated ** 2).sum(1) - (lam ** 2).sum(1)).max()
            assert drift < 1e-10
            assert_allclose(rotated, lam @ q, atol=1e-12)


class TestScores:
    def test_eigenvector_row_scores_unit(self):
        x = standardized_factor_data(31)
        model = mv.pca_fit(x, retention=3)
        probe = model.eigen.eigenvectors[:, 0][None, :]
        s = mv.scores(model, probe)
        assert abs(s[0, 0] - 1.0) < 1e-10
        assert np.abs(s[0, 1:]).max() < 1e-10

    def test_zero_row_zero_scores(self):
        x = standardized_factor_data(37)
        model = mv.pca_fit(x, retention=2)
        s = mv.scores(model, np.zeros((1, x.shape[1])))
        assert_allclose(s, 0.0)

    def test_score_variance_matches_eigenvalue(self):
        x = standardized_factor_data(41)
        model = mv.pca_fit(x)
        s = mv.scores(model, x)
        for k in range(model.retained):
            lam_k = model.eigenvalues[k]
            assert abs(s[:, k].var(ddof=1) - lam_k) < 0.02 * lam_k

    def test_missing_row_yields_nan(self):
        x = standardized_factor_data(43)
        model = mv.pca_fit(x)
        probe = x[:3].copy()
        probe[1, 2] = np.nan
        s = mv.scores(model, probe)
        assert np.isnan(s[1]).all()
        assert np.isfinite(s[[0, 2]]).all()

    def test_dimension_mismatch(self):
        x = standardized_factor_data(47)
        model = mv.pca_fit(x)
        with pytest.raises(DimensionMismatch):
            mv.scores(model, x[:, :-1])


class TestKmo:
    def test_two_variable_closed_form(self):
        for r in (0.1, 0.5, 0.9):
            m = nm.SymMatrix(np.array([[1.0, r], [r, 1.0]]))
            assert abs(mv.kmo(m).overall - 0.5) < 1e-12

    def test_near_identity_stays_in_range(self):
        m = nm.SymMatrix(np.eye(4) + 1e-8 * (np.ones((4, 4)) - np.eye(4)))
        res = mv.kmo(m)
        assert 0.0 <= res.overall <= 1.0
        assert np.all((res.per_variable_msa >= 0) & (res.per_variable_msa <= 1))

    def test_matches_textbook_reimplementation(self):
        rng = np.random.default_rng(53)
        x = rng.standard_normal((200, 5)) @ rng.standard_normal((5, 5))
        r = np.corrcoef(x, rowvar=False)
        res = mv.kmo(nm.SymMatrix(r))
        assert abs(res.overall - kmo_textbook(r)) < 1e-10

    def test_permutation_invariance(self):
        rng = np.random.default_rng(59)
        x = rng.standard_normal((150, 4)) @ rng.standard_normal((4, 4))
        r = np.corrcoef(x, rowvar=False)
        perm = rng.permutation(4)
        a = mv.kmo(nm.SymMatrix(r)).overall
        b = mv.kmo(nm.SymMatrix(r[np.ix_(perm, perm)])).overall
        assert abs(a - b) < 1e-12

    def test_singular_raises_then_ridge_recovers(self):
        r = np.ones((3, 3)) * 0.5 + np.eye(3) * 0.5
        r[0, 1] = r[1, 0] = 1.0  # variables 0 and 1 perfectly collinear
        m = nm.SymMatrix(r)
        with pytest.raises(SingularMatrix):
            mv.kmo(m)
        res = mv.kmo(m, ridge=True)
        assert 0.0 <= res.overall <= 1.0


class TestBartlett:
    def test_df_for_fifteen_variables(self):
        rng = np.random.default_rng(61)
        x = rng.standard_normal((300, 15)) @ rng.standard_normal((15, 15))
        r = nm.SymMatrix(np.corrcoef(x, rowvar=False))
        res = mv.bartlett(r, 704)
        assert res.df == 105

    def test_identity_gives_zero_statistic(self):
        res = mv.bartlett(nm.SymMatrix(np.eye(4)), 100)
        assert res.chi_square == 0.0
        assert res.p_value == 1.0

    def test_hand_formula_det_half(self):
        # equicorrelation with det(R) = (1-rho)^2 (1+2rho) = 0.5
        from scipy.optimize import brentq

        rho = brentq(lambda t: (1 - t) ** 2 * (1 + 2 * t) - 0.5, 0.0, 0.9)
        r = nm.SymMatrix(np.full((3, 3), rho) + (1 - rho) * np.eye(3))
        res = mv.bartlett(r, 100)
        expected = -(100 - 1 - 11.0 / 6.0) * math.log(0.5)
        assert abs(res.chi_square - expected) < 1e-9
        assert abs(res.p_value - nm.chi2_sf(expected, 3)) < 1e-12

    def test_permutation_invariance(self):
        rng = np.random.default_rng(67)
        x = rng.standard_normal((80, 5)) @ rng.standard_normal((5, 5))
        r = np.corrcoef(x, rowvar=False)
        perm = rng.permutation(5)
        a = mv.bartlett(nm.SymMatrix(r), 80).chi_square
        b = mv.bartlett(nm.SymMatrix(r[np.ix_(perm, perm)]), 80).chi_square
        assert abs(a - b) < 1e-8


class TestBuildIndex:
    def keys(self, n):
        return [("C", 2000 + i) for i in range(n)]

    def test_single_component_all_weightings_coincide(self):
        model = model_from_eigenvalues([2.0, 0.5, 0.1], retained=1)
        s = np.array([[1.0], [2.0], [-3.0]])
        for weighting in mv.WEIGHTINGS:
            series = mv.build_index(s, model, self.keys(3), weighting)
            assert_allclose(series.values, s[:, 0])

    def test_variance_share_weights_from_reference_spectrum(self):
        model = model_from_eigenvalues(REF_EIGENVALUES)
        s = np.zeros((2, 5))
        series = mv.build_index(s, model, self.keys(2), "variance_share")
        weights = np.array(series.metadata["weights"])
        expected = REF_EIGENVALUES[:5] / REF_EIGENVALUES[:5].sum()
        assert_allclose(weights, expected, atol=1e-12)
        assert abs(weights.sum() - 1.0) < 1e-12

    def test_equal_weighting_of_constant_scores(self):
        model = model_from_eigenvalues([3.0, 2.0, 1.5])
        s = np.full((4, 3), 2.5)
        series = mv.build_index(s, model, self.keys(4), "equal")
        assert_allclose(series.values, 2.5)

    def test_invariant_under_component_reordering(self):
        from dataclasses import replace

        model = model_from_eigenvalues([3.0, 2.0, 1.5])
        rng = np.random.default_rng(71)
        s = rng.standard_normal((10, 3))
        base = mv.build_index(s, model, self.keys(10), "variance_share")
        perm = [2, 0, 1]
        lam_perm = model.eigenvalues[perm]
        model_perm = replace(
            model, eigen=nm.EigenDecomposition(lam_perm, np.eye(3)[:, perm])
        )
        swapped = mv.build_index(s[:, perm], model_perm, self.keys(10),
                                 "variance_share")
        assert_allclose(swapped.values, base.values, atol=1e-12)

    def test_missing_inputs_propagate(self):
        model = model_from_eigenvalues([2.0, 1.5])
        s = np.array([[1.0, 2.0], [np.nan, 0.0]])
        series = mv.build_index(s, model, self.keys(2), "equal")
        assert math.isnan(series.values[1])


class TestOrientIndex:
    def test_negative_anchor_correlation_flips(self):
        keys = [("C", 2000 + i) for i in range(50)]
        rng = np.random.default_rng(73)
        anchor = rng.standard_normal(50)
        series = mv.IndexSeries(tuple(keys), -anchor + 0.05 *
                                rng.standard_normal(50))
        oriented = mv.orient_index(series, anchor, "LFE")
        assert oriented.metadata["anchor_flipped"]
        assert np.corrcoef(oriented.values, anchor)[0, 1] > 0

    def test_positive_correlation_untouched(self):
        keys = [("C", 2000 + i) for i in range(20)]
        values = np.linspace(-1, 1, 20)
        series = mv.IndexSeries(tuple(keys), values.copy())
        oriented = mv.orient_index(series, values, "LFE")
        assert not oriented.metadata["anchor_flipped"]
        assert_allclose(oriented.values, values)


class TestEstimator:
    def test_sklearn_protocol(self):
        from sklearn.base import clone

        est = mv.PrincipalComponentIndex(retention=2, rotate=False)
        params = est.get_params()
        assert params["retention"] == 2
        cloned = clone(est)
        assert cloned.get_params() == params

    def test_fit_transform_index_roundtrip(self):
        x = standardized_factor_data(79, n=800, p=6, k=2)
        keys = [(f"C{i % 4}", 2000 + i // 4) for i in range(800)]
        est = mv.PrincipalComponentIndex(anchor="x0",
                                         symbols=[f"x{j}" for j in range(6)])
        est.fit(x)
        s = est.transform(x)
        assert s.shape == (800, est.retained_)
        series = est.index(x, keys)
        assert len(series.values) == 800
        assert abs(sum(series.metadata["weights"]) - 1.0) < 1e-12
        assert series.metadata["rotated_scores"] is False
        assert series.metadata["retained"] == est.retained_
        assert series.metadata["anchor"] == "x0"

    def test_rotated_scores_requires_rotation(self):
        x = standardized_factor_data(83)
        est = mv.PrincipalComponentIndex(rotate=False, use_rotated_scores=True)
        with pytest.raises(ValueError):
            est.fit(x)

    def test_rotation_sums_cumulative_matches_extraction(self):
        x = standardized_factor_data(89, n=1500, p=8, k=3, scale=2.5)
        est = mv.PrincipalComponentIndex(rotate=True)
        est.fit(x)
        model = est.model_
        if model.retained >= 2:
            rot = model.rotation_sums()
            ext_cum = model.variance_table()[model.retained - 1]["cumulative_pct"]
            assert abs(rot[-1]["cumulative_pct"] - ext_cum) < 1e-8
            totals = [r["total"] for r in rot]
            assert all(a >= b - 1e-12 for a, b in zip(totals, totals[1:]))

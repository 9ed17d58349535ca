import numpy as np
import pytest
from scipy import integrate
from scipy.special import gamma as gamma_fn

from spandmd.errors import ValidationError
from spandmd.stats import (
    SHARED_DATA_CAVEAT,
    candidate_constants,
    chi_square_sf,
    fit_power_law,
    format_rank_table,
    friedman_nemenyi,
    nemenyi_cd,
)


class TestPowerLaw:
    def test_planted_inverse_law(self):
        fit = fit_power_law([(b, 5.0 / b) for b in (10, 50, 100, 500)])
        assert abs(fit.C - 5.0) <= 1e-6
        assert abs(fit.gamma - 1.0) <= 1e-6
        assert fit.converged

    def test_planted_square_root_law(self):
        fit = fit_power_law([(b, 3.0 / b**0.5) for b in (10, 20, 50, 100)])
        assert abs(fit.C - 3.0) <= 1e-6
        assert abs(fit.gamma - 0.5) <= 1e-6

    def test_ratio_form(self):
        fit = fit_power_law([(b, 1.0 + 5.0 / b) for b in (10, 50, 100, 500)], form="ratio")
        assert abs(fit.C - 5.0) <= 1e-6
        assert abs(fit.gamma - 1.0) <= 1e-6
        assert fit.model_form == "ratio"

    def test_noisy_recovery_monte_carlo(self):
        hits = 0
        for trial in range(100):
            rng = np.random.default_rng(1000 + trial)
            B = np.unique(np.round(np.logspace(1.0, 3.0, 20)).astype(int)).astype(float)
            values = 5.0 / B * (1.0 + 0.05 * rng.standard_normal(B.size))
            fit = fit_power_law(list(zip(B, values)))
            hits += abs(fit.gamma - 1.0) <= 0.1
        assert hits >= 95

    def test_scale_equivariance(self):
        pts = [(b, 2.0 / b**0.7) for b in (10, 20, 50, 100, 200)]
        scaled = [(b, 7.3 * v) for b, v in pts]
        base = fit_power_law(pts)
        lifted = fit_power_law(scaled)
        assert abs(lifted.C - 7.3 * base.C) <= 1e-9 * 7.3 * base.C
        assert abs(lifted.gamma - base.gamma) <= 1e-9

    @pytest.mark.parametrize("points", [
        [(10, 1.0), (20, 0.5)],                       # too few
        [(10, 1.0), (5, 0.5), (20, 0.2)],             # not ascending
        [(10, 1.0), (20, -0.5), (30, 0.2)],           # non-positive
    ])
    def test_invalid_inputs(self, points):
        with pytest.raises(ValidationError):
            fit_power_law(points)

    def test_ratio_form_requires_values_above_one(self):
        with pytest.raises(ValidationError):
            fit_power_law([(10, 0.9), (20, 0.8), (30, 0.7)], form="ratio")


class TestCandidateConstants:
    def test_dinov3_values(self):
        c = candidate_constants(1280, 197, 5)
        assert round(c.d_over_t, 2) == 6.50
        assert round(c.d_over_tp, 2) == 1.30

    def test_dinov2_values(self):
        c = candidate_constants(1536, 257, 5)
        assert round(c.d_over_t, 2) == 5.98
        assert round(c.d_over_tp, 2) == 1.20

    def test_unit_inputs(self):
        c = candidate_constants(1, 1, 1)
        assert set(c.as_dict().values()) == {1.0}

    def test_ratio_table(self):
        c = candidate_constants(1280, 197, 5)
        ratios = c.ratios(9.2)
        assert ratios["d/t"] == pytest.approx(9.2 / (1280 / 197))
        # the d^2 candidates overestimate by orders of magnitude
        assert ratios["d2/t"] < 2e-3


class TestChiSquareSf:
    def test_at_zero(self):
        assert chi_square_sf(0.0, 3) == 1.0

    def test_exponential_closed_form(self):
        assert chi_square_sf(2.0 * np.log(2.0), 2) == pytest.approx(0.5, abs=1e-12)

    def test_df3_quantile(self):
        assert chi_square_sf(7.815, 3) == pytest.approx(0.05, abs=5e-4)

    def test_against_quadrature(self):
        # oracle: numerical integration of the chi-square density
        def pdf(u, df):
            return u ** (df / 2 - 1) * np.exp(-u / 2) / (2 ** (df / 2) * gamma_fn(df / 2))

        for df, x in [(1, 2.3), (3, 7.815), (7, 12.0), (20, 31.4)]:
            tail, _ = integrate.quad(pdf, x, np.inf, args=(df,))
            assert chi_square_sf(x, df) == pytest.approx(tail, abs=1e-10)

    def test_domain_errors(self):
        with pytest.raises(ValidationError):
            chi_square_sf(-1.0, 2)
        with pytest.raises(ValidationError):
            chi_square_sf(1.0, 0)


class TestNemenyiCd:
    @pytest.mark.parametrize("n,expected", [(245, 0.300), (325, 0.260), (165, 0.365)])
    def test_paper_table_values(self, n, expected):
        assert nemenyi_cd(4, n) == pytest.approx(expected, abs=1e-3)

    def test_cd_scaling_invariant(self):
        # CD * sqrt(n) is constant in n for fixed k
        ref = nemenyi_cd(4, 20) * np.sqrt(20)
        for n in (50, 100, 245, 1000):
            assert nemenyi_cd(4, n) * np.sqrt(n) == pytest.approx(ref, abs=1e-12)
        assert ref == pytest.approx(2.569 * np.sqrt(20 / 6.0), abs=1e-12)

    def test_alpha_10_table(self):
        assert nemenyi_cd(4, 100, alpha=0.10) == pytest.approx(
            2.291 * np.sqrt(20 / 600.0), abs=1e-12
        )

    def test_out_of_table(self):
        with pytest.raises(ValidationError):
            nemenyi_cd(11, 100)
        with pytest.raises(ValidationError):
            nemenyi_cd(4, 100, alpha=0.01)


class TestFriedman:
    def test_consistent_ordering(self):
        rng = np.random.default_rng(0)
        n, k = 20, 3
        # method j scores j + noise, lower is better -> ranks (1, 2, 3)
        scores = np.arange(1, k + 1)[None, :] + 0.01 * rng.standard_normal((n, k))
        res = friedman_nemenyi(scores, better="lower")
        assert np.allclose(res.avg_ranks, [1.0, 2.0, 3.0])
        assert res.p_value < 1e-6
        # permutation oracle: the observed statistic dominates chance
        chi2_null = []
        for _ in range(500):
            permuted = np.array([rng.permutation(row) for row in scores])
            chi2_null.append(friedman_nemenyi(permuted, better="lower").chi2)
        assert res.chi2 > np.quantile(chi2_null, 0.999)

    def test_constant_rows(self):
        scores = np.ones((5, 4))
        res = friedman_nemenyi(scores, better="lower")
        assert res.chi2 == 0.0
        assert res.p_value == 1.0

    def test_rank_sum_invariant(self):
        rng = np.random.default_rng(1)
        scores = rng.standard_normal((12, 5))
        res = friedman_nemenyi(scores, better="higher")
        assert res.avg_ranks.sum() == pytest.approx(5 * 6 / 2, abs=1e-12)

    def test_direction_flip(self):
        scores = np.array([[1.0, 2.0], [1.0, 3.0], [2.0, 5.0]])
        low = friedman_nemenyi(scores, better="lower")
        high = friedman_nemenyi(scores, better="higher")
        assert np.allclose(low.avg_ranks, [1.0, 2.0])
        assert np.allclose(high.avg_ranks, [2.0, 1.0])

    def test_log10_p_tracks_underflow(self):
        # huge statistic: p underflows but log10_p stays informative
        n, k = 400, 4
        scores = np.tile(np.arange(1.0, k + 1.0), (n, 1))
        res = friedman_nemenyi(scores, better="lower")
        assert res.p_value == 0.0 or res.p_value < 1e-200
        assert res.log10_p < -69  # same regime as huge-n sweeps

    def test_caveat_attached(self):
        scores = np.random.default_rng(2).standard_normal((5, 3))
        res = friedman_nemenyi(scores)
        assert res.caveat == SHARED_DATA_CAVEAT

    def test_shape_validation(self):
        with pytest.raises(ValidationError):
            friedman_nemenyi(np.ones((1, 4)))
        with pytest.raises(ValidationError):
            friedman_nemenyi(np.ones((5, 1)))
        with pytest.raises(ValidationError):
            friedman_nemenyi(np.ones((5, 3)), better="sideways")


class TestRankTable:
    def test_format_contains_methods_and_cd(self):
        scores = np.array([[0.9, 0.8, 0.3], [0.8, 0.7, 0.2], [0.95, 0.9, 0.4]])
        res = {"cos": friedman_nemenyi(scores, better="higher")}
        table = format_rank_table(res, ["alpha", "beta", "gamma"])
        assert "alpha" in table and "CD" in table and "cos" in table

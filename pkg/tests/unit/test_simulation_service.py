import numpy as np
import pytest

from app.core.exceptions import ConfigError, InfeasibleCorrelation, InvalidInput, TargetOutOfRange
from app.models.simulation import BinaryCorrelationSpec, GaussianDgpParams, ResampleDgpConfig
from app.services.cohort import CohortService
from app.services.estimators import EstimatorService
from app.services.numerics import NumericsService
from app.services.simulation import SimulationService, open_uniform


@pytest.fixture(scope="module")
def synthetic_cohort():
    return CohortService.generate_synthetic(2024)


class TestGaussianDgp:
    """常態資料生成過程測試"""

    def test_moments_at_large_n(self):
        """測試 Var(Y₁^(0)) = 4、Var(Y₂^(10)) = b²+3、Cov(Y₁^(1), Y₂^(10)) = b+2"""
        b = 1.0 / 3.0
        cohort, _ = SimulationService.gaussian_dgp(GaussianDgpParams(theta1=0.3, b=b, n=100_000), seed=7)

        assert np.var(cohort.y1_0, ddof=1) == pytest.approx(4.0, abs=0.1)
        assert np.var(cohort.y2_10, ddof=1) == pytest.approx(b**2 + 3.0, abs=0.1)
        assert np.cov(cohort.y1_1, cohort.y2_10)[0, 1] == pytest.approx(b + 2.0, abs=0.1)

    def test_consistency_rule(self):
        """測試觀察值依序列揭露潛在結果"""
        params = GaussianDgpParams(theta1=0.2, theta2_tilde=0.1, lambda0=0.05, lambda1=0.1, n=200)
        cohort, trial = SimulationService.gaussian_dgp(params, seed=3)
        treated = trial.arm == 1

        np.testing.assert_array_equal(trial.y1[treated], cohort.y1_1[treated])
        np.testing.assert_array_equal(trial.y2[treated], cohort.y2_10[treated])
        np.testing.assert_array_equal(trial.y1[~treated], cohort.y1_0[~treated])
        np.testing.assert_array_equal(trial.y2[~treated], cohort.y2_01[~treated])
        np.testing.assert_allclose(cohort.y2_10 - cohort.y2_00, 0.05, atol=1e-12)
        np.testing.assert_allclose(cohort.y2_11 - cohort.y2_01, 0.1, atol=1e-12)
        assert trial.covariate_names == ["x1", "x2", "x3"]

    def test_seed_determinism(self):
        """測試相同種子產生相同資料"""
        params = GaussianDgpParams(n=50)
        _, first = SimulationService.gaussian_dgp(params, seed=42)
        _, second = SimulationService.gaussian_dgp(params, seed=42)
        np.testing.assert_array_equal(first.y1, second.y1)
        np.testing.assert_array_equal(first.arm, second.arm)

    def test_null_dgp_centered(self):
        """測試無效果時 θ̂_cr 平均接近 0"""
        params = GaussianDgpParams(b=1.0, n=100)
        rng = np.random.default_rng(99)
        estimates = []
        for _ in range(2000):
            _, trial = SimulationService.gaussian_dgp(params, rng)
            estimates.append(EstimatorService.theta_cr(trial).estimate)
        # σ_cr = √2，單次標準差 √(2/100)
        assert abs(np.mean(estimates)) < 4.0 * np.sqrt(2.0 / 100) / np.sqrt(2000)

    def test_truths(self):
        """測試理論變異數常數"""
        zero = SimulationService.gaussian_dgp_truths(GaussianDgpParams(b=0.0, n=500))
        assert zero.sigma2_cr == 3.0
        assert zero.sigma2_pr == 16.0
        assert zero.sigma2_cr_adj == 2.0
        assert zero.sigma2_pr_adj == 4.0

        one = SimulationService.gaussian_dgp_truths(GaussianDgpParams(b=1.0, n=500))
        assert one.sigma2_cr == one.sigma2_cr_adj == 2.0

    def test_truths_general_allocation(self):
        """測試一般 π₁ 下的理論常數"""
        truths = SimulationService.gaussian_dgp_truths(GaussianDgpParams(b=0.0, n=500, pi1=0.25))
        weight = 1.0 / (4 * 0.25) + 1.0 / (4 * 0.75)
        assert truths.sigma2_cr == pytest.approx(3.0 * weight)
        assert truths.sigma2_pr == pytest.approx(4.0 * (1 / 0.25 + 1 / 0.75))

    def test_open_uniform_range(self):
        """測試均勻亂數落在開區間"""
        u = open_uniform(np.random.default_rng(0), 10_000)
        assert u.min() > 0.0
        assert u.max() < 1.0


class TestCorrelatedBernoulli:
    """相關二元變數測試"""

    def test_reference_conditionals(self):
        """測試 (0.185, 0.135, 0.33) 的條件機率"""
        spec = SimulationService.correlation_spec(0.185, 0.135, 0.33)
        given_one, given_zero = SimulationService.conditional_probabilities(spec)
        assert given_one == pytest.approx(0.37169, abs=1e-5)
        assert given_zero == pytest.approx(0.081273, abs=1e-5)

    def test_independent_case(self):
        """測試 ρ = 0 時條件機率皆為 p₂"""
        spec = SimulationService.correlation_spec(0.3, 0.6, 0.0)
        given_one, given_zero = SimulationService.conditional_probabilities(spec)
        assert given_one == pytest.approx(0.6, abs=1e-15)
        assert given_zero == pytest.approx(0.6, abs=1e-15)

    def test_infeasible_rho(self):
        """測試 ρ 超出可行區間"""
        with pytest.raises(InfeasibleCorrelation):
            SimulationService.correlation_spec(0.185, 0.135, 0.99)
        with pytest.raises(InfeasibleCorrelation):
            SimulationService.correlation_spec(0.185, 0.135, -0.5)

    def test_marginals_out_of_range(self):
        """測試邊際機率超出 (0, 1)"""
        with pytest.raises(TargetOutOfRange):
            SimulationService.correlation_spec(0.185, 0.0, 0.1)

    @pytest.mark.parametrize("p1, p2, rho", [(0.185, 0.135, 0.33), (0.5, 0.5, 0.9), (0.1, 0.7, -0.2), (0.4, 0.3, 0.0)])
    def test_joint_law_exact(self, p1, p2, rho):
        """測試聯合機率表的邊際與相關係數"""
        law = SimulationService.joint_law(BinaryCorrelationSpec(p1=p1, p2=p2, rho=rho))

        assert (law > 0).all()
        assert law.sum() == pytest.approx(1.0, abs=1e-15)
        assert law[:, 1].sum() == pytest.approx(p2, abs=1e-15)
        assert law[1, :].sum() == pytest.approx(p1, abs=1e-15)
        corr = (law[1, 1] - p1 * p2) / np.sqrt(p1 * (1 - p1) * p2 * (1 - p2))
        assert corr == pytest.approx(rho, abs=1e-12)

    def test_sampled_correlation(self):
        """測試 10⁶ 次抽樣的相關係數"""
        rng = np.random.default_rng(1)
        spec = SimulationService.correlation_spec(0.185, 0.135, 0.33)
        z1 = (rng.random(1_000_000) < 0.185).astype(float)
        z2 = SimulationService.correlated_bernoulli(spec, z1, rng)

        assert np.corrcoef(z1, z2)[0, 1] == pytest.approx(0.33, abs=0.005)
        assert z2.mean() == pytest.approx(0.135, abs=0.002)

    def test_non_binary_z1(self):
        """測試 z1 必須為二元"""
        spec = SimulationService.correlation_spec(0.3, 0.3, 0.1)
        with pytest.raises(InvalidInput):
            SimulationService.correlated_bernoulli(spec, np.array([0.0, 0.5]), 0)


class TestResampledCohort:
    """重抽樣世代測試"""

    def test_calibration_closure(self, synthetic_cohort):
        """測試 θ = 0.10、λ = 0.05 的校準截距回算"""
        config = ResampleDgpConfig(theta=0.10, lambda_=0.05, n=380, cohort=synthetic_cohort)
        cohort = SimulationService.build_resampled_cohort(config, seed=5)

        records = {record.name: record for record in cohort.calibration}
        assert set(records) == {"alpha_1", "alpha_10", "alpha_01", "alpha_11"}
        assert records["alpha_1"].target_offset == pytest.approx(0.10)
        assert records["alpha_10"].target_offset == pytest.approx(0.05)
        assert records["alpha_01"].target_offset == pytest.approx(0.05)
        assert records["alpha_11"].target_offset == pytest.approx(0.10)
        for record in records.values():
            assert record.error < 1e-8

    def test_forward_evaluation_of_step_four(self, synthetic_cohort):
        """測試以 μ̂₂ 斜率與校準截距重新計算平均差"""
        config = ResampleDgpConfig(theta=0.10, lambda_=0.05, n=380, cohort=synthetic_cohort)
        cohort = SimulationService.build_resampled_cohort(config, seed=6)
        model2 = NumericsService.logistic_fit(cohort.covariates, cohort.y2_00)
        reference = float(np.mean(model2.predict_proba(cohort.covariates)))

        for record, offset in zip(cohort.calibration[1:], (0.05, 0.05, 0.10)):
            achieved = float(np.mean(model2.predict_proba(cohort.covariates, record.intercept))) - reference
            assert achieved == pytest.approx(offset, abs=1e-8)

    def test_null_calibration(self, synthetic_cohort):
        """測試 θ = λ = τ̃ = 0 時所有目標等於參考平均"""
        config = ResampleDgpConfig(theta=0.0, lambda_=0.0, n=380, cohort=synthetic_cohort)
        cohort = SimulationService.build_resampled_cohort(config, seed=11)
        baseline_model = CohortService.fit_baseline_model(synthetic_cohort)

        assert cohort.calibration[0].intercept == pytest.approx(baseline_model.intercept, abs=1e-6)
        for record in cohort.calibration:
            assert record.target_offset == 0.0
            assert record.error < 1e-10

    def test_binary_outcomes_and_shape(self, synthetic_cohort):
        """測試六個潛在結果皆為二元且與世代同大小"""
        config = ResampleDgpConfig(theta=0.1, lambda_=0.0, tau_tilde=-0.05, rho=0.33, n=380, cohort=synthetic_cohort)
        cohort = SimulationService.build_resampled_cohort(config, seed=12)
        assert cohort.binary
        assert cohort.size == synthetic_cohort.size
        assert np.isin(cohort.outcome_matrix, (0.0, 1.0)).all()
        np.testing.assert_array_equal(cohort.y1_0, synthetic_cohort.baseline)

    def test_step_three_correlation(self, synthetic_cohort):
        """測試 Y₂^(00) 的平均為 p₁ + τ̃ 且與 Y₁^(0) 相關 ρ"""
        p1 = synthetic_cohort.baseline_mean
        spec = SimulationService.correlation_spec(p1, p1 - 0.05, 0.33)
        z1 = np.tile(synthetic_cohort.baseline, 3000)
        z2 = SimulationService.correlated_bernoulli(spec, z1, 8)

        assert z2.mean() == pytest.approx(p1 - 0.05, abs=0.002)
        assert np.corrcoef(z1, z2)[0, 1] == pytest.approx(0.33, abs=0.005)

    def test_seed_determinism(self, synthetic_cohort):
        """測試相同種子產生相同世代"""
        config = ResampleDgpConfig(theta=0.1, lambda_=0.05, n=380, cohort=synthetic_cohort, seed=77)
        first = SimulationService.build_resampled_cohort(config)
        second = SimulationService.build_resampled_cohort(config)
        np.testing.assert_array_equal(first.outcome_matrix, second.outcome_matrix)

    def test_missing_cohort(self):
        """測試缺少基線世代"""
        with pytest.raises(ConfigError):
            SimulationService.build_resampled_cohort(ResampleDgpConfig(n=100), seed=1)

    def test_infeasible_correlation(self, synthetic_cohort):
        """測試不可行的 ρ"""
        config = ResampleDgpConfig(theta=0.1, rho=0.99, tau_tilde=-0.05, n=100, cohort=synthetic_cohort)
        with pytest.raises(InfeasibleCorrelation):
            SimulationService.build_resampled_cohort(config, seed=1)

    def test_target_out_of_range(self, synthetic_cohort):
        """測試校準目標超出 (0, 1)"""
        config = ResampleDgpConfig(theta=0.9, n=100, cohort=synthetic_cohort)
        with pytest.raises(TargetOutOfRange):
            SimulationService.build_resampled_cohort(config, seed=1)

    def test_lambda_alias(self):
        """測試 lambda 別名"""
        config = ResampleDgpConfig.model_validate({"lambda": 0.05, "theta": 0.1, "n": 100})
        assert config.lambda_ == 0.05
        assert config.model_dump(by_alias=True)["lambda"] == 0.05


class TestDrawTrial:
    """自世代抽樣試驗測試"""

    @pytest.fixture
    def potential(self, synthetic_cohort):
        config = ResampleDgpConfig(theta=0.1, lambda_=0.05, n=380, cohort=synthetic_cohort)
        return SimulationService.build_resampled_cohort(config, seed=21)

    def test_all_treated(self, potential):
        """測試 π₁ = 1 時全部為第 1 組"""
        trial = SimulationService.draw_trial(potential, potential.size, 1.0, seed=0)
        assert trial.n1 == potential.size
        assert set(np.unique(trial.y2)) <= set(np.unique(potential.y2_10))

    def test_determinism(self, potential):
        """測試相同種子得到相同試驗"""
        first = SimulationService.draw_trial(potential, 380, 0.5, seed=4)
        second = SimulationService.draw_trial(potential, 380, 0.5, seed=4)
        np.testing.assert_array_equal(first.arm, second.arm)
        np.testing.assert_array_equal(first.covariates, second.covariates)
        np.testing.assert_array_equal(first.y1, second.y1)
        np.testing.assert_array_equal(first.y2, second.y2)

    def test_resampled_covariate_means(self, potential):
        """測試抽樣共變數平均接近世代平均"""
        trial = SimulationService.draw_trial(potential, 380, 0.5, seed=9)
        mean = potential.covariates.mean(axis=0)
        sd = potential.covariates.std(axis=0)
        assert (np.abs(trial.covariates.mean(axis=0) - mean) <= 4.0 * sd / np.sqrt(380)).all()

    def test_invalid_allocation(self, potential):
        """測試 π₁ 超出 [0, 1]"""
        with pytest.raises(InvalidInput):
            SimulationService.draw_trial(potential, 10, 1.5, seed=0)

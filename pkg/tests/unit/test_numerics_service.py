import numpy as np
import pytest
from scipy import special

from app.core.exceptions import InvalidInput, NonConvergence, SingularCovariance, TargetOutOfRange
from app.services.numerics import NumericsService


class TestNormalDistribution:
    """常態分布函數測試"""

    def test_normal_cdf_reference_values(self):
        """測試 Φ 的參考值"""
        assert NumericsService.normal_cdf(0.0) == 0.5
        assert NumericsService.normal_cdf(1.959964) == pytest.approx(0.975, abs=1e-6)
        # −(z_{0.975} + √500·0.1/√3)
        assert NumericsService.normal_cdf(-3.25095) == pytest.approx(5.751e-4, abs=2e-6)

    def test_normal_cdf_symmetry_and_monotonicity(self):
        """測試 Φ(z) + Φ(−z) = 1 且單調不減"""
        grid = np.linspace(-8.0, 8.0, 161)
        values = [NumericsService.normal_cdf(z) for z in grid]
        for z, value in zip(grid, values):
            assert value + NumericsService.normal_cdf(-z) == pytest.approx(1.0, abs=1e-12)
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_normal_cdf_rejects_non_finite(self):
        """測試非有限輸入"""
        with pytest.raises(InvalidInput):
            NumericsService.normal_cdf(float("nan"))
        with pytest.raises(InvalidInput):
            NumericsService.normal_cdf(float("inf"))

    def test_normal_quantile_reference_values(self):
        """測試 Φ⁻¹ 的參考值"""
        assert NumericsService.normal_quantile(0.5) == 0.0
        assert NumericsService.normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)
        assert NumericsService.normal_quantile(0.9) == pytest.approx(1.281552, abs=1e-6)

    def test_quantile_inverts_cdf(self):
        """測試 Φ⁻¹∘Φ 在 [−6, 6] 為恆等映射"""
        for z in np.linspace(-6.0, 6.0, 121):
            assert NumericsService.normal_quantile(NumericsService.normal_cdf(z)) == pytest.approx(z, abs=1e-7)
        for p in (1e-6, 0.025, 0.3, 0.5, 0.77, 0.999):
            assert NumericsService.normal_cdf(NumericsService.normal_quantile(p)) == pytest.approx(p, abs=1e-8)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
    def test_normal_quantile_out_of_range(self, p):
        """測試機率超出 (0, 1)"""
        with pytest.raises(InvalidInput):
            NumericsService.normal_quantile(p)


class TestLeastSquares:
    """最小平方測試"""

    def test_zero_response(self):
        """測試反應變數為 0 時係數為 0"""
        x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, -1.0]])
        beta = NumericsService.least_squares(x, np.zeros(4))
        np.testing.assert_allclose(beta, [0.0, 0.0], atol=1e-15)

    def test_exact_fit_on_first_column(self):
        """測試反應變數等於第一欄"""
        x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, -1.0]])
        beta = NumericsService.least_squares(x, x[:, 0])
        np.testing.assert_allclose(beta, [1.0, 0.0], atol=1e-12)

    def test_hand_normal_equations(self):
        """測試與手算正規方程式一致：XᵀX = [[6,3],[3,3]]，Xᵀy = [14,10]"""
        x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 1.0]])
        y = np.array([1.0, 2.0, 3.0, 5.0])
        beta = NumericsService.least_squares(x, y)
        np.testing.assert_allclose(beta, [4.0 / 3.0, 2.0], rtol=1e-12)

    def test_residuals_orthogonal_to_columns(self):
        """測試殘差與每個設計欄正交"""
        rng = np.random.default_rng(11)
        x = rng.standard_normal((50, 3))
        x -= x.mean(axis=0)
        y = rng.standard_normal(50)
        residual = y - x @ NumericsService.least_squares(x, y)
        scale = np.linalg.norm(x, axis=0) * np.linalg.norm(y)
        np.testing.assert_allclose(x.T @ residual / scale, 0.0, atol=1e-8)

    def test_collinear_columns(self):
        """測試共線設計矩陣"""
        x = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [4.0, 8.0]])
        with pytest.raises(SingularCovariance):
            NumericsService.least_squares(x, np.arange(4.0))

    def test_too_few_rows(self):
        """測試列數不足"""
        with pytest.raises(SingularCovariance):
            NumericsService.least_squares(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([1.0, 2.0]))

    def test_empty_design(self):
        """測試沒有共變數"""
        with pytest.raises(SingularCovariance):
            NumericsService.least_squares(np.empty((5, 0)), np.arange(5.0))


class TestLogisticFit:
    """IRLS 邏輯迴歸測試"""

    def test_intercept_only_quarter(self):
        """測試只有截距且平均 0.25"""
        y = np.array([1.0, 0.0, 0.0, 0.0] * 5)
        model = NumericsService.logistic_fit(np.empty((20, 0)), y)
        assert model.intercept == pytest.approx(np.log(0.25 / 0.75), abs=1e-6)
        assert model.slopes == []

    def test_intercept_only_half(self):
        """測試只有截距且平均 0.5"""
        model = NumericsService.logistic_fit(np.empty((6, 0)), np.array([1.0, 0.0, 1.0, 0.0, 1.0, 0.0]))
        assert model.intercept == pytest.approx(0.0, abs=1e-12)

    def test_recovers_generating_coefficients(self):
        """測試大樣本下還原 (α, β) = (−1.5, 1.0)"""
        rng = np.random.default_rng(2024)
        x = rng.standard_normal(100_000)
        y = (rng.random(100_000) < special.expit(-1.5 + x)).astype(float)

        model = NumericsService.logistic_fit(x.reshape(-1, 1), y)

        assert model.intercept == pytest.approx(-1.5, abs=0.05)
        assert model.slopes[0] == pytest.approx(1.0, abs=0.05)
        assert model.gradient_norm <= 1e-8

    def test_intercept_score_equation(self):
        """測試擬合機率平均等於結果平均"""
        rng = np.random.default_rng(5)
        x = rng.standard_normal((400, 2))
        y = (rng.random(400) < special.expit(0.3 + x @ np.array([0.8, -0.5]))).astype(float)

        model = NumericsService.logistic_fit(x, y)

        assert float(np.mean(model.predict_proba(x))) == pytest.approx(float(y.mean()), abs=1e-8)

    def test_complete_separation(self):
        """測試完全分離時不收斂"""
        x = np.array([[-2.0], [-1.0], [1.0], [2.0]])
        with pytest.raises(NonConvergence):
            NumericsService.logistic_fit(x, np.array([0.0, 0.0, 1.0, 1.0]))

    def test_constant_outcomes(self):
        """測試結果全部相同"""
        with pytest.raises(InvalidInput):
            NumericsService.logistic_fit(np.ones((4, 1)), np.zeros(4))

    def test_non_binary_outcomes(self):
        """測試非二元結果"""
        with pytest.raises(InvalidInput):
            NumericsService.logistic_fit(np.ones((3, 1)), np.array([0.0, 0.5, 1.0]))


class TestCalibrateIntercept:
    """截距校準測試"""

    def test_zero_slopes_closed_form(self):
        """測試斜率為 0 時 α = logit(目標)"""
        x = np.random.default_rng(1).standard_normal((30, 3))
        alpha = NumericsService.calibrate_intercept(np.zeros(3), x, 0.3)
        assert alpha == pytest.approx(-0.847298, abs=1e-6)
        assert alpha == pytest.approx(float(special.logit(0.3)), abs=1e-8)

    def test_fixed_point(self):
        """測試以 α₀ 產生的平均為目標時回到 α₀"""
        rng = np.random.default_rng(3)
        x = rng.standard_normal((200, 2))
        slopes = np.array([0.5, -0.2])
        target = float(np.mean(special.expit(-1.0 + x @ slopes)))

        assert NumericsService.calibrate_intercept(slopes, x, target) == pytest.approx(-1.0, abs=1e-8)

    def test_forward_evaluation_hits_target(self):
        """測試以解回算平均機率"""
        x = np.random.default_rng(336).standard_normal((336, 3))
        slopes = np.array([0.0, 0.0, 1.0])
        target = 0.185 + 0.05

        report = NumericsService.calibrate_intercept_report(slopes, x, target)

        assert report.converged
        assert float(np.mean(special.expit(report.value + x @ slopes))) == pytest.approx(target, abs=1e-10)

    def test_bracket_independence(self):
        """測試不同二分區間得到相同解"""
        x = np.random.default_rng(9).standard_normal((100, 2))
        slopes = np.array([1.2, 0.4])
        wide = NumericsService.calibrate_intercept(slopes, x, 0.2)
        narrow = NumericsService.calibrate_intercept(slopes, x, 0.2, bracket=(-5.0, 5.0))
        assert wide == pytest.approx(narrow, abs=1e-9)

    @pytest.mark.parametrize("target", [0.0, 1.0, -0.2, 1.3])
    def test_target_out_of_range(self, target):
        """測試目標不在 (0, 1)"""
        with pytest.raises(TargetOutOfRange):
            NumericsService.calibrate_intercept(np.zeros(1), np.zeros((5, 1)), target)

    def test_target_outside_bracket(self):
        """測試目標在區間內無法達到"""
        with pytest.raises(TargetOutOfRange):
            NumericsService.calibrate_intercept(np.zeros(1), np.zeros((5, 1)), 0.1, bracket=(0.0, 1.0))

    def test_dimension_mismatch(self):
        """測試斜率與共變數欄數不符"""
        with pytest.raises(InvalidInput):
            NumericsService.calibrate_intercept(np.zeros(2), np.zeros((5, 3)), 0.4)

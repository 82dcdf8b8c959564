import logging
import math

import numpy as np
from scipy import special

from app.core.exceptions import DegenerateVariance, InfeasibleDesign, InvalidInput
from app.models.design import (
    DesignKind,
    DesignParams,
    EffectScenario,
    PotentialOutcomeMeans,
    SampleSizeResult,
    SensitivitySpec,
    TestOutcome,
    VarianceComponents,
)
from app.models.trial import EstimateReport
from app.services.numerics import NumericsService

logger = logging.getLogger(__name__)


class InferenceService:
    """檢定、檢定力、樣本數與敏感度分析"""

    @staticmethod
    def critical_value(alpha: float) -> float:
        """z_{1−α}"""
        return NumericsService.normal_quantile(1.0 - alpha)

    @staticmethod
    def _require_positive(name: str, value: float) -> None:
        if not value > 0.0:
            raise InvalidInput(f"{name} 必須為正數: {value}")

    @staticmethod
    def potential_outcome_means(scenario: EffectScenario, carryover: bool) -> PotentialOutcomeMeans:
        """六個潛在結果的期望值

        carryover=False 時 tau_tilde 與 theta2_tilde 即為 τ 與 θ₂，且 λ 不參與。
        """
        mu = scenario.mu
        period2 = mu + scenario.tau_tilde
        if not carryover:
            return PotentialOutcomeMeans(
                y1_0=mu,
                y1_1=mu + scenario.theta1,
                y2_00=period2,
                y2_10=period2,
                y2_11=period2 + scenario.theta2_tilde,
                y2_01=period2 + scenario.theta2_tilde,
            )
        return PotentialOutcomeMeans(
            y1_0=mu,
            y1_1=mu + scenario.theta1,
            y2_00=period2,
            y2_10=period2 + scenario.lambda0,
            y2_11=period2 + scenario.theta2_tilde,
            y2_01=period2 + scenario.theta2_tilde - scenario.lambda1,
        )

    @staticmethod
    def expected_basic_estimand(scenario: EffectScenario) -> float:
        """E[θ̂_cr] 的極限 ½(θ₁ + θ̃₂ − λ₀ − λ₁)"""
        return 0.5 * (scenario.theta1 + scenario.theta2_tilde - scenario.lambda0 - scenario.lambda1)

    @staticmethod
    def one_sided_test(report: EstimateReport, design: DesignParams) -> TestOutcome:
        """單尾 Z 檢定 H0: θ ≤ θ*"""
        return InferenceService.sensitivity_test(report, design, SensitivitySpec(lambda_bound=0.0))

    @staticmethod
    def type1_error_cr(lambda0: float, lambda1: float, sigma_cr: float, design: DesignParams) -> float:
        """有殘留效應時 T_cr 的型一錯誤率"""
        InferenceService._require_positive("sigma_cr", sigma_cr)
        z = InferenceService.critical_value(design.alpha)
        shift = math.sqrt(design.n) * 0.5 * (lambda0 + lambda1) / sigma_cr
        return float(special.ndtr(-z - shift))

    @staticmethod
    def power_crossover(
        theta_sum_half_minus_star: float,
        lambda0: float,
        lambda1: float,
        sigma: float,
        design: DesignParams,
    ) -> float:
        """T_cr（或以 σ̃_cr,adj 代入的 T_cr,adj）的檢定力"""
        InferenceService._require_positive("sigma", sigma)
        z = InferenceService.critical_value(design.alpha)
        root_n = math.sqrt(design.n)
        drift = (root_n * theta_sum_half_minus_star - root_n * 0.5 * (lambda0 + lambda1)) / sigma
        return float(special.ndtr(-z + drift))

    @staticmethod
    def power_parallel(theta1_minus_star: float, sigma_pr: float, design: DesignParams) -> float:
        """T_pr 的檢定力"""
        InferenceService._require_positive("sigma_pr", sigma_pr)
        z = InferenceService.critical_value(design.alpha)
        return float(special.ndtr(-z + math.sqrt(design.n) * theta1_minus_star / sigma_pr))

    @staticmethod
    def power_at(n: float, effect: float, sigma: float, alpha: float) -> float:
        """以實數樣本數計算 Φ(−z_{1−α} + √n·effect/σ)"""
        InferenceService._require_positive("sigma", sigma)
        InferenceService._require_positive("n", n)
        z = InferenceService.critical_value(alpha)
        return float(special.ndtr(-z + math.sqrt(n) * effect / sigma))

    @staticmethod
    def sample_size(
        design_kind: DesignKind | str,
        effect: float,
        carryover_sum: float,
        sigma: float,
        alpha: float,
        beta: float,
    ) -> SampleSizeResult:
        """達到檢定力 1−β 所需的樣本數

        effect 已扣除 θ*；carryover_sum 只在 cr_carryover 時使用。
        """
        kind = DesignKind(design_kind)
        InferenceService._require_positive("sigma", sigma)
        if not (0.0 < alpha < 1.0 and 0.0 < beta < 1.0):
            raise InvalidInput(f"alpha 與 beta 必須介於 0 與 1 之間: alpha={alpha}, beta={beta}")

        bias = 0.5 * carryover_sum if kind == DesignKind.CR_CARRYOVER else 0.0
        detectable = effect - bias
        if not detectable > 0.0:
            raise InfeasibleDesign(
                f"可偵測效果必須為正: effect − ½(λ₀+λ₁) = {effect} − {bias} = {detectable} ≤ 0"
            )

        z_sum = NumericsService.normal_quantile(1.0 - alpha) + NumericsService.normal_quantile(1.0 - beta)
        n_exact = z_sum**2 * sigma**2 / detectable**2
        logger.debug(f"Sample size: kind={kind.value}, n_exact={n_exact:.6f}")

        return SampleSizeResult(
            design_kind=kind,
            n=int(math.ceil(n_exact)),
            n_exact=n_exact,
            detectable_effect=detectable,
        )

    @staticmethod
    def pitman_are(sigma2_cr: float, sigma2_pr: float, theta_alt: float, carryover_sum: float) -> float:
        """Pitman 漸近相對效率 ñ_cr / n_pr"""
        InferenceService._require_positive("sigma2_cr", sigma2_cr)
        InferenceService._require_positive("sigma2_pr", sigma2_pr)
        if not theta_alt > 0.0:
            raise InfeasibleDesign(f"θ_Alt 必須為正: {theta_alt}")

        factor = 1.0 - carryover_sum / (2.0 * theta_alt)
        if abs(factor) < np.finfo(float).eps:
            raise InfeasibleDesign(f"1 − (λ₀+λ₁)/(2θ_Alt) = {factor}，相對效率無定義")
        return (sigma2_cr / sigma2_pr) / factor**2

    @staticmethod
    def carryover_breakeven(theta_alt: float, sigma_cr: float, sigma_pr: float) -> float:
        """使 ñ_cr < n_pr 的最大 ½(λ₀+λ₁)"""
        InferenceService._require_positive("sigma_cr", sigma_cr)
        InferenceService._require_positive("sigma_pr", sigma_pr)
        if not theta_alt > 0.0:
            raise InfeasibleDesign(f"θ_Alt 必須為正: {theta_alt}")
        if sigma_cr >= sigma_pr:
            raise InfeasibleDesign(f"σ_cr ({sigma_cr}) ≥ σ_pr ({sigma_pr})，交叉設計不具優勢")
        return theta_alt * (1.0 - sigma_cr / sigma_pr)

    @staticmethod
    def optimal_allocation(var_arm1: float, var_arm0: float) -> float:
        """最小化 a/π₁ + b/(1−π₁) 的 π₁"""
        InferenceService._require_positive("var_arm1", var_arm1)
        InferenceService._require_positive("var_arm0", var_arm0)
        root_a = math.sqrt(var_arm1)
        root_b = math.sqrt(var_arm0)
        return root_a / (root_a + root_b)

    @staticmethod
    def sensitivity_test(report: EstimateReport, design: DesignParams, spec: SensitivitySpec) -> TestOutcome:
        """以 Λ 界定殘留偏誤的敏感度檢定"""
        if report.standard_error == 0.0:
            raise DegenerateVariance(f"{report.method.value} 的標準誤為 0，無法檢定")

        z = InferenceService.critical_value(design.alpha)
        statistic = (report.estimate - design.theta_star + spec.lambda_bound) / report.standard_error
        return TestOutcome(
            statistic=statistic,
            critical_value=z,
            reject=bool(statistic > z),
            p_value=float(special.ndtr(-statistic)),
        )

    @staticmethod
    def tipping_point(report: EstimateReport, design: DesignParams) -> float:
        """敏感度檢定由拒絕轉為不拒絕的 Λ_tip"""
        if report.standard_error == 0.0:
            raise DegenerateVariance(f"{report.method.value} 的標準誤為 0，無法計算臨界點")
        z = InferenceService.critical_value(design.alpha)
        return z * report.standard_error - (report.estimate - design.theta_star)

    # 變異數成分

    @staticmethod
    def icc_variance_components(rho: float, sigma2: float) -> VarianceComponents:
        """ICC 參數化：σ²_cr = 2(1−ρ)σ²，σ²_pr = 4σ²"""
        if not 0.0 <= rho < 1.0:
            raise InvalidInput(f"ρ 必須介於 [0, 1): {rho}")
        InferenceService._require_positive("sigma2", sigma2)
        sigma2_cr = 2.0 * (1.0 - rho) * sigma2
        return VarianceComponents(
            sigma2_cr=sigma2_cr,
            sigma2_pr=4.0 * sigma2,
            sigma2_cr_adj=sigma2_cr,
            rho=rho,
            sigma2=sigma2,
        )

    @staticmethod
    def crossover_variance(var_arm1: float, var_arm0: float, pi1: float) -> float:
        """a/(4π₁) + b/(4π₀)"""
        return var_arm1 / (4.0 * pi1) + var_arm0 / (4.0 * (1.0 - pi1))

    @staticmethod
    def parallel_variance(var_y1_treated: float, var_y1_control: float, pi1: float) -> float:
        """a/π₁ + b/π₀"""
        return var_y1_treated / pi1 + var_y1_control / (1.0 - pi1)

    @staticmethod
    def alt_estimator_variance(var_arm1: float, var_arm0: float, theta1: float, theta2: float, tau: float) -> float:
        """等分配下替代估計量的漸近變異數"""
        return 0.5 * var_arm1 + 0.5 * var_arm0 + 0.25 * (theta1 - theta2 - 2.0 * tau) ** 2

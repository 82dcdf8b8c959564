import logging
import warnings

import numpy as np

from app.core.exceptions import DegenerateVarianceWarning, EmptyArm, InvalidInput, SingularCovariance
from app.models.trial import (
    AdjustmentFit,
    AdjustmentResponse,
    DeltaView,
    EstimateReport,
    EstimationMethod,
    TrialDataset,
)
from app.services.numerics import NumericsService

logger = logging.getLogger(__name__)


class EstimatorService:
    """交叉試驗與平行組估計量"""

    @staticmethod
    def _check_arms(data: TrialDataset) -> None:
        if data.n1 < 2 or data.n0 < 2:
            raise EmptyArm(f"每組至少需要 2 位受試者（n₁={data.n1}, n₀={data.n0}）")

    @staticmethod
    def _check_allocation(data: TrialDataset) -> None:
        if not 0.0 < data.pi1 < 1.0:
            raise InvalidInput(f"估計需要 0 < π₁ < 1: {data.pi1}")

    @staticmethod
    def _flag_degenerate(data: TrialDataset, variance: float, method: EstimationMethod) -> None:
        if variance == 0.0 and data.n > 2:
            logger.warning(f"Degenerate variance: method={method.value}, n={data.n}")
            warnings.warn(f"{method.value} 的變異數估計為 0，標準誤為 0", DegenerateVarianceWarning, stacklevel=3)

    @staticmethod
    def compute_deltas(data: TrialDataset) -> DeltaView:
        """計算期間差 Δ_i 及各組平均與樣本變異數"""
        EstimatorService._check_arms(data)

        delta = data.delta
        arm1 = delta[data.arm_mask(1)]
        arm0 = delta[data.arm_mask(0)]

        return DeltaView(
            delta=delta,
            mean_arm1=float(np.mean(arm1)),
            mean_arm0=float(np.mean(arm0)),
            var_arm1=float(np.var(arm1, ddof=1)),
            var_arm0=float(np.var(arm0, ddof=1)),
            n1=int(arm1.shape[0]),
            n0=int(arm0.shape[0]),
        )

    @staticmethod
    def theta_cr(data: TrialDataset) -> EstimateReport:
        """基本交叉估計量 ½(Δ̄₁ − Δ̄₀)"""
        EstimatorService._check_allocation(data)
        view = EstimatorService.compute_deltas(data)

        estimate = 0.5 * (view.mean_arm1 - view.mean_arm0)
        variance = view.var_arm1 / (4.0 * data.pi1) + view.var_arm0 / (4.0 * data.pi0)
        EstimatorService._flag_degenerate(data, variance, EstimationMethod.CR)

        return EstimateReport.from_variance(EstimationMethod.CR, estimate, variance, data.n)

    @staticmethod
    def theta_cr_alt(data: TrialDataset) -> EstimateReport:
        """替代估計量 n⁻¹Σ{A_iΔ_i − (1−A_i)Δ_i}"""
        EstimatorService._check_allocation(data)
        view = EstimatorService.compute_deltas(data)

        # 寫成 ½(w₁Δ̄₁ − w₀Δ̄₀)，n₁ = n₀ 時 w₁ = w₀ = 1
        w1 = 2.0 * view.n1 / data.n
        w0 = 2.0 * view.n0 / data.n
        estimate = 0.5 * (w1 * view.mean_arm1 - w0 * view.mean_arm0)

        signed = np.where(data.arm == 1, view.delta, -view.delta)
        variance = float(np.var(signed, ddof=1))
        EstimatorService._flag_degenerate(data, variance, EstimationMethod.CR_ALT)

        return EstimateReport.from_variance(EstimationMethod.CR_ALT, estimate, variance, data.n)

    @staticmethod
    def theta_pr(data: TrialDataset) -> EstimateReport:
        """平行組估計量：第一期結果的組間差"""
        EstimatorService._check_allocation(data)
        EstimatorService._check_arms(data)

        arm1 = data.y1[data.arm_mask(1)]
        arm0 = data.y1[data.arm_mask(0)]
        estimate = float(np.mean(arm1) - np.mean(arm0))
        variance = float(np.var(arm1, ddof=1)) / data.pi1 + float(np.var(arm0, ddof=1)) / data.pi0
        EstimatorService._flag_degenerate(data, variance, EstimationMethod.PR)

        return EstimateReport.from_variance(EstimationMethod.PR, estimate, variance, data.n)

    @staticmethod
    def fit_adjustment(data: TrialDataset, response: AdjustmentResponse) -> AdjustmentFit:
        """ANHECOVA：各組分別以最小平方擬合反應變數對共變數"""
        EstimatorService._check_arms(data)
        k = data.covariate_dim
        if k == 0:
            raise SingularCovariance("共變數調整需要至少一個共變數")

        values = data.delta if response == AdjustmentResponse.DELTA else data.y1
        x = data.covariates

        fits: dict[int, tuple[np.ndarray, float, float, np.ndarray]] = {}
        for arm in (1, 0):
            mask = data.arm_mask(arm)
            x_arm = x[mask]
            y_arm = values[mask]
            n_arm = y_arm.shape[0]
            if n_arm <= k + 1:
                raise SingularCovariance(f"第 {arm} 組樣本數 {n_arm} 不足以調整 {k} 個共變數")

            x_mean = x_arm.mean(axis=0)
            y_mean = float(y_arm.mean())
            x_centered = x_arm - x_mean
            y_centered = y_arm - y_mean

            beta = NumericsService.least_squares(x_centered, y_centered)
            residual = y_centered - x_centered @ beta
            residual_var = float(np.sum(residual**2) / (n_arm - 1))
            fits[arm] = (beta, residual_var, y_mean, x_mean)

        covariance = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))

        return AdjustmentFit(
            response=response,
            beta_arm1=fits[1][0],
            beta_arm0=fits[0][0],
            covariate_covariance=covariance,
            residual_var_arm1=fits[1][1],
            residual_var_arm0=fits[0][1],
            response_mean_arm1=fits[1][2],
            response_mean_arm0=fits[0][2],
            covariate_mean_arm1=fits[1][3],
            covariate_mean_arm0=fits[0][3],
            covariate_mean=x.mean(axis=0),
        )

    @staticmethod
    def _adjusted_contrast(fit: AdjustmentFit) -> float:
        arm1 = fit.response_mean_arm1 - float(fit.beta_arm1 @ (fit.covariate_mean_arm1 - fit.covariate_mean))
        arm0 = fit.response_mean_arm0 - float(fit.beta_arm0 @ (fit.covariate_mean_arm0 - fit.covariate_mean))
        return arm1 - arm0

    @staticmethod
    def theta_cr_adj(data: TrialDataset) -> EstimateReport:
        """共變數調整的交叉估計量"""
        EstimatorService._check_allocation(data)
        fit = EstimatorService.fit_adjustment(data, AdjustmentResponse.DELTA)

        estimate = 0.5 * EstimatorService._adjusted_contrast(fit)
        variance = (
            fit.residual_var_arm1 / (4.0 * data.pi1)
            + fit.residual_var_arm0 / (4.0 * data.pi0)
            + 0.25 * fit.interaction_variance
        )
        EstimatorService._flag_degenerate(data, variance, EstimationMethod.CR_ADJ)

        return EstimateReport.from_variance(EstimationMethod.CR_ADJ, estimate, variance, data.n)

    @staticmethod
    def theta_pr_adj(data: TrialDataset) -> EstimateReport:
        """共變數調整的平行組估計量（反應變數為 Y_i1，無 ½）"""
        EstimatorService._check_allocation(data)
        fit = EstimatorService.fit_adjustment(data, AdjustmentResponse.Y1)

        estimate = EstimatorService._adjusted_contrast(fit)
        variance = (
            fit.residual_var_arm1 / data.pi1
            + fit.residual_var_arm0 / data.pi0
            + fit.interaction_variance
        )
        EstimatorService._flag_degenerate(data, variance, EstimationMethod.PR_ADJ)

        return EstimateReport.from_variance(EstimationMethod.PR_ADJ, estimate, variance, data.n)

    @staticmethod
    def estimate(data: TrialDataset, method: EstimationMethod | str) -> EstimateReport:
        """依方法名稱計算估計值"""
        method = EstimationMethod(method)
        if method == EstimationMethod.CR:
            return EstimatorService.theta_cr(data)
        elif method == EstimationMethod.CR_ALT:
            return EstimatorService.theta_cr_alt(data)
        elif method == EstimationMethod.PR:
            return EstimatorService.theta_pr(data)
        elif method == EstimationMethod.CR_ADJ:
            return EstimatorService.theta_cr_adj(data)
        else:
            return EstimatorService.theta_pr_adj(data)

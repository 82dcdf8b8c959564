import logging

import numpy as np
from scipy import linalg, optimize, special

from app.core.exceptions import InvalidInput, NonConvergence, SingularCovariance, TargetOutOfRange
from app.core.settings import get_settings
from app.models.numerics import LogisticModel, SolveReport

logger = logging.getLogger(__name__)


def _as_matrix(values: np.ndarray, rows: int) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        return np.empty((rows, 0))
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    return x


class NumericsService:
    """數值核心：常態分布函數、最小平方、邏輯迴歸與截距校準"""

    @staticmethod
    def normal_cdf(z: float) -> float:
        """標準常態累積分布函數 Φ(z)"""
        if not np.isfinite(z):
            raise InvalidInput(f"normal_cdf 需要有限輸入: {z}")
        return float(special.ndtr(z))

    @staticmethod
    def normal_quantile(p: float) -> float:
        """標準常態分位數 Φ⁻¹(p)"""
        if not 0.0 < p < 1.0:
            raise InvalidInput(f"機率必須介於 0 與 1 之間: {p}")
        return float(special.ndtri(p))

    @staticmethod
    def least_squares(design: np.ndarray, response: np.ndarray) -> np.ndarray:
        """以 QR 分解求最小平方係數"""
        y = np.asarray(response, dtype=float).ravel()
        x = _as_matrix(design, y.shape[0])
        rows, cols = x.shape

        if rows != y.shape[0]:
            raise InvalidInput("設計矩陣列數與反應變數長度不符")
        if cols == 0:
            raise SingularCovariance("共變數維度為 0，無法進行調整")
        if rows < cols + 1:
            raise SingularCovariance(f"樣本數 {rows} 不足以估計 {cols} 個係數")

        q, r = linalg.qr(x, mode="economic")

        # Gram 矩陣條件數 = cond(R)²
        condition = np.linalg.cond(r) ** 2
        if not np.isfinite(condition) or condition > get_settings().gram_condition_cap:
            raise SingularCovariance(f"Gram 矩陣接近奇異（條件數 {condition:.3e}）")

        return linalg.solve_triangular(r, q.T @ y)

    @staticmethod
    def logistic_fit(covariates: np.ndarray, outcomes: np.ndarray) -> LogisticModel:
        """以 IRLS 擬合邏輯迴歸"""
        settings = get_settings()
        y = np.asarray(outcomes, dtype=float).ravel()
        x = _as_matrix(covariates, y.shape[0])
        n = y.shape[0]

        if x.shape[0] != n:
            raise InvalidInput("共變數列數與結果長度不符")
        if n == 0 or not np.isin(y, (0.0, 1.0)).all():
            raise InvalidInput("邏輯迴歸結果必須為 0 或 1")
        if y.min() == y.max():
            raise InvalidInput("結果全部相同，無法擬合邏輯迴歸")

        design = np.column_stack([np.ones(n), x])
        coef = np.zeros(design.shape[1])
        coef[0] = special.logit(y.mean())

        eps = settings.separation_eps
        for iteration in range(settings.irls_max_iter + 1):
            prob = special.expit(design @ coef)
            gradient = design.T @ (y - prob) / n
            gradient_norm = float(np.linalg.norm(gradient))

            weights = prob * (1.0 - prob)
            information = design.T @ (design * weights[:, None]) / n
            try:
                step = linalg.solve(information, gradient, assume_a="pos")
            except linalg.LinAlgError as e:
                raise NonConvergence(f"IRLS 資訊矩陣奇異: {e}") from e

            # 分離時梯度趨近 0 但 Newton 步長不會縮小
            if gradient_norm <= settings.irls_gradient_tol and np.linalg.norm(step) <= settings.irls_step_tol:
                logger.debug(f"IRLS converged: iterations={iteration}, gradient_norm={gradient_norm:.3e}")
                return LogisticModel(
                    intercept=float(coef[0]),
                    slopes=[float(v) for v in coef[1:]],
                    iterations=iteration,
                    gradient_norm=gradient_norm,
                )

            if np.any(prob < eps) or np.any(prob > 1.0 - eps):
                raise NonConvergence(f"邏輯迴歸出現分離（第 {iteration} 次迭代）")

            coef = coef + step

        raise NonConvergence(f"IRLS 未在 {settings.irls_max_iter} 次迭代內收斂")

    @staticmethod
    def calibrate_intercept_report(
        slopes: np.ndarray,
        covariates: np.ndarray,
        target_mean: float,
        bracket: tuple[float, float] | None = None,
    ) -> SolveReport:
        """二分法求截距 α，使 mean expit(α + slopesᵀx) 等於目標值"""
        settings = get_settings()
        if not 0.0 < target_mean < 1.0:
            raise TargetOutOfRange(f"校準目標必須介於 0 與 1 之間: {target_mean}")

        beta = np.asarray(slopes, dtype=float).ravel()
        x = _as_matrix(covariates, len(covariates))
        if x.shape[1] != beta.shape[0]:
            raise InvalidInput(f"斜率維度 {beta.shape[0]} 與共變數欄數 {x.shape[1]} 不符")
        linear = x @ beta if beta.size else np.zeros(x.shape[0])

        def gap(alpha: float) -> float:
            return float(np.mean(special.expit(alpha + linear))) - target_mean

        lower, upper = bracket if bracket is not None else (-settings.calibration_bracket, settings.calibration_bracket)
        if gap(lower) > 0.0 or gap(upper) < 0.0:
            raise TargetOutOfRange(f"校準目標 {target_mean} 不在區間 [{lower}, {upper}] 可達範圍內")

        root, result = optimize.bisect(
            gap,
            lower,
            upper,
            xtol=1e-14,
            maxiter=settings.calibration_max_iter,
            full_output=True,
            disp=False,
        )
        residual = abs(gap(root))
        converged = bool(result.converged) and residual <= settings.calibration_tol
        if not converged:
            raise NonConvergence(f"截距校準未收斂（殘差 {residual:.3e}）")

        logger.debug(f"Intercept calibrated: alpha={root:.10f}, target={target_mean}, iterations={result.iterations}")
        return SolveReport(value=float(root), iterations=result.iterations, converged=converged, residual=residual)

    @staticmethod
    def calibrate_intercept(
        slopes: np.ndarray,
        covariates: np.ndarray,
        target_mean: float,
        bracket: tuple[float, float] | None = None,
    ) -> float:
        """calibrate_intercept_report 的數值版本"""
        return NumericsService.calibrate_intercept_report(slopes, covariates, target_mean, bracket).value

import logging

import numpy as np
from scipy import special

from app.core.exceptions import (
    ConfigError,
    InfeasibleCorrelation,
    InvalidInput,
    NonConvergence,
    TargetOutOfRange,
)
from app.core.settings import get_settings
from app.models.design import VarianceComponents
from app.models.numerics import LogisticModel
from app.models.simulation import (
    BinaryCorrelationSpec,
    CalibrationRecord,
    GaussianDgpParams,
    PotentialCohort,
    ResampleDgpConfig,
)
from app.models.trial import TrialDataset
from app.services.numerics import NumericsService

logger = logging.getLogger(__name__)

SeedLike = np.random.Generator | int | list[int] | None

_UNIFORM_BITS = 53


def as_generator(seed: SeedLike) -> np.random.Generator:
    """種子或既有 Generator 轉為 Generator"""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def open_uniform(rng: np.random.Generator, size: int | tuple[int, ...]) -> np.ndarray:
    """(0, 1) 開區間上的均勻亂數"""
    scale = float(2**_UNIFORM_BITS)
    return (rng.integers(0, 2**_UNIFORM_BITS, size=size).astype(float) + 0.5) / scale


def draw_bernoulli(rng: np.random.Generator, prob: np.ndarray) -> np.ndarray:
    """逐元素 Bernoulli(prob)，回傳 0/1 浮點陣列"""
    prob = np.asarray(prob, dtype=float)
    return (rng.random(prob.shape) < prob).astype(float)


class SimulationService:
    """資料生成過程與重抽樣世代"""

    # 常態資料生成過程

    @staticmethod
    def gaussian_dgp(params: GaussianDgpParams, seed: SeedLike = None) -> tuple[PotentialCohort, TrialDataset]:
        """常態 DGP：產生潛在結果並依 Bernoulli(π₁) 指派序列"""
        rng = as_generator(seed)
        n = params.n

        # 反函數法：X₁..₃、ε₁..₄
        normals = special.ndtri(open_uniform(rng, (n, 7)))
        x = normals[:, :3]
        eps = normals[:, 3:]

        period1 = x[:, 0] + x[:, 1] + x[:, 2]
        period2 = x[:, 0] + x[:, 1] + params.b * x[:, 2]

        y1_0 = period1 + eps[:, 0]
        y1_1 = params.theta1 + period1 + eps[:, 1]
        y2_10 = params.tau_tilde + params.lambda0 + period2 + eps[:, 2]
        y2_01 = params.tau_tilde + params.theta2_tilde - params.lambda1 + period2 + eps[:, 3]
        # 未觀察到的 Y₂^(00)、Y₂^(11) 與可觀察者共用誤差
        y2_00 = y2_10 - params.lambda0
        y2_11 = y2_01 + params.lambda1

        arm = (rng.random(n) < params.pi1).astype(int)

        cohort = PotentialCohort(
            covariates=x,
            y1_0=y1_0,
            y1_1=y1_1,
            y2_00=y2_00,
            y2_10=y2_10,
            y2_01=y2_01,
            y2_11=y2_11,
            covariate_names=["x1", "x2", "x3"],
        )
        trial = TrialDataset(
            arm=arm,
            covariates=x,
            y1=np.where(arm == 1, y1_1, y1_0),
            y2=np.where(arm == 1, y2_10, y2_01),
            pi1=params.pi1,
            covariate_names=["x1", "x2", "x3"],
        )
        return cohort, trial

    @staticmethod
    def gaussian_dgp_truths(params: GaussianDgpParams) -> VarianceComponents:
        """常態 DGP 的理論漸近變異數"""
        pi1 = params.pi1
        if not 0.0 < pi1 < 1.0:
            raise InvalidInput(f"理論變異數需要 0 < π₁ < 1: {pi1}")
        pi0 = 1.0 - pi1
        crossover_weight = 1.0 / (4.0 * pi1) + 1.0 / (4.0 * pi0)
        parallel_weight = 1.0 / pi1 + 1.0 / pi0

        return VarianceComponents(
            sigma2_cr=((1.0 - params.b) ** 2 + 2.0) * crossover_weight,
            sigma2_pr=4.0 * parallel_weight,
            sigma2_cr_adj=2.0 * crossover_weight,
            sigma2_pr_adj=1.0 * parallel_weight,
        )

    # 相關二元變數

    @staticmethod
    def correlation_spec(p1: float, p2: float, rho: float) -> BinaryCorrelationSpec:
        """建立並檢查可行的相關二元變數設定"""
        if not (0.0 < p1 < 1.0 and 0.0 < p2 < 1.0):
            raise TargetOutOfRange(f"邊際機率必須介於 0 與 1 之間: p1={p1}, p2={p2}")
        if not -1.0 <= rho <= 1.0:
            raise InfeasibleCorrelation(f"相關係數必須介於 [−1, 1]: {rho}")
        spec = BinaryCorrelationSpec(p1=p1, p2=p2, rho=rho)
        SimulationService.conditional_probabilities(spec)
        return spec

    @staticmethod
    def conditional_probabilities(spec: BinaryCorrelationSpec) -> tuple[float, float]:
        """(P(Z₂=1 | Z₁=1), P(Z₂=1 | Z₁=0))"""
        lower, upper = spec.rho_bounds
        if not spec.feasible:
            raise InfeasibleCorrelation(
                f"ρ={spec.rho} 不在可行區間 ({lower:.6f}, {upper:.6f})，p1={spec.p1}, p2={spec.p2}"
            )
        given_one = spec.s / spec.p1
        given_zero = (spec.p2 - spec.s) / (1.0 - spec.p1)
        if not (0.0 < given_one < 1.0 and 0.0 < given_zero < 1.0):
            raise InfeasibleCorrelation(f"條件機率超出 (0, 1): {given_one}, {given_zero}")
        return given_one, given_zero

    @staticmethod
    def joint_law(spec: BinaryCorrelationSpec) -> np.ndarray:
        """聯合機率表，索引為 [z1, z2]"""
        SimulationService.conditional_probabilities(spec)
        s = spec.s
        return np.array(
            [
                [1.0 - spec.p1 - spec.p2 + s, spec.p2 - s],
                [spec.p1 - s, s],
            ]
        )

    @staticmethod
    def correlated_bernoulli(spec: BinaryCorrelationSpec, z1: np.ndarray, seed: SeedLike = None) -> np.ndarray:
        """給定 Z₁ 產生 Z₂，使 E[Z₂]=p₂ 且 Corr(Z₁, Z₂)=ρ"""
        given_one, given_zero = SimulationService.conditional_probabilities(spec)
        z1 = np.asarray(z1, dtype=float).ravel()
        if not np.isin(z1, (0.0, 1.0)).all():
            raise InvalidInput("z1 只能為 0 或 1")
        rng = as_generator(seed)
        return draw_bernoulli(rng, np.where(z1 == 1.0, given_one, given_zero))

    # 重抽樣世代

    @staticmethod
    def _calibrate(
        name: str,
        model: LogisticModel,
        covariates: np.ndarray,
        reference_mean: float,
        offset: float,
    ) -> CalibrationRecord:
        target = reference_mean + offset
        if not 0.0 < target < 1.0:
            raise TargetOutOfRange(f"{name} 的目標平均 {reference_mean:.6f} + {offset} = {target:.6f} 不在 (0, 1)")
        intercept = NumericsService.calibrate_intercept(model.slope_vector, covariates, target)
        achieved = float(np.mean(model.predict_proba(covariates, intercept))) - reference_mean
        return CalibrationRecord(
            name=name,
            intercept=intercept,
            target_offset=offset,
            achieved_offset=achieved,
            reference_mean=reference_mean,
        )

    @staticmethod
    def build_resampled_cohort(
        config: ResampleDgpConfig,
        seed: SeedLike = None,
        baseline_model: LogisticModel | None = None,
    ) -> PotentialCohort:
        """以基線世代建立六個二元潛在結果

        baseline_model 為基線結果的邏輯迴歸；未提供時即時擬合。
        """
        if config.cohort is None:
            raise ConfigError("重抽樣資料生成需要基線世代")
        settings = get_settings()
        rng = as_generator(config.seed if seed is None else seed)

        x = config.cohort.covariates
        y1_0 = config.cohort.baseline
        p1 = config.cohort.baseline_mean

        # 基線結果模型 μ̂₁
        model1 = baseline_model if baseline_model is not None else NumericsService.logistic_fit(x, y1_0)
        reference1 = float(np.mean(model1.predict_proba(x)))

        # Y₁^(1)：平均機率比 μ̂₁ 高 θ
        alpha_1 = SimulationService._calibrate("alpha_1", model1, x, reference1, config.theta)
        y1_1 = draw_bernoulli(rng, model1.predict_proba(x, alpha_1.intercept))

        # Y₂^(00)：與 Y₁^(0) 相關係數 ρ，平均 p₁ + τ̃
        spec = SimulationService.correlation_spec(p1, p1 + config.tau_tilde, config.rho)
        retries = 0
        while True:
            y2_00 = SimulationService.correlated_bernoulli(spec, y1_0, rng)
            try:
                model2 = NumericsService.logistic_fit(x, y2_00)
                break
            except (NonConvergence, InvalidInput) as e:
                if retries >= settings.cohort_refit_retries:
                    raise NonConvergence(f"Y₂^(00) 模型重抽 {retries} 次後仍無法擬合: {e}") from e
                retries += 1
                logger.warning(f"Redrawing Y2(00) after failed fit: attempt={retries}, reason={e}")

        reference2 = float(np.mean(model2.predict_proba(x)))

        # 第二期其餘潛在結果：相對 μ̂₂ 的平均差 λ、θ−λ、θ
        alpha_10 = SimulationService._calibrate("alpha_10", model2, x, reference2, config.lambda_)
        alpha_01 = SimulationService._calibrate("alpha_01", model2, x, reference2, config.theta - config.lambda_)
        alpha_11 = SimulationService._calibrate("alpha_11", model2, x, reference2, config.theta)
        y2_10 = draw_bernoulli(rng, model2.predict_proba(x, alpha_10.intercept))
        y2_01 = draw_bernoulli(rng, model2.predict_proba(x, alpha_01.intercept))
        y2_11 = draw_bernoulli(rng, model2.predict_proba(x, alpha_11.intercept))

        return PotentialCohort(
            covariates=x,
            y1_0=y1_0,
            y1_1=y1_1,
            y2_00=y2_00,
            y2_10=y2_10,
            y2_01=y2_01,
            y2_11=y2_11,
            covariate_names=config.cohort.covariate_names,
            binary=True,
            calibration=[alpha_1, alpha_10, alpha_01, alpha_11],
            refit_retries=retries,
        )

    @staticmethod
    def draw_trial(cohort: PotentialCohort, n: int, pi1: float, seed: SeedLike = None) -> TrialDataset:
        """自世代有放回抽樣 n 人並指派序列"""
        if n < 1:
            raise InvalidInput(f"樣本數必須為正: {n}")
        if not 0.0 <= pi1 <= 1.0:
            raise InvalidInput(f"π₁ 必須介於 [0, 1]: {pi1}")
        rng = as_generator(seed)

        index = rng.integers(0, cohort.size, size=n)
        arm = (rng.random(n) < pi1).astype(int)
        treated = arm == 1

        return TrialDataset(
            arm=arm,
            covariates=cohort.covariates[index],
            y1=np.where(treated, cohort.y1_1[index], cohort.y1_0[index]),
            y2=np.where(treated, cohort.y2_10[index], cohort.y2_01[index]),
            pi1=pi1,
            covariate_names=cohort.covariate_names,
        )

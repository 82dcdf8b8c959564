import logging

import numpy as np
from scipy import special

from app.core.exceptions import InvalidInput
from app.models.numerics import LogisticModel
from app.models.simulation import CohortTable
from app.services.numerics import NumericsService
from app.services.simulation import SeedLike, as_generator, open_uniform

logger = logging.getLogger(__name__)

# 合成世代的基線特徵
SYNTHETIC_SIZE = 336
AGE_MEAN = 26.5
AGE_SD = 5.89
AGE_MIN = 18
# 婚姻狀態：已婚、同居、有伴侶未同居；其餘為單身（參考類別）
MARITAL_FREQUENCIES = (0.116, 0.089, 0.509)
GONORRHEA_RATE = 0.06
CHLAMYDIA_RATE = 0.16
BASELINE_RATE = 0.185
MAX_SYNTHETIC_DRAWS = 100

# 產生基線結果時使用的權重模型
_WEIGHT_INTERCEPT = -1.5
_WEIGHT_SLOPES = {
    "age": 0.05,
    "married": 0.3,
    "living_with_partner": 0.2,
    "partner_not_living": 0.1,
    "gonorrhea": -0.2,
    "chlamydia": -0.3,
}

COVARIATE_NAMES = list(_WEIGHT_SLOPES)


class CohortService:
    """重抽樣模擬用的基線世代"""

    @staticmethod
    def _fittable(covariates: np.ndarray, baseline: np.ndarray) -> bool:
        """每個二元共變數兩組皆需同時含有 0 與 1 的基線結果"""
        for column in covariates.T:
            if not np.isin(column, (0.0, 1.0)).all():
                continue
            for level in (0.0, 1.0):
                group = baseline[column == level]
                if group.size == 0 or group.min() == group.max():
                    return False
        return True

    @staticmethod
    def truncated_age(rng: np.random.Generator, size: int) -> np.ndarray:
        """四捨五入的 N(26.5, 5.89²) 年齡，低於 18 歲者重抽"""
        age = np.round(AGE_MEAN + AGE_SD * special.ndtri(open_uniform(rng, size)))
        below = age < AGE_MIN
        while below.any():
            age[below] = np.round(AGE_MEAN + AGE_SD * special.ndtri(open_uniform(rng, int(below.sum()))))
            below = age < AGE_MIN
        return age

    @staticmethod
    def generate_synthetic(seed: SeedLike = None, size: int = SYNTHETIC_SIZE) -> CohortTable:
        """產生合成基線世代

        年齡為四捨五入的 N(26.5, 5.89²) 並截斷於 18 歲；基線結果恰有
        round(0.185·size) 個 1，依邏輯權重不放回抽出。若某個二元共變數
        會造成邏輯迴歸分離，則以同一亂數串流整組重抽。
        """
        if size < 10:
            raise InvalidInput(f"合成世代至少需要 10 人: {size}")
        rng = as_generator(seed)
        slopes = np.array(list(_WEIGHT_SLOPES.values()))
        reference = 1.0 - sum(MARITAL_FREQUENCIES)
        positives = int(round(BASELINE_RATE * size))

        for attempt in range(MAX_SYNTHETIC_DRAWS):
            age = CohortService.truncated_age(rng, size)

            marital = rng.choice(4, size=size, p=[*MARITAL_FREQUENCIES, reference])
            married = (marital == 0).astype(float)
            living = (marital == 1).astype(float)
            partner = (marital == 2).astype(float)

            gonorrhea = (rng.random(size) < GONORRHEA_RATE).astype(float)
            chlamydia = (rng.random(size) < CHLAMYDIA_RATE).astype(float)

            covariates = np.column_stack([age, married, living, partner, gonorrhea, chlamydia])

            # 基線結果
            centered = covariates.copy()
            centered[:, 0] -= AGE_MEAN
            weights = special.expit(_WEIGHT_INTERCEPT + centered @ slopes)
            chosen = rng.choice(size, size=positives, replace=False, p=weights / weights.sum())
            baseline = np.zeros(size)
            baseline[chosen] = 1.0

            if CohortService._fittable(covariates, baseline):
                logger.debug(
                    f"Synthetic cohort generated: size={size}, attempts={attempt + 1}, "
                    f"baseline_mean={baseline.mean():.4f}"
                )
                return CohortTable(covariates=covariates, baseline=baseline, covariate_names=COVARIATE_NAMES)

        raise InvalidInput(f"{MAX_SYNTHETIC_DRAWS} 次重抽後仍無法產生可擬合的合成世代（size={size}）")

    @staticmethod
    def fit_baseline_model(cohort: CohortTable) -> LogisticModel:
        """基線結果的邏輯迴歸 μ̂₁"""
        return NumericsService.logistic_fit(cohort.covariates, cohort.baseline)

    @staticmethod
    def describe(cohort: CohortTable) -> dict[str, dict[str, float]]:
        """基線特徵摘要：二元共變數為人數與比例，其餘為平均與標準差"""
        summary: dict[str, dict[str, float]] = {
            "baseline_outcome": {
                "count": float(cohort.baseline.sum()),
                "proportion": cohort.baseline_mean,
            }
        }
        names = cohort.covariate_names or [f"x{j + 1}" for j in range(cohort.covariates.shape[1])]
        for name, column in zip(names, cohort.covariates.T):
            if np.isin(column, (0.0, 1.0)).all():
                summary[name] = {"count": float(column.sum()), "proportion": float(column.mean())}
            else:
                summary[name] = {"mean": float(column.mean()), "sd": float(column.std(ddof=1))}
        return summary

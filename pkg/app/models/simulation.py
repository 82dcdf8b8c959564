from enum import Enum
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator, model_validator

from app.models.design import DesignParams


class StudyTest(str, Enum):
    """模擬研究中的檢定"""

    PR = "pr"
    PR_ADJ = "pr_adj"
    CR = "cr"
    CR_ADJ = "cr_adj"


class GaussianDgpParams(BaseModel):
    """常態資料生成過程參數"""

    kind: Literal["gaussian"] = "gaussian"
    theta1: float = Field(default=0.0, description="θ₁")
    theta2_tilde: float = Field(default=0.0, description="θ̃₂")
    tau_tilde: float = Field(default=0.0, description="τ̃")
    lambda0: float = Field(default=0.0, description="λ₀")
    lambda1: float = Field(default=0.0, description="λ₁")
    b: float = Field(default=0.0, description="第二期 X₃ 的係數")
    n: int = Field(ge=4, description="樣本數")
    pi1: float = Field(default=0.5, ge=0.0, le=1.0, description="分配機率 π₁")

    @property
    def estimand(self) -> float:
        """½(θ₁ + θ̃₂ − λ₀ − λ₁)"""
        return 0.5 * (self.theta1 + self.theta2_tilde - self.lambda0 - self.lambda1)


class CalibrationRecord(BaseModel):
    """截距校準紀錄"""

    name: str = Field(description="截距名稱，例如 alpha_10")
    intercept: float = Field(description="校準後截距")
    target_offset: float = Field(description="平均機率相對於參考模型的目標差")
    achieved_offset: float = Field(description="以校準截距正向計算的實際差")
    reference_mean: float = Field(description="參考模型的平均預測機率")

    @property
    def error(self) -> float:
        return abs(self.achieved_offset - self.target_offset)


class PotentialCohort(BaseModel):
    """每位受試者的共變數與六個潛在結果"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    covariates: np.ndarray = Field(description="共變數矩陣 (N, p)")
    y1_0: np.ndarray
    y1_1: np.ndarray
    y2_00: np.ndarray
    y2_10: np.ndarray
    y2_01: np.ndarray
    y2_11: np.ndarray
    covariate_names: list[str] = Field(default_factory=list)
    binary: bool = Field(default=False, description="潛在結果是否為二元")
    calibration: list[CalibrationRecord] = Field(default_factory=list, description="校準紀錄")
    refit_retries: int = Field(default=0, description="第三步重抽次數")

    @field_validator("y1_0", "y1_1", "y2_00", "y2_10", "y2_01", "y2_11", mode="before")
    @classmethod
    def _coerce_outcome(cls, value: Any) -> np.ndarray:
        return np.asarray(value, dtype=float).ravel()

    @field_validator("covariates", mode="before")
    @classmethod
    def _coerce_covariates(cls, value: Any) -> np.ndarray:
        x = np.asarray(value, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        return x

    @model_validator(mode="after")
    def _check_cohort(self) -> "PotentialCohort":
        size = self.y1_0.shape[0]
        if size == 0:
            raise ValueError("世代不可為空")
        outcomes = self.outcome_matrix
        if outcomes.shape[0] != size or self.covariates.shape[0] != size:
            raise ValueError("所有潛在結果與共變數列數必須相同")
        if not (np.isfinite(outcomes).all() and np.isfinite(self.covariates).all()):
            raise ValueError("潛在結果與共變數必須為有限值")
        if self.binary and not np.isin(outcomes, (0.0, 1.0)).all():
            raise ValueError("二元世代的潛在結果只能為 0 或 1")
        return self

    @property
    def size(self) -> int:
        return int(self.y1_0.shape[0])

    @property
    def outcome_matrix(self) -> np.ndarray:
        """欄位順序：y1_0, y1_1, y2_00, y2_10, y2_01, y2_11"""
        return np.column_stack([self.y1_0, self.y1_1, self.y2_00, self.y2_10, self.y2_01, self.y2_11])


class BinaryCorrelationSpec(BaseModel):
    """相關二元變數的邊際與相關係數"""

    p1: float = Field(gt=0.0, lt=1.0, description="P(Z₁=1)")
    p2: float = Field(gt=0.0, lt=1.0, description="P(Z₂=1)")
    rho: float = Field(ge=-1.0, le=1.0, description="Corr(Z₁, Z₂)")

    @computed_field  # type: ignore[prop-decorator]
    @property
    def s(self) -> float:
        """聯合機率 P(Z₁=1, Z₂=1)"""
        return self.rho * float(np.sqrt(self.p1 * (1 - self.p1) * self.p2 * (1 - self.p2))) + self.p1 * self.p2

    @property
    def rho_bounds(self) -> tuple[float, float]:
        """可行的相關係數開區間"""
        p1, p2 = self.p1, self.p2
        lower = max(-np.sqrt(p1 * p2 / ((1 - p1) * (1 - p2))), -np.sqrt((1 - p1) * (1 - p2) / (p1 * p2)))
        upper = min(np.sqrt(p1 * (1 - p2) / (p2 * (1 - p1))), np.sqrt(p2 * (1 - p1) / (p1 * (1 - p2))))
        return float(lower), float(upper)

    @property
    def feasible(self) -> bool:
        lower, upper = self.rho_bounds
        return lower < self.rho < upper


class CohortTable(BaseModel):
    """重抽樣用的基線世代（共變數與二元基線結果）"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    covariates: np.ndarray = Field(description="共變數矩陣 (N, p)")
    baseline: np.ndarray = Field(description="二元基線結果 y0")
    covariate_names: list[str] = Field(default_factory=list)
    imputed_rows: int = Field(default=0, description="以負類別補值的列數")

    @field_validator("baseline", mode="before")
    @classmethod
    def _coerce_baseline(cls, value: Any) -> np.ndarray:
        return np.asarray(value, dtype=float).ravel()

    @field_validator("covariates", mode="before")
    @classmethod
    def _coerce_covariates(cls, value: Any) -> np.ndarray:
        x = np.asarray(value, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        return x

    @model_validator(mode="after")
    def _check_table(self) -> "CohortTable":
        if self.baseline.shape[0] == 0:
            raise ValueError("世代不可為空")
        if self.covariates.shape[0] != self.baseline.shape[0]:
            raise ValueError("共變數列數必須等於世代人數")
        if not np.isin(self.baseline, (0.0, 1.0)).all():
            raise ValueError("基線結果只能為 0 或 1")
        if not np.isfinite(self.covariates).all():
            raise ValueError("共變數必須為有限值")
        return self

    @property
    def size(self) -> int:
        return int(self.baseline.shape[0])

    @property
    def baseline_mean(self) -> float:
        return float(self.baseline.mean())


class ResampleDgpConfig(BaseModel):
    """重抽樣資料生成過程參數"""

    model_config = ConfigDict(arbitrary_types_allowed=True, populate_by_name=True)

    kind: Literal["resample"] = "resample"
    theta: float = Field(default=0.0, description="治療效果 θ（機率尺度）")
    lambda_: float = Field(default=0.0, alias="lambda", description="殘留效應 λ（機率尺度）")
    tau_tilde: float = Field(default=0.0, description="時間趨勢 τ̃")
    rho: float = Field(default=0.0, description="Corr(Y₂^(00), Y₁^(0)) 目標值")
    n: int = Field(ge=4, description="每次試驗樣本數")
    pi1: float = Field(default=0.5, ge=0.0, le=1.0, description="分配機率 π₁")
    seed: int | None = Field(default=None, ge=0, lt=2**64, description="單獨建立世代時使用的種子")
    cohort: CohortTable | None = Field(default=None, exclude=True, description="基線世代")
    cohort_source: str = Field(default="synthetic", description="世代來源（synthetic:<seed> 或 CSV 路徑）")


class PowerStudyConfig(BaseModel):
    """蒙地卡羅檢定力研究設定"""

    dgp: GaussianDgpParams | ResampleDgpConfig = Field(discriminator="kind")
    replications: int = Field(ge=1, description="重複次數")
    seed: int = Field(ge=0, lt=2**64, description="主種子")
    tests: list[StudyTest] = Field(default_factory=lambda: list(StudyTest), min_length=1)
    design: DesignParams

    @model_validator(mode="after")
    def _check_design(self) -> "PowerStudyConfig":
        if self.dgp.n != self.design.n:
            raise ValueError("dgp.n 必須等於 design.n")
        if self.dgp.pi1 != self.design.pi1:
            raise ValueError("dgp.pi1 必須等於 design.pi1")
        return self


class StudyTally(BaseModel):
    """單一檢定的模擬統計"""

    test: StudyTest
    rejections: int = Field(ge=0)
    replications: int = Field(ge=1)
    power: float = Field(ge=0.0, le=1.0, description="經驗檢定力")
    mc_se: float = Field(ge=0.0, description="經驗檢定力的蒙地卡羅標準誤")
    mean_estimate: float = Field(description="估計值平均")
    sd_estimate: float = Field(description="估計值標準差")
    mean_variance: float = Field(description="漸近變異數估計平均")

    @model_validator(mode="after")
    def _check_power(self) -> "StudyTally":
        if self.rejections > self.replications:
            raise ValueError("拒絕次數不可超過重複次數")
        if self.power != self.rejections / self.replications:
            raise ValueError("power 必須等於 rejections / replications")
        return self

    @property
    def estimate_mc_se(self) -> float:
        """估計值平均的蒙地卡羅標準誤"""
        return self.sd_estimate / float(np.sqrt(self.replications))


class PowerStudyResult(BaseModel):
    """蒙地卡羅檢定力研究結果"""

    tallies: list[StudyTally]
    replications: int
    seed: int
    empty_arm_redraws: int = Field(default=0, description="因空組重抽的次數")
    cohort_refit_retries: int = Field(default=0, description="重抽樣世代第三步重抽總次數")

    def tally(self, test: StudyTest | str) -> StudyTally:
        key = StudyTest(test)
        for item in self.tallies:
            if item.test == key:
                return item
        raise KeyError(f"未執行的檢定: {key.value}")

    def power(self, test: StudyTest | str) -> float:
        return self.tally(test).power


class CohortCsvSchema(BaseModel):
    """世代 CSV 欄位規格"""

    outcome_column: str = "y0"
    covariate_prefix: str = "x_"

    def covariate_columns(self, header: list[str]) -> list[str]:
        return [c for c in header if c.startswith(self.covariate_prefix)]

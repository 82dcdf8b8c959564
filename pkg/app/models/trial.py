from enum import Enum
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class EstimationMethod(str, Enum):
    """估計方法"""

    CR = "cr"
    CR_ALT = "cr_alt"
    PR = "pr"
    CR_ADJ = "cr_adj"
    PR_ADJ = "pr_adj"


class AdjustmentResponse(str, Enum):
    """共變數調整的反應變數"""

    DELTA = "delta"
    Y1 = "y1"


class TrialDataset(BaseModel):
    """交叉試驗觀察資料（每位受試者一筆）"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    arm: np.ndarray = Field(description="序列指標 A_i（1 = 先接受治療 1）")
    covariates: np.ndarray = Field(description="基線共變數矩陣 (n, p)，p 可為 0")
    y1: np.ndarray = Field(description="第一期結果 Y_i1")
    y2: np.ndarray = Field(description="第二期結果 Y_i2")
    pi1: float = Field(ge=0.0, le=1.0, description="設計分配機率 π₁")
    covariate_names: list[str] = Field(default_factory=list, description="共變數名稱")
    ids: list[str] | None = Field(default=None, description="受試者代碼")

    @field_validator("arm", mode="before")
    @classmethod
    def _coerce_arm(cls, value: Any) -> np.ndarray:
        return np.asarray(value).astype(int).ravel()

    @field_validator("y1", "y2", mode="before")
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

    @model_validator(mode="before")
    @classmethod
    def _default_covariates(cls, data: Any) -> Any:
        if isinstance(data, dict):
            covariates = data.get("covariates")
            if covariates is None or np.asarray(covariates).size == 0:
                n = len(np.asarray(data.get("y1", [])).ravel())
                data = {**data, "covariates": np.empty((n, 0))}
        return data

    @model_validator(mode="after")
    def _check_shapes(self) -> "TrialDataset":
        n = self.arm.shape[0]
        if self.y1.shape[0] != n or self.y2.shape[0] != n:
            raise ValueError("arm、y1、y2 長度必須相同")
        if self.covariates.ndim != 2 or self.covariates.shape[0] != n:
            raise ValueError("共變數列數必須等於受試者人數")
        if not np.isin(self.arm, (0, 1)).all():
            raise ValueError("arm 只能為 0 或 1")
        if not (np.isfinite(self.y1).all() and np.isfinite(self.y2).all()):
            raise ValueError("結果變數必須為有限值")
        if not np.isfinite(self.covariates).all():
            raise ValueError("共變數必須為有限值")
        if self.covariate_names and len(self.covariate_names) != self.covariate_dim:
            raise ValueError("共變數名稱數量與欄數不符")
        return self

    @property
    def n(self) -> int:
        return int(self.arm.shape[0])

    @property
    def n1(self) -> int:
        return int(self.arm.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @property
    def pi0(self) -> float:
        return 1.0 - self.pi1

    @property
    def covariate_dim(self) -> int:
        return int(self.covariates.shape[1])

    @property
    def delta(self) -> np.ndarray:
        """Δ_i = Y_i1 − Y_i2"""
        return self.y1 - self.y2

    def arm_mask(self, arm: int) -> np.ndarray:
        return self.arm == arm


class DeltaView(BaseModel):
    """期間差 Δ_i 與各組摘要"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    delta: np.ndarray = Field(description="每位受試者的 Δ_i")
    mean_arm1: float = Field(description="Δ̄₁")
    mean_arm0: float = Field(description="Δ̄₀")
    var_arm1: float = Field(description="S²_Δ1（n₁−1 除數）")
    var_arm0: float = Field(description="S²_Δ0（n₀−1 除數）")
    n1: int
    n0: int


class EstimateReport(BaseModel):
    """點估計與變異數估計"""

    method: EstimationMethod = Field(description="估計方法")
    estimate: float = Field(description="點估計")
    asymptotic_variance: float = Field(ge=0.0, description="σ̂²，使 SE = sqrt(σ̂²/n)")
    standard_error: float = Field(ge=0.0, description="標準誤")
    n: int = Field(ge=1, description="樣本數")

    @model_validator(mode="after")
    def _check_standard_error(self) -> "EstimateReport":
        expected = float(np.sqrt(self.asymptotic_variance / self.n))
        if not np.isclose(self.standard_error, expected, rtol=1e-12, atol=0.0):
            raise ValueError("standard_error 必須等於 sqrt(asymptotic_variance / n)")
        return self

    @classmethod
    def from_variance(cls, method: EstimationMethod, estimate: float, variance: float, n: int) -> "EstimateReport":
        variance = max(float(variance), 0.0)
        return cls(
            method=method,
            estimate=float(estimate),
            asymptotic_variance=variance,
            standard_error=float(np.sqrt(variance / n)),
            n=n,
        )

    @property
    def sigma(self) -> float:
        """σ̂"""
        return float(np.sqrt(self.asymptotic_variance))


class AdjustmentFit(BaseModel):
    """ANHECOVA 各組最小平方擬合"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    response: AdjustmentResponse
    beta_arm1: np.ndarray = Field(description="β̂₁")
    beta_arm0: np.ndarray = Field(description="β̂₀")
    covariate_covariance: np.ndarray = Field(description="Σ̂_X（全樣本）")
    residual_var_arm1: float = Field(description="S²_1,adj")
    residual_var_arm0: float = Field(description="S²_0,adj")
    response_mean_arm1: float
    response_mean_arm0: float
    covariate_mean_arm1: np.ndarray
    covariate_mean_arm0: np.ndarray
    covariate_mean: np.ndarray = Field(description="X̄（全樣本）")

    @property
    def beta_difference(self) -> np.ndarray:
        return self.beta_arm1 - self.beta_arm0

    @property
    def interaction_variance(self) -> float:
        """(β̂₁−β̂₀)ᵀ Σ̂_X (β̂₁−β̂₀)"""
        d = self.beta_difference
        return float(d @ self.covariate_covariance @ d)


class TrialCsvSchema(BaseModel):
    """試驗資料 CSV 欄位規格"""

    arm_column: str = "arm"
    outcome_columns: tuple[str, str] = ("y1", "y2")
    id_column: str = "id"
    covariate_prefix: str = "x_"
    min_rows: int = 4

    @property
    def required_columns(self) -> list[str]:
        return [self.arm_column, *self.outcome_columns]

    def covariate_columns(self, header: list[str]) -> list[str]:
        return [c for c in header if c.startswith(self.covariate_prefix)]

from enum import Enum
from typing import ClassVar

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator


class DesignKind(str, Enum):
    """樣本數計算的設計類型"""

    CR_NO_CARRYOVER = "cr_no_carryover"
    CR_CARRYOVER = "cr_carryover"
    PR = "pr"


class EffectScenario(BaseModel):
    """六個潛在結果平均數的參數化"""

    mu: float = Field(default=0.0, description="基線平均 μ")
    theta1: float = Field(default=0.0, description="第一期處理效果 θ₁")
    theta2_tilde: float = Field(default=0.0, description="第二期處理效果 θ̃₂")
    tau_tilde: float = Field(default=0.0, description="時間趨勢 τ̃")
    lambda0: float = Field(default=0.0, description="殘留效應 λ₀")
    lambda1: float = Field(default=0.0, description="殘留效應 λ₁")

    @field_validator("*")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not np.isfinite(value):
            raise ValueError("參數必須為有限值")
        return value


class PotentialOutcomeMeans(BaseModel):
    """六個潛在結果的期望值"""

    y1_0: float = Field(description="E[Y₁^(0)]")
    y1_1: float = Field(description="E[Y₁^(1)]")
    y2_00: float = Field(description="E[Y₂^(00)]")
    y2_10: float = Field(description="E[Y₂^(10)]")
    y2_11: float = Field(description="E[Y₂^(11)]")
    y2_01: float = Field(description="E[Y₂^(01)]")

    def as_tuple(self) -> tuple[float, float, float, float, float, float]:
        return (self.y1_0, self.y1_1, self.y2_00, self.y2_10, self.y2_11, self.y2_01)


class DesignParams(BaseModel):
    """試驗設計參數"""

    n: int = Field(ge=4, description="樣本數")
    pi1: float = Field(default=0.5, gt=0.0, lt=1.0, description="分配機率 π₁")
    alpha: float = Field(default=0.025, gt=0.0, lt=1.0, description="單尾顯著水準")
    theta_star: float = Field(default=0.0, description="θ*（優越性為 0，不劣性 > 0）")


class VarianceComponents(BaseModel):
    """漸近變異數成分"""

    sigma2_cr: float = Field(ge=0.0, description="σ̃²_cr（λ=0 時即 σ²_cr）")
    sigma2_pr: float = Field(ge=0.0, description="σ²_pr")
    sigma2_cr_adj: float = Field(ge=0.0, description="σ̃²_cr,adj")
    sigma2_pr_adj: float | None = Field(default=None, ge=0.0, description="σ²_pr,adj")
    rho: float | None = Field(default=None, ge=0.0, lt=1.0, description="組內相關係數 ρ")
    sigma2: float | None = Field(default=None, ge=0.0, description="共同結果變異數 σ²")


class TestOutcome(BaseModel):
    """單尾 Z 檢定結果"""

    __test__: ClassVar[bool] = False

    statistic: float = Field(description="檢定統計量")
    critical_value: float = Field(description="z_{1−α}")
    reject: bool = Field(description="是否拒絕虛無假設")
    p_value: float = Field(ge=0.0, le=1.0, description="p 值")


class SensitivitySpec(BaseModel):
    """敏感度分析參數"""

    lambda_bound: float = Field(le=0.0, description="殘留偏誤下界 Λ")


class SampleSizeResult(BaseModel):
    """樣本數計算結果"""

    design_kind: DesignKind
    n: int = Field(description="所需樣本數（無條件進位）")
    n_exact: float = Field(description="進位前的實數解")
    detectable_effect: float = Field(description="扣除殘留偏誤後的可偵測效果")


class SensitivityDecision(BaseModel):
    """單一 Λ 的敏感度檢定決策"""

    lambda_bound: float
    statistic: float
    reject: bool

    @model_validator(mode="after")
    def _nonpositive(self) -> "SensitivityDecision":
        if self.lambda_bound > 0:
            raise ValueError("Λ 必須 ≤ 0")
        return self

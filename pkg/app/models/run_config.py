from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.settings import get_settings
from app.models.design import DesignParams
from app.models.simulation import StudyTest
from app.models.trial import EstimationMethod


class RunConfig(BaseModel):
    """所有指令共用的執行設定"""

    model_config = ConfigDict(extra="forbid")

    seed: int | None = Field(default=None, ge=0, lt=2**64, description="主種子")
    out: str | None = Field(default=None, description="輸出檔案路徑（預設 stdout）")
    pi1: float = Field(
        default_factory=lambda: get_settings().default_pi1, gt=0.0, lt=1.0, description="分配機率 π₁"
    )
    alpha: float = Field(
        default_factory=lambda: get_settings().default_alpha, gt=0.0, lt=1.0, description="單尾顯著水準"
    )
    theta_star: float = Field(default_factory=lambda: get_settings().default_theta_star, description="θ*")
    impute_mode: bool = Field(default=False, description="以眾數補缺漏共變數")

    def design(self, n: int) -> DesignParams:
        return DesignParams(n=n, pi1=self.pi1, alpha=self.alpha, theta_star=self.theta_star)


class EstimateRunConfig(RunConfig):
    """estimate 指令設定"""

    data: str = Field(description="試驗資料 CSV 路徑")
    methods: list[EstimationMethod] | None = Field(default=None, description="估計方法，預設依共變數決定")


class PowerRunConfig(RunConfig):
    """power 指令設定（常態 DGP 的解析檢定力格點）"""

    theta_min: float = Field(default=0.0, description="θ 起點")
    theta_max: float = Field(default=0.5, description="θ 終點")
    theta_step: float = Field(default=0.01, gt=0.0, description="θ 間距")
    lambdas: list[float] = Field(default_factory=lambda: [-0.1, 0.0, 0.1, 0.3], min_length=1)
    bs: list[float] = Field(default_factory=lambda: [0.0, 1.0 / 3.0], min_length=1)
    n: int = Field(default=500, ge=4, description="樣本數")
    tests: list[StudyTest] = Field(
        default_factory=lambda: [StudyTest.PR, StudyTest.CR, StudyTest.CR_ADJ], min_length=1
    )

    @model_validator(mode="after")
    def _check_grid(self) -> "PowerRunConfig":
        if self.theta_max < self.theta_min:
            raise ValueError("theta_max 必須 ≥ theta_min")
        return self


class SampleSizeRunConfig(RunConfig):
    """samplesize 指令設定"""

    theta: float = Field(description="對立假設效果 θ_Alt")
    beta: float = Field(default=0.1, gt=0.0, lt=1.0, description="型二錯誤率 β（檢定力 1−β）")
    lambda0: float = Field(default=0.0, description="λ₀")
    lambda1: float = Field(default=0.0, description="λ₁")
    rho: float | None = Field(default=None, ge=0.0, lt=1.0, description="ICC ρ")
    sigma2: float = Field(default=1.0, gt=0.0, description="ICC 參數化的共同變異數 σ²")
    sigma2_cr: float | None = Field(default=None, gt=0.0, description="σ̃²_cr（直接指定）")
    sigma2_pr: float | None = Field(default=None, gt=0.0, description="σ²_pr（直接指定）")

    @model_validator(mode="after")
    def _check_variances(self) -> "SampleSizeRunConfig":
        explicit = self.sigma2_cr is not None and self.sigma2_pr is not None
        if self.rho is None and not explicit:
            raise ValueError("必須指定 rho 或同時指定 sigma2_cr 與 sigma2_pr")
        return self


class SimulateRunConfig(RunConfig):
    """simulate 指令設定"""

    dgp: Literal["gaussian", "resample"] = Field(default="gaussian", description="資料生成過程")
    thetas: list[float] = Field(default_factory=lambda: [0.3], min_length=1)
    lambdas: list[float] | None = Field(default=None, description="殘留效應（絕對值）")
    lambda_ratios: list[float] | None = Field(default=None, description="殘留效應相對於 θ 的比例")
    bs: list[float] = Field(default_factory=lambda: [0.0], min_length=1, description="常態 DGP 的 b")
    n: int = Field(default=500, ge=4, description="樣本數")
    replications: int = Field(default=1000, ge=1, description="重複次數")
    tests: list[StudyTest] = Field(default_factory=lambda: list(StudyTest), min_length=1)
    tau_tilde: float = Field(default=0.0, description="時間趨勢 τ̃")
    rho: float = Field(default=0.0, description="重抽樣 DGP 的 Corr(Y₂^(00), Y₁^(0))")
    cohort: str | None = Field(default=None, description="世代 CSV 路徑（預設為合成世代）")
    cohort_seed: int = Field(default=2024, ge=0, description="合成世代種子")
    impute_negative: bool = Field(default=False, description="世代缺漏二元共變數以負類別補值")
    csv_out: str | None = Field(default=None, description="表格 CSV 路徑（預設為 out 換成 .csv）")

    @model_validator(mode="after")
    def _check_lambda(self) -> "SimulateRunConfig":
        if self.lambdas is not None and self.lambda_ratios is not None:
            raise ValueError("lambdas 與 lambda_ratios 只能擇一")
        return self

    def lambda_values(self, theta: float) -> list[float]:
        """依 θ 展開殘留效應格點"""
        if self.lambda_ratios is not None:
            return [ratio * theta for ratio in self.lambda_ratios]
        return list(self.lambdas) if self.lambdas is not None else [0.0]


class SensitivityRunConfig(RunConfig):
    """sensitivity 指令設定"""

    data: str = Field(description="試驗資料 CSV 路徑")
    method: EstimationMethod = Field(default=EstimationMethod.CR, description="估計方法")
    lambda_bounds: list[float] = Field(default_factory=lambda: [0.0, -0.05, -0.1, -0.2], min_length=1)

    @field_validator("lambda_bounds")
    @classmethod
    def _nonpositive(cls, value: list[float]) -> list[float]:
        if any(v > 0 for v in value):
            raise ValueError("Λ 必須 ≤ 0")
        return value

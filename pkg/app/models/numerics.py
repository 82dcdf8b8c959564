import numpy as np
from pydantic import BaseModel, Field, field_validator
from scipy import special


class LogisticModel(BaseModel):
    """邏輯迴歸模型係數"""

    intercept: float = Field(description="截距")
    slopes: list[float] = Field(default_factory=list, description="各共變數斜率")
    iterations: int = Field(default=0, description="IRLS 迭代次數")
    gradient_norm: float = Field(default=0.0, description="收斂時平均梯度範數")

    @field_validator("intercept")
    @classmethod
    def _finite_intercept(cls, value: float) -> float:
        if not np.isfinite(value):
            raise ValueError("截距必須為有限值")
        return value

    @field_validator("slopes")
    @classmethod
    def _finite_slopes(cls, value: list[float]) -> list[float]:
        if not all(np.isfinite(v) for v in value):
            raise ValueError("斜率必須為有限值")
        return value

    @property
    def slope_vector(self) -> np.ndarray:
        return np.asarray(self.slopes, dtype=float)

    def linear_predictor(self, covariates: np.ndarray, intercept: float | None = None) -> np.ndarray:
        x = np.asarray(covariates, dtype=float).reshape(len(covariates), -1)
        alpha = self.intercept if intercept is None else intercept
        if x.shape[1] == 0:
            return np.full(x.shape[0], alpha)
        return alpha + x @ self.slope_vector

    def predict_proba(self, covariates: np.ndarray, intercept: float | None = None) -> np.ndarray:
        """expit(α + βᵀx)，可替換截距"""
        return special.expit(self.linear_predictor(covariates, intercept))


class SolveReport(BaseModel):
    """一維求根結果"""

    value: float = Field(description="解")
    iterations: int = Field(description="迭代次數")
    converged: bool = Field(description="是否收斂")
    residual: float = Field(description="殘差絕對值")

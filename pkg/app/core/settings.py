from functools import lru_cache

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """工具箱設定"""

    model_config = SettingsConfigDict(
        env_file=".env", env_ignore_empty=True, extra="ignore"
    )

    # 應用程式設定
    app_name: str = "Crossover Design Toolkit"
    app_version: str = "0.1.0"

    # 日誌設定
    log_level: str = "INFO"
    log_file: str | None = Field(default=None, description="日誌檔案路徑（未設定則只輸出至 stderr）")

    # 數值核心設定
    irls_max_iter: int = Field(default=100, description="IRLS 最大迭代次數")
    irls_gradient_tol: float = Field(default=1e-8, description="平均對數概似梯度容許誤差")
    irls_step_tol: float = Field(default=1e-6, description="IRLS 收斂時 Newton 步長上限")
    separation_eps: float = Field(default=1e-10, description="完全分離判定門檻")
    calibration_bracket: float = Field(default=40.0, description="截距校準二分法區間（logit 單位）")
    calibration_max_iter: int = 200
    calibration_tol: float = 1e-10
    gram_condition_cap: float = Field(default=1e12, description="Gram 矩陣條件數上限")

    # 模擬設定
    empty_arm_retries: int = Field(default=10, description="空組重抽上限")
    cohort_refit_retries: int = Field(default=10, description="Y2^(00) 重抽上限")
    max_workers: int = 4
    chunk_size: int = 250
    parallel_threshold: int = 1000

    # 試驗設計預設值
    default_pi1: float = 0.5
    default_alpha: float = 0.025
    default_theta_star: float = 0.0


@lru_cache
def get_settings() -> Settings:
    """獲取工具箱設定（含快取）"""
    return Settings()

from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest

from app.models.trial import TrialDataset


@pytest.fixture
def hand_dataset() -> TrialDataset:
    """手算資料：第 1 組 Δ = {2, 4}、第 0 組 Δ = {1, −1}；第一期 y1 = {1, 3} / {0, 2}"""
    return TrialDataset(
        arm=[1, 1, 0, 0],
        y1=[1.0, 3.0, 0.0, 2.0],
        y2=[-1.0, -1.0, -1.0, 3.0],
        pi1=0.5,
    )


@pytest.fixture
def tipping_dataset() -> TrialDataset:
    """每組 250 人，θ̂_cr = 0.3 且 σ̂²_cr = 3"""
    half = np.sqrt(3.0 * 249.0 / 250.0)
    spread = np.tile([half, -half], 125)
    delta = np.concatenate([0.3 + spread, -0.3 + spread])
    return TrialDataset(
        arm=np.repeat([1, 0], 250),
        y1=delta,
        y2=np.zeros(500),
        pi1=0.5,
    )


@pytest.fixture
def zero_slope_dataset() -> TrialDataset:
    """各組內共變數與 Δ、y1 正交，調整係數為 0"""
    x = np.array([-1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0])
    y1 = np.array([3.0, 5.0, 5.0, 3.0, 1.0, 2.0, 2.0, 1.0])
    y2 = np.array([1.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 2.0])
    return TrialDataset(
        arm=[1, 1, 1, 1, 0, 0, 0, 0],
        covariates=x.reshape(-1, 1),
        y1=y1,
        y2=y2,
        pi1=0.5,
        covariate_names=["z"],
    )


@pytest.fixture
def write_csv(tmp_path: Path) -> Callable[[str, str], Path]:
    """將文字寫成暫存 CSV 檔"""

    def _write(name: str, text: str) -> Path:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write

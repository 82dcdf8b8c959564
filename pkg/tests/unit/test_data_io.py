import json

import numpy as np
import pandas as pd
import pytest

from app.core.exceptions import ParseError
from app.models.simulation import CohortTable
from app.services.data_io import DataIOService
from app.services.estimators import EstimatorService

HAND_CSV = "id,arm,y1,y2\na,1,1,-1\nb,1,3,-1\nc,0,0,-1\nd,0,2,3\n"


class TestIngestTrialCsv:
    """試驗資料 CSV 讀取測試"""

    def test_hand_csv(self, write_csv):
        """測試手算資料讀取後 θ̂_cr = 1.5"""
        data = DataIOService.ingest_trial_csv(write_csv("hand.csv", HAND_CSV))

        assert data.n == 4
        assert data.ids == ["a", "b", "c", "d"]
        assert data.covariate_dim == 0
        assert EstimatorService.theta_cr(data).estimate == pytest.approx(1.5)

    def test_covariates_and_whitespace(self, write_csv):
        """測試共變數欄與前後空白"""
        text = "arm, y1, y2, x_age, x_sex\n1, 1.5, 2, 30, 1\n1, 2, 2, 41, 0\n0, 0, 1, 25, 1\n0, 1, 1, 38, 0\n"
        data = DataIOService.ingest_trial_csv(write_csv("cov.csv", text), pi1=0.4)

        assert data.covariate_names == ["age", "sex"]
        np.testing.assert_array_equal(data.covariates[:, 0], [30.0, 41.0, 25.0, 38.0])
        assert data.pi1 == 0.4
        assert data.ids is None

    def test_invalid_arm_reports_row(self, write_csv):
        """測試 arm = 2 時回報資料列號"""
        text = "arm,y1,y2\n1,1,1\n2,1,1\n0,1,1\n0,2,2\n"
        with pytest.raises(ParseError) as exc_info:
            DataIOService.ingest_trial_csv(write_csv("arm.csv", text))
        assert exc_info.value.row == 3

    def test_missing_outcome(self, write_csv):
        """測試結果缺漏"""
        text = "arm,y1,y2\n1,1,1\n1,,1\n0,1,1\n0,2,2\n"
        with pytest.raises(ParseError) as exc_info:
            DataIOService.ingest_trial_csv(write_csv("outcome.csv", text))
        assert exc_info.value.row == 3

    def test_missing_covariate_rejected(self, write_csv):
        """測試共變數缺漏且未啟用補值"""
        text = "arm,y1,y2,x_a\n1,1,1,0\n1,2,1,\n0,1,1,1\n0,2,2,1\n"
        with pytest.raises(ParseError) as exc_info:
            DataIOService.ingest_trial_csv(write_csv("cov.csv", text))
        assert exc_info.value.row == 3

    def test_missing_covariate_imputed_by_mode(self, write_csv):
        """測試以眾數補共變數缺漏"""
        text = "arm,y1,y2,x_a\n1,1,1,0\n1,2,1,\n0,1,1,1\n0,2,2,1\n"
        data = DataIOService.ingest_trial_csv(write_csv("cov.csv", text), impute_mode=True)

        np.testing.assert_array_equal(data.covariates[:, 0], [0.0, 1.0, 1.0, 1.0])

    def test_non_numeric_value(self, write_csv):
        """測試非數值內容"""
        text = "arm,y1,y2\n1,1,1\n1,abc,1\n0,1,1\n0,2,2\n"
        with pytest.raises(ParseError) as exc_info:
            DataIOService.ingest_trial_csv(write_csv("text.csv", text))
        assert "abc" in exc_info.value.message

    def test_missing_column(self, write_csv):
        """測試缺少必要欄位"""
        with pytest.raises(ParseError):
            DataIOService.ingest_trial_csv(write_csv("cols.csv", "arm,y1\n1,1\n1,2\n0,1\n0,2\n"))

    def test_too_few_rows(self, write_csv):
        """測試少於 4 列"""
        with pytest.raises(ParseError):
            DataIOService.ingest_trial_csv(write_csv("short.csv", "arm,y1,y2\n1,1,1\n0,1,1\n0,2,2\n"))

    def test_missing_file(self, tmp_path):
        """測試檔案不存在"""
        with pytest.raises(ParseError):
            DataIOService.ingest_trial_csv(tmp_path / "absent.csv")

    def test_write_then_ingest(self, tmp_path, zero_slope_dataset):
        """測試寫出後讀回資料相同"""
        path = tmp_path / "trial.csv"
        DataIOService.write_trial_csv(zero_slope_dataset, path)
        data = DataIOService.ingest_trial_csv(path)

        np.testing.assert_array_equal(data.arm, zero_slope_dataset.arm)
        np.testing.assert_array_equal(data.y1, zero_slope_dataset.y1)
        np.testing.assert_array_equal(data.covariates, zero_slope_dataset.covariates)
        assert data.covariate_names == ["z"]


class TestCohortCsv:
    """世代 CSV 測試"""

    def test_impute_negative(self, write_csv):
        """測試二元共變數缺漏以 0 補值"""
        text = "y0,x_age,x_flag\n1,20,1\n0,30,\n0,25,0\n1,40,\n"
        cohort = DataIOService.load_cohort_csv(write_csv("cohort.csv", text), impute_negative=True)

        np.testing.assert_array_equal(cohort.covariates[:, 1], [1.0, 0.0, 0.0, 0.0])
        assert cohort.imputed_rows == 2
        assert cohort.covariate_names == ["age", "flag"]

    def test_missing_without_impute(self, write_csv):
        """測試未啟用補值時缺漏為錯誤"""
        text = "y0,x_flag\n1,1\n0,\n"
        with pytest.raises(ParseError):
            DataIOService.load_cohort_csv(write_csv("cohort.csv", text))

    def test_non_binary_column_not_imputed(self, write_csv):
        """測試非二元欄缺漏即使啟用補值仍為錯誤"""
        text = "y0,x_age\n1,20\n0,\n0,31\n"
        with pytest.raises(ParseError) as exc_info:
            DataIOService.load_cohort_csv(write_csv("cohort.csv", text), impute_negative=True)
        assert exc_info.value.row == 3

    def test_non_binary_outcome(self, write_csv):
        """測試 y0 必須為二元"""
        with pytest.raises(ParseError):
            DataIOService.load_cohort_csv(write_csv("cohort.csv", "y0,x_a\n1,1\n2,0\n"))

    def test_write_then_load(self, tmp_path):
        """測試世代寫出後讀回"""
        cohort = CohortTable(covariates=[[20.0, 1.0], [31.0, 0.0]], baseline=[1, 0], covariate_names=["age", "flag"])
        path = tmp_path / "cohort.csv"
        DataIOService.write_cohort_csv(cohort, path)
        loaded = DataIOService.load_cohort_csv(path)

        np.testing.assert_array_equal(loaded.covariates, cohort.covariates)
        np.testing.assert_array_equal(loaded.baseline, cohort.baseline)


class TestOutput:
    """輸出格式測試"""

    def test_dumps_json(self):
        """測試 JSON 輸出可解析"""
        text = DataIOService.dumps_json({"power": 0.733, "label": "交叉"})

        assert text.endswith("\n")
        assert json.loads(text) == {"power": 0.733, "label": "交叉"}

    def test_dumps_json_floats_lossless(self):
        """測試浮點數以最短表示輸出且可完全還原"""
        values = [0.1, 1.0 / 3.0, 0.7330251748239126, 5e-324, 1.7976931348623157e308, -0.148184]
        text = DataIOService.dumps_json({"values": values})

        assert json.loads(text)["values"] == values
        assert "0.1," in text
        assert "0.10000000000000001" not in text

    def test_dumps_json_rejects_nan(self):
        """測試 NaN 不可輸出"""
        with pytest.raises(ValueError):
            DataIOService.dumps_json({"value": float("nan")})

    def test_table_csv(self):
        """測試表格輸出使用 LF 換行"""
        text = DataIOService.table_csv(pd.DataFrame({"n": [100, 200], "power_cr": [0.5, 0.75]}))

        assert text == "n,power_cr\n100,0.5\n200,0.75\n"

    def test_emit_text_to_file(self, tmp_path):
        """測試寫入巢狀路徑"""
        path = tmp_path / "out" / "result.json"
        DataIOService.emit_text("{}\n", path)

        assert path.read_text(encoding="utf-8") == "{}\n"

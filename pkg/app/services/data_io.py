import json
import logging
import sys
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from app.core.exceptions import ParseError
from app.models.simulation import CohortCsvSchema, CohortTable
from app.models.trial import TrialCsvSchema, TrialDataset

logger = logging.getLogger(__name__)

# 資料列號 = DataFrame 索引 + 2（表頭為第 1 列）
_HEADER_OFFSET = 2


class DataIOService:
    """CSV 讀寫與 JSON 報表輸出"""

    @staticmethod
    def _read_frame(path: str | Path) -> pd.DataFrame:
        try:
            frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
        except FileNotFoundError as e:
            raise ParseError(f"找不到檔案: {path}") from e
        except pd.errors.EmptyDataError as e:
            raise ParseError(f"檔案為空: {path}") from e
        except pd.errors.ParserError as e:
            raise ParseError(f"CSV 格式錯誤: {e}") from e
        except UnicodeDecodeError as e:
            raise ParseError(f"檔案不是 UTF-8 編碼: {path}") from e

        frame.columns = [str(c).strip() for c in frame.columns]
        return frame.apply(lambda column: column.str.strip())

    @staticmethod
    def _parse_numeric(frame: pd.DataFrame, column: str) -> tuple[np.ndarray, np.ndarray]:
        """回傳 (數值, 缺漏遮罩)；非數值內容引發 ParseError"""
        raw = frame[column]
        missing = (raw == "").to_numpy()
        values = pd.to_numeric(raw.where(~missing), errors="coerce")
        invalid = values.isna().to_numpy() & ~missing
        if invalid.any():
            index = int(np.flatnonzero(invalid)[0])
            raise ParseError(f"欄位 {column} 的值 {raw.iloc[index]!r} 不是數值", row=index + _HEADER_OFFSET)
        numbers = values.to_numpy(dtype=float)
        if not np.isfinite(numbers[~missing]).all():
            index = int(np.flatnonzero(~np.isfinite(numbers) & ~missing)[0])
            raise ParseError(f"欄位 {column} 的值必須為有限數值", row=index + _HEADER_OFFSET)
        return numbers, missing

    @staticmethod
    def _first_missing(column: str, missing: np.ndarray, what: str) -> None:
        if missing.any():
            index = int(np.flatnonzero(missing)[0])
            raise ParseError(f"缺少{what} {column}", row=index + _HEADER_OFFSET)

    @staticmethod
    def ingest_trial_csv(
        path: str | Path,
        pi1: float = 0.5,
        impute_mode: bool = False,
        schema: TrialCsvSchema | None = None,
    ) -> TrialDataset:
        """讀取試驗資料 CSV"""
        schema = schema or TrialCsvSchema()
        frame = DataIOService._read_frame(path)
        header = list(frame.columns)

        absent = [c for c in schema.required_columns if c not in header]
        if absent:
            raise ParseError(f"缺少必要欄位: {', '.join(absent)}")
        if len(frame) < schema.min_rows:
            raise ParseError(f"資料列數 {len(frame)} 少於 {schema.min_rows}")

        # 序列指標
        arm, arm_missing = DataIOService._parse_numeric(frame, schema.arm_column)
        DataIOService._first_missing(schema.arm_column, arm_missing, "序列指標")
        bad_arm = ~np.isin(arm, (0.0, 1.0))
        if bad_arm.any():
            index = int(np.flatnonzero(bad_arm)[0])
            raise ParseError(f"arm 必須為 0 或 1，實際為 {frame[schema.arm_column].iloc[index]!r}", row=index + _HEADER_OFFSET)

        # 結果
        outcomes = []
        for column in schema.outcome_columns:
            values, missing = DataIOService._parse_numeric(frame, column)
            DataIOService._first_missing(column, missing, "結果")
            outcomes.append(values)

        # 共變數
        covariate_columns = schema.covariate_columns(header)
        columns = []
        for column in covariate_columns:
            values, missing = DataIOService._parse_numeric(frame, column)
            if missing.any():
                if not impute_mode:
                    DataIOService._first_missing(column, missing, "共變數")
                if missing.all():
                    raise ParseError(f"共變數 {column} 全部缺漏，無法補值")
                fill = float(pd.Series(values[~missing]).mode().iloc[0])
                values = np.where(missing, fill, values)
                logger.info(f"Imputed covariate by mode: column={column}, rows={int(missing.sum())}, value={fill}")
            columns.append(values)

        covariates = np.column_stack(columns) if columns else np.empty((len(frame), 0))
        ids = frame[schema.id_column].tolist() if schema.id_column in header else None

        return TrialDataset(
            arm=arm.astype(int),
            covariates=covariates,
            y1=outcomes[0],
            y2=outcomes[1],
            pi1=pi1,
            covariate_names=[c[len(schema.covariate_prefix):] for c in covariate_columns],
            ids=ids,
        )

    @staticmethod
    def write_trial_csv(data: TrialDataset, path: str | Path, schema: TrialCsvSchema | None = None) -> None:
        """寫出試驗資料 CSV（ingest_trial_csv 的反向操作）"""
        schema = schema or TrialCsvSchema()
        columns: dict[str, Any] = {}
        if data.ids is not None:
            columns[schema.id_column] = data.ids
        columns[schema.arm_column] = data.arm
        columns[schema.outcome_columns[0]] = data.y1
        columns[schema.outcome_columns[1]] = data.y2
        names = data.covariate_names or [str(j + 1) for j in range(data.covariate_dim)]
        for name, column in zip(names, data.covariates.T):
            columns[f"{schema.covariate_prefix}{name}"] = column
        pd.DataFrame(columns).to_csv(path, index=False, float_format="%.17g")

    @staticmethod
    def load_cohort_csv(
        path: str | Path,
        impute_negative: bool = False,
        schema: CohortCsvSchema | None = None,
    ) -> CohortTable:
        """讀取基線世代 CSV；可選擇以負類別補二元共變數缺漏"""
        schema = schema or CohortCsvSchema()
        frame = DataIOService._read_frame(path)
        header = list(frame.columns)
        if schema.outcome_column not in header:
            raise ParseError(f"缺少必要欄位: {schema.outcome_column}")
        if len(frame) == 0:
            raise ParseError("世代不可為空")

        baseline, missing = DataIOService._parse_numeric(frame, schema.outcome_column)
        DataIOService._first_missing(schema.outcome_column, missing, "基線結果")
        bad = ~np.isin(baseline, (0.0, 1.0))
        if bad.any():
            raise ParseError("y0 必須為 0 或 1", row=int(np.flatnonzero(bad)[0]) + _HEADER_OFFSET)

        covariate_columns = schema.covariate_columns(header)
        columns = []
        imputed = np.zeros(len(frame), dtype=bool)
        for column in covariate_columns:
            values, missing = DataIOService._parse_numeric(frame, column)
            if missing.any():
                binary = np.isin(values[~missing], (0.0, 1.0)).all()
                if not (impute_negative and binary):
                    DataIOService._first_missing(column, missing, "共變數")
                values = np.where(missing, 0.0, values)
                imputed |= missing
            columns.append(values)

        if imputed.any():
            logger.info(f"Imputed missing binary covariates as negative: rows={int(imputed.sum())}")

        return CohortTable(
            covariates=np.column_stack(columns) if columns else np.empty((len(frame), 0)),
            baseline=baseline,
            covariate_names=[c[len(schema.covariate_prefix):] for c in covariate_columns],
            imputed_rows=int(imputed.sum()),
        )

    @staticmethod
    def write_cohort_csv(cohort: CohortTable, path: str | Path, schema: CohortCsvSchema | None = None) -> None:
        schema = schema or CohortCsvSchema()
        columns: dict[str, Any] = {schema.outcome_column: cohort.baseline.astype(int)}
        for name, column in zip(cohort.covariate_names, cohort.covariates.T):
            columns[f"{schema.covariate_prefix}{name}"] = column
        pd.DataFrame(columns).to_csv(path, index=False, float_format="%.17g")

    @staticmethod
    def dumps_json(payload: dict[str, Any]) -> str:
        """JSON 序列化（浮點數以最短可還原表示）"""
        return json.dumps(payload, indent=2, ensure_ascii=False, allow_nan=False) + "\n"

    @staticmethod
    def emit_text(text: str, path: str | Path | None) -> None:
        """寫入檔案，未指定路徑時輸出至 stdout"""
        if path is None:
            sys.stdout.write(text)
            return
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")

    @staticmethod
    def table_csv(frame: pd.DataFrame) -> str:
        return frame.to_csv(index=False, lineterminator="\n")

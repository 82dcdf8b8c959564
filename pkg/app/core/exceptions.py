"""工具箱錯誤類別

所有錯誤皆繼承 ``ValueError``，並帶有機器可讀代碼與 CLI 結束碼：
2 設定錯誤、3 資料錯誤、4 數值錯誤。
"""

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


class ToolkitError(ValueError):
    """工具箱錯誤基底類別"""

    code = "ToolkitError"
    exit_code = EXIT_NUMERICAL

    def __init__(self, message: str, *, replication: int | None = None):
        super().__init__(message)
        self.message = message
        self.replication = replication

    def with_replication(self, replication: int) -> "ToolkitError":
        """附加模擬重複次序號，回傳同類型的新錯誤"""
        return type(self)(f"replication {replication}: {self.message}", replication=replication)

    def to_dict(self) -> dict[str, object]:
        payload: dict[str, object] = {"code": self.code, "message": self.message}
        if self.replication is not None:
            payload["replication"] = self.replication
        return payload


# 資料錯誤
class InvalidInput(ToolkitError):
    code = "InvalidInput"
    exit_code = EXIT_DATA


class EmptyArm(ToolkitError):
    code = "EmptyArm"
    exit_code = EXIT_DATA


class ParseError(ToolkitError):
    code = "ParseError"
    exit_code = EXIT_DATA

    def __init__(self, message: str, *, row: int | None = None, replication: int | None = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message, replication=replication)
        self.row = row


# 設定錯誤
class ConfigError(ToolkitError):
    code = "ConfigError"
    exit_code = EXIT_CONFIG


class InfeasibleDesign(ToolkitError):
    code = "InfeasibleDesign"
    exit_code = EXIT_CONFIG


class InfeasibleCorrelation(ToolkitError):
    code = "InfeasibleCorrelation"
    exit_code = EXIT_CONFIG


# 數值錯誤
class SingularCovariance(ToolkitError):
    code = "SingularCovariance"


class NonConvergence(ToolkitError):
    code = "NonConvergence"


class TargetOutOfRange(ToolkitError):
    code = "TargetOutOfRange"


class DegenerateVariance(ToolkitError):
    code = "DegenerateVariance"


class DegenerateVarianceWarning(UserWarning):
    """變異數估計為零（標準誤為 0）"""

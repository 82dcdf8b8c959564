import argparse
import json
import sys
import time
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from app.cli.commands import (
    cmd_estimate,
    cmd_power,
    cmd_samplesize,
    cmd_sensitivity,
    cmd_simulate,
    simulate_csv_path,
)
from app.core.exceptions import EXIT_CONFIG, ConfigError, ToolkitError
from app.core.logging import toolkit_logger
from app.core.settings import get_settings
from app.models.run_config import (
    EstimateRunConfig,
    PowerRunConfig,
    RunConfig,
    SampleSizeRunConfig,
    SensitivityRunConfig,
    SimulateRunConfig,
)
from app.services.data_io import DataIOService


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"無法解析數值清單: {text}") from e


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    """建立命令列解析器"""
    settings = get_settings()

    # 全域選項（每個子指令共用）
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON 設定檔；明確指定的選項優先")
    common.add_argument("--seed", type=int, help="主種子")
    common.add_argument("--out", help="輸出檔案（預設 stdout）")
    common.add_argument("--pi1", type=float, help=f"分配機率 π₁（預設 {settings.default_pi1}）")
    common.add_argument("--alpha", type=float, help=f"單尾顯著水準（預設 {settings.default_alpha}）")
    common.add_argument(
        "--theta-star", dest="theta_star", type=float, help=f"θ*（預設 {settings.default_theta_star}）"
    )
    common.add_argument(
        "--impute-mode", dest="impute_mode", action="store_const", const=True, help="以眾數補缺漏共變數"
    )

    parser = argparse.ArgumentParser(
        prog="crossover",
        description=f"{settings.app_name} {settings.app_version}：兩期交叉試驗的設計與分析",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    estimate = subparsers.add_parser("estimate", parents=[common], help="點估計與單尾檢定")
    estimate.add_argument("--data", help="試驗資料 CSV")
    estimate.add_argument("--methods", type=_str_list, help="cr,cr_alt,pr,cr_adj,pr_adj")

    power = subparsers.add_parser("power", parents=[common], help="解析檢定力格點（CSV）")
    power.add_argument("--theta-min", dest="theta_min", type=float)
    power.add_argument("--theta-max", dest="theta_max", type=float)
    power.add_argument("--theta-step", dest="theta_step", type=float)
    power.add_argument("--lambdas", type=_float_list)
    power.add_argument("--bs", type=_float_list)
    power.add_argument("--n", type=int)
    power.add_argument("--tests", type=_str_list)

    samplesize = subparsers.add_parser("samplesize", parents=[common], help="樣本數與相對效率")
    samplesize.add_argument("--theta", type=float)
    samplesize.add_argument("--beta", type=float)
    samplesize.add_argument("--lambda0", type=float)
    samplesize.add_argument("--lambda1", type=float)
    samplesize.add_argument("--rho", type=float)
    samplesize.add_argument("--sigma2", type=float)
    samplesize.add_argument("--sigma2-cr", dest="sigma2_cr", type=float)
    samplesize.add_argument("--sigma2-pr", dest="sigma2_pr", type=float)

    simulate = subparsers.add_parser("simulate", parents=[common], help="蒙地卡羅檢定力研究")
    simulate.add_argument("--dgp", choices=["gaussian", "resample"])
    simulate.add_argument("--thetas", type=_float_list)
    simulate.add_argument("--lambdas", type=_float_list)
    simulate.add_argument("--lambda-ratios", dest="lambda_ratios", type=_float_list)
    simulate.add_argument("--bs", type=_float_list)
    simulate.add_argument("--n", type=int)
    simulate.add_argument("--replications", type=int)
    simulate.add_argument("--tests", type=_str_list)
    simulate.add_argument("--tau-tilde", dest="tau_tilde", type=float)
    simulate.add_argument("--rho", type=float)
    simulate.add_argument("--cohort", help="世代 CSV（預設為合成世代）")
    simulate.add_argument("--cohort-seed", dest="cohort_seed", type=int)
    simulate.add_argument(
        "--impute-negative", dest="impute_negative", action="store_const", const=True
    )
    simulate.add_argument("--csv-out", dest="csv_out")

    sensitivity = subparsers.add_parser("sensitivity", parents=[common], help="殘留效應敏感度分析")
    sensitivity.add_argument("--data", help="試驗資料 CSV")
    sensitivity.add_argument("--method")
    sensitivity.add_argument("--lambda-bounds", dest="lambda_bounds", type=_float_list)

    return parser


def resolve_config(config_cls: type[RunConfig], args: argparse.Namespace) -> RunConfig:
    """讀取 JSON 設定檔並以命令列選項覆蓋"""
    file_values: dict[str, Any] = {}
    if args.config:
        try:
            file_values = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"無法讀取設定檔 {args.config}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"設定檔不是有效的 JSON: {e}") from e
        if not isinstance(file_values, dict):
            raise ConfigError("設定檔頂層必須為 JSON 物件")
        # 報表外層的 config 可直接重用
        if "config" in file_values and "command" in file_values:
            file_values = file_values["config"]

    flags = {
        key: value
        for key, value in vars(args).items()
        if key in config_cls.model_fields and value is not None
    }
    return config_cls.model_validate({**file_values, **flags})


def _run_estimate(config: RunConfig) -> None:
    assert isinstance(config, EstimateRunConfig)
    DataIOService.emit_text(DataIOService.dumps_json(cmd_estimate(config)), config.out)


def _run_power(config: RunConfig) -> None:
    assert isinstance(config, PowerRunConfig)
    DataIOService.emit_text(DataIOService.table_csv(cmd_power(config)), config.out)


def _run_samplesize(config: RunConfig) -> None:
    assert isinstance(config, SampleSizeRunConfig)
    DataIOService.emit_text(DataIOService.dumps_json(cmd_samplesize(config)), config.out)


def _run_simulate(config: RunConfig) -> None:
    assert isinstance(config, SimulateRunConfig)
    payload, table = cmd_simulate(config)
    DataIOService.emit_text(DataIOService.dumps_json(payload), config.out)
    csv_path = simulate_csv_path(config)
    if csv_path is not None:
        DataIOService.emit_text(DataIOService.table_csv(table), csv_path)


def _run_sensitivity(config: RunConfig) -> None:
    assert isinstance(config, SensitivityRunConfig)
    DataIOService.emit_text(DataIOService.dumps_json(cmd_sensitivity(config)), config.out)


COMMANDS: dict[str, tuple[type[RunConfig], Callable[[RunConfig], None]]] = {
    "estimate": (EstimateRunConfig, _run_estimate),
    "power": (PowerRunConfig, _run_power),
    "samplesize": (SampleSizeRunConfig, _run_samplesize),
    "simulate": (SimulateRunConfig, _run_simulate),
    "sensitivity": (SensitivityRunConfig, _run_sensitivity),
}


def _report_error(payload: dict[str, Any]) -> None:
    sys.stderr.write(json.dumps({"error": payload}, ensure_ascii=False) + "\n")


def main(argv: Sequence[str] | None = None) -> int:
    """命令列進入點，回傳結束碼"""
    args = build_parser().parse_args(argv)
    config_cls, runner = COMMANDS[args.command]

    start_time = time.time()
    try:
        config = resolve_config(config_cls, args)
        toolkit_logger.log_command_start(args.command, config.model_dump(mode="json"))
        runner(config)
    except ValidationError as e:
        toolkit_logger.log_command_error(args.command, ConfigError.code, str(e))
        toolkit_logger.log_command_end(args.command, time.time() - start_time, success=False)
        _report_error({"code": ConfigError.code, "message": str(e)})
        return EXIT_CONFIG
    except ToolkitError as e:
        toolkit_logger.log_command_error(args.command, e.code, e.message)
        toolkit_logger.log_command_end(args.command, time.time() - start_time, success=False)
        _report_error(e.to_dict())
        return e.exit_code

    toolkit_logger.log_command_end(args.command, time.time() - start_time)
    toolkit_logger.logger.debug(f"Run metrics: {toolkit_logger.get_metrics()}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

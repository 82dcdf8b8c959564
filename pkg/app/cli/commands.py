import logging
import math
import warnings
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from app.core.exceptions import ConfigError, DegenerateVariance, DegenerateVarianceWarning, InfeasibleDesign
from app.core.settings import get_settings
from app.models.design import DesignKind, SensitivitySpec, VarianceComponents
from app.models.run_config import (
    EstimateRunConfig,
    PowerRunConfig,
    RunConfig,
    SampleSizeRunConfig,
    SensitivityRunConfig,
    SimulateRunConfig,
)
from app.models.simulation import (
    CohortTable,
    GaussianDgpParams,
    PowerStudyConfig,
    ResampleDgpConfig,
    StudyTest,
)
from app.models.trial import EstimationMethod
from app.services.cohort import CohortService
from app.services.data_io import DataIOService
from app.services.estimators import EstimatorService
from app.services.inference import InferenceService
from app.services.power_study import PowerStudyEngine, run_power_study
from app.services.simulation import SimulationService

logger = logging.getLogger(__name__)

# 格點點數上限
MAX_GRID_POINTS = 1_000_000

_TEST_ORDER = [StudyTest.PR, StudyTest.PR_ADJ, StudyTest.CR, StudyTest.CR_ADJ]


def envelope(command: str, config: RunConfig, result: dict[str, Any]) -> dict[str, Any]:
    """報表外層：指令、引擎版本、種子與完整設定"""
    return {
        "command": command,
        "engine_version": get_settings().app_version,
        "seed": config.seed,
        "config": config.model_dump(mode="json"),
        "result": result,
    }


def _theta_grid(config: PowerRunConfig) -> np.ndarray:
    """θ_min 起以 θ_step 的整數倍到 θ_max；範圍須為間距的整數倍"""
    steps = (config.theta_max - config.theta_min) / config.theta_step
    count = int(round(steps)) + 1
    if not math.isclose(steps, count - 1, rel_tol=0.0, abs_tol=1e-9):
        raise ConfigError(
            f"θ 範圍 [{config.theta_min}, {config.theta_max}] 不是間距 {config.theta_step} 的整數倍"
        )
    if count > MAX_GRID_POINTS:
        raise ConfigError(f"θ 格點數 {count} 超過上限 {MAX_GRID_POINTS}")
    return np.round(config.theta_min + config.theta_step * np.arange(count), 10)


def analytic_power(test: StudyTest, params: GaussianDgpParams, design_config: RunConfig) -> float:
    """常態 DGP 下各檢定的解析檢定力（θ₁ = θ̃₂）"""
    truths = SimulationService.gaussian_dgp_truths(params)
    design = design_config.design(params.n)
    effect = 0.5 * (params.theta1 + params.theta2_tilde) - design.theta_star

    if test == StudyTest.PR:
        return InferenceService.power_parallel(params.theta1 - design.theta_star, math.sqrt(truths.sigma2_pr), design)
    elif test == StudyTest.PR_ADJ:
        assert truths.sigma2_pr_adj is not None
        return InferenceService.power_parallel(
            params.theta1 - design.theta_star, math.sqrt(truths.sigma2_pr_adj), design
        )
    elif test == StudyTest.CR:
        return InferenceService.power_crossover(
            effect, params.lambda0, params.lambda1, math.sqrt(truths.sigma2_cr), design
        )
    else:
        return InferenceService.power_crossover(
            effect, params.lambda0, params.lambda1, math.sqrt(truths.sigma2_cr_adj), design
        )


def cmd_estimate(config: EstimateRunConfig) -> dict[str, Any]:
    """estimate：點估計、標準誤與單尾檢定"""
    data = DataIOService.ingest_trial_csv(config.data, pi1=config.pi1, impute_mode=config.impute_mode)
    design = config.design(data.n)

    methods = config.methods
    if methods is None:
        methods = [EstimationMethod.CR, EstimationMethod.CR_ALT, EstimationMethod.PR]
        if data.covariate_dim > 0:
            methods += [EstimationMethod.CR_ADJ, EstimationMethod.PR_ADJ]

    rows = []
    for method in methods:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateVarianceWarning)
            report = EstimatorService.estimate(data, method)
        notes = [str(w.message) for w in caught if issubclass(w.category, DegenerateVarianceWarning)]

        row: dict[str, Any] = {
            "method": method.value,
            "estimate": report.estimate,
            "asymptotic_variance": report.asymptotic_variance,
            "standard_error": report.standard_error,
        }
        try:
            outcome = InferenceService.one_sided_test(report, design)
            row.update(statistic=outcome.statistic, p_value=outcome.p_value, reject=outcome.reject)
        except DegenerateVariance as e:
            row.update(statistic=None, p_value=None, reject=False)
            notes.append(e.message)
        row["notes"] = notes
        rows.append(row)

    return envelope(
        "estimate",
        config,
        {
            "n": data.n,
            "n1": data.n1,
            "n0": data.n0,
            "pi1": data.pi1,
            "covariates": data.covariate_names,
            "critical_value": InferenceService.critical_value(design.alpha),
            "estimates": rows,
        },
    )


def cmd_power(config: PowerRunConfig) -> pd.DataFrame:
    """power：常態 DGP 的解析檢定力格點（無亂數）"""
    thetas = _theta_grid(config)
    rows = []
    for b in config.bs:
        for lam in config.lambdas:
            for theta in thetas:
                params = GaussianDgpParams(
                    theta1=float(theta),
                    theta2_tilde=float(theta),
                    lambda0=lam,
                    lambda1=lam,
                    b=b,
                    n=config.n,
                    pi1=config.pi1,
                )
                for test in config.tests:
                    rows.append(
                        {
                            "theta": float(theta),
                            "lambda": lam,
                            "b": b,
                            "test": test.value,
                            "analytic_power": analytic_power(test, params, config),
                        }
                    )
    return pd.DataFrame(rows, columns=["theta", "lambda", "b", "test", "analytic_power"])


def cmd_samplesize(config: SampleSizeRunConfig) -> dict[str, Any]:
    """samplesize：樣本數、Pitman 相對效率與殘留效應臨界值"""
    if config.sigma2_cr is not None and config.sigma2_pr is not None:
        components = VarianceComponents(
            sigma2_cr=config.sigma2_cr,
            sigma2_pr=config.sigma2_pr,
            sigma2_cr_adj=config.sigma2_cr,
            rho=config.rho,
        )
    else:
        assert config.rho is not None
        components = InferenceService.icc_variance_components(config.rho, config.sigma2)

    effect = config.theta - config.theta_star
    carryover_sum = config.lambda0 + config.lambda1
    sigma_cr = math.sqrt(components.sigma2_cr)
    sigma_pr = math.sqrt(components.sigma2_pr)

    n_cr = InferenceService.sample_size(DesignKind.CR_NO_CARRYOVER, effect, 0.0, sigma_cr, config.alpha, config.beta)
    n_pr = InferenceService.sample_size(DesignKind.PR, effect, 0.0, sigma_pr, config.alpha, config.beta)
    n_carry = InferenceService.sample_size(
        DesignKind.CR_CARRYOVER, effect, carryover_sum, sigma_cr, config.alpha, config.beta
    )
    are = InferenceService.pitman_are(components.sigma2_cr, components.sigma2_pr, effect, carryover_sum)

    notes = []
    breakeven: float | None
    try:
        breakeven = InferenceService.carryover_breakeven(effect, sigma_cr, sigma_pr)
    except InfeasibleDesign as e:
        breakeven = None
        notes.append(e.message)

    return envelope(
        "samplesize",
        config,
        {
            "n_cr": n_cr.n,
            "n_pr": n_pr.n,
            "n_cr_carryover": n_carry.n,
            "are": are,
            "breakeven": breakeven,
            "n_cr_exact": n_cr.n_exact,
            "n_pr_exact": n_pr.n_exact,
            "n_cr_carryover_exact": n_carry.n_exact,
            "ratio_exact": n_cr.n_exact / n_pr.n_exact,
            "variance_components": components.model_dump(mode="json"),
            "notes": notes,
        },
    )


def _load_cohort(config: SimulateRunConfig) -> tuple[CohortTable, str]:
    if config.cohort is not None:
        cohort = DataIOService.load_cohort_csv(config.cohort, impute_negative=config.impute_negative)
        return cohort, config.cohort
    return CohortService.generate_synthetic(config.cohort_seed), f"synthetic:{config.cohort_seed}"


def cmd_simulate(config: SimulateRunConfig) -> tuple[dict[str, Any], pd.DataFrame]:
    """simulate：蒙地卡羅檢定力格點研究"""
    if config.seed is None:
        seed = int(np.random.SeedSequence().generate_state(1, dtype=np.uint64)[0])
        config = config.model_copy(update={"seed": seed})
        logger.info(f"No seed given, drawn master seed {seed}")
    assert config.seed is not None

    cohort: CohortTable | None = None
    source = ""
    if config.dgp == "resample":
        cohort, source = _load_cohort(config)

    design = config.design(config.n)
    tests = [t for t in _TEST_ORDER if t in config.tests]
    b_values: list[float | None] = list(config.bs) if config.dgp == "gaussian" else [None]

    cells = []
    rows = []
    index = 0
    for theta in config.thetas:
        for lam in config.lambda_values(theta):
            for b in b_values:
                cell_seed = PowerStudyEngine.cell_seed(config.seed, index)
                dgp: GaussianDgpParams | ResampleDgpConfig
                if b is not None:
                    dgp = GaussianDgpParams(
                        theta1=theta,
                        theta2_tilde=theta,
                        tau_tilde=config.tau_tilde,
                        lambda0=lam,
                        lambda1=lam,
                        b=b,
                        n=config.n,
                        pi1=config.pi1,
                    )
                else:
                    dgp = ResampleDgpConfig(
                        theta=theta,
                        lambda_=lam,
                        tau_tilde=config.tau_tilde,
                        rho=config.rho,
                        n=config.n,
                        pi1=config.pi1,
                        cohort=cohort,
                        cohort_source=source,
                    )
                study = PowerStudyConfig(
                    dgp=dgp, replications=config.replications, seed=cell_seed, tests=tests, design=design
                )
                result = run_power_study(study)

                cell: dict[str, Any] = {
                    "cell": index,
                    "study": study.model_dump(mode="json", by_alias=True),
                    "result": result.model_dump(mode="json"),
                }
                row: dict[str, Any] = {"n": config.n, "lambda": lam, "theta": theta}
                if isinstance(dgp, GaussianDgpParams):
                    row["b"] = b
                    cell["analytic_power"] = {t.value: analytic_power(t, dgp, config) for t in tests}
                for test in tests:
                    row[f"power_{test.value}"] = result.power(test)
                cells.append(cell)
                rows.append(row)
                index += 1

    payload: dict[str, Any] = {"cells": cells}
    if cohort is not None:
        payload["cohort"] = {
            "source": source,
            "size": cohort.size,
            "imputed_rows": cohort.imputed_rows,
            "summary": CohortService.describe(cohort),
        }
    return envelope("simulate", config, payload), pd.DataFrame(rows)


def simulate_csv_path(config: SimulateRunConfig) -> Path | None:
    """simulate 表格 CSV 的輸出位置"""
    if config.csv_out is not None:
        return Path(config.csv_out)
    if config.out is not None:
        return Path(config.out).with_suffix(".csv")
    return None


def cmd_sensitivity(config: SensitivityRunConfig) -> dict[str, Any]:
    """sensitivity：殘留偏誤界限 Λ 的敏感度分析與臨界點"""
    data = DataIOService.ingest_trial_csv(config.data, pi1=config.pi1, impute_mode=config.impute_mode)
    design = config.design(data.n)
    report = EstimatorService.estimate(data, config.method)

    tipping = InferenceService.tipping_point(report, design)
    decisions = []
    for bound in config.lambda_bounds:
        outcome = InferenceService.sensitivity_test(report, design, SensitivitySpec(lambda_bound=bound))
        decisions.append({"lambda_bound": bound, "statistic": outcome.statistic, "reject": outcome.reject})

    notes = []
    if tipping > 0:
        notes.append(f"Λ_tip = {tipping!r} > 0：任何 Λ ≤ 0 皆無法拒絕虛無假設")

    return envelope(
        "sensitivity",
        config,
        {
            "method": report.method.value,
            "estimate": report.estimate,
            "standard_error": report.standard_error,
            "n": data.n,
            "tipping_point": tipping,
            "decisions": decisions,
            "notes": notes,
        },
    )

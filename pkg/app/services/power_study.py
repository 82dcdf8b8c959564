import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np

from app.core.exceptions import ConfigError, EmptyArm, ToolkitError
from app.core.settings import get_settings
from app.models.numerics import LogisticModel
from app.models.simulation import (
    GaussianDgpParams,
    PowerStudyConfig,
    PowerStudyResult,
    ResampleDgpConfig,
    StudyTally,
    StudyTest,
)
from app.models.trial import EstimationMethod, TrialDataset
from app.services.estimators import EstimatorService
from app.services.inference import InferenceService
from app.services.numerics import NumericsService
from app.services.simulation import SimulationService

logger = logging.getLogger(__name__)


@dataclass
class ReplicationOutcome:
    """單次重複的估計與檢定結果"""

    replication: int
    estimates: dict[StudyTest, float] = field(default_factory=dict)
    variances: dict[StudyTest, float] = field(default_factory=dict)
    rejections: dict[StudyTest, bool] = field(default_factory=dict)
    empty_arm_redraws: int = 0
    refit_retries: int = 0


class PowerStudyEngine:
    """可重現的蒙地卡羅檢定力研究

    第 r 次重複的亂數串流由 (主種子, r) 決定，結果與執行順序及執行緒數無關。
    """

    def __init__(
        self,
        config: PowerStudyConfig,
        max_workers: int | None = None,
        chunk_size: int | None = None,
        parallel_threshold: int | None = None,
    ):
        settings = get_settings()
        self.config = config
        self.max_workers = max_workers if max_workers is not None else settings.max_workers
        self.chunk_size = chunk_size if chunk_size is not None else settings.chunk_size
        self.parallel_threshold = (
            parallel_threshold if parallel_threshold is not None else settings.parallel_threshold
        )
        self.empty_arm_retries = settings.empty_arm_retries

        # 基線模型每個研究只擬合一次
        self._baseline_model: LogisticModel | None = None
        if isinstance(config.dgp, ResampleDgpConfig):
            if config.dgp.cohort is None:
                raise ConfigError("重抽樣資料生成需要基線世代")
            self._baseline_model = NumericsService.logistic_fit(
                config.dgp.cohort.covariates, config.dgp.cohort.baseline
            )

    @staticmethod
    def cell_seed(master_seed: int, cell: int) -> int:
        """格點研究中第 cell 格的種子"""
        return int(np.random.SeedSequence([master_seed, cell]).generate_state(1, dtype=np.uint64)[0])

    def _generator(self, replication: int) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, replication])

    def _draw_dataset(self, rng: np.random.Generator) -> tuple[TrialDataset, int, int]:
        """產生一次試驗資料；回傳 (資料, 空組重抽次數, 世代重抽次數)"""
        dgp = self.config.dgp
        redraws = 0

        if isinstance(dgp, GaussianDgpParams):
            while True:
                _, trial = SimulationService.gaussian_dgp(dgp, rng)
                if trial.n1 >= 2 and trial.n0 >= 2:
                    return trial, redraws, 0
                redraws = self._count_redraw(redraws, trial)

        cohort = SimulationService.build_resampled_cohort(dgp, rng, self._baseline_model)
        while True:
            trial = SimulationService.draw_trial(cohort, dgp.n, dgp.pi1, rng)
            if trial.n1 >= 2 and trial.n0 >= 2:
                return trial, redraws, cohort.refit_retries
            redraws = self._count_redraw(redraws, trial)

    def _count_redraw(self, redraws: int, trial: TrialDataset) -> int:
        if redraws >= self.empty_arm_retries:
            raise EmptyArm(f"重抽 {redraws} 次後仍有組別少於 2 人（n₁={trial.n1}, n₀={trial.n0}）")
        return redraws + 1

    def _run_replication(self, replication: int) -> ReplicationOutcome:
        try:
            rng = self._generator(replication)
            trial, redraws, retries = self._draw_dataset(rng)
            outcome = ReplicationOutcome(
                replication=replication, empty_arm_redraws=redraws, refit_retries=retries
            )
            for test in self.config.tests:
                report = EstimatorService.estimate(trial, EstimationMethod(test.value))
                decision = InferenceService.one_sided_test(report, self.config.design)
                outcome.estimates[test] = report.estimate
                outcome.variances[test] = report.asymptotic_variance
                outcome.rejections[test] = decision.reject
            return outcome
        except ToolkitError as e:
            if e.replication is not None:
                raise
            raise e.with_replication(replication) from e

    def _process_chunk(self, start: int, stop: int) -> list[ReplicationOutcome]:
        return [self._run_replication(r) for r in range(start, stop)]

    def _run_sequential(self) -> list[ReplicationOutcome]:
        return self._process_chunk(0, self.config.replications)

    def _run_parallel(self) -> list[ReplicationOutcome]:
        total = self.config.replications
        outcomes: list[ReplicationOutcome] = []
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = [
                executor.submit(self._process_chunk, start, min(start + self.chunk_size, total))
                for start in range(0, total, self.chunk_size)
            ]
            for future in as_completed(futures):
                outcomes.extend(future.result())
        return outcomes

    def run(self) -> PowerStudyResult:
        """執行研究並彙整各檢定的經驗檢定力"""
        config = self.config
        start_time = time.time()
        logger.info(
            f"Power study started: dgp={config.dgp.kind}, n={config.design.n}, "
            f"replications={config.replications}, seed={config.seed}"
        )

        parallel = config.replications > self.parallel_threshold and self.max_workers > 1
        outcomes = self._run_parallel() if parallel else self._run_sequential()
        # 依重複序號排序後再彙整
        outcomes.sort(key=lambda o: o.replication)

        tallies = [self._tally(test, outcomes) for test in config.tests]
        result = PowerStudyResult(
            tallies=tallies,
            replications=config.replications,
            seed=config.seed,
            empty_arm_redraws=sum(o.empty_arm_redraws for o in outcomes),
            cohort_refit_retries=sum(o.refit_retries for o in outcomes),
        )

        logger.info(
            f"Power study finished: elapsed={time.time() - start_time:.2f}s, "
            + ", ".join(f"{t.test.value}={t.power:.4f}" for t in tallies)
        )
        return result

    @staticmethod
    def _tally(test: StudyTest, outcomes: list[ReplicationOutcome]) -> StudyTally:
        replications = len(outcomes)
        estimates = np.array([o.estimates[test] for o in outcomes])
        variances = np.array([o.variances[test] for o in outcomes])
        rejections = int(sum(o.rejections[test] for o in outcomes))
        power = rejections / replications

        return StudyTally(
            test=test,
            rejections=rejections,
            replications=replications,
            power=power,
            mc_se=float(np.sqrt(power * (1.0 - power) / replications)),
            mean_estimate=float(estimates.mean()),
            sd_estimate=float(estimates.std(ddof=1)) if replications > 1 else 0.0,
            mean_variance=float(variances.mean()),
        )


def run_power_study(config: PowerStudyConfig, max_workers: int | None = None) -> PowerStudyResult:
    """執行蒙地卡羅檢定力研究"""
    return PowerStudyEngine(config, max_workers=max_workers).run()

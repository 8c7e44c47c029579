"""Tools to exercise and evaluate the mirror at desk scale.

The `bucketmirror.harness.dataset` submodule generates deterministic synthetic sequencing batches.

The `bucketmirror.harness.bench` submodule runs in-process benchmarks, compares rates with published baselines and cross-checks production figures.

The `bucketmirror.harness.cost` submodule computes transfer costs under several pricing models.

The `bucketmirror.harness.scenario` submodule crashes a running service mid-transfer and reports how it recovered.
"""

from bucketmirror.harness.bench import (
    BASELINES,
    PRODUCTION_RUNS,
    Baseline,
    BenchReport,
    BenchSettings,
    ProductionRun,
    compare_to_baselines,
    cross_check,
    parallel_speedup,
    report_benchmark,
    report_from_snapshot,
    run_benchmark,
)
from bucketmirror.harness.cost import (
    PerCPUMsPricing,
    PerGBPricing,
    SubscriptionPricing,
    compute_cost,
    savings_factor,
)
from bucketmirror.harness.dataset import DatasetSpec, content_hashes, dataset_hashes, generate_dataset
from bucketmirror.harness.scenario import ScenarioConfig, ScenarioReport, run_crash_scenario

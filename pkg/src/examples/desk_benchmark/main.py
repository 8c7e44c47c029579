import os

import util
from bucketmirror.harness import (
    PRODUCTION_RUNS,
    BenchSettings,
    DatasetSpec,
    PerCPUMsPricing,
    PerGBPricing,
    SubscriptionPricing,
    compare_to_baselines,
    compute_cost,
    cross_check,
    parallel_speedup,
    run_benchmark,
    savings_factor,
)
from bucketmirror.harness.bench import REFERENCE_BYTES


def main(args):
    for fn in [args.save_speedup, args.save_baselines, args.save_summary]:
        os.makedirs(os.path.dirname(fn) or ".", exist_ok=True)

    spec = DatasetSpec(args.num_files, args.file_size, seed=args.seed)
    levels = [int(level) for level in args.levels.split(",")]
    settings = BenchSettings(
        concurrency=max(levels),
        file_parallelism=args.file_parallelism,
        part_size=args.part_size,
        latency=args.latency,
    )

    ##########################################################################
    # Throughput
    ##########################################################################

    speedup = parallel_speedup(spec, levels, settings, progress=True)
    util.save_table(args.save_speedup, speedup)

    report = run_benchmark(spec, settings)
    baselines = compare_to_baselines(report)
    util.save_table(args.save_baselines, baselines)

    ##########################################################################
    # Cost of the reference batch
    ##########################################################################

    per_gb = compute_cost(REFERENCE_BYTES, PerGBPricing())
    per_cpu = compute_cost(args.cpu_ms, PerCPUMsPricing())
    subscription = compute_cost(REFERENCE_BYTES, SubscriptionPricing())

    util.save_summary(
        args.save_summary,
        {
            "dataset": spec.to_dict(),
            "desk_run": {
                "files": report.files,
                "bytes": report.bytes_total,
                "seconds": round(report.duration, 3),
                "rate_mib_s": round(report.rate / 2**20, 1),
                "max_inflight": report.max_inflight_observed,
            },
            "cost_usd": {
                "per_gb": str(per_gb),
                "per_cpu_ms": str(per_cpu),
                "subscription": str(subscription),
                "savings_factor": str(savings_factor(per_gb, per_cpu)),
            },
            "production": {
                run.name: {
                    "minutes": round(check.minutes, 1),
                    "rate_gb_s": round(check.rate_gb_s, 2),
                }
                for run, check in ((run, cross_check(run)) for run in PRODUCTION_RUNS)
            },
        },
    )

    print("Done.")


if __name__ == "__main__":
    args = util.get_args()

    main(args)

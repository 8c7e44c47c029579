import argparse

import pandas as pd
import yaml

from bucketmirror.cli import parse_size_range
from bucketmirror.objects import parse_size


def save_table(fn: str, df: pd.DataFrame) -> None:
    """Save a table to CSV and echo it."""
    df.to_csv(fn, index=False)
    print(df.to_string(index=False))


def save_summary(fn: str, summary: dict) -> None:
    with open(fn, "w") as outfile:
        yaml.safe_dump(summary, outfile, sort_keys=False)


def get_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser()
    parser.add_argument("--seed", type=int, default=42, help="Seed of the synthetic dataset.")
    parser.add_argument("--num_files", type=int, default=32, help="Number of files to mirror.")
    parser.add_argument(
        "--file_size",
        type=parse_size_range,
        default="1MiB:4MiB",
        help="Bytes per file, fixed or low:high.",
    )
    parser.add_argument("--part_size", type=parse_size, default="256KiB", help="Bytes per part copy.")
    parser.add_argument("--file_parallelism", type=int, default=4, help="Concurrent part copies per file.")
    parser.add_argument(
        "--levels",
        type=str,
        default="1,2,4,8",
        help="Comma-separated file concurrency levels to compare.",
    )
    parser.add_argument(
        "--latency",
        type=float,
        default=0.01,
        help="Simulated seconds per object store request.",
    )
    parser.add_argument("--cpu_ms", type=int, default=2_000_000, help="CPU milliseconds billed for the reference batch.")
    parser.add_argument("--save_speedup", type=str, default="outputs/default/speedup.csv")
    parser.add_argument("--save_baselines", type=str, default="outputs/default/baselines.csv")
    parser.add_argument("--save_summary", type=str, default="outputs/default/summary.yml")
    return parser.parse_args()

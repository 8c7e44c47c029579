"""Command line of bucketmirror.

    bucketmirror serve --config mirror.yml
    bucketmirror gen-dataset reads-src --files 64 --size 8MiB:32MiB
    bucketmirror transfer reads-src reads-dst --all --wait
    bucketmirror status 3f2b0c1e-...
    bucketmirror bench --files 32 --size 2MiB --levels 1,2,4,8
    bucketmirror crash-test --scenario scenario.yml
    bucketmirror cleanup reads-dst

Every subcommand exits 0 on success and 1 with a one-line diagnostic on failure.
"""

import argparse
import json
import sys
from typing import Any, Optional

import pandas as pd
from loguru import logger

from bucketmirror.config import MirrorConfig, load_config
from bucketmirror.errors import MirrorError, WorkflowNotFoundError
from bucketmirror.harness.bench import (
    BenchSettings,
    compare_to_baselines,
    parallel_speedup,
    run_benchmark,
)
from bucketmirror.harness.dataset import DatasetSpec, generate_dataset
from bucketmirror.harness.scenario import ScenarioConfig, run_crash_scenario
from bucketmirror.log import configure_logging
from bucketmirror.objects.base import parse_size
from bucketmirror.objects.simulated import SimulatedObjectStore
from bucketmirror.service.client import MirrorClient
from bucketmirror.service.server import MirrorService, build_object_store
from bucketmirror.transfer.engine import cleanup_leaks
from bucketmirror.transfer.tasks import TransferRequest, TransferStatusSnapshot

EXIT_OK = 0
EXIT_FAILED = 1


def parse_size_range(text: str):
    """"2MiB" is a fixed size, "1MiB:4MiB" an inclusive range."""
    if ":" in text:
        low, high = text.split(":", 1)
        return (parse_size(low), parse_size(high))
    return parse_size(text)


def emit(data: Any, as_json: bool, text: str) -> None:
    print(json.dumps(data, indent=2, default=str) if as_json else text)


def render_status(snapshot: TransferStatusSnapshot) -> str:
    """A human-readable rendering of a status snapshot."""
    counts = ", ".join(f"{name} {count}" for name, count in snapshot.counts.items())
    lines = [
        f"transfer {snapshot.workflow_id}: {'complete' if snapshot.complete else 'running'}",
        f"files: {counts}",
        f"bytes: {snapshot.bytes_done} / {snapshot.bytes_total}",
        f"elapsed: {snapshot.elapsed:.1f} s, rate {snapshot.overall_rate / 2**20:.1f} MiB/s",
    ]
    if snapshot.failed:
        failed = pd.DataFrame(
            [(task.key, task.attempts, task.error) for task in snapshot.failed],
            columns=["key", "attempts", "error"],
        )
        lines += ["failed:", failed.to_string(index=False)]
    return "\n".join(lines)


##############################################################################
# Subcommands
##############################################################################


def cmd_serve(args, config: MirrorConfig) -> int:
    MirrorService(config).serve()
    return EXIT_OK


def cmd_gen_dataset(args, config: MirrorConfig) -> int:
    spec = DatasetSpec(args.files, parse_size_range(args.size), seed=args.seed, prefix=args.prefix)
    objects = SimulatedObjectStore(config.sim_root)
    try:
        keys = generate_dataset(spec, objects, args.bucket, progress=not args.json)
    finally:
        objects.close()
    emit(
        {"bucket": args.bucket, "keys": keys, "bytes_total": spec.bytes_total},
        args.json,
        f"wrote {len(keys)} files ({spec.bytes_total} bytes) to {args.bucket}",
    )
    return EXIT_OK


def _request_keys(args, config: MirrorConfig) -> list[str]:
    keys = list(args.keys)
    if args.keys_file:
        with open(args.keys_file, "r") as f:
            keys += [line.strip() for line in f if line.strip()]
    if args.all:
        objects = build_object_store(config)
        try:
            keys += objects.list_objects(args.source_bucket, args.prefix)
        finally:
            objects.close()
    return keys


def cmd_transfer(args, config: MirrorConfig) -> int:
    request = TransferRequest(
        args.source_bucket,
        args.dest_bucket,
        tuple(_request_keys(args, config)),
        dest_prefix=args.dest_prefix,
        part_size=config.part_size if args.part_size is None else args.part_size,
        file_parallelism=config.file_parallelism if args.file_parallelism is None else args.file_parallelism,
    )
    client = MirrorClient(args.url or config.base_url)
    workflow_id = client.start_transfer(request, args.workflow_id)
    if not args.wait:
        emit({"workflow_id": workflow_id}, args.json, workflow_id)
        return EXIT_OK
    snapshot = client.wait(workflow_id, poll_interval=args.poll_interval, timeout=args.timeout)
    emit(snapshot.to_dict(), args.json, render_status(snapshot))
    if snapshot.failed:
        print(
            f"error: {len(snapshot.failed)} file(s) failed: {', '.join(t.key for t in snapshot.failed)}",
            file=sys.stderr,
        )
        return EXIT_FAILED
    return EXIT_OK


def cmd_status(args, config: MirrorConfig) -> int:
    snapshot = MirrorClient(args.url or config.base_url).transfer_status(args.workflow_id)
    emit(snapshot.to_dict(), args.json, render_status(snapshot))
    return EXIT_OK


def cmd_bench(args, config: MirrorConfig) -> int:
    spec = DatasetSpec(args.files, parse_size_range(args.size), seed=args.seed)
    settings = BenchSettings(
        concurrency=args.concurrency,
        file_parallelism=args.file_parallelism,
        part_size=args.part_size,
        latency=args.latency,
        max_inflight=args.max_inflight,
    )
    if args.levels:
        levels = [int(level) for level in args.levels.split(",")]
        df = parallel_speedup(spec, levels, settings, progress=not args.json)
        emit(df.to_dict(orient="records"), args.json, df.to_string(index=False))
        return EXIT_OK
    report = run_benchmark(spec, settings)
    baselines = compare_to_baselines(report)
    emit(
        {"report": report.to_dict(), "baselines": baselines.to_dict(orient="records")},
        args.json,
        "\n\n".join(
            [
                report.table(),
                baselines[["method", "rate_gib_s", "duration_readable", "speedup"]].to_string(index=False),
            ]
        ),
    )
    return EXIT_OK


def cmd_crash_test(args, config: MirrorConfig) -> int:
    scenario = ScenarioConfig.from_yaml(args.scenario) if args.scenario else ScenarioConfig()
    if args.kill_after is not None:
        scenario.kill_after = [int(n) for n in args.kill_after.split(",")]
    if args.workdir:
        scenario.workdir = args.workdir
    report = run_crash_scenario(scenario)

    duplicated = sorted(key for key in report.pre_crash_success if report.copy_counts.get(key, 0) != 1)
    lines = [
        render_status(report.final),
        f"crashes: {len(report.crashes)}",
        f"succeeded before a crash: {len(report.pre_crash_success)}",
        f"re-executed: {len(report.re_executed)}",
        f"repeated copies of completed files: {len(duplicated)}",
        f"leaked uploads: {report.leaked_uploads}",
        f"duration: {report.duration:.1f} s",
    ]
    emit(report.to_dict(), args.json, "\n".join(lines))
    if report.final.failed or duplicated:
        print(
            f"error: {len(report.final.failed)} failed file(s), {len(duplicated)} repeated copies",
            file=sys.stderr,
        )
        return EXIT_FAILED
    return EXIT_OK


def cmd_cleanup(args, config: MirrorConfig) -> int:
    objects = build_object_store(config)
    try:
        aborted = cleanup_leaks(objects, args.bucket)
    finally:
        objects.close()
    emit({"bucket": args.bucket, "aborted": aborted}, args.json, f"aborted {aborted} incomplete upload(s)")
    return EXIT_OK


##############################################################################
# Parser
##############################################################################


def get_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bucketmirror",
        description="Durable, parallel server-side mirroring of object store buckets.",
    )
    parser.add_argument("--config", type=str, help="YAML configuration file (default: $MIRROR_CONFIG).")
    parser.add_argument("--db", type=str, help="Path of the durable store.")
    parser.add_argument("--listen", type=str, help="host:port of the HTTP API.")
    parser.add_argument("--backend", type=str, choices=["simulated", "wire"], help="Object store backend.")
    parser.add_argument("--sim-root", dest="sim_root", type=str, help="Directory of the simulated store.")
    parser.add_argument("--worker-id", dest="worker_id", type=str, help="Id of this worker.")
    parser.add_argument(
        "--test-mode",
        dest="test_mode",
        action="store_true",
        default=None,
        help="Enable the crash endpoint.",
    )
    parser.add_argument("--log-level", dest="log_level", type=str, help="Minimum log level, e.g. DEBUG.")
    parser.add_argument(
        "--log-json",
        dest="log_json",
        action="store_true",
        default=None,
        help="Log one JSON object per line.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    serve = subparsers.add_parser("serve", help="Run a worker and its HTTP API.")
    serve.add_argument("--concurrency", type=int, help="Files copied at once across all workers.")
    serve.add_argument(
        "--worker-concurrency", dest="worker_concurrency", type=int, help="Files copied at once by this worker."
    )
    serve.add_argument("--global-max-inflight", dest="global_max_inflight", type=int, help="In-flight write budget.")
    serve.add_argument("--per-worker-share", dest="per_worker_share", type=int, help="This worker's share of it.")
    serve.add_argument("--part-size", dest="part_size", type=parse_size, help="Default bytes per part, e.g. 16MiB.")
    serve.add_argument(
        "--file-parallelism", dest="file_parallelism", type=int, help="Default concurrent part copies per file."
    )
    serve.set_defaults(func=cmd_serve)

    gen = subparsers.add_parser("gen-dataset", help="Write a synthetic dataset into the simulated store.")
    gen.add_argument("bucket", type=str)
    gen.add_argument("--files", type=int, default=64, help="Number of files.")
    gen.add_argument("--size", type=str, default="8MiB:32MiB", help="Bytes per file, fixed or low:high.")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--prefix", type=str, default="reads/")
    gen.add_argument("--json", action="store_true")
    gen.set_defaults(func=cmd_gen_dataset)

    transfer = subparsers.add_parser("transfer", help="Start a transfer through a running service.")
    transfer.add_argument("source_bucket", type=str)
    transfer.add_argument("dest_bucket", type=str)
    transfer.add_argument("keys", nargs="*", help="Keys to copy.")
    transfer.add_argument("--keys-file", dest="keys_file", type=str, help="File with one key per line.")
    transfer.add_argument("--all", action="store_true", help="Copy every object under --prefix.")
    transfer.add_argument("--prefix", type=str, default="", help="Source prefix listed by --all.")
    transfer.add_argument("--dest-prefix", dest="dest_prefix", type=str, default="")
    transfer.add_argument("--part-size", dest="part_size", type=parse_size)
    transfer.add_argument("--file-parallelism", dest="file_parallelism", type=int)
    transfer.add_argument("--workflow-id", dest="workflow_id", type=str, help="Idempotency key of the transfer.")
    transfer.add_argument("--url", type=str, help="Base URL of the service (default: from --listen).")
    transfer.add_argument("--wait", action="store_true", help="Block until every file is terminal.")
    transfer.add_argument("--poll-interval", dest="poll_interval", type=float, default=1.0)
    transfer.add_argument("--timeout", type=float, default=None)
    transfer.add_argument("--json", action="store_true")
    transfer.set_defaults(func=cmd_transfer)

    status = subparsers.add_parser("status", help="Show the status of a transfer.")
    status.add_argument("workflow_id", type=str)
    status.add_argument("--url", type=str)
    status.add_argument("--json", action="store_true")
    status.set_defaults(func=cmd_status)

    bench = subparsers.add_parser("bench", help="Run an in-process desk benchmark.")
    bench.add_argument("--files", type=int, default=32)
    bench.add_argument("--size", type=str, default="8MiB")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--concurrency", type=int, default=8)
    bench.add_argument("--file-parallelism", dest="file_parallelism", type=int, default=4)
    bench.add_argument("--part-size", dest="part_size", type=parse_size, default="8MiB")
    bench.add_argument("--latency", type=float, default=0.0, help="Simulated seconds per request.")
    bench.add_argument("--max-inflight", dest="max_inflight", type=int, default=64)
    bench.add_argument("--levels", type=str, help="Comma-separated concurrency levels for a speedup table.")
    bench.add_argument("--json", action="store_true")
    bench.set_defaults(func=cmd_bench)

    crash = subparsers.add_parser("crash-test", help="Crash a service mid-transfer and check its recovery.")
    crash.add_argument("--scenario", type=str, help="YAML scenario file.")
    crash.add_argument("--kill-after", dest="kill_after", type=str, help="Comma-separated success thresholds.")
    crash.add_argument("--workdir", type=str)
    crash.add_argument("--json", action="store_true")
    crash.set_defaults(func=cmd_crash_test)

    cleanup = subparsers.add_parser("cleanup", help="Abort incomplete multipart uploads in a bucket.")
    cleanup.add_argument("bucket", type=str)
    cleanup.add_argument("--json", action="store_true")
    cleanup.set_defaults(func=cmd_cleanup)

    return parser


_OVERRIDES = (
    "db",
    "listen",
    "backend",
    "sim_root",
    "worker_id",
    "test_mode",
    "log_level",
    "log_json",
    "concurrency",
    "worker_concurrency",
    "global_max_inflight",
    "per_worker_share",
)


def main(argv: Optional[list[str]] = None) -> int:
    args = get_parser().parse_args(argv)
    overrides = {name: getattr(args, name, None) for name in _OVERRIDES}
    if args.command == "serve":
        overrides["part_size"] = args.part_size
        overrides["file_parallelism"] = args.file_parallelism
    try:
        config = load_config(args.config, overrides)
        configure_logging(config.log_level, config.log_json)
        return args.func(args, config)
    except WorkflowNotFoundError as e:
        print(f"error: not found: {e}", file=sys.stderr)
        return EXIT_FAILED
    except (MirrorError, ValueError, OSError, TimeoutError) as e:
        logger.debug("{} failed: {!r}", args.command, e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILED
    except KeyboardInterrupt:
        return EXIT_FAILED

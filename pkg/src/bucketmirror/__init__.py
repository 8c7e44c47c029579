"""Durable, parallel server-side mirroring of object store buckets.

The `bucketmirror.durable` subpackage is a small durable execution runtime: workflows, steps and queues checkpointed in SQLite.

The `bucketmirror.objects` subpackage abstracts the object store, with a simulated backend and an S3-compatible one.

The `bucketmirror.transfer` subpackage copies batches of objects with multipart part copies, retries and a global request throttle.

The `bucketmirror.service` subpackage exposes transfers over HTTP.

The `bucketmirror.harness` subpackage generates datasets, runs benchmarks and crash scenarios, and computes costs.
"""

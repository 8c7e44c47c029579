"""Runnable examples of bucketmirror.

See `examples.desk_benchmark`.
"""

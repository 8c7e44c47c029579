"""Deterministic synthetic datasets: the same seed always yields the same keys, sizes and bytes."""

import hashlib
from dataclasses import dataclass
from typing import Union

import numpy as np
from tqdm import tqdm

from bucketmirror.objects.base import MiB, ObjectRef, parse_size
from bucketmirror.objects.simulated import SimulatedObjectStore

Size = Union[int, tuple[int, int]]


@dataclass(frozen=True)
class DatasetSpec:
    """A batch of synthetic sequencing files.

    Attributes:
        file_count: number of files.

        size: bytes per file, fixed or a (low, high) inclusive uniform range.

        seed: seed of sizes and contents.

        prefix: key prefix of every file.
    """

    file_count: int = 64
    size: Size = (8 * MiB, 32 * MiB)
    seed: int = 0
    prefix: str = "reads/"

    def __post_init__(self):
        if self.file_count < 0:
            raise ValueError(f"file_count must be non-negative, got {self.file_count}")
        if isinstance(self.size, (list, tuple)):
            low, high = self.size
            if not 0 <= low <= high:
                raise ValueError(f"size range must satisfy 0 <= low <= high, got {self.size}")
            object.__setattr__(self, "size", (int(low), int(high)))
        elif self.size < 0:
            raise ValueError(f"size must be non-negative, got {self.size}")

    def keys(self) -> list[str]:
        return [f"{self.prefix}sample_{i:04d}.fastq.gz" for i in range(self.file_count)]

    def sizes(self) -> list[int]:
        if isinstance(self.size, tuple):
            rng = np.random.default_rng(self.seed)
            low, high = self.size
            return [int(s) for s in rng.integers(low, high, size=self.file_count, endpoint=True)]
        return [self.size] * self.file_count

    def content(self, index: int, size: int) -> bytes:
        return np.random.default_rng([self.seed, index]).bytes(size)

    @property
    def bytes_total(self) -> int:
        return sum(self.sizes())

    def to_dict(self) -> dict:
        return {
            "file_count": self.file_count,
            "size": list(self.size) if isinstance(self.size, tuple) else self.size,
            "seed": self.seed,
            "prefix": self.prefix,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetSpec":
        size = data.get("size", cls.size)
        return cls(
            file_count=int(data.get("file_count", cls.file_count)),
            size=tuple(parse_size(s) for s in size) if isinstance(size, (list, tuple)) else parse_size(size),
            seed=int(data.get("seed", 0)),
            prefix=data.get("prefix", "reads/"),
        )


def generate_dataset(
    spec: DatasetSpec,
    store: SimulatedObjectStore,
    bucket: str,
    progress: bool = False,
) -> list[str]:
    """Write the dataset into `bucket` (created if missing) and return its keys in order."""
    store.create_bucket(bucket)
    keys = spec.keys()
    for index, (key, size) in enumerate(
        tqdm(list(zip(keys, spec.sizes())), desc="dataset", disable=not progress)
    ):
        store.put_object(ObjectRef(bucket, key), spec.content(index, size))
    return keys


def content_hashes(store: SimulatedObjectStore, bucket: str, keys: list[str]) -> dict[str, str]:
    """SHA-256 of each object."""
    return {key: store.content_hash(ObjectRef(bucket, key)) for key in keys}


def dataset_hashes(spec: DatasetSpec) -> dict[str, str]:
    """SHA-256 of each file of `spec`, computed without a store."""
    return {
        key: hashlib.sha256(spec.content(index, size)).hexdigest()
        for index, (key, size) in enumerate(zip(spec.keys(), spec.sizes()))
    }

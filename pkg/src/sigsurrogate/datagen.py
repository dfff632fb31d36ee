"""Labeled datasets of (signal setting, red-wait seconds) pairs.

File format: one record per line, the ``C`` integer offsets followed by the
label, single-space separated, no header::

    3 119 42.0
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .microsim import SimConfig, batch_simulate
from .netmodel import RoadNetwork, random_setting, validate_setting
from .seeding import mix_seed


class DatasetFormatError(ValueError):
    """Raised for unreadable or inconsistent dataset files."""


@dataclass(frozen=True)
class LabeledRecord:
    setting: tuple[int, ...]
    wait_s: float

    def __post_init__(self):
        if not self.wait_s >= 0:
            raise ValueError(f"wait_s must be nonnegative, got {self.wait_s}")


class Dataset:
    """Column-oriented record sequence: ``settings`` is ``(n, C)`` int64, ``waits`` is ``(n,)`` float64."""

    def __init__(self, settings, waits):
        settings = np.asarray(settings, dtype=np.int64)
        waits = np.asarray(waits, dtype=np.float64)
        if settings.ndim != 2 or waits.shape != (settings.shape[0],):
            raise ValueError(f"shape mismatch: settings {settings.shape}, waits {waits.shape}")
        if np.any(waits < 0):
            raise ValueError("labels must be nonnegative")
        self.settings = settings
        self.waits = waits

    @classmethod
    def from_records(cls, records) -> "Dataset":
        records = list(records)
        if not records:
            raise ValueError("no records")
        return cls([r.setting for r in records], [r.wait_s for r in records])

    @property
    def n_intersections(self) -> int:
        return self.settings.shape[1]

    def __len__(self):
        return len(self.waits)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Dataset(self.settings[i], self.waits[i])
        return LabeledRecord(tuple(int(o) for o in self.settings[i]), float(self.waits[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        return (
            isinstance(other, Dataset)
            and np.array_equal(self.settings, other.settings)
            and np.array_equal(self.waits, other.waits)
        )

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(np.vstack([self.settings, other.settings]), np.concatenate([self.waits, other.waits]))


@dataclass(frozen=True)
class DatasetSplit:
    train: Dataset
    test: Dataset


def record_setting(C: int, seed: int, i: int) -> np.ndarray:
    """Setting of record ``i``; independent of how many records are generated."""
    return random_setting(C, mix_seed(seed, i))


def generate_dataset(network: RoadNetwork, config: SimConfig, n: int, seed: int, workers: int = 1) -> Dataset:
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    C = network.n_intersections
    settings = np.array([record_setting(C, seed, i) for i in range(n)], dtype=np.int64)
    results = batch_simulate(network, settings, config, workers)
    return Dataset(settings, [r.total_red_wait_s for r in results])


def prefix_split(records: Dataset, train_n: int) -> DatasetSplit:
    if not 0 < train_n < len(records):
        raise ValueError(f"train_n must satisfy 0 < train_n < {len(records)}, got {train_n}")
    return DatasetSplit(records[:train_n], records[train_n:])


def format_record(setting, wait_s: float) -> str:
    return " ".join(str(int(o)) for o in setting) + " " + repr(float(wait_s))


def write_dataset(records: Dataset, path) -> None:
    lines = [format_record(s, w) for s, w in zip(records.settings, records.waits)]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_dataset(path, n_intersections: int | None = None) -> Dataset:
    """Parse a dataset file; ``n_intersections`` pins the expected ``C``, else the first line sets it."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    settings, waits = [], []
    width = None if n_intersections is None else n_intersections + 1
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if width is None:
                if len(fields) < 2:
                    raise DatasetFormatError(f"{path}:{lineno}: need at least one offset and a label")
                width = len(fields)
            if len(fields) != width:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected {width} fields ({width - 1} offsets + label), got {len(fields)}"
                )
            try:
                offsets = [int(f) for f in fields[:-1]]
                label = float(fields[-1])
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
            try:
                validate_setting(offsets)
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
            if not label >= 0:
                raise DatasetFormatError(f"{path}:{lineno}: label must be nonnegative")
            settings.append(offsets)
            waits.append(label)
    if not settings:
        raise DatasetFormatError(f"{path}: no records")
    return Dataset(settings, waits)

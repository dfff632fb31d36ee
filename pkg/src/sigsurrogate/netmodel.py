"""Road network, signal plans and the offset-vector representation.

A network is a ``rows x cols`` grid of signalized intersections joined by
single-lane cell arrays running in both directions.  Every boundary
intersection gets an inbound source segment and an outbound sink segment on
each of its open sides, so a 1x1 grid has four of each.

A signal setting is a plain integer array of length ``C`` (one offset per
intersection, seconds within the cycle).  Arrays are used rather than a
wrapper class because settings flow in bulk through the GA and surrogates.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .seeding import derive_rng

CYCLE_S = 120
CELL_LENGTH_M = 7.5
CONFIG_FORMAT_VERSION = 1

# Travel directions; index into RoadNetwork.out_segment's second axis.
EAST, WEST, NORTH, SOUTH = 0, 1, 2, 3
REVERSE = (WEST, EAST, SOUTH, NORTH)
DIRECTION_NAMES = ("E", "W", "N", "S")
# Approach axes.
AXIS_NS, AXIS_EW = 0, 1
_STEP = {EAST: (0, 1), WEST: (0, -1), NORTH: (-1, 0), SOUTH: (1, 0)}

BOUNDARY = -1


class DimensionError(ValueError):
    """A signal setting does not match the network's intersection count."""


@dataclass(frozen=True)
class SignalPlan:
    """Two-phase fixed-time plan: NS green first, then EW green."""

    cycle_s: int
    green_ns_s: int
    offset_s: int

    def __post_init__(self):
        if not 0 < self.green_ns_s < self.cycle_s:
            raise ValueError(f"green_ns_s must lie in (0, {self.cycle_s}), got {self.green_ns_s}")
        if not 0 <= self.offset_s < self.cycle_s:
            raise ValueError(f"offset_s must lie in [0, {self.cycle_s}), got {self.offset_s}")

    def ns_green(self, t: int) -> bool:
        return (t - self.offset_s) % self.cycle_s < self.green_ns_s

    def green_for(self, axis: int, t: int) -> bool:
        return self.ns_green(t) == (axis == AXIS_NS)


@dataclass(frozen=True)
class NetworkConfig:
    rows: int = 3
    cols: int = 7
    segment_cells: int = 20
    injection_prob: float = 0.15
    green_ns_s: int = 60
    cycle_s: int = CYCLE_S
    format_version: int = CONFIG_FORMAT_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        version = d.get("format_version", CONFIG_FORMAT_VERSION)
        if version != CONFIG_FORMAT_VERSION:
            raise ValueError(f"unsupported network config format_version {version}")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**d)

    def build(self) -> "RoadNetwork":
        return build_grid_network(
            self.rows, self.cols, self.segment_cells, self.injection_prob,
            green_ns_s=self.green_ns_s, cycle_s=self.cycle_s,
        )


def save_network_config(config: NetworkConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")


def load_network_config(path) -> NetworkConfig:
    return NetworkConfig.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class RoadNetwork:
    """Immutable grid network in array form, ready for the simulation kernel.

    Segment ``s`` runs from ``seg_tail[s]`` to ``seg_head[s]`` (intersection
    indices, ``BOUNDARY`` for the grid edge) in direction ``seg_dir[s]``.
    ``out_segment[n, d]`` is the segment leaving intersection ``n`` in
    direction ``d``.
    """

    config: NetworkConfig
    coords: np.ndarray
    seg_tail: np.ndarray
    seg_head: np.ndarray
    seg_dir: np.ndarray
    out_segment: np.ndarray
    sources: np.ndarray
    sinks: np.ndarray

    def __post_init__(self):
        for name in ("coords", "seg_tail", "seg_head", "seg_dir", "out_segment", "sources", "sinks"):
            getattr(self, name).setflags(write=False)

    @property
    def n_intersections(self) -> int:
        return len(self.coords)

    @property
    def n_segments(self) -> int:
        return len(self.seg_dir)

    @property
    def segment_cells(self) -> int:
        return self.config.segment_cells

    @property
    def injection_prob(self) -> float:
        return self.config.injection_prob

    @property
    def seg_axis(self) -> np.ndarray:
        return np.where(self.seg_dir >= NORTH, AXIS_NS, AXIS_EW).astype(np.int64)

    def plans(self, setting) -> list[SignalPlan]:
        """Per-intersection plans with offsets taken from ``setting`` by index."""
        offsets = validate_setting(setting, self.n_intersections)
        return [SignalPlan(self.config.cycle_s, self.config.green_ns_s, int(o)) for o in offsets]

    def with_injection_prob(self, p: float) -> "RoadNetwork":
        cfg = NetworkConfig(**{**self.config.to_dict(), "injection_prob": p})
        return cfg.build()

    def structure(self) -> tuple:
        """Hashable structural fingerprint; equal networks give equal tuples."""
        return (
            tuple(self.config.to_dict().items()),
            self.coords.tobytes(), self.seg_tail.tobytes(), self.seg_head.tobytes(),
            self.seg_dir.tobytes(), self.out_segment.tobytes(),
            self.sources.tobytes(), self.sinks.tobytes(),
        )

    def is_connected(self) -> bool:
        """Weak connectivity over intersections plus boundary endpoints."""
        n = self.n_intersections
        parent = list(range(n + 1))  # index n stands for the boundary

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for t, h in zip(self.seg_tail, self.seg_head):
            a = n if t == BOUNDARY else int(t)
            b = n if h == BOUNDARY else int(h)
            parent[find(a)] = find(b)
        return len({find(i) for i in range(n + 1)}) == 1


def build_grid_network(
    rows: int,
    cols: int,
    segment_cells: int,
    injection_prob: float,
    *,
    green_ns_s: int = 60,
    cycle_s: int = CYCLE_S,
) -> RoadNetwork:
    """Build a ``rows x cols`` grid; intersection ``r*cols + c`` sits at (r, c)."""
    if rows < 1 or cols < 1:
        raise ValueError(f"grid dimensions must be positive, got {rows}x{cols}")
    if segment_cells < 2:
        raise ValueError(f"segment_cells must be >= 2, got {segment_cells}")
    if not 0.0 <= injection_prob <= 1.0:
        raise ValueError(f"injection_prob must lie in [0, 1], got {injection_prob}")
    config = NetworkConfig(rows, cols, segment_cells, float(injection_prob), green_ns_s, cycle_s)
    SignalPlan(cycle_s, green_ns_s, 0)  # validates the split

    n = rows * cols
    coords = np.array([(r, c) for r in range(rows) for c in range(cols)], dtype=np.int64)
    tails, heads, dirs = [], [], []
    out_segment = np.full((n, 4), -1, dtype=np.int64)
    sources, sinks = [], []

    def add(tail, head, d):
        tails.append(tail)
        heads.append(head)
        dirs.append(d)
        return len(dirs) - 1

    for node in range(n):
        r, c = divmod(node, cols)
        for d in (EAST, WEST, NORTH, SOUTH):
            dr, dc = _STEP[d]
            rr, cc = r + dr, c + dc
            if 0 <= rr < rows and 0 <= cc < cols:
                out_segment[node, d] = add(node, rr * cols + cc, d)
            else:
                s = add(node, BOUNDARY, d)
                out_segment[node, d] = s
                sinks.append(s)
                # Traffic entering from this open side travels the other way.
                sources.append(add(BOUNDARY, node, REVERSE[d]))

    return RoadNetwork(
        config=config,
        coords=coords,
        seg_tail=np.array(tails, dtype=np.int64),
        seg_head=np.array(heads, dtype=np.int64),
        seg_dir=np.array(dirs, dtype=np.int64),
        out_segment=out_segment,
        sources=np.array(sources, dtype=np.int64),
        sinks=np.array(sinks, dtype=np.int64),
    )


def validate_setting(setting, n_intersections: int | None = None) -> np.ndarray:
    """Return ``setting`` as an int64 array, checking length and offset range."""
    arr = np.asarray(setting)
    if arr.ndim != 1:
        raise DimensionError(f"a signal setting is one-dimensional, got shape {arr.shape}")
    if n_intersections is not None and arr.shape[0] != n_intersections:
        raise DimensionError(f"setting has {arr.shape[0]} offsets, network has {n_intersections} intersections")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.round(arr)):
            raise ValueError("offsets must be integers")
    arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= CYCLE_S):
        raise ValueError(f"offsets must lie in [0, {CYCLE_S - 1}]")
    return arr


def random_setting(C: int, seed: int) -> np.ndarray:
    """Uniform independent offsets in ``{0, ..., 119}``, reproducible from ``seed``."""
    if C < 1:
        raise ValueError(f"C must be positive, got {C}")
    return derive_rng(seed).integers(0, CYCLE_S, size=C, dtype=np.int64)

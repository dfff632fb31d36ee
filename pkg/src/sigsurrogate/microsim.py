"""Cellular-automaton traffic simulation: the expensive oracle.

Each simulated second applies the Nagel-Schreckenberg rules to every vehicle
(accelerate, brake to the gap, random slowdown, move) on single-lane segments
of ``segment_cells`` cells.  The leader of a segment also sees its stop line:
on red the stop-line cell is the end of the road, on green the free cells at
the start of its chosen outgoing segment are added to the gap.  All vehicles
update in parallel from the start-of-second state; vehicles crossing into the
same outgoing segment in one second are admitted in segment-index order.

The metric is total red wait: one vehicle-second for every post-warmup second
in which a vehicle has speed 0 and the signal at the head of its segment is
red for its approach.

Randomness is counter-based.  Every draw is a SplitMix64 hash of
``(seed, purpose, key, counter)`` mapped to [0, 1):

* injection at source ``i`` in second ``t``: ``(1, t, i)``;
* route choice of vehicle ``id`` at its ``k``-th intersection: ``(2, id, k)``;
* random slowdown of vehicle ``id`` in second ``t``: ``(3, id, t)``.

A vehicle injected by source ``i`` in second ``t`` has ``id = t * n_sources + i``.
Draws therefore do not depend on evaluation order, and two settings simulated
with the same seed see the same demand, the same routes and the same slowdown
coin flips, so label differences come from the offsets.

Scheduled injections (used for hand-checkable cases) are placed after the
random ones, with ids ``horizon * n_sources + j``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numba
import numpy as np

from .netmodel import AXIS_NS, DimensionError, RoadNetwork, validate_setting
from .seeding import mix_seed

_INJECT, _ROUTE, _SLOW = 1, 2, 3


@dataclass(frozen=True)
class SimConfig:
    horizon_s: int = 1200
    warmup_s: int = 240
    v_max: int = 5
    p_brake: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.horizon_s < 1:
            raise ValueError("horizon_s must be positive")
        if not 0 <= self.warmup_s < self.horizon_s:
            raise ValueError("warmup_s must satisfy 0 <= warmup_s < horizon_s")
        if self.v_max < 1:
            raise ValueError("v_max must be positive")
        if not 0.0 <= self.p_brake < 1.0:
            raise ValueError("p_brake must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        return cls(**d)


@dataclass(frozen=True)
class SimResult:
    total_red_wait_s: int
    vehicles_injected: int
    vehicles_exited: int
    vehicles_on_network: int


@numba.njit(inline="always")
def _mix(x):
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


@numba.njit(inline="always")
def _uniform(seed, purpose, key, counter):
    x = _mix(seed ^ _mix(np.uint64(purpose) ^ _mix(np.uint64(key) ^ _mix(np.uint64(counter)))))
    return (x >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@numba.njit(inline="always")
def _route(out_segment, node, heading, u):
    # Uniform over the three non-U-turn exits, in direction-index order.
    k = int(u * 3.0)
    back = heading ^ 1  # E<->W, N<->S
    for d in range(4):
        if d == back:
            continue
        if k == 0:
            return out_segment[node, d]
        k -= 1
    return -1


@numba.njit(inline="always")
def _slot(head, i, L):
    j = head + i
    return j - L if j >= L else j


@numba.njit(cache=True, nogil=True)
def _simulate_kernel(
    L, seg_head, seg_is_ns, seg_dir, out_segment, sources, offsets,
    green_ns, cycle, inj_prob, horizon, warmup, v_max, p_brake, seed,
    sched_t, sched_src,
):
    n_seg = seg_head.shape[0]
    n_src = sources.shape[0]
    # Per-segment ring buffers ordered from the stop line backwards.
    pos = np.zeros((n_seg, L), np.int64)
    spd = np.zeros((n_seg, L), np.int64)
    nxt_seg = np.zeros((n_seg, L), np.int64)
    vid = np.zeros((n_seg, L), np.int64)
    turns = np.zeros((n_seg, L), np.int64)
    qh = np.zeros(n_seg, np.int64)
    qn = np.zeros(n_seg, np.int64)
    rear = np.empty(n_seg, np.int64)
    claim = np.empty(n_seg, np.int64)
    green = np.empty(n_seg, np.bool_)
    pend = np.zeros((n_seg, 5), np.int64)

    wait = 0
    injected = 0
    exited = 0
    k_sched = 0

    for t in range(horizon):
        for s in range(n_seg):
            h = seg_head[s]
            if h >= 0:
                ns = (t - offsets[h] + cycle) % cycle < green_ns
                green[s] = ns == seg_is_ns[s]
            else:
                green[s] = True
            rear[s] = pos[s, _slot(qh[s], qn[s] - 1, L)] if qn[s] > 0 else L
            claim[s] = L
        counting = t >= warmup
        n_pend = 0

        for s in range(n_seg):
            h = seg_head[s]
            ahead = -1
            left = False
            for j in range(qn[s]):
                k = _slot(qh[s], j, L)
                x = pos[s, k]
                nxt = nxt_seg[s, k]
                v = min(spd[s, k] + 1, v_max)
                if j > 0:
                    gap = ahead - x - 1
                elif h < 0:
                    gap = v_max
                elif green[s]:
                    gap = (L - 1 - x) + min(rear[nxt], claim[nxt])
                else:
                    gap = L - 1 - x
                if v > gap:
                    v = gap
                if v > 0 and p_brake > 0.0 and _uniform(seed, _SLOW, vid[s, k], t) < p_brake:
                    v -= 1
                if v == 0 and counting and not green[s]:
                    wait += 1
                ahead = x
                nx = x + v
                if nx < L:
                    pos[s, k] = nx
                    spd[s, k] = v
                else:
                    # Only a segment's leader can leave it within one second.
                    left = True
                    if h < 0:
                        exited += 1
                    else:
                        p = nx - L
                        claim[nxt] = p
                        pend[n_pend, 0] = nxt
                        pend[n_pend, 1] = p
                        pend[n_pend, 2] = v
                        pend[n_pend, 3] = vid[s, k]
                        pend[n_pend, 4] = turns[s, k]
                        n_pend += 1
            if left:
                qh[s] = _slot(qh[s], 1, L)
                qn[s] -= 1

        for i in range(n_pend):
            s = pend[i, 0]
            k = _slot(qh[s], qn[s], L)
            pos[s, k] = pend[i, 1]
            spd[s, k] = pend[i, 2]
            vid[s, k] = pend[i, 3]
            turn = pend[i, 4]
            nh = seg_head[s]
            if nh >= 0:
                nxt_seg[s, k] = _route(out_segment, nh, seg_dir[s], _uniform(seed, _ROUTE, vid[s, k], turn))
                turn += 1
            turns[s, k] = turn
            qn[s] += 1

        for i in range(n_src + sched_t.shape[0]):
            if i < n_src:
                s = sources[i]
                if _uniform(seed, _INJECT, t, i) >= inj_prob:
                    continue
                new_id = t * n_src + i
            else:
                if k_sched >= sched_t.shape[0] or sched_t[k_sched] != t:
                    break
                s = sources[sched_src[k_sched]]
                new_id = horizon * n_src + k_sched
                k_sched += 1
            if qn[s] > 0 and pos[s, _slot(qh[s], qn[s] - 1, L)] == 0:
                continue  # entry cell occupied; the arrival is lost
            k = _slot(qh[s], qn[s], L)
            pos[s, k] = 0
            spd[s, k] = 0
            vid[s, k] = new_id
            nxt_seg[s, k] = _route(out_segment, seg_head[s], seg_dir[s], _uniform(seed, _ROUTE, new_id, 0))
            turns[s, k] = 1
            qn[s] += 1
            injected += 1

    on_network = 0
    for s in range(n_seg):
        on_network += qn[s]
    return wait, injected, exited, on_network


def _kernel_args(network: RoadNetwork):
    cache = network.__dict__.get("_kernel_args")
    if cache is None:
        cache = (
            network.segment_cells,
            np.ascontiguousarray(network.seg_head),
            np.ascontiguousarray(network.seg_axis == AXIS_NS),
            np.ascontiguousarray(network.seg_dir),
            np.ascontiguousarray(network.out_segment),
            np.ascontiguousarray(network.sources),
        )
        object.__setattr__(network, "_kernel_args", cache)
    return cache


def simulate(network: RoadNetwork, setting, config: SimConfig = SimConfig(), *, injections=None) -> SimResult:
    """Run one simulation and return its red-wait metric and vehicle counts.

    ``injections`` optionally lists ``(second, source_index)`` pairs that place
    a vehicle at the entry cell of ``network.sources[source_index]`` at the end
    of that second, in addition to the random Bernoulli demand.
    """
    offsets = validate_setting(setting, network.n_intersections)
    if injections:
        sched = sorted((int(t), int(i)) for t, i in injections)
        for _, i in sched:
            if not 0 <= i < len(network.sources):
                raise IndexError(f"source index {i} out of range")
        sched_t = np.array([t for t, _ in sched], dtype=np.int64)
        sched_src = np.array([i for _, i in sched], dtype=np.int64)
    else:
        sched_t = np.zeros(0, dtype=np.int64)
        sched_src = np.zeros(0, dtype=np.int64)
    L, head, is_ns, dirs, out_seg, sources = _kernel_args(network)
    wait, injected, exited, on_net = _simulate_kernel(
        L, head, is_ns, dirs, out_seg, sources, offsets,
        network.config.green_ns_s, network.config.cycle_s, network.injection_prob,
        config.horizon_s, config.warmup_s, config.v_max, config.p_brake,
        np.uint64(mix_seed(config.seed)), sched_t, sched_src,
    )
    return SimResult(int(wait), int(injected), int(exited), int(on_net))


def batch_simulate(network: RoadNetwork, settings, config: SimConfig = SimConfig(), workers: int = 1) -> list[SimResult]:
    """Simulate every setting; element ``i`` equals ``simulate(network, settings[i], config)``.

    The kernel releases the GIL and keeps no state between calls, so worker
    threads cannot change any result.
    """
    settings = list(settings)
    for i, s in enumerate(settings):
        try:
            validate_setting(s, network.n_intersections)
        except DimensionError as exc:
            raise DimensionError(f"setting {i}: {exc}") from exc
    if workers <= 1 or len(settings) < 2:
        return [simulate(network, s, config) for s in settings]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: simulate(network, s, config), settings))


class Oracle:
    """Batch fitness wrapper: maps an ``(m, C)`` array of settings to red-wait seconds.

    Results are memoized per setting (the simulation is deterministic), and
    ``calls`` counts the simulations actually run.
    """

    def __init__(self, network: RoadNetwork, config: SimConfig = SimConfig(), workers: int = 1):
        self.network = network
        self.config = config
        self.workers = workers
        self.calls = 0
        self._memo: dict[bytes, float] = {}

    def __call__(self, settings) -> np.ndarray:
        settings = np.atleast_2d(np.asarray(settings)).astype(np.int64)
        keys = [row.tobytes() for row in settings]
        todo = {}
        for k, row in zip(keys, settings):
            if k not in self._memo and k not in todo:
                todo[k] = row
        if todo:
            results = batch_simulate(self.network, list(todo.values()), self.config, self.workers)
            self.calls += len(results)
            for k, r in zip(todo, results):
                self._memo[k] = float(r.total_red_wait_s)
        return np.array([self._memo[k] for k in keys], dtype=np.float64)

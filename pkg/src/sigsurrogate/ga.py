"""Genetic algorithm over signal-offset genotypes, with full trajectory logging.

Fitness functions are *batched*: they take an ``(m, C)`` integer array of
settings and return ``m`` values to minimize.  Surrogate models (``.predict``)
and :class:`~sigsurrogate.microsim.Oracle` already have this shape; wrap a
scalar function with :func:`pointwise`.
"""

from __future__ import annotations

import gzip
import io
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .netmodel import CYCLE_S
from .seeding import derive_rng

LOG_FORMAT_VERSION = 1


class NonFiniteFitnessError(ValueError):
    def __init__(self, setting, value):
        super().__init__(f"fitness returned {value!r} for setting {list(map(int, setting))}")
        self.setting = np.asarray(setting)
        self.value = value


@dataclass(frozen=True)
class GaConfig:
    population: int = 120
    iterations: int = 100
    selection: str = "tournament"
    tournament_k: int = 3
    crossover: str = "one_point"
    p_swap: float = 0.5
    crossover_rate: float = 0.9
    mutation_rate: float | None = None  # None means 1/C
    mutation_kind: str = "reset_uniform"
    shift_sigma: float = 10.0
    elitism: int = 2
    final_k: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.population < 1 or self.iterations < 1:
            raise ValueError("population and iterations must be positive")
        if not 0 <= self.elitism <= self.population:
            raise ValueError("elitism must lie in [0, population]")
        if self.selection not in ("tournament", "roulette"):
            raise ValueError(f"unknown selection {self.selection!r}")
        if self.selection == "tournament" and self.tournament_k < 1:
            raise ValueError("tournament_k must be positive")
        if self.crossover not in ("one_point", "uniform"):
            raise ValueError(f"unknown crossover {self.crossover!r}")
        if self.mutation_kind not in ("reset_uniform", "shift_wrapped"):
            raise ValueError(f"unknown mutation kind {self.mutation_kind!r}")
        for name in ("crossover_rate", "p_swap"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.mutation_rate is not None and not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must lie in [0, 1]")
        if self.final_k < 1:
            raise ValueError("final_k must be positive")

    def gene_rate(self, C: int) -> float:
        return 1.0 / C if self.mutation_rate is None else self.mutation_rate

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GaConfig":
        return cls(**d)

    def label(self) -> str:
        sel = f"tour{self.tournament_k}" if self.selection == "tournament" else "roul"
        cx = "1pt" if self.crossover == "one_point" else f"unif{self.p_swap:g}"
        mr = "1/C" if self.mutation_rate is None else f"{self.mutation_rate:g}"
        mk = "reset" if self.mutation_kind == "reset_uniform" else f"shift{self.shift_sigma:g}"
        return f"{sel}-{cx}-m{mr}-{mk}-e{self.elitism}-p{self.population}"


def default_grid(C: int = 21) -> list[GaConfig]:
    """The 20-configuration grid: 16 operator combinations plus 4 elitism/population variants."""
    grid = []
    for selection in ("tournament", "roulette"):
        for crossover in ("one_point", "uniform"):
            for rate in (1.0 / C, 3.0 / C):
                for kind in ("reset_uniform", "shift_wrapped"):
                    grid.append(GaConfig(selection=selection, crossover=crossover, mutation_rate=rate, mutation_kind=kind))
    base = GaConfig(mutation_rate=1.0 / C)
    grid += [
        replace(base, elitism=1),
        replace(base, elitism=8),
        replace(base, population=60),
        replace(base, population=180),
    ]
    return grid


def pointwise(f):
    """Lift a scalar ``setting -> float`` function to the batched fitness shape."""
    def batched(settings):
        return np.array([f(s) for s in np.atleast_2d(settings)], dtype=np.float64)
    batched.__name__ = getattr(f, "__name__", "pointwise")
    return batched


# ---------------------------------------------------------------- operators

def mutate_population(pop: np.ndarray, rate: float, kind: str, rng: np.random.Generator, sigma: float = 10.0) -> np.ndarray:
    hit = rng.random(pop.shape) < rate
    out = pop.copy()
    if kind == "reset_uniform":
        fresh = rng.integers(0, CYCLE_S, size=pop.shape)
        out[hit] = fresh[hit]
    elif kind == "shift_wrapped":
        shift = np.rint(rng.normal(0.0, sigma, size=pop.shape)).astype(np.int64)
        out[hit] = np.mod(out[hit] + shift[hit], CYCLE_S)
    else:
        raise ValueError(f"unknown mutation kind {kind!r}")
    return out


def mutate(setting, rate: float, kind: str, rng: np.random.Generator, sigma: float = 10.0) -> np.ndarray:
    """Mutate each gene independently with probability ``rate``; the result stays in ``[0, 119]``."""
    return mutate_population(np.asarray(setting, dtype=np.int64)[None, :], rate, kind, rng, sigma)[0]


def shift_gene(gene: int, shift: int) -> int:
    return (int(gene) + int(shift)) % CYCLE_S


def crossover_population(a: np.ndarray, b: np.ndarray, kind: str, rng: np.random.Generator, p_swap: float = 0.5, cuts=None):
    """Pairwise crossover of row ``i`` of ``a`` with row ``i`` of ``b``."""
    if a.shape != b.shape:
        raise ValueError(f"parent shapes differ: {a.shape} vs {b.shape}")
    m, C = a.shape
    if kind == "one_point":
        if cuts is None:
            cuts = rng.integers(0, C + 1, size=m)
        swap = np.arange(C)[None, :] >= np.asarray(cuts)[:, None]
    elif kind == "uniform":
        swap = rng.random((m, C)) < p_swap
    else:
        raise ValueError(f"unknown crossover kind {kind!r}")
    return np.where(swap, b, a), np.where(swap, a, b)


def crossover(a, b, kind: str, rng: np.random.Generator, p_swap: float = 0.5, cut: int | None = None):
    """Two children; every child gene comes from the same position of a parent."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape != b.shape:
        raise ValueError(f"parents differ in length: {len(a)} vs {len(b)}")
    c1, c2 = crossover_population(a[None, :], b[None, :], kind, rng, p_swap, None if cut is None else [cut])
    return c1[0], c2[0]


def _select(fitness: np.ndarray, n: int, config: GaConfig, rng: np.random.Generator) -> np.ndarray:
    pop = len(fitness)
    if config.selection == "tournament":
        entrants = rng.integers(0, pop, size=(n, config.tournament_k))
        winners = np.argmin(fitness[entrants], axis=1)
        return entrants[np.arange(n), winners]
    # Roulette for minimization: weight by distance above the worst.
    w = fitness.max() - fitness
    total = w.sum()
    if total <= 0:
        return rng.integers(0, pop, size=n)
    return rng.choice(pop, size=n, p=w / total)


# ---------------------------------------------------------------- run + log

@dataclass(eq=False)
class GaRunLog:
    config: GaConfig
    fitness_id: str
    populations: np.ndarray  # (iterations, population, C) uint8
    fitnesses: np.ndarray  # (iterations, population)
    final_settings: np.ndarray  # (k, C), ascending fitness, distinct
    final_fitness: np.ndarray
    evaluations: int
    run_id: str = ""

    @property
    def iterations(self) -> int:
        return self.fitnesses.shape[0]

    @property
    def best_index(self) -> np.ndarray:
        return np.argmin(self.fitnesses, axis=1)

    @property
    def best_settings(self) -> np.ndarray:
        it = np.arange(self.iterations)
        return self.populations[it, self.best_index].astype(np.int64)

    @property
    def best_fitness(self) -> np.ndarray:
        return self.fitnesses.min(axis=1)

    @property
    def final_best(self) -> float:
        return float(self.final_fitness[0])

    def is_elitist_monotone(self) -> bool:
        return bool(np.all(np.diff(self.best_fitness) <= 0))

    def __eq__(self, other):
        return (
            isinstance(other, GaRunLog)
            and self.config == other.config
            and self.fitness_id == other.fitness_id
            and self.run_id == other.run_id
            and self.evaluations == other.evaluations
            and np.array_equal(self.populations, other.populations)
            and np.array_equal(self.fitnesses, other.fitnesses)
            and np.array_equal(self.final_settings, other.final_settings)
            and np.array_equal(self.final_fitness, other.final_fitness)
        )

    def drop_populations(self) -> "GaRunLog":
        """Keep only the best-of-iteration rows (population dimension 1)."""
        it = np.arange(self.iterations)
        bi = self.best_index
        return GaRunLog(
            self.config, self.fitness_id,
            self.populations[it, bi][:, None, :], self.fitnesses[it, bi][:, None],
            self.final_settings, self.final_fitness, self.evaluations, self.run_id,
        )


def ga_run(fitness, C: int, config: GaConfig = GaConfig(), fitness_id: str = "", run_id: str = "") -> GaRunLog:
    """Minimize ``fitness`` over settings of length ``C``.

    Each iteration evaluates the population (repeated genotypes within the run
    are served from a cache), logs it, then breeds the next one: the
    ``elitism`` best individuals pass unchanged, the rest are children of
    selected parents after crossover (with probability ``crossover_rate`` per
    pair) and per-gene mutation.
    """
    rng = derive_rng(config.seed, 0x6A)
    P = config.population
    rate = config.gene_rate(C)
    pop = rng.integers(0, CYCLE_S, size=(P, C), dtype=np.int64)
    cache: dict[bytes, float] = {}
    order: list[bytes] = []  # first-seen order, for tie-breaking the final list
    pops = np.empty((config.iterations, P, C), dtype=np.uint8)
    fits = np.empty((config.iterations, P), dtype=np.float64)

    for it in range(config.iterations):
        keys = [row.tobytes() for row in pop]
        missing = {}
        for k, row in zip(keys, pop):
            if k not in cache and k not in missing:
                missing[k] = row
        if missing:
            batch = np.array(list(missing.values()), dtype=np.int64)
            values = np.asarray(fitness(batch), dtype=np.float64)
            if values.shape != (len(batch),):
                raise ValueError(f"fitness returned shape {values.shape} for {len(batch)} settings")
            for k, row, v in zip(missing, batch, values):
                if not np.isfinite(v):
                    raise NonFiniteFitnessError(row, float(v))
                cache[k] = float(v)
                order.append(k)
        fit = np.array([cache[k] for k in keys])
        pops[it] = pop
        fits[it] = fit
        if it == config.iterations - 1:
            break

        ranked = np.argsort(fit, kind="stable")
        elites = pop[ranked[:config.elitism]]
        n_children = P - config.elitism
        if n_children == 0:
            pop = elites.copy()
            continue
        n_pairs = (n_children + 1) // 2
        parents = _select(fit, 2 * n_pairs, config, rng)
        a, b = pop[parents[0::2]], pop[parents[1::2]]
        c1, c2 = crossover_population(a, b, config.crossover, rng, config.p_swap)
        do_cx = rng.random(n_pairs) < config.crossover_rate
        c1 = np.where(do_cx[:, None], c1, a)
        c2 = np.where(do_cx[:, None], c2, b)
        children = np.empty((2 * n_pairs, C), dtype=np.int64)
        children[0::2], children[1::2] = c1, c2
        children = mutate_population(children[:n_children], rate, config.mutation_kind, rng, config.shift_sigma)
        pop = np.vstack([elites, children])

    rank = {k: i for i, k in enumerate(order)}
    best_keys = sorted(order, key=lambda k: (cache[k], rank[k]))[:config.final_k]
    final_settings = np.array([np.frombuffer(k, dtype=np.int64) for k in best_keys], dtype=np.int64)
    final_fitness = np.array([cache[k] for k in best_keys])
    return GaRunLog(config, fitness_id, pops, fits, final_settings, final_fitness, len(cache), run_id)


def select_runs(logs, best_k: int, random_k: int, seed: int, pool_limit: int = 100) -> list[GaRunLog]:
    """Best ``best_k`` runs by final best fitness plus ``random_k`` drawn from the ranks after them (up to ``pool_limit``)."""
    logs = list(logs)
    if best_k < 0 or random_k < 0 or len(logs) < best_k + random_k:
        raise ValueError(f"need at least {best_k + random_k} logs, got {len(logs)}")
    ranked = sorted(range(len(logs)), key=lambda i: (logs[i].final_best, i))
    chosen = ranked[:best_k]
    pool = ranked[best_k:max(best_k, min(pool_limit, len(logs)))]
    if random_k > len(pool):
        raise ValueError(f"only {len(pool)} runs available for random selection, need {random_k}")
    if random_k:
        rng = derive_rng(seed, 0x5E1)
        picks = rng.choice(len(pool), size=random_k, replace=False)
        chosen += [pool[j] for j in sorted(picks)]
    return [logs[i] for i in chosen]


# ---------------------------------------------------------------- persistence

def _open(path, mode):
    path = Path(path)
    if path.suffix == ".gz":
        raw = open(path, mode + "b")
        if mode == "w":
            gz = gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0)
        else:
            gz = gzip.GzipFile(fileobj=raw, mode="rb")
        return io.TextIOWrapper(gz, encoding="utf-8", newline="\n"), raw
    fh = open(path, mode, encoding="utf-8", newline="\n")
    return fh, None


def write_log(log: GaRunLog, path) -> None:
    """One JSON header line, one line per iteration, one footer line with the final-best list."""
    fh, raw = _open(path, "w")
    try:
        header = {
            "record": "header", "format_version": LOG_FORMAT_VERSION,
            "run_id": log.run_id, "fitness_id": log.fitness_id,
            "config": log.config.to_dict(), "iterations": log.iterations,
            "C": int(log.populations.shape[2]),
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for it in range(log.iterations):
            rec = {
                "record": "iteration", "iteration": it,
                "population": log.populations[it].astype(int).tolist(),
                "fitness": log.fitnesses[it].tolist(),
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        footer = {
            "record": "final", "evaluations": log.evaluations,
            "settings": log.final_settings.tolist(), "fitness": log.final_fitness.tolist(),
        }
        fh.write(json.dumps(footer, sort_keys=True) + "\n")
    finally:
        fh.close()
        if raw is not None:
            raw.close()


def read_log(path) -> GaRunLog:
    fh, raw = _open(path, "r")
    try:
        lines = [json.loads(line) for line in fh if line.strip()]
    finally:
        fh.close()
        if raw is not None:
            raw.close()
    header, iters, footer = lines[0], lines[1:-1], lines[-1]
    if header.get("record") != "header" or header.get("format_version") != LOG_FORMAT_VERSION:
        raise ValueError(f"{path}: not a version-{LOG_FORMAT_VERSION} GA log")
    if footer.get("record") != "final" or len(iters) != header["iterations"]:
        raise ValueError(f"{path}: truncated GA log")
    return GaRunLog(
        GaConfig.from_dict(header["config"]),
        header["fitness_id"],
        np.array([r["population"] for r in iters], dtype=np.uint8),
        np.array([r["fitness"] for r in iters], dtype=np.float64),
        np.array(footer["settings"], dtype=np.int64),
        np.array(footer["fitness"], dtype=np.float64),
        footer["evaluations"],
        header["run_id"],
    )

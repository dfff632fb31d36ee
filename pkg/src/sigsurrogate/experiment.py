"""End-to-end study protocol shared by the CLI and the acceptance suite.

For one surrogate: run every GA configuration ``runs_per_config`` times with
the surrogate as fitness, keep the best ``best_k`` runs plus ``random_k``
drawn from the following ranks, then oracle-label each kept run's final-best
list, its best-of-iteration trajectory and its initial population.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .analysis import (
    ErrorSummary,
    TrajectoryErrorCurve,
    dataset_summary,
    evaluate_optima,
    summarize_errors,
    trajectory_errors,
)
from .ga import GaConfig, GaRunLog, ga_run, select_runs
from .gbt import gbt_roster_specs, gbt_train
from .nn import nn_roster_specs, nn_train
from .seeding import mix_seed

log = logging.getLogger(__name__)


def train_roster(train, seed: int = 0, nn_epochs: int = 200, gbt_trees: int = 400, kinds=("nn", "gbt")) -> list:
    """The 16-model roster: 8 networks then 8 boosted-tree models."""
    models = []
    if "nn" in kinds:
        for name, spec in nn_roster_specs(seed, nn_epochs):
            log.info("training %s", name)
            models.append(nn_train(train, spec, name))
    if "gbt" in kinds:
        for name, spec in gbt_roster_specs(seed, gbt_trees):
            log.info("training %s", name)
            models.append(gbt_train(train, spec, name))
    return models


def run_grid(fitness, C: int, grid: list[GaConfig], runs_per_config: int, seed: int, fitness_id: str = "") -> list[GaRunLog]:
    if runs_per_config < 1:
        raise ValueError("runs_per_config must be >= 1")
    logs = []
    for ci, cfg in enumerate(grid):
        for rep in range(runs_per_config):
            run_cfg = GaConfig(**{**cfg.to_dict(), "seed": mix_seed(seed, ci, rep)})
            logs.append(ga_run(fitness, C, run_cfg, fitness_id, run_id=f"c{ci:02d}-r{rep}"))
    return logs


@dataclass(eq=False)
class ModelStudy:
    name: str
    test_error: ErrorSummary
    selected: list[GaRunLog]
    optima_pairs: np.ndarray
    per_run_optima: list[ErrorSummary]
    trajectories: list[TrajectoryErrorCurve]
    initial_oracle_mean: np.ndarray
    all_final_best: np.ndarray = field(default_factory=lambda: np.zeros(0))
    all_monotone: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def optima(self) -> ErrorSummary:
        return summarize_errors(self.optima_pairs)

    def trajectory_flags(self, window: int = 10, min_improvement: float = 0.10):
        """Per selected run: (error grew from first to last window, oracle best beats initial mean by ``min_improvement``)."""
        out = []
        for curve, init_mean in zip(self.trajectories, self.initial_oracle_mean):
            head, tail = curve.head_tail_abs(window)
            best_oracle = curve.oracle[-1]
            out.append((tail >= head, best_oracle <= (1.0 - min_improvement) * init_mean))
        return out


def study_model(model, oracle, test, grid: list[GaConfig], runs_per_config: int = 5,
                best_k: int = 10, random_k: int = 10, seed: int = 0) -> ModelStudy:
    name = getattr(model, "name", "model")
    C = model.n_intersections
    logs = run_grid(model.predict, C, grid, runs_per_config, seed, fitness_id=name)
    all_best = np.array([lg.final_best for lg in logs])
    monotone = np.array([lg.is_elitist_monotone() for lg in logs])
    chosen = select_runs(logs, best_k, random_k, mix_seed(seed, 0x5E))
    del logs
    pairs, per_run, curves, init_means, kept = [], [], [], [], []
    for lg in chosen:
        summary, p = evaluate_optima(lg, oracle, model)
        pairs.append(p)
        per_run.append(summary)
        curves.append(trajectory_errors(lg, oracle, model))
        init_means.append(float(np.mean(oracle(lg.populations[0].astype(np.int64)))))
        kept.append(lg.drop_populations())
    return ModelStudy(
        name, dataset_summary(model, test), kept, np.vstack(pairs), per_run, curves,
        np.array(init_means), all_best, monotone,
    )

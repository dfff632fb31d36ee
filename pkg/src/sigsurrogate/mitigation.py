"""Ensemble-averaged surrogates and active-learning retraining on GA-found settings."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import trim_mean

from .analysis import ErrorSummary, dataset_summary, evaluate_optima
from .datagen import Dataset
from .ga import GaConfig, ga_run
from .netmodel import DimensionError, validate_setting
from .seeding import mix_seed


@dataclass(eq=False)
class EnsembleModel:
    members: list
    aggregation: str = "mean"
    trim_fraction: float = 0.0
    name: str = "ensemble"

    kind = "ensemble"

    def __post_init__(self):
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        if self.aggregation not in ("mean", "trimmed_mean"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if not 0.0 <= self.trim_fraction < 0.5:
            raise ValueError("trim_fraction must lie in [0, 0.5)")
        sizes = {m.n_intersections for m in self.members}
        if len(sizes) != 1:
            raise DimensionError(f"ensemble members disagree on C: {sorted(sizes)}")

    @property
    def n_intersections(self) -> int:
        return self.members[0].n_intersections

    def predict(self, settings) -> np.ndarray:
        P = np.vstack([m.predict(settings) for m in self.members])
        if self.aggregation == "mean":
            return P.mean(axis=0)
        return trim_mean(P, self.trim_fraction, axis=0)


def ensemble_predict(ensemble: EnsembleModel, setting) -> float:
    s = validate_setting(setting, ensemble.n_intersections)
    return float(ensemble.predict(s[None, :])[0])


@dataclass(frozen=True)
class RoundRecord:
    round: int
    train_size: int
    labels_added: int
    test_error: ErrorSummary | None
    optima_error: ErrorSummary
    ga_best_fitness: float

    def to_dict(self) -> dict:
        return {
            "record": "round",
            "round": self.round,
            "train_size": self.train_size,
            "labels_added": self.labels_added,
            "test_error": None if self.test_error is None else self.test_error.to_dict(),
            "optima_error": self.optima_error.to_dict(),
            "ga_best_fitness": self.ga_best_fitness,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoundRecord":
        return cls(
            d["round"], d["train_size"], d["labels_added"],
            None if d["test_error"] is None else ErrorSummary.from_dict(d["test_error"]),
            ErrorSummary.from_dict(d["optima_error"]),
            d["ga_best_fitness"],
        )


@dataclass
class ActiveLearningReport:
    rounds: list[RoundRecord] = field(default_factory=list)

    @property
    def total_added(self) -> int:
        return sum(r.labels_added for r in self.rounds)

    def optima_mae(self) -> list[float]:
        return [r.optima_error.mean_abs_rel for r in self.rounds]


def active_learning(oracle, trainer, train: Dataset, ga_config: GaConfig, rounds: int, top_k: int = 100,
                    test: Dataset | None = None, seed: int = 0, train_final: bool = True):
    """Alternate GA-on-surrogate with oracle labeling of what the GA found.

    ``trainer`` maps a :class:`Dataset` to a fitted surrogate (retrained from
    scratch each round).  In round ``r`` the GA runs with seed
    ``mix_seed(seed, r)``; its ``top_k`` final-best settings are labeled by
    the oracle, the error at those optima is recorded, and the settings not
    already in the training set are appended.
    Returns ``(report, final_model, augmented_train)``; the final model is
    trained on the augmented set after the last round (``None`` when
    ``train_final`` is false).
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if top_k < 1 or top_k > ga_config.population * ga_config.iterations:
        raise ValueError("top_k must lie in [1, population * iterations]")
    C = train.n_intersections
    known = {row.tobytes() for row in train.settings}
    current = train
    report = ActiveLearningReport()
    for r in range(1, rounds + 1):
        model = trainer(current)
        trained_on = len(current)
        cfg = replace(ga_config, final_k=max(top_k, ga_config.final_k), seed=mix_seed(seed, r))
        log = ga_run(model.predict, C, cfg, fitness_id=f"al-round{r}")
        log.final_settings = log.final_settings[:top_k]
        log.final_fitness = log.final_fitness[:top_k]
        summary, pairs = evaluate_optima(log, oracle, model)
        fresh = [i for i, row in enumerate(log.final_settings) if row.tobytes() not in known]
        if fresh:
            add = Dataset(log.final_settings[fresh], pairs[fresh, 1])
            known.update(row.tobytes() for row in add.settings)
            current = current.concat(add)
        report.rounds.append(RoundRecord(
            r, trained_on, len(fresh),
            None if test is None else dataset_summary(model, test),
            summary, log.final_best,
        ))
    return report, (trainer(current) if train_final else None), current


def write_report(report: ActiveLearningReport, path) -> None:
    lines = [json.dumps({"record": "header", "format_version": 1, "rounds": len(report.rounds)}, sort_keys=True)]
    lines += [json.dumps(r.to_dict(), sort_keys=True) for r in report.rounds]
    Path(path).write_text("\n".join(lines) + "\n")


def read_report(path) -> ActiveLearningReport:
    recs = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    if recs[0].get("record") != "header" or recs[0].get("format_version") != 1:
        raise ValueError(f"{path}: not a version-1 active-learning report")
    return ActiveLearningReport([RoundRecord.from_dict(d) for d in recs[1:]])

"""Surrogate error at GA optima, error along GA trajectories, and PCA of convergence points.

Relative errors use the simulation as denominator and keep their sign:
negative means the surrogate underestimated the simulated red wait.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .featurize import encode_many
from .ga import GaRunLog


def relative_error(predicted: float, simulated: float) -> float:
    if not simulated > 0:
        raise ValueError(f"simulated value must be positive, got {simulated}")
    return (predicted - simulated) / simulated


def relative_errors(predicted, simulated) -> np.ndarray:
    p = np.asarray(predicted, dtype=np.float64)
    s = np.asarray(simulated, dtype=np.float64)
    if np.any(~(s > 0)):
        raise ValueError("simulated values must be positive")
    return (p - s) / s


@dataclass(frozen=True)
class ErrorSummary:
    n: int
    mean_signed_rel: float
    mean_abs_rel: float
    max_abs_rel: float
    frac_under: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorSummary":
        return cls(**d)


def summarize_errors(pairs) -> ErrorSummary:
    """Summary of ``(predicted, simulated)`` pairs; accepts a sequence of pairs or an ``(n, 2)`` array."""
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot summarize an empty set of pairs")
    arr = arr.reshape(-1, 2)
    err = relative_errors(arr[:, 0], arr[:, 1])
    a = np.abs(err)
    return ErrorSummary(
        n=len(err),
        mean_signed_rel=float(np.mean(err)),
        mean_abs_rel=float(np.mean(a)),
        max_abs_rel=float(np.max(a)),
        frac_under=float(np.mean(arr[:, 0] < arr[:, 1])),
    )


def dataset_summary(model, dataset) -> ErrorSummary:
    return summarize_errors(np.column_stack([model.predict(dataset.settings), dataset.waits]))


def evaluate_optima(log: GaRunLog, oracle, model):
    """Oracle-label the run's final-best settings; returns ``(summary, pairs)`` with pairs ``(n, 2)`` = (predicted, simulated)."""
    settings = log.final_settings
    if len(settings) == 0:
        raise ValueError("log has no final-best settings")
    simulated = np.asarray(oracle(settings), dtype=np.float64)
    predicted = np.asarray(model.predict(settings), dtype=np.float64)
    pairs = np.column_stack([predicted, simulated])
    return summarize_errors(pairs), pairs


@dataclass(eq=False)
class TrajectoryErrorCurve:
    iteration: np.ndarray
    settings: np.ndarray
    surrogate: np.ndarray
    oracle: np.ndarray
    signed_rel: np.ndarray

    def __len__(self):
        return len(self.iteration)

    def head_tail_abs(self, window: int = 10) -> tuple[float, float]:
        """Mean |signed error| over the first and the last ``window`` iterations."""
        a = np.abs(self.signed_rel)
        return float(np.mean(a[:window])), float(np.mean(a[-window:]))


def trajectory_errors(log: GaRunLog, oracle, model) -> TrajectoryErrorCurve:
    if log.iterations < 2:
        raise ValueError("trajectory needs at least 2 iterations")
    settings = log.best_settings
    simulated = np.asarray(oracle(settings), dtype=np.float64)
    predicted = np.asarray(model.predict(settings), dtype=np.float64)
    return TrajectoryErrorCurve(
        np.arange(log.iterations), settings, predicted, simulated, relative_errors(predicted, simulated)
    )


@dataclass(eq=False)
class PcaResult:
    components: np.ndarray  # (k, D), rows orthonormal
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    projected: np.ndarray  # (n, k)
    mean: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.projected @ self.components + self.mean


def pca(points, k: int) -> PcaResult:
    """Top-``k`` principal components from the sample covariance (eigendecomposition).

    Each component is sign-normalized so its largest-magnitude entry is positive.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("pca needs an (n, D) array with n >= 2")
    n, D = X.shape
    if not 1 <= k <= min(n, D):
        raise ValueError(f"k must lie in [1, {min(n, D)}], got {k}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T
    lead = np.argmax(np.abs(comps), axis=1)
    comps *= np.sign(comps[np.arange(D), lead])[:, None]
    total = evals.sum()
    ratio = evals / total if total > 0 else np.zeros_like(evals)
    comps = comps[:k]
    return PcaResult(comps, evals[:k], ratio[:k], Xc @ comps.T, mean)


@dataclass(eq=False)
class ConvergenceMap:
    pca: PcaResult
    labels: np.ndarray
    encoded: bool

    def centroids(self) -> dict[str, np.ndarray]:
        return {str(m): self.pca.projected[self.labels == m].mean(axis=0) for m in dict.fromkeys(self.labels)}

    def centroid_distances(self) -> dict[tuple[str, str], float]:
        c = self.centroids()
        names = list(c)
        return {
            (a, b): float(np.linalg.norm(c[a] - c[b]))
            for i, a in enumerate(names) for b in names[i + 1:]
        }


def convergence_map(logs_by_model: dict, encoded: bool = False) -> ConvergenceMap:
    """Pool best-of-iteration settings from every model's runs and project them on two components."""
    if len(logs_by_model) < 2:
        raise ValueError("convergence map needs runs from at least two models")
    points, labels = [], []
    for name, logs in logs_by_model.items():
        for log in logs:
            pts = log.best_settings
            points.append(encode_many(pts) if encoded else pts.astype(np.float64))
            labels += [name] * len(pts)
    X = np.vstack(points)
    return ConvergenceMap(pca(X, 2), np.array(labels), encoded)


# ---------------------------------------------------------------- reports

def write_summary_report(summaries: dict[str, ErrorSummary], path, extra: dict | None = None) -> None:
    doc = {"format_version": 1, "summaries": {k: v.to_dict() for k, v in summaries.items()}}
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_summary_report(path) -> dict[str, ErrorSummary]:
    doc = json.loads(Path(path).read_text())
    return {k: ErrorSummary.from_dict(v) for k, v in doc["summaries"].items()}


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])

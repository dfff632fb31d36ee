import numpy as np
import pytest

from sigsurrogate.datagen import Dataset
from sigsurrogate.ga import GaConfig
from sigsurrogate.gbt import GbtSpec, gbt_train
from sigsurrogate.mitigation import (
    EnsembleModel,
    active_learning,
    ensemble_predict,
    read_report,
    write_report,
)
from sigsurrogate.netmodel import DimensionError


class Const:
    def __init__(self, value, C=2):
        self.value, self.n_intersections = value, C

    def predict(self, S):
        return np.full(len(np.atleast_2d(S)), float(self.value))


class Linear:
    n_intersections = 3

    def __init__(self, w):
        self.w = np.asarray(w, float)

    def predict(self, S):
        return np.atleast_2d(S) @ self.w + 1.0


def test_single_member():
    m = Linear([1, 2, 3])
    X = np.array([[1, 2, 3], [4, 5, 6]])
    assert np.array_equal(EnsembleModel([m]).predict(X), m.predict(X))


def test_two_members_average():
    assert ensemble_predict(EnsembleModel([Const(4.0), Const(10.0)]), [1, 2]) == 7.0


def test_permutation_invariance():
    ms = [Linear(np.random.default_rng(i).uniform(0, 1, 3)) for i in range(5)]
    X = np.random.default_rng(9).integers(0, 120, size=(20, 3))
    for agg, frac in (("mean", 0.0), ("trimmed_mean", 0.2)):
        a = EnsembleModel(ms, agg, frac).predict(X)
        b = EnsembleModel(ms[::-1], agg, frac).predict(X)
        assert np.allclose(a, b, rtol=1e-14)


def test_trimmed_mean_drops_outlier():
    e = EnsembleModel([Const(1), Const(2), Const(3), Const(4), Const(1000)], "trimmed_mean", 0.2)
    assert ensemble_predict(e, [0, 0]) == 3.0


def test_validation():
    with pytest.raises(ValueError):
        EnsembleModel([])
    with pytest.raises(ValueError):
        EnsembleModel([Const(1)], "trimmed_mean", 0.5)
    with pytest.raises(DimensionError):
        EnsembleModel([Const(1, 2), Const(1, 3)])


def toy_oracle(S):
    """A bumpy separable function with a minimum away from the origin."""
    S = np.atleast_2d(S).astype(float)
    return 1000.0 + (50 * np.cos(2 * np.pi * (S - 30) / 120) + 0.2 * S).sum(axis=1)


def trainer(ds):
    return gbt_train(ds, GbtSpec(num_leaves=6, num_trees=20, learning_rate=0.3, min_samples_leaf=3))


@pytest.fixture(scope="module")
def start():
    X = np.random.default_rng(0).integers(0, 120, size=(80, 3))
    return Dataset(X, toy_oracle(X))


GA = GaConfig(population=20, iterations=10, seed=0)


def test_one_round_bookkeeping(start):
    report, model, grown = active_learning(toy_oracle, trainer, start, GA, rounds=1, top_k=15, seed=1)
    assert len(report.rounds) == 1
    r = report.rounds[0]
    assert r.round == 1 and r.train_size == len(start)
    assert 0 < r.labels_added <= 15
    assert len(grown) == len(start) + r.labels_added
    assert r.optima_error.n == 15
    assert model is not None


def test_appended_labels_are_oracle_values(start):
    _, _, grown = active_learning(toy_oracle, trainer, start, GA, rounds=2, top_k=10, seed=2, train_final=False)
    added = grown[len(start):]
    assert np.array_equal(added.waits, toy_oracle(added.settings))
    assert grown[:len(start)] == start


def test_never_duplicates(start):
    report, _, grown = active_learning(toy_oracle, trainer, start, GA, rounds=3, top_k=20, seed=3, train_final=False)
    assert len({r.tobytes() for r in grown.settings}) == len(grown)
    sizes = [r.train_size for r in report.rounds]
    assert sizes == sorted(sizes)
    assert [r.round for r in report.rounds] == [1, 2, 3]
    assert sizes[-1] + report.rounds[-1].labels_added == len(grown)


def test_deterministic(start, tmp_path):
    a = active_learning(toy_oracle, trainer, start, GA, rounds=2, top_k=10, seed=4, test=start, train_final=False)[0]
    b = active_learning(toy_oracle, trainer, start, GA, rounds=2, top_k=10, seed=4, test=start, train_final=False)[0]
    write_report(a, tmp_path / "a.jsonl")
    write_report(b, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert read_report(tmp_path / "a.jsonl").rounds == a.rounds


@pytest.mark.parametrize("kw", [dict(rounds=0), dict(top_k=0), dict(top_k=201)])
def test_argument_errors(start, kw):
    args = dict(rounds=1, top_k=5) | kw
    with pytest.raises(ValueError):
        active_learning(toy_oracle, trainer, start, GA, **args)

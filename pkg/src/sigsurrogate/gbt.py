"""Gradient-boosted regression trees with leaf-wise (best-first) growth.

Every round fits one tree to the per-sample gradients ``g`` and hessians
``h`` of the objective:

=========  ===============  =========  ==============================
objective  g                h          leaf value (before shrinkage)
=========  ===============  =========  ==============================
l2         f - y            1          -sum(g) / (sum(h) + lambda)
l1         sign(f - y)      1          median(y - f) over the leaf
poisson    exp(f) - y       exp(f)     -sum(g) / (sum(h) + lambda)
=========  ===============  =========  ==============================

Poisson models work in log space: the raw score is exponentiated at
prediction time.  A leaf is split on the (feature, threshold) with the
largest second-order gain
``GL^2/(HL+lambda) + GR^2/(HR+lambda) - G^2/(H+lambda)``; candidate
thresholds are every distinct feature value except the largest, and rows
with ``x <= threshold`` go left.  Ties go to the lower feature index, then
the lower threshold.  The tree always splits the open leaf with the highest
gain next (ties: the leaf created first) until it has ``num_leaves`` leaves
or no split has positive gain.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .featurize import encode_many
from .netmodel import DimensionError, validate_setting

OBJECTIVES = ("l2", "l1", "poisson")
FEATURE_MODES = ("raw", "encoded")


@dataclass(frozen=True)
class GbtSpec:
    num_leaves: int = 31
    num_trees: int = 400
    learning_rate: float = 0.05
    min_samples_leaf: int = 20
    objective: str = "l2"
    feature_mode: str = "raw"
    reg_lambda: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.num_leaves < 2:
            raise ValueError("num_leaves must be >= 2")
        if self.num_trees < 0:
            raise ValueError("num_trees must be >= 0")
        if self.learning_rate <= 0 or self.min_samples_leaf < 1 or self.reg_lambda < 0:
            raise ValueError("need learning_rate > 0, min_samples_leaf >= 1, reg_lambda >= 0")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.feature_mode not in FEATURE_MODES:
            raise ValueError(f"feature_mode must be one of {FEATURE_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GbtSpec":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat node arrays; ``feature[i] == -1`` marks a leaf holding ``value[i]``. Node 0 is the root."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.array(d["feature"], dtype=np.int64),
            np.array(d["threshold"], dtype=np.float64),
            np.array(d["left"], dtype=np.int64),
            np.array(d["right"], dtype=np.int64),
            np.array(d["value"], dtype=np.float64),
        )

    def apply(self, X: np.ndarray) -> np.ndarray:
        return _tree_outputs(X, self.feature, self.threshold, self.left, self.right, self.value)


@dataclass(eq=False)
class GbtModel:
    spec: GbtSpec
    n_intersections: int
    base_score: float
    trees: list[Tree]
    train_objective: list[float] = field(default_factory=list)
    name: str = "gbt"

    kind = "gbt"

    def features(self, settings) -> np.ndarray:
        X = np.atleast_2d(np.asarray(settings))
        if X.shape[1] != self.n_intersections:
            raise DimensionError(f"model expects {self.n_intersections} offsets, got {X.shape[1]}")
        if self.spec.feature_mode == "encoded":
            return encode_many(X)
        return X.astype(np.float64)

    def raw_score(self, settings) -> np.ndarray:
        F = self.features(settings)
        packed = self._packed()
        return self.base_score + _ensemble_sum(F, *packed)

    def predict(self, settings) -> np.ndarray:
        """Predicted red-wait seconds for an ``(m, C)`` array of settings."""
        s = self.raw_score(settings)
        return np.exp(s) if self.spec.objective == "poisson" else s

    def contributions(self, settings) -> np.ndarray:
        """``(m, n_trees)`` per-tree outputs in raw-score space."""
        F = self.features(settings)
        if not self.trees:
            return np.zeros((len(F), 0))
        return np.column_stack([t.apply(F) for t in self.trees])

    def _packed(self):
        cache = self.__dict__.get("_pack")
        if cache is None or cache[0] != len(self.trees):
            cache = (len(self.trees), _pack(self.trees))
            self.__dict__["_pack"] = cache
        return cache[1]

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "kind": "gbt",
            "name": self.name,
            "spec": self.spec.to_dict(),
            "n_intersections": self.n_intersections,
            "base_score": self.base_score,
            "trees": [t.to_dict() for t in self.trees],
            "train_objective": list(self.train_objective),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbtModel":
        if d.get("kind") != "gbt" or d.get("format_version") != 1:
            raise ValueError("not a version-1 gbt model document")
        return cls(
            GbtSpec.from_dict(d["spec"]),
            d["n_intersections"],
            d["base_score"],
            [Tree.from_dict(t) for t in d["trees"]],
            list(d.get("train_objective", [])),
            d.get("name", "gbt"),
        )


def _pack(trees):
    if not trees:
        z = np.zeros(0, dtype=np.int64)
        return z, np.zeros(0), z, z, np.zeros(0), np.zeros(1, dtype=np.int64)
    roots = np.cumsum([0] + [len(t.feature) for t in trees]).astype(np.int64)
    return (
        np.concatenate([t.feature for t in trees]),
        np.concatenate([t.threshold for t in trees]),
        np.concatenate([t.left for t in trees]),
        np.concatenate([t.right for t in trees]),
        np.concatenate([t.value for t in trees]),
        roots,
    )


@numba.njit(cache=True, nogil=True)
def _ensemble_sum(X, feature, threshold, left, right, value, roots):
    n = X.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for t in range(roots.shape[0] - 1):
            base = roots[t]
            node = 0
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            acc += value[base + node]
        out[i] = acc
    return out


@numba.njit(cache=True)
def _tree_outputs(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            node = left[node] if X[i, feature[node]] <= threshold[node] else right[node]
        out[i] = value[node]
    return out


@numba.njit(cache=True)
def _histogram(bins, idx, g, h, n_bins):
    F = bins.shape[1]
    G = np.zeros((F, n_bins))
    H = np.zeros((F, n_bins))
    N = np.zeros((F, n_bins), np.int64)
    for r in range(idx.shape[0]):
        i = idx[r]
        gi = g[i]
        hi = h[i]
        for f in range(F):
            b = bins[i, f]
            G[f, b] += gi
            H[f, b] += hi
            N[f, b] += 1
    return G, H, N


@numba.njit(cache=True)
def _best_split(G, H, N, bins_per_feature, min_leaf, lam):
    F = G.shape[0]
    g_tot = 0.0
    h_tot = 0.0
    n_tot = 0
    for b in range(bins_per_feature[0]):
        g_tot += G[0, b]
        h_tot += H[0, b]
        n_tot += N[0, b]
    parent = g_tot * g_tot / (h_tot + lam)
    best_gain = 0.0
    best_f = -1
    best_b = -1
    for f in range(F):
        gl = 0.0
        hl = 0.0
        nl = 0
        for b in range(bins_per_feature[f] - 1):
            gl += G[f, b]
            hl += H[f, b]
            nl += N[f, b]
            nr = n_tot - nl
            if nl < min_leaf:
                continue
            if nr < min_leaf:
                break
            gr = g_tot - gl
            hr = h_tot - hl
            gain = gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent
            if gain > best_gain:
                best_gain = gain
                best_f = f
                best_b = b
    return best_gain, best_f, best_b


class _Binned:
    """Per-feature sorted distinct values and each row's rank among them."""

    def __init__(self, X: np.ndarray):
        self.uniques = [np.unique(X[:, f]) for f in range(X.shape[1])]
        self.bins = np.column_stack(
            [np.searchsorted(u, X[:, f]) for f, u in enumerate(self.uniques)]
        ).astype(np.int64)
        self.bins_per_feature = np.array([len(u) for u in self.uniques], dtype=np.int64)
        self.n_bins = int(self.bins_per_feature.max())


def _grad_hess(objective: str, f: np.ndarray, y: np.ndarray):
    if objective == "l2":
        return f - y, np.ones_like(y)
    if objective == "l1":
        return np.sign(f - y), np.ones_like(y)
    ef = np.exp(f)
    return ef - y, ef


def training_objective(objective: str, f: np.ndarray, y: np.ndarray) -> float:
    """Mean loss in raw-score space: squared error, absolute error, or Poisson deviance up to a constant."""
    if objective == "l2":
        return float(np.mean((f - y) ** 2))
    if objective == "l1":
        return float(np.mean(np.abs(f - y)))
    return float(np.mean(np.exp(f) - y * f))


def _base_score(objective: str, y: np.ndarray) -> float:
    if objective == "l2":
        return float(np.mean(y))
    if objective == "l1":
        return float(np.median(y))
    return float(np.log(np.mean(y)))


def grow_tree(binned: _Binned, g, h, resid_for_l1, spec: GbtSpec):
    """Grow one leaf-wise tree; returns the tree and the row indices of each leaf node."""
    lam = spec.reg_lambda
    n = len(g)
    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [0.0]
    root_idx = np.arange(n, dtype=np.int64)
    hist = _histogram(binned.bins, root_idx, g, h, binned.n_bins)
    # open leaves: node id -> (rows, histogram, (gain, feature, bin)); dict keeps creation order
    open_leaves = {0: (root_idx, hist, _best_split(*hist, binned.bins_per_feature, spec.min_samples_leaf, lam))}
    n_leaves = 1
    while n_leaves < spec.num_leaves and open_leaves:
        node = max(open_leaves, key=lambda k: (open_leaves[k][2][0], -k))
        rows, hist, (gain, f, b) = open_leaves[node]
        if not gain > 0 or f < 0:
            break
        del open_leaves[node]
        go_left = binned.bins[rows, f] <= b
        rows_l, rows_r = rows[go_left], rows[~go_left]
        if len(rows_l) <= len(rows_r):
            hist_l = _histogram(binned.bins, rows_l, g, h, binned.n_bins)
            hist_r = tuple(p - c for p, c in zip(hist, hist_l))
        else:
            hist_r = _histogram(binned.bins, rows_r, g, h, binned.n_bins)
            hist_l = tuple(p - c for p, c in zip(hist, hist_r))
        feature[node] = f
        threshold[node] = float(binned.uniques[f][b])
        for child_rows, child_hist, side in ((rows_l, hist_l, left), (rows_r, hist_r, right)):
            cid = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            side[node] = cid
            split = _best_split(*child_hist, binned.bins_per_feature, spec.min_samples_leaf, lam)
            open_leaves[cid] = (child_rows, child_hist, split)
        n_leaves += 1
    leaf_rows = {k: v[0] for k, v in open_leaves.items()}
    for node, rows in leaf_rows.items():
        if spec.objective == "l1":
            raw = float(np.median(resid_for_l1[rows]))
        else:
            raw = -float(np.sum(g[rows])) / (float(np.sum(h[rows])) + lam)
        value[node] = spec.learning_rate * raw
    tree = Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=np.float64),
    )
    return tree, leaf_rows


def gbt_train(train, spec: GbtSpec = GbtSpec(), name: str = "gbt") -> GbtModel:
    """Boost ``spec.num_trees`` leaf-wise trees on a :class:`~sigsurrogate.datagen.Dataset`.

    Training is fully deterministic; ``spec.seed`` is recorded but no step
    draws random numbers (no row or feature subsampling).
    """
    if len(train) == 0:
        raise ValueError("cannot train on an empty dataset")
    y = np.asarray(train.waits, dtype=np.float64)
    if spec.objective == "poisson" and np.any(y <= 0):
        raise ValueError("poisson objective needs strictly positive labels")
    X = encode_many(train.settings) if spec.feature_mode == "encoded" else train.settings.astype(np.float64)
    binned = _Binned(X)
    base = _base_score(spec.objective, y)
    f = np.full(len(y), base)
    trees = []
    history = [training_objective(spec.objective, f, y)]
    for _ in range(spec.num_trees):
        g, h = _grad_hess(spec.objective, f, y)
        tree, leaf_rows = grow_tree(binned, g, h, y - f, spec)
        for node, rows in leaf_rows.items():
            f[rows] += tree.value[node]
        trees.append(tree)
        history.append(training_objective(spec.objective, f, y))
    return GbtModel(spec, train.n_intersections, base, trees, history, name)


def gbt_predict(model: GbtModel, setting) -> float:
    s = validate_setting(setting, model.n_intersections)
    return float(model.predict(s[None, :])[0])


def gbt_roster_specs(seed: int = 0, num_trees: int = 400) -> list[tuple[str, GbtSpec]]:
    out = []
    for objective in OBJECTIVES:
        for leaves in (31, 127):
            out.append((f"gbt-{objective}-{leaves}", GbtSpec(leaves, num_trees, 0.05, 20, objective, "raw", 1e-3, seed)))
    for leaves in (31, 127):
        out.append((f"gbt-l2-{leaves}-enc", GbtSpec(leaves, num_trees, 0.05, 20, "l2", "encoded", 1e-3, seed)))
    return out


def gbt_roster(train, seed: int = 0, num_trees: int = 400) -> list[GbtModel]:
    return [gbt_train(train, spec, name) for name, spec in gbt_roster_specs(seed, num_trees)]

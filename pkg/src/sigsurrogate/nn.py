"""Fully-connected regression networks trained with RMSProp on mean squared error.

Inputs are always the periodic encoding of the offsets.  Labels are
standardized before training and de-standardized at inference.  The loss
minimized is ``mean((f(x) - y)^2) + l2_rate * sum(W^2)`` over weight matrices
(biases are not penalized).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .featurize import encode_many
from .netmodel import DimensionError, validate_setting
from .seeding import derive_rng

RMSPROP_DECAY = 0.9
RMSPROP_EPS = 1e-8


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class NnSpec:
    layer_widths: tuple[int, ...] = (64, 64)
    activation: str = "relu"
    l2_rate: float = 1e-5
    epochs: int = 200
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(_ACTIVATIONS)}, got {self.activation!r}")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError("layer widths must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.l2_rate < 0 or self.learning_rate <= 0:
            raise ValueError("l2_rate must be >= 0 and learning_rate > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_widths"] = list(self.layer_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NnSpec":
        return cls(**{**d, "layer_widths": tuple(d["layer_widths"])})


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z, a):
    return (z > 0).astype(z.dtype)


def _tanh_grad(z, a):
    return 1.0 - a * a


_ACTIVATIONS = {"relu": (_relu, _relu_grad), "tanh": (np.tanh, _tanh_grad)}


@dataclass(eq=False)
class NnModel:
    spec: NnSpec
    n_intersections: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    target_mean: float
    target_std: float
    epoch_losses: list[float] = field(default_factory=list)
    name: str = "nn"

    kind = "nn"

    def __post_init__(self):
        if not self.target_std > 0:
            raise ValueError("target_std must be positive")
        fan_in = 2 * self.n_intersections
        for W, b in zip(self.weights, self.biases):
            if W.shape[0] != fan_in or b.shape != (W.shape[1],):
                raise ValueError("layer shapes do not chain")
            fan_in = W.shape[1]
        if fan_in != 1:
            raise ValueError("network must end in a single output")

    def forward_scaled(self, features: np.ndarray) -> np.ndarray:
        act = _ACTIVATIONS[self.spec.activation][0]
        a = features
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = act(a @ W + b)
        return (a @ self.weights[-1] + self.biases[-1])[:, 0]

    def predict(self, settings) -> np.ndarray:
        """Predicted red-wait seconds for an ``(m, C)`` array of settings."""
        X = np.atleast_2d(np.asarray(settings))
        if X.shape[1] != self.n_intersections:
            raise DimensionError(f"model expects {self.n_intersections} offsets, got {X.shape[1]}")
        return self.forward_scaled(encode_many(X)) * self.target_std + self.target_mean

    def weight_norm(self) -> float:
        return float(math.sqrt(sum(float(np.sum(W * W)) for W in self.weights)))

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "kind": "nn",
            "name": self.name,
            "spec": self.spec.to_dict(),
            "n_intersections": self.n_intersections,
            "target_scale": [self.target_mean, self.target_std],
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "epoch_losses": list(self.epoch_losses),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NnModel":
        if d.get("kind") != "nn" or d.get("format_version") != 1:
            raise ValueError("not a version-1 nn model document")
        mean, std = d["target_scale"]
        return cls(
            spec=NnSpec.from_dict(d["spec"]),
            n_intersections=d["n_intersections"],
            weights=[np.array(W, dtype=np.float64) for W in d["weights"]],
            biases=[np.array(b, dtype=np.float64) for b in d["biases"]],
            target_mean=mean,
            target_std=std,
            epoch_losses=list(d.get("epoch_losses", [])),
            name=d.get("name", "nn"),
        )


def init_params(spec: NnSpec, n_inputs: int):
    """Fan-balanced uniform init in ``±sqrt(6 / (fan_in + fan_out))``, zero biases."""
    rng = derive_rng(spec.seed, 0x1E1)
    sizes = [n_inputs, *spec.layer_widths, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def loss_and_grads(weights, biases, activation: str, l2_rate: float, X: np.ndarray, y: np.ndarray):
    """Regularized MSE on one batch and its gradients w.r.t. every weight and bias."""
    act, act_grad = _ACTIVATIONS[activation]
    pre, post = [], [X]
    a = X
    for W, b in zip(weights[:-1], biases[:-1]):
        z = a @ W + b
        a = act(z)
        pre.append(z)
        post.append(a)
    out = (a @ weights[-1] + biases[-1])[:, 0]
    resid = out - y
    n = len(y)
    loss = float(resid @ resid) / n + l2_rate * sum(float(np.sum(W * W)) for W in weights)

    gW = [None] * len(weights)
    gb = [None] * len(biases)
    delta = (2.0 / n) * resid[:, None]
    for layer in range(len(weights) - 1, -1, -1):
        gW[layer] = post[layer].T @ delta + 2.0 * l2_rate * weights[layer]
        gb[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ weights[layer].T) * act_grad(pre[layer - 1], post[layer])
    return loss, gW, gb


def _scale_targets(waits: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(waits))
    std = float(np.std(waits))
    # Constant labels: any positive scale works, the scaled targets are all zero.
    return mean, (std if std > 0 else max(abs(mean), 1.0))


def nn_train(train, spec: NnSpec = NnSpec(), name: str = "nn") -> NnModel:
    """Train from scratch on a :class:`~sigsurrogate.datagen.Dataset`."""
    if len(train) == 0:
        raise ValueError("cannot train on an empty dataset")
    X = encode_many(train.settings)
    mean, std = _scale_targets(train.waits)
    y = (train.waits - mean) / std
    weights, biases = init_params(spec, X.shape[1])
    params = weights + biases
    cache = [np.zeros_like(p) for p in params]
    rng = derive_rng(spec.seed, 0x5EED)
    n = len(y)
    losses = []
    for epoch in range(1, spec.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, spec.batch_size):
            idx = order[start:start + spec.batch_size]
            loss, gW, gb = loss_and_grads(weights, biases, spec.activation, spec.l2_rate, X[idx], y[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}")
            total += loss * len(idx)
            for p, g, c in zip(params, gW + gb, cache):
                c *= RMSPROP_DECAY
                c += (1.0 - RMSPROP_DECAY) * g * g
                p -= spec.learning_rate * g / (np.sqrt(c) + RMSPROP_EPS)
        losses.append(total / n)
    return NnModel(spec, train.n_intersections, weights, biases, mean, std, losses, name)


def nn_predict(model: NnModel, setting) -> float:
    s = validate_setting(setting, model.n_intersections)
    return float(model.predict(s[None, :])[0])


def nn_gradient_check(spec: NnSpec, sample, step: float = 1e-5) -> float:
    """Largest relative gap between backprop and central-difference gradients.

    Gradients are taken of the regularized loss over the whole ``sample``
    (at most 10 records) in standardized-label space, at the initial
    parameters.  Per parameter array the discrepancy is
    ``|analytic - numeric| / (|analytic| + |numeric|)`` in the 2-norm.
    """
    if len(sample) > 10:
        raise ValueError("gradient check takes at most 10 records")
    X = encode_many(sample.settings)
    mean, std = _scale_targets(sample.waits)
    y = (sample.waits - mean) / std
    weights, biases = init_params(spec, X.shape[1])
    _, gW, gb = loss_and_grads(weights, biases, spec.activation, spec.l2_rate, X, y)
    worst = 0.0
    for p, g in zip(weights + biases, gW + gb):
        numeric = np.zeros_like(p)
        flat, nflat = p.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = loss_and_grads(weights, biases, spec.activation, spec.l2_rate, X, y)[0]
            flat[i] = keep - step
            down = loss_and_grads(weights, biases, spec.activation, spec.l2_rate, X, y)[0]
            flat[i] = keep
            nflat[i] = (up - down) / (2.0 * step)
        denom = np.linalg.norm(g) + np.linalg.norm(numeric)
        if denom > 0:
            worst = max(worst, float(np.linalg.norm(g - numeric) / denom))
    return worst


NN_ROSTER_WIDTHS = ((64, 64), (128, 64), (128, 128, 64), (256, 128))


def nn_roster_specs(seed: int = 0, epochs: int = 200) -> list[tuple[str, NnSpec]]:
    out = []
    for act in ("relu", "tanh"):
        for j, widths in enumerate(NN_ROSTER_WIDTHS):
            name = f"nn-{act}-" + "x".join(str(w) for w in widths)
            out.append((name, NnSpec(widths, act, 1e-5, epochs, 128, 1e-3, seed + j)))
    return out


def nn_roster(train, seed: int = 0, epochs: int = 200) -> list[NnModel]:
    return [nn_train(train, spec, name) for name, spec in nn_roster_specs(seed, epochs)]

"""Small MLP readout (one ReLU hidden layer, softmax output) and its evaluation."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .decoders import FeatureVector


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class MlpHyperparams:
    n_hidden: int = 32
    lr: float = 0.05
    epochs: int = 300
    batch: int = 16
    seed: int = 0


@dataclass
class MlpModel:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    classes: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    loss_history: list[float] = field(default_factory=list)

    @property
    def sizes(self) -> list[int]:
        return [self.w1.shape[0], self.w1.shape[1], self.w2.shape[1]]

    def _standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return forward(self.params(), self._standardize(np.atleast_2d(x)))[1]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.classes[np.argmax(self.predict_proba(x), axis=1)]

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def forward(params: dict[str, np.ndarray], x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hidden = np.maximum(0.0, x @ params["w1"] + params["b1"])
    return hidden, softmax(hidden @ params["w2"] + params["b2"])


def loss_and_grads(params: dict[str, np.ndarray], x: np.ndarray, y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy for integer targets ``y`` and its gradients."""
    n = len(x)
    hidden, probs = forward(params, x)
    loss = -np.mean(np.log(probs[np.arange(n), y] + 1e-300))
    d_logits = probs.copy()
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n
    d_hidden = d_logits @ params["w2"].T
    d_hidden[hidden <= 0] = 0.0
    grads = {
        "w2": hidden.T @ d_logits,
        "b2": d_logits.sum(axis=0),
        "w1": x.T @ d_hidden,
        "b1": d_hidden.sum(axis=0),
    }
    return float(loss), grads


def init_params(n_in: int, n_hidden: int, n_classes: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    return {
        "w1": rng.normal(0.0, np.sqrt(2.0 / n_in), (n_in, n_hidden)),
        "b1": np.zeros(n_hidden),
        "w2": rng.normal(0.0, 0.01, (n_hidden, n_classes)),
        "b2": np.zeros(n_classes),
    }


def _stack(samples: Sequence[FeatureVector]) -> tuple[np.ndarray, np.ndarray]:
    x = np.array([s.values for s in samples], dtype=float)
    y = np.array([s.label for s in samples])
    return x, y


def train_mlp(train: Sequence[FeatureVector], hp: MlpHyperparams = MlpHyperparams(),
              classes: Sequence[int] | None = None) -> MlpModel:
    """Mini-batch gradient descent on cross-entropy; inputs are standardized on the train set."""
    if not train:
        raise ValueError("empty training set")
    lengths = {len(s.values) for s in train}
    if len(lengths) != 1:
        raise ValueError(f"inconsistent feature lengths {sorted(lengths)}")
    x, labels = _stack(train)
    class_list = np.array(sorted(set(labels) if classes is None else set(classes)))
    y = np.searchsorted(class_list, labels)
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    xs = (x - mean) / scale

    rng = np.random.default_rng(hp.seed)
    params = init_params(x.shape[1], hp.n_hidden, len(class_list), rng)
    history = []
    for epoch in range(hp.epochs):
        order = rng.permutation(len(xs))
        total = 0.0
        for start in range(0, len(xs), hp.batch):
            idx = order[start:start + hp.batch]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = loss_and_grads(params, xs[idx], y[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"loss became {loss} in epoch {epoch}")
            for k in params:
                params[k] -= hp.lr * grads[k]
            total += loss * len(idx)
        history.append(total / len(xs))
    return MlpModel(params["w1"], params["b1"], params["w2"], params["b2"], class_list, mean, scale, history)


@dataclass
class EvalReport:
    coding: str
    accuracy: float
    confusion: list[list[int]]
    seed: int
    hyperparams: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


def evaluate(model: MlpModel, test: Sequence[FeatureVector], coding: str = "", seed: int = 0,
             hyperparams: MlpHyperparams | None = None) -> EvalReport:
    if not test:
        raise ValueError("empty test set")
    x, labels = _stack(test)
    if x.shape[1] != model.sizes[0]:
        raise ValueError(f"feature length {x.shape[1]} does not match model input {model.sizes[0]}")
    pred = model.predict(x)
    k = len(model.classes)
    confusion = np.zeros((k, k), dtype=int)
    for true, p in zip(labels, pred):
        confusion[np.searchsorted(model.classes, true), np.searchsorted(model.classes, p)] += 1
    accuracy = float(np.trace(confusion) / len(test))
    hp = asdict(hyperparams) if hyperparams is not None else {"n_hidden": model.sizes[1]}
    hp["classes"] = [int(c) for c in model.classes]
    return EvalReport(coding, accuracy, confusion.tolist(), seed, hp)


def split_stratified(features: Sequence[FeatureVector], test_fraction: float = 0.2,
                     seed: int = 0) -> tuple[list[FeatureVector], list[FeatureVector]]:
    """Per-class shuffled split; each class sends ``round(n * test_fraction)`` samples to test."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    by_class: dict[int, list[int]] = {}
    for i, f in enumerate(features):
        by_class.setdefault(f.label, []).append(i)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for label in sorted(by_class):
        idx = by_class[label]
        if len(idx) < 2:
            raise ValueError(f"class {label} has {len(idx)} sample(s); need at least 2")
        n_test = min(max(1, int(round(len(idx) * test_fraction))), len(idx) - 1)
        perm = rng.permutation(idx)
        test_idx.extend(perm[:n_test])
        train_idx.extend(perm[n_test:])
    return [features[i] for i in sorted(train_idx)], [features[i] for i in sorted(test_idx)]

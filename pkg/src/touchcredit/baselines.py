"""Last-touch and logistic-regression comparison models."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import TouchpointPath, Vocabulary
from .errors import ConfigError, DomainError


class LastTouchModel:
    """Conversion rate of the final touchpoint, Laplace smoothed: (k + 1) / (n + 2)."""

    kind = "last_touch"

    def __init__(self, vocab_size: int, vocab: Vocabulary | None = None):
        self.vocab_size = vocab_size
        self.vocab = vocab
        self.params = {"conversions": np.zeros(vocab_size), "counts": np.zeros(vocab_size),
                       "base": np.array([0.0, 0.0])}

    def fit(self, paths: Sequence[TouchpointPath]) -> "LastTouchModel":
        conv = np.zeros(self.vocab_size)
        cnt = np.zeros(self.vocab_size)
        for p in paths:
            if not p.events:
                continue
            last = p.events[-1]
            if not 0 <= last < self.vocab_size:
                raise DomainError(f"touchpoint index {last} outside vocabulary")
            cnt[last] += 1
            conv[last] += p.label
        self.params = {"conversions": conv, "counts": cnt,
                       "base": np.array([sum(p.label for p in paths), len(paths)], dtype=float)}
        return self

    @property
    def table(self) -> np.ndarray:
        return (self.params["conversions"] + 1.0) / (self.params["counts"] + 2.0)

    def predict(self, paths: Sequence[TouchpointPath]) -> np.ndarray:
        table = self.table
        out = np.empty(len(paths))
        for i, p in enumerate(paths):
            if not p.events:
                out[i] = self.predict_empty(p)
            elif 0 <= p.events[-1] < self.vocab_size:
                out[i] = table[p.events[-1]]
            else:
                out[i] = 0.5  # smoothed prior of an unseen touchpoint
        return out

    def predict_empty(self, path: TouchpointPath) -> float:
        k, n = self.params["base"]
        return float((k + 1.0) / (n + 2.0))

    def buffers(self):
        return {}

    def config_dict(self) -> dict:
        return {"vocab_size": self.vocab_size}

    @classmethod
    def from_state(cls, config, params, buffers, vocab):
        model = cls(int(config["vocab_size"]), vocab)
        for key in ("conversions", "counts", "base"):
            if key not in params:
                raise ValueError(f"field {key} missing")
        model.params = {k: np.asarray(params[k], dtype=float) for k in ("conversions", "counts", "base")}
        if model.params["counts"].shape != (model.vocab_size,):
            raise ValueError("field counts: shape does not match vocab_size")
        return model


@dataclass(frozen=True)
class LrFeatureSpec:
    """Touchpoint x integer-day-lag buckets: index = touchpoint * horizon + floor(lag)."""

    horizon_days: int = 57
    vocab_size: int = 6
    binary: bool = False

    def __post_init__(self):
        if self.horizon_days < 1 or self.vocab_size < 1:
            raise ConfigError("horizon_days and vocab_size must be >= 1")

    @property
    def dim(self) -> int:
        return self.vocab_size * self.horizon_days


def lr_featurize(path: TouchpointPath, spec: LrFeatureSpec) -> np.ndarray:
    f = np.zeros(spec.dim)
    if path.events:
        ev = np.asarray(path.events, dtype=np.intp)
        day = np.minimum(np.floor(np.asarray(path.lags)).astype(np.intp), spec.horizon_days - 1)
        np.add.at(f, ev * spec.horizon_days + day, 1.0)
    if spec.binary:
        f = np.minimum(f, 1.0)
    return f


@dataclass
class FeatureBatch:
    features: np.ndarray
    labels: np.ndarray


class LogisticModel:
    """L2-regularised logistic regression on lag-bucket counts; p = sigmoid(w.f + b)."""

    kind = "logistic"

    def __init__(self, spec: LrFeatureSpec, l2: float = 1e-4, vocab: Vocabulary | None = None, seed: int = 0):
        if l2 < 0:
            raise ConfigError("l2 strength must be >= 0")
        self.spec = spec
        self.l2 = l2
        self.vocab = vocab
        self.params = {"w": np.zeros(spec.dim), "b": np.array(0.0)}

    def featurize(self, paths: Sequence[TouchpointPath]) -> np.ndarray:
        return np.stack([lr_featurize(p, self.spec) for p in paths]) if paths else np.zeros((0, self.spec.dim))

    # training hooks used by training.fit
    def prepare(self, train_paths):
        pass

    def group_paths(self, paths):
        return [list(range(len(paths)))]

    def trainable_names(self):
        return ["w", "b"]

    def leaves(self, requires_grad=True):
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    def encode(self, paths) -> FeatureBatch:
        return FeatureBatch(self.featurize(paths), np.array([p.label for p in paths], dtype=float))

    def batch_probabilities(self, batch: FeatureBatch, P) -> Tensor:
        z = ag.reshape(ag.matmul(batch.features, ag.reshape(P["w"], (self.spec.dim, 1))), (-1,))
        return ag.sigmoid(z + P["b"])

    def penalty(self, P):
        if self.l2 == 0:
            return None
        return ag.tsum(P["w"] * P["w"]) * self.l2

    def predict(self, paths) -> np.ndarray:
        z = self.featurize(paths) @ self.params["w"] + float(self.params["b"])
        return 1.0 / (1.0 + np.exp(-z))

    def predict_empty(self, path) -> float:
        return 1.0 / (1.0 + math.exp(-float(self.params["b"])))

    def buffers(self):
        return {}

    def config_dict(self) -> dict:
        return {"feature_spec": asdict(self.spec), "l2": self.l2}

    @classmethod
    def from_state(cls, config, params, buffers, vocab):
        model = cls(LrFeatureSpec(**config["feature_spec"]), float(config["l2"]), vocab)
        for key, shape in (("w", (model.spec.dim,)), ("b", ())):
            if key not in params:
                raise ValueError(f"field {key} missing")
            if params[key].shape != shape:
                raise ValueError(f"field {key}: expected shape {shape}, got {params[key].shape}")
        model.params = {"w": params["w"], "b": params["b"]}
        return model


def lta_fit(paths: Sequence[TouchpointPath], vocab_size: int, vocab: Vocabulary | None = None) -> LastTouchModel:
    return LastTouchModel(vocab_size, vocab).fit(paths)


def lta_predict(path: TouchpointPath, model: LastTouchModel) -> float:
    return float(model.predict([path])[0])


def lr_train(train_paths, valid_paths, spec: LrFeatureSpec, train_config, l2: float = 1e-4,
             vocab: Vocabulary | None = None):
    """Fit logistic regression with the same Adam/early-stopping loop as the sequence models."""
    from .training import fit

    model = LogisticModel(spec, l2=l2, vocab=vocab)
    history = fit(model, train_paths, valid_paths, train_config)
    return model, history


def lr_predict(model: LogisticModel, paths) -> np.ndarray:
    return model.predict(paths)

"""LSTM conversion classifiers with touchpoint attention.

Four variants share one parameterisation:

* ``lstm``       stacked LSTM, the path vector is the last hidden state.
* ``attention``  the path vector is an attention-weighted mix of hidden states.
* ``timedecay``  attention logits are penalised by ``lambda * lag``.
* ``fusion``     time-decay attention plus a dense network over control
                 variables whose output enters the logit linearly.

Paths of equal length are run together as one batch; nothing is padded.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from itertools import groupby
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import TouchpointPath, Vocabulary
from .errors import ConfigError, DimensionError, DomainError

VARIANTS = ("lstm", "attention", "timedecay", "fusion")
DECAY_VARIANTS = ("timedecay", "fusion")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int = 16
    hidden_dim: int = 64
    attention_dim: int = 64
    lstm_layers: int = 3
    control_dim: int = 0
    control_hidden_dims: tuple[int, ...] = (64, 64, 64)
    variant: str = "attention"
    decay_mode: str = "learned"
    fixed_lambda: float = 0.1
    lambda_init: float = 0.1
    fixed_u: bool = False

    def __post_init__(self):
        object.__setattr__(self, "control_hidden_dims", tuple(int(d) for d in self.control_hidden_dims))
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        dims = [self.vocab_size, self.embed_dim, self.hidden_dim, self.attention_dim, self.lstm_layers]
        if any(d < 1 for d in dims) or any(d < 1 for d in self.control_hidden_dims):
            raise ConfigError("all model dimensions must be >= 1")
        if self.variant == "fusion" and self.control_dim < 1:
            raise ConfigError("fusion variant needs control_dim >= 1")
        if self.decay_mode not in ("learned", "fixed"):
            raise ConfigError(f"decay_mode must be 'learned' or 'fixed', got {self.decay_mode!r}")
        if self.decay_mode == "fixed" and not self.fixed_lambda > 0:
            raise ConfigError("fixed lambda must be > 0")
        if not self.lambda_init > 0:
            raise ConfigError("lambda_init must be > 0")

    @property
    def has_attention(self) -> bool:
        return self.variant != "lstm"

    @property
    def has_decay(self) -> bool:
        return self.variant in DECAY_VARIANTS

    def to_dict(self) -> dict:
        d = asdict(self)
        d["control_hidden_dims"] = list(self.control_hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["control_hidden_dims"] = tuple(d.get("control_hidden_dims", ()))
        return cls(**d)


@dataclass
class ForwardOutput:
    probability: float
    attention: np.ndarray
    path_vector: np.ndarray
    hidden_states: np.ndarray


@dataclass
class Batch:
    """Equal-length paths stacked into arrays."""

    events: np.ndarray   # [B, T] int
    lags: np.ndarray     # [B, T]
    controls: np.ndarray  # [B, C]
    labels: np.ndarray   # [B]

    @classmethod
    def from_paths(cls, paths: Sequence[TouchpointPath]) -> "Batch":
        lengths = {len(p) for p in paths}
        if len(lengths) != 1:
            raise DimensionError(f"batch mixes path lengths {sorted(lengths)}")
        return cls(
            np.array([p.events for p in paths], dtype=np.intp),
            np.array([p.lags for p in paths], dtype=np.float64),
            np.array([p.controls for p in paths], dtype=np.float64).reshape(len(paths), -1),
            np.array([p.label for p in paths], dtype=np.float64),
        )


def softplus_inverse(y: float) -> float:
    return y + math.log(-math.expm1(-y))


def group_by_length(paths: Sequence[TouchpointPath]) -> list[list[int]]:
    """Indices of ``paths`` grouped by path length (ascending)."""
    order = sorted(range(len(paths)), key=lambda i: len(paths[i]))
    return [list(g) for _, g in groupby(order, key=lambda i: len(paths[i]))]


class SequenceModel:
    """Conversion model over touchpoint sequences (see module docstring)."""

    kind = "sequence"

    def __init__(self, config: ModelConfig, vocab: Vocabulary | None = None, seed: int = 0,
                 params: dict[str, np.ndarray] | None = None):
        self.config = config
        self.vocab = vocab
        if vocab is not None and vocab.size != config.vocab_size:
            raise ConfigError(f"vocabulary has {vocab.size} touchpoints, config expects {config.vocab_size}")
        self.control_mean = np.zeros(config.control_dim)
        self.control_std = np.ones(config.control_dim)
        self.params = self.init_params(config, seed) if params is None else {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        self.check_shapes()

    # -- parameters ----------------------------------------------------------

    @staticmethod
    def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
        h = cfg.hidden_dim
        shapes = {"W_e": (cfg.embed_dim, cfg.vocab_size)}
        for k in range(cfg.lstm_layers):
            n_in = cfg.embed_dim if k == 0 else h
            shapes[f"lstm{k}.W_x"] = (n_in, 4 * h)
            shapes[f"lstm{k}.W_h"] = (h, 4 * h)
            shapes[f"lstm{k}.b"] = (4 * h,)
        if cfg.has_attention:
            shapes["W_v"] = (cfg.attention_dim, h)
            shapes["b_v"] = (cfg.attention_dim,)
            shapes["u"] = (cfg.attention_dim,)
        shapes["W_c"] = (h,)
        shapes["b_c"] = ()
        if cfg.has_decay and cfg.decay_mode == "learned":
            shapes["lambda_raw"] = ()
        if cfg.variant == "fusion":
            n_in = cfg.control_dim
            for k, n_out in enumerate(cfg.control_hidden_dims):
                shapes[f"ctrl{k}.W"] = (n_in, n_out)
                shapes[f"ctrl{k}.b"] = (n_out,)
                n_in = n_out
            shapes["W_ntp"] = (n_in,)
        return shapes

    @classmethod
    def init_params(cls, cfg: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
        """Uniform(+-1/sqrt(fan_in)) weights, zero biases, forget-gate bias 1."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in cls.param_shapes(cfg).items():
            leaf = name.split(".")[-1]
            if leaf.startswith("b"):
                arr = np.zeros(shape)
                if name.startswith("lstm"):
                    h = cfg.hidden_dim
                    arr[h:2 * h] = 1.0
            elif name == "lambda_raw":
                arr = np.array(softplus_inverse(cfg.lambda_init))
            else:
                # W_v and W_e are stored [out, in]; the rest [in, out] or vectors
                fan_in = shape[1] if name in ("W_v", "W_e") else shape[0]
                bound = 1.0 / math.sqrt(fan_in)
                arr = rng.uniform(-bound, bound, size=shape)
            params[name] = arr
        return params

    def check_shapes(self):
        expected = self.param_shapes(self.config)
        if set(expected) != set(self.params):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise DimensionError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise DimensionError(f"parameter {name}: expected shape {shape}, got {self.params[name].shape}")

    def trainable_names(self) -> list[str]:
        return [n for n in self.params if not (n == "u" and self.config.fixed_u)]

    @property
    def decay_rate(self) -> float | None:
        cfg = self.config
        if not cfg.has_decay:
            return None
        if cfg.decay_mode == "fixed":
            return cfg.fixed_lambda
        return float(np.logaddexp(0.0, self.params["lambda_raw"]))

    def buffers(self) -> dict[str, np.ndarray]:
        return {"control_mean": self.control_mean, "control_std": self.control_std}

    def prepare(self, train_paths: Sequence[TouchpointPath]) -> None:
        """Data-dependent setup before training.

        Fits the control standardisation (fusion only).  Then ``W_c`` is
        oriented so that ``z = W_c . s`` is positive on most of a sample of
        training paths, and ``b_c`` is set so that the median prediction
        equals the training conversion rate.  Without the bias shift the
        quickest way to fit the base rate is to push every ``z`` below 0,
        a dead ReLU from which no gradient returns.  ``W_c`` is not scaled
        up: path vectors of a deep LSTM are small at initialisation, and a
        large ``W_c`` makes Adam's sign-like first steps swing ``z`` widely.
        """
        if not train_paths:
            return
        if self.config.variant == "fusion":
            self._fit_control_stats(train_paths)
        sample = self._sample(train_paths)
        if not sample:
            return
        s = self._path_vectors(sample)
        z = s @ self.params["W_c"]
        if np.mean(z > 0) < 0.5:
            self.params["W_c"] = -self.params["W_c"]
            z = -z
        rate = float(np.clip(np.mean([p.label for p in train_paths]), 0.01, 0.99))
        rest = self._control_part(sample)
        self.params["b_c"] = np.array(math.log(rate / (1 - rate)) - float(np.median(np.maximum(z, 0) + rest)))

    def revive(self, train_paths: Sequence[TouchpointPath]) -> bool:
        """Reactivate the classifier ReLU if it is off on every sampled path.

        ``W_c`` moves along the mean path vector until the median ``z`` is 1
        and ``b_c`` drops by the same amount, so the learned direction and
        the typical prediction are kept.  Returns True when it acted.
        """
        sample = self._sample(train_paths)
        if not sample:
            return False
        s = self._path_vectors(sample)
        z = s @ self.params["W_c"]
        m = s.mean(axis=0)
        mm = float(m @ m)
        if np.any(z > 0) or mm == 0:
            return False
        shift = 1.0 - float(np.median(z))
        self.params["W_c"] = self.params["W_c"] + shift * m / mm
        self.params["b_c"] = self.params["b_c"] - 1.0
        return True

    @staticmethod
    def _sample(paths, limit=256):
        return [p for p in paths[:limit] if len(p)]

    def _path_vectors(self, paths):
        return np.stack([fo.path_vector for fo in self.forward_batch(paths)])

    def _control_part(self, paths):
        if self.config.variant != "fusion":
            return np.zeros(len(paths))
        ctrl = np.array([p.controls for p in paths], dtype=np.float64)
        return self._control_logit(ctrl, self.leaves(requires_grad=False)).data

    def _fit_control_stats(self, train_paths):
        C = np.array([p.controls for p in train_paths], dtype=np.float64).reshape(len(train_paths), -1)
        if C.shape[1] != self.config.control_dim:
            raise DimensionError(f"paths carry {C.shape[1]} controls, model expects {self.config.control_dim}")
        self.control_mean = C.mean(axis=0)
        std = C.std(axis=0)
        self.control_std = np.where(std > 0, std, 1.0)

    # -- graph construction --------------------------------------------------

    def leaves(self, requires_grad: bool = True) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    def _lstm(self, x, P, layers):
        """Run stacked LSTM layers over x [B, T, n_in]; returns top states [B, T, h]."""
        for k in range(layers):
            proj = ag.matmul(x, P[f"lstm{k}.W_x"]) + P[f"lstm{k}.b"]
            x = ag.lstm_recurrence(proj, P[f"lstm{k}.W_h"])
        return x

    def _lstm_composed(self, x, P, layers):
        """Same as :meth:`_lstm`, built from elementwise primitives step by step."""
        h_dim = self.config.hidden_dim
        T = x.shape[1]
        for k in range(layers):
            proj = ag.matmul(x, P[f"lstm{k}.W_x"]) + P[f"lstm{k}.b"]
            W_h = P[f"lstm{k}.W_h"]
            h = c = None
            states = []
            for t in range(T):
                gates = ag.take(proj, t, axis=1)
                if h is not None:
                    gates = gates + ag.matmul(h, W_h)
                sig = ag.sigmoid(ag.slice_last(gates, 0, 3 * h_dim))
                g = ag.tanh(ag.slice_last(gates, 3 * h_dim, 4 * h_dim))
                i = ag.slice_last(sig, 0, h_dim)
                o = ag.slice_last(sig, 2 * h_dim, 3 * h_dim)
                c = i * g if c is None else ag.slice_last(sig, h_dim, 2 * h_dim) * c + i * g
                h = o * ag.tanh(c)
                states.append(h)
            x = ag.stack(states, axis=1)
        return x

    def _attention(self, H, lags, P):
        """Attention weights [B, T] and path vector [B, h] from hidden states H [B, T, h]."""
        cfg = self.config
        B, T, _ = H.shape
        V = ag.tanh(ag.matmul(H, ag.transpose(P["W_v"])) + P["b_v"])
        logits = ag.reshape(ag.matmul(V, ag.reshape(P["u"], (cfg.attention_dim, 1))), (B, T))
        offsets = None
        if cfg.has_decay:
            if lags is None:
                raise ConfigError(f"variant {cfg.variant} needs time lags")
            lam = ag.softplus(P["lambda_raw"]) if cfg.decay_mode == "learned" else cfg.fixed_lambda
            offsets = ag.mul(lam, np.asarray(lags, dtype=np.float64))
        a = ag.softmax_with_offsets(logits, offsets)
        s = ag.tsum(ag.reshape(a, (B, T, 1)) * H, axis=1)
        return a, s

    def _control_logit(self, controls, P):
        cfg = self.config
        controls = np.asarray(controls, dtype=np.float64)
        if controls.ndim != 2 or controls.shape[1] != cfg.control_dim:
            raise DimensionError(f"control vector has shape {controls.shape[1:]}, expected ({cfg.control_dim},)")
        v = Tensor((controls - self.control_mean) / self.control_std, requires_grad=False)
        for k in range(len(cfg.control_hidden_dims)):
            v = ag.relu(ag.matmul(v, P[f"ctrl{k}.W"]) + P[f"ctrl{k}.b"])
        return ag.tsum(v * P["W_ntp"], axis=-1)

    def graph(self, batch: Batch, P: dict[str, Tensor]):
        """Build the forward graph; returns (p [B], attention [B, T] or None, s [B, h], H [B, T, h])."""
        cfg = self.config
        events = batch.events
        if events.ndim != 2 or events.shape[1] < 1:
            raise DomainError("paths must have at least one event")
        if events.min() < 0 or events.max() >= cfg.vocab_size:
            raise DomainError(f"touchpoint index outside vocabulary of size {cfg.vocab_size}")
        E = ag.embedding_lookup(P["W_e"], events)
        H = self._lstm(E, P, cfg.lstm_layers)
        if cfg.has_attention:
            a, s = self._attention(H, batch.lags, P)
        else:
            a, s = None, ag.take(H, H.shape[1] - 1, axis=1)
        logit = ag.relu(ag.tsum(s * P["W_c"], axis=-1)) + P["b_c"]
        if cfg.variant == "fusion":
            logit = logit + self._control_logit(batch.controls, P)
        return ag.sigmoid(logit), a, s, H

    def batch_probabilities(self, batch: Batch, P: dict[str, Tensor]) -> Tensor:
        return self.graph(batch, P)[0]

    def penalty(self, P):
        return None

    # -- inference -----------------------------------------------------------

    def forward_batch(self, paths: Sequence[TouchpointPath]) -> list[ForwardOutput]:
        out: list[ForwardOutput | None] = [None] * len(paths)
        P = self.leaves(requires_grad=False)
        for idx in group_by_length(paths):
            if len(paths[idx[0]]) == 0:
                raise DomainError("cannot run the sequence model on an empty path")
            p, a, s, H = self.graph(Batch.from_paths([paths[i] for i in idx]), P)
            T = H.shape[1]
            for j, i in enumerate(idx):
                att = a.data[j].copy() if a is not None else np.full(T, 1.0 / T)
                out[i] = ForwardOutput(float(p.data[j]), att, s.data[j].copy(), H.data[j].copy())
        return out

    def forward(self, path: TouchpointPath) -> ForwardOutput:
        return self.forward_batch([path])[0]

    def predict(self, paths: Sequence[TouchpointPath]) -> np.ndarray:
        probs = np.empty(len(paths))
        nonempty = [i for i, p in enumerate(paths) if len(p)]
        for i, fo in zip(nonempty, self.forward_batch([paths[i] for i in nonempty])):
            probs[i] = fo.probability
        for i in set(range(len(paths))) - set(nonempty):
            probs[i] = self.predict_empty(paths[i])
        return probs

    def predict_empty(self, path: TouchpointPath) -> float:
        """Conversion probability with no touchpoint exposure."""
        logit = float(self.params["b_c"])
        if self.config.variant == "fusion":
            P = self.leaves(requires_grad=False)
            logit += float(self._control_logit(np.array([path.controls]), P).data[0])
        return 1.0 / (1.0 + math.exp(-logit))

    # -- persistence hooks ---------------------------------------------------

    def config_dict(self) -> dict:
        return self.config.to_dict()

    @classmethod
    def from_state(cls, config: dict, params: dict, buffers: dict, vocab: Vocabulary | None):
        model = cls(ModelConfig.from_dict(config), vocab=vocab, params=params)
        if buffers:
            model.control_mean = np.asarray(buffers["control_mean"], dtype=np.float64)
            model.control_std = np.asarray(buffers["control_std"], dtype=np.float64)
        return model

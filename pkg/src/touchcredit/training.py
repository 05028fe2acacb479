"""Loss, Adam, early-stopped training and evaluation metrics."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from . import autograd as ag
from .autograd import Tensor
from .data import DatasetSplit, TouchpointPath, Vocabulary
from .errors import ConfigError, DivergenceError, DomainError, NonFiniteError
from .model import Batch, ModelConfig, SequenceModel, group_by_length

log = logging.getLogger(__name__)

P_EPS = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.eps > 0):
            raise ConfigError("learning rate and eps must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must be >= 1")


def bce_loss(p, label) -> Tensor:
    """Mean binary cross-entropy; ``p`` is clamped to [1e-12, 1 - 1e-12]."""
    return ag.mean(ag.bce(p, label, eps=P_EPS))


def log_loss(probs, labels) -> float:
    p = np.clip(np.asarray(probs, dtype=float), P_EPS, 1 - P_EPS)
    y = np.asarray(labels, dtype=float)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


# ----------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              cfg: TrainConfig) -> None:
    """One bias-corrected Adam update of ``params`` (entries are replaced, not mutated)."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = b1 * m + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        params[name] = params[name] - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


# ----------------------------------------------------------------------------
# metrics


def auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DomainError("AUC needs both positive and negative labels")
    ranks = rankdata(scores)  # average ranks, so tied pairs contribute 1/2
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class EvalResult:
    accuracy: float
    auc: float
    logloss: float
    n: int
    probabilities: np.ndarray

    def metrics(self) -> dict:
        return {"accuracy": self.accuracy, "auc": self.auc, "logloss": self.logloss, "n": self.n}


def evaluate(model, paths: Sequence[TouchpointPath], threshold: float = 0.5) -> EvalResult:
    if not paths:
        raise DomainError("cannot evaluate on an empty path list")
    probs = model.predict(paths)
    labels = np.array([p.label for p in paths], dtype=bool)
    try:
        a = auc(probs, labels)
    except DomainError:
        a = float("nan")
    acc = float(np.mean((probs >= threshold) == labels))
    return EvalResult(acc, a, log_loss(probs, labels), len(paths), probs)


# ----------------------------------------------------------------------------
# training loop


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_loss: float
    valid_auc: float
    elapsed: float


@dataclass
class TrainingLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "valid_loss", "valid_auc", "elapsed_seconds"])
            for r in self.epochs:
                w.writerow([r.epoch, f"{r.train_loss:.6f}", f"{r.valid_loss:.6f}",
                            f"{r.valid_auc:.6f}", f"{r.elapsed:.3f}"])


def _epoch_batches(groups: list[list[int]], batch_size: int, rng: np.random.Generator) -> list[list[int]]:
    batches = []
    for g in groups:
        perm = [g[i] for i in rng.permutation(len(g))]
        batches.extend(perm[i:i + batch_size] for i in range(0, len(perm), batch_size))
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def _gradients(model, paths, P):
    batch = model.encode(paths) if hasattr(model, "encode") else Batch.from_paths(paths)
    loss = bce_loss(model.batch_probabilities(batch, P), batch.labels)
    total = loss
    pen = model.penalty(P)
    if pen is not None:
        total = total + pen
    ag.backward(total)
    return loss.item()


def fit(model, train_paths: Sequence[TouchpointPath], valid_paths: Sequence[TouchpointPath],
        cfg: TrainConfig) -> TrainingLog:
    """Train ``model`` in place with Adam and early stopping on validation loss.

    Paths are sorted by id first, so the result does not depend on input
    order.  Each epoch shuffles with a seeded generator and batches paths of
    equal length together; the gradient is the batch-mean of the per-path
    gradients.  The parameters of the best validation epoch are restored.
    """
    if not train_paths or not valid_paths:
        raise DomainError("training and validation sets must be non-empty")
    train_paths = sorted(train_paths, key=lambda p: p.path_id)
    valid_paths = sorted(valid_paths, key=lambda p: p.path_id)
    rng = np.random.default_rng(cfg.seed)
    model.prepare(train_paths)
    groups = model.group_paths(train_paths) if hasattr(model, "group_paths") else group_by_length(train_paths)
    names = model.trainable_names()
    state = AdamState()
    history = TrainingLog()
    best_loss, best_params, bad = np.inf, None, 0
    valid_labels = [p.label for p in valid_paths]
    start = time.perf_counter()

    for epoch in range(1, cfg.max_epochs + 1):
        loss_sum, n_seen = 0.0, 0
        for chunk in _epoch_batches(groups, cfg.batch_size, rng):
            P = model.leaves()
            for n in P:
                if n not in names:
                    P[n].requires_grad = False
            try:
                # overflow surfaces as NonFiniteError; the numpy warning adds nothing
                with np.errstate(over="ignore", invalid="ignore"):
                    loss = _gradients(model, [train_paths[i] for i in chunk], P)
            except NonFiniteError as e:
                raise DivergenceError(f"epoch {epoch}: non-finite value during training ({e})") from None
            if not np.isfinite(loss):
                raise DivergenceError(f"epoch {epoch}: training loss is {loss}")
            adam_step(model.params, {n: P[n].grad for n in names}, state, cfg)
            loss_sum += loss * len(chunk)
            n_seen += len(chunk)

        if hasattr(model, "revive") and model.revive(train_paths):
            log.info("epoch %d: classifier ReLU was off on all sampled paths; reactivated", epoch)
        probs = model.predict(valid_paths)
        v_loss = log_loss(probs, valid_labels)
        if not np.isfinite(v_loss):
            raise DivergenceError(f"epoch {epoch}: validation loss is {v_loss}")
        try:
            v_auc = auc(probs, valid_labels)
        except DomainError:
            v_auc = float("nan")
        history.epochs.append(EpochRecord(epoch, loss_sum / n_seen, v_loss, v_auc,
                                          time.perf_counter() - start))
        log.info("epoch %d train %.4f valid %.4f auc %.4f", epoch, loss_sum / n_seen, v_loss, v_auc)

        if v_loss < best_loss:
            best_loss, bad = v_loss, 0
            best_params = {k: v.copy() for k, v in model.params.items()}
            history.best_epoch = epoch
        else:
            bad += 1
            if bad >= cfg.patience:
                history.stopped_early = True
                break

    model.params = best_params
    return history


def train(model_config: ModelConfig, train_config: TrainConfig, split: DatasetSplit,
          vocab: Vocabulary | None = None) -> tuple[SequenceModel, TrainingLog]:
    """Initialise a sequence model from ``train_config.seed`` and fit it on ``split``."""
    model = SequenceModel(model_config, vocab=vocab, seed=train_config.seed)
    history = fit(model, split.train, split.validation, train_config)
    return model, history

"""Six-model comparison on synthetic data with planted ground truth.

Each seed generates a fresh dataset, prepares it with the standard
pipeline and fits last-touch, logistic regression and the four sequence
variants on the same split.  Test AUC and accuracy are tabulated.
"""
from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .baselines import LrFeatureSpec, lr_train, lta_fit
from .data import DatasetSplit, Vocabulary
from .model import ModelConfig
from .pipeline import PrepConfig, derive_seed, prepare_split
from .synthgen import GeneratorSpec, generate
from .training import TrainConfig, evaluate, train

MODELS = ("lta", "lr", "lstm", "dnamta", "timedecay", "fusion")
# benchmark / CLI names -> model variants
SEQUENCE_VARIANTS = {"lstm": "lstm", "dnamta": "attention", "timedecay": "timedecay", "fusion": "fusion"}
ORDER = ("fusion", "timedecay", "dnamta", "lstm", "lr", "lta")


@dataclass(frozen=True)
class SequenceDims:
    embed_dim: int = 16
    hidden_dim: int = 32
    attention_dim: int = 32
    lstm_layers: int = 1
    control_hidden_dims: tuple[int, ...] = (16, 16, 16)


@dataclass(frozen=True)
class BenchmarkConfig:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    prep: PrepConfig = field(default_factory=PrepConfig)
    dims: SequenceDims = field(default_factory=SequenceDims)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=2e-3, max_epochs=40, patience=5))
    lr_train: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=1e-2, max_epochs=100, patience=5))
    lr_l2: float = 1e-4
    models: tuple[str, ...] = MODELS


def model_config(name: str, vocab: Vocabulary, dims: SequenceDims, **overrides) -> ModelConfig:
    variant = SEQUENCE_VARIANTS[name]
    kw = dict(vocab_size=vocab.size, embed_dim=dims.embed_dim, hidden_dim=dims.hidden_dim,
              attention_dim=dims.attention_dim, lstm_layers=dims.lstm_layers,
              control_dim=len(vocab.controls), control_hidden_dims=dims.control_hidden_dims, variant=variant)
    kw.update(overrides)
    return ModelConfig(**kw)


def fit_named(name: str, data: DatasetSplit, vocab: Vocabulary, dims: SequenceDims, train_cfg: TrainConfig,
              lr_cfg: TrainConfig, lr_l2: float = 1e-4, horizon_days: int = 57, **model_overrides):
    """Fit one of :data:`MODELS`; returns ``(model, training log or None)``."""
    if name == "lta":
        return lta_fit(data.train, vocab.size, vocab), None
    if name == "lr":
        spec = LrFeatureSpec(horizon_days=horizon_days, vocab_size=vocab.size)
        return lr_train(data.train, data.validation, spec, lr_cfg, l2=lr_l2, vocab=vocab)
    if name not in SEQUENCE_VARIANTS:
        raise KeyError(name)
    return train(model_config(name, vocab, dims, **model_overrides), train_cfg, data, vocab)


@dataclass
class BenchmarkRow:
    seed: int
    model: str
    auc: float
    accuracy: float
    seconds: float
    epochs: int


def run_seed(cfg: BenchmarkConfig, seed: int, log: Callable[[str], None] | None = None) -> list[BenchmarkRow]:
    gen = replace(cfg.generator, seed=seed)
    vocab = gen.vocab
    data = prepare_split(generate(gen), cfg.prep, seed)
    train_cfg = replace(cfg.train, seed=derive_seed(seed, "train"))
    lr_cfg = replace(cfg.lr_train, seed=derive_seed(seed, "train"))
    horizon = int(np.floor(gen.horizon)) + 1
    rows = []
    for name in cfg.models:
        t0 = time.perf_counter()
        model, history = fit_named(name, data, vocab, cfg.dims, train_cfg, lr_cfg, cfg.lr_l2, horizon)
        ev = evaluate(model, data.test)
        rows.append(BenchmarkRow(seed, name, ev.auc, ev.accuracy, time.perf_counter() - t0,
                                 len(history.epochs) if history is not None else 0))
        if log:
            log(f"seed {seed} {name:<9} auc {ev.auc:.4f} acc {ev.accuracy:.4f} ({rows[-1].seconds:.1f}s)")
    return rows


@dataclass
class BenchmarkResult:
    rows: list[BenchmarkRow]
    seconds: float

    def auc_table(self) -> dict[int, dict[str, float]]:
        out: dict[int, dict[str, float]] = {}
        for r in self.rows:
            out.setdefault(r.seed, {})[r.model] = r.auc
        return out

    def summary(self) -> str:
        models = [m for m in MODELS if any(r.model == m for r in self.rows)]
        lines = [f"{'model':<10} {'mean AUC':>9} {'std':>7} {'mean acc':>9}"]
        for m in models:
            a = np.array([r.auc for r in self.rows if r.model == m])
            acc = np.array([r.accuracy for r in self.rows if r.model == m])
            lines.append(f"{m:<10} {a.mean():>9.4f} {a.std():>7.4f} {acc.mean():>9.4f}")
        table = self.auc_table()
        held = sum(ordering_holds(v) for v in table.values())
        lines.append(f"full ordering {' > '.join(ORDER)} held in {held}/{len(table)} seeds")
        lines.append(f"total time {self.seconds:.1f}s")
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "model", "auc", "accuracy", "epochs"])
            for r in self.rows:
                w.writerow([r.seed, r.model, f"{r.auc:.6f}", f"{r.accuracy:.6f}", r.epochs])


def run_benchmark(cfg: BenchmarkConfig = BenchmarkConfig(), log: Callable[[str], None] | None = None) -> BenchmarkResult:
    t0 = time.perf_counter()
    rows = []
    for seed in cfg.seeds:
        rows.extend(run_seed(cfg, seed, log))
    return BenchmarkResult(rows, time.perf_counter() - t0)


def ordering_holds(aucs: dict[str, float], min_gap: float = 0.03) -> bool:
    """fusion > timedecay >= dnamta >= lstm > lr > lta, and fusion - lta >= ``min_gap``."""
    a = aucs
    return (a["fusion"] > a["timedecay"] >= a["dnamta"] >= a["lstm"] > a["lr"] > a["lta"]
            and a["fusion"] - a["lta"] >= min_gap)


def pairwise_wins(tables: Sequence[dict[str, float]]) -> dict[tuple[str, str], int]:
    """For each adjacent pair of :data:`ORDER`, the number of seeds in which it holds."""
    out = {}
    for hi, lo in zip(ORDER, ORDER[1:]):
        strict = (hi, lo) in (("fusion", "timedecay"), ("lstm", "lr"), ("lr", "lta"))
        out[(hi, lo)] = sum((t[hi] > t[lo]) if strict else (t[hi] >= t[lo]) for t in tables)
    return out


def config_dict(cfg: BenchmarkConfig) -> dict:
    d = asdict(cfg)
    d["generator"] = cfg.generator.to_dict()
    return d


# ----------------------------------------------------------------------------
# attribution recovery against the generator's ground truth


@dataclass
class RecoveryResult:
    seed: int
    truth: dict[str, float]
    fractional: dict[str, float]
    attention: dict[str, float]

    @staticmethod
    def ranking(scores: dict[str, float]) -> tuple[str, ...]:
        return tuple(sorted(scores, key=lambda c: -scores[c]))

    def matches(self, which: str) -> bool:
        return self.ranking(getattr(self, which)) == self.ranking(self.truth)

    def top_share_error(self, which: str) -> float:
        top = self.ranking(self.truth)[0]
        return abs(getattr(self, which)[top] - self.truth[top])


def attribution_recovery(seed: int, cfg: BenchmarkConfig = BenchmarkConfig(), model_name: str = "fusion"):
    """Train ``model_name`` on a fresh dataset and score it against the planted credit.

    Scores and ground truth use the same converting test paths.  Returns
    ``(RecoveryResult, model, split)``.
    """
    from .attribution import attention_scores, fractional_scores
    from .synthgen import ground_truth_fractional

    gen = replace(cfg.generator, seed=seed)
    vocab = gen.vocab
    data = prepare_split(generate(gen), cfg.prep, seed)
    train_cfg = replace(cfg.train, seed=derive_seed(seed, "train"))
    model, _ = fit_named(model_name, data, vocab, cfg.dims, train_cfg, cfg.lr_train, cfg.lr_l2)
    result = RecoveryResult(seed, ground_truth_fractional(gen, data.test),
                            fractional_scores(model, data.test, vocab), attention_scores(model, data.test, vocab))
    return result, model, data


def lag_spearman(model, paths, vocab: Vocabulary, min_n: int = 30, bucket_days: float = 1.0) -> dict[str, float]:
    """Spearman correlation of bucket-mean attention against lag bucket, per touchpoint.

    Only buckets holding at least ``min_n`` events count; touchpoints left
    with fewer than three such buckets are omitted.
    """
    from scipy.stats import spearmanr

    from .attribution import lag_curves

    by_tp: dict[str, list] = {}
    for row in lag_curves(model, paths, vocab, bucket_days):
        if row.n >= min_n:
            by_tp.setdefault(row.touchpoint, []).append((row.bucket, row.mean))
    out = {}
    for tp, pts in by_tp.items():
        if len(pts) >= 3:
            b, m = zip(*pts)
            out[tp] = float(spearmanr(b, m)[0])
    return out

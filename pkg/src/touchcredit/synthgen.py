"""Synthetic journeys with a known conversion mechanism.

Each path's conversion logit is

    base_logit + sum_t effect[x_t] * exp(-decay_rate * lag_t) + control_effect * bump(d)

where ``d`` is days since signup at the path end and ``bump`` peaks at
signup and again when the free trial expires.  Labels are Bernoulli draws
from the sigmoid of that logit, so the per-event credit under the true
process is ``effect[x_t] * exp(-decay_rate * lag_t)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import TouchpointPath, Vocabulary, default_vocabulary
from .errors import ConfigError

CONTROL_NAMES = ("days_since_signup",)


def _default_effects():
    # display : email : paidsearch = 3 : 2 : 1 on the default vocabulary
    return (1.5, 1.5, 1.0, 1.0, 1.0, 0.5)


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters of the synthetic journey distribution."""

    touchpoint_effects: tuple[float, ...] = field(default_factory=_default_effects)
    decay_rate: float = 0.05
    base_logit: float = -5.0
    control_effect: float = 2.0
    mean_length: float = 8.0
    max_length: int = 30
    mean_gap: float = 2.0
    horizon: float = 56.0
    channel_mix: tuple[float, ...] | None = None
    max_signup_days: float = 60.0
    trial_days: float = 30.0
    bump_width: float = 3.0
    n_paths: int = 5000
    seed: int = 0
    vocabulary: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "touchpoint_effects", tuple(float(b) for b in self.touchpoint_effects))
        if self.channel_mix is not None:
            object.__setattr__(self, "channel_mix", tuple(float(w) for w in self.channel_mix))
        if self.decay_rate < 0:
            raise ConfigError("decay_rate must be >= 0")
        if self.n_paths < 1:
            raise ConfigError("n_paths must be >= 1")
        if self.mean_gap <= 0:
            raise ConfigError("mean_gap must be > 0")
        if self.mean_length < 1 or self.max_length < 1:
            raise ConfigError("path lengths must be >= 1")
        if self.horizon <= 0:
            raise ConfigError("horizon must be > 0")
        vocab = self.vocab
        if len(self.touchpoint_effects) != vocab.size:
            raise ConfigError(f"expected {vocab.size} touchpoint effects, got {len(self.touchpoint_effects)}")
        if self.channel_mix is not None:
            if len(self.channel_mix) != len(vocab.channels) or min(self.channel_mix) < 0 or sum(self.channel_mix) <= 0:
                raise ConfigError("channel_mix needs one non-negative weight per channel")

    @property
    def vocab(self) -> Vocabulary:
        if self.vocabulary is None:
            return default_vocabulary(CONTROL_NAMES)
        return Vocabulary.from_dict(self.vocabulary).with_controls(CONTROL_NAMES)

    def touchpoint_probs(self) -> np.ndarray:
        """Probability of drawing each touchpoint: pick a channel, then a member uniformly."""
        vocab = self.vocab
        chan = vocab.channel_index()
        n_chan = len(vocab.channels)
        mix = np.full(n_chan, 1.0 / n_chan) if self.channel_mix is None else np.asarray(self.channel_mix)
        mix = mix / mix.sum()
        counts = np.bincount(chan, minlength=n_chan)
        return mix[chan] / counts[chan]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["touchpoint_effects"] = list(self.touchpoint_effects)
        if self.channel_mix is not None:
            d["channel_mix"] = list(self.channel_mix)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown generator fields: {sorted(unknown)}")
        d = dict(d)
        for key in ("touchpoint_effects", "channel_mix"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GeneratorSpec":
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: invalid JSON ({e.msg})") from None


def signup_bump(days: np.ndarray | float, spec: GeneratorSpec):
    """Conversion bump at signup and at trial expiry."""
    d = np.asarray(days, dtype=float)
    w = spec.bump_width
    return np.exp(-d / w) + np.exp(-0.5 * ((d - spec.trial_days) / w) ** 2)


def event_credit(path: TouchpointPath, spec: GeneratorSpec) -> np.ndarray:
    """Per-event contribution to the true conversion logit."""
    beta = np.asarray(spec.touchpoint_effects)[np.asarray(path.events, dtype=np.intp)]
    return beta * np.exp(-spec.decay_rate * np.asarray(path.lags))


def true_logit(path: TouchpointPath, spec: GeneratorSpec) -> float:
    return float(spec.base_logit + event_credit(path, spec).sum()
                 + spec.control_effect * signup_bump(path.controls[0], spec))


def _draw_path(spec: GeneratorSpec, i: int, probs: np.ndarray) -> TouchpointPath:
    rng = np.random.default_rng([spec.seed, i])
    T = min(int(rng.geometric(1.0 / spec.mean_length)), spec.max_length)
    gaps = rng.exponential(spec.mean_gap, size=T)
    times = np.concatenate([[0.0], np.cumsum(gaps[:-1])])
    end = times[-1] + gaps[-1]
    if end > spec.horizon:
        scale = spec.horizon / end
        times = times * scale
        end = spec.horizon
    events = rng.choice(len(probs), size=T, p=probs)
    signup = rng.uniform(0.0, spec.max_signup_days)
    lags = end - times
    path = TouchpointPath(events.tolist(), lags.tolist(), times.tolist(), [signup], False, f"p{i:06d}", end)
    p = 1.0 / (1.0 + math.exp(-true_logit(path, spec)))
    label = bool(rng.random() < p)
    return TouchpointPath(path.events, path.lags, path.times, path.controls, label, path.path_id, end)


def generate(spec: GeneratorSpec) -> list[TouchpointPath]:
    """Draw ``spec.n_paths`` journeys; path ``i`` uses its own stream seeded by ``(seed, i)``."""
    probs = spec.touchpoint_probs()
    return [_draw_path(spec, i, probs) for i in range(spec.n_paths)]


def ground_truth_fractional(spec: GeneratorSpec, paths) -> dict[str, float]:
    """Channel shares of the true per-event credit, averaged over converting paths."""
    vocab = spec.vocab
    chan = vocab.channel_index()
    channels = vocab.channels
    total = np.zeros(len(channels))
    n = 0
    for path in paths:
        if not path.label or not path.events:
            continue
        credit = np.bincount(chan[np.asarray(path.events, dtype=np.intp)],
                             weights=event_credit(path, spec), minlength=len(channels))
        s = credit.sum()
        if s <= 0:
            continue
        total += credit / s
        n += 1
    if n == 0:
        return {c: 0.0 for c in channels}
    return {c: float(v / n) for c, v in zip(channels, total)}

"""Shared data preparation: dedup, negative down-sampling, split, derived seeds."""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import DatasetSplit, TouchpointPath, dedup_visits, downsample_negatives, split
from .errors import ConfigError


def derive_seed(seed: int, stage: str) -> int:
    """Independent 32-bit seed for a named pipeline stage."""
    return int(np.random.SeedSequence([int(seed), zlib.crc32(stage.encode("utf-8"))]).generate_state(1)[0])


@dataclass(frozen=True)
class PrepConfig:
    dedup_hours: float = 24.0
    neg_ratio: float = 1.0
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        if self.dedup_hours < 0:
            raise ConfigError("dedup_hours must be >= 0")
        if self.neg_ratio <= 0:
            raise ConfigError("neg_ratio must be > 0")
        if len(self.fractions) != 3 or min(self.fractions) < 0 or abs(sum(self.fractions) - 1) > 1e-9:
            raise ConfigError(f"split fractions must be three non-negative numbers summing to 1, got {self.fractions}")


def prepare_split(paths: Sequence[TouchpointPath], prep: PrepConfig, seed: int) -> DatasetSplit:
    """dedup -> down-sample negatives -> stratified split, each stage with its own derived seed."""
    deduped = [dedup_visits(p, prep.dedup_hours) for p in paths]
    sampled = downsample_negatives(deduped, prep.neg_ratio, derive_seed(seed, "downsample"))
    return split(sampled, prep.fractions, derive_seed(seed, "split"))

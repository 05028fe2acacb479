"""Customer paths: representation, JSONL I/O and dataset preparation.

A path is the ordered list of touchpoints one customer saw before the
observation end, together with static control variables and a conversion
label.  Times are in fractional days; each event's time lag is the gap
between its occurrence and the path end.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .autograd import Tensor
from .errors import ConfigError, DomainError, IngestError

log = logging.getLogger(__name__)

DEFAULT_TOUCHPOINTS = ("DC", "DI", "EC", "EO", "ES", "PS")
DEFAULT_CHANNELS = {
    "DC": "display",
    "DI": "display",
    "EC": "email",
    "EO": "email",
    "ES": "email",
    "PS": "paidsearch",
}


@dataclass(frozen=True)
class Vocabulary:
    """Ordered touchpoint names and the channel each belongs to."""

    names: tuple[str, ...]
    channel_of: dict[str, str]
    controls: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "controls", tuple(self.controls))
        if len(set(self.names)) != len(self.names):
            raise ConfigError("touchpoint names must be unique")
        if not self.names:
            raise ConfigError("vocabulary is empty")
        missing = [n for n in self.names if n not in self.channel_of]
        if missing:
            raise ConfigError(f"touchpoints without a channel: {missing}")
        object.__setattr__(self, "channel_of", {n: self.channel_of[n] for n in self.names})

    @property
    def size(self) -> int:
        return len(self.names)

    @property
    def channels(self) -> tuple[str, ...]:
        """Channel labels in order of first appearance."""
        return tuple(dict.fromkeys(self.channel_of[n] for n in self.names))

    def index(self, name: str) -> int:
        try:
            return self._lookup[name]
        except KeyError:
            raise DomainError(f"unknown touchpoint {name!r}") from None

    @cached_property
    def _lookup(self):
        return {n: i for i, n in enumerate(self.names)}

    def channel_index(self) -> np.ndarray:
        """Channel id of every touchpoint index."""
        chans = self.channels
        return np.array([chans.index(self.channel_of[n]) for n in self.names], dtype=np.intp)

    def with_controls(self, controls: Sequence[str]) -> "Vocabulary":
        return Vocabulary(self.names, self.channel_of, tuple(controls))

    def to_dict(self) -> dict:
        return {"touchpoints": list(self.names), "channels": dict(self.channel_of),
                "controls": list(self.controls)}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        try:
            return cls(tuple(d["touchpoints"]), dict(d["channels"]), tuple(d.get("controls", ())))
        except KeyError as e:
            raise ConfigError(f"vocabulary file missing key {e}") from None

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def default_vocabulary(controls: Sequence[str] = ()) -> Vocabulary:
    return Vocabulary(DEFAULT_TOUCHPOINTS, dict(DEFAULT_CHANNELS), tuple(controls))


@dataclass(frozen=True)
class TouchpointPath:
    """One customer journey.

    ``events`` are touchpoint indices in occurrence order, ``times`` the
    occurrence times and ``lags`` the time from each event to ``end_time``
    (all in days).  Lags are therefore non-increasing along the path.
    """

    events: tuple[int, ...]
    lags: tuple[float, ...]
    times: tuple[float, ...]
    controls: tuple[float, ...]
    label: bool
    path_id: str
    end_time: float = field(default=float("nan"))

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(int(e) for e in self.events))
        object.__setattr__(self, "lags", tuple(float(x) for x in self.lags))
        object.__setattr__(self, "times", tuple(float(x) for x in self.times))
        object.__setattr__(self, "controls", tuple(float(x) for x in self.controls))
        object.__setattr__(self, "label", bool(self.label))
        object.__setattr__(self, "path_id", str(self.path_id))
        if math.isnan(self.end_time) and self.times:
            object.__setattr__(self, "end_time", self.times[-1] + self.lags[-1])
        validate_path(self)

    def __len__(self):
        return len(self.events)

    @property
    def duration(self) -> float:
        """Days from the first event to the path end."""
        return self.lags[0] if self.lags else 0.0

    def replace_events(self, keep: Sequence[int]) -> "TouchpointPath":
        """Path restricted to the event positions in ``keep`` (order preserved)."""
        return TouchpointPath(
            tuple(self.events[i] for i in keep),
            tuple(self.lags[i] for i in keep),
            tuple(self.times[i] for i in keep),
            self.controls, self.label, self.path_id, self.end_time,
        )


def validate_path(path: TouchpointPath, allow_empty: bool = True) -> None:
    n = len(path.events)
    if len(path.lags) != n or len(path.times) != n:
        raise DomainError(f"path {path.path_id}: events, lags and times differ in length")
    if n == 0 and not allow_empty:
        raise DomainError(f"path {path.path_id}: no events")
    if any(lag < 0 for lag in path.lags):
        raise DomainError(f"path {path.path_id}: negative time lag")
    if any(b > a for a, b in zip(path.lags, path.lags[1:])):
        raise DomainError(f"path {path.path_id}: events not in occurrence order")
    if any(e < 0 for e in path.events):
        raise DomainError(f"path {path.path_id}: negative touchpoint index")
    if not all(math.isfinite(c) for c in path.controls):
        raise DomainError(f"path {path.path_id}: non-finite control value")


# ----------------------------------------------------------------------------
# JSONL


@dataclass
class IngestResult:
    paths: list[TouchpointPath]
    rejected: list[tuple[int, str]]
    control_names: tuple[str, ...] = ()


def _parse_record(rec: dict, vocab: Vocabulary, control_names: Sequence[str], line_no: int):
    try:
        raw_events = rec["events"]
        end_t = float(rec["end_t"])
        label = rec["converted"]
        path_id = rec["path_id"]
    except KeyError as e:
        raise IngestError(f"missing field {e}", line_no) from None
    if not isinstance(label, bool):
        raise IngestError("'converted' must be a boolean", line_no)
    pairs = []
    lookup = vocab._lookup
    for ev in raw_events:
        tp = ev.get("tp")
        if tp not in lookup:
            raise IngestError(f"unknown touchpoint {tp!r}", line_no)
        pairs.append((float(ev["t"]), lookup[tp]))
    pairs.sort(key=lambda p: p[0])
    if pairs and pairs[-1][0] > end_t:
        raise IngestError("event after path end", line_no)
    controls = rec.get("controls", {}) or {}
    missing = [c for c in control_names if c not in controls]
    if missing:
        raise IngestError(f"missing controls {missing}", line_no)
    return TouchpointPath(
        events=[e for _, e in pairs],
        lags=[end_t - t for t, _ in pairs],
        times=[t for t, _ in pairs],
        controls=[float(controls[c]) for c in control_names],
        label=label,
        path_id=path_id,
        end_time=end_t,
    )


def ingest_jsonl(stream: Iterable[str], vocab: Vocabulary) -> IngestResult:
    """Parse line-delimited path records.

    Unknown touchpoints and malformed lines raise :class:`IngestError` with
    the line number.  Records with no events are skipped and listed in
    ``rejected``.  Control values are read in the order declared by the
    vocabulary, or in the key order of the first record when none is
    declared.
    """
    paths, rejected = [], []
    control_names = list(vocab.controls) if vocab.controls else None
    for line_no, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise IngestError(f"invalid JSON ({e.msg})", line_no) from None
        if control_names is None:
            control_names = list((rec.get("controls") or {}).keys())
        if not rec.get("events"):
            rejected.append((line_no, "empty event list"))
            continue
        paths.append(_parse_record(rec, vocab, control_names, line_no))
    if rejected:
        log.warning("rejected %d record(s) with empty event lists", len(rejected))
    return IngestResult(paths, rejected, tuple(control_names or ()))


def read_jsonl(path, vocab: Vocabulary) -> IngestResult:
    with open(path, encoding="utf-8") as fh:
        return ingest_jsonl(fh, vocab)


def path_record(path: TouchpointPath, vocab: Vocabulary) -> dict:
    names = vocab.controls
    if len(names) != len(path.controls):
        names = tuple(f"c{i}" for i in range(len(path.controls)))
    return {
        "path_id": path.path_id,
        "events": [{"tp": vocab.names[e], "t": t} for e, t in zip(path.events, path.times)],
        "end_t": path.end_time,
        "controls": dict(zip(names, path.controls)),
        "converted": path.label,
    }


def export_jsonl(paths: Iterable[TouchpointPath], vocab: Vocabulary) -> list[str]:
    return [json.dumps(path_record(p, vocab)) for p in paths]


def write_jsonl(paths: Iterable[TouchpointPath], vocab: Vocabulary, dest) -> None:
    with open(dest, "w", encoding="utf-8") as fh:
        for line in export_jsonl(paths, vocab):
            fh.write(line + "\n")


# ----------------------------------------------------------------------------
# preparation


def dedup_visits(path: TouchpointPath, window_hours: float) -> TouchpointPath:
    """Drop repeat visits of the same touchpoint within ``window_hours`` of the last kept one."""
    if window_hours < 0:
        raise DomainError("dedup window must be non-negative")
    if window_hours == 0:
        return path
    window = window_hours / 24.0
    last_kept: dict[int, float] = {}
    keep = []
    for i, (e, t) in enumerate(zip(path.events, path.times)):
        prev = last_kept.get(e)
        if prev is not None and t - prev < window:
            continue
        last_kept[e] = t
        keep.append(i)
    if len(keep) == len(path.events):
        return path
    return path.replace_events(keep)


def downsample_negatives(paths: Sequence[TouchpointPath], ratio: float, seed: int) -> list[TouchpointPath]:
    """Keep every positive and ``floor(ratio * n_pos)`` randomly chosen negatives.

    Input order is preserved among the survivors.
    """
    if ratio <= 0:
        raise DomainError("target ratio must be positive")
    pos = [i for i, p in enumerate(paths) if p.label]
    neg = [i for i, p in enumerate(paths) if not p.label]
    if not pos:
        raise DomainError("cannot down-sample without positive paths")
    n_keep = min(len(neg), int(math.floor(ratio * len(pos))))
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(np.array(neg, dtype=np.int64), size=n_keep, replace=False).tolist()) if neg else set()
    keep = set(pos) | chosen
    return [p for i, p in enumerate(paths) if i in keep]


@dataclass(frozen=True)
class DatasetSplit:
    train: list[TouchpointPath]
    validation: list[TouchpointPath]
    test: list[TouchpointPath]
    seed: int


def split(paths: Sequence[TouchpointPath], fractions=(0.7, 0.1, 0.2), seed: int = 0) -> DatasetSplit:
    """Label-stratified random split into train/validation/test.

    Part sizes are ``round(fraction * n)`` (the test part takes the
    remainder).  Within each label stratum paths are shuffled and ranked by
    their relative position, so every part receives each label in
    proportion.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise DomainError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    order = sorted(range(len(paths)), key=lambda i: paths[i].path_id)
    keyed = []
    for label in (True, False):
        members = [i for i in order if paths[i].label == label]
        perm = rng.permutation(len(members))
        m = len(members)
        keyed.extend(((r + 0.5) / m, label, members[j]) for r, j in enumerate(perm))
    keyed.sort(key=lambda k: (k[0], not k[1]))
    n = len(paths)
    n_train = int(round(fractions[0] * n))
    n_valid = int(round(fractions[1] * n))
    n_valid = min(n_valid, n - n_train)
    idx = [k[2] for k in keyed]
    parts = idx[:n_train], idx[n_train:n_train + n_valid], idx[n_train + n_valid:]
    return DatasetSplit(*([paths[i] for i in part] for part in parts), seed=seed)


def one_hot(index: int, size: int) -> Tensor:
    if not 0 <= index < size:
        raise DomainError(f"index {index} out of range for size {size}")
    v = np.zeros(size)
    v[index] = 1.0
    return Tensor(v, requires_grad=False)


def channel_of_events(path: TouchpointPath, vocab: Vocabulary) -> list[str]:
    return [vocab.channel_of[vocab.names[e]] for e in path.events]


def touchpoint_frequencies(path: TouchpointPath, vocab_size: int) -> np.ndarray:
    """Occurrence count of every touchpoint in the path."""
    return np.bincount(np.asarray(path.events, dtype=np.intp), minlength=vocab_size).astype(float)

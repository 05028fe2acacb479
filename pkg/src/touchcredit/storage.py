"""JSON model container shared by the sequence models and the baselines.

Floats are written with ``repr`` precision, so a save/load round trip is
bit-exact.  The file records a format version and a hash of the config;
both are checked on load.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np

from .data import Vocabulary
from .errors import LoadError

FORMAT = "touchcredit-model"
VERSION = 1


def config_hash(kind: str, config: dict) -> str:
    blob = json.dumps({"kind": kind, "config": config}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _encode(arr) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}


def _decode(name: str, blob) -> np.ndarray:
    try:
        shape = tuple(int(n) for n in blob["shape"])
        data = np.array(blob["data"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as e:
        raise LoadError(f"field {name}: malformed tensor ({e})") from None
    if data.size != int(np.prod(shape)):
        raise LoadError(f"field {name}: {data.size} values do not fill shape {shape}")
    return data.reshape(shape)


def save_model(model, path) -> None:
    config = model.config_dict()
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "kind": model.kind,
        "config": config,
        "config_hash": config_hash(model.kind, config),
        "vocabulary": model.vocab.to_dict() if model.vocab is not None else None,
        "buffers": {k: _encode(v) for k, v in model.buffers().items()},
        "params": {k: _encode(v) for k, v in model.params.items()},
    }
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_model(path):
    """Load any model written by :func:`save_model`."""
    from .baselines import LastTouchModel, LogisticModel
    from .model import SequenceModel

    kinds = {cls.kind: cls for cls in (SequenceModel, LogisticModel, LastTouchModel)}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise LoadError(f"{path}: not a valid model file ({e.msg})") from None
    except OSError as e:
        raise LoadError(f"{path}: {e.strerror}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise LoadError(f"{path}: field format: not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise LoadError(f"{path}: field version: unsupported version {doc.get('version')!r}")
    kind = doc.get("kind")
    if kind not in kinds:
        raise LoadError(f"{path}: field kind: unknown model kind {kind!r}")
    config = doc.get("config")
    if not isinstance(config, dict):
        raise LoadError(f"{path}: field config: missing")
    if doc.get("config_hash") != config_hash(kind, config):
        raise LoadError(f"{path}: field config_hash: does not match config")
    params = {k: _decode(k, v) for k, v in (doc.get("params") or {}).items()}
    buffers = {k: _decode(k, v) for k, v in (doc.get("buffers") or {}).items()}
    vocab = Vocabulary.from_dict(doc["vocabulary"]) if doc.get("vocabulary") else None
    try:
        return kinds[kind].from_state(config, params, buffers, vocab)
    except (ValueError, TypeError, KeyError) as e:
        raise LoadError(f"{path}: {e}") from None

"""Command-line entry point: generate, train, eval, attribute, benchmark.

Settings resolve as command-line flag, then the JSON ``--config`` file, then
the built-in default.  Exit codes: 0 success, 2 input or configuration
error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from . import attribution
from .benchmark import MODELS, SEQUENCE_VARIANTS, BenchmarkConfig, SequenceDims, fit_named, run_benchmark
from .data import Vocabulary, default_vocabulary, read_jsonl, write_jsonl
from .errors import ConfigError, DivergenceError, TouchcreditError
from .pipeline import PrepConfig, derive_seed, prepare_split
from .storage import load_model, save_model
from .synthgen import GeneratorSpec, generate
from .training import TrainConfig, evaluate

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
VARIANT_CHOICES = ("lstm", "dnamta", "attention", "timedecay", "fusion", "lr", "lta")

DEFAULTS = {
    "seed": 0,
    "n_paths": None,
    "variant": "dnamta",
    "dedup_hours": 24.0,
    "neg_ratio": 1.0,
    "split": "0.7,0.1,0.2",
    "embed_dim": 16,
    "hidden_dim": 64,
    "attention_dim": None,  # follows hidden_dim
    "layers": 3,
    "lambda": "learned",
    "epochs": 30,
    "patience": 5,
    "lr": 1e-3,
    "batch_size": 32,
    "l2": 1e-4,
    "method": "incremental",
    "k": 5,
    "bucket_days": 1.0,
    "seeds": 5,
}


class Settings:
    """Flag > config file > default lookup."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file = {}
        if getattr(args, "config", None):
            try:
                with open(args.config, encoding="utf-8") as fh:
                    self.file = json.load(fh)
            except OSError as e:
                raise ConfigError(f"{args.config}: {e.strerror}") from None
            except json.JSONDecodeError as e:
                raise ConfigError(f"{args.config}: invalid JSON ({e.msg})") from None
            if not isinstance(self.file, dict):
                raise ConfigError(f"{args.config}: config must be a JSON object")
            self.file = {k.replace("-", "_"): v for k, v in self.file.items()}

    def __getitem__(self, key):
        v = getattr(self.args, key, None)
        if v is not None:
            return v
        if key in self.file:
            return self.file[key]
        return DEFAULTS.get(key)


def parse_split(text) -> tuple[float, float, float]:
    if isinstance(text, (list, tuple)):
        parts = list(text)
    else:
        parts = str(text).split(",")
    try:
        vals = tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"--split expects three comma-separated numbers, got {text!r}") from None
    if len(vals) != 3:
        raise ConfigError(f"--split expects three comma-separated numbers, got {text!r}")
    return vals


def parse_lambda(text: str) -> dict:
    text = str(text)
    if text == "learned":
        return {"decay_mode": "learned"}
    if text.startswith("fixed:"):
        try:
            return {"decay_mode": "fixed", "fixed_lambda": float(text[len("fixed:"):])}
        except ValueError:
            pass
    raise ConfigError(f"--lambda expects 'learned' or 'fixed:<value>', got {text!r}")


def _variant_name(v: str) -> str:
    v = "dnamta" if v == "attention" else v
    if v not in MODELS:
        raise ConfigError(f"unknown variant {v!r}")
    return v


def _load_vocab(path) -> Vocabulary:
    return Vocabulary.load(path) if path else default_vocabulary()


def _read(path, vocab: Vocabulary):
    if not path:
        raise ConfigError("--data is required")
    try:
        res = read_jsonl(path, vocab)
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None
    if res.rejected:
        print(f"rejected {len(res.rejected)} record(s) with empty event lists", file=sys.stderr)
    if not res.paths:
        raise ConfigError(f"{path}: no usable paths")
    return res


def _read_paths(path, vocab: Vocabulary):
    return _read(path, vocab).paths


def _stem(path: str) -> str:
    base, ext = os.path.splitext(path)
    return base if ext else path


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


# ----------------------------------------------------------------------------
# commands


def cmd_generate(args, cfg: Settings) -> int:
    spec = GeneratorSpec.load(args.spec) if args.spec else GeneratorSpec.from_dict(cfg.file.get("generator", {}))
    overrides = {}
    if cfg["n_paths"] is not None:
        overrides["n_paths"] = int(cfg["n_paths"])
    if args.seed is not None or "seed" in cfg.file:
        overrides["seed"] = int(cfg["seed"])
    spec = replace(spec, **overrides)
    out = args.out or "data.jsonl"
    _ensure_parent(out)
    paths = generate(spec)
    write_jsonl(paths, spec.vocab, out)
    spec.save(_stem(out) + ".spec.json")
    rate = sum(p.label for p in paths) / len(paths)
    print(json.dumps({"n_paths": len(paths), "conversion_rate": round(rate, 6), "out": out}))
    return EXIT_OK


def _model_overrides(cfg: Settings, name: str) -> dict:
    decay = parse_lambda(cfg["lambda"])  # validated even where it does not apply
    if SEQUENCE_VARIANTS.get(name) in ("timedecay", "fusion"):
        return decay
    return {}


def cmd_train(args, cfg: Settings) -> int:
    vocab = _load_vocab(args.vocab)
    res = _read(args.data, vocab)
    paths = res.paths
    if not vocab.controls:
        vocab = vocab.with_controls(res.control_names)
    seed = int(cfg["seed"])
    name = _variant_name(cfg["variant"])
    prep = PrepConfig(float(cfg["dedup_hours"]), float(cfg["neg_ratio"]), parse_split(cfg["split"]))
    data = prepare_split(paths, prep, seed)
    if not data.train or not data.validation:
        raise ConfigError("split left the training or validation part empty")
    hidden = int(cfg["hidden_dim"])
    dims = SequenceDims(embed_dim=int(cfg["embed_dim"]), hidden_dim=hidden,
                        attention_dim=int(cfg["attention_dim"] or hidden), lstm_layers=int(cfg["layers"]),
                        control_hidden_dims=tuple(cfg.file.get("control_hidden_dims", (64, 64, 64))))
    if name == "fusion" and not vocab.controls:
        raise ConfigError("fusion needs control variables in the data")
    tcfg = TrainConfig(learning_rate=float(cfg["lr"]), batch_size=int(cfg["batch_size"]),
                       max_epochs=int(cfg["epochs"]), patience=int(cfg["patience"]),
                       seed=derive_seed(seed, "train"))
    model, history = fit_named(name, data, vocab, dims, tcfg, tcfg, float(cfg["l2"]),
                               **_model_overrides(cfg, name))
    out = args.out or f"model_{name}.json"
    _ensure_parent(out)
    save_model(model, out)
    stem = _stem(out)
    if history is not None:
        history.write_csv(stem + ".log.csv")
    write_jsonl(data.test, vocab, stem + ".test.jsonl")
    ev = evaluate(model, data.validation)
    print(json.dumps({"model": out, "variant": name, "validation_accuracy": round(ev.accuracy, 6),
                      "validation_auc": round(ev.auc, 6),
                      "epochs": len(history.epochs) if history is not None else 0}))
    return EXIT_OK


def _model_and_data(args):
    if not args.model:
        raise ConfigError("--model is required")
    model = load_model(args.model)
    vocab = model.vocab or default_vocabulary()
    return model, vocab, _read_paths(args.data, vocab)


def cmd_eval(args, cfg: Settings) -> int:
    model, _, paths = _model_and_data(args)
    res = evaluate(model, paths)
    print(json.dumps(res.metrics(), sort_keys=True))
    return EXIT_OK


def cmd_attribute(args, cfg: Settings) -> int:
    model, vocab, paths = _model_and_data(args)
    method = cfg["method"]
    if method == "attention" and not attribution.has_attention(model):
        variant = getattr(getattr(model, "config", None), "variant", model.kind)
        raise ConfigError(f"attention scores need an attention model; {variant!r} has none "
                          "(use --method incremental)")
    out = args.out or "report"
    files = attribution.write_report_bundle(model, paths, vocab, out, method=method, top_k=int(cfg["k"]),
                                            bucket_days=float(cfg["bucket_days"]))
    print(json.dumps({"out": out, "files": files}))
    return EXIT_OK


def cmd_benchmark(args, cfg: Settings) -> int:
    base = BenchmarkConfig()
    n = int(cfg["seeds"])
    seed0 = int(cfg["seed"])
    bcfg = replace(base, seeds=tuple(range(seed0, seed0 + n)))
    if args.epochs is not None or "epochs" in cfg.file:
        bcfg = replace(bcfg, train=replace(bcfg.train, max_epochs=int(cfg["epochs"])))
    if args.n_paths is not None:
        bcfg = replace(bcfg, generator=replace(bcfg.generator, n_paths=int(args.n_paths)))
    out = args.out or "benchmark"
    os.makedirs(out, exist_ok=True)
    result = run_benchmark(bcfg, log=lambda m: print(m, file=sys.stderr, flush=True))
    result.write_csv(os.path.join(out, "benchmark.csv"))
    summary = result.summary()
    with open(os.path.join(out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(summary + "\n")
    print(summary)
    return EXIT_OK


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="touchcredit", description="Multi-touch attribution with LSTM attention models.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of default settings")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")

    g = sub.add_parser("generate", help="write a synthetic JSONL dataset")
    common(g)
    g.add_argument("--spec", help="generator spec JSON")
    g.add_argument("--n-paths", dest="n_paths", type=int)

    t = sub.add_parser("train", help="fit a model on a JSONL dataset")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--vocab", help="vocabulary JSON (default: DC DI EC EO ES PS)")
    t.add_argument("--variant", choices=VARIANT_CHOICES)
    t.add_argument("--dedup-hours", dest="dedup_hours", type=float)
    t.add_argument("--neg-ratio", dest="neg_ratio", type=float)
    t.add_argument("--split")
    t.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    t.add_argument("--embed-dim", dest="embed_dim", type=int)
    t.add_argument("--attention-dim", dest="attention_dim", type=int)
    t.add_argument("--layers", type=int)
    t.add_argument("--lambda", dest="lambda", metavar="fixed:<v>|learned")
    t.add_argument("--epochs", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--l2", type=float)

    e = sub.add_parser("eval", help="print accuracy, AUC and log-loss as JSON")
    common(e)
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)

    a = sub.add_parser("attribute", help="write the attribution CSV bundle")
    common(a)
    a.add_argument("--model", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--method", choices=("incremental", "attention"))
    a.add_argument("--k", type=int)
    a.add_argument("--bucket-days", dest="bucket_days", type=float)

    b = sub.add_parser("benchmark", help="six-model synthetic comparison")
    common(b)
    b.add_argument("--seeds", type=int, help="number of seeds (default 5)")
    b.add_argument("--epochs", type=int)
    b.add_argument("--n-paths", dest="n_paths", type=int)
    return ap


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "attribute": cmd_attribute,
            "benchmark": cmd_benchmark}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, Settings(args))
    except DivergenceError as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as e:
        print(f"error: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (TouchcreditError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

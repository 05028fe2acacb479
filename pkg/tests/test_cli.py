import hashlib
import json

import pytest

from touchcredit.cli import main, parse_lambda, parse_split
from touchcredit.errors import ConfigError
from touchcredit.storage import load_model

SMALL = ["--hidden-dim", "4", "--embed-dim", "3", "--layers", "1", "--epochs", "2"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["generate", "--n-paths", "400", "--seed", "3", "--out", str(d / "data.jsonl")]) == 0
    return d / "data.jsonl"


def test_generate_counts_and_summary(tmp_path, capsys):
    code, out, _ = run(capsys, "generate", "--n-paths", "1000", "--seed", "1", "--out", tmp_path / "d.jsonl")
    assert code == 0
    lines = (tmp_path / "d.jsonl").read_text().splitlines()
    assert len(lines) == 1000
    summary = json.loads(out)
    recount = sum(json.loads(l)["converted"] for l in lines) / 1000
    assert summary["conversion_rate"] == pytest.approx(recount, abs=1e-6)
    spec = json.loads((tmp_path / "d.spec.json").read_text())
    assert spec["n_paths"] == 1000 and spec["seed"] == 1


def test_generate_is_repeatable(tmp_path, capsys):
    for name in ("a", "b"):
        run(capsys, "generate", "--n-paths", "200", "--seed", "5", "--out", tmp_path / f"{name}.jsonl")
    assert sha(tmp_path / "a.jsonl") == sha(tmp_path / "b.jsonl")


def test_generate_bad_spec(tmp_path, capsys):
    (tmp_path / "s.json").write_text(json.dumps({"decay_rate": -1}))
    code, _, err = run(capsys, "generate", "--spec", tmp_path / "s.json", "--out", tmp_path / "x.jsonl")
    assert code == 2 and "decay_rate" in err
    (tmp_path / "t.json").write_text("{broken")
    assert run(capsys, "generate", "--spec", tmp_path / "t.json", "--out", tmp_path / "x.jsonl")[0] == 2


@pytest.mark.parametrize("variant", ["lstm", "dnamta", "timedecay", "fusion", "lr", "lta"])
def test_train_every_variant(variant, dataset, tmp_path, capsys):
    out = tmp_path / f"{variant}.json"
    code, stdout, _ = run(capsys, "train", "--data", dataset, "--variant", variant, "--out", out, *SMALL)
    assert code == 0
    info = json.loads(stdout)
    assert 0 <= info["validation_auc"] <= 1
    model = load_model(out)
    assert model.vocab.controls == ("days_since_signup",)
    if variant not in ("lr", "lta"):
        rows = (tmp_path / f"{variant}.log.csv").read_text().splitlines()
        assert len(rows) == 1 + info["epochs"]
    assert (tmp_path / f"{variant}.test.jsonl").exists()


def test_eval_is_repeatable(dataset, tmp_path, capsys):
    run(capsys, "train", "--data", dataset, "--variant", "timedecay", "--out", tmp_path / "m.json", *SMALL)
    a = run(capsys, "eval", "--model", tmp_path / "m.json", "--data", tmp_path / "m.test.jsonl")
    b = run(capsys, "eval", "--model", tmp_path / "m.json", "--data", tmp_path / "m.test.jsonl")
    assert a[0] == 0 and a[1] == b[1]
    assert set(json.loads(a[1])) == {"accuracy", "auc", "logloss", "n"}


def test_eval_vocabulary_mismatch(dataset, tmp_path, capsys):
    run(capsys, "train", "--data", dataset, "--variant", "lta", "--out", tmp_path / "m.json", *SMALL)
    (tmp_path / "odd.jsonl").write_text(json.dumps(
        {"path_id": "x", "events": [{"tp": "TV", "t": 0.0}], "end_t": 1.0, "controls": {}, "converted": True}) + "\n")
    code, _, err = run(capsys, "eval", "--model", tmp_path / "m.json", "--data", tmp_path / "odd.jsonl")
    assert code == 2 and "line 1" in err


def test_attribute_bundle_and_lstm_attention_error(dataset, tmp_path, capsys):
    run(capsys, "train", "--data", dataset, "--variant", "fusion", "--out", tmp_path / "f.json", *SMALL)
    code, out, _ = run(capsys, "attribute", "--model", tmp_path / "f.json", "--data", tmp_path / "f.test.jsonl",
                       "--out", tmp_path / "rep", "--k", 2)
    assert code == 0
    files = json.loads(out)["files"]
    assert files[:4] == ["fractional.csv", "incremental.csv", "lag_curves.csv", "densities.csv"]
    assert len(files) == 6
    run(capsys, "train", "--data", dataset, "--variant", "lstm", "--out", tmp_path / "l.json", *SMALL)
    code, _, err = run(capsys, "attribute", "--model", tmp_path / "l.json", "--data", tmp_path / "l.test.jsonl",
                       "--method", "attention", "--out", tmp_path / "rep2")
    assert code == 2 and "attention" in err


def test_config_file_precedence(dataset, tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"variant": "lstm", "hidden_dim": 5, "epochs": 1,
                                                 "embed_dim": 2, "layers": 1}))
    run(capsys, "train", "--config", tmp_path / "c.json", "--data", dataset, "--out", tmp_path / "a.json")
    assert load_model(tmp_path / "a.json").config.hidden_dim == 5
    assert load_model(tmp_path / "a.json").config.variant == "lstm"
    run(capsys, "train", "--config", tmp_path / "c.json", "--data", dataset, "--hidden-dim", "3",
        "--out", tmp_path / "b.json")
    assert load_model(tmp_path / "b.json").config.hidden_dim == 3


def test_lambda_flag(dataset, tmp_path, capsys):
    run(capsys, "train", "--data", dataset, "--variant", "timedecay", "--lambda", "fixed:0.2",
        "--out", tmp_path / "m.json", *SMALL)
    assert load_model(tmp_path / "m.json").decay_rate == 0.2
    assert run(capsys, "train", "--data", dataset, "--lambda", "fast", "--out", tmp_path / "x.json", *SMALL)[0] == 2


def test_missing_inputs_exit_2(tmp_path, capsys):
    assert run(capsys, "train", "--data", tmp_path / "none.jsonl", "--out", tmp_path / "m.json")[0] == 2
    assert run(capsys, "eval", "--model", tmp_path / "none.json", "--data", tmp_path / "none.jsonl")[0] == 2
    assert run(capsys, "train", "--data", tmp_path / "none.jsonl", "--split", "0.5,0.5")[0] == 2


def test_divergence_exit_3(dataset, tmp_path, capsys):
    code, _, err = run(capsys, "train", "--data", dataset, "--variant", "lr", "--lr", "1e300",
                       "--out", tmp_path / "m.json", "--epochs", "3")
    assert code == 3 and "diverged" in err


def test_train_attribute_is_byte_identical(dataset, tmp_path, capsys):
    for name in ("a", "b"):
        run(capsys, "train", "--data", dataset, "--variant", "timedecay", "--seed", 11,
            "--out", tmp_path / name / "m.json", *SMALL)
        run(capsys, "attribute", "--model", tmp_path / name / "m.json", "--data", tmp_path / name / "m.test.jsonl",
            "--out", tmp_path / name / "rep")
    assert sha(tmp_path / "a" / "m.json") == sha(tmp_path / "b" / "m.json")
    files = sorted(p.name for p in (tmp_path / "a" / "rep").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b" / "rep").iterdir())
    for f in files:
        assert sha(tmp_path / "a" / "rep" / f) == sha(tmp_path / "b" / "rep" / f)


def test_flag_parsers():
    assert parse_split("0.7,0.1,0.2") == (0.7, 0.1, 0.2)
    assert parse_lambda("fixed:0.5") == {"decay_mode": "fixed", "fixed_lambda": 0.5}
    assert parse_lambda("learned") == {"decay_mode": "learned"}
    with pytest.raises(ConfigError):
        parse_split("0.7,0.3")
    with pytest.raises(ConfigError):
        parse_lambda("fixed:x")

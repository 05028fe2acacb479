import csv
import os

import numpy as np
import pytest

from conftest import make_path
from touchcredit.attribution import (UnsupportedVariantError, attention_scores, build_report,
                                     exposure_window_densities, fractional_scores, heatmap_weights,
                                     incremental_matrix, incremental_score, incremental_scores, lag_curves,
                                     without_channel, write_report_bundle)
from touchcredit.baselines import LogisticModel, LrFeatureSpec
from touchcredit.data import default_vocabulary
from touchcredit.errors import DomainError
from touchcredit.model import ModelConfig, SequenceModel

VOCAB = default_vocabulary()
DC, DI, EC, EO, ES, PS = range(6)


def email_only_lr():
    """Logistic model in which only email touchpoints raise the conversion logit."""
    spec = LrFeatureSpec()
    model = LogisticModel(spec)
    w = np.zeros(spec.dim)
    for tp in (EC, EO, ES):
        w[tp * 57:(tp + 1) * 57] = 1.0
    model.params = {"w": w, "b": np.array(-1.0)}
    return model


def seq_model(variant="timedecay", seed=0, **kw):
    cfg = ModelConfig(vocab_size=6, embed_dim=3, hidden_dim=4, attention_dim=4, lstm_layers=1, variant=variant, **kw)
    return SequenceModel(cfg, seed=seed)


def uniform_attention_model(variant="attention", **kw):
    model = seq_model(variant, **kw)
    model.params["u"] = np.zeros_like(model.params["u"])
    return model


def mixed_paths(n=30, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        T = int(rng.integers(1, 6))
        lags = np.sort(rng.uniform(0, 50, T))[::-1]
        out.append(make_path(rng.integers(0, 6, T), lags, label=bool(i % 3), path_id=f"m{i:03d}"))
    return out


def test_absent_channel_scores_exactly_zero():
    model = seq_model()
    p = make_path([DC, EC], [3.0, 1.0], label=True)
    assert incremental_score(model, p, "paidsearch", VOCAB) == 0.0
    assert without_channel(p, "paidsearch", VOCAB) is p


def test_planted_email_effect():
    model = email_only_lr()
    p = make_path([DC, EO, DI, PS], [5.0, 4.0, 2.0, 1.0], label=True)
    assert incremental_score(model, p, "email", VOCAB) > 0.1
    assert incremental_score(model, p, "display", VOCAB) == pytest.approx(0.0, abs=1e-15)


def test_single_channel_path_compares_with_empty():
    model = seq_model("fusion", control_dim=1, control_hidden_dims=(2,))
    p = make_path([EC, EO], [2.0, 1.0], controls=[0.3], label=True)
    expect = model.predict([p])[0] - model.predict_empty(p)
    assert incremental_score(model, p, "email", VOCAB) == pytest.approx(expect, abs=1e-15)


def test_incremental_matrix_matches_single_calls():
    model = seq_model()
    paths = mixed_paths(12)
    mat = incremental_matrix(model, paths, VOCAB)
    for i, p in enumerate(paths):
        for c, ch in enumerate(VOCAB.channels):
            assert mat[i, c] == pytest.approx(incremental_score(model, p, ch, VOCAB), abs=1e-14)


def test_fractional_degenerate_single_channel():
    model = email_only_lr()
    paths = [make_path([EC, ES], [3.0, 1.0], label=True, path_id=str(i)) for i in range(4)]
    assert fractional_scores(model, paths, VOCAB) == {"display": 0.0, "email": 1.0, "paidsearch": 0.0}


@pytest.mark.parametrize("seed", range(5))
def test_fractional_is_a_probability_vector(seed):
    scores = fractional_scores(seq_model(seed=seed), mixed_paths(40, seed), VOCAB)
    assert all(v >= 0 for v in scores.values())
    assert sum(scores.values()) == pytest.approx(1.0, abs=1e-6)


def test_scores_need_converting_paths():
    paths = [make_path([DC], [1.0], label=False)]
    with pytest.raises(DomainError):
        fractional_scores(seq_model(), paths, VOCAB)
    with pytest.raises(DomainError):
        attention_scores(seq_model(), paths, VOCAB)


def test_uniform_attention_scores():
    model = uniform_attention_model()
    scores = attention_scores(model, [make_path([DI, EC, PS], [3.0, 2.0, 1.0], label=True)], VOCAB)
    for v in scores.values():
        assert v == pytest.approx(1 / 3, abs=1e-12)


def test_strong_decay_favours_latest_channel():
    model = uniform_attention_model("timedecay", decay_mode="fixed", fixed_lambda=20.0)
    paths = [make_path([DC, EO, PS], [9.0, 5.0, 0.5], label=True, path_id=str(i)) for i in range(3)]
    scores = attention_scores(model, paths, VOCAB)
    assert max(scores, key=scores.get) == "paidsearch"
    assert sum(scores.values()) == pytest.approx(1.0, abs=1e-12)


def test_attention_scores_ignore_order_and_ids():
    model = seq_model(seed=3)
    paths = mixed_paths(20, 3)
    renamed = [make_path(p.events, p.lags, label=p.label, path_id=f"z{i}") for i, p in enumerate(paths[::-1])]
    a, b = attention_scores(model, paths, VOCAB), attention_scores(model, renamed, VOCAB)
    for c in a:
        assert a[c] == pytest.approx(b[c], abs=1e-12)


def test_lstm_has_no_attention_scores():
    with pytest.raises(UnsupportedVariantError):
        attention_scores(seq_model("lstm"), mixed_paths(5), VOCAB)
    with pytest.raises(UnsupportedVariantError):
        build_report(seq_model("lstm"), mixed_paths(5), VOCAB, method="attention")


def test_heatmap_passthrough():
    model = seq_model()
    p = make_path([DC, EC, PS, PS], [7.0, 3.0, 2.0, 0.0], label=True)
    w, prob = heatmap_weights(model, p)
    out = model.forward(p)
    np.testing.assert_array_equal(w, out.attention)
    assert prob == out.probability and len(w) == 4


def test_lag_curve_buckets():
    model = seq_model()
    (row,) = lag_curves(model, [make_path([EO], [3.5], label=True)], VOCAB)
    assert (row.touchpoint, row.bucket, row.mean, row.std, row.n) == ("EO", 3, 1.0, 0.0, 1)
    rows = lag_curves(model, [make_path([DC, DC], [7.0, 6.99])], VOCAB)
    assert [r.bucket for r in rows] == [6, 7]
    weekly = lag_curves(model, [make_path([DC, DC], [7.0, 6.99])], VOCAB, bucket_days=7)
    assert [r.bucket for r in weekly] == [0, 1]
    with pytest.raises(DomainError):
        lag_curves(model, [], VOCAB, bucket_days=0.5)


def test_density_windows_partition():
    model = seq_model()
    paths = mixed_paths(60, 5)
    dens = exposure_window_densities(model, paths, VOCAB)
    sub = sum(len(dens[w]) for w in ((0.0, 7.0), (7.0, 30.0), (30.0, 56.0)))
    assert len(dens[(0.0, 56.0)]) == sub == sum(p.label for p in paths)
    for rows in dens.values():
        np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-12)


def test_density_empty_window():
    dens = exposure_window_densities(seq_model(), [make_path([DC], [2.0], label=True)], VOCAB)
    assert dens[(30.0, 56.0)].shape == (0, 3)


def test_early_paid_search_effect():
    # short journeys end on paid search; long ones saw it only at the start
    model = uniform_attention_model("timedecay", decay_mode="fixed", fixed_lambda=0.5)
    short = [make_path([DC, PS], [4.0, 0.5], label=True, path_id=f"s{i}") for i in range(5)]
    long = [make_path([PS, EC, DI], [40.0, 10.0, 1.0], label=True, path_id=f"l{i}") for i in range(5)]
    dens = exposure_window_densities(model, short + long, VOCAB)
    ps = VOCAB.channels.index("paidsearch")
    assert dens[(0.0, 7.0)][:, ps].mean() > dens[(30.0, 56.0)][:, ps].mean()


def read(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_report_bundle(tmp_path):
    model = seq_model(seed=2)
    paths = mixed_paths(30, 2)
    files = write_report_bundle(model, paths, VOCAB, tmp_path, top_k=3)
    heatmaps = [f for f in files if f.startswith("heatmap_")]
    assert set(files) - set(heatmaps) == {"fractional.csv", "incremental.csv", "lag_curves.csv", "densities.csv"}
    assert len(heatmaps) == 3 and sorted(os.listdir(tmp_path)) == sorted(files)
    frac = read(tmp_path / "fractional.csv")
    assert frac[0] == ["channel", "score"]
    assert sum(float(r[1]) for r in frac[1:]) == pytest.approx(1.0, abs=1e-5)
    inc = read(tmp_path / "incremental.csv")
    assert inc[-1][0] == "total"
    assert float(inc[-1][1]) == pytest.approx(sum(float(r[1]) for r in inc[1:-1]), abs=1e-5)
    assert all(len(r[1].split(".")[1]) == 6 for r in frac[1:])
    hm = read(tmp_path / heatmaps[0])
    pid = heatmaps[0][len("heatmap_"):-4]
    T = len(next(p for p in paths if p.path_id == pid))
    assert hm[0] == ["t", "touchpoint", "weight", "p"] and len(hm) == T + 1
    assert read(tmp_path / "lag_curves.csv")[0] == ["touchpoint", "bucket", "mean", "std", "n"]
    assert read(tmp_path / "densities.csv")[0] == ["window", "channel", "score"]


def test_report_bundle_is_deterministic(tmp_path):
    model = seq_model(seed=4)
    paths = mixed_paths(25, 4)
    a = write_report_bundle(model, paths, VOCAB, tmp_path / "a")
    b = write_report_bundle(model, paths, VOCAB, tmp_path / "b")
    assert a == b
    for f in a:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_bundle_without_attention(tmp_path):
    files = write_report_bundle(seq_model("lstm"), mixed_paths(10), VOCAB, tmp_path)
    assert files == ["fractional.csv", "incremental.csv"]


def test_report_fields():
    model = seq_model(seed=1)
    paths = mixed_paths(20, 1)
    rep = build_report(model, paths, VOCAB, method="attention", dataset_id="toy")
    assert rep.metadata == {"variant": "timedecay", "dataset": "toy", "n_paths": sum(p.label for p in paths),
                            "method": "attention"}
    assert rep.incremental == incremental_scores(model, paths, VOCAB)
    assert rep.incremental_total == pytest.approx(sum(rep.incremental.values()))
    assert len(rep.event_weights) == rep.metadata["n_paths"]

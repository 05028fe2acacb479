import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_path, model_grad_errors, numeric_grad, rel_err
from touchcredit import autograd as ag
from touchcredit.errors import ConfigError, DimensionError, DomainError
from touchcredit.model import VARIANTS, Batch, ModelConfig, SequenceModel, group_by_length, softplus_inverse


def small_config(variant, **kw):
    base = dict(vocab_size=6, embed_dim=3, hidden_dim=4, attention_dim=4, lstm_layers=2,
                control_dim=2 if variant == "fusion" else 0, control_hidden_dims=(3, 3), variant=variant)
    base.update(kw)
    return ModelConfig(**base)


def random_paths(rng, n, T, n_controls=0, vocab=6):
    out = []
    for i in range(n):
        lags = np.sort(rng.uniform(0, 20, size=T))[::-1]
        out.append(make_path(rng.integers(0, vocab, size=T), lags, rng.normal(size=n_controls),
                             label=bool(i % 2), path_id=f"r{i}"))
    return out


@pytest.mark.parametrize("variant", VARIANTS)
def test_end_to_end_gradients(variant, rng):
    cfg = small_config(variant)
    model = SequenceModel(cfg, seed=3)
    paths = random_paths(rng, 4, 5, cfg.control_dim)
    model.prepare(paths)  # keeps the classifier ReLU active, so W_c gets a real gradient
    for name, v in model.params.items():
        if name.split(".")[-1].startswith("b") and name != "b_c":
            # zero biases put pre-activations exactly on a ReLU kink
            model.params[name] = v + rng.normal(scale=0.1, size=v.shape)
    errs = model_grad_errors(model, paths)
    assert set(errs) == set(model.params)
    assert max(errs.values()) < 1e-4, errs


def test_fused_lstm_matches_composed(rng):
    cfg = small_config("attention", lstm_layers=3)
    model = SequenceModel(cfg, seed=5)
    x = rng.normal(size=(3, 6, cfg.embed_dim))
    P1, P2 = model.leaves(), model.leaves()
    X1, X2 = ag.Tensor(x, requires_grad=True), ag.Tensor(x, requires_grad=True)
    w = rng.normal(size=(3, 6, cfg.hidden_dim))
    H1 = model._lstm(X1, P1, 3)
    H2 = model._lstm_composed(X2, P2, 3)
    np.testing.assert_allclose(H1.data, H2.data, rtol=0, atol=1e-14)
    ag.backward(ag.tsum(H1 * w))
    ag.backward(ag.tsum(H2 * w))
    np.testing.assert_allclose(X1.grad, X2.grad, rtol=1e-12, atol=1e-14)
    for k in P1:
        if k.startswith("lstm"):
            np.testing.assert_allclose(P1[k].grad, P2[k].grad, rtol=1e-12, atol=1e-14)


def test_lstm_recurrence_fd(rng):
    proj = rng.normal(size=(2, 4, 8))
    W_h = rng.normal(size=(2, 8)) * 0.5
    w = rng.normal(size=(2, 4, 2))

    def f():
        return float(np.sum(ag.lstm_recurrence(ag.Tensor(proj), ag.Tensor(W_h)).data * w))

    P, W = ag.Tensor(proj, requires_grad=True), ag.Tensor(W_h, requires_grad=True)
    ag.backward(ag.tsum(ag.lstm_recurrence(P, W) * w))
    assert rel_err(P.grad, numeric_grad(f, proj)) < 1e-6
    assert rel_err(W.grad, numeric_grad(f, W_h)) < 1e-6


def attention_with_equal_states(lags, lam):
    """Time-decay attention of a path whose hidden states are all identical."""
    cfg = ModelConfig(vocab_size=1, embed_dim=2, hidden_dim=3, attention_dim=3, lstm_layers=1,
                      variant="timedecay", lambda_init=lam)
    model = SequenceModel(cfg, seed=0)
    T = len(lags)
    H = ag.Tensor(np.ones((1, T, 3)))
    a, _ = model._attention(H, np.array([lags]), model.leaves(requires_grad=False))
    return a.data[0]


def test_decay_attention_example():
    a = attention_with_equal_states([2.0, 1.0, 0.0], 1.0)
    np.testing.assert_allclose(a, [0.0900, 0.2447, 0.6652], atol=5e-5)


@pytest.mark.parametrize("lam", [0.1, 1.0, 10.0])
def test_decay_attention_decreasing_in_lag(lam):
    lags = [9.0, 5.5, 3.0, 1.0, 0.0]
    a = attention_with_equal_states(lags, lam)
    assert np.all(np.diff(a) > 0)  # lags fall along the path, so weights rise
    assert abs(a.sum() - 1) < 1e-12


def test_equal_states_without_decay_are_uniform():
    cfg = small_config("attention")
    model = SequenceModel(cfg, seed=0)
    H = ag.Tensor(np.ones((1, 4, cfg.hidden_dim)))
    a, s = model._attention(H, None, model.leaves(requires_grad=False))
    np.testing.assert_allclose(a.data, 0.25, atol=1e-15)
    np.testing.assert_allclose(s.data, 1.0, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 7), st.sampled_from(VARIANTS))
def test_attention_is_a_simplex(seed, T, variant):
    rng = np.random.default_rng(seed)
    cfg = small_config(variant)
    model = SequenceModel(cfg, seed=seed)
    out = model.forward_batch(random_paths(rng, 3, T, cfg.control_dim))
    for o in out:
        assert np.all(o.attention > 0)
        assert abs(o.attention.sum() - 1) < 1e-9
        if variant != "lstm":
            np.testing.assert_allclose(o.path_vector, o.attention @ o.hidden_states, atol=1e-12)


def test_lstm_variant_uses_last_state(rng):
    model = SequenceModel(small_config("lstm"), seed=1)
    o = model.forward(random_paths(rng, 1, 5)[0])
    np.testing.assert_array_equal(o.path_vector, o.hidden_states[-1])
    np.testing.assert_allclose(o.attention, 0.2)


@pytest.mark.parametrize("variant", ["lstm", "attention", "timedecay"])
def test_relu_floor(variant, rng):
    model = SequenceModel(small_config(variant), seed=2)
    paths = random_paths(rng, 20, 4)
    floor = 1 / (1 + math.exp(-float(model.params["b_c"])))
    assert np.all(model.predict(paths) >= floor - 1e-15)
    model.params["W_c"] = np.zeros_like(model.params["W_c"])
    np.testing.assert_allclose(model.predict(paths), floor, rtol=0, atol=1e-15)


def test_fusion_adds_control_logit(rng):
    cfg = small_config("fusion")
    model = SequenceModel(cfg, seed=4)
    model.params["W_c"] = np.zeros_like(model.params["W_c"])
    path = random_paths(rng, 1, 3, 2)[0]
    ctrl = float(model._control_logit(np.array([path.controls]), model.leaves(False)).data[0])
    expect = 1 / (1 + math.exp(-(float(model.params["b_c"]) + ctrl)))
    assert model.forward(path).probability == pytest.approx(expect, abs=1e-14)
    assert model.predict_empty(path) == pytest.approx(expect, abs=1e-14)


def test_batched_forward_equals_single(rng):
    model = SequenceModel(small_config("fusion"), seed=7)
    paths = random_paths(rng, 5, 3, 2) + random_paths(rng, 4, 6, 2)
    batched = model.predict(paths)
    single = [model.forward(p).probability for p in paths]
    np.testing.assert_allclose(batched, single, rtol=0, atol=1e-14)


def test_empty_path_prediction(rng):
    model = SequenceModel(small_config("timedecay"), seed=0)
    empty = make_path([], [], label=True, path_id="e")
    probs = model.predict([empty] + random_paths(rng, 2, 3))
    assert probs[0] == pytest.approx(1 / (1 + math.exp(-float(model.params["b_c"]))))
    with pytest.raises(DomainError):
        model.forward(empty)


def test_missing_lags_for_decay_variant(rng):
    model = SequenceModel(small_config("timedecay"), seed=0)
    batch = Batch.from_paths(random_paths(rng, 2, 3))
    batch.lags = None
    with pytest.raises(ConfigError):
        model.graph(batch, model.leaves(False))


def test_control_dimension_mismatch(rng):
    model = SequenceModel(small_config("fusion"), seed=0)
    with pytest.raises(DimensionError):
        model.predict(random_paths(rng, 2, 3, n_controls=3))


def test_unknown_touchpoint_index(rng):
    model = SequenceModel(small_config("attention", vocab_size=2), seed=0)
    with pytest.raises(DomainError):
        model.predict([make_path([0, 5], [2.0, 1.0])])


def test_mixed_length_batch_rejected(rng):
    with pytest.raises(DimensionError):
        Batch.from_paths(random_paths(rng, 1, 2) + random_paths(rng, 1, 3))


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=6, variant="transformer")
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=6, variant="fusion", control_dim=0)
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=6, hidden_dim=0)
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=6, decay_mode="fixed", fixed_lambda=0.0)


def test_param_shapes_and_mismatch_error():
    cfg = small_config("fusion")
    model = SequenceModel(cfg, seed=0)
    assert model.params["W_e"].shape == (3, 6)
    assert model.params["lstm1.W_x"].shape == (4, 16)
    assert model.params["W_ntp"].shape == (3,)
    bad = dict(model.params)
    bad["W_c"] = np.zeros(5)
    with pytest.raises(DimensionError, match="W_c"):
        SequenceModel(cfg, params=bad)


def test_fixed_decay_and_fixed_u():
    cfg = small_config("timedecay", decay_mode="fixed", fixed_lambda=0.3, fixed_u=True)
    model = SequenceModel(cfg, seed=0)
    assert "lambda_raw" not in model.params
    assert model.decay_rate == 0.3
    assert "u" not in model.trainable_names()


def test_softplus_inverse_roundtrip():
    for y in (1e-4, 0.1, 1.0, 20.0):
        assert math.log1p(math.exp(softplus_inverse(y))) == pytest.approx(y, rel=1e-12)


def test_learned_lambda_starts_at_init():
    model = SequenceModel(small_config("timedecay", lambda_init=0.25), seed=0)
    assert model.decay_rate == pytest.approx(0.25, rel=1e-12)


def test_group_by_length():
    paths = [make_path([0] * n, list(range(n, 0, -1)), path_id=str(i)) for i, n in enumerate([3, 1, 3, 2])]
    assert group_by_length(paths) == [[1], [3], [0, 2]]


def test_prepare_activates_relu(rng):
    model = SequenceModel(small_config("attention"), seed=11)
    paths = random_paths(rng, 40, 4)
    model.prepare(paths)
    s = np.stack([o.path_vector for o in model.forward_batch(paths)])
    z = s @ model.params["W_c"]
    assert np.mean(z > 0) >= 0.5  # W_c oriented so the ReLU is on for most paths
    # b_c puts the median prediction at the base rate (half the labels are positive)
    assert np.median(model.predict(paths)) == pytest.approx(0.5, abs=1e-9)


def test_revive_reactivates_dead_relu(rng):
    model = SequenceModel(small_config("attention"), seed=11)
    paths = random_paths(rng, 40, 4)
    s = np.stack([o.path_vector for o in model.forward_batch(paths)])
    model.params["W_c"] = np.zeros_like(model.params["W_c"])  # z == 0 on every path: no gradient
    b_c = float(model.params["b_c"])
    assert model.revive(paths)
    z = s @ model.params["W_c"]
    assert z.mean() == pytest.approx(1.0)
    assert float(model.params["b_c"]) == pytest.approx(b_c - 1.0)
    assert not model.revive(paths)

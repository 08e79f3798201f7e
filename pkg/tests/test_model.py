import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pinnet import backend, oracles
from pinnet.model import (ConfigError, EmbeddingLookupError, ModelConfig, ModelParams, embed,
                          forward_batch, forward_example, init_params, output_head, pin_forward,
                          predict_batch, restack, unstack)


def same(a, b):
    # bitwise on the compiled kernels, 1e-12 on the NumPy fallback
    if backend == "c":
        np.testing.assert_array_equal(a, b)
    else:
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def scalar_model(kernels, w_out=0.0, bias=0.0):
    cfg = ModelConfig(1, 1, len(kernels), 1)
    p = ModelParams([np.array([[2.0]])], [np.array([[w]]) for w in kernels],
                    np.array([[w_out]]), bias)
    return cfg, p


def random_model(seed, F=3, K=4, L=2, h=2, act="linear", card=6):
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(F, K, L, h, act)
    p = init_params(cfg, [card] * F, seed=seed)
    R = cfg.stacked_rows
    p.pin_kernels = [rng.uniform(-0.5, 0.5, (R, R)) for _ in range(L)]
    p.out_weights = rng.uniform(-1, 1, (1, R))
    p.bias = float(rng.uniform(-1, 1))
    return cfg, p, rng


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(2, 6, 1, 4)
    with pytest.raises(ConfigError):
        ModelConfig(2, 4, -1)
    with pytest.raises(ConfigError):
        ModelConfig(2, 4, 1, 1, "cube")
    assert ModelConfig(2).activation == "linear"


def test_init_shapes_and_values():
    cfg = ModelConfig(3, 8, 2, 4)
    p = init_params(cfg, [5, 6, 7], seed=1)
    assert [e.shape for e in p.embeddings] == [(5, 8), (6, 8), (7, 8)]
    assert all(w.shape == (12, 12) and not w.any() for w in p.pin_kernels)
    assert p.out_weights.shape == (1, 12) and not p.out_weights.any() and p.bias == 0.0
    bound = 1 / math.sqrt(8)
    assert all(np.all(np.abs(e) <= bound) for e in p.embeddings)
    q = init_params(cfg, [5, 6, 7], seed=1)
    assert all(np.array_equal(a, b) for a, b in zip(p.embeddings, q.embeddings))


def test_embed_gather_semantics():
    cfg = ModelConfig(2, 2, 0)
    p = ModelParams([np.array([[1.0, 0], [0, 1]]), np.array([[2.0, 3], [4, 5], [6, 7]])], [],
                    np.zeros((1, 2)))
    np.testing.assert_array_equal(embed([1, 2], p, cfg), [[0, 1], [6, 7]])
    a, b = embed([0, 0], p, cfg), embed([0, 1], p, cfg)
    assert np.array_equal(a[0], b[0]) and not np.array_equal(a[1], b[1])
    zero = ModelParams([np.zeros((2, 2)), np.zeros((3, 2))], [], np.zeros((1, 2)))
    assert not embed([1, 1], zero, cfg).any()


def test_embed_out_of_range_names_field():
    cfg = ModelConfig(2, 2, 0)
    p = init_params(cfg, [2, 3])
    with pytest.raises(EmbeddingLookupError, match="field 1"):
        embed([0, 3], p, cfg)


def test_restack_examples():
    x = np.array([[1.0, 2, 3, 4], [5, 6, 7, 8]])
    np.testing.assert_array_equal(restack(x, 1), x)
    np.testing.assert_array_equal(restack(x, 2), [[1, 2], [5, 6], [3, 4], [7, 8]])
    with pytest.raises(ConfigError):
        restack(x, 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.sampled_from([(1, 1), (4, 1), (4, 2), (4, 4), (6, 3), (8, 2)]))
def test_restack_bijection(F, kh):
    K, h = kh
    x = np.arange(F * K, dtype=float).reshape(F, K)
    s = restack(x, h)
    assert s.shape == (F * h, K // h)
    assert sorted(s.ravel().tolist()) == sorted(x.ravel().tolist())
    np.testing.assert_array_equal(unstack(s, h), x)


def test_zero_kernels_keep_input():
    cfg = ModelConfig(3, 4, 3, 2)
    p = init_params(cfg, [4] * 3, seed=2)
    t = forward_example([1, 2, 3], p, cfg)
    for l in range(4):
        np.testing.assert_array_equal(t.layer(l), t.x0_stacked)


def test_scalar_hand_examples():
    cfg, p = scalar_model([0.5])
    assert pin_forward(np.array([[2.0]]), p, cfg).output.tolist() == [[4.0]]
    cfg, p = scalar_model([0.5, 1.0])
    assert pin_forward(np.array([[2.0]]), p, cfg).output.tolist() == [[12.0]]


def test_output_head_examples():
    p = ModelParams([], [], np.zeros((1, 2)), 0.0)
    s, y = output_head(np.array([[1.0, 2], [3, 4]]), p)
    assert (s, y) == (0.0, 0.5)
    p.out_weights = np.array([[1.0, 1.0]])
    s, y = output_head(np.array([[1.0, 2], [3, 4]]), p)
    assert s == 10.0 and y == pytest.approx(1 / (1 + math.exp(-10)), rel=1e-15)
    p = ModelParams([], [], np.zeros((1, 2)), 1.0)
    assert output_head(np.zeros((2, 2)), p)[0] == 2.0


def test_annihilation():
    cfg, p, rng = random_model(3, F=2, K=4, L=3, h=1)
    x0 = rng.standard_normal((2, 4))
    x0[1, 2] = 0.0
    t = pin_forward(x0, p, cfg)
    for l in range(4):
        assert t.layer(l)[1, 2] == 0.0


@pytest.mark.parametrize("act", ["linear", "relu", "tanh", "sigmoid", "swish"])
def test_batch_equals_single_example(act):
    cfg, p, rng = random_model(5, act=act)
    idx = rng.integers(0, 6, (9, 3))
    preds = predict_batch(idx, p, cfg)
    for i in range(len(idx)):
        t = forward_example(idx[i], p, cfg)
        same(preds[i], t.prediction)
    perm = rng.permutation(9)
    np.testing.assert_array_equal(predict_batch(idx[perm], p, cfg), preds[perm])


def test_batch_trace_matches_single_trace():
    cfg, p, rng = random_model(6, act="tanh")
    idx = rng.integers(0, 6, (4, 3))
    x0, xs, zs, logits = forward_batch(idx, p, cfg)
    for b in range(4):
        t = forward_example(idx[b], p, cfg)
        np.testing.assert_array_equal(x0[b], t.x0_stacked)
        for l in range(cfg.pin_layers):
            same(xs[l + 1, b], t.layer_outputs[l])
            same(zs[l, b], t.pre_activations[l])
        same(logits[b], t.logit)


def test_l0_is_logistic_regression_on_embeddings():
    cfg, p, rng = random_model(7, F=3, K=4, L=0, h=1)
    idx = rng.integers(0, 6, 3)
    e = embed(idx, p, cfg)
    logit = 0.0
    for f in range(3):
        for k in range(4):
            logit += p.out_weights[0, f] * e[f, k]
    # s = sum over columns of W_out X_0 plus b*K; same order as the head
    t = forward_example(idx, p, cfg)
    assert t.logit == pytest.approx(logit + p.bias * 4, rel=1e-14)
    np.testing.assert_array_equal(t.output, t.x0_stacked)


def test_predict_batch_reports_example_index():
    cfg, p, _ = random_model(8)
    idx = np.array([[0, 0, 0], [0, 9, 0]])
    with pytest.raises(EmbeddingLookupError, match="example 1"):
        predict_batch(idx, p, cfg)


def test_polynomial_expansion_small_cases():
    # L=0: each entry is the bare variable
    polys = oracles.pin_symbolic((2, 2), [])
    assert polys[1][0].terms == {(2,): 1.0}
    # L=1, F=2: x_ik (w_i1 x_1k + w_i2 x_2k + 1) has three terms
    w = np.array([[0.3, -0.7], [1.1, 0.2]])
    polys = oracles.pin_symbolic((2, 1), [w])
    assert len(polys[0][0]) == 3
    assert polys[0][0].terms == {(0,): 1.0, (0, 0): 0.3, (0, 1): -0.7}


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4), st.integers(1, 3), st.integers(0, 4))
def test_pin_forward_equals_polynomial(seed, F, K, L):
    cfg, p, rng = random_model(seed, F=F, K=K, L=L, h=1)
    polys = oracles.pin_symbolic((F, K), p.pin_kernels)
    x0 = rng.uniform(-1, 1, (F, K))
    t = pin_forward(x0, p, cfg)
    for i in range(F):
        for k in range(K):
            e = polys[i][k].evaluate(x0.ravel())
            assert abs(t.output[i, k] - e) <= 1e-12 * max(1.0, abs(e))
            assert polys[i][k].degree <= L + 1
            assert all(i * K + k in m for m in polys[i][k].terms)


def test_full_subspace_split_mixes_all_bits():
    # h = K: each row of W' X'_0 is a combination of all F*K bits
    cfg, p, _ = random_model(9, F=2, K=2, L=1, h=2)
    agg = oracles.aggregate_symbolic((4, 1), p.pin_kernels[0])
    for row in agg:
        assert row[0].variables == [0, 1, 2, 3]

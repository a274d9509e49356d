import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from imgap.nn import (
    MlpParams,
    adam_init,
    adam_step,
    adam_step_mlp,
    entropy,
    flatten_params,
    grad_check,
    init_mlp,
    kl_categorical,
    l2_normalize,
    l2_normalize_backward,
    l2_normalize_with_cache,
    log_prob,
    log_softmax,
    mlp_backward,
    mlp_forward,
    sample_categorical,
    softmax,
    unflatten_params,
)


def reference_forward(p: MlpParams, x):
    """Sample-by-sample loop re-evaluation, independent of the vectorized path."""
    outs = []
    for row in np.atleast_2d(x):
        h = list(row)
        for li, (w, b) in enumerate(zip(p.weights, p.biases)):
            nxt = []
            for j in range(w.shape[1]):
                acc = b[j] + sum(h[i] * w[i, j] for i in range(w.shape[0]))
                if li < len(p.weights) - 1:
                    acc = math.tanh(acc)
                nxt.append(acc)
            h = nxt
        outs.append(h)
    return np.array(outs)


class TestForward:
    def test_zero_net_outputs_zero(self):
        p = MlpParams([np.zeros((5, 3))], [np.zeros(3)])
        y, _ = mlp_forward(p, np.ones(5))
        np.testing.assert_array_equal(y, np.zeros(3))

    def test_identity_linear_layer(self, rng):
        p = MlpParams([np.eye(4)], [np.zeros(4)])
        x = rng.standard_normal(4)
        y, _ = mlp_forward(p, x)
        np.testing.assert_allclose(y, x)

    def test_matches_loop_reference(self, rng):
        p = init_mlp((11, 32, 8), rng)
        x = rng.standard_normal((5, 11))
        y, _ = mlp_forward(p, x)
        np.testing.assert_allclose(y, reference_forward(p, x), rtol=1e-12, atol=1e-12)

    def test_shape_mismatch_raises(self, rng):
        p = init_mlp((11, 8), rng)
        with pytest.raises(ValueError):
            mlp_forward(p, np.zeros(7))


class TestBackward:
    def test_zero_upstream_zero_grads(self, rng):
        p = init_mlp((6, 12, 4), rng)
        _, cache = mlp_forward(p, rng.standard_normal((3, 6)))
        grads, dx = mlp_backward(cache, np.zeros((3, 4)))
        assert all(np.all(g == 0) for g in grads.weights + grads.biases)
        np.testing.assert_array_equal(dx, np.zeros((3, 6)))

    def test_linear_layer_weight_grad_is_outer_product(self, rng):
        p = MlpParams([rng.standard_normal((4, 3))], [np.zeros(3)])
        x = rng.standard_normal(4)
        _, cache = mlp_forward(p, x)
        dy = rng.standard_normal(3)
        grads, _ = mlp_backward(cache, dy)
        np.testing.assert_allclose(grads.weights[0], np.outer(x, dy))
        np.testing.assert_allclose(grads.biases[0], dy)

    def test_matches_finite_differences(self, rng):
        p = init_mlp((7, 16, 5), rng)
        x = rng.standard_normal((4, 7))
        target = rng.standard_normal((4, 5))

        def fn(flat):
            pp = unflatten_params(flat, p)
            y, cache = mlp_forward(pp, x)
            loss = 0.5 * float(((y - target) ** 2).sum())
            grads, _ = mlp_backward(cache, y - target)
            return loss, flatten_params(grads)

        assert grad_check(fn, flatten_params(p), n_probes=64, rng=rng) <= 1e-4


class TestAdam:
    def test_zero_grads_leave_params_unchanged(self):
        p = np.array([1.0, -2.0, 3.0])
        s = adam_init(3, lr=0.1)
        p2, s2 = adam_step(p, np.zeros(3), s)
        np.testing.assert_array_equal(p, p2)
        assert s2.t == 1

    def test_first_step_magnitude_is_lr(self):
        p = np.zeros(4)
        g = np.array([0.5, -3.0, 10.0, -0.02])
        s = adam_init(4, lr=1e-3)
        p2, _ = adam_step(p, g, s)
        np.testing.assert_allclose(p2, -1e-3 * np.sign(g), rtol=1e-4)

    def test_quadratic_bowl_distance_decreases(self, rng):
        target = rng.standard_normal(6)
        p = np.zeros(6)
        s = adam_init(6, lr=0.05)
        dists = []
        for _ in range(100):
            g = p - target
            p, s = adam_step(p, g, s)
            dists.append(np.linalg.norm(p - target))
        burn = 10
        assert all(dists[i + 1] < dists[i] for i in range(burn, 99))

    def test_nonfinite_grads_rejected(self):
        s = adam_init(2)
        with pytest.raises(ValueError, match="non-finite"):
            adam_step(np.zeros(2), np.array([1.0, np.nan]), s)

    def test_mlp_wrapper_matches_flat(self, rng):
        p = init_mlp((3, 4, 2), rng)
        g = init_mlp((3, 4, 2), rng)
        s = adam_init(flatten_params(p).size, lr=0.01)
        p2, _ = adam_step_mlp(p, g, s)
        flat2, _ = adam_step(flatten_params(p), flatten_params(g), s)
        np.testing.assert_array_equal(flatten_params(p2), flat2)


finite_logits = hnp.arrays(np.float64, st.integers(2, 8),
                           elements=st.floats(-30, 30))


class TestCategorical:
    @given(logits=finite_logits)
    def test_softmax_normalized(self, logits):
        p = softmax(logits)
        assert abs(p.sum() - 1.0) <= 1e-9
        assert np.all(p >= 0)

    @given(logits=finite_logits)
    def test_log_prob_consistency(self, logits):
        total = sum(math.exp(float(log_prob(logits, a))) for a in range(len(logits)))
        assert abs(total - 1.0) <= 1e-9

    @given(logits=finite_logits)
    def test_kl_self_is_zero(self, logits):
        assert abs(float(kl_categorical(logits, logits))) <= 1e-12

    def test_kl_extreme_vs_uniform(self):
        logits_p = np.array([200.0, -200.0])
        logits_q = np.array([0.0, 0.0])
        assert float(kl_categorical(logits_p, logits_q)) == pytest.approx(math.log(2), abs=1e-9)

    def test_uniform_entropy_is_log8(self):
        assert float(entropy(np.zeros(8))) == pytest.approx(math.log(8), abs=1e-12)

    def test_sampling_matches_probs(self, rng):
        logits = np.log(np.array([0.7, 0.2, 0.1]))
        draws = np.array([sample_categorical(logits, rng) for _ in range(4000)])
        freq = np.bincount(draws, minlength=3) / 4000
        np.testing.assert_allclose(freq, [0.7, 0.2, 0.1], atol=0.03)

    def test_batched_sampling_shape(self, rng):
        logits = rng.standard_normal((5, 8))
        actions = sample_categorical(logits, rng)
        assert actions.shape == (5,) and np.all((actions >= 0) & (actions < 8))

    def test_nan_logits_rejected(self):
        with pytest.raises(ValueError):
            log_softmax(np.array([np.nan, 0.0]))


class TestNormalize:
    @given(v=hnp.arrays(np.float64, st.integers(2, 16),
                        elements=st.floats(-100, 100)).filter(
                            lambda a: np.linalg.norm(a) > 1e-6))
    def test_unit_norm(self, v):
        assert abs(np.linalg.norm(l2_normalize(v)) - 1.0) <= 1e-9

    def test_zero_vector_raises(self):
        with pytest.raises(ValueError):
            l2_normalize(np.zeros(4))

    def test_backward_matches_finite_differences(self, rng):
        v0 = rng.standard_normal(6)
        w = rng.standard_normal(6)

        def fn(v):
            z, cache = l2_normalize_with_cache(v)
            return float(z @ w), l2_normalize_backward(cache, w)

        assert grad_check(fn, v0, n_probes=6, rng=rng) <= 1e-6


class TestGradCheck:
    def test_linear_loss_near_machine_precision(self, rng):
        w = rng.standard_normal(10)

        def fn(x):
            return float(x @ w), w

        assert grad_check(fn, rng.standard_normal(10), n_probes=10, rng=rng) <= 1e-9


def test_flatten_roundtrip_bitwise(rng):
    p = init_mlp((9, 17, 4), rng, bias_scale=0.05)
    q = unflatten_params(flatten_params(p), p)
    for a, b in zip(p.weights + p.biases, q.weights + q.biases):
        assert a.tobytes() == b.tobytes()


def test_init_deterministic():
    a = init_mlp((5, 8, 3), np.random.default_rng(42))
    b = init_mlp((5, 8, 3), np.random.default_rng(42))
    assert flatten_params(a).tobytes() == flatten_params(b).tobytes()

import numpy as np
import pytest

from hedgebench import policy
from hedgebench.errors import NumericError, ParameterError


def small_arch(hidden=8, layers=1):
    return policy.ArchConfig(input_dim=2, hidden_dim=hidden, n_lstm_layers=layers)


def random_features(batch, steps, seed=0):
    return np.random.default_rng(seed).normal(size=(batch, steps, 2))


class TestInit:
    def test_xavier_bound_on_input_weights(self):
        params = policy.init_policy(policy.ArchConfig(hidden_dim=32), seed=1)
        w_x = params.tensors["lstm0.w_x"]
        bound = np.sqrt(6.0 / (2 + 128))
        assert np.abs(w_x).max() <= bound
        assert np.abs(w_x).max() > 0.5 * bound  # actually fills the range

    def test_recurrent_gate_blocks_orthogonal(self):
        params = policy.init_policy(small_arch(hidden=16), seed=2)
        w_h = params.tensors["lstm0.w_h"]
        for gate in range(4):
            block = w_h[16 * gate : 16 * (gate + 1)]
            assert np.abs(block.T @ block - np.eye(16)).max() < 1e-10

    def test_bias_layout(self):
        params = policy.init_policy(small_arch(hidden=4), seed=3)
        b = params.tensors["lstm0.b"]
        assert np.array_equal(b[:4], np.zeros(4))
        assert np.array_equal(b[4:8], np.ones(4))
        assert np.array_equal(b[8:], np.zeros(8))
        assert np.array_equal(params.tensors["out.b"], [0.0])

    def test_same_seed_identical_parameters(self):
        a = policy.init_policy(small_arch(), seed=11)
        b = policy.init_policy(small_arch(), seed=11)
        for key in a.tensors:
            assert np.array_equal(a.tensors[key], b.tensors[key])

    def test_different_seed_differs(self):
        a = policy.init_policy(small_arch(), seed=11)
        b = policy.init_policy(small_arch(), seed=12)
        assert not np.array_equal(a.tensors["lstm0.w_x"], b.tensors["lstm0.w_x"])

    def test_multi_layer_shapes(self):
        arch = policy.ArchConfig(hidden_dim=6, n_lstm_layers=3)
        params = policy.init_policy(arch, seed=4)
        assert params.tensors["lstm0.w_x"].shape == (24, 2)
        assert params.tensors["lstm1.w_x"].shape == (24, 6)
        assert params.tensors["lstm2.w_h"].shape == (24, 6)


class TestOrthogonalInit:
    def test_square_orthogonal(self):
        q = policy.orthogonal_init(4, 4, seed=5)
        assert np.abs(q.T @ q - np.eye(4)).max() < 1e-10

    def test_wide_has_orthonormal_rows(self):
        q = policy.orthogonal_init(2, 5, seed=6)
        assert q.shape == (2, 5)
        assert np.abs(q @ q.T - np.eye(2)).max() < 1e-10

    def test_tall_has_orthonormal_columns(self):
        q = policy.orthogonal_init(7, 3, seed=7)
        assert q.shape == (7, 3)
        assert np.abs(q.T @ q - np.eye(3)).max() < 1e-10

    def test_singular_values_all_one(self):
        q = policy.orthogonal_init(6, 6, seed=8)
        s = np.linalg.svd(q, compute_uv=False)
        assert np.abs(s - 1.0).max() < 1e-10


class TestForward:
    def test_zero_parameters_give_zero_hedges(self):
        arch = small_arch(hidden=4)
        shapes = policy.tensor_shapes(arch)
        params = policy.PolicyParams(arch, {k: np.zeros(s) for k, s in shapes.items()})
        hedges, cache = policy.forward(params, random_features(3, 6))
        assert np.all(hedges == 0.0)
        assert cache.out_pre.shape == (3, 6)

    def test_output_strictly_bounded(self):
        params = policy.init_policy(small_arch(hidden=16), seed=9)
        # extreme inputs cannot push tanh outside (-1, 1)
        feats = 50.0 * random_features(8, 20, seed=2)
        hedges, _ = policy.forward(params, feats)
        assert np.all(hedges > -1.0) and np.all(hedges < 1.0)

    def test_identical_rows_identical_hedges(self):
        params = policy.init_policy(small_arch(), seed=10)
        row = random_features(1, 9, seed=3)
        feats = np.repeat(row, 4, axis=0)
        hedges, _ = policy.forward(params, feats)
        assert np.array_equal(hedges[0], hedges[1])
        assert np.array_equal(hedges[0], hedges[3])

    def test_deterministic(self):
        params = policy.init_policy(small_arch(), seed=1)
        feats = random_features(2, 5, seed=4)
        h1, _ = policy.forward(params, feats)
        h2, _ = policy.forward(params, feats)
        assert np.array_equal(h1, h2)

    def test_cacheless_matches_cached(self):
        params = policy.init_policy(small_arch(layers=2), seed=1)
        feats = random_features(3, 7, seed=5)
        cached, cache = policy.forward(params, feats)
        bare, none = policy.forward(params, feats, want_cache=False)
        assert none is None
        assert np.array_equal(cached, bare)

    def test_shape_mismatch_rejected(self):
        params = policy.init_policy(small_arch(), seed=1)
        with pytest.raises(ParameterError):
            policy.forward(params, np.zeros((2, 5, 3)))

    def test_non_finite_reports_step(self):
        arch = small_arch(hidden=4)
        params = policy.init_policy(arch, seed=1)
        feats = random_features(2, 6, seed=6)
        feats[1, 3, 0] = np.nan
        with pytest.raises(NumericError, match="step 3"):
            policy.forward(params, feats)


class TestBackward:
    def test_zero_upstream_zero_gradients(self):
        params = policy.init_policy(small_arch(), seed=13)
        feats = random_features(3, 5, seed=7)
        _, cache = policy.forward(params, feats)
        grads, signals = policy.backward(params, cache, np.zeros((3, 5)))
        assert np.all(signals == 0.0)
        for g in grads.values():
            assert np.all(g == 0.0)

    def test_linearity_in_upstream(self):
        params = policy.init_policy(small_arch(), seed=14)
        feats = random_features(4, 6, seed=8)
        d = np.random.default_rng(9).normal(size=(4, 6))
        _, cache = policy.forward(params, feats)
        g1, s1 = policy.backward(params, cache, d)
        g2, s2 = policy.backward(params, cache, 2.0 * d)
        assert np.allclose(s2, 2.0 * s1, rtol=0, atol=0)
        for key in g1:
            assert np.allclose(g2[key], 2.0 * g1[key], rtol=1e-15, atol=0)

    def test_output_signals_formula(self):
        params = policy.init_policy(small_arch(), seed=15)
        feats = random_features(2, 4, seed=10)
        d = np.random.default_rng(11).normal(size=(2, 4))
        hedges, cache = policy.forward(params, feats)
        _, signals = policy.backward(params, cache, d)
        assert np.allclose(signals, d * (1.0 - hedges**2), rtol=0, atol=0)

    def test_shape_mismatch_rejected(self):
        params = policy.init_policy(small_arch(), seed=16)
        _, cache = policy.forward(params, random_features(2, 4, seed=12))
        with pytest.raises(ParameterError):
            policy.backward(params, cache, np.zeros((2, 5)))


def _max_fd_relative_error(params, feats, d_hedges, eps=1e-4):
    """Central finite differences against BPTT over every coordinate."""
    _, cache = policy.forward(params, feats)
    grads, _ = policy.backward(params, cache, d_hedges)

    def loss():
        h, _ = policy.forward(params, feats, want_cache=False)
        return float(np.sum(d_hedges * h))

    worst = 0.0
    for name, grad in grads.items():
        tensor = params.tensors[name]
        it = np.nditer(tensor, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            keep = tensor[idx]
            tensor[idx] = keep + eps
            up = loss()
            tensor[idx] = keep - eps
            down = loss()
            tensor[idx] = keep
            fd = (up - down) / (2.0 * eps)
            scale = max(abs(fd), abs(grad[idx]), 1e-8)
            worst = max(worst, abs(fd - grad[idx]) / scale)
    return worst


def test_bptt_matches_finite_differences():
    # hidden 8, 5 steps, 4 paths; every parameter coordinate
    params = policy.init_policy(small_arch(hidden=8), seed=17)
    feats = random_features(4, 5, seed=13)
    d_hedges = np.random.default_rng(14).normal(size=(4, 5))
    assert _max_fd_relative_error(params, feats, d_hedges) < 1e-4


def test_bptt_matches_finite_differences_two_layers():
    params = policy.init_policy(small_arch(hidden=5, layers=2), seed=18)
    feats = random_features(3, 4, seed=15)
    d_hedges = np.random.default_rng(16).normal(size=(3, 4))
    assert _max_fd_relative_error(params, feats, d_hedges) < 1e-4

import numpy as np
import pytest

from proboost.errors import InvalidParameter, ShapeError, UnsupportedConfiguration
from proboost.nn import (
    Dense,
    Dropout,
    FlipoutDense,
    Softmax,
    WeakLearner,
    build_dense_stack,
    build_lenet_variant,
    flipout_perturb,
    load_learner,
    save_learner,
    softplus,
    softplus_inv,
)
from proboost.numerics import PrngStream


def test_flipout_perturb_identity_signs():
    d = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(flipout_perturb(d, np.ones(2), np.ones(3)), d)


def test_flipout_perturb_zero_delta():
    assert np.array_equal(flipout_perturb(np.zeros((2, 2)), [1, -1], [-1, 1]), np.zeros((2, 2)))


def test_flipout_perturb_two_by_two():
    out = flipout_perturb([[1, 2], [3, 4]], [1, -1], [1, -1])
    assert out.tolist() == [[1, -2], [-3, 4]]


def test_flipout_perturb_rejects_non_signs():
    with pytest.raises(InvalidParameter):
        flipout_perturb(np.ones((2, 2)), [1, 0.5], [1, 1])
    with pytest.raises(ShapeError):
        flipout_perturb(np.ones((2, 2)), [1, 1, 1], [1, 1])


def test_flipout_one_by_one_preactivation():
    layer = FlipoutDense(1, 1)
    layer.params["mu_w"][...] = 0.0
    s = softplus(layer.params["rho_w"])
    noise = {"eps_w": 1.0 / s, "eps_b": np.zeros(1), "sign_in": np.array([[1.0]]), "sign_out": np.array([[-1.0]])}
    out = layer.forward(np.array([[1.0]]), noise)
    assert out[0, 0] == pytest.approx(-1.0, abs=1e-12)


def test_flipout_zero_perturbation_equals_mean_weights():
    s = PrngStream(1)
    layer = FlipoutDense(3, 2, s)
    layer.params["rho_w"][...] = -60.0  # softplus underflows to ~0
    layer.params["rho_b"][...] = -60.0
    x = s.standard_normal((4, 3))
    noise = layer.sample_noise(4, s)
    assert np.allclose(layer.forward(x, noise), x @ layer.params["mu_w"], atol=1e-20)


def test_flipout_batch_matches_per_sample_perturbation():
    s = PrngStream(2)
    layer = FlipoutDense(4, 3, s)
    layer.params["rho_w"][...] = softplus_inv(0.5)
    x = s.standard_normal((6, 4))
    noise = layer.sample_noise(6, s)
    out = layer.forward(x, noise)
    delta = softplus(layer.params["rho_w"]) * noise["eps_w"]
    bias = layer.params["mu_b"] + softplus(layer.params["rho_b"]) * noise["eps_b"]
    for i in range(6):
        w_i = layer.params["mu_w"] + flipout_perturb(delta, noise["sign_in"][i], noise["sign_out"][i])
        assert np.allclose(out[i], x[i] @ w_i + bias, atol=1e-12)


def test_dropout_rate_zero_matches_deterministic():
    learner = build_dense_stack(5, [7], 3, "mcd", PrngStream(3), dropout_rate=0.0)
    X = PrngStream(4).standard_normal((10, 5))
    a = learner.forward(X, stochastic=True, stream=PrngStream(5))
    b = learner.forward(X, stochastic=False)
    assert np.array_equal(a, b)


def test_inverted_dropout_preserves_expectation():
    layer = Dropout(0.3, shape=(4,))
    x = np.array([[1.0, -2.0, 3.0, 0.5]])
    s = PrngStream(6)
    n = 20_000
    outs = np.stack([layer.forward(x, layer.sample_noise(1, s.child(t)))[0] for t in range(n)])
    se = outs.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(outs.mean(axis=0) - x[0]) < 3 * se + 1e-12)


def test_dropout_rejects_bad_rate():
    with pytest.raises(InvalidParameter):
        Dropout(1.0)


@pytest.mark.parametrize("mode", ["deterministic", "mcd", "vi"])
def test_rows_are_distributions(mode):
    learner = build_dense_stack(6, [5], 4, mode, PrngStream(7))
    p = learner.forward(PrngStream(8).standard_normal((9, 6)), stochastic=True, stream=PrngStream(9))
    assert p.shape == (9, 4)
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=1), 1.0)


@pytest.mark.parametrize("mode", ["deterministic", "mcd", "vi"])
def test_deterministic_forward_is_pure(mode):
    learner = build_dense_stack(6, [5], 4, mode, PrngStream(7))
    X = PrngStream(8).standard_normal((9, 6))
    assert learner.forward(X).tobytes() == learner.forward(X).tobytes()


def test_stochastic_forward_needs_stream():
    learner = build_dense_stack(2, [], 2, "vi", PrngStream(0))
    with pytest.raises(InvalidParameter):
        learner.forward(np.zeros((1, 2)), stochastic=True)


def test_chunked_forward_matches_single_chunk():
    learner = build_dense_stack(3, [4], 2, "vi", PrngStream(1))
    X = PrngStream(2).standard_normal((10, 3))
    a = learner.forward(X, stochastic=True, stream=PrngStream(3), chunk_size=4)
    assert a.shape == (10, 2)
    # same weight draw in every chunk: the mean weights see identical perturbation scale
    b = learner.forward(X, stochastic=True, stream=PrngStream(3), chunk_size=4)
    assert np.array_equal(a, b)


def test_lenet_output_shape():
    learner = build_lenet_variant((28, 28, 1), 10, "deterministic", PrngStream(0))
    p = learner.forward(PrngStream(1).uniform((2, 784)))
    assert p.shape == (2, 10)
    assert not learner.is_stochastic


def test_lenet_mcd_has_dropout_after_weighted_layers():
    learner = build_lenet_variant((28, 28), 10, "mcd", PrngStream(0))
    kinds = [l.kind for l in learner.layers]
    assert kinds.count("dropout") == 4
    assert kinds[-2:] == ["dense", "softmax"]


def test_lenet_rejects_vi_and_small_inputs():
    with pytest.raises(UnsupportedConfiguration):
        build_lenet_variant((28, 28, 1), 10, "vi")
    with pytest.raises(ShapeError):
        build_lenet_variant((4, 28, 1), 10)


def test_single_flipout_learner_shape():
    learner = build_dense_stack(2, [], 3, "vi", PrngStream(0))
    assert [l.kind for l in learner.layers] == ["flipout_dense", "softmax"]


def test_learner_requires_softmax_head_and_matching_classes():
    with pytest.raises(InvalidParameter):
        WeakLearner([Dense(2, 2)], (2,), 2)
    with pytest.raises(ShapeError):
        WeakLearner([Dense(2, 3), Softmax()], (2,), 2)


def test_input_shape_mismatch():
    learner = build_dense_stack(3, [], 2, "deterministic", PrngStream(0))
    with pytest.raises(ShapeError):
        learner.forward(np.zeros((2, 4)))


@pytest.mark.parametrize("mode,builder", [
    ("vi", lambda m: build_dense_stack(4, [3], 2, m, PrngStream(1))),
    ("mcd", lambda m: build_dense_stack(4, [3], 2, m, PrngStream(1))),
    ("mcd", lambda m: build_lenet_variant((6, 6, 1), 3, m, PrngStream(1))),
])
def test_checkpoint_round_trip(tmp_path, mode, builder):
    learner = builder(mode)
    X = PrngStream(2).uniform((5,) + learner.input_shape)
    path = save_learner(learner, tmp_path / "l.npz")
    loaded = load_learner(path)
    assert loaded.forward(X).tobytes() == learner.forward(X).tobytes()
    a = learner.forward(X, stochastic=True, stream=PrngStream(3))
    b = loaded.forward(X, stochastic=True, stream=PrngStream(3))
    assert a.tobytes() == b.tobytes()

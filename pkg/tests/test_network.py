import numpy as np
import pytest

from oracles import central_diff, rel_error
from ocspoof import network
from ocspoof.network import NetConfig, attentive_pool, backward, forward, init_params


def small(encoder="mlp_small", pooling="attentive", **kw):
    kw.setdefault("hidden_dims", (7,))
    return NetConfig(n_features=6, encoder=encoder, embed_dim=5, pooling=pooling,
                     attention_dim=4, **kw)


def _perturbed(params, rng):
    # move norm stats off identity so their path is exercised
    params = dict(params)
    if "norm.mean" in params:
        params["norm.mean"] = rng.standard_normal(params["norm.mean"].shape) * 0.3
        params["norm.std"] = rng.uniform(0.5, 2.0, params["norm.std"].shape)
    return params


def gradient_errors(cfg, seed, batch=2, frames=5):
    rng = np.random.default_rng(seed)
    params = _perturbed(init_params(cfg, rng), rng)
    x = rng.standard_normal((batch, frames, cfg.n_features))
    r = rng.standard_normal((batch, cfg.embed_dim))

    def f():
        return float(np.sum(r * forward(x, params, cfg)[0]))

    _, cache = forward(x, params, cfg)
    grads, dx = backward(cache, r, params)
    errs = {name: rel_error(grads[name], central_diff(f, params[name]))
            for name in params if network.is_trainable(name)}
    errs["input"] = rel_error(dx, central_diff(f, x))
    assert set(grads) == {n for n in params if network.is_trainable(n)}
    return errs


@pytest.mark.parametrize("encoder", ["mlp_small", "conv_small", "resnet18_like"])
@pytest.mark.parametrize("pooling", ["attentive", "mean"])
def test_gradients_match_finite_differences(encoder, pooling):
    cfg = small(encoder, pooling, hidden_dims=(7, 7) if encoder != "mlp_small" else (7, 5))
    for seed in range(3):
        errs = gradient_errors(cfg, seed)
        assert max(errs.values()) <= 1e-4, errs


def test_all_identical_frames_pool_to_that_frame():
    cfg = small()
    rng = np.random.default_rng(0)
    params = init_params(cfg, rng)
    frame = rng.standard_normal(6)
    x = np.tile(frame, (9, 1))
    emb, cache = forward(x, params, cfg)
    h1 = cache.frames[0, 0]
    np.testing.assert_allclose(cache.pooled[0], h1, atol=1e-12)
    np.testing.assert_allclose(emb, forward(frame[None], params, cfg)[0], atol=1e-12)


def test_mean_pooling_single_frame():
    cfg = small(pooling="mean")
    params = init_params(cfg)
    x = np.random.default_rng(1).standard_normal((1, 6))
    _, cache = forward(x, params, cfg)
    np.testing.assert_array_equal(cache.pooled[0], cache.frames[0, 0])


def test_output_shape_and_finite():
    cfg = NetConfig(n_features=60, embed_dim=256)
    emb, _ = forward(np.random.default_rng(2).standard_normal((40, 60)), init_params(cfg), cfg)
    assert emb.shape == (256,)
    assert np.all(np.isfinite(emb))


def test_zero_upstream_gives_zero_gradients():
    cfg = small("conv_small")
    params = init_params(cfg)
    _, cache = forward(np.random.default_rng(3).standard_normal((2, 5, 6)), params, cfg)
    grads, dx = backward(cache, np.zeros((2, 5)), params)
    assert all(not np.any(g) for g in grads.values())
    assert not np.any(dx)


def test_attention_shift_invariance():
    rng = np.random.default_rng(4)
    h = rng.standard_normal((2, 6, 4))
    W, v = rng.standard_normal((4, 3)), rng.standard_normal(3)
    up = rng.standard_normal((2, 4))
    p0, c0 = attentive_pool(h, W, v)
    p1, c1 = attentive_pool(h, W, v, shift=17.5)
    np.testing.assert_allclose(p0, p1, atol=1e-12)
    for g0, g1 in zip(network.attentive_pool_backward(up, c0, W, v),
                      network.attentive_pool_backward(up, c1, W, v)):
        np.testing.assert_allclose(g0, g1, atol=1e-12)


def test_attention_weights_are_a_distribution():
    cfg = small()
    a = network.attention_weights(np.random.default_rng(5).standard_normal((3, 11, 6)),
                                  init_params(cfg), cfg)
    assert np.all(a >= 0)
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-9)


def test_mean_pooling_frame_local_is_permutation_invariant():
    cfg = small(pooling="mean")
    params = init_params(cfg)
    x = np.random.default_rng(6).standard_normal((8, 6))
    perm = np.random.default_rng(7).permutation(8)
    np.testing.assert_allclose(forward(x, params, cfg)[0], forward(x[perm], params, cfg)[0], atol=1e-12)


def test_deterministic_forward():
    cfg = small("resnet18_like")
    params = init_params(cfg)
    x = np.random.default_rng(8).standard_normal((3, 7, 6))
    assert forward(x, params, cfg)[0].tobytes() == forward(x, params, cfg)[0].tobytes()


def test_stale_cache_rejected():
    cfg = small()
    params = init_params(cfg)
    _, cache = forward(np.ones((4, 6)), params, cfg)
    params["out.b"] += 1.0
    with pytest.raises(ValueError, match="stale"):
        backward(cache, np.ones(5), params)


def test_shape_errors():
    cfg = small()
    params = init_params(cfg)
    with pytest.raises(ValueError):
        forward(np.ones((4, 5)), params, cfg)
    _, cache = forward(np.ones((4, 6)), params, cfg)
    with pytest.raises(ValueError):
        backward(cache, np.ones(4), params)


def test_init_is_seeded_glorot():
    cfg = NetConfig(n_features=10, hidden_dims=(20,), embed_dim=8, seed=3)
    a, b = init_params(cfg), init_params(cfg)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    limit = np.sqrt(6 / (10 + 20))
    assert np.abs(a["enc0.W"]).max() <= limit

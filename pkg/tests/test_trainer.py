import numpy as np
import pytest

from ocspoof.losses import OcHeadParams
from ocspoof.network import NetConfig
from ocspoof.toy import make_toy_sequences
from ocspoof.trainer import (AdamState, Checkpoint, TrainConfig, adam_step, format_log,
                             lr_at_epoch, sgd_step, train)


def test_adam_zero_gradient_is_a_no_op():
    p = {"w": np.array([1.0, -2.0])}
    state = AdamState()
    adam_step(p, {"w": np.zeros(2)}, state, lr=0.1)
    assert p["w"].tolist() == [1.0, -2.0] and state.t == 0


def test_adam_first_step_moves_by_lr():
    p = {"w": np.array([1.0, 1.0, 1.0])}
    adam_step(p, {"w": np.array([3.0, -0.01, 1e3])}, AdamState(), lr=1e-3)
    np.testing.assert_allclose(p["w"], [1 - 1e-3, 1 + 1e-3, 1 - 1e-3], atol=1e-6)


def test_adam_constant_gradient_steady_state():
    p = {"w": np.zeros(1)}
    state = AdamState()
    for _ in range(1000):
        before = p["w"].copy()
        adam_step(p, {"w": np.array([-0.5])}, state, lr=1e-2)
    assert p["w"][0] - before[0] == pytest.approx(1e-2, rel=1e-6)
    assert state.t == 1000


def test_adam_matches_scalar_loop():
    g = [0.3, -1.2, 0.0, 2.5, 0.7]
    p = {"w": np.array([0.5])}
    state = AdamState()
    w, m, v, t = 0.5, 0.0, 0.0, 0
    for gt in g:
        adam_step(p, {"w": np.array([gt])}, state, lr=0.01)
        if gt == 0:  # all-zero steps are skipped, t included
            continue
        t += 1
        m = 0.9 * m + 0.1 * gt
        v = 0.999 * v + 0.001 * gt * gt
        w -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert p["w"][0] == pytest.approx(w, abs=1e-15)
    assert state.t == 4


def test_non_finite_gradient_raises():
    with pytest.raises(FloatingPointError):
        adam_step({"w": np.zeros(1)}, {"w": np.array([np.inf])}, AdamState(), lr=0.1)
    with pytest.raises(FloatingPointError):
        sgd_step({"w": np.zeros(1)}, {"w": np.array([np.nan])}, lr=0.1)


def test_sgd_step():
    p = {"w": np.array([1.0])}
    sgd_step(p, {"w": np.array([2.0])}, 0.1)
    assert p["w"][0] == pytest.approx(0.8)
    rng = np.random.default_rng(0)
    w, grads = rng.standard_normal(4), rng.standard_normal((6, 4))
    p = {"w": w.copy()}
    for g in grads:
        sgd_step(p, {"w": g}, 0.05)
    expected = w.copy()
    for g in grads:
        for i in range(4):
            expected[i] = expected[i] - 0.05 * g[i]
    np.testing.assert_array_equal(p["w"], expected)


def test_lr_schedule():
    assert lr_at_epoch(0) == pytest.approx(3e-4)
    assert lr_at_epoch(9) == pytest.approx(3e-4)
    assert lr_at_epoch(10) == pytest.approx(1.5e-4)
    assert lr_at_epoch(25) == pytest.approx(7.5e-5)
    with pytest.raises(ValueError):
        lr_at_epoch(-1)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(loss="arcface")
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    assert TrainConfig(lr_head=0.1).head_lr == 0.1


@pytest.fixture(scope="module")
def toy():
    tr = make_toy_sequences(120, 120, seed=11)
    dev = make_toy_sequences(60, 60, seed=12)
    return tr, dev


NET = NetConfig(n_features=8, hidden_dims=(8,), embed_dim=6)


def run(toy, **kw):
    tr, dev = toy
    cfg = TrainConfig(**{"epochs": 4, "lr": 0.003, "batch_size": 32, "target_len": 15, **kw})
    return train(tr.seqs, tr.labels, dev.seqs, dev.labels, NET, cfg)


def test_zero_epochs_returns_initial_model(toy):
    best, hist = run(toy, epochs=0)
    assert best.epoch == 0 and len(hist) == 1
    assert hist[0].dev_eer == best.dev_eer
    assert best.adam.t == 0


def test_same_seed_identical_logs(toy):
    a, ha = run(toy, seed=3)
    b, hb = run(toy, seed=3)
    assert format_log(ha) == format_log(hb)
    assert a.to_bytes() == b.to_bytes()
    _, hc = run(toy, seed=4)
    assert format_log(hc) != format_log(ha)


@pytest.mark.parametrize("loss", ["softmax", "am_softmax", "oc_softmax"])
def test_best_is_minimum_of_log(toy, loss):
    best, hist = run(toy, loss=loss)
    eers = [h.dev_eer for h in hist]
    assert best.dev_eer == min(eers)
    assert best.epoch == eers.index(min(eers))
    assert all(np.isfinite(h.train_loss) for h in hist[1:])
    assert [h.lr for h in hist] == [lr_at_epoch(max(h.epoch - 1, 0), TrainConfig(lr=0.003))
                                    for h in hist]


def test_fixed_crop_option(toy):
    best, hist = run(toy, redraw_crop=False, epochs=2)
    assert len(hist) == 3


def test_log_format():
    best_text = format_log([], header=["config_hash=x"])
    assert best_text == "# config_hash=x\nepoch,train_loss,dev_eer,lr\n"


def test_checkpoint_roundtrip_is_byte_identical(toy, tmp_path):
    best, _ = run(toy, epochs=2)
    raw = best.to_bytes()
    assert raw[:4] == b"OCSP"
    again = Checkpoint.from_bytes(raw)
    assert again.to_bytes() == raw
    assert isinstance(again.head, OcHeadParams)
    path = tmp_path / "m.ckpt"
    best.save(path)
    loaded = Checkpoint.load(path)
    x = np.stack([s[:10] for s in toy[1].seqs[:5]])
    np.testing.assert_allclose(loaded.scores(x), best.scores(x), rtol=1e-6)


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError):
        Checkpoint.from_bytes(b"NOPE" + bytes(20))

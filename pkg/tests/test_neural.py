import numpy as np
import pytest

from fer4d.errors import EmptyClass, ModelFormatError, ShapeMismatch
from fer4d.neural import (
    BiLSTM,
    ConvNet,
    TrainConfig,
    accuracy,
    bilstm_train,
    convnet_train,

    fit,
    grad_check,
    load_model,

    save_model,
)
from fer4d.neural import layers
from fer4d.neural.serialize import dumps, loads


def zero_params(model):
    for p in model.params.values():
        p[...] = 0.0
    return model


def test_zero_convnet_is_uniform():
    m = zero_params(ConvNet(2, 8, (3,)))
    out = m.forward(np.random.default_rng(0).normal(size=(4, 2, 8, 8)))
    np.testing.assert_allclose(out, 1 / 6, atol=1e-15)


def test_zero_bilstm_is_uniform():
    m = zero_params(BiLSTM(3, 4, 0.5))
    out = m.forward([np.random.default_rng(0).normal(size=(t, 3)) for t in (1, 4, 7)])
    np.testing.assert_allclose(out, 1 / 6, atol=1e-15)


def test_delta_kernel_is_identity():
    x = np.random.default_rng(1).normal(size=(2, 1, 8, 8))
    W = np.zeros((1, 1, 3, 3))
    W[0, 0, 1, 1] = 1.0
    out, _ = layers.conv3x3_forward(x, W, np.zeros(1))
    np.testing.assert_array_equal(out, x)


def test_outputs_are_distributions():
    rng = np.random.default_rng(2)
    c = ConvNet(1, 16, (4, 4), seed=3).forward(rng.normal(size=(5, 1, 16, 16)))
    b = BiLSTM(4, 5, 0.0, seed=3).forward([rng.normal(size=(6, 4)) for _ in range(5)])
    for out in (c, b):
        assert out.shape == (5, 6)
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        ConvNet(1, 8, (2,)).forward(np.zeros((1, 2, 8, 8)))
    with pytest.raises(ShapeMismatch):
        BiLSTM(3, 2).forward([np.zeros((4, 5))])
    with pytest.raises(ShapeMismatch):
        ConvNet(1, 4, (2, 2, 2))


def test_bilstm_single_step_sequence():
    m = BiLSTM(3, 4, 0.0, seed=1)
    x = np.random.default_rng(0).normal(size=(1, 3))
    h = m.final_states([x])[0]
    # with one step both directions consume the same row
    m.params["bw.W"][...] = m.params["fw.W"]
    m.params["bw.U"][...] = m.params["fw.U"]
    m.params["bw.b"][...] = m.params["fw.b"]
    h = m.final_states([x])[0]
    np.testing.assert_array_equal(h[:4], h[4:])


def test_bilstm_direction_symmetry():
    m = BiLSTM(3, 4, 0.0, seed=2)
    for k in ("W", "U", "b"):
        m.params[f"bw.{k}"][...] = m.params[f"fw.{k}"]
    x = np.random.default_rng(1).normal(size=(6, 3))
    h, hr = m.final_states([x])[0], m.final_states([x[::-1]])[0]
    np.testing.assert_allclose(h[:4], hr[4:], atol=1e-14)
    np.testing.assert_allclose(h[4:], hr[:4], atol=1e-14)
    m.params["fc.W"][:, 4:] = m.params["fc.W"][:, :4]
    np.testing.assert_allclose(m.forward([x]), m.forward([x[::-1]]), atol=1e-14)


def test_gate_ranges():
    x = np.random.default_rng(3).normal(size=(2, 5, 3)) * 10
    m = BiLSTM(3, 4, seed=0)
    _, (_, _, _, gates, _) = layers.lstm_forward(x, m.params["fw.W"], m.params["fw.U"], m.params["fw.b"])
    H = 4
    assert np.all((gates[..., :3 * H] >= 0) & (gates[..., :3 * H] <= 1))
    assert np.all(np.abs(gates[..., 3 * H:]) <= 1)


# ---- training


def toy_images(n=12, size=8):
    X = np.zeros((n, 1, size, size))
    X[n // 2:] = 1.0
    y = np.array([0] * (n // 2) + [1] * (n // 2))
    return X, y


def toy_sequences(n=16, T=6, seed=0):
    rng = np.random.default_rng(seed)
    X, y = [], []
    for i in range(n):
        label = i % 2
        x = np.linspace(0.0, 1.0, T) * (1 if label == 0 else -1) + rng.uniform(-0.5, 0.5)
        X.append(np.column_stack([x, 0.5 + 0.05 * rng.normal(size=T)]))
        y.append(label)
    return X, np.array(y)


def test_convnet_learns_constant_images():
    X, y = toy_images()
    model, losses = convnet_train(ConvNet(1, 8, (2,), seed=0), X, y, TrainConfig(0.1, 50, 4, 1e-4, 0), classes=(0, 1))
    assert accuracy(model, X, y) == 1.0
    assert losses[-1] <= losses[0]


def test_bilstm_learns_direction():
    X, y = toy_sequences()
    model, losses = bilstm_train(BiLSTM(2, 8, 0.0, seed=0), X, y, TrainConfig(0.5, 100, 4, 0.0, 0), classes=(0, 1))
    assert accuracy(model, X, y) == 1.0
    assert losses[-1] <= losses[0]


def test_empty_class():
    X, y = toy_images()
    with pytest.raises(EmptyClass):
        fit(ConvNet(1, 8, (2,)), X, y, TrainConfig())


def test_zero_learning_rate_changes_nothing():
    X, y = toy_images()
    m = ConvNet(1, 8, (2,), seed=1)
    before = {k: v.copy() for k, v in m.params.items()}
    _, losses = convnet_train(m, X, y, TrainConfig(0.0, 5, 4, 1e-2, 0), classes=(0, 1))
    assert all(np.array_equal(before[k], m.params[k]) for k in before)
    # batches differ per epoch, so only summation order changes
    np.testing.assert_allclose(losses, losses[0], rtol=1e-12)
    Xs, ys = toy_sequences()
    _, losses = bilstm_train(BiLSTM(2, 3, 0.0, seed=1), Xs, ys, TrainConfig(0.0, 5, 4, 0.0, 0), classes=(0, 1))
    np.testing.assert_allclose(losses, losses[0], rtol=1e-12)


def test_training_is_deterministic():
    Xs, ys = toy_sequences()
    runs = [bilstm_train(BiLSTM(2, 4, 0.5, seed=7), Xs, ys, TrainConfig(0.3, 5, 4, 1e-4, 7), classes=(0, 1))[1]
            for _ in range(2)]
    assert runs[0] == runs[1]
    X, y = toy_images()
    runs = [convnet_train(ConvNet(1, 8, (2,), seed=7), X, y, TrainConfig(0.1, 5, 4, 1e-4, 7), classes=(0, 1))[1]
            for _ in range(2)]
    assert runs[0] == runs[1]


def test_full_batch_ignores_order():
    X, y = toy_images()
    perm = np.random.default_rng(0).permutation(len(y))
    a = ConvNet(1, 8, (2,), seed=3)
    b = ConvNet(1, 8, (2,), seed=3)
    cfg = TrainConfig(0.1, 5, len(y), 1e-4, 0)
    fit(a, X, y, cfg, classes=(0, 1))
    fit(b, X[perm], y[perm], cfg, classes=(0, 1))
    for k in a.params:
        np.testing.assert_allclose(a.params[k], b.params[k], rtol=1e-12, atol=1e-14)


def test_validation_selects_best_epoch():
    X, y = toy_images()
    m = ConvNet(1, 8, (2,), seed=0)
    hist = fit(m, X, y, TrainConfig(0.1, 10, 4, 0.0, 0), val=(X, y), classes=(0, 1))
    assert len(hist.val_accuracy) == 10
    best = max(hist.val_accuracy)
    assert hist.val_accuracy[hist.best_epoch] == best
    assert hist.best_epoch == hist.val_accuracy.index(best) or best == 1.0
    assert accuracy(m, X, y) == best


# ---- gradients


def test_grad_check_tiny_convnet():
    rng = np.random.default_rng(0)
    m = ConvNet(1, 8, (2,), seed=0)
    assert grad_check(m, rng.normal(size=(3, 1, 8, 8)), np.array([0, 3, 5])) <= 1e-4


def test_grad_check_two_block_convnet():
    rng = np.random.default_rng(1)
    m = ConvNet(2, 8, (3, 2), seed=1)
    assert grad_check(m, rng.normal(size=(2, 2, 8, 8)), np.array([1, 4])) <= 1e-4


def test_grad_check_tiny_bilstm():
    rng = np.random.default_rng(0)
    m = BiLSTM(4, 3, 0.5, seed=0)
    X = [rng.normal(size=(5, 4)) for _ in range(3)]
    assert grad_check(m, X, np.array([0, 2, 5])) <= 1e-4


def test_grad_check_mixed_lengths():
    rng = np.random.default_rng(2)
    m = BiLSTM(2, 3, 0.0, seed=2)
    X = [rng.normal(size=(t, 2)) for t in (1, 3, 5)]
    assert grad_check(m, X, np.array([0, 1, 2])) <= 1e-4


def test_grad_check_linear_model():
    rng = np.random.default_rng(0)
    m = ConvNet(1, 6, (), seed=0)
    X = rng.uniform(0.5, 1.5, size=(4, 1, 6, 6)) * rng.choice([-1, 1], size=(4, 1, 6, 6))
    assert grad_check(m, X, np.array([0, 1, 2, 3]), n_params=300) <= 1e-7


# ---- files


def test_model_round_trip(tmp_path):
    for m in (ConvNet(2, 8, (3,), seed=4), BiLSTM(5, 3, 0.25, seed=4)):
        path = tmp_path / f"{m.kind}.mdl"
        save_model(path, m)
        back = load_model(path)
        assert back.config() == m.config()
        for k in m.params:
            assert back.params[k].tobytes() == m.params[k].tobytes()
        assert dumps(back) == path.read_bytes()
    assert path.read_bytes()[:8] == b"FER4DMDL"


def test_model_format_errors():
    data = dumps(ConvNet(1, 8, (2,)))
    with pytest.raises(ModelFormatError):
        loads(b"NOTAMODL" + data[8:])
    with pytest.raises(ModelFormatError):
        loads(data[:-16])

"""Tensor engine: gradients, attention, optimiser and checkpoints."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from errors import CheckpointError, ConfigurationError, TrainingError
from numcore import (
    AdamState,
    EarlyStopping,
    Linear,
    MLP,
    Tensor,
    adam_step,
    cosine_lr,
    gelu,
    get_tape,
    grad_check,
    layer_norm,
    linear,
    load_checkpoint,
    multi_head_attention,
    no_grad,
    save_checkpoint,
    sinusoidal_embedding,
    softmax,
)


@pytest.fixture
def rng():
    return np.random.default_rng(3)


def test_square_sum_gradient():
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    (x * x).sum().backward()
    assert_allclose(x.grad, [2.0, -4.0, 6.0])


def test_broadcast_gradient_is_summed_back(rng):
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal(4), requires_grad=True)
    (a + b).sum().backward()
    assert b.grad.shape == (4,)
    assert_allclose(b.grad, np.full(4, 3.0))


def test_reused_tensor_accumulates_gradient():
    x = Tensor(2.0, requires_grad=True)
    (x * x + x).backward()
    assert x.grad == pytest.approx(5.0)


def test_no_grad_records_nothing():
    get_tape().clear()
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert len(get_tape()) == 0
    assert not y.requires_grad


def test_backward_on_constant_raises():
    with pytest.raises(ConfigurationError):
        Tensor(1.0).backward()


def test_softmax_rows_sum_to_one(rng):
    out = softmax(Tensor(rng.standard_normal((5, 7))), axis=-1)
    assert_allclose(out.data.sum(axis=-1), np.ones(5))


def test_grad_check_linear_layer_norm_gelu(rng):
    x = Tensor(rng.standard_normal((3, 4)))
    W = Tensor(rng.standard_normal((4, 5)))
    b = Tensor(rng.standard_normal(5))
    gain = Tensor(1.0 + 0.1 * rng.standard_normal(5))
    bias = Tensor(0.1 * rng.standard_normal(5))

    def f():
        h = gelu(layer_norm(linear(x, W, b), gain, bias))
        return (h * h).sum()

    assert grad_check(f, [W, b, gain, bias]) < 1e-5


def test_grad_check_masked_attention(rng):
    q = Tensor(rng.standard_normal((2, 4, 4)))
    k = Tensor(rng.standard_normal((2, 4, 4)))
    v = Tensor(rng.standard_normal((2, 4, 4)))
    mask = np.zeros((4, 4), dtype=bool)
    mask[:, 3] = True

    def f():
        out = multi_head_attention(q, k, v, 2, mask)
        return (out * out).sum()

    assert grad_check(f, {"q": q, "k": k, "v": v}) < 1e-5


def test_blocked_key_gets_no_weight(rng):
    q = Tensor(rng.standard_normal((1, 3, 4)))
    k = Tensor(rng.standard_normal((1, 3, 4)))
    v = rng.standard_normal((1, 3, 4))
    mask = np.zeros((3, 3), dtype=bool)
    mask[:, 2] = True
    changed = v.copy()
    changed[0, 2] += 100.0
    a = multi_head_attention(q, k, Tensor(v), 2, mask).data
    b = multi_head_attention(q, k, Tensor(changed), 2, mask).data
    assert_allclose(a, b)


def test_attention_rejects_fully_blocked_query(rng):
    x = Tensor(rng.standard_normal((1, 3, 4)))
    mask = np.zeros((3, 3), dtype=bool)
    mask[1] = True
    with pytest.raises(ConfigurationError):
        multi_head_attention(x, x, x, 2, mask)


def test_attention_heads_must_divide_width(rng):
    x = Tensor(rng.standard_normal((1, 3, 6)))
    with pytest.raises(ConfigurationError):
        multi_head_attention(x, x, x, 4)


def test_adam_first_step_moves_by_lr():
    p = Tensor(np.array([1.0, -1.0]))
    state = adam_step({"p": p}, {"p": np.array([2.0, -0.5])}, AdamState(lr=0.1))
    assert state.step == 1
    assert_allclose(p.data, [0.9, -0.9], atol=1e-6)


def test_adam_skips_missing_gradients():
    p = Tensor(np.array([1.0]))
    adam_step({"p": p}, {"p": None}, AdamState(lr=0.1))
    assert p.data[0] == 1.0


def test_adam_rejects_non_finite_gradient():
    p = Tensor(np.zeros(2))
    with pytest.raises(TrainingError) as info:
        adam_step({"encoder.w": p}, {"encoder.w": np.array([np.nan, 0.0])}, AdamState(lr=0.1))
    assert info.value.parameter == "encoder.w"


def test_cosine_lr_schedule():
    assert cosine_lr(0, 10, 1.0, 0.0) == pytest.approx(1.0)
    assert cosine_lr(5, 10, 1.0, 0.0) == pytest.approx(0.5)
    assert cosine_lr(10, 10, 1.0, 0.0) == pytest.approx(0.0)
    assert cosine_lr(25, 10, 1.0, 0.1) == pytest.approx(0.1)
    with pytest.raises(ConfigurationError):
        cosine_lr(-1, 10, 1.0, 0.0)


def test_early_stopping_restores_best(rng):
    layer = Linear(2, 3, rng)
    stopper = EarlyStopping(patience=1)
    assert stopper.update(1.0, layer, epoch=0)
    best = layer.state_dict()
    layer.weight.data += 5.0
    assert not stopper.update(2.0, layer, epoch=1)
    assert stopper.should_stop
    stopper.restore(layer)
    assert_allclose(layer.weight.data, best["weight"])


def test_module_clone_freeze_and_state_dict(rng):
    mlp = MLP([3, 4, 2], rng, norm=True)
    copy = mlp.clone().freeze()
    copy.layers[0].weight.data += 1.0
    assert not np.allclose(copy.layers[0].weight.data, mlp.layers[0].weight.data)
    assert all(not p.requires_grad for _, p in copy.named_parameters())
    assert all(p.requires_grad for _, p in mlp.named_parameters())
    assert mlp.num_parameters() == 3 * 4 + 4 + 4 * 2 + 2 + 2 * 4

    bad = mlp.state_dict()
    bad["layers.0.weight"] = np.zeros((2, 2))
    with pytest.raises(CheckpointError):
        mlp.load_state_dict(bad)


def test_checkpoint_keeps_values_and_metadata(tmp_path, rng):
    tensors = {"a": rng.standard_normal((2, 3)), "scalar": np.array(4.5)}
    path = save_checkpoint(tmp_path / "m.ckpt", tensors, {"kind": "test", "n": 2})
    loaded, meta = load_checkpoint(path)
    assert meta == {"kind": "test", "n": 2}
    assert_allclose(loaded["a"], tensors["a"])
    assert loaded["scalar"].shape == ()
    assert float(loaded["scalar"]) == 4.5


def test_checkpoint_rejects_damaged_files(tmp_path, rng):
    path = save_checkpoint(tmp_path / "m.ckpt", {"a": rng.standard_normal(10)})
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    path.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")


def test_sinusoidal_embedding_odd_width():
    emb = sinusoidal_embedding(np.array([0.0, 0.5]), 5)
    assert emb.shape == (2, 5)
    assert_allclose(emb[0, :2], [0.0, 0.0])
    assert_allclose(emb[:, -1], [0.0, 0.0])

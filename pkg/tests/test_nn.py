import numpy as np
import pytest

from spherereid import nn
from spherereid.errors import BatchTooSmall, CheckpointError, DimensionMismatch, InvalidConfig, StaleCache
from spherereid.gradcheck import numerical_gradient, relative_error
from spherereid.manifold import l2_normalize


def _stack_loss(stack, x, g, reseed=None):
    """Scalar functional <stack(x), g>; ``reseed`` restores dropout RNGs so the
    masks are identical on every call."""
    def f():
        if reseed:
            reseed()
        return float(np.sum(stack.forward(x) * g))
    return f


# -- dense -----------------------------------------------------------------

def test_dense_examples():
    layer = nn.Dense(np.eye(2))
    np.testing.assert_array_equal(nn.dense_forward(layer, [[1.0, 2.0]]), [[1.0, 2.0]])
    layer = nn.Dense(np.zeros((1, 2)), bias=[3.0])
    np.testing.assert_array_equal(nn.dense_forward(layer, [[5.0, -1.0]]), [[3.0]])
    with pytest.raises(DimensionMismatch):
        nn.dense_forward(layer, [[1.0, 2.0, 3.0]])


def test_dense_backward_examples(rng):
    layer = nn.Dense(rng.standard_normal((3, 4)), rng.standard_normal(3))
    x = rng.standard_normal((5, 4))
    gx, gw, gb = nn.dense_backward(layer, x, np.zeros((5, 3)))
    assert not gx.any() and not gw.any() and not gb.any()
    eye = nn.Dense(np.eye(3))
    up = rng.standard_normal((1, 3))
    gx, _, gb = nn.dense_backward(eye, rng.standard_normal((1, 3)), up)
    np.testing.assert_array_equal(gx, up)
    assert gb is None
    with pytest.raises(DimensionMismatch):
        nn.dense_backward(layer, x, np.zeros((5, 2)))


@pytest.mark.parametrize("bias", [True, False])
def test_dense_gradcheck(rng, bias):
    for _ in range(5):
        layer = nn.Dense.init(rng, 6, 4, bias=bias)
        if bias:
            layer.bias[:] = rng.standard_normal(4)
        x = rng.standard_normal((7, 6))
        g = rng.standard_normal((7, 4))
        layer.forward(x)
        gx = layer.backward(g)
        f = lambda: float(np.sum(nn.dense_forward(layer, x) * g))
        assert relative_error(gx, numerical_gradient(f, x)) <= 1e-6
        assert relative_error(layer.gradients()["weight"], numerical_gradient(f, layer.weight)) <= 1e-6
        if bias:
            assert relative_error(layer.gradients()["bias"], numerical_gradient(f, layer.bias)) <= 1e-6


# -- batch norm ------------------------------------------------------------

def test_batchnorm_train_standardizes(rng):
    bn = nn.BatchNorm(3)
    out = bn.forward(rng.standard_normal((50, 3)) * 4 + 2)
    np.testing.assert_allclose(out.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=0), 1, atol=1e-5)


def test_batchnorm_eval_identity(rng):
    bn = nn.BatchNorm(3)
    bn.set_mode(nn.EVAL)
    x = rng.standard_normal((4, 3))
    np.testing.assert_allclose(bn.forward(x), x / np.sqrt(1 + 1e-5), rtol=1e-15)
    np.testing.assert_allclose(bn.forward(x), x, rtol=1e-5)


def test_batchnorm_errors():
    bn = nn.BatchNorm(2)
    with pytest.raises(BatchTooSmall):
        bn.forward(np.ones((1, 2)))
    with pytest.raises(StaleCache):
        nn.batchnorm_backward(bn, None, np.ones((2, 2)))
    bn.set_mode(nn.EVAL)
    bn.forward(np.ones((3, 2)))
    with pytest.raises(StaleCache):
        bn.backward(np.ones((3, 2)))


def test_batchnorm_zero_upstream(rng):
    bn = nn.BatchNorm(3)
    bn.forward(rng.standard_normal((6, 3)))
    for grad in bn.backward(np.zeros((6, 3))), *bn.gradients().values():
        assert not grad.any()


def _bn_with_random_affine(rng, dim):
    bn = nn.BatchNorm(dim)
    bn.gamma[:] = rng.standard_normal(dim)
    bn.beta[:] = rng.standard_normal(dim)
    return bn


def test_batchnorm_gradcheck(rng):
    for _ in range(10):
        bn = _bn_with_random_affine(rng, 4)
        x = rng.standard_normal((8, 4)) * rng.uniform(0.5, 3) + rng.standard_normal(4)
        g = rng.standard_normal((8, 4))
        bn.forward(x)
        gx = bn.backward(g)
        f = lambda: float(np.sum(bn.forward(x) * g))
        assert relative_error(gx, numerical_gradient(f, x)) <= 1e-5
        assert relative_error(bn.gradients()["gamma"], numerical_gradient(f, bn.gamma)) <= 1e-5
        assert relative_error(bn.gradients()["beta"], numerical_gradient(f, bn.beta)) <= 1e-5


def test_batchnorm_constant_batch(rng):
    bn = _bn_with_random_affine(rng, 3)
    x = np.tile(rng.standard_normal(3), (5, 1))
    g = rng.standard_normal((5, 3))
    bn.forward(x)
    gx = bn.backward(g)
    f = lambda: float(np.sum(bn.forward(x) * g))
    # step well below sqrt(eps) so the probe stays in the epsilon-dominated regime
    assert relative_error(gx, numerical_gradient(f, x, eps=1e-7)) <= 1e-5
    # an upstream gradient constant over the batch is absorbed by the mean
    bn.forward(x)
    assert np.abs(bn.backward(np.tile(g[0], (5, 1)))).max() <= 1e-9


def test_batchnorm_running_stats_converge():
    rng = np.random.default_rng(7)
    bn = nn.BatchNorm(2, momentum=0.1)
    mean, std = np.array([3.0, -1.0]), np.array([2.0, 0.5])
    for _ in range(500):
        bn.forward(rng.standard_normal((64, 2)) * std + mean)
    np.testing.assert_allclose(bn.running_mean, mean, atol=0.1)
    np.testing.assert_allclose(bn.running_var, std ** 2, rtol=0.1)


def test_batchnorm_stores_unbiased_variance():
    bn = nn.BatchNorm(1, momentum=0.5)
    x = np.array([[0.0], [2.0]])
    bn.forward(x)
    # batch var biased = 1, unbiased = 2
    np.testing.assert_allclose(bn.running_var, [0.5 * 1.0 + 0.5 * 2.0])
    np.testing.assert_allclose(bn.running_mean, [0.5])


# -- dropout ---------------------------------------------------------------

def test_dropout_identity_cases(rng):
    x = rng.standard_normal((4, 5))
    out, mask = nn.dropout_forward(nn.Dropout(0.0), x)
    np.testing.assert_array_equal(out, x)
    assert (mask == 1).all()
    layer = nn.Dropout(0.75)
    layer.set_mode(nn.EVAL)
    out, _ = nn.dropout_forward(layer, x)
    np.testing.assert_array_equal(out, x)


def test_dropout_rate_and_scaling():
    layer = nn.Dropout(0.25, rng=np.random.default_rng(3))
    out, mask = nn.dropout_forward(layer, np.ones((1, 100_000)))
    zero_frac = np.mean(out == 0)
    assert abs(zero_frac - 0.25) <= 0.01
    np.testing.assert_allclose(np.unique(out), [0.0, 1 / 0.75])


def test_dropout_invalid_ratio():
    with pytest.raises(InvalidConfig):
        nn.Dropout(1.0)


def test_dropout_gradcheck_fixed_mask(rng):
    for _ in range(10):
        layer = nn.Dropout(0.5, rng=np.random.default_rng(1))
        x = rng.standard_normal((6, 5))
        g = rng.standard_normal((6, 5))
        layer.forward(x)
        gx = layer.backward(g)

        def f():
            layer.rng = np.random.default_rng(1)
            return float(np.sum(layer.forward(x) * g))

        assert relative_error(gx, numerical_gradient(f, x)) <= 1e-6


def test_dropout_seeded_determinism(rng):
    x = rng.standard_normal((8, 16))
    a = nn.Dropout(0.5, rng=np.random.default_rng(9)).forward(x)
    b = nn.Dropout(0.5, rng=np.random.default_rng(9)).forward(x)
    np.testing.assert_array_equal(a, b)


# -- heads -----------------------------------------------------------------

def test_head_variant_layouts():
    kinds = {
        v: [type(layer).__name__ for layer in nn.build_head(nn.HeadConfig(v, 32, 16, 0.5))]
        for v in nn.VARIANTS
    }
    assert kinds["A"] == ["L2Normalize"]
    assert kinds["B"] == ["Dense", "L2Normalize"]
    assert kinds["C"] == ["Dense", "BatchNorm", "L2Normalize"]
    assert kinds["D"] == ["BatchNorm", "Dropout", "Dense", "BatchNorm", "L2Normalize"]


def test_head_reference_dimensions(rng):
    a = nn.HeadConfig("A", input_dim=2048)
    assert a.output_dim == 2048
    stack_a = nn.build_head(a)
    assert len(stack_a) == 1
    stack_a.set_mode(nn.EVAL)
    assert stack_a.forward(rng.standard_normal((2, 2048))).shape == (2, 2048)

    d = nn.HeadConfig("D", input_dim=2048, embedding_dim=1024, dropout_ratio=0.5)
    stack_d = nn.build_head(d)
    assert len(stack_d) == 5 and isinstance(stack_d[-1], nn.L2Normalize)
    assert stack_d[1].ratio == 0.5
    assert stack_d[2].weight.shape == (1024, 2048)


def test_head_invalid_config():
    with pytest.raises(InvalidConfig):
        nn.HeadConfig("E", 4, 4)
    with pytest.raises(InvalidConfig):
        nn.HeadConfig("D", 4, 4, dropout_ratio=1.0)
    with pytest.raises(InvalidConfig):
        nn.build_head({"variant": "A"})


def test_variant_b_identity_is_normalization(rng):
    stack = nn.build_head(nn.HeadConfig("B", 5, 5))
    stack[0].weight[:] = np.eye(5)
    x = rng.standard_normal((3, 5))
    np.testing.assert_allclose(nn.stack_forward(stack, x, nn.EVAL), l2_normalize(x), rtol=1e-15)


def test_stack_examples():
    empty = nn.LayerStack()
    x = np.array([[1.0, 2.0]])
    np.testing.assert_array_equal(nn.stack_forward(empty, x, nn.TRAIN), x)
    np.testing.assert_array_equal(nn.stack_backward(empty, x), x)
    l2 = nn.LayerStack([nn.L2Normalize()])
    np.testing.assert_allclose(nn.stack_forward(l2, [[3.0, 4.0]], nn.TRAIN), [[0.6, 0.8]])


def _full_network(rng, variant, in_dim=12, width=10, emb=6, ratio=0.3):
    backbone = nn.build_backbone(in_dim, 1, width, rng)
    head = nn.build_head(nn.HeadConfig(variant, width, emb, ratio), rng)
    for layer in head:
        if isinstance(layer, nn.BatchNorm):
            layer.gamma[:] = rng.uniform(0.5, 1.5, layer.dim)
            layer.beta[:] = rng.standard_normal(layer.dim) * 0.1
    return nn.LayerStack([backbone, head], names=["backbone", "head"])


@pytest.mark.parametrize("variant", nn.VARIANTS)
def test_end_to_end_gradcheck(rng, variant):
    stack = _full_network(rng, variant)
    stack.set_mode(nn.TRAIN)
    dropouts = [layer for layer in stack[1] if isinstance(layer, nn.Dropout)]

    def reseed():
        for layer in dropouts:
            layer.rng = np.random.default_rng(5)

    x = rng.standard_normal((8, 12))
    g = rng.standard_normal((8, 6 if variant != "A" else 10))
    f = _stack_loss(stack, x, g, reseed)
    reseed()
    stack.forward(x)
    gx = stack.backward(g)
    assert relative_error(gx, numerical_gradient(f, x)) <= 1e-5
    grads = stack.gradients()
    assert set(grads) == set(stack.parameters())
    for name, param in stack.parameters().items():
        numeric = numerical_gradient(f, param)
        if np.linalg.norm(numeric) < 1e-8:
            # FC bias feeding batch norm: the mean subtraction cancels it exactly
            assert np.abs(grads[name]).max() <= 1e-12, name
            continue
        assert relative_error(grads[name], numeric) <= 1e-5, name


@pytest.mark.parametrize("variant", nn.VARIANTS)
def test_head_output_on_sphere(rng, variant):
    stack = _full_network(rng, variant)
    for mode in (nn.TRAIN, nn.EVAL):
        out = nn.stack_forward(stack, rng.standard_normal((8, 12)) * 50, mode)
        assert np.abs(np.linalg.norm(out, axis=1) - 1).max() <= 1e-9


def test_eval_determinism(rng):
    stack = _full_network(rng, "D")
    x = rng.standard_normal((8, 12))
    a = nn.stack_forward(stack, x, nn.EVAL)
    b = nn.stack_forward(stack, x, nn.EVAL)
    assert a.tobytes() == b.tobytes()


def test_train_determinism_under_seed():
    x = np.random.default_rng(0).standard_normal((8, 12))
    outs = [nn.stack_forward(_full_network(np.random.default_rng(4), "D"), x, nn.TRAIN)
            for _ in range(2)]
    assert outs[0].tobytes() == outs[1].tobytes()


# -- checkpoints -----------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    stack = _full_network(rng, "D")
    stack.forward(rng.standard_normal((8, 12)))
    path = tmp_path / "ckpt.npz"
    nn.save_checkpoint(path, stack.state_dict(), {"note": "x"})
    state, meta = nn.load_checkpoint(path)
    assert meta == {"note": "x"}
    assert "head.2.weight" in state and "head.0.running_var" in state
    for key, value in stack.state_dict().items():
        assert state[key].tobytes() == value.tobytes()

    fresh = _full_network(np.random.default_rng(99), "D")
    fresh.load_state_dict(state)
    for key, value in stack.state_dict().items():
        assert fresh.state_dict()[key].tobytes() == value.tobytes()


def test_checkpoint_shape_mismatch(tmp_path, rng):
    stack = _full_network(rng, "D")
    state = stack.state_dict()
    state["head.2.weight"] = np.zeros((1, 1))
    with pytest.raises(CheckpointError):
        _full_network(rng, "D").load_state_dict(state)
    del state["head.2.weight"]
    with pytest.raises(CheckpointError):
        _full_network(rng, "D").load_state_dict(state)
    with pytest.raises(CheckpointError):
        nn.load_checkpoint(tmp_path / "missing.npz")

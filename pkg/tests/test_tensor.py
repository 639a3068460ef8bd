"""Autodiff engine tests: independent oracles, finite differences, file I/O."""

import numpy as np
import pytest

from rumorkit import checkpoint as ckpt
from rumorkit import tensor as T
from rumorkit.errors import NotScalarOutput, ShapeMismatch, ZeroVector


# ---------------------------------------------------------------------------
# oracles, written before the ops were exercised
# ---------------------------------------------------------------------------

def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]), dtype=a.dtype)
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def naive_softmax(x):
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        e = np.exp(x[i] - x[i].max())
        out[i] = e / e.sum()
    return out


def naive_relation_bias(q, table, rel):
    n = q.shape[0]
    out = np.zeros((n, n), dtype=q.dtype)
    for i in range(n):
        for j in range(n):
            out[i, j] = float(q[i] @ table[rel[i, j]])
    return out


def naive_layer_norm(x, gain, bias, eps=1e-5):
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        row = x[i]
        mu = row.mean()
        sigma = np.sqrt(row.var() + eps)
        out[i] = (row - mu) / sigma * gain + bias
    return out


# ---------------------------------------------------------------------------
# forward values
# ---------------------------------------------------------------------------

def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(11)
    a = rng.normal(size=(3, 4)).astype(np.float64)
    b = rng.normal(size=(4, 2)).astype(np.float64)
    got = T.matmul(T.Tensor(a), T.Tensor(b)).data
    np.testing.assert_allclose(got, naive_matmul(a, b), rtol=0, atol=1e-12)


def test_softmax_uniform_on_equal_logits():
    out = T.softmax(T.Tensor(np.array([0.0, 0.0]))).data
    np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-7)


def test_softmax_matches_rowwise_oracle():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 5)).astype(np.float64)
    np.testing.assert_allclose(T.softmax(T.Tensor(x)).data, naive_softmax(x), atol=1e-12)


def test_layer_norm_matches_oracle():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 8)).astype(np.float64)
    gain = rng.normal(size=8).astype(np.float64)
    bias = rng.normal(size=8).astype(np.float64)
    got = T.layer_norm(T.Tensor(x), T.Tensor(gain), T.Tensor(bias)).data
    np.testing.assert_allclose(got, naive_layer_norm(x, gain, bias), atol=1e-10)


def test_relation_bias_matches_double_loop():
    rng = np.random.default_rng(7)
    q = rng.normal(size=(5, 4)).astype(np.float64)
    table = rng.normal(size=(6, 4)).astype(np.float64)
    rel = rng.integers(0, 6, size=(5, 5))
    got = T.relation_bias(T.Tensor(q), T.Tensor(table), rel).data
    np.testing.assert_allclose(got, naive_relation_bias(q, table, rel), atol=1e-12)


def test_cosine_similarity_of_parallel_and_orthogonal():
    a = T.Tensor(np.array([1.0, 0.0]))
    assert T.cosine_similarity(a, T.Tensor(np.array([2.0, 0.0]))).item() == pytest.approx(1.0)
    assert T.cosine_similarity(a, T.Tensor(np.array([0.0, 3.0]))).item() == pytest.approx(0.0)


def test_l2_normalize_unit_rows():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(4, 6))
    out = T.l2_normalize(T.Tensor(x)).data
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), np.ones(4), atol=1e-6)


def test_l2_normalize_rejects_zero_row():
    x = np.array([[1.0, 2.0], [0.0, 0.0]])
    with pytest.raises(ZeroVector):
        T.l2_normalize(T.Tensor(x))


def test_embedding_gather_selects_rows():
    table = T.Tensor(np.arange(12, dtype=np.float64).reshape(4, 3))
    out = T.embedding_gather(table, [2, 0, 2])
    np.testing.assert_array_equal(out.data, table.data[[2, 0, 2]])


def test_tile_ops():
    v = T.Tensor(np.array([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(T.tile_rows(v, 2).data, [[1, 2, 3], [1, 2, 3]])
    np.testing.assert_array_equal(T.tile_cols(v, 2).data, [[1, 1], [2, 2], [3, 3]])


# ---------------------------------------------------------------------------
# backward correctness on hand-derived cases
# ---------------------------------------------------------------------------

def test_sum_of_squares_gradient_is_two_x():
    x = T.Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    T.tensor_sum(T.mul(x, x)).backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0], atol=1e-6)


def test_shared_node_gradients_add():
    # z = sum(x*a) + sum(x*b); dz/dx = a + b
    x = T.Tensor(np.array([1.0, -1.0]), requires_grad=True)
    a = T.Tensor(np.array([2.0, 3.0]))
    b = T.Tensor(np.array([5.0, 7.0]))
    T.add(T.tensor_sum(T.mul(x, a)), T.tensor_sum(T.mul(x, b))).backward()
    np.testing.assert_allclose(x.grad, [7.0, 10.0], atol=1e-6)


def test_repeated_backward_accumulates_until_zeroed():
    x = T.Tensor(np.array([3.0]), requires_grad=True)
    loss = T.tensor_sum(T.mul(x, x))
    loss.backward()
    first = x.grad.copy()
    loss.backward()
    np.testing.assert_allclose(x.grad, 2 * first)
    x.zero_grad()
    assert x.grad is None


def test_backward_requires_scalar():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(NotScalarOutput):
        T.mul(x, x).backward()


def test_no_grad_skips_graph():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        y = T.tensor_sum(T.mul(x, x))
    assert not y.requires_grad
    y.backward()  # silently a no-op on a detached scalar
    assert x.grad is None


def test_shape_mismatch_reports_both_shapes():
    with pytest.raises(ShapeMismatch) as info:
        T.add(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((4, 3))))
    assert "(2, 3)" in str(info.value) and "(4, 3)" in str(info.value)


def test_bias_add_backward_sums_rows():
    x = T.Tensor(np.ones((4, 3)), requires_grad=True)
    b = T.Tensor(np.zeros(3), requires_grad=True)
    T.tensor_sum(T.add(x, b)).backward()
    np.testing.assert_allclose(b.grad, [4.0, 4.0, 4.0])


def test_embedding_gather_accumulates_repeated_rows():
    table = T.Tensor(np.zeros((4, 2)), requires_grad=True)
    out = T.embedding_gather(table, [1, 1, 3])
    T.tensor_sum(out).backward()
    np.testing.assert_allclose(table.grad, [[0, 0], [2, 2], [0, 0], [1, 1]])


# ---------------------------------------------------------------------------
# finite differences, 64-bit
# ---------------------------------------------------------------------------

OP_TOL = 1e-4


def check_inputs(build, arrays, tol=OP_TOL):
    """Grad-check ``build(*tensors)`` against central differences, per input."""
    with T.verification_mode():
        tensors = [T.Tensor(np.asarray(a, dtype=np.float64), requires_grad=True) for a in arrays]
        for target in tensors:
            err = T.grad_check(lambda _x: build(*tensors), target)
            assert err < tol, f"finite-difference mismatch {err:.3e}"


def weighted(out, seed=987654):
    # seed far from the input seeds: a weight matrix equal to the input makes
    # normalization losses scale-invariant and their true gradient zero
    rng = np.random.default_rng(seed)
    w = T.Tensor(rng.normal(size=out.shape).astype(np.float64))
    return T.tensor_sum(T.mul(out, w))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_grad_arithmetic_ops(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    v = rng.normal(size=4)
    check_inputs(lambda x, y: weighted(T.add(x, y)), [a, b])
    check_inputs(lambda x, y: weighted(T.sub(x, y)), [a, b])
    check_inputs(lambda x, y: weighted(T.mul(x, y)), [a, b])
    check_inputs(lambda x, y: weighted(T.add(x, y)), [a, v])  # bias form
    check_inputs(lambda x: weighted(T.scale(x, -1.7)), [a])
    check_inputs(lambda x: weighted(-x), [a])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_grad_matmul_and_layout_ops(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    check_inputs(lambda x, y: weighted(T.matmul(x, y)), [a, b])
    check_inputs(lambda x: weighted(T.transpose(x)), [a])
    check_inputs(lambda x, y: weighted(T.concat([x, y], axis=0)), [a, rng.normal(size=(2, 4))])
    check_inputs(lambda x, y: weighted(T.concat([x, y], axis=1)), [a, rng.normal(size=(3, 2))])
    check_inputs(lambda x: weighted(T.slice_rows(x, 1, 3)), [a])
    check_inputs(lambda x: weighted(T.slice_cols(x, 1, 3)), [a])
    check_inputs(lambda x: weighted(T.tile_rows(x, 5)), [rng.normal(size=4)])
    check_inputs(lambda x: weighted(T.tile_cols(x, 5)), [rng.normal(size=4)])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_grad_reductions_and_nonlinearities(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 4))
    safe = a + 0.2 * np.sign(a)  # keep away from the relu kink
    positive = np.abs(a) + 0.5
    check_inputs(lambda x: T.tensor_sum(x), [a])
    check_inputs(lambda x: T.mean(x), [a])
    check_inputs(lambda x: weighted(T.exp(x)), [a])
    check_inputs(lambda x: weighted(T.log(x)), [positive])
    check_inputs(lambda x: weighted(T.relu(x)), [safe])
    check_inputs(lambda x: weighted(T.gelu(x)), [a])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_grad_normalizations(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 6))
    gain = rng.normal(size=6)
    bias = rng.normal(size=6)
    check_inputs(lambda x: weighted(T.softmax(x, axis=-1)), [a])
    check_inputs(lambda x: weighted(T.softmax(x, axis=0)), [a])
    check_inputs(lambda x: weighted(T.log_softmax(x, axis=-1)), [a])
    check_inputs(lambda x, g, b: weighted(T.layer_norm(x, g, b)), [a, gain, bias])
    check_inputs(lambda x: weighted(T.layer_norm(x)), [a])
    check_inputs(lambda x: weighted(T.l2_normalize(x)), [a])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_grad_similarity_and_gather_ops(seed):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=5)
    v = rng.normal(size=5)
    table = rng.normal(size=(7, 3))
    idx = rng.integers(0, 7, size=6)
    q = rng.normal(size=(4, 3))
    rel_table = rng.normal(size=(6, 3))
    rel = rng.integers(0, 6, size=(4, 4))
    check_inputs(lambda x, y: T.cosine_similarity(x, y), [u, v])
    check_inputs(lambda t: weighted(T.embedding_gather(t, idx)), [table])
    check_inputs(lambda x, t: weighted(T.relation_bias(x, t, rel)), [q, rel_table])


def test_grad_check_rejects_float32():
    x = T.Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    with pytest.raises(ValueError):
        T.grad_check(lambda t: T.tensor_sum(t), x)


def test_verification_mode_switches_dtype():
    assert T.Tensor([1.0]).data.dtype == np.float32
    with T.verification_mode():
        assert T.Tensor([1.0]).data.dtype == np.float64
    assert T.Tensor([1.0]).data.dtype == np.float32


# ---------------------------------------------------------------------------
# parameters, checksums, checkpoints
# ---------------------------------------------------------------------------

def test_frozen_parameter_takes_no_gradient():
    p = T.Parameter("w", np.ones((2, 2)), frozen=True)
    x = T.Tensor(np.ones((2, 2)), requires_grad=True)
    T.tensor_sum(T.matmul(p.tensor, x)).backward()
    assert p.grad is None
    assert x.grad is not None


def test_checksum_tracks_value_changes_only():
    params = [T.Parameter("a", np.ones(3)), T.Parameter("b", np.zeros((2, 2)))]
    before = T.parameters_checksum(params)
    assert T.parameters_checksum(list(reversed(params))) == before  # order-free
    params[0].data[1] = 5.0
    assert T.parameters_checksum(params) != before


def test_checkpoint_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(21)
    params = [
        T.Parameter("encoder.w", rng.normal(size=(4, 3)).astype(np.float32)),
        T.Parameter("head.bias", rng.normal(size=7).astype(np.float32)),
    ]
    config = {"dim": 4, "label": "round-trip"}
    path = tmp_path / "weights.bin"
    ckpt.save_parameters(path, params, config)
    got_config, arrays = ckpt.load_parameters(path)
    assert got_config == config
    assert set(arrays) == {"encoder.w", "head.bias"}
    for param in params:
        assert arrays[param.name].tobytes() == param.data.astype("<f4").tobytes()


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load_parameters(path)


def test_checkpoint_rejects_unknown_version(tmp_path):
    path = tmp_path / "weights.bin"
    ckpt.save_parameters(path, [], {})
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load_parameters(path)


def test_checkpoint_rejects_trailing_bytes(tmp_path):
    path = tmp_path / "weights.bin"
    ckpt.save_parameters(path, [T.Parameter("w", np.ones(2, dtype=np.float32))], {})
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load_parameters(path)


def test_sidecar_round_trip(tmp_path):
    path = tmp_path / "weights.bin"
    ckpt.save_parameters(path, [], {"d": 1})
    payload = {"seed": 3, "stopped_epoch": 7, "vocab": "v.txt"}
    ckpt.save_sidecar(path, payload)
    assert ckpt.load_sidecar(path) == payload

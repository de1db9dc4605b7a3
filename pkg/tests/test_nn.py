import json

import numpy as np
import pytest

from panelmdp.exceptions import EmptyInputError, NumericError, ShapeError
from panelmdp.nn import (
    SGD,
    Adam,
    AttentionBlock,
    DenseStack,
    EmbeddingTable,
    GruCell,
    Param,
    attention_pool,
    dense_backward,
    dense_forward,
    embedding_lookup,
    flatten_params,
    grad_check,
    gru_encode,
    load_tensors,
    optimizer_step,
    save_tensors,
)

TOL = 1e-4
STEP = 1e-5


def projection_loss(forward, backward, params, inputs, rng):
    """Scalar ``c . f(x)`` with a fixed random ``c``; also checks the input gradient."""
    out, _ = forward(inputs)
    c = rng.standard_normal(out.shape)
    x_param = Param("x", inputs)

    def f(do_backward):
        y, cache = forward(x_param.value)
        if do_backward:
            x_param.grad += backward(c, cache)
        return float(np.sum(c * y))

    return f, list(params) + [x_param]


# -- dense -----------------------------------------------------------------


def test_dense_identity_weights_pass_input_through():
    stack = DenseStack([3, 3], np.random.default_rng(0))
    stack.layers[0].W.value[...] = np.eye(3)
    x = np.array([0.5, -1.0, 2.0])
    y, _ = dense_forward(stack, x)
    np.testing.assert_array_equal(y, x)


def test_dense_zero_input_zero_bias_gives_zero_preactivation():
    stack = DenseStack([4, 5], np.random.default_rng(1))
    y, _ = dense_forward(stack, np.zeros(4))
    np.testing.assert_array_equal(y, np.zeros(5))


def test_dense_shape_mismatch():
    stack = DenseStack([4, 2], np.random.default_rng(0))
    with pytest.raises(ShapeError):
        dense_forward(stack, np.zeros(3))


def test_dense_gradient_two_layers():
    rng = np.random.default_rng(2)
    stack = DenseStack([4, 6, 3], rng)
    x = rng.standard_normal(4)
    c = rng.standard_normal(3)
    xp = Param("x", x)

    def f(back):
        y, caches = dense_forward(stack, xp.value)
        if back:
            xp.grad += dense_backward(stack, caches, c)
        return float(c @ y)

    assert grad_check(f, stack.parameters() + [xp], STEP) <= TOL


# -- attention --------------------------------------------------------------------


def test_attention_single_item_is_value_then_output_projection():
    rng = np.random.default_rng(3)
    block = AttentionBlock(5, 8, 2, rng)
    x = rng.standard_normal(5)
    y, _ = attention_pool(block, [x])
    expected = (x @ block.Wv.value + block.bv.value) @ block.Wo.value + block.bo.value
    np.testing.assert_allclose(y, expected, rtol=0, atol=1e-14)


def test_attention_permutation_invariant():
    rng = np.random.default_rng(4)
    block = AttentionBlock(8, 8, 2, rng)
    items = list(rng.standard_normal((6, 8)))
    y1, _ = attention_pool(block, items)
    for _ in range(5):
        perm = rng.permutation(6)
        y2, _ = attention_pool(block, [items[i] for i in perm])
        np.testing.assert_allclose(y1, y2, rtol=0, atol=1e-12)


def test_attention_empty_sequence():
    block = AttentionBlock(4, 4, 2, np.random.default_rng(0))
    with pytest.raises(EmptyInputError):
        attention_pool(block, [])


def test_attention_heads_must_divide_model_dim():
    with pytest.raises(ShapeError):
        AttentionBlock(4, 6, 4, np.random.default_rng(0))


def test_attention_gradient_three_items():
    rng = np.random.default_rng(5)
    block = AttentionBlock(8, 8, 2, rng)
    X = rng.standard_normal((1, 3, 8))
    f, params = projection_loss(block.forward, block.backward, block.parameters(), X, rng)
    assert grad_check(f, params, STEP) <= TOL


def test_attention_gradient_batched():
    rng = np.random.default_rng(6)
    block = AttentionBlock(5, 8, 4, rng)
    X = rng.standard_normal((3, 4, 5))
    f, params = projection_loss(block.forward, block.backward, block.parameters(), X, rng)
    assert grad_check(f, params, STEP) <= TOL


# -- GRU ---------------------------------------------------------------------------


def test_gru_empty_sequence_is_zero():
    cell = GruCell(3, 5, np.random.default_rng(0))
    h, _ = gru_encode(cell, [])
    np.testing.assert_array_equal(h, np.zeros(5))


def test_gru_one_step_matches_gate_equations():
    rng = np.random.default_rng(7)
    cell = GruCell(3, 4, rng)
    x = rng.standard_normal(3)
    h0 = np.zeros(4)
    sig = lambda v: 1 / (1 + np.exp(-v))
    z = sig(x @ cell.Wz.value + h0 @ cell.Uz.value + cell.bz.value)
    r = sig(x @ cell.Wr.value + h0 @ cell.Ur.value + cell.br.value)
    c = np.tanh(x @ cell.Wc.value + (r * h0) @ cell.Uc.value + cell.bc.value)
    expected = (1 - z) * h0 + z * c
    h, _ = gru_encode(cell, [x])
    np.testing.assert_allclose(h, expected, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(cell.step(x[None], h0[None])[0], expected, rtol=1e-13, atol=1e-15)


def test_gru_gradient_length_four():
    rng = np.random.default_rng(8)
    cell = GruCell(3, 5, rng)
    X = rng.standard_normal((1, 4, 3))
    f, params = projection_loss(cell.forward, cell.backward, cell.parameters(), X, rng)
    assert grad_check(f, params, STEP) <= TOL


def test_gru_gradient_ragged_batch():
    rng = np.random.default_rng(9)
    cell = GruCell(3, 4, rng)
    X = rng.standard_normal((4, 5, 3))
    lengths = np.array([0, 2, 5, 3])
    fwd = lambda x: cell.forward(x, lengths)
    f, params = projection_loss(fwd, cell.backward, cell.parameters(), X, rng)
    assert grad_check(f, params, STEP) <= TOL


def test_gru_padding_does_not_leak():
    rng = np.random.default_rng(10)
    cell = GruCell(3, 4, rng)
    seq = rng.standard_normal((2, 3))
    h_short, _ = gru_encode(cell, list(seq))
    padded = np.concatenate([seq, rng.standard_normal((3, 3))])[None]
    h_pad, _ = cell.forward(padded, np.array([2]))
    np.testing.assert_array_equal(h_short, h_pad[0])


def test_gru_shape_mismatch():
    cell = GruCell(3, 4, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        gru_encode(cell, [np.zeros(2)])


# -- embeddings -----------------------------------------------------------------


def test_embedding_lookup_is_stable():
    table = EmbeddingTable(5, 3, np.random.default_rng(0))
    a, _ = embedding_lookup(table, 0)
    b, _ = embedding_lookup(table, 0)
    np.testing.assert_array_equal(a, b)


def test_embedding_backward_touches_only_that_row():
    table = EmbeddingTable(5, 3, np.random.default_rng(0))
    _, idx = embedding_lookup(table, 2)
    table.backward(np.ones(3), idx)
    assert np.all(table.table.grad[2] == 1)
    assert np.all(np.delete(table.table.grad, 2, axis=0) == 0)


def test_embedding_repeated_lookup_accumulates():
    rng = np.random.default_rng(11)
    table = EmbeddingTable(4, 3, rng)
    c1, c2 = rng.standard_normal(3), rng.standard_normal(3)

    def f(back):
        v1, i1 = embedding_lookup(table, 1)
        v2, i2 = embedding_lookup(table, 1)
        if back:
            table.backward(c1, i1)
            table.backward(c2, i2)
        return float(c1 @ v1 + c2 @ v2)

    assert grad_check(f, table.parameters(), STEP) <= TOL
    f(True)
    table.zero_grad()
    table.backward(c1, 1)
    table.backward(c2, 1)
    np.testing.assert_allclose(table.table.grad[1], c1 + c2)


def test_embedding_out_of_range():
    table = EmbeddingTable(4, 3, np.random.default_rng(0))
    with pytest.raises(IndexError):
        embedding_lookup(table, 4)
    with pytest.raises(IndexError):
        table.forward(np.array([0, -1]))


# -- grad_check itself ----------------------------------------------------------------


def test_grad_check_on_quadratic():
    w = Param("w", np.array([0.3, -1.2, 2.0]))

    def f(back):
        if back:
            w.grad += 2 * w.value
        return float(w.value @ w.value)

    assert grad_check(f, [w], STEP) < 1e-9


def test_grad_check_constant_function():
    w = Param("w", np.array([1.0, 2.0]))
    assert grad_check(lambda back: 3.0, [w], STEP) == 0.0


def test_grad_check_detects_wrong_gradient():
    w = Param("w", np.array([1.0, 2.0]))

    def f(back):
        if back:
            w.grad += 3 * w.value
        return float(w.value @ w.value)

    with pytest.raises(AssertionError):
        grad_check(f, [w], STEP, tolerance=TOL)


def test_grad_check_non_finite():
    w = Param("w", np.array([1.0]))
    with pytest.raises(NumericError):
        grad_check(lambda back: float("nan"), [w], STEP)


# -- optimizer -----------------------------------------------------------------------


def test_optimizer_zero_gradient_and_zero_lr_leave_params():
    w = Param("w", np.array([1.0, -2.0]))
    optimizer_step([w], 0.5)
    np.testing.assert_array_equal(w.value, [1.0, -2.0])
    w.grad[...] = [3.0, 4.0]
    optimizer_step([w], 0.0)
    np.testing.assert_array_equal(w.value, [1.0, -2.0])
    assert np.all(w.grad == 0)


def test_optimizer_one_step_on_square():
    w = Param("w", np.array([1.0]))
    w.grad += 2 * w.value
    optimizer_step([w], 0.1)
    np.testing.assert_allclose(w.value, [0.8])


def test_optimizer_rejects_non_finite_gradient():
    w = Param("w", np.array([1.0]))
    w.grad[0] = np.inf
    with pytest.raises(NumericError):
        SGD([w], 0.1).step()


@pytest.mark.parametrize("cls", [SGD, Adam])
def test_flat_buffers_match_per_tensor_updates(cls):
    rng = np.random.default_rng(12)
    shapes = [(3, 2), (4,), (2, 2)]
    a = [Param(f"p{i}", rng.standard_normal(s)) for i, s in enumerate(shapes)]
    b = [Param(p.name, p.value.copy()) for p in a]
    flatten_params(b)
    opt_a, opt_b = cls(a, 0.05), cls(b, 0.05)
    for _ in range(3):
        for pa, pb in zip(a, b):
            g = rng.standard_normal(pa.shape)
            pa.grad += g
            pb.grad += g
        opt_a.step()
        opt_b.step()
    for pa, pb in zip(a, b):
        np.testing.assert_array_equal(pa.value, pb.value)


def test_adam_minimises_quadratic():
    w = Param("w", np.array([2.0, -3.0]))
    opt = Adam([w], 0.1)
    for _ in range(500):
        w.grad += 2 * w.value
        opt.step()
    assert np.all(np.abs(w.value) < 1e-2)


# -- checkpoint format --------------------------------------------------------------


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(13)
    tensors = {
        "a": rng.standard_normal((3, 4)),
        "b": np.array([np.pi, -0.0, 1e-310, np.nextafter(1.0, 2.0)]),
        "scalarish": np.array([7.0]),
    }
    save_tensors(tmp_path / "ck", tensors, seed=42, extra={"note": "x"})
    loaded, manifest = load_tensors(tmp_path / "ck")
    assert manifest["seed"] == 42
    assert manifest["format_version"] == 1
    for k, v in tensors.items():
        assert loaded[k].tobytes() == v.astype("<f8").tobytes()
        assert loaded[k].shape == v.shape
    raw = (tmp_path / "ck" / "tensors.bin").read_bytes()
    meta = json.loads((tmp_path / "ck" / "manifest.json").read_text())
    entry = next(e for e in meta["tensors"] if e["name"] == "b")
    assert raw[entry["offset"] : entry["offset"] + entry["nbytes"]] == tensors["b"].astype("<f8").tobytes()

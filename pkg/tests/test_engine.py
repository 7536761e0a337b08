import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from wearimpute.engine import (
    Adam,
    AdamState,
    BatchNorm,
    Linear,
    MultiHeadSelfAttention,
    NonFiniteError,
    Parameter,
    Tensor,
    adam_step,
    batch_norm,
    check_gradients,
    checked,
    concat,
    config_hash,
    dropout,
    embedding,
    gelu,
    layer_norm,
    load_checkpoint,
    matmul,
    no_grad,
    save_checkpoint,
    softmax,
    trace,
)
from wearimpute.engine.functional import RunningStats

from .gradcases import CASES, worst_error
from .oracles import (
    adam_scripted,
    attention_loop,
    batch_norm_two_pass,
    gelu_mp,
    layer_norm_loop,
    matmul_loop,
    softmax_mp,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


class TestTensor:
    def test_shape_and_size_agree(self):
        t = Tensor(np.zeros((2, 3, 4)))
        assert t.shape == (2, 3, 4)
        assert t.size == 24 == int(np.prod(t.shape))

    def test_data_is_float64(self):
        assert Tensor([1, 2, 3]).data.dtype == np.float64

    def test_grad_matches_shape_after_backward(self, rng):
        w = Parameter(rng.standard_normal((3, 2)))
        (w * w).sum().backward()
        assert w.grad.shape == w.shape

    def test_checked_mode_rejects_non_finite(self):
        x = Parameter(np.array([-1.0, 1.0]))
        with checked(), np.errstate(invalid="ignore"), pytest.raises(NonFiniteError):
            x.log()

    def test_unchecked_mode_lets_nan_through(self):
        with np.errstate(invalid="ignore"):
            y = Tensor(np.array([-1.0])).log()
        assert np.isnan(y.data[0])

    def test_no_grad_records_nothing(self):
        w = Parameter(np.ones(3))
        with no_grad():
            y = (w * 2.0).sum()
        assert not y.requires_grad

    def test_graph_is_acyclic_and_visits_each_node_once(self, rng):
        a = Parameter(rng.standard_normal(3))
        b = a * a
        loss = (b + b).sum()
        nodes = trace(loss)
        ids = [id(n.output) for n in nodes]
        assert len(ids) == len(set(ids))
        assert nodes[-1].op == "sum"

    def test_backward_releases_graph(self, rng):
        w = Parameter(rng.standard_normal(3))
        loss = (w * w).sum()
        loss.backward()
        first = w.grad.copy()
        w.grad = None
        ((w * w).sum()).backward()
        np.testing.assert_array_equal(w.grad, first)


class TestMatmul:
    def test_identity(self):
        out = matmul(Tensor(np.eye(2)), Tensor([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_row_times_column(self):
        assert matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]

    def test_matches_triple_loop(self, rng):
        a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
        np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, matmul_loop(a, b), rtol=0, atol=1e-12)

    def test_inner_dimension_mismatch(self):
        with pytest.raises(ValueError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax(Tensor(np.zeros(3))).data, [1 / 3] * 3, atol=1e-15)

    def test_large_input_does_not_overflow(self):
        y = softmax(Tensor([1000.0, 0.0])).data
        assert np.all(np.isfinite(y))
        assert y[0] == pytest.approx(1.0) and y[1] == pytest.approx(0.0, abs=1e-300)

    def test_extended_precision_oracle(self):
        np.testing.assert_allclose(softmax(Tensor([1.0, 2.0, 3.0])).data, softmax_mp([1, 2, 3]), rtol=0, atol=1e-12)

    @given(arrays(np.float64, (4, 6), elements=finite), finite)
    def test_rows_sum_to_one_and_shift_invariant(self, x, c):
        y = softmax(Tensor(x), axis=-1).data
        assert np.all(y >= 0)
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)
        np.testing.assert_allclose(softmax(Tensor(x + c), axis=-1).data, y, atol=1e-12)


class TestGelu:
    def test_zero_is_fixed(self):
        assert gelu(Tensor([0.0])).data[0] == 0.0

    def test_asymptotes(self):
        y = gelu(Tensor([40.0, -40.0])).data
        assert y[0] == pytest.approx(40.0) and y[1] == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("x", [1.0, -0.7, 2.5, 0.01])
    def test_exact_erf_form(self, x):
        assert gelu(Tensor([x])).data[0] == pytest.approx(gelu_mp(x), abs=1e-9)


class TestNormalization:
    def test_batch_norm_standardizes(self, rng):
        x = rng.standard_normal((64, 3)) * 4 + 2
        y = batch_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), RunningStats.zeros(3), True).data
        np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=1e-6)
        np.testing.assert_allclose(y.var(axis=0), 1.0, atol=1e-5)

    def test_batch_norm_constant_column_gives_beta(self):
        x = np.ones((5, 2))
        beta = np.array([0.3, -1.0])
        y = batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(beta), RunningStats.zeros(2), True).data
        np.testing.assert_allclose(y, np.broadcast_to(beta, (5, 2)), atol=1e-12)

    def test_batch_norm_two_pass_oracle(self, rng):
        x, g, b = rng.standard_normal((8, 4)), rng.standard_normal(4), rng.standard_normal(4)
        y = batch_norm(Tensor(x), Tensor(g), Tensor(b), RunningStats.zeros(4), True).data
        np.testing.assert_allclose(y, batch_norm_two_pass(x, g, b), rtol=0, atol=1e-10)

    def test_batch_norm_single_sample_in_training_raises(self):
        with pytest.raises(ValueError):
            batch_norm(Tensor(np.ones((1, 3))), Tensor(np.ones(3)), Tensor(np.zeros(3)), RunningStats.zeros(3), True)

    def test_batch_norm_eval_uses_running_stats(self, rng):
        bn = BatchNorm(2)
        for _ in range(200):
            bn(Tensor(rng.normal(3.0, 2.0, (32, 2))))
        bn.eval()
        np.testing.assert_allclose(bn.running.mean, 3.0, atol=0.2)
        np.testing.assert_allclose(bn.running.var, 4.0, atol=0.5)
        y = bn(Tensor(np.full((1, 2), 3.0))).data
        np.testing.assert_allclose(y, 0.0, atol=0.1)

    def test_layer_norm_loop_oracle(self, rng):
        x, g, b = rng.standard_normal((2, 3, 5)), rng.standard_normal(5), rng.standard_normal(5)
        np.testing.assert_allclose(layer_norm(Tensor(x), Tensor(g), Tensor(b)).data, layer_norm_loop(x, g, b), atol=1e-12)


class TestBackward:
    def test_sum_gives_ones(self):
        w = Parameter(np.array([1.0, -2.0, 3.0]))
        w.sum().backward()
        np.testing.assert_array_equal(w.grad, [1, 1, 1])

    def test_square(self):
        w = Parameter(np.array([1.0, 2.0]))
        (w * w).sum().backward()
        np.testing.assert_array_equal(w.grad, [2, 4])

    def test_non_scalar_loss_raises(self):
        w = Parameter(np.ones(3))
        with pytest.raises(ValueError):
            (w * 2.0).backward()

    def test_shared_subexpression_accumulates(self):
        w = Parameter(np.array([3.0]))
        y = w * w
        (y + y).sum().backward()
        assert w.grad[0] == pytest.approx(12.0)

    @pytest.mark.parametrize("name", sorted(CASES))
    def test_finite_difference_agreement(self, name):
        for trial in range(3):
            assert worst_error(CASES[name], np.random.default_rng(trial)) < 1e-4, name

    def test_package_gradcheck_agrees(self, rng):
        w = Parameter(rng.standard_normal((3, 3)))
        errs = check_gradients(lambda: (gelu(w) * w).sum(), [w])
        assert errs[0] < 1e-6


class TestOps:
    def test_concat_and_slice_roundtrip(self, rng):
        a, b = rng.standard_normal((2, 3)), rng.standard_normal((2, 4))
        c = concat([Tensor(a), Tensor(b)], axis=1)
        np.testing.assert_array_equal(c[:, :3].data, a)
        np.testing.assert_array_equal(c[:, 3:].data, b)

    def test_embedding_lookup_accumulates_repeats(self):
        w = Parameter(np.arange(6.0).reshape(3, 2))
        out = embedding(w, [2, 2, 0])
        np.testing.assert_array_equal(out.data, [[4, 5], [4, 5], [0, 1]])
        out.sum().backward()
        np.testing.assert_array_equal(w.grad, [[1, 1], [0, 0], [2, 2]])

    def test_embedding_out_of_range(self):
        with pytest.raises(IndexError):
            embedding(Parameter(np.ones((3, 2))), [3])

    def test_reshape_transpose(self, rng):
        x = rng.standard_normal((2, 3, 4))
        np.testing.assert_array_equal(Tensor(x).reshape(6, 4).data, x.reshape(6, 4))
        np.testing.assert_array_equal(Tensor(x).transpose(2, 0, 1).data, x.transpose(2, 0, 1))


class TestDropout:
    def test_identity_at_eval(self, rng):
        x = Tensor(rng.standard_normal(100))
        assert dropout(x, 0.4, False, rng) is x

    def test_expectation_preserved(self):
        n, p = 20_000, 0.4
        y = dropout(Tensor(np.ones(n)), p, True, np.random.default_rng(0)).data
        sigma = np.sqrt(p / (1 - p) / n)  # std of the mean of scaled Bernoulli draws
        assert abs(y.mean() - 1.0) < 3 * sigma

    def test_invalid_rate(self):
        with pytest.raises(ValueError):
            dropout(Tensor(np.ones(2)), 1.0, True, np.random.default_rng(0))


class TestAttention:
    def test_matches_loop_oracle(self, rng):
        attn = MultiHeadSelfAttention(16, 4, rng)
        x = rng.standard_normal((5, 16))
        y = attn(Tensor(x)).data
        ref, weights = attention_loop(
            x, attn.q.weight.data, attn.q.bias.data, attn.k.weight.data, attn.k.bias.data,
            attn.v.weight.data, attn.v.bias.data, attn.out.weight.data, attn.out.bias.data, 4, 4,
        )
        np.testing.assert_allclose(y, ref, rtol=0, atol=1e-10)
        np.testing.assert_allclose(attn.last_attention, weights, atol=1e-12)

    def test_rows_sum_to_one(self, rng):
        attn = MultiHeadSelfAttention(16, 4, rng)
        attn(Tensor(rng.standard_normal((3, 7, 16))))
        np.testing.assert_allclose(attn.last_attention.sum(axis=-1), 1.0, atol=1e-12)

    def test_indivisible_width(self, rng):
        with pytest.raises(ValueError):
            MultiHeadSelfAttention(10, 4, rng)


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = [np.array([1.0, 2.0])]
        adam_step(p, [np.zeros(2)], AdamState())
        np.testing.assert_array_equal(p[0], [1.0, 2.0])

    def test_first_step_moves_by_lr(self):
        p = [np.array([0.5])]
        adam_step(p, [np.array([1.0])], AdamState(learning_rate=1e-3))
        assert p[0][0] == pytest.approx(0.5 - 1e-3, abs=1e-10)

    def test_scripted_trajectory_on_square(self):
        w = Parameter(np.array([1.5]))
        opt = Adam([w], lr=0.05)
        got = []
        for _ in range(10):
            opt.zero_grad()
            (w * w).sum().backward()
            opt.step()
            got.append(w.data[0])
        np.testing.assert_allclose(got, adam_scripted(1.5, lambda v: 2 * v, 10, lr=0.05), rtol=0, atol=1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step([np.zeros(2)], [np.zeros(3)], AdamState())

    def test_step_count_increases(self):
        s = AdamState()
        for i in range(3):
            adam_step([np.zeros(1)], [np.ones(1)], s)
            assert s.step == i + 1

    def test_seeded_training_is_bit_identical(self):
        def run():
            rng = np.random.default_rng(5)
            lin = Linear(3, 2, rng)
            opt = Adam(lin.parameters(), lr=1e-2)
            x = rng.standard_normal((16, 3))
            for _ in range(20):
                opt.zero_grad()
                (lin(Tensor(x)) ** 2).mean().backward()
                opt.step()
            return lin.weight.data.copy()

        np.testing.assert_array_equal(run(), run())


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, rng):
        tensors = {"a": rng.standard_normal((2, 3)), "b": rng.standard_normal(4)}
        save_checkpoint(tmp_path / "m.ckpt", tensors, {"d": 4}, {"kind": "x"})
        back, header = load_checkpoint(tmp_path / "m.ckpt")
        for k in tensors:
            np.testing.assert_array_equal(back[k], tensors[k])
        assert header["config_hash"] == config_hash({"d": 4})
        assert header["extra"] == {"kind": "x"}

    def test_layout_is_little_endian_float64(self, tmp_path):
        save_checkpoint(tmp_path / "m.ckpt", {"w": np.array([1.5, -2.0])}, {})
        blob = (tmp_path / "m.ckpt").read_bytes()
        assert blob[:8] == b"WIMPCKPT"
        (hlen,) = struct.unpack("<I", blob[8:12])
        header = json.loads(blob[12 : 12 + hlen])
        assert header["engine_version"]
        assert struct.unpack("<2d", blob[12 + hlen :]) == (1.5, -2.0)

    def test_rejects_foreign_file(self, tmp_path):
        (tmp_path / "x").write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "x")

    def test_tampered_config_detected(self, tmp_path):
        save_checkpoint(tmp_path / "m.ckpt", {"w": np.ones(1)}, {"d": 4})
        blob = (tmp_path / "m.ckpt").read_bytes().replace(b'"d":4', b'"d":5')
        (tmp_path / "m.ckpt").write_bytes(blob)
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "m.ckpt")

    @settings(max_examples=25)
    @given(st.dictionaries(st.text(min_size=1, max_size=5), st.integers(-5, 5), max_size=4))
    def test_config_hash_tracks_content(self, cfg):
        assert config_hash(cfg) == config_hash(dict(reversed(list(cfg.items()))))
        changed = dict(cfg, __extra__=1)
        assert config_hash(changed) != config_hash(cfg)

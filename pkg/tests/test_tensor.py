"""Engine tests: pinned forward values, finite-difference gradient oracles,
and the tape's contract (accumulation, pruning, error surfacing)."""

import numpy as np
import pytest

from freqshot import tensor as T
from freqshot.gradcheck import max_relative_error, numerical_gradient, numerical_gradients
from freqshot.tensor import NumericError, ParamSet, ShapeError, Tensor

RTOL = 1e-4


def rng(seed=0):
    return np.random.Generator(np.random.Philox(key=seed))


def check_op(build, arrays, h=1e-5, atol=1e-7):
    """Compare engine gradients of scalar build(tensors) to central differences."""
    tensors = {k: T.tensor(v, requires_grad=True) for k, v in arrays.items()}
    loss = build(tensors)
    loss.backward()

    def f(vals):
        ts = {k: T.tensor(v) for k, v in vals.items()}
        return build(ts).item()

    fd = numerical_gradients(f, arrays, h=h)
    for name in arrays:
        err = max_relative_error(tensors[name].grad, fd[name], atol=atol)
        assert err < RTOL, f"{name}: relative error {err:.3e}"


class TestForwardValues:
    def test_add_sub_mul_scale(self):
        a = T.tensor([[1.0, 2.0], [3.0, 4.0]])
        b = T.tensor([[10.0, 20.0], [30.0, 40.0]])
        assert np.array_equal(T.add(a, b).data, [[11.0, 22.0], [33.0, 44.0]])
        assert np.array_equal(T.sub(b, a).data, [[9.0, 18.0], [27.0, 36.0]])
        assert np.array_equal(T.mul(a, a).data, [[1.0, 4.0], [9.0, 16.0]])
        assert np.array_equal(T.scale(a, -2.0).data, [[-2.0, -4.0], [-6.0, -8.0]])

    def test_no_broadcast_on_elementwise(self):
        a = T.tensor(np.ones((2, 3)))
        b = T.tensor(np.ones((3,)))
        with pytest.raises(ShapeError):
            T.add(a, b)
        with pytest.raises(ShapeError):
            T.mul(a, T.tensor(np.ones((2, 1))))

    def test_dense_matches_manual(self):
        x = rng(1).normal(size=(4, 3))
        w = rng(2).normal(size=(3, 5))
        b = rng(3).normal(size=5)
        out = T.dense(T.tensor(x), T.tensor(w), T.tensor(b))
        assert np.allclose(out.data, x @ w + b, atol=1e-12)

    def test_relu_zero_has_zero_output(self):
        x = T.tensor([-1.0, 0.0, 2.0])
        assert np.array_equal(T.relu(x).data, [0.0, 0.0, 2.0])

    def test_relu_gradient_at_zero_is_zero(self):
        x = T.tensor([-1.0, 0.0, 2.0], requires_grad=True)
        T.sum_all(T.relu(x)).backward()
        assert np.array_equal(x.grad, [0.0, 0.0, 1.0])

    def test_softmax_rows_sum_to_one(self):
        x = T.tensor(rng(4).normal(size=(6, 9)) * 30.0)
        y = T.softmax(x)
        assert np.all(np.abs(y.data.sum(axis=-1) - 1.0) < 1e-12)
        assert np.all(y.data > 0.0)
        assert np.all(y.data < 1.0)

    def test_softmax_large_margin_stable(self):
        y = T.softmax(T.tensor([[0.0, 50.0]]))
        assert np.isfinite(y.data).all()
        assert abs(y.data[0, 1] - 1.0) < 1e-12
        assert y.data[0, 0] > 0.0

    def test_log_softmax_matches_log_of_softmax(self):
        x = rng(5).normal(size=(4, 7))
        a = T.log_softmax(T.tensor(x)).data
        b = np.log(T.softmax(T.tensor(x)).data)
        assert np.allclose(a, b, atol=1e-12)

    def test_conv2d_identity_kernel_bit_exact(self):
        x = rng(6).normal(size=(2, 3, 5, 5))
        k = np.zeros((3, 3, 1, 1))
        for c in range(3):
            k[c, c, 0, 0] = 1.0
        out = T.conv2d(T.tensor(x), T.tensor(k))
        assert np.array_equal(out.data, x)

    def test_conv2d_matches_direct_loops(self):
        x = rng(7).normal(size=(2, 2, 6, 6))
        k = rng(8).normal(size=(3, 2, 3, 3))
        s, p = 2, 1
        out = T.conv2d(T.tensor(x), T.tensor(k), stride=s, padding=p).data
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        ref = np.zeros_like(out)
        for b in range(2):
            for f in range(3):
                for i in range(out.shape[2]):
                    for j in range(out.shape[3]):
                        patch = xp[b, :, i * s : i * s + 3, j * s : j * s + 3]
                        ref[b, f, i, j] = (patch * k[f]).sum()
        assert np.allclose(out, ref, atol=1e-12)

    def test_conv2d_rejects_even_kernel(self):
        with pytest.raises(ShapeError):
            T.conv2d(T.tensor(np.zeros((1, 1, 4, 4))), T.tensor(np.zeros((1, 1, 2, 2))))

    def test_max_pool_values_and_tie_break(self):
        x = np.array(
            [[[[1.0, 1.0, 5.0, 2.0],
               [1.0, 1.0, 3.0, 5.0],
               [0.0, 7.0, 4.0, 4.0],
               [7.0, 0.0, 4.0, 4.0]]]]
        )
        xt = T.tensor(x, requires_grad=True)
        out = T.max_pool2d(xt)
        assert np.array_equal(out.data, [[[[1.0, 5.0], [7.0, 4.0]]]])
        T.sum_all(out).backward()
        # ties route gradient to the first window element in row-major order
        expect = np.array(
            [[[[1.0, 0.0, 1.0, 0.0],
               [0.0, 0.0, 0.0, 0.0],
               [0.0, 1.0, 1.0, 0.0],
               [0.0, 0.0, 0.0, 0.0]]]]
        )
        assert np.array_equal(xt.grad, expect)

    def test_max_pool_rejects_odd_dims(self):
        with pytest.raises(ShapeError):
            T.max_pool2d(T.tensor(np.zeros((1, 1, 3, 4))))

    def test_gather_rows(self):
        x = T.tensor([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        out = T.gather_rows(x, np.array([1, 0, 1]))
        assert np.array_equal(out.data, [2.0, 3.0, 6.0])
        with pytest.raises(ShapeError):
            T.gather_rows(x, np.array([0, 2, 0]))

    def test_class_mean(self):
        emb = T.tensor([[1.0, 0.0], [3.0, 0.0], [0.0, 5.0]])
        out = T.class_mean(emb, np.array([0, 0, 1]), 2)
        assert np.array_equal(out.data, [[2.0, 0.0], [0.0, 5.0]])
        with pytest.raises(ShapeError):
            T.class_mean(emb, np.array([0, 0, 0]), 2)

    def test_pairwise_sqdist(self):
        q = T.tensor([[0.0, 0.0], [1.0, 1.0]])
        p = T.tensor([[0.0, 1.0], [2.0, 2.0]])
        out = T.pairwise_sqdist(q, p)
        assert np.allclose(out.data, [[1.0, 8.0], [1.0, 2.0]], atol=1e-12)

    def test_pair_concat_ordering(self):
        q = T.tensor([[1.0, 2.0], [3.0, 4.0]])
        p = T.tensor([[9.0, 8.0], [7.0, 6.0]])
        out = T.pair_concat(q, p)
        assert out.data.shape == (4, 4)
        assert np.array_equal(out.data[1], [1.0, 2.0, 7.0, 6.0])  # q0 with p1

    def test_slice_rows_values_and_bounds(self):
        x = T.tensor(np.arange(12.0).reshape(4, 3))
        assert np.array_equal(T.slice_rows(x, 1, 3).data, [[3.0, 4.0, 5.0], [6.0, 7.0, 8.0]])
        with pytest.raises(ShapeError):
            T.slice_rows(x, 2, 2)
        with pytest.raises(ShapeError):
            T.slice_rows(x, 0, 5)

    def test_concat_and_shape_ops(self):
        a = T.tensor(np.ones((2, 3)))
        b = T.tensor(np.zeros((1, 3)))
        assert T.concat([a, b], axis=0).data.shape == (3, 3)
        x = T.tensor(rng(9).normal(size=(2, 3, 4)))
        assert T.permute(x, (2, 0, 1)).data.shape == (4, 2, 3)
        assert T.reshape(x, (6, 4)).data.shape == (6, 4)
        assert T.flatten(x).data.shape == (2, 12)


class TestGradients:
    """Every primitive against the central-difference oracle."""

    def test_add(self):
        check_op(lambda t: T.mean_all(T.mul(T.add(t["a"], t["b"]), t["c"])),
                 {"a": rng(1).normal(size=(3, 4)),
                  "b": rng(2).normal(size=(3, 4)),
                  "c": rng(3).normal(size=(3, 4))})

    def test_sub_scale(self):
        check_op(lambda t: T.sum_all(T.scale(T.sub(t["a"], t["b"]), 1.7)),
                 {"a": rng(4).normal(size=(2, 5)), "b": rng(5).normal(size=(2, 5))})

    def test_mul(self):
        check_op(lambda t: T.sum_all(T.mul(t["a"], t["a"])),
                 {"a": rng(6).normal(size=(4, 3))})

    def test_bias_adds(self):
        check_op(lambda t: T.mean_all(T.add_bias(t["x"], t["b"])),
                 {"x": rng(7).normal(size=(3, 4)), "b": rng(8).normal(size=4)})
        check_op(lambda t: T.mean_all(T.mul(T.add_channel_bias(t["x"], t["b"]),
                                            T.add_channel_bias(t["x"], t["b"]))),
                 {"x": rng(9).normal(size=(2, 3, 4, 4)), "b": rng(10).normal(size=3)})

    def test_matmul_dense(self):
        check_op(lambda t: T.sum_all(T.matmul(t["a"], t["b"])),
                 {"a": rng(11).normal(size=(3, 4)), "b": rng(12).normal(size=(4, 2))})
        check_op(lambda t: T.mean_all(T.relu(T.dense(t["x"], t["w"], t["b"]))),
                 {"x": rng(13).normal(size=(5, 3)), "w": rng(14).normal(size=(3, 4)),
                  "b": rng(15).normal(size=4)})

    def test_bmm_linear_tokens(self):
        check_op(lambda t: T.sum_all(T.bmm(t["a"], t["b"])),
                 {"a": rng(16).normal(size=(2, 3, 4)), "b": rng(17).normal(size=(2, 4, 5))})
        check_op(lambda t: T.mean_all(T.linear_tokens(t["x"], t["w"])),
                 {"x": rng(18).normal(size=(2, 6, 3)), "w": rng(19).normal(size=(3, 3))})

    def test_relu(self):
        x = rng(20).normal(size=(4, 4))
        x[np.abs(x) < 1e-3] += 0.1  # keep clear of the kink
        check_op(lambda t: T.sum_all(T.relu(t["x"])), {"x": x})

    def test_conv2d(self):
        check_op(lambda t: T.mean_all(T.conv2d(t["x"], t["k"], stride=1, padding=1)),
                 {"x": rng(21).normal(size=(2, 2, 5, 5)), "k": rng(22).normal(size=(3, 2, 3, 3))})

    def test_conv2d_strided(self):
        check_op(lambda t: T.sum_all(T.conv2d(t["x"], t["k"], stride=2, padding=0)),
                 {"x": rng(23).normal(size=(1, 2, 7, 7)), "k": rng(24).normal(size=(2, 2, 3, 3))})

    def test_max_pool(self):
        x = rng(25).normal(size=(2, 2, 4, 4)) * 3.0
        check_op(lambda t: T.sum_all(T.mul(T.max_pool2d(t["x"]), T.max_pool2d(t["x"]))), {"x": x})

    def test_softmax(self):
        check_op(lambda t: T.sum_all(T.mul(T.softmax(t["x"]), t["w"])),
                 {"x": rng(26).normal(size=(3, 5)), "w": rng(27).normal(size=(3, 5))})

    def test_log_softmax(self):
        check_op(lambda t: T.sum_all(T.mul(T.log_softmax(t["x"]), t["w"])),
                 {"x": rng(28).normal(size=(3, 5)), "w": rng(29).normal(size=(3, 5))})

    def test_log_clamp(self):
        x = np.abs(rng(30).normal(size=(3, 4))) + 0.5
        check_op(lambda t: T.sum_all(T.log(T.clamp_min(t["x"], 1e-12))), {"x": x})

    def test_reductions_and_shapes(self):
        check_op(lambda t: T.mean_all(t["x"]), {"x": rng(31).normal(size=(3, 4))})
        check_op(lambda t: T.sum_all(T.reshape(T.permute(t["x"], (1, 0, 2)), (12, 2))),
                 {"x": rng(32).normal(size=(3, 4, 2))})
        check_op(lambda t: T.mean_all(T.mul(T.flatten(t["x"]), T.flatten(t["x"]))),
                 {"x": rng(33).normal(size=(2, 3, 2, 2))})

    def test_concat(self):
        check_op(
            lambda t: T.sum_all(T.mul(T.concat([t["a"], t["b"]], axis=1),
                                      T.concat([t["a"], t["b"]], axis=1))),
            {"a": rng(34).normal(size=(2, 3)), "b": rng(35).normal(size=(2, 2))})

    def test_gather_rows(self):
        idx = np.array([2, 0, 1])
        check_op(lambda t: T.mean_all(T.gather_rows(t["x"], idx)),
                 {"x": rng(36).normal(size=(3, 4))})

    def test_slice_rows(self):
        check_op(lambda t: T.sum_all(T.mul(T.slice_rows(t["x"], 1, 4),
                                           T.slice_rows(t["x"], 1, 4))),
                 {"x": rng(43).normal(size=(5, 3))})

    def test_class_mean(self):
        labels = np.array([0, 1, 0, 2, 1])
        check_op(lambda t: T.sum_all(T.mul(T.class_mean(t["e"], labels, 3),
                                           T.class_mean(t["e"], labels, 3))),
                 {"e": rng(37).normal(size=(5, 4))})

    def test_pairwise_sqdist(self):
        check_op(lambda t: T.mean_all(T.pairwise_sqdist(t["q"], t["p"])),
                 {"q": rng(38).normal(size=(4, 3)), "p": rng(39).normal(size=(2, 3))})

    def test_pair_concat(self):
        w = rng(40).normal(size=(6, 6))
        check_op(lambda t: T.sum_all(T.mul(T.pair_concat(t["q"], t["p"]), T.tensor(w))),
                 {"q": rng(41).normal(size=(2, 3)), "p": rng(42).normal(size=(3, 3))})


class TestTape:
    def test_shared_subexpression_sums_paths(self):
        # loss = x*x + 3x touches x through two paths; per-path hand oracle
        xv = 1.75
        x = T.tensor(xv, requires_grad=True)
        loss = T.add(T.mul(x, x), T.scale(x, 3.0))
        loss.backward()
        assert abs(x.grad - (2 * xv + 3.0)) < 1e-12

    def test_diamond_graph_paths(self):
        # y = x + x; loss = y * y  => dloss/dx = 2y * 2 = 4 * 2x = 8x
        xv = -0.6
        x = T.tensor(xv, requires_grad=True)
        y = T.add(x, x)
        T.mul(y, y).backward()
        assert abs(x.grad - 8 * xv) < 1e-12

    def test_repeated_backward_accumulates(self):
        x = T.tensor([1.0, 2.0], requires_grad=True)
        loss = T.sum_all(T.mul(x, x))
        loss.backward()
        first = x.grad.copy()
        loss.backward()
        assert np.array_equal(x.grad, 2 * first)

    def test_backward_rejects_non_scalar(self):
        x = T.tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeError):
            T.mul(x, x).backward()

    def test_no_grad_graph_is_pruned(self):
        x = T.tensor(np.ones((2, 2)))
        out = T.relu(T.add(x, x))
        assert out._parents == ()
        assert not out.requires_grad

    def test_detach_cuts_graph(self):
        x = T.tensor([2.0], requires_grad=True)
        y = T.mul(x, x).detach()
        z = T.mul(T.tensor([3.0], requires_grad=True), T.tensor(y.data))
        assert y._parents == ()
        T.sum_all(z).backward()
        assert x.grad is None

    def test_nan_output_raises_with_op_name(self):
        with pytest.raises(NumericError, match="log"):
            T.log(T.tensor([-1.0]))
        with np.errstate(over="ignore"):
            with pytest.raises(NumericError, match="mul"):
                T.mul(T.tensor([1e308]), T.tensor([1e308]))

    def test_nan_in_backward_names_primitive(self):
        x = T.tensor([1e-320], requires_grad=True)  # subnormal; 1/x overflows
        with np.errstate(over="ignore"):
            with pytest.raises(NumericError, match="log"):
                T.sum_all(T.log(x)).backward()

    def test_leaf_rejects_non_finite(self):
        with pytest.raises(NumericError):
            T.tensor([np.nan])
        with pytest.raises(NumericError):
            T.tensor([np.inf])


class TestParamSet:
    def test_add_and_lookup(self):
        ps = ParamSet()
        w = T.tensor(np.ones((2, 2)), requires_grad=True)
        ps.add("w", w)
        assert ps["w"] is w
        assert "w" in ps
        assert ps.names() == ["w"]

    def test_rejects_duplicates_and_non_grad(self):
        ps = ParamSet()
        ps.add("w", T.tensor([1.0], requires_grad=True))
        with pytest.raises(ValueError):
            ps.add("w", T.tensor([2.0], requires_grad=True))
        with pytest.raises(ValueError):
            ps.add("v", T.tensor([1.0]))

    def test_zero_grad(self):
        ps = ParamSet({"w": T.tensor([3.0], requires_grad=True)})
        T.sum_all(T.mul(ps["w"], ps["w"])).backward()
        assert ps["w"].grad is not None
        ps.zero_grad()
        assert ps["w"].grad is None

    def test_frozen_shares_data_but_not_graph(self):
        ps = ParamSet({"w": T.tensor([1.0, 2.0], requires_grad=True)})
        fz = ps.frozen()
        assert fz["w"].data is ps["w"].data
        assert not fz["w"].requires_grad
        # a graph through the frozen view reaches other leaves, not the live param
        x = T.tensor([3.0, 4.0], requires_grad=True)
        T.sum_all(T.mul(fz["w"], x)).backward()
        assert np.array_equal(x.grad, [1.0, 2.0])
        assert ps["w"].grad is None
        assert fz["w"].grad is None
        # updates to the live data are visible through the frozen view
        ps["w"].data[:] = [9.0, 9.0]
        assert np.array_equal(fz["w"].data, [9.0, 9.0])

    def test_state_dict_round_trip(self):
        ps = ParamSet({"w": T.tensor([[1.0, 2.0]], requires_grad=True),
                       "b": T.tensor([0.5], requires_grad=True)})
        state = ps.state_dict()
        ps["w"].data[:] = 0.0
        ps.load_state(state)
        assert np.array_equal(ps["w"].data, [[1.0, 2.0]])
        with pytest.raises(ValueError):
            ps.load_state({"w": state["w"]})
        with pytest.raises(ValueError):
            ps.load_state({"w": np.zeros((3, 3)), "b": state["b"]})


class TestNumericalGradientOracle:
    def test_oracle_on_closed_form(self):
        # f(x) = sum(x^3): grad 3x^2, independent of the engine entirely
        x = rng(50).normal(size=(3, 3))
        fd = numerical_gradient(lambda v: float((v**3).sum()), x)
        assert max_relative_error(3 * x**2, fd) < 1e-6

"""Unit tests for the reverse-mode autodiff core.

Analytic gradients are checked against central finite differences, and
each structured op against an independent brute-force oracle (triple
loop matmul, direct softmax formula, standalone bilinear interpolation).
"""

import numpy as np
import pytest

from dualplane import autodiff as ad
from dualplane.autodiff import Tensor


def _matmul_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Naive triple-loop matrix product."""
    n, k = a.shape
    k2, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def _softmax_oracle(x: np.ndarray) -> np.ndarray:
    """Direct exp / sum(exp) evaluation, row by row."""
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        e = np.exp(x[i])
        out[i] = e / e.sum()
    return out


def _bilinear_oracle(plane: np.ndarray, u: float, v: float) -> np.ndarray:
    """Standalone bilinear formula with clamping, one point at a time."""
    r = plane.shape[0]
    gu = (min(max(u, -1.0), 1.0) + 1.0) / 2.0 * (r - 1)
    gv = (min(max(v, -1.0), 1.0) + 1.0) / 2.0 * (r - 1)
    i0 = min(int(np.floor(gu)), r - 2)
    j0 = min(int(np.floor(gv)), r - 2)
    fu, fv = gu - i0, gv - j0
    return ((1 - fu) * (1 - fv) * plane[i0, j0]
            + (1 - fu) * fv * plane[i0, j0 + 1]
            + fu * (1 - fv) * plane[i0 + 1, j0]
            + fu * fv * plane[i0 + 1, j0 + 1])


class TestLinear:
    def test_identity_weight(self):
        out = ad.linear(Tensor([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0]])

    def test_zero_weight_passes_bias(self):
        out = ad.linear(Tensor([[3.0, 4.0]]), Tensor(np.zeros((2, 2))),
                        Tensor([5.0, 6.0]))
        np.testing.assert_array_equal(out.data, [[5.0, 6.0]])

    def test_matches_triple_loop_oracle(self, rng):
        x = rng.standard_normal((3, 4))
        w = rng.standard_normal((4, 2))
        b = rng.standard_normal(2)
        out = ad.linear(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, _matmul_oracle(x, w) + b,
                                   rtol=0, atol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ad.DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
            ad.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))

    def test_exact_linearity_without_bias(self, rng):
        x = rng.standard_normal((5, 3))
        w = Tensor(rng.standard_normal((3, 4)))
        alpha = 1.75  # exact binary fraction keeps the check tight
        lhs = ad.linear(Tensor(alpha * x), w).data
        rhs = alpha * ad.linear(Tensor(x), w).data
        np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


class TestSoftmaxRows:
    def test_symmetry(self):
        out = ad.softmax_rows(Tensor([[0.0, 0.0]]))
        np.testing.assert_allclose(out.data, [[0.5, 0.5]], atol=1e-15)

    def test_analytic_two_to_one(self):
        out = ad.softmax_rows(Tensor([[np.log(2.0), 0.0]]))
        np.testing.assert_allclose(out.data, [[2 / 3, 1 / 3]], atol=1e-12)

    def test_matches_direct_formula(self):
        x = np.array([[1.0, 2.0, 3.0]])
        out = ad.softmax_rows(Tensor(x))
        np.testing.assert_allclose(out.data, _softmax_oracle(x), rtol=0, atol=1e-15)

    def test_rows_sum_to_one(self, rng):
        x = rng.standard_normal((20, 7)) * 30.0
        out = ad.softmax_rows(Tensor(x)).data
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)

    def test_shift_invariance(self, rng):
        x = rng.standard_normal((5, 6))
        shifted = x + 123.456
        a = ad.softmax_rows(Tensor(x)).data
        b = ad.softmax_rows(Tensor(shifted)).data
        np.testing.assert_allclose(a, b, atol=1e-9)


class TestBilinearSample:
    def test_grid_node_recovers_texel(self, rng):
        plane = rng.standard_normal((5, 5, 3))
        # node (2, 3) in uv coordinates
        uv = np.array([[2 / 4 * 2 - 1, 3 / 4 * 2 - 1]])
        out = ad.bilinear_sample(Tensor(plane), uv)
        np.testing.assert_allclose(out.data[0], plane[2, 3], atol=1e-12)

    def test_cell_center_is_mean_of_corners(self, rng):
        plane = rng.standard_normal((2, 2, 4))
        out = ad.bilinear_sample(Tensor(plane), np.array([[0.0, 0.0]]))
        np.testing.assert_allclose(out.data[0], plane.reshape(4, 4).mean(axis=0),
                                   atol=1e-12)

    def test_matches_direct_formula(self, rng):
        plane = rng.standard_normal((4, 4, 3))
        uv = rng.uniform(-1.2, 1.2, size=(10, 2))  # includes out-of-range clamping
        out = ad.bilinear_sample(Tensor(plane), uv).data
        expected = np.stack([_bilinear_oracle(plane, u, v) for u, v in uv])
        np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)

    def test_gradient_touches_at_most_four_texels(self, rng):
        plane = Tensor(rng.standard_normal((6, 6, 2)), requires_grad=True)
        out = ad.bilinear_sample(plane, np.array([[0.1, -0.3]]))
        ad.reduce_sum(out).backward()
        touched = np.argwhere(np.abs(plane.grad).sum(axis=2) > 0)
        assert len(touched) <= 4

    def test_plane_gradient_matches_finite_differences(self, rng):
        plane = Tensor(rng.standard_normal((3, 3, 2)), requires_grad=True)
        uv = rng.uniform(-1, 1, size=(6, 2))
        target = rng.standard_normal((6, 2))

        def objective():
            return ad.reduce_sum(ad.mul(ad.bilinear_sample(plane, uv),
                                        ad.constant(target)))

        assert ad.grad_check(objective, {"plane": plane}) < 1e-8


class TestGradCheckHarness:
    def test_square_function(self):
        x = Tensor(3.0, requires_grad=True)
        err = ad.grad_check(lambda: ad.mul(x, x), {"x": x}, eps=1e-6)
        assert err < 1e-6
        ad.zero_grad([x])
        ad.mul(x, x).backward()
        np.testing.assert_allclose(x.grad, 6.0, atol=1e-12)

    def test_softmax_weighted_sum(self, rng):
        x = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
        v = rng.standard_normal((2, 3))

        def objective():
            return ad.reduce_sum(ad.mul(ad.softmax_rows(x), ad.constant(v)))

        assert ad.grad_check(objective, {"x": x}, eps=1e-5) < 1e-5

    def test_nonfinite_objective_is_an_error(self):
        x = Tensor(-1.0, requires_grad=True)
        with pytest.raises(FloatingPointError):
            ad.grad_check(lambda: ad.log(x), {"x": x})

    def test_nonpositive_eps_rejected(self):
        x = Tensor(1.0, requires_grad=True)
        with pytest.raises(ValueError):
            ad.grad_check(lambda: x, {"x": x}, eps=0.0)


# Elementwise and structural op gradients, swept over many random seeds.
_OP_CASES = {
    "add": lambda t, c: ad.add(t, c),
    "sub": lambda t, c: ad.sub(c, t),
    "mul": lambda t, c: ad.mul(t, c),
    "div": lambda t, c: ad.div(t, ad.add(ad.mul(c, c), 0.5)),
    "exp": lambda t, c: ad.exp(t),
    "sqrt": lambda t, c: ad.sqrt(ad.add(ad.mul(t, t), 0.1)),
    "abs": lambda t, c: ad.absolute(t),
    "leaky_relu": lambda t, c: ad.leaky_relu(t, 0.2),
    "softplus": lambda t, c: ad.softplus(t),
    "sigmoid": lambda t, c: ad.sigmoid(t),
    "softmax": lambda t, c: ad.mul(ad.softmax_rows(t), c),
    "cumsum_exclusive": lambda t, c: ad.mul(ad.cumsum_exclusive(t, axis=1), c),
    "scale_rows": lambda t, c: ad.scale_rows(c, ad.reduce_sum(t, axis=1)),
    "rowwise_dot": lambda t, c: ad.rowwise_dot(t, c),
    "tile+narrow": lambda t, c: ad.tile_last(ad.narrow(t, 1, 1, 1), 3),
    "permute+reshape": lambda t, c: ad.reshape(ad.permute(t, (1, 0)), (t.size,)),
    "concat": lambda t, c: ad.concat([t, c], axis=1),
    "mean": lambda t, c: ad.reduce_mean(ad.mul(t, t), axis=0),
}


class TestBackwardMatchesFiniteDifferences:
    @pytest.mark.parametrize("op_name", sorted(_OP_CASES))
    def test_op_over_seeds(self, op_name):
        """Property: backward of every op stays within 1e-4 of central FD."""
        op = _OP_CASES[op_name]
        seeds = range(6)
        for seed in seeds:
            r = np.random.default_rng([seed, hash(op_name) % 2**32])
            t = Tensor(r.standard_normal((4, 3)), requires_grad=True)
            c = Tensor(r.standard_normal((4, 3)))
            weight = r.standard_normal()

            def objective():
                return ad.mul(ad.reduce_sum(op(t, c)), weight)

            err = ad.grad_check(objective, {"t": t}, eps=1e-6)
            assert err < 1e-4, f"{op_name} seed {seed}: rel error {err}"

    def test_hundred_seed_sweep_core_ops(self):
        """100-seed sweep over a rotating subset of the op table."""
        names = sorted(_OP_CASES)
        for seed in range(100):
            op_name = names[seed % len(names)]
            op = _OP_CASES[op_name]
            r = np.random.default_rng([seed, 77])
            t = Tensor(r.standard_normal((3, 3)), requires_grad=True)
            c = Tensor(r.standard_normal((3, 3)))

            def objective():
                return ad.reduce_sum(op(t, c))

            err = ad.grad_check(objective, {"t": t}, eps=1e-6)
            assert err < 1e-4, f"{op_name} seed {seed}: rel error {err}"

    def test_matmul_batched(self, rng):
        a = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((2, 4, 2)), requires_grad=True)

        def objective():
            return ad.reduce_sum(ad.matmul(a, b))

        assert ad.grad_check(objective, {"a": a, "b": b}, eps=1e-6) < 1e-6

    def test_conv2d_strides(self, rng):
        for stride in (1, 2):
            x = Tensor(rng.standard_normal((6, 6, 2)), requires_grad=True)
            w = Tensor(rng.standard_normal((3, 3, 2, 3)) * 0.4, requires_grad=True)
            b = Tensor(np.zeros(3), requires_grad=True)
            tgt = rng.standard_normal((6 // stride, 6 // stride, 3))

            def objective():
                return ad.reduce_sum(ad.mul(ad.conv2d(x, w, b, stride=stride),
                                            ad.constant(tgt)))

            err = ad.grad_check(objective, {"x": x, "w": w, "b": b}, eps=1e-6)
            assert err < 1e-6, f"stride {stride}: {err}"

    def test_upsample_bilinear(self, rng):
        x = Tensor(rng.standard_normal((3, 3, 2)), requires_grad=True)
        tgt = rng.standard_normal((6, 6, 2))

        def objective():
            return ad.reduce_sum(ad.mul(ad.upsample_bilinear(x, 2),
                                        ad.constant(tgt)))

        assert ad.grad_check(objective, {"x": x}, eps=1e-6) < 1e-6


class TestGraph:
    def test_topological_order_parents_first(self, rng):
        x = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        y = ad.mul(x, x)
        z = ad.add(y, x)
        out = ad.reduce_sum(ad.mul(z, y))  # diamond: y feeds two consumers
        graph = ad.Graph.trace(out)
        position = {id(node): k for k, node in enumerate(graph.nodes)}
        for node in graph.nodes:
            for parent in node._parents:
                assert position[id(parent)] < position[id(node)]

    def test_nodes_visited_once(self, rng):
        x = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        y = ad.mul(x, x)
        out = ad.reduce_sum(ad.add(y, y))
        graph = ad.Graph.trace(out)
        assert len({id(n) for n in graph.nodes}) == len(graph.nodes)

    def test_backward_replay_bit_identical(self, rng):
        x = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 3)), requires_grad=True)

        def run():
            ad.zero_grad([x, w])
            out = ad.reduce_sum(ad.softmax_rows(ad.linear(x, w)))
            out.backward()
            return x.grad.copy(), w.grad.copy()

        gx1, gw1 = run()
        gx2, gw2 = run()
        assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)

    def test_grad_accumulates_until_cleared(self, rng):
        x = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        ad.reduce_sum(x).backward()
        first = x.grad.copy()
        ad.reduce_sum(x).backward()
        np.testing.assert_array_equal(x.grad, 2 * first)

    def test_backward_requires_scalar(self, rng):
        x = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        with pytest.raises(ValueError):
            ad.mul(x, 2.0).backward()


class TestDtypeAndChecks:
    def test_nan_check_raises(self):
        x = Tensor(-1.0)
        with pytest.raises(FloatingPointError):
            ad.log(x)  # nan under the autouse finite-check fixture

    def test_float32_mode_roundtrip(self):
        ad.set_default_dtype(np.float32)
        try:
            t = Tensor([1.0, 2.0])
            assert t.data.dtype == np.float32
            out = ad.softmax_rows(ad.reshape(t, (1, 2)))
            assert out.data.dtype == np.float32
        finally:
            ad.set_default_dtype(np.float64)

    def test_rejects_exotic_dtype(self):
        with pytest.raises(ValueError):
            ad.set_default_dtype(np.int32)

    def test_no_grad_suppresses_graph(self, rng):
        x = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        with ad.no_grad():
            out = ad.mul(x, x)
        assert out._parents == () and not out.requires_grad

import numpy as np
import pytest

from bxrl import autodiff as ad
from bxrl.autodiff import Adam, Parameter, Tensor
from bxrl.errors import NonScalarLoss, ShapeError
from bxrl.nn import MLP3, CNN3, causal_mask


def finite_difference(param: Parameter, build_loss, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient oracle, independent of the backward pass."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = build_loss().item()
        flat[i] = orig - eps
        down = build_loss().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def assert_grads_match(params, build_loss, tol: float = 1e-4):
    loss = build_loss()
    for p in params:
        p.zero_grad()
    ad.backward(loss)
    for p in params:
        numeric = finite_difference(p, build_loss)
        denom = np.maximum(np.maximum(np.abs(p.grad), np.abs(numeric)), 1e-6)
        rel = np.abs(p.grad - numeric) / denom
        assert rel.max() < tol, f"gradient mismatch {rel.max():.2e} for {p.name or p}"


class TestForwardSemantics:
    def test_softmax_symmetry(self):
        out = ad.softmax(Tensor([0.0, 0.0]), axis=-1)
        assert np.allclose(out.data, [0.5, 0.5])

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(4, 7)) * 10)
        out = ad.softmax(x, axis=-1)
        assert np.abs(out.data.sum(axis=-1) - 1.0).max() < 1e-12

    def test_stop_gradient_product_rule(self):
        # d/dx of sg(x) * x at x=3 treats sg(x) as the constant 3.
        x = Parameter(np.asarray(3.0))
        loss = ad.tsum(ad.mul(ad.stop_gradient(x), x))
        ad.backward(loss)
        assert x.grad == 3.0

    def test_mse_analytic(self):
        x = Parameter(np.asarray([2.0]))
        loss = ad.mse_loss(x, Tensor([0.0]))
        ad.backward(loss)
        assert float(loss.data) == 4.0
        assert x.grad[0] == 4.0  # d/dx x^2 = 2x

    def test_matmul_shape_error_mentions_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_add_shape_error(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))

    def test_embedding_lookup_gathers_rows(self):
        table = Parameter(np.arange(12.0).reshape(4, 3))
        out = ad.embedding_lookup(table, np.array([[3, 0], [1, 1]]))
        assert out.data.shape == (2, 2, 3)
        assert np.array_equal(out.data[0, 0], [9.0, 10.0, 11.0])

    def test_layer_norm_zero_mean_unit_scale(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(5, 8)) * 3 + 2)
        out = ad.layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)))
        assert np.abs(out.data.mean(axis=-1)).max() < 1e-12
        assert np.abs(out.data.std(axis=-1) - 1.0).max() < 1e-3


class TestMaskedAttention:
    def test_causal_mask_blocks_future_exactly(self):
        # Perturbation oracle: changing position-1 inputs must leave the
        # position-0 output bitwise unchanged.
        rng = np.random.default_rng(2)
        q = rng.normal(size=(1, 2, 2, 3))
        k = rng.normal(size=(1, 2, 2, 3))
        v = rng.normal(size=(1, 2, 2, 3))
        mask = causal_mask(2)
        base = ad.masked_attention(Tensor(q), Tensor(k), Tensor(v), mask).data
        for _ in range(100):
            k2, v2 = k.copy(), v.copy()
            k2[..., 1, :] += rng.normal(size=3) * 10
            v2[..., 1, :] += rng.normal(size=3) * 10
            out = ad.masked_attention(Tensor(q), Tensor(k2), Tensor(v2), mask).data
            assert np.array_equal(base[..., 0, :], out[..., 0, :])

    def test_mask_shape_validation(self):
        q = Tensor(np.zeros((1, 3, 4)))
        with pytest.raises(ShapeError):
            ad.masked_attention(q, q, q, np.tril(np.ones((2, 2), dtype=bool)))

    def test_fully_masked_row_rejected(self):
        q = Tensor(np.zeros((1, 2, 4)))
        bad = np.zeros((2, 2), dtype=bool)
        bad[1, 0] = True
        with pytest.raises(ShapeError):
            ad.masked_attention(q, q, q, bad)


class TestGradients:
    def test_elementwise_ops_match_finite_differences(self):
        rng = np.random.default_rng(3)
        shapes = [(2,), (3, 2), (2, 3, 2), (1, 4)]
        for shape in shapes:
            p = Parameter(rng.normal(size=shape), name=f"p{shape}")
            other = Tensor(rng.normal(size=shape))
            for op in (
                lambda: ad.tsum(ad.mul(p, other)),
                lambda: ad.tsum(ad.mul(ad.add(p, other), ad.sub(p, other))),
                lambda: ad.tsum(ad.gelu(p)),
                lambda: ad.mse_loss(ad.scale(p, 1.7), other),
                lambda: ad.tsum(ad.softmax(p, axis=-1) * other),
            ):
                assert_grads_match([p], op)

    def test_matmul_broadcast_grads(self):
        rng = np.random.default_rng(4)
        a = Parameter(rng.normal(size=(2, 3, 4)), name="a")
        b = Parameter(rng.normal(size=(4, 5)), name="b")
        t = Tensor(rng.normal(size=(2, 3, 5)))
        assert_grads_match([a, b], lambda: ad.mse_loss(ad.matmul(a, b), t))

    def test_layer_norm_grads(self):
        rng = np.random.default_rng(5)
        x = Parameter(rng.normal(size=(3, 6)), name="x")
        g = Parameter(rng.normal(size=6), name="g")
        b = Parameter(rng.normal(size=6), name="b")
        t = Tensor(rng.normal(size=(3, 6)))
        assert_grads_match([x, g, b], lambda: ad.mse_loss(ad.layer_norm(x, g, b), t))

    def test_cross_entropy_grads(self):
        rng = np.random.default_rng(6)
        logits = Parameter(rng.normal(size=(5, 4)), name="logits")
        labels = rng.integers(0, 4, size=5)
        assert_grads_match([logits], lambda: ad.cross_entropy_loss(logits, labels))

    def test_embedding_grads(self):
        rng = np.random.default_rng(7)
        table = Parameter(rng.normal(size=(6, 3)), name="table")
        idx = rng.integers(0, 6, size=(4,))
        t = Tensor(rng.normal(size=(4, 3)))
        assert_grads_match([table], lambda: ad.mse_loss(ad.embedding_lookup(table, idx), t))

    def test_conv2d_grads(self):
        rng = np.random.default_rng(8)
        x = Parameter(rng.normal(size=(2, 2, 4, 4)), name="x")
        w = Parameter(rng.normal(size=(3, 2, 3, 3)), name="w")
        b = Parameter(rng.normal(size=3), name="b")
        t = Tensor(rng.normal(size=(2, 3, 4, 4)))
        assert_grads_match([x, w, b], lambda: ad.mse_loss(ad.conv2d(x, w, b), t))

    def test_two_layer_mlp_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        mlp = MLP3(4, 5, 3, rng)
        x = Tensor(rng.normal(size=(6, 4)))
        target = Tensor(rng.normal(size=(6, 3)))
        assert_grads_match(mlp.parameters(), lambda: ad.mse_loss(mlp(x), target))

    def test_cnn_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        cnn = CNN3(1, (2, 3, 3), 2, rng)
        x = Tensor(rng.normal(size=(2, 1, 5, 5)))
        target = Tensor(rng.normal(size=(2, 2)))
        assert_grads_match(cnn.parameters(), lambda: ad.mse_loss(cnn(x), target))


class TestBackwardDriver:
    def test_non_scalar_loss_rejected(self):
        x = Parameter(np.zeros((2, 2)))
        with pytest.raises(NonScalarLoss):
            ad.backward(ad.add(x, x))

    def test_repeated_backward_accumulates(self):
        x = Parameter(np.asarray([1.0, 2.0]))
        loss = ad.tsum(ad.mul(x, x))
        ad.backward(loss)
        first = x.grad.copy()
        ad.backward(loss)
        assert np.array_equal(x.grad, 2 * first)

    def test_non_trainable_parameter_keeps_zero_grad(self):
        frozen = Parameter(np.asarray([2.0]), trainable=False)
        live = Parameter(np.asarray([3.0]))
        loss = ad.tsum(ad.mul(frozen, live))
        ad.backward(loss)
        assert np.array_equal(frozen.grad, [0.0])
        assert np.array_equal(live.grad, [2.0])

    def test_shared_subgraph_counted_once_per_path(self):
        x = Parameter(np.asarray(2.0))
        y = ad.mul(x, x)  # x^2
        loss = ad.add(y, y)  # 2 x^2 -> d/dx = 4x = 8
        ad.backward(loss)
        assert float(x.grad) == 8.0


class TestAdam:
    def test_descent_direction(self):
        w = Parameter(np.asarray(1.0))
        opt = Adam([w], lr=0.1)
        loss = ad.mul(w, w)
        opt.zero_grad()
        ad.backward(loss)
        opt.step()
        assert float(w.data) < 1.0

    def test_zero_gradient_leaves_params_fixed_and_decays_moments(self):
        w = Parameter(np.asarray(0.5))
        opt = Adam([w], lr=0.1)
        opt.zero_grad()
        opt.step()
        assert float(w.data) == 0.5
        # After a real step the moments decay geometrically under zero grads.
        opt.zero_grad()
        ad.backward(ad.mul(w, w))
        opt.step()
        m_after = abs(opt._m[0])
        opt.zero_grad()
        opt.step()
        assert abs(opt._m[0]) == pytest.approx(0.9 * m_after)

    def test_converges_on_convex_quadratic(self):
        w = Parameter(np.asarray(1.0))
        opt = Adam([w], lr=0.05)
        for _ in range(200):
            opt.zero_grad()
            ad.backward(ad.mul(w, w))
            opt.step()
        assert abs(float(w.data)) < 1e-2

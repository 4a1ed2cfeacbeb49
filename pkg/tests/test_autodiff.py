import numpy as np
import pytest

from atnverify.autodiff import LossSpec, grad_input, grad_params, loss_value, softmax, sparsemax_jacobian
from atnverify.network import ShapeError, forward, random_network, sparsemax

from conftest import zero_atn
from gradcheck import central_difference, input_gradient_error, param_gradient_error, rel_err


def test_jacobian_saturated_is_zero():
    np.testing.assert_allclose(sparsemax_jacobian([10.0, 0.0]), np.zeros((2, 2)))


def test_jacobian_uniform_pair():
    J = sparsemax_jacobian([0.0, 0.0])
    np.testing.assert_allclose(J, [[0.5, -0.5], [-0.5, 0.5]])
    fd = np.stack([(sparsemax(np.eye(2)[j] * 1e-6) - sparsemax(-np.eye(2)[j] * 1e-6)) / 2e-6 for j in range(2)], axis=1)
    np.testing.assert_allclose(J, fd, atol=1e-6)


def test_jacobian_rows_and_columns_sum_to_zero():
    rng = np.random.default_rng(0)
    for _ in range(100):
        J = sparsemax_jacobian(rng.normal(size=int(rng.integers(2, 8))))
        np.testing.assert_allclose(J.sum(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(J.sum(axis=1), 0.0, atol=1e-12)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(50):
        u = rng.normal(size=5)
        fd = np.stack([(sparsemax(u + 1e-7 * e) - sparsemax(u - 1e-7 * e)) / 2e-7 for e in np.eye(5)], axis=1)
        np.testing.assert_allclose(sparsemax_jacobian(u), fd, atol=1e-6)


def test_zero_weight_net_gradient_is_head_only():
    net = zero_atn(N=2, D=2, C=2)
    x = np.array([[0.3, 0.1], [0.2, 0.5]])
    loss = LossSpec("ce", label=0)
    g = grad_input(net, x, loss)
    logits, _ = forward(net, x)
    p = softmax(logits)
    # logits = mean(x) @ I: d loss / d x_t = (p - e_0) / N for every token
    np.testing.assert_allclose(g, np.tile((p - [1, 0]) / 2, (2, 1)), atol=1e-12)


def test_reg_gradient_zero_at_target(small_atn):
    x = np.random.default_rng(0).normal(size=(3, 4))
    _, reg = forward(small_atn, x)
    np.testing.assert_allclose(grad_input(small_atn, x, LossSpec("mse", target=reg)), 0.0, atol=1e-14)


def test_grad_input_shape_error(small_atn):
    with pytest.raises(ShapeError):
        grad_input(small_atn, np.zeros((2, 4)), LossSpec("ce", label=0))


def test_cls_bias_gradient_is_mean_residual(small_atn):
    rng = np.random.default_rng(3)
    X = rng.normal(size=(6, 3, 4))
    labels = rng.integers(0, 3, size=6)
    _, grads = grad_params(small_atn, X, LossSpec("ce", label=labels))
    probs = np.stack([softmax(forward(small_atn, x)[0]) for x in X])
    np.testing.assert_allclose(grads["cls_b"], (probs - np.eye(3)[labels]).mean(axis=0), atol=1e-12)


def test_zero_loss_zero_gradient():
    net = zero_atn(N=1, D=2, C=2)
    x = np.array([[0.2, 0.7]])
    _, grads = grad_params(net, x, LossSpec("mse", target=0.0))
    for g in grads.values():
        np.testing.assert_allclose(g, 0.0)


@pytest.mark.parametrize("seed", range(10))
def test_input_gradient_finite_differences(seed):
    assert input_gradient_error(seed) <= 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_param_gradient_finite_differences(seed):
    assert param_gradient_error(seed) <= 1e-4


def test_attention_chain_rule_two_tokens():
    # gradient through msa equals the product of per-op Jacobians assembled by hand
    net = random_network("atn", N=2, D=2, C=2, heads=1, d_head=1, d_mlp=1, layer_norm=False, seed=5)
    layer = net.layers[0]
    x = np.array([[0.3, -0.2], [0.1, 0.4]])
    w = layer.w_qkv[0]
    q, k, v = x @ w[:, :1], x @ w[:, 1:2], x @ w[:, 2:]
    g_out = np.random.default_rng(0).normal(size=(2, 2))  # cotangent of msa output

    def msa_fn(xx):
        qq, kk, vv = xx @ w[:, :1], xx @ w[:, 1:2], xx @ w[:, 2:]
        A = np.stack([sparsemax((qq[i] * kk[:, 0]) / 1.0) for i in range(2)])
        return float(np.sum((A @ vv @ layer.w_msa) * g_out))

    # hand assembly: d/dx of sum(g_out * A V Wmsa)
    A = np.stack([sparsemax(q[i] * k[:, 0]) for i in range(2)])
    dSA = g_out @ layer.w_msa.T  # (2, 1)
    dA = dSA @ v.T
    dV = A.T @ dSA
    dS = np.stack([sparsemax_jacobian(q[i] * k[:, 0]).T @ dA[i] for i in range(2)])
    dq = (dS * k[:, 0][None]).sum(axis=1, keepdims=True)
    dk = (dS * q).sum(axis=0)[:, None]
    dx = dq @ w[:, :1].T + dk @ w[:, 1:2].T + dV @ w[:, 2:].T
    fd = central_difference(msa_fn, x)
    assert rel_err(dx, fd) <= 1e-6

"""Forward/backward pairs for the dense building blocks (row-vector convention)."""

import numpy as np

_C = np.sqrt(2.0 / np.pi)
LN_EPS = 1e-5


def gelu(x):
    t = np.tanh(_C * (x + 0.044715 * x**3))
    return 0.5 * x * (1.0 + t), t


def gelu_grad(x, t):
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _C * (1.0 + 3 * 0.044715 * x * x)


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(p, dp, axis=-1):
    return p * (dp - (dp * p).sum(axis=axis, keepdims=True))


def layer_norm(x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * gamma + beta, (xhat, inv)


def layer_norm_backward(dy, gamma, cache):
    xhat, inv = cache
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    n = xhat.shape[-1]
    dx = inv / n * (
        n * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def mlp2(x, w1, b1, w2, b2):
    """Linear -> GELU -> Linear."""
    pre = x @ w1 + b1
    h, t = gelu(pre)
    return h @ w2 + b2, (x, pre, t, h)


def _outer_sum(a, b):
    return np.outer(a, b) if a.ndim == 1 else a.T @ b


def mlp2_backward(dy, w1, w2, cache):
    x, pre, t, h = cache
    dw2 = _outer_sum(h, dy)
    db2 = dy if dy.ndim == 1 else dy.sum(axis=0)
    dpre = (dy @ w2.T) * gelu_grad(pre, t)
    dw1 = _outer_sum(x, dpre)
    db1 = dpre if dpre.ndim == 1 else dpre.sum(axis=0)
    return dpre @ w1.T, dw1, db1, dw2, db2

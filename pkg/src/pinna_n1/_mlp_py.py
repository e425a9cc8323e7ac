"""Numpy MLP kernels; reference implementation and fallback for ``_mlp_ext``.

Parameters live in one flat float64 vector. For each layer ``l`` the
weight matrix ``(sizes[l], sizes[l+1])`` is stored row-major, followed by
its bias. Hidden layers use ``act`` (0 = relu, 1 = tanh); the output layer
is linear. The loss is the batch mean of squared errors.
"""

import numpy as np

RELU = 0
TANH = 1


def n_params(sizes):
    return int(sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1)))


def unpack(theta, sizes):
    layers = []
    off = 0
    for i in range(len(sizes) - 1):
        a, b = int(sizes[i]), int(sizes[i + 1])
        W = theta[off:off + a * b].reshape(a, b)
        off += a * b
        layers.append((W, theta[off:off + b]))
        off += b
    return layers


def _act(z, act):
    if act == RELU:
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _forward_cache(theta, sizes, X, act):
    layers = unpack(theta, sizes)
    acts = [X]
    pre = []
    a = X
    # overflow is the caller's to detect (as with the compiled kernel), not a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for i, (W, b) in enumerate(layers):
            z = a @ W + b
            pre.append(z)
            a = z if i == len(layers) - 1 else _act(z, act)
            acts.append(a)
    return layers, pre, acts


def forward(theta, sizes, X, act):
    _, _, acts = _forward_cache(theta, sizes, np.asarray(X, dtype=np.float64), act)
    return acts[-1][:, 0].copy()


def loss_grad(theta, sizes, X, y, act):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    layers, pre, acts = _forward_cache(theta, sizes, X, act)
    n = X.shape[0]
    r = acts[-1][:, 0] - y
    loss = float(np.mean(r * r))
    grad = np.empty_like(theta)
    grads = unpack(grad, sizes)
    delta = (2.0 / n) * r[:, None]
    for i in range(len(layers) - 1, -1, -1):
        gW, gb = grads[i]
        gW[...] = acts[i].T @ delta
        gb[...] = delta.sum(axis=0)
        if i > 0:
            da = delta @ layers[i][0].T
            if act == RELU:
                delta = da * (pre[i - 1] > 0.0)
            else:
                delta = da * (1.0 - acts[i] * acts[i])
    return loss, grad


def adam_epoch(theta, m, v, sizes, X, y, order, batch_size, lr, beta1, beta2, eps, step, act):
    """One pass over ``X[order]`` in mini-batches, updating ``theta``, ``m``, ``v`` in place.

    Returns the new step count and the sum of squared errors seen by the
    batches before each update.
    """
    sse = 0.0
    n = order.shape[0]
    for s in range(0, n, batch_size):
        idx = order[s:s + batch_size]
        loss, g = loss_grad(theta, sizes, X[idx], y[idx], act)
        sse += loss * idx.shape[0]
        step += 1
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        c1 = 1.0 - beta1 ** step
        c2 = 1.0 - beta2 ** step
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return step, sse

"""Forward/backward primitives on plain numpy arrays (NCHW layout)."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv3x3_forward(x, W, b):
    """'Same' 3x3 convolution (cross-correlation) with zero padding 1."""
    N, C, H, Wd = x.shape
    F = W.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # N, C, H, W, 3, 3
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * H * Wd, C * 9)
    out = cols @ W.reshape(F, -1).T + b
    return out.reshape(N, H, Wd, F).transpose(0, 3, 1, 2), cols


def conv3x3_backward(dout, cols, x_shape, W):
    N, C, H, Wd = x_shape
    F = W.shape[0]
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, F)
    dW = (d2.T @ cols).reshape(W.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ W.reshape(F, -1)).reshape(N, H, Wd, C, 3, 3)
    dxp = np.zeros((N, C, H + 2, Wd + 2))
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + H, j:j + Wd] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], dW, db


def maxpool2_forward(x):
    N, C, H, W = x.shape
    H2, W2 = H // 2, W // 2
    xc = x[:, :, : 2 * H2, : 2 * W2]
    blocks = xc.reshape(N, C, H2, 2, W2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H2, W2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool2_backward(dout, arg, x_shape):
    N, C, H, W = x_shape
    H2, W2 = dout.shape[2:]
    blocks = np.zeros((N, C, H2, W2, 4))
    np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
    dx = np.zeros(x_shape)
    dx[:, :, : 2 * H2, : 2 * W2] = (
        blocks.reshape(N, C, H2, W2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, 2 * H2, 2 * W2)
    )
    return dx


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, y):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    n = len(y)
    logp = z[np.arange(n), y] - logsum
    probs = np.exp(z - logsum[:, None])
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    return -logp.mean(), dlogits / n, probs


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_forward(x, W, U, b):
    """Run one LSTM direction over x (N, T, d); gate order i, f, o, g.

    Returns the final hidden state and the cache needed by the backward pass.
    """
    N, T, _ = x.shape
    H = U.shape[1]
    xw = x @ W.T + b  # N, T, 4H
    h = np.zeros((N, H))
    c = np.zeros((N, H))
    hs = np.empty((T + 1, N, H))
    cs = np.empty((T + 1, N, H))
    gates = np.empty((T, N, 4 * H))
    tcs = np.empty((T, N, H))
    hs[0], cs[0] = h, c
    for t in range(T):
        z = xw[:, t] + h @ U.T
        a = np.empty_like(z)
        a[:, : 3 * H] = sigmoid(z[:, : 3 * H])
        a[:, 3 * H:] = np.tanh(z[:, 3 * H:])
        i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates[t], tcs[t], hs[t + 1], cs[t + 1] = a, tc, h, c
    return h, (x, hs, cs, gates, tcs)


def lstm_backward(dh_final, cache, U):
    x, hs, cs, gates, tcs = cache
    T = gates.shape[0]
    H = U.shape[1]
    dz_all = np.empty_like(gates)
    dh = dh_final
    dc = np.zeros_like(dh)
    for t in range(T - 1, -1, -1):
        a = gates[t]
        i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        tc = tcs[t]
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = dz_all[t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * cs[t] * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H:] = dc * i * (1.0 - g * g)
        dh = dz @ U
        dc = dc * f
    G = dz_all.shape[2]
    dz_flat = dz_all.reshape(-1, G)  # rows ordered (t, n)
    dW = dz_flat.T @ x.transpose(1, 0, 2).reshape(-1, x.shape[2])
    dU = dz_flat.T @ hs[:-1].reshape(-1, H)
    db = dz_flat.sum(axis=0)
    return dW, dU, db

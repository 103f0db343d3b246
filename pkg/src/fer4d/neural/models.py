"""Small from-scratch classifiers: a ConvNet for dynamic images and a BiLSTM
for landmark feature sequences.

Both expose ``params`` (an ordered name -> array dict), ``forward`` returning
class probabilities, and ``loss_and_grads`` for training and gradient checks.
"""

from __future__ import annotations

import numpy as np

from fer4d.errors import ShapeMismatch
from fer4d.neural import layers

N_CLASSES = 6


class ConvNet:
    """[conv3x3 -> ReLU -> maxpool2] * len(filters) -> flatten -> FC -> softmax.

    With ``filters=()`` the model is a plain softmax regression.
    """

    kind = "convnet"

    def __init__(self, in_channels=1, size=32, filters=(8, 16), n_classes=N_CLASSES, seed=0):
        self.in_channels = int(in_channels)
        self.size = int(size)
        self.filters = tuple(int(f) for f in filters)
        self.n_classes = int(n_classes)
        self.seed = int(seed)
        rng = np.random.default_rng(seed)
        self.params = {}
        c, s = self.in_channels, self.size
        for i, f in enumerate(self.filters):
            fan_in = c * 9
            self.params[f"conv{i}.W"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), (f, c, 3, 3))
            self.params[f"conv{i}.b"] = np.zeros(f)
            c, s = f, s // 2
        flat = c * s * s
        if flat < 1:
            raise ShapeMismatch(f"input size {size} too small for {len(self.filters)} pooling stages")
        self.params["fc.W"] = rng.normal(0.0, np.sqrt(1.0 / flat), (self.n_classes, flat))
        self.params["fc.b"] = np.zeros(self.n_classes)

    def config(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "size": self.size,
            "filters": list(self.filters),
            "n_classes": self.n_classes,
            "seed": self.seed,
        }

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 3:
            X = X[None]
        want = (self.in_channels, self.size, self.size)
        if X.ndim != 4 or X.shape[1:] != want:
            raise ShapeMismatch(f"expected input (N, {want}), got {X.shape}")
        return X

    def _logits(self, X):
        caches = []
        a = X
        for i in range(len(self.filters)):
            z, cols = layers.conv3x3_forward(a, self.params[f"conv{i}.W"], self.params[f"conv{i}.b"])
            r = np.maximum(z, 0.0)
            p, arg = layers.maxpool2_forward(r)
            caches.append((a.shape, cols, z, r.shape, arg))
            a = p
        flat = a.reshape(len(a), -1)
        logits = flat @ self.params["fc.W"].T + self.params["fc.b"]
        return logits, (caches, a.shape, flat)

    def forward(self, X, training=False, rng=None):
        return layers.softmax(self._logits(self._check(X))[0])

    def encode(self, X) -> np.ndarray:
        """Flattened activations feeding the final FC layer, one row per input."""
        return self._logits(self._check(X))[1][2]

    def loss_and_grads(self, X, y, training=False, rng=None):
        X = self._check(X)
        logits, (caches, pshape, flat) = self._logits(X)
        loss, dlogits, _ = layers.softmax_xent(logits, np.asarray(y))
        grads = {"fc.W": dlogits.T @ flat, "fc.b": dlogits.sum(axis=0)}
        da = (dlogits @ self.params["fc.W"]).reshape(pshape)
        for i in range(len(self.filters) - 1, -1, -1):
            in_shape, cols, z, r_shape, arg = caches[i]
            dr = layers.maxpool2_backward(da, arg, r_shape)
            dz = dr * (z > 0)
            da, gW, gb = layers.conv3x3_backward(dz, cols, in_shape, self.params[f"conv{i}.W"])
            grads[f"conv{i}.W"], grads[f"conv{i}.b"] = gW, gb
        return loss, grads


class BiLSTM:
    """Bidirectional LSTM over (T, d) sequences; the final forward and final
    backward hidden states are concatenated, dropped out, and classified."""

    kind = "bilstm"

    def __init__(self, input_dim, hidden=64, dropout=0.5, n_classes=N_CLASSES, seed=0):
        self.input_dim = int(input_dim)
        self.hidden = int(hidden)
        self.dropout = float(dropout)
        self.n_classes = int(n_classes)
        self.seed = int(seed)
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        rng = np.random.default_rng(seed)
        d, H = self.input_dim, self.hidden
        self.params = {}
        for side in ("fw", "bw"):
            self.params[f"{side}.W"] = rng.normal(0.0, np.sqrt(1.0 / d), (4 * H, d))
            self.params[f"{side}.U"] = rng.normal(0.0, np.sqrt(1.0 / H), (4 * H, H))
            b = np.zeros(4 * H)
            b[H:2 * H] = 1.0  # forget-gate bias
            self.params[f"{side}.b"] = b
        self.params["fc.W"] = rng.normal(0.0, np.sqrt(1.0 / (2 * H)), (self.n_classes, 2 * H))
        self.params["fc.b"] = np.zeros(self.n_classes)

    def config(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": self.hidden,
            "dropout": self.dropout,
            "n_classes": self.n_classes,
            "seed": self.seed,
        }

    def _groups(self, X):
        """Split a batch into groups of equal length: list of (indices, (n, T, d))."""
        if isinstance(X, np.ndarray) and X.ndim == 3:
            seqs = list(X)
        elif isinstance(X, np.ndarray) and X.ndim == 2:
            seqs = [X]
        else:
            seqs = [np.atleast_2d(np.asarray(s, dtype=np.float64)) for s in X]
        by_len = {}
        for i, s in enumerate(seqs):
            if s.ndim != 2 or s.shape[1] != self.input_dim or len(s) < 1:
                raise ShapeMismatch(f"expected (T>=1, {self.input_dim}) sequence, got {s.shape}")
            by_len.setdefault(len(s), []).append(i)
        return len(seqs), [
            (np.array(idx), np.stack([seqs[i] for i in idx]).astype(np.float64))
            for _, idx in sorted(by_len.items())
        ]

    def final_states(self, X):
        """Concatenated [forward final, backward final] hidden states, (N, 2H)."""
        n, groups = self._groups(X)
        out = np.empty((n, 2 * self.hidden))
        for idx, x in groups:
            hf, _ = layers.lstm_forward(x, self.params["fw.W"], self.params["fw.U"], self.params["fw.b"])
            hb, _ = layers.lstm_forward(x[:, ::-1], self.params["bw.W"], self.params["bw.U"], self.params["bw.b"])
            out[idx] = np.concatenate([hf, hb], axis=1)
        return out

    def _mask(self, shape, training, rng):
        if not training or self.dropout == 0.0:
            return None
        if rng is None:
            raise ValueError("training-mode dropout needs a random generator")
        return (rng.random(shape) >= self.dropout) / (1.0 - self.dropout)

    def forward(self, X, training=False, rng=None):
        h = self.final_states(X)
        mask = self._mask(h.shape, training, rng)
        if mask is not None:
            h = h * mask
        return layers.softmax(h @ self.params["fc.W"].T + self.params["fc.b"])

    def loss_and_grads(self, X, y, training=False, rng=None):
        n, groups = self._groups(X)
        y = np.asarray(y)
        H = self.hidden
        hcat = np.empty((n, 2 * H))
        caches = []
        for idx, x in groups:
            hf, cf = layers.lstm_forward(x, self.params["fw.W"], self.params["fw.U"], self.params["fw.b"])
            hb, cb = layers.lstm_forward(x[:, ::-1], self.params["bw.W"], self.params["bw.U"], self.params["bw.b"])
            hcat[idx] = np.concatenate([hf, hb], axis=1)
            caches.append((idx, cf, cb))
        mask = self._mask(hcat.shape, training, rng)
        hd = hcat if mask is None else hcat * mask
        logits = hd @ self.params["fc.W"].T + self.params["fc.b"]
        loss, dlogits, _ = layers.softmax_xent(logits, y)
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        grads["fc.W"] = dlogits.T @ hd
        grads["fc.b"] = dlogits.sum(axis=0)
        dh = dlogits @ self.params["fc.W"]
        if mask is not None:
            dh = dh * mask
        for idx, cf, cb in caches:
            for side, cache, part in (("fw", cf, dh[idx, :H]), ("bw", cb, dh[idx, H:])):
                dW, dU, db = layers.lstm_backward(part, cache, self.params[f"{side}.U"])
                grads[f"{side}.W"] += dW
                grads[f"{side}.U"] += dU
                grads[f"{side}.b"] += db
        return loss, grads


def build_model(kind: str, config: dict):
    if kind == ConvNet.kind:
        return ConvNet(**config)
    if kind == BiLSTM.kind:
        return BiLSTM(**config)
    raise ValueError(f"unknown model kind {kind!r}")

"""Mini-batch gradient descent with weight decay, and finite-difference checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fer4d.errors import EmptyClass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    epochs: int = 50
    batch_size: int = 16
    weight_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")


@dataclass
class History:
    losses: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    best_epoch: int | None = None


def _take(X, idx):
    if isinstance(X, np.ndarray):
        return X[idx]
    return [X[i] for i in idx]


def accuracy(model, X, y) -> float:
    y = np.asarray(y)
    if len(y) == 0:
        return float("nan")
    return float(np.mean(model.forward(X).argmax(axis=1) == y))


def fit(model, X, y, cfg: TrainConfig, val=None, classes=None) -> History:
    """Train ``model`` in place; return per-epoch mean training loss.

    ``classes`` lists the labels that must each have a training example
    (default: all of the model's classes). When ``val`` = (X, y) is given,
    the parameters of the epoch with the best validation accuracy (ties:
    lower validation loss, then earlier epoch) are restored at the end.
    """
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    classes = range(model.n_classes) if classes is None else classes
    missing = [c for c in classes if not np.any(y == c)]
    if n == 0 or missing:
        raise EmptyClass(f"no training example for class(es) {missing}")
    rng = np.random.default_rng(cfg.seed)
    hist = History()
    best_key, best_params = None, None
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = model.loss_and_grads(_take(X, idx), y[idx], training=True, rng=rng)
            total += loss * len(idx)
            if cfg.lr == 0:
                continue
            for name, p in model.params.items():
                g = grads[name]
                if cfg.weight_decay and not name.endswith(".b"):
                    g = g + cfg.weight_decay * p
                p -= cfg.lr * g
        hist.losses.append(total / n)
        if val is not None and len(val[1]):
            vx, vy = val[0], np.asarray(val[1], dtype=np.int64)
            probs = model.forward(vx)
            acc = float(np.mean(probs.argmax(axis=1) == vy))
            vloss = float(-np.mean(np.log(np.maximum(probs[np.arange(len(vy)), vy], 1e-300))))
            hist.val_accuracy.append(acc)
            key = (acc, -vloss)
            if best_key is None or key > best_key:
                best_key = key
                best_params = {k: v.copy() for k, v in model.params.items()}
                hist.best_epoch = epoch
    if best_params is not None:
        for k, v in best_params.items():
            model.params[k][...] = v
    return hist


def convnet_train(model, images, labels, cfg: TrainConfig, val=None, classes=None):
    hist = fit(model, np.asarray(images, dtype=np.float64), labels, cfg, val, classes)
    return model, hist.losses


def bilstm_train(model, sequences, labels, cfg: TrainConfig, val=None, classes=None):
    hist = fit(model, sequences, labels, cfg, val, classes)
    return model, hist.losses


def grad_check(model, X, y, epsilon: float = 1e-5, n_params: int = 200, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks a random subset of ``n_params`` scalar parameters (all of them
    when the model is smaller). Dropout is off throughout.
    """
    _, grads = model.loss_and_grads(X, y, training=False)
    names = list(model.params)
    sizes = np.array([model.params[k].size for k in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    picks = np.arange(total) if total <= n_params else np.sort(rng.choice(total, n_params, replace=False))
    worst = 0.0
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[k]
        p = model.params[name].reshape(-1)
        j = flat - offsets[k]
        old = p[j]
        p[j] = old + epsilon
        lp, _ = model.loss_and_grads(X, y, training=False)
        p[j] = old - epsilon
        lm, _ = model.loss_and_grads(X, y, training=False)
        p[j] = old
        g_num = (lp - lm) / (2.0 * epsilon)
        g_an = grads[name].reshape(-1)[j]
        err = abs(g_an - g_num) / max(abs(g_an), abs(g_num), 1e-8)
        worst = max(worst, err)
    return worst

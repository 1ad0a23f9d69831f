"""Minimal backprop baseline: sigmoid MLP with a softmax output, trained by Adam."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError
from .layer import apply_activation

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BaselineConfig:
    widths: tuple = ()
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 128
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if min(self.lr, self.eps, self.batch_size) <= 0 or self.epochs < 0:
            raise ValueError("baseline hyperparameters must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam decay rates must be in (0, 1)")


class Adam:
    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class MLP:
    """Weights ``W_i`` (out x in) and biases ``b_i`` (out x 1), samples as columns."""

    weights: list
    biases: list
    losses: list = field(default_factory=list)

    @classmethod
    def init(cls, sizes, seed: int = 0) -> "MLP":
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            ws.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
            bs.append(np.zeros((fan_out, 1)))
        return cls(ws, bs)

    @property
    def params(self):
        return [*self.weights, *self.biases]

    def forward(self, x):
        acts = [x]
        a = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = apply_activation("sigmoid", w @ a + b)
            acts.append(a)
        logits = self.weights[-1] @ a + self.biases[-1]
        return acts, logits

    def predict_proba(self, x):
        _, logits = self.forward(np.asarray(x, dtype=np.float64))
        logits = logits - logits.max(axis=0, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=0, keepdims=True)

    def predict(self, x):
        return np.argmax(self.forward(np.asarray(x, dtype=np.float64))[1], axis=0)

    def loss_and_grads(self, x, labels):
        """Mean cross-entropy and gradients ordered like :attr:`params`."""
        labels = np.asarray(labels, dtype=np.int64)
        n = x.shape[1]
        acts, logits = self.forward(x)
        shifted = logits - logits.max(axis=0, keepdims=True)
        e = np.exp(shifted)
        tot = e.sum(axis=0, keepdims=True)
        loss = -float(np.mean(shifted[labels, np.arange(n)] - np.log(tot[0])))
        delta = e / tot
        delta[labels, np.arange(n)] -= 1.0
        delta /= n
        gw, gb = [None] * len(self.weights), [None] * len(self.biases)
        for i in range(len(self.weights) - 1, -1, -1):
            gw[i] = delta @ acts[i].T
            gb[i] = delta.sum(axis=1, keepdims=True)
            if i:
                a = acts[i]
                delta = (self.weights[i].T @ delta) * a * (1.0 - a)
        return loss, [*gw, *gb]


def baseline_bp_train(x, labels, classes: int, cfg: BaselineConfig):
    """Train the baseline MLP; returns ``(model, seconds)``.

    ``x`` is ``d x N``; the hidden widths come from ``cfg.widths``.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    sizes = [x.shape[0], *cfg.widths, classes]
    model = MLP.init(sizes, cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)
    opt = Adam(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    n = x.shape[1]
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = model.loss_and_grads(x[:, idx], labels[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"baseline loss became {loss} in epoch {epoch}")
            opt.step(model.params, grads)
            total += loss * idx.size
        model.losses.append(total / n)
        log.debug("baseline epoch %d loss %.5f", epoch, model.losses[-1])
    return model, time.perf_counter() - t0

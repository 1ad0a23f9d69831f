"""Supervised heads on top of the learnt features, plus last-width estimation.

Three heads are provided:

* ``shln``: output weights ``W = Z Y^T (Y Y^T + lambda I)^{-1}`` with
  ``lambda`` seeded by a data-driven estimate and refined on a holdout grid;
* ``softmax``: multinomial logistic regression fitted by gradient descent;
* ``cascade``: the ``shln`` outputs passed through a softmax, no extra fit.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import matcore
from .errors import DivergenceError, TrainingError

log = logging.getLogger(__name__)

LAMBDA_GRID = (0.1, 0.5, 1.0, 2.0, 10.0)
PRELIM_LAMBDA = 1e-6
# estimate_reg_param returns 0 for a perfect fit; ridge needs lambda > 0
MIN_LAMBDA = 1e-12
HEAD_KINDS = ("shln", "softmax", "cascade")


@dataclass(frozen=True)
class ReadoutHead:
    kind: str
    weights: np.ndarray
    lam: float
    classes: int

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ValueError(f"unknown head kind {self.kind!r}")
        if self.weights.shape[0] != self.classes:
            raise ValueError("weights must have one row per class")
        if self.kind != "softmax" and not self.lam > 0:
            raise ValueError("ridge heads need lambda > 0")

    @property
    def features(self) -> int:
        return self.weights.shape[1]

    def scores(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape[0] != self.features:
            raise ValueError(f"head expects {self.features} features, got {y.shape[0]}")
        if self.kind == "shln":
            return self.weights @ y
        return softmax_predict(self.weights, y)

    def predict(self, y) -> np.ndarray:
        return np.argmax(self.scores(y), axis=0)


def one_hot(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    z = np.zeros((k, labels.size))
    z[labels, np.arange(labels.size)] = 1.0
    return z


def accuracy(pred, labels) -> float:
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    return float(np.mean(pred == labels)) if labels.size else float("nan")


def estimate_reg_param(residual_sq_sum: float, weight_sq_sum: float, d_x: int, n: int) -> float:
    """Point estimate ``d^2 [1 + (d-1)^2] * residual / (n * ||w||^2)``."""
    if not weight_sq_sum > 0:
        raise ValueError("weight_sq_sum must be > 0")
    if n < 1:
        raise ValueError("n must be >= 1")
    if residual_sq_sum < 0:
        raise ValueError("residual_sq_sum must be >= 0")
    return d_x ** 2 * (1 + (d_x - 1) ** 2) * residual_sq_sum / (n * weight_sq_sum)


def fit_output_weights(y, z, lam: float) -> np.ndarray:
    """Ridge output weights ``Z Y^T (Y Y^T + lam I)^{-1}`` (``m x p``)."""
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if y.ndim != 2 or z.ndim != 2 or y.shape[1] != z.shape[1]:
        raise ValueError(f"Y {y.shape} and Z {z.shape} must share the sample axis")
    return matcore.ridge_apply(z, y, lam)


def holdout_split(labels, val_fraction: float, classes: int | None = None):
    """Deterministic stratified split: the last ``ceil(f * n_c)`` samples of each class validate."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must be in (0, 1)")
    labels = np.asarray(labels, dtype=np.int64)
    k = classes if classes is not None else int(labels.max()) + 1
    val = np.zeros(labels.size, dtype=bool)
    for c in range(k):
        idx = np.flatnonzero(labels == c)
        take = math.ceil(val_fraction * idx.size)
        if idx.size - take < 1:
            raise TrainingError(f"class {c} has no samples left in the training part of the split")
        val[idx[idx.size - take:]] = True
    return np.flatnonzero(~val), np.flatnonzero(val)


def search_lambda(
    y,
    z,
    labels,
    lambda_hat: float,
    val_fraction: float = 0.2,
    grid: Sequence[float] = LAMBDA_GRID,
    history: list | None = None,
) -> float:
    """Pick the grid multiple of ``lambda_hat`` with the best holdout accuracy.

    Ties go to the smaller lambda. Each evaluated point is appended to
    ``history`` as ``(lambda, accuracy)`` when given.
    """
    if not lambda_hat > 0:
        raise ValueError("lambda_hat must be > 0")
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    tr, va = holdout_split(labels, val_fraction, z.shape[0])
    best_lam, best_acc = None, -1.0
    for i, mult in enumerate(sorted(grid), 1):
        lam = mult * lambda_hat
        w = fit_output_weights(y[:, tr], z[:, tr], lam)
        acc = accuracy(np.argmax(w @ y[:, va], axis=0), labels[va])
        log.debug("lambda fit %d/%d: lambda=%.4g acc=%.4f", i, len(grid), lam, acc)
        if history is not None:
            history.append((lam, acc))
        if acc > best_acc:
            best_lam, best_acc = lam, acc
    return best_lam


@dataclass
class ShlnFit:
    head: ReadoutHead
    lambda_hat: float = float("nan")
    history: list = field(default_factory=list)


def fit_shln(y, labels, classes: int, lam: float | str = "auto", val_fraction: float = 0.2, kind: str = "shln"):
    """Fit a ridge head; ``lam="auto"`` estimates lambda then searches around it."""
    y = np.asarray(y, dtype=np.float64)
    z = one_hot(labels, classes)
    fit = ShlnFit(head=None)
    if lam == "auto":
        w0 = fit_output_weights(y, z, PRELIM_LAMBDA)
        resid = w0 @ y - z
        wsq = float(np.einsum("ij,ij->", w0, w0))
        if wsq == 0.0:
            raise TrainingError("preliminary readout weights are all zero")
        lam_hat = estimate_reg_param(float(np.einsum("ij,ij->", resid, resid)), wsq, y.shape[0], y.shape[1])
        fit.lambda_hat = max(lam_hat, MIN_LAMBDA)
        lam = search_lambda(y, z, labels, fit.lambda_hat, val_fraction, history=fit.history)
    lam = float(lam)
    fit.head = ReadoutHead(kind, fit_output_weights(y, z, lam), lam, classes)
    return fit


def softmax_predict(theta, x) -> np.ndarray:
    """Column-wise class probabilities for logits ``theta @ x``."""
    logits = np.asarray(theta, dtype=np.float64) @ np.asarray(x, dtype=np.float64)
    logits = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=0, keepdims=True)


def softmax_loss_grad(theta, x, labels):
    """Mean cross-entropy and its gradient ``-(1/N) (Z - P) X^T``."""
    theta = np.asarray(theta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = x.shape[1]
    logits = theta @ x
    top = logits.max(axis=0, keepdims=True)
    shifted = logits - top
    e = np.exp(shifted)
    tot = e.sum(axis=0, keepdims=True)
    log_p = shifted - np.log(tot)
    loss = -float(np.mean(log_p[labels, np.arange(n)]))
    p = e / tot
    p[labels, np.arange(n)] -= 1.0
    return loss, (p @ x.T) / n


@dataclass(frozen=True)
class SoftmaxSettings:
    step: float = 0.1
    epochs: int = 500
    # None = full batch; full batch halves the step whenever the loss rises
    batch_size: int | None = None
    seed: int = 0
    slack: float = 1e-9


def softmax_fit(x, labels, k: int, opt: SoftmaxSettings | None = None, losses: list | None = None) -> np.ndarray:
    """Gradient descent on the softmax cross-entropy from zero init; returns ``K x p``."""
    opt = opt or SoftmaxSettings()
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    if x.shape[1] < k:
        raise ValueError("need at least as many samples as classes")
    theta = np.zeros((k, x.shape[0]))
    step = opt.step
    if opt.batch_size is None:
        loss, grad = softmax_loss_grad(theta, x, labels)
        for epoch in range(opt.epochs):
            if losses is not None:
                losses.append(loss)
            while True:
                cand = theta - step * grad
                new_loss, new_grad = softmax_loss_grad(cand, x, labels)
                if not np.isfinite(new_loss):
                    raise DivergenceError(f"softmax loss became {new_loss} at epoch {epoch} with step {step:g}")
                if new_loss <= loss + opt.slack:
                    break
                step /= 2.0
                if step < 1e-12:
                    log.info("softmax step underflow at epoch %d; stopping", epoch)
                    return theta
            theta, loss, grad = cand, new_loss, new_grad
        if losses is not None:
            losses.append(loss)
        return theta
    rng = np.random.default_rng(opt.seed)
    n = x.shape[1]
    for epoch in range(opt.epochs):
        order = rng.permutation(n)
        for start in range(0, n, opt.batch_size):
            idx = order[start:start + opt.batch_size]
            loss, grad = softmax_loss_grad(theta, x[:, idx], labels[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"softmax loss became {loss} at epoch {epoch} with step {step:g}")
            theta -= step * grad
        if losses is not None:
            losses.append(softmax_loss_grad(theta, x, labels)[0])
    return theta


def fit_softmax_head(y, labels, classes: int, opt: SoftmaxSettings | None = None) -> ReadoutHead:
    theta = softmax_fit(y, labels, classes, opt)
    return ReadoutHead("softmax", theta, float("nan"), classes)


# --- last hidden width -------------------------------------------------------

BASIS_NAMES = ("1", "r", "N", "r^2", "N^2")


@dataclass(frozen=True)
class WidthRecord:
    r: int
    n: int
    p_star: int
    d: int | None = None
    name: str = ""

    def __post_init__(self):
        if self.r < 1 or self.n < 1 or self.p_star < 1:
            raise ValueError("r, n and p_star must be positive")


@dataclass(frozen=True)
class WidthRegression:
    theta: tuple
    alpha_fallback: float = 0.5
    residual: float = 0.0
    # multiplier applied to the sample count before evaluating the polynomial
    n_scale: float = 1.0

    def __post_init__(self):
        if len(self.theta) != 5 or not all(math.isfinite(t) for t in self.theta):
            raise ValueError("theta must be 5 finite coefficients")
        if not 0.0 <= self.alpha_fallback <= 1.0:
            raise ValueError("alpha_fallback must be in [0, 1]")

    def poly(self, r: float, n: float) -> int:
        n = n * self.n_scale
        t0, t1, t2, t3, t4 = self.theta
        return math.ceil(t0 + t1 * r + t2 * n + t3 * r * r + t4 * n * n)


def estimate_last_width(r: int, n: int, reg: WidthRegression, d: int) -> int:
    """Polynomial width if positive, else ``floor(r + alpha (d - r))``."""
    if r < 1 or n < 1 or d < 1:
        raise ValueError("r, n and d must be positive")
    p = reg.poly(r, n)
    if p > 0:
        return p
    return math.floor(r + reg.alpha_fallback * (d - r))


def _design(records, n_scale: float) -> np.ndarray:
    r = np.array([rec.r for rec in records], dtype=np.float64)
    n = np.array([rec.n for rec in records], dtype=np.float64) * n_scale
    return np.column_stack([np.ones_like(r), r, n, r * r, n * n])


def fit_width_regression(records: Sequence[WidthRecord], alpha_fallback: float = 0.5, n_scale: float = 1.0) -> WidthRegression:
    """Least-squares fit of ``p*`` on the basis ``[1, r, N, r^2, N^2]``."""
    if len(records) < 5:
        raise ValueError(f"need at least 5 width records, got {len(records)}")
    a = _design(records, n_scale)
    target = np.array([rec.p_star for rec in records], dtype=np.float64)
    scale = np.abs(a).max(axis=0)
    a_s = a / scale
    f = matcore.svd(a_s)
    if f.rank() < 5:
        kept, collinear = [], []
        for j in range(5):
            if matcore.svd(a_s[:, kept + [j]]).rank() == len(kept) + 1:
                kept.append(j)
            else:
                collinear.append(BASIS_NAMES[j])
        raise TrainingError(f"width regression design is rank deficient; collinear basis columns: {', '.join(collinear)}")
    theta = (matcore.pinv(a_s, factors=f) @ target) / scale
    resid = a @ theta - target
    return WidthRegression(tuple(float(t) for t in theta), alpha_fallback, float(resid @ resid), n_scale)


def leave_one_out(records: Sequence[WidthRecord], alpha_fallback: float = 0.5, n_scale: float = 1.0) -> list[dict]:
    """Refit without each record in turn and predict its width."""
    if len(records) < 6:
        raise ValueError("leave-one-out needs at least 6 records (5 coefficients per fit)")
    rows = []
    for i, rec in enumerate(records):
        reg = fit_width_regression([r for j, r in enumerate(records) if j != i], alpha_fallback, n_scale)
        p = reg.poly(rec.r, rec.n)
        fallback = p <= 0
        d = rec.d if rec.d is not None else rec.r
        rows.append({
            "name": rec.name or str(i),
            "r": rec.r,
            "n": rec.n,
            "p_star": rec.p_star,
            "predicted": p,
            "fallback": fallback,
            "width": estimate_last_width(rec.r, rec.n, reg, d),
            "theta": list(reg.theta),
        })
    return rows

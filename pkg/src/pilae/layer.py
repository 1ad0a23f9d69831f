"""Closed-form training of a single autoencoder.

Encoder = first ``p`` rows of the pseudoinverse of the input, decoder =
ridge least-squares reconstruction from the hidden features, optionally
followed by one tie-and-recompute pass (``W_e := W_d^T``).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import matcore
from .errors import TrainingError

# blend falls back to decay when the input is this close to full row rank
NEAR_FULL_RANK = 0.02
DEFAULT_LAMBDA1 = 1e-6


class Activation(str, enum.Enum):
    SIGMOID = "sigmoid"
    TANH = "tanh"
    STEP = "step"


def apply_activation(act: Activation | str, z) -> np.ndarray:
    act = Activation(act)
    z = np.asarray(z, dtype=np.float64)
    if act is Activation.SIGMOID:
        # exp(-z) overflows to inf for z < -709, which still gives 0
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(-z))
    if act is Activation.TANH:
        return np.tanh(z)
    return (z >= 0.5).astype(np.float64)


@dataclass(frozen=True)
class WidthRule:
    """Hidden-width rule: ``blend`` is ``r + alpha (d - r)``, ``decay`` is ``beta d``.

    ``fallback_beta`` is the decay factor used when a blend rule meets a
    near-full-rank input.
    """

    kind: str
    value: float
    fallback_beta: float = 0.9

    def __post_init__(self):
        if self.kind == "blend":
            if not 0.0 <= self.value <= 1.0:
                raise ValueError(f"blend alpha must be in [0, 1], got {self.value}")
        elif self.kind == "decay":
            if not 0.0 < self.value <= 1.0:
                raise ValueError(f"decay beta must be in (0, 1], got {self.value}")
        else:
            raise ValueError(f"unknown width rule {self.kind!r}")
        if not 0.0 < self.fallback_beta <= 1.0:
            raise ValueError("fallback_beta must be in (0, 1]")

    @classmethod
    def parse(cls, text: str) -> "WidthRule":
        """Parse ``"blend:0.5"`` or ``"decay:0.9"``."""
        kind, sep, value = text.partition(":")
        if not sep:
            raise ValueError(f"width rule must look like blend:ALPHA or decay:BETA, got {text!r}")
        try:
            number = float(value)
        except ValueError:
            raise ValueError(f"bad width rule value in {text!r}") from None
        return cls(kind.strip(), number)

    def __str__(self):
        return f"{self.kind}:{self.value:g}"


def select_width(rule: WidthRule, r: int, d: int) -> int:
    if d < 1:
        raise ValueError(f"input dimension must be >= 1, got {d}")
    if rule.kind == "blend":
        if not 1 <= r <= d:
            raise ValueError(f"rank must satisfy 1 <= r <= d, got r={r}, d={d}")
        p = math.floor(r + rule.value * (d - r))
    else:
        p = math.floor(rule.value * d)
    return max(1, p)


def effective_rule(rule: WidthRule, r: int, d: int) -> WidthRule:
    """Swap a blend rule for decay when ``d - r < 0.02 d``."""
    if rule.kind == "blend" and d - r < NEAR_FULL_RANK * d:
        return WidthRule("decay", rule.fallback_beta, rule.fallback_beta)
    return rule


@dataclass(frozen=True)
class LayerConfig:
    width_rule: WidthRule = field(default_factory=lambda: WidthRule("decay", 0.9))
    activation: Activation = Activation.SIGMOID
    lambda1: float = DEFAULT_LAMBDA1
    tie_weights: bool = True
    # append a constant-1 row to the layer input
    bias: bool = False
    keep_decoder: bool = False

    def __post_init__(self):
        object.__setattr__(self, "activation", Activation(self.activation))
        if not self.lambda1 > 0:
            raise ValueError(f"lambda1 must be > 0, got {self.lambda1}")

    def with_rule(self, rule: WidthRule) -> "LayerConfig":
        return replace(self, width_rule=rule)


@dataclass(frozen=True)
class AutoencoderLayer:
    encoder: np.ndarray
    activation: Activation
    width: int
    input_dim: int
    input_rank: int
    recon_error: float
    recon_error_pre_tie: float = float("nan")
    bias: bool = False
    rule: str = ""
    decoder: np.ndarray | None = None

    def encode(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.input_dim:
            raise ValueError(f"layer expects {self.input_dim} input rows, got {x.shape[0]}")
        if self.bias:
            x = _augment(x)
        return apply_activation(self.activation, self.encoder @ x)


def _augment(x: np.ndarray) -> np.ndarray:
    return np.vstack([x, np.ones((1, x.shape[1]))])


def reconstruction_error(x, w_d, h) -> float:
    """``(1/N) ||X - W_d H||_F^2``."""
    x = np.asarray(x, dtype=np.float64)
    w_d = np.asarray(w_d, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if w_d.shape[1] != h.shape[0] or x.shape != (w_d.shape[0], h.shape[1]):
        raise ValueError(
            f"shape mismatch: X {x.shape}, W_d {w_d.shape}, H {h.shape}"
        )
    resid = x - w_d @ h
    return float(np.einsum("ij,ij->", resid, resid) / x.shape[1])


def train_layer(x, cfg: LayerConfig, factors: matcore.SvdFactors | None = None):
    """Train one autoencoder on ``x`` (``d x N``, samples as columns).

    Returns ``(layer, H)`` where ``H`` is the ``p x N`` hidden feature matrix
    produced by the final encoder. ``factors`` may carry a precomputed SVD of
    the (bias-augmented) input.
    """
    x = matcore.as_matrix(x, "x")
    d, n = x.shape
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    xin = _augment(x) if cfg.bias else x
    f = factors if factors is not None else matcore.svd(xin)
    r = matcore.numeric_rank(f.sigma, *xin.shape)
    if r == 0:
        raise TrainingError("input matrix has rank 0; cannot build an encoder")

    rule = effective_rule(cfg.width_rule, min(r, d), d)
    p = select_width(rule, min(r, d), d)
    # the encoder is a row slice of the N x d pseudoinverse
    p = min(p, n)

    w_e = matcore.truncated_pinv(xin, p, factors=f)
    h = apply_activation(cfg.activation, w_e @ xin)
    w_d = matcore.ridge_apply(x, h, cfg.lambda1)
    err = reconstruction_error(x, w_d, h)
    err_pre = err
    if cfg.tie_weights:
        w_e = np.ascontiguousarray(w_d.T)
        if cfg.bias:
            # decoder reconstructs x only; bias column of the encoder is zero
            w_e = np.hstack([w_e, np.zeros((p, 1))])
        h = apply_activation(cfg.activation, w_e @ xin)
        err = reconstruction_error(x, w_d, h)
    if not np.isfinite(err):
        raise TrainingError("non-finite reconstruction error")

    layer = AutoencoderLayer(
        encoder=w_e,
        activation=cfg.activation,
        width=p,
        input_dim=d,
        input_rank=min(r, d),
        recon_error=err,
        recon_error_pre_tie=err_pre,
        bias=cfg.bias,
        rule=str(rule),
        decoder=w_d if cfg.keep_decoder else None,
    )
    return layer, h

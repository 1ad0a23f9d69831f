"""Greedy layer-wise growth of a stacked autoencoder feature extractor."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from . import matcore
from .layer import AutoencoderLayer, LayerConfig, _augment, effective_rule, select_width, train_layer

log = logging.getLogger(__name__)

STOP_EPSILON = "epsilon"
STOP_MAX_DEPTH = "max_depth"
STOP_MIN_WIDTH = "min_width"


@dataclass(frozen=True)
class StackConfig:
    layer: LayerConfig = field(default_factory=LayerConfig)
    epsilon: float = 1e-3
    max_depth: int = 8
    min_width: int = 8

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.min_width < 1:
            raise ValueError("min_width must be >= 1")


@dataclass(frozen=True)
class StackedNetwork:
    layers: tuple[AutoencoderLayer, ...]
    rank_ratios: tuple[float, ...] = ()
    stop_reason: str = ""
    distances: tuple[float, ...] = ()
    readout: Any = None
    # wall-clock per layer, including the SVD of its output; not serialised
    layer_seconds: tuple[float, ...] = ()

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def widths(self) -> list[int]:
        return [layer.width for layer in self.layers]

    def architecture(self, classes: int | None = None) -> str:
        dims = [self.input_dim] + self.widths if self.layers else []
        if classes is not None:
            dims.append(classes)
        return "-".join(str(v) for v in dims)

    def with_readout(self, head) -> "StackedNetwork":
        return replace(self, readout=head)


def grow_stack(x, cfg: StackConfig, return_features: bool = False):
    """Add autoencoders until the stop test fires.

    After each layer the rank/width ratio of its features and the identity
    distance of ``H^+ H`` are recorded. Growth stops when the distance drops
    below ``cfg.epsilon``, when ``cfg.max_depth`` is reached, or when the next
    layer would be narrower than ``cfg.min_width``. At least one layer is
    always trained.
    """
    x = matcore.as_matrix(x, "x")
    if x.shape[1] < 2:
        raise ValueError("need at least 2 samples")
    lcfg = cfg.layer
    feats = x
    t0 = time.perf_counter()
    factors = matcore.svd(_augment(x) if lcfg.bias else x)
    layers, ratios, dists, secs = [], [], [], []
    reason = STOP_MAX_DEPTH
    while True:
        layer, h = train_layer(feats, lcfg, factors=factors)
        layers.append(layer)
        hin = _augment(h) if lcfg.bias else h
        factors = matcore.svd(hin)
        r_h = min(matcore.numeric_rank(factors.sigma, *hin.shape), layer.width)
        ratios.append(r_h / layer.width)
        dist = matcore.identity_distance(h, lcfg.lambda1, sigma=None if lcfg.bias else factors.sigma)
        dists.append(dist)
        now = time.perf_counter()
        secs.append(now - t0)
        t0 = now
        log.info(
            "layer %d: %d -> %d (%s), rank ratio %.4f, identity distance %.3e, recon %.4g",
            len(layers), layer.input_dim, layer.width, layer.rule, ratios[-1], dist, layer.recon_error,
        )
        if dist < cfg.epsilon:
            reason = STOP_EPSILON
            break
        if len(layers) >= cfg.max_depth:
            reason = STOP_MAX_DEPTH
            break
        if r_h == 0:
            # next layer would fail on a rank-0 input
            reason = STOP_MIN_WIDTH
            break
        nxt = select_width(effective_rule(lcfg.width_rule, r_h, layer.width), r_h, layer.width)
        if nxt < cfg.min_width:
            reason = STOP_MIN_WIDTH
            break
        feats = h
    net = StackedNetwork(tuple(layers), tuple(ratios), reason, tuple(dists), layer_seconds=tuple(secs))
    log.info("stopped after %d layers (%s)", net.depth, reason)
    return (net, h) if return_features else net


def transform(net: StackedNetwork, x) -> np.ndarray:
    """Feed ``x`` through every encoder and activation in order."""
    if not net.layers:
        raise ValueError("network has no layers")
    y = np.asarray(x, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] != net.input_dim:
        raise ValueError(f"expected {net.input_dim} input rows, got shape {y.shape}")
    for layer in net.layers:
        y = layer.encode(y)
    return y


def export_weights(net: StackedNetwork) -> list[np.ndarray]:
    return [layer.encoder.copy() for layer in net.layers]


def reconstruct(net: StackedNetwork, y) -> np.ndarray:
    """Map last-layer features back to input space through retained decoders."""
    if any(layer.decoder is None for layer in net.layers):
        raise ValueError("network was grown without keep_decoder")
    y = np.asarray(y, dtype=np.float64)
    for layer in reversed(net.layers):
        y = layer.decoder @ y
    return y

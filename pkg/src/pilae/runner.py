"""End-to-end training, evaluation, benchmarking and sweeps."""
from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import replace

import numpy as np

from . import matcore
from .baseline import BaselineConfig, baseline_bp_train
from .data_io import Dataset
from .errors import DivergenceError
from .layer import LayerConfig, WidthRule, train_layer
from .readout import ReadoutHead, SoftmaxSettings, accuracy, fit_shln, fit_softmax_head
from .report import RunReport
from .stack import StackConfig, StackedNetwork, grow_stack, transform

log = logging.getLogger(__name__)


def dataset_hash(ds: Dataset) -> str:
    h = hashlib.blake2b(digest_size=8)
    h.update(np.ascontiguousarray(ds.x).tobytes())
    h.update(np.ascontiguousarray(ds.labels, dtype="<i8").tobytes())
    return h.hexdigest()


def confusion_matrix(labels, pred, k: int) -> np.ndarray:
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(pred)), 1)
    return cm


def fit_head(y, labels, classes: int, kind: str, lam="auto", softmax_opt: SoftmaxSettings | None = None):
    """Fit one head on features ``y``; returns ``(head, info)``."""
    info = {"lambda_hat": None, "lambda_grid": []}
    if kind == "softmax":
        return fit_softmax_head(y, labels, classes, softmax_opt), info
    fit = fit_shln(y, labels, classes, lam, kind=kind)
    if lam == "auto":
        info["lambda_hat"] = fit.lambda_hat
        info["lambda_grid"] = [list(p) for p in fit.history]
    return fit.head, info


def evaluate(net: StackedNetwork, ds: Dataset, head: ReadoutHead | None = None):
    head = head if head is not None else net.readout
    if head is None:
        raise ValueError("model has no readout head")
    if ds.d != net.input_dim:
        raise ValueError(f"model expects {net.input_dim} features, data has {ds.d}")
    pred = head.predict(transform(net, ds.x))
    return accuracy(pred, ds.labels), confusion_matrix(ds.labels, pred, max(head.classes, ds.classes))


def train_model(
    train: Dataset,
    cfg: StackConfig,
    head: str = "shln",
    lam="auto",
    softmax_opt: SoftmaxSettings | None = None,
    test: Dataset | None = None,
    config: dict | None = None,
):
    """Grow the stack, fit the head and build a report."""
    t0 = time.perf_counter()
    net, feats = grow_stack(train.x, cfg, return_features=True)
    t1 = time.perf_counter()
    hd, info = fit_head(feats, train.labels, train.classes, head, lam, softmax_opt)
    t2 = time.perf_counter()
    net = net.with_readout(hd)
    rep = RunReport(
        kind="train",
        dataset=train.name,
        architecture=[net.input_dim, *net.widths, train.classes],
        layer_seconds=list(net.layer_seconds),
        total_seconds=t2 - t0,
        head_seconds=t2 - t1,
        head=head,
        train_accuracy=accuracy(hd.predict(feats), train.labels),
        rank_ratios=list(net.rank_ratios),
        distances=list(net.distances),
        recon_errors=[layer.recon_error for layer in net.layers],
        stop_reason=net.stop_reason,
        lambda_hat=info["lambda_hat"],
        lambda_chosen=None if head == "softmax" else hd.lam,
        lambda_grid=info["lambda_grid"],
        split_hash=dataset_hash(train) + (":" + dataset_hash(test) if test is not None else ""),
        config=dict(config or {}),
        extra={"input_ranks": [layer.input_rank for layer in net.layers], "rules": [layer.rule for layer in net.layers]},
    )
    if test is not None:
        acc, cm = evaluate(net, test)
        rep.test_accuracy = acc
        rep.confusion = cm.tolist()
    return net, rep


def bench(
    train: Dataset,
    test: Dataset,
    cfg: StackConfig,
    heads=("shln", "softmax"),
    lam="auto",
    softmax_opt: SoftmaxSettings | None = None,
    baseline: BaselineConfig | None = None,
    scaling: bool = True,
    config: dict | None = None,
) -> list[RunReport]:
    """PILAE vs the Adam baseline on identical data and architecture."""
    split = dataset_hash(train) + ":" + dataset_hash(test)
    reports = []

    t0 = time.perf_counter()
    net, feats = grow_stack(train.x, cfg, return_features=True)
    stack_secs = time.perf_counter() - t0
    test_feats = transform(net, test.x)
    head_secs, accs = {}, {}
    for kind in heads:
        t1 = time.perf_counter()
        hd, info = fit_head(feats, train.labels, train.classes, kind, lam, softmax_opt)
        head_secs[kind] = time.perf_counter() - t1
        accs[kind] = (accuracy(hd.predict(feats), train.labels), accuracy(hd.predict(test_feats), test.labels))
        reports.append(RunReport(
            kind="bench-pilae",
            dataset=train.name,
            architecture=[net.input_dim, *net.widths, train.classes],
            layer_seconds=list(net.layer_seconds),
            total_seconds=stack_secs + head_secs[kind],
            head_seconds=head_secs[kind],
            head=kind,
            train_accuracy=accs[kind][0],
            test_accuracy=accs[kind][1],
            rank_ratios=list(net.rank_ratios),
            stop_reason=net.stop_reason,
            lambda_hat=info["lambda_hat"],
            lambda_chosen=None if kind == "softmax" else hd.lam,
            split_hash=split,
            config=dict(config or {}),
            extra={"stack_seconds": stack_secs},
        ))
    pilae_total = stack_secs + sum(head_secs.values())
    for rep in reports:
        rep.extra["pilae_total_seconds"] = pilae_total

    if baseline is not None:
        bcfg = replace(baseline, widths=tuple(net.widths))
        rep = RunReport(
            kind="bench-baseline",
            dataset=train.name,
            architecture=[net.input_dim, *net.widths, train.classes],
            head="mlp-softmax",
            split_hash=split,
            config={"lr": bcfg.lr, "beta1": bcfg.beta1, "beta2": bcfg.beta2, "eps": bcfg.eps,
                    "batch_size": bcfg.batch_size, "epochs": bcfg.epochs, "seed": bcfg.seed},
        )
        try:
            model, secs = baseline_bp_train(train.x, train.labels, train.classes, bcfg)
        except DivergenceError as exc:
            rep.extra["error"] = str(exc)
        else:
            rep.total_seconds = secs
            rep.train_accuracy = accuracy(model.predict(train.x), train.labels)
            rep.test_accuracy = accuracy(model.predict(test.x), test.labels)
            rep.extra["epoch_losses"] = list(model.losses)
            rep.extra["pilae_total_seconds"] = pilae_total
            rep.extra["speedup"] = secs / pilae_total if pilae_total > 0 else None
            # same readout heads on the backprop network's last hidden layer
            if bcfg.widths:
                tr_feats = model.forward(train.x)[0][-1]
                te_feats = model.forward(test.x)[0][-1]
                for kind in heads:
                    hd, _ = fit_head(tr_feats, train.labels, train.classes, kind, lam, softmax_opt)
                    rep.extra[f"{kind}_head_test_accuracy"] = accuracy(hd.predict(te_feats), test.labels)
        reports.append(rep)

    if scaling:
        reports.append(scaling_probe(train.x, cfg, name=train.name))
    return reports


def scaling_probe(x, cfg: StackConfig, sizes=None, name: str = "") -> RunReport:
    """Time stack growth on the first N, N/2, N/4 samples (or ``sizes``)."""
    n = x.shape[1]
    sizes = sorted(sizes or [n // 4, n // 2, n])
    secs = []
    for m in sizes:
        t0 = time.perf_counter()
        grow_stack(x[:, :m], cfg)
        secs.append(time.perf_counter() - t0)
    ratios = [secs[i + 1] / secs[i] for i in range(len(secs) - 1)]
    logs = np.log(np.asarray(secs))
    logn = np.log(np.asarray(sizes, dtype=np.float64))
    exponent = float(np.polyfit(logn, logs, 1)[0]) if len(sizes) > 1 else None
    return RunReport(
        kind="scaling",
        dataset=name,
        extra={"n": list(sizes), "seconds": secs, "ratios": ratios, "exponent": exponent, "d": int(x.shape[0])},
    )


def sweep(x, param: str, values, base: LayerConfig | None = None) -> list[dict]:
    """Reconstruction error of one layer for each alpha (blend) or beta (decay)."""
    base = base or LayerConfig()
    kind = {"alpha": "blend", "beta": "decay"}[param]
    x = matcore.as_matrix(x, "x")
    xin = np.vstack([x, np.ones((1, x.shape[1]))]) if base.bias else x
    f = matcore.svd(xin)
    rows = []
    for v in values:
        cfg = base.with_rule(WidthRule(kind, float(v)))
        layer, _ = train_layer(x, cfg, factors=f)
        rows.append({
            param: float(v),
            "width": layer.width,
            "rule": layer.rule,
            "recon_error": layer.recon_error,
            "recon_error_pre_tie": layer.recon_error_pre_tie,
        })
    return rows

"""Command-line front end: ``pilae train|eval|bench|fit-width|sweep``.

Machine-readable JSON lines go to stdout (and to ``--report`` if given);
human-readable tables and logs go to stderr.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import data_io
from .baseline import BaselineConfig
from .errors import PilaeError
from .layer import LayerConfig, WidthRule
from .readout import SoftmaxSettings, fit_width_regression, leave_one_out
from .report import RunReport, format_table, summary, write_jsonl
from .runner import bench, dataset_hash, evaluate, sweep, train_model
from .stack import StackConfig

log = logging.getLogger("pilae")

SWEEP_DEFAULTS = {"alpha": "0,0.25,0.5,0.75,1", "beta": "0.5,0.6,0.7,0.8,0.9"}


class UsageError(ValueError):
    pass


# --- argument parsing --------------------------------------------------------

def _lambda(text: str):
    if text == "auto":
        return text
    val = float(text)
    if not val > 0:
        raise argparse.ArgumentTypeError("lambda must be 'auto' or a positive number")
    return val


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file merged under command-line flags")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1)")
    p.add_argument("--report", help="also write JSON lines here")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data-format", choices=["idx", "csv"], default="idx")
    # required, but checked after the config file is merged
    p.add_argument("--data", help="IDX directory or CSV file (required)")
    p.add_argument("--test-data", help="IDX directory or CSV file for evaluation")
    p.add_argument("--split", choices=["train", "test"], help="which IDX split --data holds")
    p.add_argument("--label-column", default="-1", help="CSV label column index or name")
    p.add_argument("--no-header", action="store_true", help="CSV has no header row")
    p.add_argument("--limit", type=int, help="use only the first N samples of --data")
    p.add_argument("--test-limit", type=int, help="use only the first N test samples")


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--width-rule", default="decay:0.9", help="blend:ALPHA or decay:BETA")
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--max-depth", type=int, default=8)
    p.add_argument("--min-width", type=int, default=8)
    p.add_argument("--lambda1", type=float, default=1e-6, help="decoder ridge parameter")
    p.add_argument("--activation", choices=["sigmoid", "tanh", "step"], default="sigmoid")
    p.add_argument("--no-tie", action="store_true", help="keep the pseudoinverse encoder")
    p.add_argument("--bias", action="store_true", help="append a constant row to each layer input")
    p.add_argument("--lambda", dest="lam", type=_lambda, default="auto", help="readout ridge: auto or a value")
    p.add_argument("--softmax-step", type=float, default=0.1)
    p.add_argument("--softmax-epochs", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pilae", description="Pseudoinverse-learned stacked autoencoders.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="grow a network, fit a head and save it")
    _add_common(p)
    _add_data(p)
    _add_model(p)
    p.add_argument("--head", choices=["shln", "softmax", "cascade"], default="shln")
    p.add_argument("--out", default="model.pilae", help="model file to write")

    p = sub.add_parser("eval", help="evaluate a saved model")
    _add_common(p)
    p.add_argument("model", help="model file")
    _add_data(p)

    p = sub.add_parser("bench", help="compare against a backprop+Adam baseline")
    _add_common(p)
    _add_data(p)
    _add_model(p)
    p.add_argument("--heads", default="shln,softmax", help="comma-separated readout heads")
    p.add_argument("--baseline-epochs", type=int, default=20)
    p.add_argument("--no-baseline", action="store_true")
    p.add_argument("--no-scaling", action="store_true")
    p.add_argument("--holdout", type=float, default=0.2, help="test fraction when no --test-data")

    p = sub.add_parser("fit-width", help="fit the last-hidden-width regression")
    _add_common(p)
    p.add_argument("records", help="CSV with columns r,n,p_star[,d,name]")
    p.add_argument("--alpha", type=float, default=0.5, help="fallback blend factor")
    p.add_argument("--n-scale", type=float, default=1.0, help="multiplier applied to N")

    p = sub.add_parser("sweep", help="reconstruction error over alpha or beta")
    _add_common(p)
    _add_data(p)
    p.add_argument("--param", choices=["alpha", "beta"], default="alpha")
    p.add_argument("--values", help="comma-separated values")
    p.add_argument("--lambda1", type=float, default=1e-6)
    p.add_argument("--activation", choices=["sigmoid", "tanh", "step"], default="sigmoid")
    p.add_argument("--no-tie", action="store_true")
    p.add_argument("--bias", action="store_true")
    return parser


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for num, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{num}: expected key=value")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _apply_config(sub: argparse.ArgumentParser, values: dict) -> None:
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        act = actions.get(key)
        if act is None or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r}")
        if act.nargs == 0:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise UsageError(f"config key {key!r} expects a boolean")
            defaults[key] = low in ("true", "1", "yes")
        else:
            try:
                val = act.type(raw) if act.type else raw
            except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
            if act.choices is not None and val not in act.choices:
                raise UsageError(f"config key {key!r} must be one of {list(act.choices)}")
            defaults[key] = val
    sub.set_defaults(**defaults)


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sub = parser._subparsers._group_actions[0].choices[args.command]
        try:
            _apply_config(sub, read_config(args.config))
        except (OSError, UsageError) as exc:
            parser.error(str(exc))
        args = parser.parse_args(argv)
    if hasattr(args, "data") and not args.data:
        parser.error(f"{args.command}: --data is required")
    return parser, args


# --- configuration -----------------------------------------------------------

def stack_config(args) -> StackConfig:
    layer = LayerConfig(
        width_rule=WidthRule.parse(args.width_rule),
        activation=args.activation,
        lambda1=args.lambda1,
        tie_weights=not args.no_tie,
        bias=args.bias,
    )
    return StackConfig(layer=layer, epsilon=args.epsilon, max_depth=args.max_depth, min_width=args.min_width)


def softmax_settings(args) -> SoftmaxSettings:
    if not args.softmax_step > 0 or args.softmax_epochs < 0:
        raise UsageError("--softmax-step must be > 0 and --softmax-epochs >= 0")
    return SoftmaxSettings(step=args.softmax_step, epochs=args.softmax_epochs, seed=args.seed)


def config_echo(args) -> dict:
    skip = {"config", "report", "verbose", "command"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _label_column(text: str):
    try:
        return int(text)
    except ValueError:
        return text


def _head(ds, limit):
    if limit is None:
        return ds
    if limit < 1:
        raise UsageError("limits must be >= 1")
    return ds.subset(np.arange(min(limit, ds.n)))


def load_data(args, default_split: str = "train"):
    """Return ``(train, test_or_None)`` according to the data flags."""
    if args.data_format == "csv":
        hdr = not args.no_header
        col = _label_column(args.label_column)
        train = data_io.load_csv(args.data, col, hdr, name=Path(args.data).stem)
        test = None
        if args.test_data:
            test = data_io.load_csv(args.test_data, col, hdr, reference=train, name=Path(args.test_data).stem)
    else:
        split = args.split or default_split
        train = data_io.load_idx_dir(args.data, split)
        test = data_io.load_idx_dir(args.test_data, "test") if args.test_data else None
        if test is None and split == "train":
            try:
                test = data_io.load_idx_dir(args.data, "test")
            except FileNotFoundError:
                test = None
    train = _head(train, args.limit)
    if test is not None:
        test = _head(test, args.test_limit)
    return train, test


def emit(reports, args) -> None:
    for rep in reports:
        print(rep.to_json())
    if args.report:
        write_jsonl(args.report, reports)


# --- commands ----------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = stack_config(args)
    sm = softmax_settings(args)
    train, test = load_data(args)
    net, rep = train_model(train, cfg, args.head, args.lam, sm, test=test, config=config_echo(args))
    data_io.save_model(net, net.readout, args.out)
    log.info("architecture %s", net.architecture(train.classes))
    print(f"architecture {net.architecture(train.classes)}", file=sys.stderr)
    print(summary(rep), file=sys.stderr)
    emit([rep], args)
    return 0


def cmd_eval(args) -> int:
    net, head = data_io.load_model(args.model)
    if head is None:
        raise PilaeError(f"{args.model} has no readout head")
    ds, _ = load_data(args, default_split="test")
    if ds.d != net.input_dim:
        raise PilaeError(f"model expects {net.input_dim} features but the data has {ds.d}")
    acc, cm = evaluate(net, ds)
    rep = RunReport(
        kind="eval",
        dataset=ds.name,
        architecture=[net.input_dim, *net.widths, head.classes],
        head=head.kind,
        test_accuracy=acc,
        rank_ratios=list(net.rank_ratios),
        stop_reason=net.stop_reason,
        lambda_chosen=None if head.kind == "softmax" else head.lam,
        split_hash=dataset_hash(ds),
        confusion=cm.tolist(),
        config={"model": str(args.model)},
    )
    print(summary(rep), file=sys.stderr)
    emit([rep], args)
    return 0


def cmd_bench(args) -> int:
    cfg = stack_config(args)
    sm = softmax_settings(args)
    heads = [h.strip() for h in args.heads.split(",") if h.strip()]
    bad = set(heads) - {"shln", "softmax", "cascade"}
    if bad or not heads:
        raise UsageError(f"unknown heads: {sorted(bad)}")
    if not 0 < args.holdout < 1:
        raise UsageError("--holdout must be in (0, 1)")
    base = None if args.no_baseline else BaselineConfig(epochs=args.baseline_epochs, seed=args.seed)
    train, test = load_data(args)
    if test is None:
        perm = np.random.default_rng(args.seed).permutation(train.n)
        cut = train.n - max(1, int(round(args.holdout * train.n)))
        train, test = train.subset(np.sort(perm[:cut])), train.subset(np.sort(perm[cut:]))
    reports = bench(train, test, cfg, heads, args.lam, sm, base, scaling=not args.no_scaling, config=config_echo(args))
    rows = []
    for rep in reports:
        if rep.kind == "scaling":
            continue
        name = "pilae-" + rep.head if rep.kind == "bench-pilae" else "baseline"
        rows.append({
            "method": name,
            "seconds": rep.total_seconds,
            "train_acc": rep.train_accuracy,
            "test_acc": rep.test_accuracy,
            "error": rep.extra.get("error"),
        })
    print(format_table(rows, ["method", "seconds", "train_acc", "test_acc", "error"]), file=sys.stderr)
    for rep in reports:
        if rep.kind == "scaling":
            ex = rep.extra
            print(f"scaling: N={ex['n']} seconds={[round(s, 3) for s in ex['seconds']]} "
                  f"ratios={[round(r, 3) for r in ex['ratios']]} exponent={ex['exponent']:.3f}", file=sys.stderr)
    emit(reports, args)
    return 0


def cmd_fit_width(args) -> int:
    records = data_io.load_width_records(args.records)
    if len(records) < 5:
        raise UsageError(f"fit-width needs at least 5 records, {args.records} has {len(records)}")
    reg = fit_width_regression(records, args.alpha, args.n_scale)
    rows = leave_one_out(records, args.alpha, args.n_scale) if len(records) >= 6 else []
    rep = RunReport(
        kind="fit-width",
        dataset=Path(args.records).stem,
        config={"alpha_fallback": args.alpha, "n_scale": args.n_scale},
        extra={"theta": list(reg.theta), "residual": reg.residual, "leave_one_out": rows},
    )
    print("theta " + " ".join(f"{t:.6g}" for t in reg.theta), file=sys.stderr)
    if rows:
        table = [{**r, "fallback": "fallback" if r["fallback"] else ""} for r in rows]
        print(format_table(table, ["name", "r", "n", "p_star", "predicted", "width", "fallback"]), file=sys.stderr)
    else:
        print("leave-one-out skipped: needs at least 6 records", file=sys.stderr)
    emit([rep], args)
    return 0


def cmd_sweep(args) -> int:
    text = args.values or SWEEP_DEFAULTS[args.param]
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad --values {text!r}") from None
    kind = "blend" if args.param == "alpha" else "decay"
    for v in values:
        WidthRule(kind, v)
    base = LayerConfig(activation=args.activation, lambda1=args.lambda1, tie_weights=not args.no_tie, bias=args.bias)
    ds, _ = load_data(args)
    rows = sweep(ds.x, args.param, values, base)
    rep = RunReport(kind="sweep", dataset=ds.name, config=config_echo(args), extra={"param": args.param, "rows": rows})
    print(format_table(rows, [args.param, "width", "rule", "recon_error", "recon_error_pre_tie"]), file=sys.stderr)
    emit([rep], args)
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "bench": cmd_bench, "fit-width": cmd_fit_width, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser, args = parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.error(str(exc))
    except (PilaeError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # bad configuration values surface as ValueError from the config dataclasses
        print(f"pilae {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

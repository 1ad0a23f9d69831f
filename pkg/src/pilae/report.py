"""Run reports: JSON lines for machines, a small aligned table for people."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

# fields that legitimately differ between otherwise identical runs
TIMING_FIELDS = ("layer_seconds", "total_seconds", "head_seconds")
# extra keys derived from wall-clock times (besides any "*seconds*" key)
TIMING_EXTRA = ("speedup", "ratios", "exponent")


@dataclass
class RunReport:
    kind: str
    dataset: str = ""
    architecture: list = field(default_factory=list)
    layer_seconds: list = field(default_factory=list)
    total_seconds: Optional[float] = None
    head_seconds: Optional[float] = None
    head: str = ""
    train_accuracy: Optional[float] = None
    test_accuracy: Optional[float] = None
    rank_ratios: list = field(default_factory=list)
    distances: list = field(default_factory=list)
    recon_errors: list = field(default_factory=list)
    stop_reason: str = ""
    lambda_hat: Optional[float] = None
    lambda_chosen: Optional[float] = None
    lambda_grid: list = field(default_factory=list)
    split_hash: str = ""
    confusion: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("total_seconds", "head_seconds"):
            val = getattr(self, name)
            if val is not None and val < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("train_accuracy", "test_accuracy"):
            val = getattr(self, name)
            if val is not None and not 0.0 <= val <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    def to_json(self) -> str:
        return json.dumps(_clean(asdict(self)), sort_keys=True, allow_nan=False)

    @classmethod
    def from_json(cls, line: str) -> "RunReport":
        data = json.loads(line)
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    def without_timing(self) -> dict:
        data = asdict(self)
        for name in TIMING_FIELDS:
            data.pop(name, None)
        data["extra"] = {k: v for k, v in data["extra"].items() if "seconds" not in k and k not in TIMING_EXTRA}
        return data


def _clean(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) or math.isinf(obj) else obj
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item"):
        return _clean(obj.item())
    return obj


def write_jsonl(path, reports) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rep in reports:
            fh.write(rep.to_json() + "\n")


def read_jsonl(path) -> list[RunReport]:
    with open(path, encoding="utf-8") as fh:
        return [RunReport.from_json(line) for line in fh if line.strip()]


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}" if abs(v) >= 1e-3 or v == 0 else f"{v:.3e}"
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def format_table(rows: list[dict], columns: list[str]) -> str:
    cells = [[_fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c) for i, c in enumerate(columns)]
    line = "  ".join(c.ljust(w) for c, w in zip(columns, widths))
    out = [line, "  ".join("-" * w for w in widths)]
    out += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(out)


def summary(rep: RunReport) -> str:
    keys = [
        "kind", "dataset", "architecture", "head", "train_accuracy", "test_accuracy",
        "total_seconds", "stop_reason", "rank_ratios", "lambda_hat", "lambda_chosen",
    ]
    data = asdict(rep)
    width = max(len(k) for k in keys)
    lines = []
    for k in keys:
        v = data[k]
        if v in (None, "", []):
            continue
        if k == "architecture":
            v = "-".join(str(x) for x in v)
        lines.append(f"{k.ljust(width)}  {_fmt(v)}")
    return "\n".join(lines)

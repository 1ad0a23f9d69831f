"""Dataset ingestion, splitting and model serialisation.

Model file layout (all integers and floats little-endian)::

    magic      8 bytes  b"PILAEv01"
    payload    see below
    checksum   u64      first 8 bytes of blake2b(payload) read as u64

    payload:
      u32 layer count
      per layer:
        u32 rows, u32 cols, u8 activation (0 sigmoid, 1 tanh, 2 step),
        u8 flags (bit 0 bias row, bit 1 decoder block follows),
        u32 input rank, f64 rank ratio, f64 reconstruction error,
        f64 * rows*cols encoder entries (row-major)
        [f64 * cols'*rows decoder entries when flag bit 1 is set]
      u8 readout kind (0 none, 1 shln, 2 softmax, 3 cascade)
      when kind != 0: u32 rows, u32 cols, f64 lambda, f64 * rows*cols entries
      u32 length of the stop-reason string, then its UTF-8 bytes
"""
from __future__ import annotations

import csv
import gzip
import hashlib
import io
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ChecksumError,
    CountMismatchError,
    IdxFormatError,
    ModelFormatError,
    ParseError,
    ShapeChainError,
    TruncatedFileError,
    VersionError,
)
from .layer import Activation, AutoencoderLayer
from .readout import ReadoutHead
from .stack import StackedNetwork

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MAGIC = b"PILAEv01"
_MAGIC_PREFIX = b"PILAEv"
DATA_DIR_ENV = "PILAE_DATA_DIR"

_ACTIVATIONS = [Activation.SIGMOID, Activation.TANH, Activation.STEP]
_HEADS = [None, "shln", "softmax", "cascade"]


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    labels: np.ndarray
    classes: int
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.x.ndim != 2 or self.x.shape[1] != self.labels.size:
            raise ValueError("x must be d x N with one label per column")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ValueError("labels out of range")

    @property
    def d(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1]

    def subset(self, idx, name: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[:, idx], self.labels[idx], self.classes, name or self.name, dict(self.meta))


def resolve_path(path) -> Path:
    """Return ``path`` as given if it exists, else relative to ``$PILAE_DATA_DIR``."""
    p = Path(path).expanduser()
    if p.exists() or p.is_absolute():
        return p
    root = os.environ.get(DATA_DIR_ENV)
    if root:
        alt = Path(root) / p
        if alt.exists():
            return alt
    return p


def _read_bytes(path) -> bytes:
    with open(resolve_path(path), "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise TruncatedFileError(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def _parse_idx(raw: bytes, magic: int, path) -> np.ndarray:
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file too short for an IDX header")
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise IdxFormatError(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise TruncatedFileError(f"{path}: header truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    size = int(np.prod(dims))
    body = len(raw) - head
    if body < size:
        raise TruncatedFileError(f"{path}: expected {size} bytes of data, found {body}")
    if body > size:
        raise IdxFormatError(f"{path}: {body - size} trailing bytes after payload")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=head).reshape(dims)


def load_idx(images_path, labels_path, name: str = "") -> Dataset:
    """Read an IDX image/label pair (optionally gzipped); pixels scaled by 1/255."""
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, images_path)
    labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    n = images.shape[0]
    x = images.reshape(n, -1).T.astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    classes = int(y.max()) + 1 if n else 0
    meta = {"source": str(images_path), "scaling": "pixel/255", "format": "idx"}
    return Dataset(np.ascontiguousarray(x), y, classes, name or Path(images_path).name, meta)


def write_idx_images(path, images) -> None:
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_IMAGES_MAGIC))
        fh.write(struct.pack(">3I", *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_LABELS_MAGIC))
        fh.write(struct.pack(">I", labels.size))
        fh.write(labels.tobytes())


_IDX_NAMES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_idx_pair(directory, split: str) -> tuple[Path, Path]:
    """Locate the standard MNIST-style file names in ``directory``."""
    root = resolve_path(directory)
    found = []
    for stem in _IDX_NAMES[split]:
        for cand in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
            if (root / cand).exists():
                found.append(root / cand)
                break
        else:
            raise FileNotFoundError(f"no {stem}[.gz] in {root}")
    return found[0], found[1]


def load_idx_dir(directory, split: str = "train") -> Dataset:
    images, labels = find_idx_pair(directory, split)
    return load_idx(images, labels, name=f"{Path(directory).name}-{split}")


def load_csv(path, label_column=-1, has_header: bool = True, reference: Dataset | None = None, name: str = "") -> Dataset:
    """Read a numeric CSV with one label column; features are z-scored.

    ``label_column`` is an index (negative allowed) or a header name. Pass
    ``reference`` to reuse another dataset's label vocabulary and
    normalisation statistics (e.g. for a test file).
    """
    p = resolve_path(path)
    with open(p, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    start = 1 if has_header else 0
    if has_header:
        if not rows:
            raise ParseError(f"{path}: empty file")
        header = rows[0]
    rows = [(i + 1, row) for i, row in enumerate(rows) if i >= start and any(c.strip() for c in row)]
    if not rows:
        raise ParseError(f"{path}: no data rows")
    width = len(rows[0][1])
    if isinstance(label_column, str):
        if not has_header or label_column not in header:
            raise ParseError(f"{path}: no column named {label_column!r}")
        col = header.index(label_column)
    else:
        col = label_column if label_column >= 0 else width + label_column
        if not 0 <= col < width:
            raise ParseError(f"{path}: label column {label_column} out of range for {width} columns")

    vocab = list(reference.meta["vocabulary"]) if reference is not None else []
    index = {v: i for i, v in enumerate(vocab)}
    feats = np.empty((len(rows), width - 1))
    labels = np.empty(len(rows), dtype=np.int64)
    for k, (line, row) in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"{path}:{line}: expected {width} fields, found {len(row)}")
        lab = row[col].strip()
        if lab not in index:
            if reference is not None:
                raise ParseError(f"{path}:{line}: label {lab!r} not in training vocabulary")
            index[lab] = len(vocab)
            vocab.append(lab)
        labels[k] = index[lab]
        cells = row[:col] + row[col + 1:]
        try:
            vals = [float(c) for c in cells]
        except ValueError:
            bad = next(c for c in cells if not _is_float(c))
            raise ParseError(f"{path}:{line}: non-numeric feature {bad!r}") from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError(f"{path}:{line}: non-finite feature value")
        feats[k] = vals

    if reference is not None:
        mean = np.asarray(reference.meta["mean"])
        std = np.asarray(reference.meta["std"])
        if mean.size != feats.shape[1]:
            raise ParseError(f"{path}: {feats.shape[1]} features, reference has {mean.size}")
    else:
        mean = feats.mean(axis=0)
        std = feats.std(axis=0)
        # constant columns map to zero
        std = np.where(std > 0, std, 1.0)
    x = ((feats - mean) / std).T
    meta = {
        "source": str(path),
        "format": "csv",
        "scaling": "zscore",
        "vocabulary": vocab,
        "mean": mean.tolist(),
        "std": std.tolist(),
    }
    return Dataset(np.ascontiguousarray(x), labels, len(vocab), name or Path(path).stem, meta)


def _is_float(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def kfold_split(n_or_dataset, k: int, seed: int = 0):
    """Seeded shuffled partition into ``k`` folds; returns ``[(train, test), ...]``."""
    n = n_or_dataset.n if isinstance(n_or_dataset, Dataset) else int(n_or_dataset)
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of samples {n}")
    perm = np.random.default_rng(seed).permutation(n)
    folds = [np.sort(f) for f in np.array_split(perm, k)]
    out = []
    for i, test in enumerate(folds):
        train = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        out.append((train, test))
    return out


def split_hash(idx) -> str:
    return hashlib.sha256(np.asarray(idx, dtype="<i8").tobytes()).hexdigest()[:16]


# --- width records -----------------------------------------------------------

def load_width_records(path):
    """Read a ``r,n,p_star`` CSV (optional ``d`` and ``name`` columns)."""
    from .readout import WidthRecord

    p = resolve_path(path)
    with open(p, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = [f.strip() for f in (reader.fieldnames or [])]
        missing = {"r", "n", "p_star"} - set(fields)
        if missing:
            raise ParseError(f"{path}: missing columns {sorted(missing)}")
        out = []
        for line, row in enumerate(reader, start=2):
            row = {k.strip(): (v or "").strip() for k, v in row.items() if k}
            try:
                out.append(WidthRecord(
                    r=int(row["r"]),
                    n=int(row["n"]),
                    p_star=int(row["p_star"]),
                    d=int(row["d"]) if row.get("d") else None,
                    name=row.get("name", ""),
                ))
            except ValueError as exc:
                raise ParseError(f"{path}:{line}: {exc}") from None
    return out


def write_width_records(path, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "r", "n", "p_star", "d"])
        for rec in records:
            w.writerow([rec.name, rec.r, rec.n, rec.p_star, "" if rec.d is None else rec.d])


# --- model files -------------------------------------------------------------

def _pack_matrix(buf: io.BytesIO, a: np.ndarray) -> None:
    buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def encode_model(net: StackedNetwork, head: ReadoutHead | None = None) -> bytes:
    head = head if head is not None else net.readout
    buf = io.BytesIO()
    buf.write(struct.pack("<I", net.depth))
    for i, layer in enumerate(net.layers):
        rows, cols = layer.encoder.shape
        flags = (1 if layer.bias else 0) | (2 if layer.decoder is not None else 0)
        ratio = net.rank_ratios[i] if i < len(net.rank_ratios) else float("nan")
        buf.write(struct.pack(
            "<IIBBIdd", rows, cols, _ACTIVATIONS.index(layer.activation), flags,
            layer.input_rank, ratio, layer.recon_error,
        ))
        _pack_matrix(buf, layer.encoder)
        if layer.decoder is not None:
            _pack_matrix(buf, layer.decoder)
    if head is None:
        buf.write(struct.pack("<B", 0))
    else:
        buf.write(struct.pack("<BIId", _HEADS.index(head.kind), *head.weights.shape, head.lam))
        _pack_matrix(buf, head.weights)
    reason = net.stop_reason.encode("utf-8")
    buf.write(struct.pack("<I", len(reason)) + reason)
    payload = buf.getvalue()
    return MAGIC + payload + struct.pack("<Q", _checksum(payload))


def _checksum(payload: bytes) -> int:
    return struct.unpack("<Q", hashlib.blake2b(payload, digest_size=8).digest())[0]


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise ModelFormatError("model payload truncated")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def matrix(self, rows: int, cols: int) -> np.ndarray:
        size = 8 * rows * cols
        if self.pos + size > len(self.data):
            raise ModelFormatError("model payload truncated")
        a = np.frombuffer(self.data, dtype="<f8", count=rows * cols, offset=self.pos)
        self.pos += size
        return a.reshape(rows, cols).astype(np.float64)


def decode_model(blob: bytes):
    if len(blob) < len(MAGIC) + 8:
        raise ModelFormatError("file too short to be a model")
    magic = blob[:8]
    if magic != MAGIC:
        if magic.startswith(_MAGIC_PREFIX):
            raise VersionError(f"unsupported model version {magic[6:].decode('ascii', 'replace')!r}")
        raise ModelFormatError("not a model file (bad magic)")
    payload = blob[8:-8]
    (stored,) = struct.unpack("<Q", blob[-8:])
    if stored != _checksum(payload):
        raise ChecksumError("model checksum mismatch")
    rd = _Reader(payload)
    (count,) = rd.take("<I")
    if count == 0:
        raise ShapeChainError("model has no layers")
    layers, ratios = [], []
    prev = None
    for i in range(count):
        rows, cols, act, flags, rank, ratio, err = rd.take("<IIBBIdd")
        bias = bool(flags & 1)
        d = cols - 1 if bias else cols
        if rows == 0 or d <= 0:
            raise ShapeChainError(f"layer {i} has empty shape {rows}x{cols}")
        if prev is not None and d != prev:
            raise ShapeChainError(f"layer {i} expects {d} inputs but previous layer emits {prev}")
        if act >= len(_ACTIVATIONS):
            raise ModelFormatError(f"unknown activation tag {act}")
        enc = rd.matrix(rows, cols)
        dec = rd.matrix(d, rows) if flags & 2 else None
        layers.append(AutoencoderLayer(
            encoder=enc, activation=_ACTIVATIONS[act], width=rows, input_dim=d,
            input_rank=rank, recon_error=err, bias=bias, decoder=dec,
        ))
        ratios.append(ratio)
        prev = rows
    (kind,) = rd.take("<B")
    head = None
    if kind:
        if kind >= len(_HEADS):
            raise ModelFormatError(f"unknown readout kind {kind}")
        rows, cols, lam = rd.take("<IId")
        if cols != prev:
            raise ShapeChainError(f"readout expects {cols} features but the stack emits {prev}")
        try:
            head = ReadoutHead(_HEADS[kind], rd.matrix(rows, cols), lam, rows)
        except ValueError as exc:
            raise ModelFormatError(f"invalid readout block: {exc}") from None
    (nreason,) = rd.take("<I")
    if rd.pos + nreason != len(payload):
        raise ModelFormatError("unexpected bytes after model payload")
    try:
        reason = payload[rd.pos:rd.pos + nreason].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ModelFormatError(f"stop reason is not UTF-8: {exc}") from None
    net = StackedNetwork(tuple(layers), tuple(ratios), reason, readout=head)
    return net, head


def save_model(net: StackedNetwork, head: ReadoutHead | None, path) -> None:
    data = encode_model(net, head)
    with open(path, "wb") as fh:
        fh.write(data)


def load_model(path):
    with open(path, "rb") as fh:
        return decode_model(fh.read())

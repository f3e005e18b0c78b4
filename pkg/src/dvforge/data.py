"""Datasets: ingestion (LibSVM, CSV, embedding binaries), seeded splits,
standardization, binarization and training-label noise injection."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable

import numpy as np

TRAIN, VALIDATION, TEST, UNASSIGNED = 0, 1, 2, 3
SPLIT_NAMES = {TRAIN: "train", VALIDATION: "validation", TEST: "test", UNASSIGNED: "unassigned"}

EMB_MAGIC = b"DVFORGE-EMB-1"


class DataError(ValueError):
    pass


class FormatError(DataError):
    """Malformed input; carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class EmptyError(DataError):
    pass


class TruncatedError(DataError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    rate: float
    kind: str = "binary_flip"  # or "circular_shift"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"noise rate must be in [0, 1), got {self.rate}")
        if self.kind not in ("binary_flip", "circular_shift"):
            raise ValueError(f"unknown noise kind {self.kind!r}")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: np.ndarray = None  # per-record split codes
    noise_mask: np.ndarray | None = None
    provenance: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise DataError(f"features {X.shape} and labels {y.shape} disagree")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise DataError(f"labels outside [0, {self.num_classes})")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        split = self.split
        if split is None:
            split = np.full(y.size, UNASSIGNED, dtype=np.int8)
        object.__setattr__(self, "split", np.asarray(split, dtype=np.int8))

    def __len__(self) -> int:
        return self.labels.size

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def indices(self, part: int) -> np.ndarray:
        return np.flatnonzero(self.split == part)

    def part(self, part: int) -> tuple[np.ndarray, np.ndarray]:
        idx = self.indices(part)
        return self.features[idx], self.labels[idx]

    @property
    def train(self):
        return self.part(TRAIN)

    @property
    def validation(self):
        return self.part(VALIDATION)

    @property
    def test(self):
        return self.part(TEST)

    def train_noise_mask(self) -> np.ndarray:
        idx = self.indices(TRAIN)
        if self.noise_mask is None:
            return np.zeros(idx.size, dtype=bool)
        return self.noise_mask[idx]

    def split_counts(self) -> dict[str, int]:
        return {SPLIT_NAMES[k]: int(np.count_nonzero(self.split == k)) for k in (TRAIN, VALIDATION, TEST)}

    def with_log(self, entry: str, **changes) -> "Dataset":
        return replace(self, provenance=self.provenance + (entry,), **changes)

    def checksums(self) -> dict[str, str]:
        out = {
            "features": _sha(self.features.astype("<f8").tobytes()),
            "labels": _sha(self.labels.astype("<i8").tobytes()),
            "split": _sha(self.split.tobytes()),
        }
        if self.noise_mask is not None:
            out["noise_mask"] = _sha(self.noise_mask.astype(np.uint8).tobytes())
        return out


def _sha(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


# -- LibSVM -------------------------------------------------------------------------

def _parse_number(token: str, what: str, lineno: int, source) -> float:
    try:
        value = float(token)
    except ValueError:
        raise FormatError(f"non-numeric {what} {token!r}", lineno, source) from None
    if not np.isfinite(value):
        raise FormatError(f"non-finite {what} {token!r}", lineno, source)
    return value


def parse_libsvm(
    stream: IO[str] | str | Iterable[str],
    num_features: int | None = None,
    source: str | None = None,
) -> Dataset:
    """Parse ``<label> <index>:<value> ...`` lines into a dense dataset.

    Indices are 1-based and strictly ascending; text after ``#`` is ignored.
    Binary {-1, +1} labels map to {0, 1}; other integer labels are kept.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    labels: list[int] = []
    rows: list[tuple[list[int], list[float]]] = []
    max_index = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        label = _parse_number(tokens[0], "label", lineno, source)
        if label != int(label):
            raise FormatError(f"non-integer label {tokens[0]!r}", lineno, source)
        cols: list[int] = []
        vals: list[float] = []
        prev = 0
        for tok in tokens[1:]:
            if tok.count(":") != 1:
                raise FormatError(f"expected index:value, got {tok!r}", lineno, source)
            idx_s, val_s = tok.split(":")
            try:
                idx = int(idx_s)
            except ValueError:
                raise FormatError(f"non-integer index {idx_s!r}", lineno, source) from None
            if idx < 1:
                raise FormatError(f"index {idx} is not 1-based positive", lineno, source)
            if idx <= prev:
                raise FormatError(f"index {idx} not ascending (after {prev})", lineno, source)
            prev = idx
            cols.append(idx - 1)
            vals.append(_parse_number(val_s, "value", lineno, source))
        max_index = max(max_index, prev)
        labels.append(int(label))
        rows.append((cols, vals))
    if not rows:
        raise EmptyError(f"{source or 'input'}: no data lines")
    width = max_index if num_features is None else num_features
    if width < max_index:
        raise FormatError(f"feature index {max_index} exceeds num_features={width}", None, source)
    X = np.zeros((len(rows), width))
    for r, (cols, vals) in enumerate(rows):
        X[r, cols] = vals
    y, k = _normalize_labels(np.array(labels, dtype=np.int64), source)
    return Dataset(X, y, k, provenance=(f"parse_libsvm({source or '<stream>'})",))


def _normalize_labels(y: np.ndarray, source=None) -> tuple[np.ndarray, int]:
    present = set(np.unique(y).tolist())
    if present <= {-1, 1}:
        return (y == 1).astype(np.int64), 2
    if min(present) < 0:
        raise FormatError(f"negative labels {sorted(present)} outside binary {{-1,+1}}", None, source)
    return y, int(max(2, max(present) + 1))


def emit_libsvm(features: np.ndarray, labels: np.ndarray, stream: IO[str]) -> None:
    """Write rows in LibSVM text with 17 significant digits; zeros are omitted."""
    X = np.asarray(features, dtype=float)
    for row, label in zip(X, np.asarray(labels)):
        parts = [str(int(label))]
        parts.extend(f"{j + 1}:{v:.17g}" for j, v in enumerate(row) if v != 0.0)
        stream.write(" ".join(parts) + "\n")


# -- CSV -------------------------------------------------------------------------------

def parse_csv(stream: IO[str] | str, source: str | None = None) -> Dataset:
    """Dense CSV with a header row; the ``label`` column holds integer targets."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyError(f"{source or 'input'}: empty CSV") from None
    header = [h.strip() for h in header]
    if "label" not in header:
        raise FormatError("header has no 'label' column", 1, source)
    li = header.index("label")
    feats, labels = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise FormatError(f"expected {len(header)} fields, got {len(row)}", lineno, source)
        label = _parse_number(row[li], "label", lineno, source)
        if label != int(label):
            raise FormatError(f"non-integer label {row[li]!r}", lineno, source)
        labels.append(int(label))
        feats.append([_parse_number(c, "value", lineno, source) for i, c in enumerate(row) if i != li])
    if not labels:
        raise EmptyError(f"{source or 'input'}: no data rows")
    y, k = _normalize_labels(np.array(labels, dtype=np.int64), source)
    return Dataset(np.array(feats, dtype=float), y, k, provenance=(f"parse_csv({source or '<stream>'})",))


# -- embedding binaries -------------------------------------------------------------------

def write_embeddings(path: str | Path, features: np.ndarray, labels: np.ndarray) -> None:
    X = np.ascontiguousarray(features, dtype="<f4")
    y = np.ascontiguousarray(labels, dtype="<u2")
    m, d = X.shape
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<II", m, d))
        fh.write(X.tobytes())
        fh.write(y.tobytes())


def load_embeddings(path: str | Path) -> Dataset:
    """Load precomputed embeddings: magic, u32 M, u32 d, f32[M*d], u16[M]."""
    raw = Path(path).read_bytes()
    if not raw.startswith(EMB_MAGIC):
        raise FormatError(f"bad magic, expected {EMB_MAGIC.decode()}", None, str(path))
    head = len(EMB_MAGIC) + 8
    if len(raw) < head:
        raise TruncatedError(f"{path}: header needs {head} bytes, file has {len(raw)}")
    m, d = struct.unpack_from("<II", raw, len(EMB_MAGIC))
    if m == 0:
        raise EmptyError(f"{path}: file holds zero records")
    expected = head + 4 * m * d + 2 * m
    if len(raw) < expected:
        raise TruncatedError(f"{path}: expected {expected} bytes, file has {len(raw)}")
    X = np.frombuffer(raw, dtype="<f4", count=m * d, offset=head).reshape(m, d).astype(np.float64)
    y = np.frombuffer(raw, dtype="<u2", count=m, offset=head + 4 * m * d).astype(np.int64)
    k = int(max(2, y.max() + 1))
    return Dataset(X, y, k, provenance=(f"load_embeddings({path})",))


def load(path: str | Path, fmt: str | None = None) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    fmt = fmt or {".csv": "csv", ".emb": "embeddings", ".bin": "embeddings"}.get(path.suffix, "libsvm")
    if fmt == "libsvm":
        with open(path) as fh:
            return parse_libsvm(fh, source=str(path))
    if fmt == "csv":
        with open(path, newline="") as fh:
            return parse_csv(fh, source=str(path))
    if fmt in ("embeddings", "emb"):
        return load_embeddings(path)
    raise ValueError(f"unknown format {fmt!r}")


# -- transforms --------------------------------------------------------------------------

def split(dataset: Dataset, sizes: tuple[int, int, int], seed: int) -> Dataset:
    """Seeded shuffle, then contiguous train/validation/test assignment."""
    n_train, n_val, n_test = (int(s) for s in sizes)
    if min(n_train, n_val, n_test) < 0:
        raise DataError(f"negative split size in {sizes}")
    total = n_train + n_val + n_test
    if total > len(dataset):
        raise DataError(f"split sizes {sizes} sum to {total} > {len(dataset)} records")
    order = np.random.default_rng(seed).permutation(len(dataset))
    tags = np.full(len(dataset), UNASSIGNED, dtype=np.int8)
    tags[order[:n_train]] = TRAIN
    tags[order[n_train : n_train + n_val]] = VALIDATION
    tags[order[n_train + n_val : total]] = TEST
    return dataset.with_log(f"split({n_train},{n_val},{n_test},seed={seed})", split=tags)


def standardize(dataset: Dataset) -> Dataset:
    """Scale every feature to zero mean / unit std using train-split statistics."""
    ref = dataset.features[dataset.split == TRAIN]
    if ref.shape[0] == 0:
        ref = dataset.features
    mu = ref.mean(axis=0)
    sd = ref.std(axis=0)
    sd[sd == 0] = 1.0
    return dataset.with_log("standardize(train)", features=(dataset.features - mu) / sd)


def binarize(dataset: Dataset, positive_class: int) -> Dataset:
    if not 0 <= positive_class < dataset.num_classes:
        raise DataError(f"positive_class {positive_class} outside [0, {dataset.num_classes})")
    y = (dataset.labels == positive_class).astype(np.int64)
    return dataset.with_log(f"binarize({positive_class})", labels=y, num_classes=2)


def inject_noise(dataset: Dataset, spec: NoiseSpec) -> Dataset:
    """Corrupt floor(rate * n_train) training labels chosen without replacement."""
    if spec.kind == "binary_flip" and dataset.num_classes != 2:
        raise DataError("binary_flip requires a binary dataset; use circular_shift")
    if dataset.num_classes < 2:
        raise DataError("noise needs at least two classes")
    train_idx = dataset.indices(TRAIN)
    count = int(np.floor(spec.rate * train_idx.size))
    chosen = np.random.default_rng(spec.seed).choice(train_idx, size=count, replace=False)
    y = dataset.labels.copy()
    if spec.kind == "binary_flip":
        y[chosen] = 1 - y[chosen]
    else:
        y[chosen] = (y[chosen] + 1) % dataset.num_classes
    mask = np.zeros(len(dataset), dtype=bool)
    mask[chosen] = True
    return dataset.with_log(
        f"inject_noise({spec.kind},rate={spec.rate},seed={spec.seed})", labels=y, noise_mask=mask
    )


def two_gaussians(
    n: int, dim: int = 20, separation: float = 1.5, seed: int = 0
) -> Dataset:
    """Balanced binary task: N(+mu, I) vs N(-mu, I) with |mu| = separation."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    mu = np.full(dim, separation / np.sqrt(dim))
    X = rng.normal(size=(n, dim)) + np.where(y[:, None] == 1, mu, -mu)
    return Dataset(X, y, 2, provenance=(f"two_gaussians(n={n},d={dim},sep={separation},seed={seed})",))


def synthetic_task(
    sizes: tuple[int, int, int] = (1000, 300, 2000),
    dim: int = 20,
    separation: float = 1.5,
    seed: int = 0,
) -> Dataset:
    ds = two_gaussians(sum(sizes), dim, separation, seed)
    return split(ds, sizes, seed)


# -- canonical on-disk form ----------------------------------------------------------------

def save_dataset(dataset: Dataset, directory: str | Path, extra: dict | None = None) -> dict:
    """Write ``dataset.npz`` plus ``manifest.json``; returns the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {"features": dataset.features, "labels": dataset.labels, "split": dataset.split}
    if dataset.noise_mask is not None:
        arrays["noise_mask"] = dataset.noise_mask
    np.savez(directory / "dataset.npz", **arrays)
    manifest = {
        "version": 1,
        "num_records": len(dataset),
        "num_features": dataset.dim,
        "num_classes": dataset.num_classes,
        "splits": dataset.split_counts(),
        "checksums": dataset.checksums(),
        "provenance": list(dataset.provenance),
        **(extra or {}),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_dataset(directory: str | Path) -> Dataset:
    directory = Path(directory)
    if directory.is_file():
        directory = directory.parent
    manifest = json.loads((directory / "manifest.json").read_text())
    with np.load(directory / "dataset.npz") as z:
        ds = Dataset(
            z["features"],
            z["labels"],
            manifest["num_classes"],
            z["split"],
            z["noise_mask"] if "noise_mask" in z else None,
            tuple(manifest.get("provenance", ())),
        )
    if ds.checksums() != manifest["checksums"]:
        raise DataError(f"{directory}: checksum mismatch against manifest")
    return ds

"""Dataset ingestion, worker partitioning and synthetic problems."""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .objective import LabeledDataset

__all__ = [
    "DataFormatError",
    "POWER_FEATURES",
    "load_power_csv",
    "load_mnist_idx",
    "read_idx",
    "write_idx",
    "mnist_dataset",
    "load_mnist",
    "binarize_one_vs_all",
    "unit_rows",
    "partition",
    "synthesize",
    "dataset_hash",
    "save_snapshot",
    "load_snapshot",
]

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
SNAPSHOT_SCHEMA = "qsvrg-snapshot/1"
SNAPSHOT_MAGIC = b"QSVRGSNP"

POWER_FEATURES = (
    "Global_reactive_power",
    "Voltage",
    "Global_intensity",
    "Sub_metering_1",
    "Sub_metering_2",
    "Sub_metering_3",
    "hour",
    "minute",
    "bias",
)
_POWER_NUMERIC = (
    "Global_active_power",
    "Global_reactive_power",
    "Voltage",
    "Global_intensity",
    "Sub_metering_1",
    "Sub_metering_2",
    "Sub_metering_3",
)


class DataFormatError(ValueError):
    pass


def _zscore(X: np.ndarray, skip: tuple[int, ...] = ()) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    for j in range(X.shape[1]):
        if j in skip or scale[j] == 0:
            mean[j], scale[j] = 0.0, 1.0
    return (X - mean) / scale, mean, scale


def load_power_csv(path, subsample: int | None = None, seed: int = 0) -> LabeledDataset:
    """Read the UCI household power file into a 9-feature binary problem.

    Label is +1 where Global_active_power exceeds its median.  Rows with
    "?" markers or unparsable fields are dropped and counted in
    ``meta["skipped_rows"]``.  Non-constant columns are z-scored; the
    per-column mean and scale are kept in ``meta`` so raw values can be
    recovered.
    """
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    rows = []
    skipped = 0
    with fh:
        reader = csv.reader(fh, delimiter=";")
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path} is empty")
        header = [h.strip() for h in header]
        try:
            time_col = header.index("Time")
            cols = [header.index(c) for c in _POWER_NUMERIC]
        except ValueError as exc:
            raise DataFormatError(f"{path}: missing column ({exc})") from exc
        for rec in reader:
            try:
                hh, mm, *_ = rec[time_col].split(":")
                vals = [float(rec[c]) for c in cols]
                rows.append(vals + [float(int(hh)), float(int(mm))])
            except (ValueError, IndexError):
                skipped += 1
    if not rows:
        raise ValueError(f"{path}: no usable rows ({skipped} skipped)")
    raw = np.asarray(rows, dtype=np.float64)
    if subsample is not None and subsample < raw.shape[0]:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(raw.shape[0], size=subsample, replace=False))
        raw = raw[keep]
    active = raw[:, 0]
    labels = np.where(active > np.median(active), 1.0, -1.0)
    X = np.column_stack([raw[:, 1:], np.ones(raw.shape[0])])
    bias_col = X.shape[1] - 1
    Xn, mean, scale = _zscore(X, skip=(bias_col,))
    meta = {
        "source": "uci-household-power",
        "features": list(POWER_FEATURES),
        "skipped_rows": skipped,
        "subsample": subsample,
        "seed": seed,
        "norm_mean": mean,
        "norm_scale": scale,
    }
    return LabeledDataset(Xn, labels, meta)


def _read_be32(buf: bytes, offset: int) -> int:
    return struct.unpack_from(">i", buf, offset)[0]


def read_idx(path) -> np.ndarray:
    """Parse an unsigned-byte IDX file (magic 2049 or 2051)."""
    buf = Path(path).read_bytes()
    if len(buf) < 8:
        raise DataFormatError(f"{path}: too short for an IDX header")
    magic = _read_be32(buf, 0)
    if magic == IDX_IMAGES_MAGIC:
        if len(buf) < 16:
            raise DataFormatError(f"{path}: truncated image header")
        count, rows, cols = (_read_be32(buf, o) for o in (4, 8, 12))
        shape, start = (count, rows, cols), 16
    elif magic == IDX_LABELS_MAGIC:
        count = _read_be32(buf, 4)
        shape, start = (count,), 8
    else:
        raise DataFormatError(f"{path}: unexpected magic number {magic}")
    expected = int(np.prod(shape))
    if len(buf) - start != expected:
        raise DataFormatError(f"{path}: header promises {expected} bytes, found {len(buf) - start}")
    return np.frombuffer(buf, dtype=np.uint8, offset=start).reshape(shape)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.uint8)
    if array.ndim == 3:
        header = struct.pack(">iiii", IDX_IMAGES_MAGIC, *array.shape)
    elif array.ndim == 1:
        header = struct.pack(">ii", IDX_LABELS_MAGIC, array.shape[0])
    else:
        raise ValueError("IDX writer supports image stacks (3-d) and label vectors (1-d)")
    Path(path).write_bytes(header + array.tobytes())


def load_mnist_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Images flattened to (n, rows*cols) in [0, 1] and integer digit labels."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise DataFormatError(f"{images_path} is not an image file")
    if labels.ndim != 1:
        raise DataFormatError(f"{labels_path} is not a label file")
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    flat = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return flat, labels.astype(np.int64)


def binarize_one_vs_all(labels, digit: int) -> np.ndarray:
    labels = np.asarray(labels)
    return np.where(labels == digit, 1.0, -1.0)


def unit_rows(X: np.ndarray) -> np.ndarray:
    """Scale each row to unit Euclidean norm; all-zero rows are left as is."""
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return X / np.where(norms > 0, norms, 1.0)


def load_mnist(directory, split: str = "train", normalize: str = "none") -> tuple[np.ndarray, np.ndarray]:
    """Pixels in [0, 1] (``normalize="none"``) or rescaled to unit-norm rows (``"unit"``)."""
    directory = Path(directory)
    prefix = "train" if split == "train" else "t10k"
    X, y = load_mnist_idx(directory / f"{prefix}-images-idx3-ubyte", directory / f"{prefix}-labels-idx1-ubyte")
    if normalize == "unit":
        X = unit_rows(X)
    elif normalize != "none":
        raise ValueError(f"unknown normalization {normalize!r}")
    return X, y


def mnist_dataset(directory, split: str = "train", digit: int = 9, normalize: str = "none") -> LabeledDataset:
    X, y = load_mnist(directory, split, normalize)
    meta = {"source": f"mnist-{split}", "digit": digit, "digits": y, "normalize": normalize}
    return LabeledDataset(X, binarize_one_vs_all(y, digit), meta)


def partition(n_samples: int, n_workers: int, policy: str = "contiguous", seed: int = 0) -> list[np.ndarray]:
    """Split sample indices into disjoint, covering worker shards.

    ``contiguous`` gives the first ``n % n_workers`` workers one extra
    sample (ceiling division); ``round_robin`` deals indices out in turn
    after a seeded shuffle.
    """
    if n_workers < 1:
        raise ValueError("need at least one worker")
    if n_workers > n_samples:
        raise ValueError(f"{n_workers} workers for {n_samples} samples")
    if policy == "contiguous":
        base, extra = divmod(n_samples, n_workers)
        sizes = [base + (i < extra) for i in range(n_workers)]
        bounds = np.concatenate([[0], np.cumsum(sizes)])
        return [np.arange(bounds[i], bounds[i + 1]) for i in range(n_workers)]
    if policy == "round_robin":
        order = np.random.default_rng(seed).permutation(n_samples)
        return [np.sort(order[i::n_workers]) for i in range(n_workers)]
    raise ValueError(f"unknown partition policy {policy!r}")


def synthesize(n: int, d: int, seed: int = 0, margin: float = 1.0) -> tuple[LabeledDataset, np.ndarray]:
    """Gaussian features, labels from a random linear model with logistic noise.

    ``margin`` scales the true weight vector; larger values give cleaner
    labels.  Returns the dataset and the true weights.
    """
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    w_true = rng.standard_normal(d)
    w_true *= margin / np.linalg.norm(w_true)
    noise = rng.logistic(size=n)
    y = np.where(X @ w_true + noise >= 0, 1.0, -1.0)
    return LabeledDataset(X, y, {"source": "synthetic", "seed": seed, "margin": margin}), w_true


def _hash_arrays(X: np.ndarray, y: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(X.shape, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(X, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(y, dtype=np.float64).tobytes())
    return h.hexdigest()


def dataset_hash(ds: LabeledDataset) -> str:
    return _hash_arrays(ds.features, ds.labels)


def _jsonable(meta: dict) -> dict:
    out = {}
    for k, v in meta.items():
        if isinstance(v, np.ndarray):
            if v.size > 64:
                continue
            v = v.tolist()
        out[k] = v
    return out


def save_snapshot(ds: LabeledDataset, path) -> str:
    """Write a dataset with an embedded JSON schema header; returns its hash.

    Layout: 8-byte magic, big-endian u32 header length, UTF-8 JSON header,
    then float64 features (row-major) and float64 labels, little-endian.
    """
    digest = dataset_hash(ds)
    header = {
        "schema": SNAPSHOT_SCHEMA,
        "n_samples": ds.n_samples,
        "dim": ds.dim,
        "dtype": "<f8",
        "sha256": digest,
        "meta": _jsonable(ds.meta),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack(">I", len(blob)))
        fh.write(blob)
        fh.write(ds.features.astype("<f8").tobytes())
        fh.write(ds.labels.astype("<f8").tobytes())
    tmp.replace(path)
    return digest


def load_snapshot(path) -> LabeledDataset:
    buf = Path(path).read_bytes()
    if buf[:8] != SNAPSHOT_MAGIC:
        raise DataFormatError(f"{path}: not a snapshot file")
    (hlen,) = struct.unpack_from(">I", buf, 8)
    header = json.loads(buf[12 : 12 + hlen])
    if header.get("schema") != SNAPSHOT_SCHEMA:
        raise DataFormatError(f"{path}: unknown snapshot schema {header.get('schema')!r}")
    n, d = header["n_samples"], header["dim"]
    body = np.frombuffer(buf, dtype="<f8", offset=12 + hlen)
    if body.size != n * d + n:
        raise DataFormatError(f"{path}: truncated body")
    X, y = body[: n * d].reshape(n, d), body[n * d :]
    if _hash_arrays(X, y) != header["sha256"]:
        raise DataFormatError(f"{path}: content hash mismatch")
    return LabeledDataset(X, y, header.get("meta", {}))

"""Datasets: synthetic generators, CSV ingestion, stratified split, batching.

All randomness comes from :class:`qtl.rng.Rng` (xoshiro256** seeded via
SplitMix64), so the same seed reproduces the same data bit for bit.
"""
from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .rng import Rng, derive_seed

KINDS = ("blobs", "two_moons", "transfer_pair")


class DataError(ValueError):
    pass


class CSVParseError(DataError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    name: str = "dataset"

    def __post_init__(self):
        self.features = np.array(self.features, dtype=np.float64)
        self.labels = np.array(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[1] < 1:
            raise DataError(f"features must be (n, dim>=1), got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError("labels and feature rows differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataError(f"labels must lie in [0, {self.n_classes})")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features must be finite")

    def __len__(self) -> int:
        return self.labels.size

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx, name: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.n_classes, name or self.name)


@dataclass
class SyntheticSpec:
    """Parameters for :func:`gen_synthetic`.

    ``blobs``: each class is ``clusters_per_class`` Gaussian clusters with
    centres drawn from N(0, I) on the first ``informative_dims`` coordinates
    and from N(0, weak_feature_scale**2) on the rest (0 makes them pure
    noise), with isotropic noise of standard deviation ``1 / class_separation``. Small nonzero
    ``weak_feature_scale`` gives many weakly predictive coordinates that an
    L-inf perturbation larger than the scale can overturn.

    ``two_moons``: class ``c`` lies on a half circle of radius 1 centred at
    ``(c, 0.5 * (c % 2))``, opening up for even and down for odd classes, in
    the first two coordinates; noise covariance as for blobs.

    ``transfer_pair``: a blobs source task, plus a target task drawn from the
    same distribution and then rotated by ``rotation_angle`` in every
    coordinate plane ``(2k, 2k+1)`` and shifted by ``mean_shift`` on every
    coordinate.
    """

    kind: str = "blobs"
    n_samples: int = 400
    dim: int = 16
    n_classes: int = 4
    class_separation: float = 1.0
    seed: int = 0
    clusters_per_class: int = 1
    informative_dims: int | None = None
    weak_feature_scale: float = 0.0
    rotation_angle: float = 0.3
    mean_shift: float = 0.2
    n_target: int | None = None
    name: str = field(default="")

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise DataError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.n_classes < 2:
            raise DataError("need at least 2 classes")
        if self.n_samples < self.n_classes:
            raise DataError("n_samples must be >= n_classes")
        if self.n_target is not None and self.n_target < self.n_classes:
            raise DataError("n_target must be >= n_classes")
        if not self.class_separation > 0:
            raise DataError("class_separation must be positive")
        if self.dim < 1 or (self.kind == "two_moons" and self.dim < 2):
            raise DataError("dim too small for this kind")
        if self.clusters_per_class < 1:
            raise DataError("clusters_per_class must be >= 1")
        if self.informative_dims is not None and not 1 <= self.informative_dims <= self.dim:
            raise DataError("informative_dims must lie in [1, dim]")
        if self.weak_feature_scale < 0:
            raise DataError("weak_feature_scale must be >= 0")
        if self.kind == "transfer_pair" and self.rotation_angle == 0 and self.mean_shift == 0:
            raise DataError("transfer_pair needs a nonzero rotation_angle or mean_shift")


def _balanced_labels(n: int, n_classes: int) -> np.ndarray:
    return np.arange(n, dtype=np.int64) % n_classes


def _blob_centres(spec: SyntheticSpec) -> np.ndarray:
    k = spec.informative_dims or spec.dim
    rng = Rng(derive_seed(spec.seed, "centres"))
    centres = np.zeros((spec.n_classes, spec.clusters_per_class, spec.dim))
    centres[:, :, :k] = rng.normal_array((spec.n_classes, spec.clusters_per_class, k))
    if spec.weak_feature_scale > 0 and k < spec.dim:
        centres[:, :, k:] = rng.normal_array((spec.n_classes, spec.clusters_per_class, spec.dim - k),
                                             std=spec.weak_feature_scale)
    return centres


def _draw_blobs(spec: SyntheticSpec, centres: np.ndarray, n: int, stream: str) -> tuple:
    rng = Rng(derive_seed(spec.seed, stream))
    labels = _balanced_labels(n, spec.n_classes)
    cluster = (np.arange(n) // spec.n_classes) % spec.clusters_per_class
    noise = rng.normal_array((n, spec.dim), std=1.0 / spec.class_separation)
    return centres[labels, cluster] + noise, labels


def _draw_moons(spec: SyntheticSpec, n: int) -> tuple:
    rng = Rng(derive_seed(spec.seed, "moons"))
    labels = _balanced_labels(n, spec.n_classes)
    t = rng.uniform_array((n,), 0.0, math.pi)
    x = np.zeros((n, spec.dim))
    sign = np.where(labels % 2 == 0, 1.0, -1.0)
    x[:, 0] = np.cos(t) + labels
    x[:, 1] = sign * np.sin(t) + 0.5 * (labels % 2)
    x += rng.normal_array((n, spec.dim), std=1.0 / spec.class_separation)
    return x, labels


def plane_rotation(dim: int, angle: float) -> np.ndarray:
    """Rotation by ``angle`` in each coordinate plane (0,1), (2,3), ...; odd last axis fixed."""
    r = np.eye(dim)
    c, s = math.cos(angle), math.sin(angle)
    for k in range(0, dim - 1, 2):
        r[k, k], r[k, k + 1] = c, -s
        r[k + 1, k], r[k + 1, k + 1] = s, c
    return r


def gen_synthetic(spec: SyntheticSpec):
    """A :class:`Dataset`, or ``(source, target)`` for ``transfer_pair``."""
    spec.validate()
    name = spec.name or spec.kind
    if spec.kind == "two_moons":
        x, y = _draw_moons(spec, spec.n_samples)
        return Dataset(x, y, spec.n_classes, name)
    centres = _blob_centres(spec)
    x, y = _draw_blobs(spec, centres, spec.n_samples, "source")
    source = Dataset(x, y, spec.n_classes, name if spec.kind == "blobs" else f"{name}-source")
    if spec.kind == "blobs":
        return source
    xt, yt = _draw_blobs(spec, centres, spec.n_target or spec.n_samples, "target")
    xt = xt @ plane_rotation(spec.dim, spec.rotation_angle).T + spec.mean_shift
    return source, Dataset(xt, yt, spec.n_classes, f"{name}-target")


def _format_float(v: float) -> str:
    return repr(float(v))


def dataset_to_csv_text(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"f{i}" for i in range(ds.dim)] + ["label"])
    for row, label in zip(ds.features, ds.labels):
        w.writerow([_format_float(v) for v in row] + [int(label)])
    return buf.getvalue()


def write_atomic(path, text: str) -> None:
    """Write via a temp file in the same directory plus rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_csv(ds: Dataset, path) -> None:
    write_atomic(path, dataset_to_csv_text(ds))


def load_csv(path, name: str | None = None) -> Dataset:
    """Parse ``f0,...,f{d-1},label``. Raises :class:`CSVParseError` with the line number."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CSVParseError("empty file", 1) from None
        d = len(header) - 1
        if d < 1 or header[-1].strip() != "label" or [h.strip() for h in header[:-1]] != [
            f"f{i}" for i in range(d)
        ]:
            raise CSVParseError("header must be f0,...,f{d-1},label", 1)
        feats, labels = [], []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != d + 1:
                raise CSVParseError(f"expected {d + 1} fields, got {len(row)}", line)
            try:
                vals = [float(v) for v in row[:-1]]
            except ValueError as exc:
                raise CSVParseError(f"bad feature value ({exc})", line) from None
            if not all(math.isfinite(v) for v in vals):
                raise CSVParseError("NaN or Inf feature", line)
            raw = row[-1].strip()
            if not raw.isdigit():
                raise CSVParseError(f"label must be a non-negative integer, got {raw!r}", line)
            feats.append(vals)
            labels.append(int(raw))
    if not labels:
        raise DataError(f"{path}: no data rows")
    labels_arr = np.array(labels, dtype=np.int64)
    stem = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    return Dataset(np.array(feats), labels_arr, int(labels_arr.max()) + 1, name or stem)


def split(ds: Dataset, train_fraction: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified seeded split; train size is ``floor(n * train_fraction)``."""
    if not 0 < train_fraction < 1:
        raise DataError("train_fraction must be in (0, 1)")
    n = len(ds)
    n_train = math.floor(n * train_fraction)
    if n_train < 1 or n_train >= n:
        raise DataError(f"split of {n} samples at {train_fraction} leaves an empty side")
    rng = Rng(derive_seed(seed, "split"))
    per_class = []
    for c in range(ds.n_classes):
        idx = np.flatnonzero(ds.labels == c)
        per_class.append(idx[rng.permutation(idx.size)])
    # floor quotas, then hand leftover slots to the largest remainders
    exact = [p.size * n_train / n for p in per_class]
    quota = [math.floor(e) for e in exact]
    order = sorted(range(len(exact)), key=lambda c: (-(exact[c] - quota[c]), c))
    for c in order[: n_train - sum(quota)]:
        quota[c] += 1
    train_idx = np.concatenate([p[:q] for p, q in zip(per_class, quota)])
    test_idx = np.concatenate([p[q:] for p, q in zip(per_class, quota)])
    train_idx = train_idx[rng.permutation(train_idx.size)]
    test_idx = test_idx[rng.permutation(test_idx.size)]
    return ds.subset(train_idx, f"{ds.name}-train"), ds.subset(test_idx, f"{ds.name}-test")


def batches(n: int | Dataset, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffle with ``Rng(seed ^ epoch)`` and cut into contiguous chunks."""
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    if isinstance(n, Dataset):
        n = len(n)
    perm = Rng(seed ^ epoch).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]

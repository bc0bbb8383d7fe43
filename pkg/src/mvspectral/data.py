"""Multi-view datasets: synthetic generation, contamination, splits, CSV I/O.

All operations are pure functions of their inputs and seeds; nothing mutates a
dataset in place. View indices are 0-based throughout.
"""

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError


@dataclass
class MultiViewDataset:
    """V aligned sample matrices; row i of every view is the same sample."""

    views: list
    labels: np.ndarray = None
    contaminated_mask: np.ndarray = None
    seed: int = 0

    def __post_init__(self):
        self.views = [np.asarray(v, dtype=np.float64) for v in self.views]
        if len(self.views) < 2:
            raise ValueError("a multi-view dataset needs at least 2 views")
        n = self.views[0].shape[0]
        for i, v in enumerate(self.views):
            if v.ndim != 2 or v.shape[1] < 1:
                raise ValueError(f"view {i} must be a 2-d matrix with >=1 column")
            if v.shape[0] != n:
                raise ValueError(
                    f"view {i} has {v.shape[0]} rows, expected {n}"
                )
            if not np.all(np.isfinite(v)):
                raise ValueError(f"view {i} contains non-finite entries")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ValueError("labels length must equal the row count")
        if self.contaminated_mask is not None:
            self.contaminated_mask = np.asarray(self.contaminated_mask, dtype=bool)
            if self.contaminated_mask.shape != (n, len(self.views)):
                raise ValueError("contaminated_mask must have shape (n, V)")

    @property
    def n(self):
        return self.views[0].shape[0]

    @property
    def n_views(self):
        return len(self.views)

    @property
    def dims(self):
        return [v.shape[1] for v in self.views]

    def mask_or_false(self):
        if self.contaminated_mask is not None:
            return self.contaminated_mask.copy()
        return np.zeros((self.n, self.n_views), dtype=bool)

    def take(self, indices):
        """Row subset applied identically to views, labels and mask."""
        idx = np.asarray(indices, dtype=np.int64)
        return MultiViewDataset(
            views=[v[idx].copy() for v in self.views],
            labels=None if self.labels is None else self.labels[idx].copy(),
            contaminated_mask=(
                None
                if self.contaminated_mask is None
                else self.contaminated_mask[idx].copy()
            ),
            seed=self.seed,
        )


@dataclass
class ContaminationSpec:
    kind: str               # "outlier" | "gaussian_noise"
    ratio: float
    target_views: tuple     # 0-based view indices
    noise_sigma: float = 1.2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("outlier", "gaussian_noise"):
            raise ValueError(f"unknown contamination kind {self.kind!r}")
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError("ratio must lie in [0, 1]")
        self.target_views = tuple(int(v) for v in self.target_views)
        if self.kind == "gaussian_noise" and self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be positive")


@dataclass
class SplitSpec:
    test_fraction: float = 0.2
    val_fraction_of_train: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for f in (self.test_fraction, self.val_fraction_of_train):
            if not 0.0 < f < 1.0:
                raise ValueError("split fractions must lie in (0, 1)")


def random_orthogonal(dim, rng):
    """Orthogonal matrix from the QR of a Gaussian draw; R diagonal made
    positive so the result is a deterministic function of the draw."""
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    return q * np.sign(np.diag(r))


def make_blobs_two_view(n, num_clusters, dim, cluster_std, seed):
    """Isotropic Gaussian blobs; second view is a random rotation of the first.

    Centers are drawn uniformly in [-10, 10]^dim and redrawn until their
    pairwise separation is at least 8 cluster widths, so the planted clusters
    are actually recoverable. Labels are the blob indices.
    """
    if num_clusters < 2 or n < num_clusters:
        raise ValueError("need n >= num_clusters >= 2")
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if cluster_std <= 0:
        raise ValueError("cluster_std must be positive")
    rng = np.random.default_rng(seed)

    min_sep = 8.0 * cluster_std
    for _ in range(1000):
        centers = rng.uniform(-10.0, 10.0, size=(num_clusters, dim))
        diffs = centers[:, None, :] - centers[None, :, :]
        dists = np.sqrt((diffs ** 2).sum(-1))
        np.fill_diagonal(dists, np.inf)
        if dists.min() >= min_sep:
            break
    else:
        raise ValueError(
            "could not place well-separated centers; reduce num_clusters or cluster_std"
        )

    # balanced cluster sizes, remainder to the first clusters
    sizes = np.full(num_clusters, n // num_clusters, dtype=np.int64)
    sizes[: n % num_clusters] += 1
    labels = np.repeat(np.arange(num_clusters), sizes)
    points = centers[labels] + rng.normal(scale=cluster_std, size=(n, dim))

    perm = rng.permutation(n)
    points, labels = points[perm], labels[perm]

    rotation = random_orthogonal(dim, rng)
    return MultiViewDataset(
        views=[points, points @ rotation],
        labels=labels,
        contaminated_mask=np.zeros((n, 2), dtype=bool),
        seed=seed,
    )


def _check_targets(ds, spec):
    for v in spec.target_views:
        if not 0 <= v < ds.n_views:
            raise ValueError(f"target view {v} out of range for V={ds.n_views}")


def _n_rows_to_hit(ratio, n):
    count = math.ceil(ratio * n)
    if count == 0:
        warnings.warn("contamination ratio selects no rows; dataset unchanged")
    return count


def inject_outliers(ds, spec):
    """Replace rows of the target views by uniform draws from a 1.1-expanded
    bounding box of the clean data (global-anomaly style). Row selection is
    independent per view; untouched views of the same sample are preserved."""
    if spec.kind != "outlier":
        raise ValueError("spec.kind must be 'outlier'")
    _check_targets(ds, spec)
    rng = np.random.default_rng(spec.seed)
    count = _n_rows_to_hit(spec.ratio, ds.n)
    views = [v.copy() for v in ds.views]
    mask = ds.mask_or_false()
    if count > 0:
        for v in spec.target_views:
            clean = ds.views[v]
            lo, hi = clean.min(axis=0), clean.max(axis=0)
            center, half = (lo + hi) / 2.0, (hi - lo) / 2.0
            box_lo, box_hi = center - 1.1 * half, center + 1.1 * half
            rows = rng.choice(ds.n, size=count, replace=False)
            views[v][rows] = rng.uniform(
                box_lo, box_hi, size=(count, clean.shape[1])
            )
            mask[rows, v] = True
    return MultiViewDataset(views, _copy_labels(ds), mask, ds.seed)


def inject_gaussian_noise(ds, spec):
    """Add i.i.d. zero-mean Gaussian noise (std ``noise_sigma``) to a fraction
    of the rows of each target view."""
    if spec.kind != "gaussian_noise":
        raise ValueError("spec.kind must be 'gaussian_noise'")
    _check_targets(ds, spec)
    rng = np.random.default_rng(spec.seed)
    count = _n_rows_to_hit(spec.ratio, ds.n)
    views = [v.copy() for v in ds.views]
    mask = ds.mask_or_false()
    if count > 0:
        for v in spec.target_views:
            rows = rng.choice(ds.n, size=count, replace=False)
            views[v][rows] += rng.normal(
                scale=spec.noise_sigma, size=(count, views[v].shape[1])
            )
            mask[rows, v] = True
    return MultiViewDataset(views, _copy_labels(ds), mask, ds.seed)


def inject(ds, spec):
    if spec.kind == "outlier":
        return inject_outliers(ds, spec)
    return inject_gaussian_noise(ds, spec)


def _copy_labels(ds):
    return None if ds.labels is None else ds.labels.copy()


def split(ds, spec):
    """Random disjoint (train, val, test) partition applied to all views."""
    if ds.n < 10:
        raise ValueError("need at least 10 samples to split")
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(ds.n)
    n_test = int(round(spec.test_fraction * ds.n))
    n_val = int(round(spec.val_fraction_of_train * (ds.n - n_test)))
    n_train = ds.n - n_test - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ValueError("split fractions leave an empty partition")
    test_idx = perm[:n_test]
    val_idx = perm[n_test:n_test + n_val]
    train_idx = perm[n_test + n_val:]
    return ds.take(train_idx), ds.take(val_idx), ds.take(test_idx)


# ---------------------------------------------------------------------------
# CSV I/O. Views are comma-separated numeric files without a header (pass
# skip_header=True for files with one); labels are one integer per line; the
# mask file is 0/1 with one column per view.
# ---------------------------------------------------------------------------

def _read_matrix_csv(path, skip_header=False):
    path = Path(path)
    rows = []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, rec in enumerate(reader, start=1):
            if skip_header and lineno == 1:
                continue
            if not rec or (len(rec) == 1 and rec[0].strip() == ""):
                continue
            try:
                row = [float(cell) for cell in rec]
            except ValueError:
                raise DataFormatError(
                    f"{path}:{lineno}: non-numeric cell"
                ) from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {width} columns, got {len(row)}"
                )
            rows.append(row)
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    return np.asarray(rows, dtype=np.float64)


def _read_labels_csv(path, skip_header=False):
    mat = _read_matrix_csv(path, skip_header=skip_header)
    if mat.shape[1] != 1:
        raise DataFormatError(f"{path}: labels file must have one column")
    col = mat[:, 0]
    if not np.all(col == np.round(col)):
        raise DataFormatError(f"{path}: labels must be integers")
    return col.astype(np.int64)


def load_views_csv(paths, labels_path=None, skip_header=False):
    """Dataset from one CSV per view (shared row order) plus optional labels."""
    views = [_read_matrix_csv(p, skip_header=skip_header) for p in paths]
    n = views[0].shape[0]
    for p, v in zip(paths, views):
        if v.shape[0] != n:
            raise DataFormatError(
                f"{p}: has {v.shape[0]} rows but {paths[0]} has {n}"
            )
    labels = None
    if labels_path is not None:
        labels = _read_labels_csv(labels_path, skip_header=skip_header)
        if labels.shape[0] != n:
            raise DataFormatError(
                f"{labels_path}: has {labels.shape[0]} labels for {n} rows"
            )
    return MultiViewDataset(views=views, labels=labels, seed=0)


def save_matrix_csv(path, mat):
    np.savetxt(path, np.asarray(mat), delimiter=",", fmt="%.17g")


def save_dataset(directory, ds):
    """Write view_<v>.csv files plus labels.csv / mask.csv when present."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for v, mat in enumerate(ds.views):
        save_matrix_csv(directory / f"view_{v}.csv", mat)
    if ds.labels is not None:
        np.savetxt(directory / "labels.csv", ds.labels, fmt="%d")
    if ds.contaminated_mask is not None:
        np.savetxt(
            directory / "mask.csv",
            ds.contaminated_mask.astype(np.int64),
            delimiter=",",
            fmt="%d",
        )
    return directory


def load_dataset(directory):
    """Inverse of :func:`save_dataset`."""
    directory = Path(directory)
    view_paths = sorted(
        directory.glob("view_*.csv"),
        key=lambda p: int(p.stem.split("_")[1]),
    )
    if not view_paths:
        raise DataFormatError(f"{directory}: no view_*.csv files found")
    labels_path = directory / "labels.csv"
    ds = load_views_csv(
        view_paths, labels_path if labels_path.exists() else None
    )
    mask_path = directory / "mask.csv"
    if mask_path.exists():
        mask = _read_matrix_csv(mask_path).astype(bool)
        ds = MultiViewDataset(ds.views, ds.labels, mask, ds.seed)
    return ds

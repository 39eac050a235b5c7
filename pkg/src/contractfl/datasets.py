"""Dataset handling: IDX files, non-IID client partitioning, label statistics.

A Dataset is a flat pool of feature rows scaled to [0, 1]. Clients hold
index views into one parent pool plus their own label array, so a client's
labels can be corrupted without touching the pool or any sibling client.
"""

from __future__ import annotations

import gzip
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataFormatError

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """A pool of samples: features in [0, 1], integer labels, class count."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise ConfigurationError(f"features must be 2-D, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise ConfigurationError(
                f"labels shape {y.shape} does not match {x.shape[0]} rows")
        if x.size and (x.min() < 0.0 or x.max() > 1.0):
            raise ConfigurationError("feature values must lie in [0, 1]")
        if self.num_classes < 1:
            raise ConfigurationError(f"num_classes must be >= 1, got {self.num_classes}")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ConfigurationError(
                f"labels must lie in [0, {self.num_classes}), got range "
                f"[{y.min()}, {y.max()}]")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class ClientDataset:
    """One client's slice of a parent pool, with a private label array."""

    client_id: int
    parent: Dataset
    indices: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        y = np.asarray(self.labels, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise ConfigurationError(
                f"client {self.client_id} needs a non-empty 1-D index array")
        if np.unique(idx).size != idx.size:
            raise ConfigurationError(f"client {self.client_id} has duplicate indices")
        if idx.min() < 0 or idx.max() >= len(self.parent):
            raise ConfigurationError(
                f"client {self.client_id} index out of range for pool of {len(self.parent)}")
        if y.shape != idx.shape:
            raise ConfigurationError(
                f"client {self.client_id}: {y.size} labels for {idx.size} indices")
        if y.min() < 0 or y.max() >= self.parent.num_classes:
            raise ConfigurationError(
                f"client {self.client_id} label out of range [0, {self.parent.num_classes})")
        idx.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "labels", y)

    @property
    def d_k(self) -> int:
        return self.indices.size

    @property
    def num_classes(self) -> int:
        return self.parent.num_classes

    @property
    def features(self) -> np.ndarray:
        # materializes a copy; callers that train repeatedly should hold on to it
        return self.parent.features[self.indices]

    @property
    def label_hist(self) -> np.ndarray:
        counts = np.bincount(self.labels, minlength=self.parent.num_classes)
        return counts / self.d_k


@dataclass(frozen=True)
class PartitionSpec:
    """Knobs for the Zipf-quantity, Dirichlet-class-mix partition."""

    num_clients: int
    zipf_exponent: float = 1.0
    dirichlet_alpha: float = 0.1
    max_classes_per_client: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigurationError(f"num_clients must be >= 1, got {self.num_clients}")
        if self.dirichlet_alpha <= 0:
            raise ConfigurationError(f"dirichlet_alpha must be > 0, got {self.dirichlet_alpha}")
        if self.max_classes_per_client < 1:
            raise ConfigurationError(
                f"max_classes_per_client must be >= 1, got {self.max_classes_per_client}")


# ---------------------------------------------------------------------------
# IDX files
# ---------------------------------------------------------------------------

def _be32(blob: bytes, offset: int, what: str) -> int:
    if len(blob) < offset + 4:
        raise DataFormatError(
            f"{what}: file truncated at offset {len(blob)}, need 4 bytes at offset {offset}")
    return int.from_bytes(blob[offset:offset + 4], "big")


def parse_idx(image_bytes: bytes, label_bytes: bytes, num_classes: int | None = None) -> Dataset:
    """Decode a big-endian IDX image/label file pair into a Dataset.

    Pixels are scaled by 1/255 into [0, 1] and images are flattened to rows.
    Malformed input raises DataFormatError naming the byte offset at fault.
    """
    magic = _be32(image_bytes, 0, "image file")
    if magic != IMAGE_MAGIC:
        raise DataFormatError(
            f"image file: bad magic 0x{magic:08x} at offset 0, expected 0x{IMAGE_MAGIC:08x}")
    count = _be32(image_bytes, 4, "image file")
    rows = _be32(image_bytes, 8, "image file")
    cols = _be32(image_bytes, 12, "image file")
    expected = 16 + count * rows * cols
    if len(image_bytes) != expected:
        raise DataFormatError(
            f"image file: payload ends at offset {len(image_bytes)}, expected {expected} "
            f"for {count} images of {rows}x{cols}")

    magic = _be32(label_bytes, 0, "label file")
    if magic != LABEL_MAGIC:
        raise DataFormatError(
            f"label file: bad magic 0x{magic:08x} at offset 0, expected 0x{LABEL_MAGIC:08x}")
    label_count = _be32(label_bytes, 4, "label file")
    if len(label_bytes) != 8 + label_count:
        raise DataFormatError(
            f"label file: payload ends at offset {len(label_bytes)}, expected {8 + label_count}")
    if label_count != count:
        raise DataFormatError(
            f"label file: count {label_count} at offset 4 does not match image count {count}")

    pixels = np.frombuffer(image_bytes, dtype=np.uint8, offset=16)
    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(label_bytes, dtype=np.uint8, offset=8).astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 1
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        raise DataFormatError(
            f"label file: label {labels[bad[0]]} at offset {8 + int(bad[0])} "
            f"exceeds class count {num_classes}")
    return Dataset(features, labels, num_classes)


def _read_maybe_gzip(path) -> bytes:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] == b"\x1f\x8b":
        blob = gzip.decompress(blob)
    return blob


def load_idx_pair(image_path, label_path, num_classes: int | None = None) -> Dataset:
    """Read an IDX image/label pair from disk, transparently ungzipping."""
    return parse_idx(_read_maybe_gzip(image_path), _read_maybe_gzip(label_path), num_classes)


# ---------------------------------------------------------------------------
# Partitioning
# ---------------------------------------------------------------------------

def largest_remainder(quotas: np.ndarray, total: int) -> np.ndarray:
    """Round nonnegative quotas to integers that sum exactly to total.

    Floors everything, then hands the leftover units to the largest
    fractional remainders; ties go to the lower index.
    """
    quotas = np.asarray(quotas, dtype=np.float64)
    if quotas.size == 0:
        raise ConfigurationError("largest_remainder needs at least one quota")
    base = np.floor(quotas).astype(np.int64)
    leftover = int(total) - int(base.sum())
    if leftover < 0:
        raise ConfigurationError(f"quotas sum past total by {-leftover}")
    if leftover > quotas.size:
        raise ConfigurationError(
            f"cannot place {leftover} leftover units across {quotas.size} slots")
    order = np.argsort(-(quotas - base), kind="stable")
    base[order[:leftover]] += 1
    return base


def zipf_counts(pool_size: int, num_clients: int, exponent: float) -> np.ndarray:
    """Sample counts proportional to rank^(-exponent), summing to pool_size."""
    ranks = np.arange(1, num_clients + 1, dtype=np.float64)
    weights = ranks ** (-exponent)
    quotas = pool_size * weights / weights.sum()
    return largest_remainder(quotas, pool_size)


def partition(ds: Dataset, spec: PartitionSpec) -> list[ClientDataset]:
    """Split a pool into disjoint client shards.

    Client k (rank k, 1-based) targets a Zipf-weighted share of the pool.
    Its class mix is a Dirichlet draw truncated to the top
    max_classes_per_client classes and renormalized. Samples come from
    per-class pools without replacement; when a class runs dry the unmet
    demand spills to the client's next-ranked class, then back across chosen
    classes with leftovers, and finally to newly opened classes while the
    client holds fewer than max_classes_per_client distinct ones. The class
    cap is hard, so a late client can fall short of its target when every
    class it may touch is dry; the shortfall is logged. Every client ends up
    non-empty. Fully determined by spec.seed.
    """
    n = len(ds)
    k = spec.num_clients
    if n < k:
        raise ConfigurationError(f"pool of {n} cannot cover {k} clients")
    rng = np.random.default_rng(spec.seed)
    counts = zipf_counts(n, k, spec.zipf_exponent)
    c = ds.num_classes

    pools = []
    cursors = np.zeros(c, dtype=np.int64)
    for cls in range(c):
        members = np.flatnonzero(ds.labels == cls)
        pools.append(rng.permutation(members))

    def take(cls: int, want: int) -> np.ndarray:
        avail = pools[cls].size - cursors[cls]
        got = min(want, int(avail))
        out = pools[cls][cursors[cls]:cursors[cls] + got]
        cursors[cls] += got
        return out

    clients = []
    m = min(spec.max_classes_per_client, c)
    for i in range(k):
        probs = rng.dirichlet(np.full(c, spec.dirichlet_alpha))
        top = np.argsort(-probs, kind="stable")[:m]
        top_probs = probs[top] / probs[top].sum()
        wants = largest_remainder(counts[i] * top_probs, int(counts[i]))
        chosen = []
        used = set()
        deficit = 0
        for cls, want in zip(top, wants):
            got = take(int(cls), int(want) + deficit)
            deficit = int(want) + deficit - got.size
            if got.size:
                used.add(int(cls))
            chosen.append(got)
        if deficit > 0:
            # a class further down the ranking may have run dry while an
            # earlier one kept leftovers; sweep the chosen classes again
            for cls in top:
                if deficit <= 0:
                    break
                got = take(int(cls), deficit)
                deficit -= got.size
                if got.size:
                    used.add(int(cls))
                chosen.append(got)
        if deficit > 0 and len(used) < m:
            # chosen classes exhausted: open the fullest remaining classes,
            # but never hold samples from more than m distinct classes
            remaining = np.array([pools[cls].size - cursors[cls] for cls in range(c)])
            for cls in np.argsort(-remaining, kind="stable"):
                if deficit <= 0 or len(used) >= m:
                    break
                if int(cls) in used:
                    continue
                got = take(int(cls), deficit)
                deficit -= got.size
                if got.size:
                    used.add(int(cls))
                chosen.append(got)
        picked = np.concatenate(chosen) if chosen else np.empty(0, dtype=np.int64)
        if picked.size == 0:
            raise ConfigurationError(
                f"pool exhausted before client {i} received any samples")
        if deficit > 0:
            logger.warning(
                "client %d short %d of %d samples: its %d allowed classes ran dry",
                i, deficit, int(counts[i]), m)
        picked = np.sort(picked)
        clients.append(ClientDataset(i, ds, picked, ds.labels[picked].copy()))
    return clients


def split_holdout(ds: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Split off a held-out slice (e.g. a validation set) from a pool.

    Returns (holdout, remainder); both are standalone Datasets.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigurationError(f"holdout fraction must be in (0, 1), got {fraction}")
    n = len(ds)
    h = max(1, int(round(n * fraction)))
    perm = np.random.default_rng(seed).permutation(n)
    held, rest = np.sort(perm[:h]), np.sort(perm[h:])
    return (
        Dataset(ds.features[held], ds.labels[held], ds.num_classes),
        Dataset(ds.features[rest], ds.labels[rest], ds.num_classes),
    )


# ---------------------------------------------------------------------------
# Label statistics and corruption
# ---------------------------------------------------------------------------

def emd(p: np.ndarray, q: np.ndarray) -> float:
    """L1 distance between two discrete distributions over the same classes."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ConfigurationError(f"distributions must be 1-D and equal length, "
                                 f"got {p.shape} and {q.shape}")
    for name, v in (("first", p), ("second", q)):
        if (v < 0).any():
            raise ConfigurationError(f"{name} distribution has negative entries")
        if abs(v.sum() - 1.0) > 1e-9:
            raise ConfigurationError(f"{name} distribution sums to {v.sum()!r}, not 1")
    return float(np.abs(p - q).sum())


def uniform_benchmark(num_classes: int) -> np.ndarray:
    """The balanced reference distribution used to score client skew."""
    return np.full(num_classes, 1.0 / num_classes)


def flip_labels(cd: ClientDataset, fraction: float, seed: int) -> ClientDataset:
    """Return a copy of a client with floor(fraction * d_k) labels flipped.

    Victim samples are chosen uniformly without replacement; each new label
    is drawn uniformly from the other classes, so a flip never maps a label
    to itself. The parent pool and sibling clients are unaffected.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ConfigurationError(f"flip fraction must be in [0, 1], got {fraction}")
    c = cd.num_classes
    if c < 2:
        raise ConfigurationError("cannot flip labels with fewer than 2 classes")
    count = int(np.floor(fraction * cd.d_k))
    labels = cd.labels.copy()
    if count > 0:
        rng = np.random.default_rng(seed)
        victims = rng.choice(cd.d_k, size=count, replace=False)
        offsets = rng.integers(1, c, size=count)
        labels[victims] = (labels[victims] + offsets) % c
    return ClientDataset(cd.client_id, cd.parent, cd.indices, labels)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def synthetic_pair(num_classes: int, dim: int, train_count: int, test_count: int,
                   spread: float, seed: int) -> tuple[Dataset, Dataset]:
    """Generate matching train/test pools of Gaussian class blobs.

    Class means are drawn once and shared by both splits; samples add
    isotropic noise and are clipped into [0, 1]. Deterministic in seed.
    """
    if num_classes < 2 or dim < 1:
        raise ConfigurationError("synthetic data needs >= 2 classes and >= 1 dim")
    if spread <= 0:
        raise ConfigurationError(f"spread must be > 0, got {spread}")
    rng = np.random.default_rng(seed)
    means = rng.uniform(0.25, 0.75, size=(num_classes, dim))

    def make(count: int) -> Dataset:
        per = largest_remainder(np.full(num_classes, count / num_classes), count)
        labels = np.repeat(np.arange(num_classes), per)
        x = means[labels] + rng.normal(0.0, spread, size=(count, dim))
        np.clip(x, 0.0, 1.0, out=x)
        perm = rng.permutation(count)
        return Dataset(x[perm], labels[perm], num_classes)

    return make(train_count), make(test_count)

"""Synthetic domains, IDX loading, known/unknown splits and step streams."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import BudgetError, DataError, FormatError, SpecError, SplitError

FEATURE_CLAMP = 1e6


@dataclass
class Dataset:
    """Parallel arrays: features, global class labels, domain ids, instance ids."""

    X: np.ndarray
    y: np.ndarray
    domain: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2:
            self.X = self.X.reshape(len(self.X), -1)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.domain = np.asarray(self.domain, dtype=str)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        n = len(self.X)
        if not (len(self.y) == len(self.domain) == len(self.ids) == n):
            raise DataError("dataset arrays have different lengths")

    def __len__(self):
        return len(self.X)

    @property
    def n_features(self):
        return self.X.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx], self.domain[idx], self.ids[idx])

    def classes(self):
        return np.unique(self.y)

    @classmethod
    def empty(cls, n_features):
        return cls(np.empty((0, n_features)), [], [], [])

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        if not parts:
            raise DataError("nothing to concatenate")
        return cls(
            np.concatenate([p.X for p in parts]),
            np.concatenate([p.y for p in parts]),
            np.concatenate([p.domain for p in parts]),
            np.concatenate([p.ids for p in parts]),
        )

    def to_csv(self):
        """One record per instance: id, domain, class, features (17 sig. digits)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["instance_id", "domain_id", "class_label"]
                   + [f"x{j}" for j in range(self.n_features)])
        for i in range(len(self)):
            w.writerow([int(self.ids[i]), self.domain[i], int(self.y[i])]
                       + [format(v, ".17g") for v in self.X[i]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][:3] != ["instance_id", "domain_id", "class_label"]:
            raise FormatError("dataset file lacks the expected header")
        d = len(rows[0]) - 3
        body = rows[1:]
        try:
            X = np.array([[float(v) for v in r[3:]] for r in body]).reshape(len(body), d)
            return cls(X, [int(r[2]) for r in body], [r[1] for r in body],
                       [int(r[0]) for r in body])
        except (ValueError, IndexError) as exc:
            raise FormatError(f"bad dataset record: {exc}") from None


def save_dataset(data, path):
    Path(path).write_text(data.to_csv())


def load_dataset(path):
    return Dataset.from_csv(Path(path).read_text())


@dataclass
class DomainSpec:
    """Isotropic Gaussian mixture, one component per class.

    ``budget`` maps a split name (e.g. ``"train"``, ``"stream"``) to the
    number of instances drawn per class for that split.
    """

    domain_id: str
    means: np.ndarray
    sigma: float
    budget: dict = field(default_factory=lambda: {"stream": 100})
    class_labels: list | None = None

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        if self.class_labels is None:
            self.class_labels = list(range(len(self.means)))

    @property
    def class_count(self):
        return self.means.shape[0]

    @property
    def feature_dim(self):
        return self.means.shape[1]

    def validate(self):
        k, d = self.means.shape
        if k < 2:
            raise SpecError(f"{self.domain_id}: need at least 2 classes")
        if d < 2:
            raise SpecError(f"{self.domain_id}: need feature_dim >= 2")
        if not np.all(np.isfinite(self.means)):
            raise SpecError(f"{self.domain_id}: non-finite class mean")
        if not self.sigma > 0:
            raise SpecError(f"{self.domain_id}: sigma must be > 0")
        for a in range(k):
            for b in range(a + 1, k):
                if np.array_equal(self.means[a], self.means[b]):
                    raise SpecError(f"{self.domain_id}: classes {a} and {b} share a mean")
        if len(self.class_labels) != k or len(set(self.class_labels)) != k:
            raise SpecError(f"{self.domain_id}: class_labels must be {k} distinct values")
        if not self.budget:
            raise SpecError(f"{self.domain_id}: empty budget")
        for split, n in self.budget.items():
            if int(n) < 1:
                raise SpecError(f"{self.domain_id}: budget for {split!r} must be >= 1")


def axis_means(feature_dim, axes, scale):
    """Class means at ``+scale`` and ``-scale`` along each listed axis."""
    means = []
    for ax in axes:
        for sign in (1.0, -1.0):
            m = np.zeros(feature_dim)
            m[ax] = sign * scale
            means.append(m)
    return np.array(means)


def generate_gaussian_domain(spec, seed, split="stream", id_offset=0):
    """Draw ``budget[split]`` instances per class from ``N(mean_c, sigma^2 I)``.

    Instances are ordered class by class; ids run from ``id_offset``.
    """
    spec.validate()
    if split not in spec.budget:
        raise SpecError(f"{spec.domain_id}: no budget for split {split!r}")
    n = int(spec.budget[split])
    rng = np.random.default_rng(seed)
    k, d = spec.means.shape
    X = np.empty((k * n, d))
    for c in range(k):
        X[c * n:(c + 1) * n] = spec.means[c] + spec.sigma * rng.standard_normal((n, d))
    X = np.clip(X, -FEATURE_CLAMP, FEATURE_CLAMP)
    y = np.repeat(np.asarray(spec.class_labels, dtype=np.int64), n)
    ids = id_offset + np.arange(k * n)
    return Dataset(X, y, np.full(k * n, spec.domain_id), ids)


def split_known_unknown(data, known_classes, unknown_domain_id=None):
    """Partition ``data`` by class; the unknown part gets a fresh domain id."""
    known = set(np.asarray(known_classes).tolist())
    present = set(data.classes().tolist())
    if not known or not known < present:
        raise SplitError("known_classes must be a non-empty proper subset of the classes")
    mask = np.isin(data.y, list(known))
    unknown = data.subset(np.flatnonzero(~mask))
    if unknown_domain_id is None:
        unknown_domain_id = f"{data.domain[0]}-unknown" if len(data) else "unknown"
    unknown.domain = np.full(len(unknown), unknown_domain_id)
    return data.subset(np.flatnonzero(mask)), unknown


_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def read_idx_array(path):
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: too short for an IDX header")
    if raw[0] != 0 or raw[1] != 0 or raw[2] not in _IDX_DTYPES:
        raise FormatError(f"{path}: bad IDX magic")
    dtype, ndim = _IDX_DTYPES[raw[2]], raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX header")
    shape = tuple(int.from_bytes(raw[4 + 4 * i:8 + 4 * i], "big") for i in range(ndim))
    count = int(np.prod(shape)) if shape else 0
    if len(raw) != header + count * dtype.itemsize:
        raise FormatError(f"{path}: payload size does not match header {shape}")
    return np.frombuffer(raw, dtype=dtype, offset=header, count=count).reshape(shape), raw[2]


def load_idx(images_path, labels_path=None, domain_id="idx", id_offset=0):
    """Load an IDX image file (optionally with labels) as a flat-feature Dataset.

    Unsigned-byte pixels are scaled to [0, 1].
    """
    arr, code = read_idx_array(images_path)
    if arr.ndim < 1:
        raise FormatError(f"{images_path}: IDX file has no dimensions")
    n = arr.shape[0]
    X = arr.reshape(n, -1).astype(float)
    if code == 0x08:
        X /= 255.0
    if labels_path is not None:
        labels, _ = read_idx_array(labels_path)
        if labels.shape != (n,):
            raise FormatError(f"{labels_path}: expected {n} labels")
        y = labels.astype(np.int64)
    else:
        y = np.zeros(n, dtype=np.int64)
    return Dataset(X, y, np.full(n, domain_id), id_offset + np.arange(n))


def write_idx(path, array):
    """Write an unsigned-byte IDX file (used for fixtures and export)."""
    array = np.asarray(array, dtype=np.uint8)
    header = bytes([0, 0, 0x08, array.ndim])
    header += b"".join(int(s).to_bytes(4, "big") for s in array.shape)
    Path(path).write_bytes(header + array.tobytes())


@dataclass
class StreamSchedule:
    """Per-step arrivals: ``counts[d]`` instances of domain ``d`` at every step
    from ``introduction[d]`` onwards; ``final_test[d]`` reserved for the
    held-out batch."""

    known_domain: str
    counts: dict
    introduction: dict
    final_test: dict
    steps: int = 30
    seed: int = 0

    def validate(self):
        if self.steps < 1:
            raise SpecError("steps must be >= 1")
        if self.known_domain not in self.counts:
            raise SpecError("the known domain must be scheduled")
        if self.introduction.get(self.known_domain, 1) != 1 or self.counts[self.known_domain] < 1:
            raise SpecError("the known domain must appear at every step")
        for d, c in self.counts.items():
            if int(c) < 0:
                raise SpecError(f"negative count for {d}")
            step = int(self.introduction.get(d, 1))
            if not 1 <= step <= self.steps:
                raise SpecError(f"introduction step for {d} outside [1, {self.steps}]")
        for d, c in self.final_test.items():
            if d not in self.counts:
                raise SpecError(f"final_test references unscheduled domain {d}")
            if int(c) < 0:
                raise SpecError(f"negative final_test count for {d}")

    def domains(self):
        return list(self.counts)

    def arrivals(self, domain, step):
        return int(self.counts[domain]) if step >= int(self.introduction.get(domain, 1)) else 0

    def total(self, domain):
        return sum(self.arrivals(domain, s) for s in range(1, self.steps + 1))


@dataclass
class StepBatch:
    step: int
    data: Dataset

    def __len__(self):
        return len(self.data)


def build_stream(domains, schedule):
    """Cut per-domain pools into step batches and a held-out final batch.

    ``domains`` maps domain id to its stream pool.  Sampling is without
    replacement; the final batch is reserved before any step is filled.
    """
    schedule.validate()
    rng = np.random.default_rng(schedule.seed)
    pools = {}
    final_parts = []
    for d in schedule.domains():
        if d not in domains:
            raise BudgetError(f"schedule references missing domain {d}")
        pool = domains[d]
        need = schedule.total(d) + int(schedule.final_test.get(d, 0))
        if len(pool) < need:
            raise BudgetError(f"domain {d}: need {need} instances, have {len(pool)}")
        order = rng.permutation(len(pool))
        n_final = int(schedule.final_test.get(d, 0))
        final_parts.append(pool.subset(order[:n_final]))
        pools[d] = (pool, order[n_final:])
    cursor = {d: 0 for d in pools}
    batches = []
    for step in range(1, schedule.steps + 1):
        parts = []
        for d in schedule.domains():
            k = schedule.arrivals(d, step)
            pool, order = pools[d]
            parts.append(pool.subset(order[cursor[d]:cursor[d] + k]))
            cursor[d] += k
        batch = Dataset.concat(parts)
        batches.append(StepBatch(step, batch.subset(rng.permutation(len(batch)))))
    final = Dataset.concat(final_parts)
    return batches, final.subset(rng.permutation(len(final)))

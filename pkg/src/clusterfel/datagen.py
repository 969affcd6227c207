"""Synthetic client datasets with controllable label or feature skew.

Features are Gaussian blobs: class ``y`` is centred at ``radius * e_y`` for an
orthonormal set ``e_0 .. e_{Y-1}`` in ``R^d`` with unit covariance, so any two
class means are ``radius * sqrt(2)`` apart and a linear classifier does well.
"""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from . import hetero
from .errors import ConstraintViolation, ValidationError
from .structures import ClusterAssignment, SharingPlan

SKEW_MODES = ("single_class_fraction", "dirichlet", "feature_noise", "iid")


@dataclass(frozen=True)
class Scenario:
    """Partition recipe.

    ``skew_mode``:
      * ``single_class_fraction``: the first ``round(fraction*K)`` clients each
        hold one distinct class; the rest sample labels uniformly.
      * ``dirichlet``: per-client label law drawn from Dirichlet(alpha).
      * ``feature_noise``: IID labels, client ``k`` adds N(0, levels[k]^2)
        noise to its features.
      * ``iid``: uniform labels everywhere.
    """

    num_clients: int
    num_classes: int
    samples_per_client: tuple[int, ...]
    skew_mode: str = "single_class_fraction"
    fraction: float = 0.5
    alpha: float = 0.5
    noise_levels: tuple[float, ...] = ()
    dim: int = 32
    radius: float = 4.0 * math.sqrt(2.0)
    test_fraction: float = 0.2
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "samples_per_client", tuple(int(n) for n in self.samples_per_client))
        object.__setattr__(self, "noise_levels", tuple(float(s) for s in self.noise_levels))
        if self.num_clients < 2:
            raise ValidationError("a scenario needs at least 2 clients")
        if self.num_classes < 2:
            raise ValidationError("a scenario needs at least 2 classes")
        if len(self.samples_per_client) != self.num_clients:
            raise ValidationError("samples_per_client must list one count per client")
        if min(self.samples_per_client) <= 0:
            raise ValidationError("all sample counts must be positive")
        if self.skew_mode not in SKEW_MODES:
            raise ValidationError(f"unknown skew_mode {self.skew_mode!r}")
        if self.skew_mode == "dirichlet" and not self.alpha > 0:
            raise ValidationError("dirichlet alpha must be positive")
        if self.skew_mode == "single_class_fraction":
            if not 0 <= self.fraction <= 1:
                raise ValidationError("fraction must lie in [0, 1]")
            if self.num_single_class > self.num_classes:
                raise ValidationError(
                    f"{self.num_single_class} single-class clients need distinct classes "
                    f"but only {self.num_classes} exist"
                )
        if self.skew_mode == "feature_noise":
            if len(self.noise_levels) != self.num_clients:
                raise ValidationError("feature_noise needs one noise level per client")
            if min(self.noise_levels) < 0:
                raise ValidationError("noise levels must be non-negative")
        if self.dim < self.num_classes:
            raise ValidationError("dim must be at least num_classes for orthonormal class means")
        if not 0 < self.test_fraction < 1:
            raise ValidationError("test_fraction must lie in (0, 1)")

    @property
    def num_single_class(self) -> int:
        if self.skew_mode != "single_class_fraction":
            return 0
        return int(round(self.fraction * self.num_clients))

    @classmethod
    def from_dict(cls, d) -> "Scenario":
        d = dict(d)
        if "samples_per_client" not in d:
            n = int(d.pop("samples", 200))
            d["samples_per_client"] = [n] * int(d["num_clients"])
        else:
            d.pop("samples", None)
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "num_clients": self.num_clients, "num_classes": self.num_classes,
            "samples_per_client": list(self.samples_per_client), "skew_mode": self.skew_mode,
            "fraction": self.fraction, "alpha": self.alpha, "noise_levels": list(self.noise_levels),
            "dim": self.dim, "radius": self.radius, "test_fraction": self.test_fraction,
            "rng_seed": self.rng_seed,
        }


@dataclass
class ClientDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    label_distribution: np.ndarray = field(init=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValidationError("features must be (n, d) with one label per row")
        self.label_distribution = hetero.histogram(self.labels, self.num_classes)

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])


@dataclass
class Partition:
    clients: list[ClientDataset]
    global_distribution: np.ndarray
    test: ClientDataset
    class_means: np.ndarray
    pseudo_distributions: np.ndarray | None = None

    def as_pairs(self, pseudo: bool = False):
        """``(n_k, p_k)`` pairs for the hetero routines."""
        if pseudo:
            if self.pseudo_distributions is None:
                raise ValidationError("this partition carries no feature-statistic distributions")
            return [(c.n, p) for c, p in zip(self.clients, self.pseudo_distributions)]
        return [(c.n, c.label_distribution) for c in self.clients]

    @property
    def counts(self) -> np.ndarray:
        return np.array([c.n for c in self.clients], dtype=float)


def class_means(num_classes: int, dim: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, num_classes)))
    return radius * q.T


def _client_label_laws(sc: Scenario, rng: np.random.Generator) -> np.ndarray:
    K, Y = sc.num_clients, sc.num_classes
    laws = np.full((K, Y), 1.0 / Y)
    if sc.skew_mode == "single_class_fraction":
        classes = rng.permutation(Y)[: sc.num_single_class]
        for k, y in enumerate(classes):
            laws[k] = 0.0
            laws[k, y] = 1.0
    elif sc.skew_mode == "dirichlet":
        laws = rng.dirichlet(np.full(Y, sc.alpha), size=K)
    return laws


def _draw_labels(law: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Labels whose histogram is the largest-remainder rounding of ``n * law``."""
    raw = law * n
    counts = np.floor(raw).astype(int)
    short = n - counts.sum()
    if short:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    labels = np.repeat(np.arange(law.size), counts)
    return rng.permutation(labels)


def _blobs(labels, means, noise, rng) -> np.ndarray:
    x = means[labels] + rng.standard_normal((labels.size, means.shape[1]))
    if noise > 0:
        x = x + noise * rng.standard_normal(x.shape)
    return x


def feature_pseudo_distribution(noise: float, dim: int, num_bins: int) -> np.ndarray:
    """Law of the binned statistic ||x - mu_y||^2 / d for a noisy client.

    With total per-coordinate variance ``s2 = 1 + noise^2`` the statistic is
    ``s2 * chi2(d) / d``.  Bin edges are the ``num_bins``-quantiles of the
    noise-free law, so a noiseless client is exactly uniform over bins.
    """
    edges = stats.chi2.ppf(np.linspace(0, 1, num_bins + 1), dim)
    s2 = 1.0 + noise**2
    cdf = stats.chi2.cdf(edges / s2, dim)
    p = np.diff(cdf)
    return p / p.sum()


def generate(sc: Scenario) -> Partition:
    """Deterministic partition plus an IID test pool of ``test_fraction`` of the data."""
    rng = np.random.default_rng(sc.rng_seed)
    means = class_means(sc.num_classes, sc.dim, sc.radius, rng)
    laws = _client_label_laws(sc, rng)
    streams = rng.spawn(sc.num_clients + 1)
    clients = []
    for k in range(sc.num_clients):
        r = streams[k]
        labels = _draw_labels(laws[k], sc.samples_per_client[k], r)
        noise = sc.noise_levels[k] if sc.skew_mode == "feature_noise" else 0.0
        clients.append(ClientDataset(_blobs(labels, means, noise, r), labels, sc.num_classes))
    pooled = np.concatenate([c.labels for c in clients])
    g = hetero.histogram(pooled, sc.num_classes)
    n_total = pooled.size
    n_test = max(sc.num_classes, int(round(sc.test_fraction * n_total / (1 - sc.test_fraction))))
    r = streams[-1]
    test_labels = _draw_labels(g, n_test, r)
    test = ClientDataset(_blobs(test_labels, means, 0.0, r), test_labels, sc.num_classes)
    pseudo = None
    if sc.skew_mode == "feature_noise":
        pseudo = np.vstack([
            feature_pseudo_distribution(s, sc.dim, sc.num_classes) for s in sc.noise_levels
        ])
    return Partition(clients, g, test, means, pseudo)


def apply_sharing(
    clients: Sequence[ClientDataset],
    assignment: ClusterAssignment,
    plan: SharingPlan | dict,
    rng_seed: int,
) -> list[ClientDataset]:
    """Copy a uniform subset of each head's data to every member of its cluster.

    All members of one cluster receive the same rows (one multicast payload).
    Heads and unclustered clients are returned unchanged.  Volumes are
    rounded to the nearest integer.
    """
    volumes = plan.volumes if isinstance(plan, SharingPlan) else dict(plan)
    unknown = set(volumes) - set(assignment.heads)
    if unknown:
        raise ValidationError(f"plan references unknown heads {sorted(unknown)}")
    assignment.check_covers(len(clients))
    out = list(clients)
    for h in assignment.heads:
        n_s = int(round(float(volumes.get(h, 0))))
        if n_s < 0 or n_s > clients[h].n:
            raise ConstraintViolation(f"head {h}: volume {n_s} outside [0, {clients[h].n}]")
        members = assignment.members[h]
        if n_s == 0 or not members:
            continue
        rng = np.random.default_rng([int(rng_seed), h])
        idx = np.sort(rng.choice(clients[h].n, size=n_s, replace=False))
        xs, ys = clients[h].features[idx], clients[h].labels[idx]
        for c in members:
            base = clients[c]
            out[c] = ClientDataset(
                np.vstack([base.features, xs]), np.concatenate([base.labels, ys]), base.num_classes
            )
    return out


def with_fraction(sc: Scenario, fraction: float) -> Scenario:
    return replace(sc, fraction=fraction)


# --- binary dump / IDX loading -------------------------------------------------

_HEADER = struct.Struct("<III")


def dump_client(ds: ClientDataset, path: Path) -> None:
    """Header (d, n_k, Y) as little-endian u32, then f32 features, then u16 labels."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(ds.dim, ds.n, ds.num_classes))
        fh.write(ds.features.astype("<f4").tobytes())
        fh.write(ds.labels.astype("<u2").tobytes())


def load_client(path: Path) -> ClientDataset:
    raw = Path(path).read_bytes()
    d, n, y = _HEADER.unpack_from(raw)
    off = _HEADER.size
    feats = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    labels = np.frombuffer(raw, dtype="<u2", count=n, offset=off + 4 * n * d)
    return ClientDataset(feats.astype(float), labels.astype(np.int64), y)


def dump_partition(part: Partition, directory: Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, c in enumerate(part.clients):
        p = directory / f"client_{k:04d}.bin"
        dump_client(c, p)
        paths.append(p)
    return paths


_IDX_TYPES = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def read_idx(path) -> np.ndarray:
    """Read an IDX file (optionally gzipped): images 0x00000803, labels 0x00000801."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise ValidationError(f"{path}: not an IDX file")
    dtype, ndim = raw[2], raw[3]
    if dtype not in _IDX_TYPES:
        raise ValidationError(f"{path}: unsupported IDX element type 0x{dtype:02x}")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    data = np.frombuffer(raw, dtype=_IDX_TYPES[dtype], offset=4 + 4 * ndim)
    if data.size != int(np.prod(dims)):
        raise ValidationError(f"{path}: payload size does not match header dims {dims}")
    return data.reshape(dims)


def load_idx_dataset(images_path, labels_path, num_classes: int = 10) -> ClientDataset:
    """Flattened images scaled to [0, 1] with their labels."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ValidationError("image and label files disagree on the number of samples")
    feats = images.reshape(images.shape[0], -1).astype(float) / 255.0
    return ClientDataset(feats, labels.astype(np.int64), num_classes)

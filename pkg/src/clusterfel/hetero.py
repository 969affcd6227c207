"""Label-distribution arithmetic: EMD, sharing-induced mixing, skewness scores.

The EMD used throughout is the l1 distance between a client's label histogram
and the global one, so it lives in [0, 2].
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionError, ValidationError
from .structures import ClusterAssignment, SharingPlan

NORM_TOL = 1e-9


def as_distribution(p, name: str = "distribution") -> np.ndarray:
    """Validate and return ``p`` as a float array summing to one."""
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise DimensionError(f"{name} must be a 1-d vector with at least 2 classes")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite entries")
    if np.any(arr < -NORM_TOL) or np.any(arr > 1 + NORM_TOL):
        raise ValidationError(f"{name} has entries outside [0, 1]")
    if abs(arr.sum() - 1.0) > NORM_TOL:
        raise ValidationError(f"{name} sums to {arr.sum():.12g}, not 1")
    return arr


def histogram(labels, num_classes: int) -> np.ndarray:
    """Normalized label histogram."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValidationError("cannot build a histogram from zero labels")
    counts = np.bincount(labels, minlength=num_classes).astype(float)
    if counts.size != num_classes:
        raise ValidationError(f"label {labels.max()} out of range for {num_classes} classes")
    return counts / counts.sum()


def emd(p, g) -> float:
    """l1 distance between two label distributions."""
    p = as_distribution(p, "p")
    g = as_distribution(g, "g")
    if p.shape != g.shape:
        raise DimensionError(f"length mismatch: {p.size} vs {g.size}")
    return float(np.abs(p - g).sum())


def _counts_and_dists(clients) -> tuple[np.ndarray, np.ndarray]:
    clients = list(clients)
    if not clients:
        raise ValidationError("empty client list")
    counts = np.array([float(n) for n, _ in clients])
    if np.any(counts <= 0):
        raise ValidationError("all client sample counts must be positive")
    dists = [as_distribution(p, f"client {i}") for i, (_, p) in enumerate(clients)]
    if len({d.size for d in dists}) != 1:
        raise DimensionError("clients disagree on the number of classes")
    return counts, np.vstack(dists)


def average_emd(clients: Sequence[tuple[float, Sequence[float]]], g) -> float:
    """Sample-count weighted mean of per-client EMDs.

    ``clients`` is a sequence of ``(n_k, p_k)`` pairs.
    """
    counts, dists = _counts_and_dists(clients)
    g = as_distribution(g, "g")
    if g.size != dists.shape[1]:
        raise DimensionError("global distribution length differs from client distributions")
    per = np.abs(dists - g).sum(axis=1)
    return float(np.dot(counts / counts.sum(), per))


def mix_distribution(n_k: float, p_k, n_s: float, p_m) -> tuple[float, np.ndarray]:
    """Local distribution after receiving ``n_s`` samples drawn from ``p_m``."""
    if n_k <= 0:
        raise ValidationError("receiving client must hold at least one sample")
    if n_s < 0:
        raise ValidationError("shared volume must be non-negative")
    p_k = as_distribution(p_k, "p_k")
    p_m = as_distribution(p_m, "p_m")
    if p_k.shape != p_m.shape:
        raise DimensionError("p_k and p_m have different lengths")
    n_new = n_k + n_s
    return n_new, (n_k * p_k + n_s * p_m) / n_new


def _volume_map(plan) -> Mapping[int, float]:
    if plan is None:
        return {}
    if isinstance(plan, SharingPlan):
        return plan.volumes
    return plan


def mixed_state(
    counts, dists, assignment: ClusterAssignment, plan
) -> tuple[np.ndarray, np.ndarray]:
    """Post-sharing sample counts and distributions for every client.

    Heads and clients outside any cluster keep their own data.
    """
    counts = np.asarray(counts, dtype=float)
    dists = np.asarray(dists, dtype=float)
    volumes = _volume_map(plan)
    unknown = set(volumes) - set(assignment.heads)
    if unknown:
        raise ValidationError(f"plan references unknown heads {sorted(unknown)}")
    new_counts = counts.copy()
    new_dists = dists.copy()
    for h, cs in assignment.members.items():
        n_s = float(volumes.get(h, 0.0))
        if n_s < 0 or n_s > counts[h] + 1e-9:
            raise ValidationError(f"volume {n_s} for head {h} outside [0, {counts[h]}]")
        if n_s == 0.0 or not cs:
            continue
        idx = np.asarray(cs)
        new_counts[idx] = counts[idx] + n_s
        new_dists[idx] = (counts[idx, None] * dists[idx] + n_s * dists[h]) / new_counts[idx, None]
    return new_counts, new_dists


def post_sharing_average_emd(
    clients: Sequence[tuple[float, Sequence[float]]],
    assignment: ClusterAssignment,
    plan,
    g,
    normalize: bool = True,
) -> float:
    """Average EMD once every cluster member has received its head's share.

    With ``normalize=True`` (default) the per-client weights are
    ``n~_k / sum(n~)``.  With ``normalize=False`` they are ``n~_k / n`` using
    the pre-sharing total, which over-weights members and is exactly blind to
    shares coming from a head whose distribution equals ``g``.
    """
    counts, dists = _counts_and_dists(clients)
    g = as_distribution(g, "g")
    if assignment.clients and max(assignment.clients) >= len(counts):
        raise ValidationError("assignment references clients beyond the client list")
    new_counts, new_dists = mixed_state(counts, dists, assignment, plan)
    per = np.abs(new_dists - g).sum(axis=1)
    denom = new_counts.sum() if normalize else counts.sum()
    return float(np.dot(new_counts, per) / denom)


@dataclass
class HeterogeneityReport:
    counts: dict[int, float]
    per_client_emd: dict[int, float]
    average_emd: float
    post_sharing_emd: float | None = None
    extra: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["client_id", "n_k", "emd"])
        for k in sorted(self.per_client_emd):
            w.writerow([k, _fmt(self.counts[k]), _fmt(self.per_client_emd[k])])
        w.writerow(["average", _fmt(sum(self.counts.values())), _fmt(self.average_emd)])
        if self.post_sharing_emd is not None:
            w.writerow(["post_sharing", "", _fmt(self.post_sharing_emd)])
        return buf.getvalue()


def _fmt(x: float) -> str:
    return repr(float(x)) if not float(x).is_integer() else str(int(x))


def heterogeneity_report(clients, g, assignment=None, plan=None, normalize=True) -> HeterogeneityReport:
    counts, dists = _counts_and_dists(clients)
    g = as_distribution(g, "g")
    per = np.abs(dists - g).sum(axis=1)
    post = None
    if assignment is not None:
        post = post_sharing_average_emd(clients, assignment, plan, g, normalize=normalize)
    return HeterogeneityReport(
        counts={k: float(c) for k, c in enumerate(counts)},
        per_client_emd={k: float(e) for k, e in enumerate(per)},
        average_emd=float(np.dot(counts / counts.sum(), per)),
        post_sharing_emd=post,
    )

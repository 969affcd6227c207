"""Reduced pipelines along one axis: heterogeneity level, shared fraction or cluster count.

Each sweep point is trained from ``(value, seed)`` alone, so points can run
in any order or process and the emitted CSVs stay identical.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import config as cfgmod
from . import daca, datagen, fedsim, hetero, pipeline
from .errors import ClusterFELError, ValidationError
from .structures import ClusterAssignment

log = logging.getLogger(__name__)

AXES = ("emd_level", "shared_fraction", "num_clusters")
ASSIGNMENTS = ("daca", "random_pairs", "none")


@dataclass
class SweepPoint:
    axis: str
    value: float
    seed: int
    emd: float = float("nan")
    rounds: int | None = None
    final_accuracy: float = float("nan")
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    error: str = ""


def random_pairs(num_clients: int, seed: int) -> ClusterAssignment:
    """Every cluster one head and one member, paired by a seeded permutation."""
    perm = np.random.default_rng([int(seed), 7]).permutation(num_clients)
    half = num_clients // 2
    members = {int(h): (int(m),) for h, m in zip(perm[:half], perm[half: 2 * half])}
    if num_clients % 2:
        members[int(perm[-1])] = ()
    return ClusterAssignment(tuple(sorted(members)), members)


def limit_clusters(a: ClusterAssignment, count: int) -> ClusterAssignment:
    """Keep the ``count`` sharing clusters with most members; the rest become singletons."""
    if count < 0:
        raise ValidationError("cluster count must be >= 0")
    ranked = sorted(a.sharing_heads, key=lambda h: (-len(a.members[h]), h))
    keep = set(ranked[:count])
    members = {}
    for h in a.heads:
        if h in keep or not a.members[h]:
            members[h] = a.members[h]
        else:
            members[h] = ()
            for m in a.members[h]:
                members[m] = ()
    return ClusterAssignment(tuple(sorted(members)), members)


def _assignment(cfg, part, seed, mode) -> ClusterAssignment:
    K = len(part.clients)
    if mode == "none":
        return ClusterAssignment.singletons(K)
    if mode == "random_pairs":
        return random_pairs(K, seed)
    pairs = part.as_pairs()
    topo = pipeline.make_topology(cfg, K, seed)
    return daca.daca_cluster(pipeline.cluster_graph(cfg, pairs, part.global_distribution, topo))


def run_point(cfg: Mapping, axis: str, value: float, seed: int, assignment: str = "daca",
              shared_fraction: float = 0.5) -> SweepPoint:
    """Train once at one sweep value.

    ``emd_level`` sets the single-class fraction of the scenario (no sharing);
    ``shared_fraction`` shares ``value * n_h`` samples from every head;
    ``num_clusters`` keeps that many clusters, each sharing ``shared_fraction * n_h``.
    """
    pt = SweepPoint(axis, float(value), int(seed))
    try:
        sc = cfgmod.scenario(cfg, seed)
        alpha = 0.0
        mode = assignment
        if axis == "emd_level":
            sc = replace(sc, skew_mode="single_class_fraction", fraction=float(value))
            mode = "none"
        elif axis == "shared_fraction":
            alpha = float(value)
        elif axis == "num_clusters":
            alpha = float(shared_fraction)
        else:
            raise ValidationError(f"unknown sweep axis {axis!r}; choose from {AXES}")
        if not 0 <= alpha <= 1:
            raise ValidationError("shared fraction must lie in [0, 1]")
        part = datagen.generate(sc)
        a = _assignment(cfg, part, seed, mode)
        if axis == "num_clusters":
            a = limit_clusters(a, int(value))
        plan = {h: float(round(alpha * part.clients[h].n)) for h in a.sharing_heads}
        clients = datagen.apply_sharing(part.clients, a, plan, seed)
        pt.emd = hetero.post_sharing_average_emd(part.as_pairs(), a, plan, part.global_distribution)
        tr = fedsim.run_federated(clients, part.test, cfgmod.train(cfg, seed))
        pt.rounds, pt.final_accuracy = tr.rounds_to_target, tr.final_accuracy
        pt.loss, pt.accuracy = tr.loss, tr.accuracy
    except ClusterFELError as exc:
        if isinstance(exc, ValidationError) and "sweep axis" in str(exc):
            raise
        log.warning("sweep point %s=%s seed %d failed: %s", axis, value, seed, exc)
        pt.error = f"{type(exc).__name__}: {exc}"
    return pt


def _run(args):
    return run_point(*args)


def sweep(cfg: Mapping, axis: str, values: Sequence[float], seeds: Sequence[int],
          assignment: str = "daca", shared_fraction: float = 0.5, workers: int = 1) -> list[SweepPoint]:
    if axis not in AXES:
        raise ValidationError(f"unknown sweep axis {axis!r}; choose from {AXES}")
    if assignment not in ASSIGNMENTS:
        raise ValidationError(f"unknown assignment {assignment!r}; choose from {ASSIGNMENTS}")
    if not values or not seeds:
        raise ValidationError("sweep needs at least one value and one seed")
    jobs = [(cfg, axis, v, s, assignment, shared_fraction) for v in values for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_run, jobs))
    return [_run(j) for j in jobs]


def mean_rounds(points: Sequence[SweepPoint]) -> dict[float, float | None]:
    """Seed-averaged rounds per value; ``None`` if any seed missed the target or failed."""
    out: dict[float, list] = {}
    for p in points:
        out.setdefault(p.value, []).append(p.rounds)
    return {v: (None if any(r is None for r in rs) else float(np.mean(rs))) for v, rs in out.items()}


def points_csv(points: Sequence[SweepPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["axis", "value", "seed", "emd", "rounds", "final_accuracy", "error"])
    for p in points:
        w.writerow([p.axis, repr(p.value), p.seed, repr(p.emd),
                    "" if p.rounds is None else p.rounds, repr(p.final_accuracy), p.error])
    return buf.getvalue()


def curves_csv(points: Sequence[SweepPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["axis", "value", "seed", "round", "loss", "accuracy"])
    for p in points:
        for t, (l, a) in enumerate(zip(p.loss, p.accuracy), start=1):
            w.writerow([p.axis, repr(p.value), p.seed, t, repr(l), repr(a)])
    return buf.getvalue()

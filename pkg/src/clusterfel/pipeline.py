"""End-to-end run: partition, cluster, calibrate the round law, optimise, train.

Every artifact is plain CSV or JSON with ``repr`` floats so reruns with the
same config and seed are byte-identical regardless of the worker count.
Artifacts are written as soon as their stage finishes, so a failed run keeps
everything produced before the failing stage.
"""

from __future__ import annotations

import contextlib
import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import config as cfgmod
from . import daca, datagen, fedsim, hetero, jfvo, roundsfit, wireless
from .errors import ClusterFELError
from .structures import ClusterAssignment, SharingPlan

log = logging.getLogger(__name__)

ARTIFACTS = ("summary.csv", "heterogeneity.csv", "clusters.csv", "cluster_links.csv", "plan.csv",
             "jfvo_trace.csv", "train_baseline.csv", "train_sharing.csv", "label_histograms.csv",
             "round_model.json")


@contextlib.contextmanager
def stage(name: str):
    """Re-raise package errors with the failing stage named, keeping the error type."""
    try:
        yield
    except ClusterFELError as exc:
        if str(exc).startswith("["):
            raise
        raise type(exc)(f"[{name}] {exc}") from exc


@dataclass
class Topology:
    positions: np.ndarray
    closeness: np.ndarray
    rates: np.ndarray


def make_topology(cfg: Mapping, num_clients: int, seed: int) -> Topology:
    """Random positions in a square and a seeded symmetric closeness matrix."""
    rng = np.random.default_rng([int(seed), 11])
    area = float(cfg["topology"]["area_m"])
    pos = rng.uniform(0.0, area, size=(num_clients, 2))
    c = np.triu(rng.uniform(0.0, 1.0, size=(num_clients, num_clients)), 1)
    close = c + c.T + np.eye(num_clients)
    rates = daca.pairwise_rates(daca.pairwise_distances(pos), cfgmod.radio(cfg))
    return Topology(pos, close, rates)


def cluster_graph(cfg: Mapping, pairs, g, topo: Topology) -> daca.ConstrainedGraph:
    t = cfg["topology"]
    return daca.build_graph(pairs, g, topo.closeness, topo.rates,
                            float(t["closeness_threshold"]), float(t["rate_threshold_bps"]))


def multicast_rates(assignment: ClusterAssignment, rates: np.ndarray) -> dict[int, float]:
    """Each sharing head's rate is its worst member link."""
    return {h: float(min(rates[h, m] for m in assignment.members[h])) for h in assignment.sharing_heads}


def calibration_levels(cfg: Mapping):
    """``(mean EMD, [(clients, test, seed)])`` per single-class fraction of the calibration staircase."""
    cal = cfg["calibration"]
    base = cfg["scenario"]
    K = int(cal["num_clients"])
    levels = []
    for frac in cal["fractions"]:
        runs, emds = [], []
        for s in cal["seeds"]:
            sc = datagen.Scenario(K, int(base["num_classes"]), [int(cal["samples"])] * K,
                                  "single_class_fraction", fraction=float(frac),
                                  dim=int(base.get("dim", 32)),
                                  radius=float(base.get("radius", datagen.Scenario.radius)),
                                  rng_seed=int(s))
            p = datagen.generate(sc)
            emds.append(hetero.average_emd(p.as_pairs(), p.global_distribution))
            runs.append((p.clients, p.test, int(s)))
        levels.append((float(np.mean(emds)), runs))
    return levels


def calibrate(cfg: Mapping, workers: int = 1) -> tuple[roundsfit.RoundModel, list[fedsim.RoundsPoint]]:
    """Fit the round law on a staircase of single-class fractions (or load a saved fit)."""
    cal = cfg["calibration"]
    if cal.get("round_model"):
        return roundsfit.RoundModel.load(cal["round_model"]), []
    points = fedsim.measure_rounds_curve(calibration_levels(cfg), cfgmod.train(cfg, 0), workers=workers)
    samples = [(p.emd, p.rounds) for p in points if not p.censored]
    return roundsfit.fit(samples), points


@dataclass
class PipelineResult:
    seed: int
    partition: datagen.Partition
    assignment: ClusterAssignment
    plan: SharingPlan
    round_model: roundsfit.RoundModel
    jfvo_result: jfvo.JfvoResult
    baseline: fedsim.TrainingTrace
    shared: fedsim.TrainingTrace
    summary: dict = field(default_factory=dict)
    calibration: list = field(default_factory=list)

    @property
    def improvement(self) -> float:
        return 1.0 - self.summary["total_delay_sharing"] / self.summary["total_delay_baseline"]


def _measured_rounds(trace: fedsim.TrainingTrace, max_rounds: int) -> tuple[int, bool]:
    """Rounds to target; a run that never reaches it counts as ``max_rounds`` (censored)."""
    if trace.rounds_to_target is None:
        return max_rounds, True
    return trace.rounds_to_target, False


class _Writer:
    def __init__(self, out_dir):
        self.dir = None if out_dir is None else Path(out_dir)
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def __call__(self, name: str, text: str) -> None:
        if self.dir is not None:
            (self.dir / name).write_text(text)


def run_pipeline(cfg: Mapping, seed: int | None = None, workers: int = 1,
                 round_model: roundsfit.RoundModel | None = None, out_dir=None) -> PipelineResult:
    seed = int(cfg["seed"] if seed is None else seed)
    write = _Writer(out_dir)
    with stage("partition"):
        part = datagen.generate(cfgmod.scenario(cfg, seed))
        pairs = part.as_pairs(pseudo=part.pseudo_distributions is not None)
        g = part.global_distribution
        K = len(part.clients)
    with stage("cluster"):
        topo = make_topology(cfg, K, seed)
        assignment = daca.daca_cluster(cluster_graph(cfg, pairs, g, topo))
        write("clusters.csv", assignment.to_csv())
    calibration: list = []
    with stage("calibrate"):
        if round_model is None:
            round_model, calibration = calibrate(cfg, workers)
        write("round_model.json", json.dumps(round_model.to_dict(), indent=2, sort_keys=True) + "\n")
        if calibration:
            write("calibration.csv", calibration_csv(calibration))
    with stage("optimize"):
        comp = cfgmod.compute(cfg)
        radio = cfgmod.radio(cfg)
        snap = wireless.link_snapshot(K, radio, cfgmod.fading(cfg, seed), comp)
        mrates = multicast_rates(assignment, topo.rates)
        ctx = jfvo.wireless_context(pairs, g, assignment, round_model, comp, snap, mrates,
                                    noise_scale=float(cfg.get("beta_noise", 0.0)), seed=seed,
                                    normalize=bool(cfg.get("normalize_emd", True)))
        res = jfvo.jfvo(ctx, cfgmod.schedule(cfg))
        write("plan.csv", plan_csv(res.plan))
        write("jfvo_trace.csv", res.trace_csv())
        write("cluster_links.csv", cluster_links_csv(assignment, res.plan, mrates, radio))
    with stage("share"):
        shared_clients = datagen.apply_sharing(part.clients, assignment, res.plan, seed)
        report = hetero.heterogeneity_report(pairs, g, assignment, res.plan,
                                             normalize=bool(cfg.get("normalize_emd", True)))
        write("heterogeneity.csv", report.to_csv())
        write("label_histograms.csv", label_histograms_csv(part.clients, shared_clients))
    with stage("train"):
        tc = cfgmod.train(cfg, seed)
        base_tr = fedsim.run_federated(part.clients, part.test, tc, workers=workers)
        write("train_baseline.csv", base_tr.to_csv())
        share_tr = fedsim.run_federated(shared_clients, part.test, tc, workers=workers)
        write("train_sharing.csv", share_tr.to_csv())
    T0, c0 = _measured_rounds(base_tr, tc.max_rounds)
    T1, c1 = _measured_rounds(share_tr, tc.max_rounds)
    zero = np.zeros(ctx.dim)
    tau0, tau1 = ctx.round_time(zero), ctx.round_time(res.volumes)
    share_delay = ctx.share_delay(res.volumes)
    d0, d1 = ctx.heterogeneity(zero), ctx.heterogeneity(res.volumes)
    summary = {
        "seed": seed,
        "num_clusters": len(assignment.sharing_heads),
        "emd_before": d0,
        "emd_after": d1,
        "predicted_rounds_baseline": _predict(ctx, d0, round_model),
        "predicted_rounds_sharing": _predict(ctx, d1, round_model),
        "rounds_baseline": T0,
        "rounds_sharing": T1,
        "censored_baseline": c0,
        "censored_sharing": c1,
        "round_time_baseline": tau0,
        "round_time_sharing": tau1,
        "sharing_delay": share_delay,
        "total_delay_baseline": T0 * tau0,
        "total_delay_sharing": share_delay + T1 * tau1,
        "objective_predicted": res.objective,
        "plan_feasible": res.feasible,
        "final_accuracy_baseline": base_tr.final_accuracy,
        "final_accuracy_sharing": share_tr.final_accuracy,
    }
    write("summary.csv", summary_csv(summary))
    return PipelineResult(seed, part, assignment, res.plan, round_model, res, base_tr, share_tr,
                          summary, calibration)


def _predict(ctx: jfvo.ObjectiveContext, d: float, model: roundsfit.RoundModel) -> float:
    try:
        return ctx.rounds(d, model.beta)
    except ClusterFELError:
        return math.nan


# --- CSV renderers ---------------------------------------------------------------------


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    return buf.getvalue()


def summary_csv(summary: Mapping) -> str:
    return _csv(sorted(summary.items()), ["metric", "value"])


def plan_csv(plan: SharingPlan) -> str:
    rows = [("volume", h, float(v)) for h, v in sorted(plan.volumes.items())]
    rows += [("frequency_hz", k, float(f)) for k, f in sorted(plan.frequencies.items())]
    return _csv(rows, ["kind", "id", "value"])


def cluster_links_csv(assignment: ClusterAssignment, plan: SharingPlan, rates: Mapping[int, float],
                      radio: wireless.RadioParams) -> str:
    rows = []
    for h in assignment.sharing_heads:
        v = rates[h]
        sinr = 2.0 ** (v / radio.multicast_bandwidth) - 1.0
        rows.append((h, len(assignment.members[h]), float(plan.volume(h)), float(v), float(sinr)))
    return _csv(rows, ["head", "num_members", "volume", "multicast_rate_bps", "sinr"])


def label_histograms_csv(before, after) -> str:
    Y = before[0].num_classes
    rows = []
    for tag, sets in (("before", before), ("after", after)):
        for k, d in enumerate(sets):
            rows.append((tag, k, *np.bincount(d.labels, minlength=Y).tolist()))
    return _csv(rows, ["stage", "client_id", *[f"class_{c}" for c in range(Y)]])


def calibration_csv(points) -> str:
    return _csv([(p.emd, p.rounds if p.rounds is not None else "censored",
                  ";".join("none" if r is None else str(r) for r in p.per_seed)) for p in points],
                ["emd", "rounds", "per_seed"])

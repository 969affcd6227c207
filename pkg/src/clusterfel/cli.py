"""Command line entry point: ``clusterfel <subcommand> [--config PATH] [--seed N] [--out DIR] [--workers N]``.

Exit codes: 0 success, 2 invalid input, 3 infeasible problem, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from . import config as cfgmod
from . import daca, datagen, fedsim, hetero, jfvo, pipeline, report, roundsfit, sweep, theory, wireless
from .errors import ClusterFELError, ValidationError, exit_code_for
from .structures import ClusterAssignment, SharingPlan

log = logging.getLogger("clusterfel")


def _out(args) -> Path:
    p = Path(args.out or "clusterfel_out")
    p.mkdir(parents=True, exist_ok=True)
    return p


def _cfg(args) -> dict:
    if args.config is not None and not Path(args.config).is_file():
        raise ValidationError(f"config file {args.config} does not exist")
    cfg = cfgmod.load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    return cfg


def _partition(cfg):
    part = datagen.generate(cfgmod.scenario(cfg))
    return part, part.as_pairs(pseudo=part.pseudo_distributions is not None)


def _assignment(cfg, part, pairs, path) -> ClusterAssignment:
    if path:
        a = ClusterAssignment.from_dict(json.loads(Path(path).read_text()))
        a.check_covers(len(part.clients))
        return a
    topo = pipeline.make_topology(cfg, len(part.clients), cfg["seed"])
    return daca.daca_cluster(pipeline.cluster_graph(cfg, pairs, part.global_distribution, topo))


def cmd_partition(args) -> int:
    cfg = _cfg(args)
    out = _out(args)
    part, pairs = _partition(cfg)
    datagen.dump_partition(part, out / "clients")
    (out / "heterogeneity.csv").write_text(hetero.heterogeneity_report(pairs, part.global_distribution).to_csv())
    meta = {"scenario": cfgmod.scenario(cfg).to_dict(),
            "global_distribution": [float(x) for x in part.global_distribution],
            "counts": [int(c.n) for c in part.clients],
            "label_distributions": [[float(x) for x in p] for _, p in pairs]}
    (out / "partition.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(part.clients)} clients to {out}")
    return 0


def cmd_cluster(args) -> int:
    cfg = _cfg(args)
    out = _out(args)
    part, pairs = _partition(cfg)
    topo = pipeline.make_topology(cfg, len(part.clients), cfg["seed"])
    graph = pipeline.cluster_graph(cfg, pairs, part.global_distribution, topo)
    a = daca.daca_cluster(graph)
    (out / "clusters.json").write_text(a.to_json() + "\n")
    (out / "clusters.csv").write_text(a.to_csv())
    rows = ["k,j,closeness,rate_bps"] + [f"{k},{j},{e.closeness!r},{e.rate!r}"
                                        for (k, j), e in sorted(graph.edges.items())]
    (out / "graph_edges.csv").write_text("\n".join(rows) + "\n")
    rep = daca.verify_conditions(a, graph)
    print(f"{len(a.sharing_heads)} sharing clusters; conditions hold: {rep.ok}")
    return 0


def cmd_fit_rounds(args) -> int:
    cfg = _cfg(args)
    out = _out(args)
    if args.samples:
        model = roundsfit.fit(roundsfit.read_samples_csv(args.samples))
    else:
        model, points = pipeline.calibrate(cfg, args.workers)
        (out / "calibration.csv").write_text(pipeline.calibration_csv(points))
    model.save(out / "round_model.json")
    print(f"beta = {model.beta}, NMSE = {model.nmse:.4g}")
    return 0


def _context(cfg, args):
    part, pairs = _partition(cfg)
    a = _assignment(cfg, part, pairs, args.assignment)
    if args.round_model:
        rm = roundsfit.RoundModel.load(args.round_model)
    else:
        rm, _ = pipeline.calibrate(cfg, args.workers)
    K = len(part.clients)
    topo = pipeline.make_topology(cfg, K, cfg["seed"])
    comp = cfgmod.compute(cfg)
    snap = wireless.link_snapshot(K, cfgmod.radio(cfg), cfgmod.fading(cfg, cfg["seed"]), comp)
    ctx = jfvo.wireless_context(pairs, part.global_distribution, a, rm, comp, snap,
                                pipeline.multicast_rates(a, topo.rates),
                                noise_scale=float(cfg.get("beta_noise", 0.0)), seed=cfg["seed"],
                                normalize=bool(cfg.get("normalize_emd", True)))
    return part, a, ctx


def cmd_optimize(args) -> int:
    cfg = _cfg(args)
    out = _out(args)
    _, _, ctx = _context(cfg, args)
    res = jfvo.jfvo(ctx, cfgmod.schedule(cfg))
    (out / "plan.json").write_text(json.dumps(res.plan.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "jfvo_trace.csv").write_text(res.trace_csv())
    print(f"objective {res.objective:.6g}; volumes {res.plan.volumes}; feasible {res.feasible}")
    return 0 if res.feasible else 3


def cmd_simulate(args) -> int:
    cfg = _cfg(args)
    out = _out(args)
    part, pairs = _partition(cfg)
    clients = part.clients
    if args.plan:
        a = _assignment(cfg, part, pairs, args.assignment)
        plan = SharingPlan.from_dict(json.loads(Path(args.plan).read_text()))
        clients = datagen.apply_sharing(clients, a, plan, cfg["seed"])
    tr = fedsim.run_federated(clients, part.test, cfgmod.train(cfg, cfg["seed"]), workers=args.workers)
    (out / "train.csv").write_text(tr.to_csv())
    print(f"rounds to target: {tr.rounds_to_target}; final accuracy {tr.final_accuracy:.4f}")
    return 0


def cmd_pipeline(args) -> int:
    cfg = _cfg(args)
    out = _out(args)
    (out / "config.json").write_text(cfgmod.dumps(cfg) + "\n")
    res = pipeline.run_pipeline(cfg, workers=args.workers, out_dir=out)
    s = res.summary
    print(f"total delay {s['total_delay_sharing']:.6g} s with sharing vs "
          f"{s['total_delay_baseline']:.6g} s without ({100 * res.improvement:.1f}% lower)")
    return 0


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ValidationError(f"cannot parse number list {text!r}") from exc


def cmd_sweep(args) -> int:
    cfg = _cfg(args)
    out = _out(args)
    seeds = [int(s) for s in _floats(args.seeds)]
    pts = sweep.sweep(cfg, args.axis, _floats(args.values), seeds, args.assignment,
                      args.shared_fraction, args.workers)
    (out / "sweep_points.csv").write_text(sweep.points_csv(pts))
    (out / "sweep_curves.csv").write_text(sweep.curves_csv(pts))
    rows = ["value,mean_rounds"] + [f"{v!r},{'' if r is None else repr(r)}"
                                    for v, r in sweep.mean_rounds(pts).items()]
    (out / "sweep_summary.csv").write_text("\n".join(rows) + "\n")
    for line in rows:
        print(line)
    return 0


def cmd_theory_check(args) -> int:
    cfg = _cfg(args)
    out = _out(args)
    sc = cfg["scenario"]
    ds = theory.theory_scenario(args.scenario, num_classes=int(sc["num_classes"]),
                                dim=int(sc.get("dim", 32)), seed=cfg["seed"])
    rep = theory.run_suite(ds, seeds=list(range(args.runs)), num_probes=args.probes)
    (out / "theory_report.json").write_text(json.dumps(rep, indent=2, sort_keys=True, default=float) + "\n")
    for c in rep["checks"]:
        print(f"{c['name']}: {'PASS' if c['passed'] else 'FAIL'} lhs={c['lhs']:.4g} rhs={c['rhs']:.4g}")
    return 0 if rep["passed"] else 1


def cmd_report(args) -> int:
    print(report.build_report(args.run_dir, args.out), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config layered over the packaged defaults")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--out", help="output directory (default ./clusterfel_out; report writes into the run directory)")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="clusterfel", description="Clustered data sharing for federated edge learning.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("partition", parents=[common], help="generate client datasets").set_defaults(func=cmd_partition)
    sub.add_parser("cluster", parents=[common], help="build the sharing graph and run DACA").set_defaults(func=cmd_cluster)
    s = sub.add_parser("fit-rounds", parents=[common], help="fit the rounds-vs-EMD law")
    s.add_argument("--samples", help="CSV with emd,rounds columns (default: run the calibration staircase)")
    s.set_defaults(func=cmd_fit_rounds)
    for name, func, helptext in (("optimize", cmd_optimize, "choose sharing volumes and frequencies"),
                                 ("simulate", cmd_simulate, "train FedAvg on the (shared) partition")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--assignment", help="cluster assignment JSON (default: DACA)")
        if name == "optimize":
            s.add_argument("--round-model", help="round model JSON (default: calibrate)")
        else:
            s.add_argument("--plan", help="sharing plan JSON (default: no sharing)")
        s.set_defaults(func=func)
    sub.add_parser("pipeline", parents=[common], help="run every stage and write artifacts").set_defaults(func=cmd_pipeline)
    s = sub.add_parser("sweep", parents=[common], help="rounds-to-target along one axis")
    s.add_argument("--axis", required=True, choices=sweep.AXES)
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    s.add_argument("--assignment", default="daca", choices=sweep.ASSIGNMENTS)
    s.add_argument("--shared-fraction", type=float, default=0.5,
                   help="fraction of each head's data shared on the num_clusters axis")
    s.set_defaults(func=cmd_sweep)
    s = sub.add_parser("theory-check", parents=[common], help="empirical convergence-bound checks")
    s.add_argument("--scenario", default="single_class", choices=("single_class", "half_single_class", "dirichlet"))
    s.add_argument("--runs", type=int, default=5, help="training seeds")
    s.add_argument("--probes", type=int, default=1000, help="probe points for constants and dissimilarity")
    s.set_defaults(func=cmd_theory_check)
    s = sub.add_parser("report", parents=[common], help="plot CSVs and a text summary from a run directory")
    s.add_argument("run_dir")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ClusterFELError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

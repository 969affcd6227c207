"""The whole loop on the default scenario.

Partitions the data, clusters, calibrates the round law, optimises the
shared volumes, trains with and without sharing and writes every artifact
plus a text report into ./demo_run.
"""

from clusterfel import config, pipeline, report

cfg = config.load_config()
model, _ = pipeline.calibrate(cfg)
for seed in (0, 1, 2):
    res = pipeline.run_pipeline(cfg, seed=seed, round_model=model, out_dir=f"demo_run/seed{seed}")
    s = res.summary
    print(f"seed {seed}: {s['rounds_baseline']} -> {s['rounds_sharing']} rounds, "
          f"total delay {s['total_delay_baseline']:.3f} s -> {s['total_delay_sharing']:.3f} s "
          f"({100 * res.improvement:.1f}% lower)")
print()
print(report.build_report("demo_run/seed1"))

"""Acceptance criteria 1-10.

Each test prints one ``criterion N: PASS|FAIL ...`` line (also collected into
the pytest terminal summary) and asserts the same verdict.  Run alone with
``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""

import math
import time

import numpy as np
import pytest

from clusterfel import config, daca, hetero, jfvo, pipeline, roundsfit, sweep, theory, wireless
from clusterfel.errors import InfeasibleError
from clusterfel.structures import ClusterAssignment

RESULTS: list[str] = []


def verdict(n: int, passed: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert passed, line


# --- shared, expensive fixtures -----------------------------------------------------------


@pytest.fixture(scope="module")
def default_cfg():
    return config.load_config()


@pytest.fixture(scope="module")
def calibrated(default_cfg):
    t0 = time.perf_counter()
    model, points = pipeline.calibrate(default_cfg)
    return model, points, time.perf_counter() - t0


@pytest.fixture(scope="module")
def pipeline_runs(default_cfg, calibrated, tmp_path_factory):
    model = calibrated[0]
    base = tmp_path_factory.mktemp("acceptance")
    t0 = time.perf_counter()
    runs = [pipeline.run_pipeline(default_cfg, seed=s, round_model=model, out_dir=base / f"seed{s}")
            for s in (0, 1, 2)]
    return runs, base, time.perf_counter() - t0


def oracle_instances():
    """200 random instances, K cycling through 3..6, 10 classes."""
    for i in range(200):
        rng = np.random.default_rng([2024, i])
        yield daca.random_instance(3 + i % 4, 10, rng)


# --- 1: EMD metric suite -----------------------------------------------------------------


def test_criterion_01_emd_properties():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    bad = 0
    for _ in range(10_000):
        Y = int(rng.integers(2, 12))
        p, q, r = (rng.dirichlet(np.full(Y, rng.uniform(0.1, 3))) for _ in range(3))
        if rng.uniform() < 0.2:
            p = np.eye(Y)[rng.integers(Y)]
        d_pq, d_qr, d_pr = hetero.emd(p, q), hetero.emd(q, r), hetero.emd(p, r)
        n_c, n_s = rng.uniform(1, 1000), rng.uniform(0, 1000)
        n_t, mixed = hetero.mix_distribution(n_c, p, n_s, q)
        ok = (
            0 <= d_pq <= 2 + 1e-12
            and hetero.emd(p, p) == 0
            and d_pq == hetero.emd(q, p)
            and d_pr <= d_pq + d_qr + 1e-12
            and n_t * hetero.emd(mixed, r) <= n_c * hetero.emd(p, r) + n_s * hetero.emd(q, r) + 1e-9
        )
        bad += not ok
    dt = time.perf_counter() - t0
    verdict(1, bad == 0 and dt < 10, f"{10_000 - bad}/10000 property checks hold in {dt:.1f}s (limit 10s)")


# --- 2, 3: clustering against the exhaustive optimum -------------------------------------


def test_criterion_02_exhaustive_optimum_conditions():
    t0 = time.perf_counter()
    ok = 0
    for clients, g, graph in oracle_instances():
        a, _ = daca.exhaustive_optimum(clients, g, graph)
        ok += daca.verify_conditions(a, graph).ok
    dt = time.perf_counter() - t0
    verdict(2, ok == 200 and dt < 120,
            f"exhaustive optimum meets both clustering conditions in {ok}/200 instances "
            f"(target 200/200) in {dt:.1f}s")


def test_criterion_03_daca_near_optimal():
    t0 = time.perf_counter()
    within, never_worse = 0, 0
    for clients, g, graph in oracle_instances():
        _, best = daca.exhaustive_optimum(clients, g, graph)
        a = daca.daca_cluster(graph)
        plan = {h: float(clients[h][0]) for h in a.sharing_heads}
        val = hetero.post_sharing_average_emd(clients, a, plan, g)
        within += val <= 1.10 * best + 1e-12
        never_worse += val <= hetero.average_emd(clients, g) + 1e-12
    dt = time.perf_counter() - t0
    verdict(3, within >= 180 and never_worse == 200 and dt < 60,
            f"DACA within 10% of optimum in {within}/200 (target >= 180); "
            f"not worse than no sharing in {never_worse}/200; {dt:.1f}s")


# --- 4: round law --------------------------------------------------------------------------


def test_criterion_04_round_law(calibrated):
    beta = (0.50, -1.83, 1.70)
    ds = np.linspace(0.0, 1.8, 10)
    m = roundsfit.fit([(d, 1.0 / (beta[0] * d * d + beta[1] * d + beta[2])) for d in ds])
    err = float(np.max(np.abs(np.asarray(m.beta) - beta)))
    model, points, dt = calibrated
    rounds = [p.rounds for p in points]
    monotone = all(r is not None for r in rounds) and all(b >= a for a, b in zip(rounds, rounds[1:]))
    verdict(4, err < 1e-6 and model.nmse < 0.2 and monotone and len(points) == 4 and dt < 600,
            f"exact round trip error {err:.1e}; staircase EMD "
            f"{[round(p.emd, 3) for p in points]} -> rounds {[round(r, 2) for r in rounds]}, "
            f"fit NMSE {model.nmse:.4f}; {dt:.1f}s")


# --- 5: preliminary-experiment shapes ----------------------------------------------------


def test_criterion_05_experiment_shapes(default_cfg):
    t0 = time.perf_counter()
    seeds = [0, 1, 2]
    a = sweep.mean_rounds(sweep.sweep(default_cfg, "emd_level", [0.0, 0.6, 1.0], seeds))
    ra = [a[v] for v in (0.0, 0.6, 1.0)]
    ok_a = None not in ra and ra[0] < ra[1] < ra[2]

    skew = config.load_config(overrides={"scenario": {"fraction": 1.0}})
    b = sweep.mean_rounds(sweep.sweep(skew, "shared_fraction", [0.0, 0.05, 0.1], seeds, "random_pairs"))
    rb = [b[v] for v in (0.0, 0.05, 0.1)]
    ok_b = None not in rb and rb[0] >= rb[1] >= rb[2] and (rb[0] - rb[1]) >= (rb[1] - rb[2])

    pairs = sweep.mean_rounds(sweep.sweep(default_cfg, "shared_fraction", [0.5], seeds, "random_pairs"))[0.5]
    dacas = sweep.mean_rounds(sweep.sweep(default_cfg, "shared_fraction", [0.5], seeds, "daca"))[0.5]
    ok_c = pairs is not None and dacas is not None and pairs >= dacas
    dt = time.perf_counter() - t0
    verdict(5, ok_a and ok_b and ok_c and dt < 900,
            f"(a) rounds vs EMD level {ra}; (b) rounds vs shared fraction {rb}; "
            f"(c) random pairs {pairs} vs DACA {dacas}; {dt:.0f}s")


# --- 6: volume optimiser -----------------------------------------------------------------


def small_instance(seed, two_clusters):
    rng = np.random.default_rng([77, seed])
    Y, K = 4, (5 if two_clusters else 3)
    clients = [(int(rng.integers(40, 120)), rng.dirichlet(np.full(Y, 50.0 if k in (0, 3) else 0.3)))
               for k in range(K)]
    a = (ClusterAssignment((0, 3), {0: (1, 2), 3: (4,)}) if two_clusters
         else ClusterAssignment((0,), {0: (1, 2)}))
    snap = wireless.LinkSnapshot(np.full(K, 0.01), rng.uniform(0.005, 0.02, K), rng.uniform(1e-4, 1e-3, K))
    rates = {0: float(rng.uniform(1e7, 1e8)), 3: float(rng.uniform(1e7, 1e8))}
    return jfvo.wireless_context(clients, np.full(Y, 1 / Y), a, roundsfit.RoundModel((0.5, -1.83, 1.7), (0, 2)),
                                 wireless.ComputeParams(), snap, rates)


def test_criterion_06_optimizer(default_cfg, calibrated, pipeline_runs):
    t0 = time.perf_counter()
    worst, feasible = 0.0, True
    for seed in range(5):
        for two in (False, True):
            ctx = small_instance(seed, two)
            r = jfvo.jfvo(ctx)
            _, best = jfvo.grid_oracle(ctx, 1.0)
            worst = max(worst, r.objective / best)
            feasible &= r.feasible
    runs = pipeline_runs[0]
    gaps = []
    for run in runs:
        tr = run.jfvo_result.outer_trace
        gaps.append(abs(tr[6] - tr[20]) / abs(tr[20]))
        feasible &= run.jfvo_result.feasible
    dt = time.perf_counter() - t0
    verdict(6, worst <= 1.05 and max(gaps) <= 0.02 and feasible and dt < 300,
            f"worst objective / grid optimum {worst:.4f} over 10 instances; outer iteration 6 vs 20 gap "
            f"{max(gaps) * 100:.2f}% (limit 2%) on the default scenario, seeds 0-2; all plans feasible: {feasible}")


# --- 7: frequency rule ---------------------------------------------------------------------


def test_criterion_07_frequency_rule():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    ok = 0
    for _ in range(1000):
        c = wireless.ComputeParams(cycles_per_sample=rng.uniform(1e4, 1e6), local_epochs=int(rng.integers(1, 6)),
                                   energy_coeff=10 ** rng.uniform(-28, -25), energy_budget=rng.uniform(1e-3, 1.0),
                                   max_frequency=rng.uniform(5e8, 3e9), frequency=5e8)
        n, e_up = rng.uniform(1, 2000), rng.uniform(0, 0.99) * c.energy_budget
        f = jfvo.optimal_frequency(c, n, e_up)
        gamma = c.energy_coeff * c.cycles_per_sample * c.local_epochs * n * f * f + e_up
        ok += (0 < f <= c.max_frequency and gamma <= c.energy_budget * (1 + 1e-9)
               and (f == c.max_frequency or abs(gamma - c.energy_budget) <= 1e-9 * c.energy_budget))
    rejected = 0
    for _ in range(100):
        c = wireless.ComputeParams(energy_budget=rng.uniform(1e-3, 1.0))
        try:
            jfvo.optimal_frequency(c, 100, c.energy_budget * rng.uniform(1.0, 2.0), client=3)
        except InfeasibleError as exc:
            rejected += "client 3" in str(exc)
    dt = time.perf_counter() - t0
    verdict(7, ok == 1000 and rejected == 100 and dt < 5,
            f"{ok}/1000 outputs on the energy boundary or at the frequency cap; "
            f"{rejected}/100 infeasible budgets rejected; {dt:.2f}s")


# --- 8: end-to-end delay -------------------------------------------------------------------


def test_criterion_08_end_to_end_delay(pipeline_runs, calibrated):
    runs, _, dt = pipeline_runs
    imps = [r.improvement for r in runs]
    mean = float(np.mean(imps))
    total = dt + calibrated[2]
    verdict(8, mean >= 0.15 and total < 900,
            f"delay reduction per seed {[f'{100 * x:.1f}%' for x in imps]}, mean {100 * mean:.1f}% "
            f"(target >= 15%); {total:.0f}s including calibration")


# --- 9: theory suite -----------------------------------------------------------------------


def test_criterion_09_theory_suite():
    t0 = time.perf_counter()
    out = []
    passed = True
    for name in ("single_class", "half_single_class", "dirichlet"):
        rep = theory.run_suite(theory.theory_scenario(name), seeds=(0, 1, 2, 3, 4), num_probes=1000)
        checks = {c["name"]: c for c in rep["checks"]}
        dis = checks["gradient_dissimilarity"]
        ok = rep["passed"] and dis["points"] >= 1000
        ok &= all(math.isfinite(c["lhs"]) and math.isfinite(c["rhs"]) for c in rep["checks"])
        passed &= ok
        out.append(f"{name}: dissimilarity {dis['points']} points max ratio {dis['max_ratio']:.3f}, "
                   f"drift {checks['drift_bound']['lhs']:.3g}<={checks['drift_bound']['rhs']:.3g}, "
                   f"rate {checks['rate_bound']['lhs']:.3g}<={checks['rate_bound']['rhs']:.3g}")
    dt = time.perf_counter() - t0
    verdict(9, passed and dt < 600, "; ".join(out) + f"; {dt:.0f}s")


# --- 10: determinism -------------------------------------------------------------------------


def test_criterion_10_determinism(default_cfg, calibrated, pipeline_runs, tmp_path):
    _, base, _ = pipeline_runs
    t0 = time.perf_counter()
    pipeline.run_pipeline(default_cfg, seed=0, round_model=calibrated[0], out_dir=tmp_path, workers=2)
    dt = time.perf_counter() - t0
    names = [p.name for p in sorted((base / "seed0").iterdir())]
    same = [n for n in names if (base / "seed0" / n).read_bytes() == (tmp_path / n).read_bytes()]
    verdict(10, len(same) == len(names) == len(pipeline.ARTIFACTS),
            f"{len(same)}/{len(names)} artifacts byte-identical between 1 and 2 workers; rerun {dt:.1f}s")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))

import csv
import io
import json

import numpy as np
import pytest

from clusterfel import cli, config, datagen, fedsim, pipeline, report, sweep
from clusterfel.errors import InfeasibleError, NumericalError, ValidationError
from clusterfel.structures import ClusterAssignment


def rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


# --- config ------------------------------------------------------------------------------


def test_defaults_load_and_build():
    cfg = config.load_config()
    assert set(cfg) == set(config.SECTIONS)
    sc = config.scenario(cfg)
    assert sc.num_clients == 10 and sc.samples_per_client == (200,) * 7 + (400,) * 3
    assert config.compute(cfg).local_epochs == cfg["train"]["local_epochs"]
    assert config.train(cfg, 3).rng_seed == 3
    assert config.fading(cfg, 4).rng_seed == 4
    assert config.schedule(cfg).outer_iters == 20


def test_config_file_and_override_layering(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 5, "train": {"max_rounds": 7}}))
    cfg = config.load_config(p, {"train": {"batch_size": 4}})
    assert cfg["seed"] == 5 and cfg["train"]["max_rounds"] == 7 and cfg["train"]["batch_size"] == 4
    assert cfg["train"]["learning_rate"] == 0.1
    assert json.loads(config.dumps(cfg)) == cfg


@pytest.mark.parametrize("bad", [{"bogus": 1}, {"train": {"bogus": 1}}, {"radio": {"nope": 2}}])
def test_config_rejects_unknown_keys(bad):
    with pytest.raises(ValidationError):
        cfg = config.load_config(overrides=bad)
        config.train(cfg, 0)
        config.radio(cfg)


def test_config_invalid_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{nope")
    with pytest.raises(ValidationError):
        config.load_config(p)


# --- pipeline ----------------------------------------------------------------------------


def test_pipeline_writes_artifacts_and_is_consistent(tmp_path, fast_cfg):
    res = pipeline.run_pipeline(fast_cfg, out_dir=tmp_path / "run")
    run = tmp_path / "run"
    for name in pipeline.ARTIFACTS:
        assert (run / name).is_file(), name
    s = res.summary
    assert s["emd_after"] <= s["emd_before"] + 1e-12
    assert s["plan_feasible"] is True
    assert s["total_delay_baseline"] == pytest.approx(s["rounds_baseline"] * s["round_time_baseline"])
    assert s["total_delay_sharing"] == pytest.approx(
        s["sharing_delay"] + s["rounds_sharing"] * s["round_time_sharing"])
    summary = {r["metric"]: r["value"] for r in rows(run / "summary.csv")}
    assert float(summary["emd_before"]) == s["emd_before"]
    # histograms recomputed independently from the regenerated partition
    part = datagen.generate(config.scenario(fast_cfg))
    hist = [r for r in rows(run / "label_histograms.csv") if r["stage"] == "before"]
    for k, c in enumerate(part.clients):
        assert [int(hist[k][f"class_{y}"]) for y in range(6)] == np.bincount(c.labels, minlength=6).tolist()
    plan = rows(run / "plan.csv")
    assert {r["kind"] for r in plan} == {"volume", "frequency_hz"} or not res.assignment.sharing_heads


def test_pipeline_rerun_is_byte_identical(tmp_path, fast_cfg):
    pipeline.run_pipeline(fast_cfg, out_dir=tmp_path / "a")
    pipeline.run_pipeline(fast_cfg, out_dir=tmp_path / "b", workers=2)
    for name in pipeline.ARTIFACTS:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_no_edges_degenerates_to_fedavg(fast_cfg):
    cfg = config.load_config(overrides={**fast_cfg, "topology": {"rate_threshold_bps": float("inf")}})
    res = pipeline.run_pipeline(cfg)
    assert res.assignment.sharing_heads == ()
    assert res.summary["sharing_delay"] == 0.0
    assert res.baseline.to_csv() == res.shared.to_csv()
    part = datagen.generate(config.scenario(cfg))
    plain = fedsim.run_federated(part.clients, part.test, config.train(cfg, cfg["seed"]))
    assert plain.to_csv() == res.baseline.to_csv()


def test_stage_prefix_keeps_type():
    with pytest.raises(InfeasibleError, match=r"^\[optimize\] boom"):
        with pipeline.stage("optimize"):
            raise InfeasibleError("boom")


def test_multicast_rate_is_worst_member():
    r = np.array([[0, 5, 3], [5, 0, 1], [3, 1, 0]], float)
    assert pipeline.multicast_rates(ClusterAssignment((0,), {0: (1, 2)}), r) == {0: 3.0}


def test_improvement_property():
    res = pipeline.PipelineResult(0, None, None, None, None, None, None, None,
                                  {"total_delay_sharing": 6.0, "total_delay_baseline": 8.0})
    assert res.improvement == 0.25


# --- sweep --------------------------------------------------------------------------------


def test_random_pairs_structure():
    a = sweep.random_pairs(7, 3)
    a.check_covers(7)
    assert len(a.sharing_heads) == 3 and all(len(a.members[h]) == 1 for h in a.sharing_heads)
    assert sweep.random_pairs(7, 3) == a


def test_limit_clusters():
    a = ClusterAssignment((0, 1, 2), {0: (3, 4), 1: (5,), 2: ()})
    b = sweep.limit_clusters(a, 1)
    b.check_covers(6)
    assert b.sharing_heads == (0,)
    assert sweep.limit_clusters(a, 0).sharing_heads == ()
    with pytest.raises(ValidationError):
        sweep.limit_clusters(a, -1)


def test_sweep_zero_fraction_matches_plain_training(fast_cfg):
    pts = sweep.sweep(fast_cfg, "shared_fraction", [0.0], [0], "random_pairs")
    part = datagen.generate(config.scenario(fast_cfg, 0))
    tr = fedsim.run_federated(part.clients, part.test, config.train(fast_cfg, 0))
    assert pts[0].rounds == tr.rounds_to_target and pts[0].loss == tr.loss


def test_sweep_emd_level_and_csvs(fast_cfg):
    pts = sweep.sweep(fast_cfg, "emd_level", [0.0, 1.0], [0])
    assert pts[0].emd < pts[1].emd
    text = sweep.points_csv(pts)
    assert text.splitlines()[0] == "axis,value,seed,emd,rounds,final_accuracy,error"
    assert sweep.curves_csv(pts).count("\n") == 1 + sum(len(p.loss) for p in pts)
    assert set(sweep.mean_rounds(pts)) == {0.0, 1.0}


def test_sweep_validation(fast_cfg):
    with pytest.raises(ValidationError):
        sweep.sweep(fast_cfg, "bogus", [0.1], [0])
    with pytest.raises(ValidationError):
        sweep.sweep(fast_cfg, "shared_fraction", [0.1], [0], assignment="bogus")
    with pytest.raises(ValidationError):
        sweep.sweep(fast_cfg, "shared_fraction", [], [0])
    pt = sweep.run_point(fast_cfg, "shared_fraction", 2.0, 0)
    assert pt.error and pt.rounds is None


def test_sweep_parallel_matches_serial(fast_cfg):
    a = sweep.sweep(fast_cfg, "shared_fraction", [0.0, 0.5], [0], "random_pairs")
    b = sweep.sweep(fast_cfg, "shared_fraction", [0.0, 0.5], [0], "random_pairs", workers=2)
    assert sweep.points_csv(a) == sweep.points_csv(b) and sweep.curves_csv(a) == sweep.curves_csv(b)


# --- report ------------------------------------------------------------------------------


def test_report_empty_dir_lists_expected(tmp_path):
    with pytest.raises(ValidationError, match="summary.csv"):
        report.build_report(tmp_path)
    with pytest.raises(ValidationError, match="not a directory"):
        report.build_report(tmp_path / "missing")


def test_report_after_pipeline(tmp_path, fast_cfg):
    pipeline.run_pipeline(fast_cfg, out_dir=tmp_path)
    text = report.build_report(tmp_path)
    assert "total delay" in text and (tmp_path / "report.txt").read_text() == text
    for name in ("plot_loss_curves", "plot_emd_rounds", "plot_convergence", "plot_cluster_table",
                 "plot_label_histograms"):
        body = (tmp_path / f"{name}.csv").read_text().splitlines()
        assert body and "," in body[0]
    loss = rows(tmp_path / "plot_loss_curves.csv")
    base = rows(tmp_path / "train_baseline.csv")
    assert [r["loss_baseline"] for r in loss[: len(base)]] == [r["loss"] for r in base]


# --- CLI ----------------------------------------------------------------------------------


def test_cli_partition_cluster(tmp_path, fast_cfg_file, capsys):
    assert cli.main(["partition", "--config", str(fast_cfg_file), "--out", str(tmp_path / "p")]) == 0
    meta = json.loads((tmp_path / "p" / "partition.json").read_text())
    assert len(meta["counts"]) == 6 and (tmp_path / "p" / "heterogeneity.csv").is_file()
    assert cli.main(["cluster", "--config", str(fast_cfg_file), "--out", str(tmp_path / "c")]) == 0
    assert "conditions hold: True" in capsys.readouterr().out
    a = ClusterAssignment.from_dict(json.loads((tmp_path / "c" / "clusters.json").read_text()))
    a.check_covers(6)


def test_cli_fit_rounds_from_samples(tmp_path, capsys):
    s = tmp_path / "s.csv"
    s.write_text("emd,rounds\n" + "".join(f"{d},{1 / (0.5 * d * d - 1.83 * d + 1.7)!r}\n"
                                         for d in (0.0, 0.4, 0.8, 1.2)))
    assert cli.main(["fit-rounds", "--samples", str(s), "--out", str(tmp_path)]) == 0
    m = json.loads((tmp_path / "round_model.json").read_text())
    assert np.allclose(m["beta"], (0.5, -1.83, 1.7), atol=1e-9)


def test_cli_optimize_simulate_pipeline_report(tmp_path, fast_cfg_file, round_model_path):
    out = tmp_path / "o"
    assert cli.main(["optimize", "--config", str(fast_cfg_file), "--round-model", str(round_model_path),
                     "--out", str(out)]) == 0
    assert (out / "plan.json").is_file() and (out / "jfvo_trace.csv").is_file()
    assert cli.main(["simulate", "--config", str(fast_cfg_file), "--plan", str(out / "plan.json"),
                     "--out", str(out)]) == 0
    assert (out / "train.csv").is_file()
    run = tmp_path / "run"
    assert cli.main(["pipeline", "--config", str(fast_cfg_file), "--out", str(run)]) == 0
    assert cli.main(["report", str(run)]) == 0
    assert (run / "report.txt").is_file()


def test_cli_sweep(tmp_path, fast_cfg_file):
    assert cli.main(["sweep", "--config", str(fast_cfg_file), "--axis", "shared_fraction", "--values", "0,0.5",
                     "--seeds", "0", "--assignment", "random_pairs", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "sweep_summary.csv").read_text().startswith("value,mean_rounds\n")


def test_cli_exit_codes(tmp_path, fast_cfg_file, monkeypatch, capsys):
    assert cli.main(["pipeline", "--config", str(tmp_path / "nope.json")]) == 2
    assert cli.main(["report", str(tmp_path)]) == 2
    assert cli.main(["sweep", "--values", "x", "--axis", "emd_level", "--out", str(tmp_path)]) == 2
    assert cli.main(["pipeline", "--workers", "0"]) == 2

    def infeasible(*a, **k):
        raise InfeasibleError("no budget")

    def numerical(*a, **k):
        raise NumericalError("nan")

    monkeypatch.setattr(pipeline, "run_pipeline", infeasible)
    assert cli.main(["pipeline", "--config", str(fast_cfg_file), "--out", str(tmp_path / "x")]) == 3
    monkeypatch.setattr(pipeline, "run_pipeline", numerical)
    assert cli.main(["pipeline", "--config", str(fast_cfg_file), "--out", str(tmp_path / "x")]) == 4
    assert "error: nan" in capsys.readouterr().err


def test_cli_infeasible_energy_budget(tmp_path, fast_cfg):
    cfg = dict(fast_cfg, compute={"energy_budget": 1e-12})
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    assert cli.main(["pipeline", "--config", str(p), "--out", str(tmp_path / "r")]) == 3
    # artifacts of stages before the failing one survive
    assert (tmp_path / "r" / "clusters.csv").is_file()

"""Plot-ready CSVs and a text summary from a pipeline run directory."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .errors import ValidationError
from .pipeline import ARTIFACTS


def _read_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def check_artifacts(run_dir: Path) -> None:
    if not run_dir.is_dir():
        raise ValidationError(f"{run_dir} is not a directory; expected files: {', '.join(ARTIFACTS)}")
    missing = [n for n in ARTIFACTS if not (run_dir / n).is_file()]
    if missing:
        raise ValidationError(f"{run_dir}: missing artifacts {', '.join(missing)} "
                              f"(expected: {', '.join(ARTIFACTS)})")


def build_report(run_dir, out_dir=None) -> str:
    """Write ``plot_*.csv`` files and ``report.txt``; return the summary text."""
    run_dir = Path(run_dir)
    check_artifacts(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir
    out.mkdir(parents=True, exist_ok=True)

    base = _read_rows(run_dir / "train_baseline.csv")
    share = _read_rows(run_dir / "train_sharing.csv")
    rows = []
    for t in range(max(len(base), len(share))):
        b = base[t] if t < len(base) else {}
        s = share[t] if t < len(share) else {}
        rows.append([t + 1, b.get("loss", ""), b.get("accuracy", ""), s.get("loss", ""), s.get("accuracy", "")])
    _write(out / "plot_loss_curves.csv",
           ["round", "loss_baseline", "accuracy_baseline", "loss_sharing", "accuracy_sharing"], rows)

    summary = {r["metric"]: r["value"] for r in _read_rows(run_dir / "summary.csv")}
    model = json.loads((run_dir / "round_model.json").read_text())
    emd_rows = [["run_baseline", summary["emd_before"], summary["rounds_baseline"], summary["predicted_rounds_baseline"]],
                ["run_sharing", summary["emd_after"], summary["rounds_sharing"], summary["predicted_rounds_sharing"]]]
    if (run_dir / "calibration.csv").is_file():
        for r in _read_rows(run_dir / "calibration.csv"):
            emd_rows.append(["calibration", r["emd"], r["rounds"], ""])
    _write(out / "plot_emd_rounds.csv", ["source", "emd", "rounds", "predicted_rounds"], emd_rows)

    trace = _read_rows(run_dir / "jfvo_trace.csv")
    _write(out / "plot_convergence.csv", ["iteration", "objective", "max_violation"],
           [[r["iteration"], r["objective"], r["max_violation"]] for r in trace])

    links = _read_rows(run_dir / "cluster_links.csv")
    _write(out / "plot_cluster_table.csv", ["head", "num_members", "volume", "multicast_rate_bps", "sinr"],
           [[r["head"], r["num_members"], r["volume"], r["multicast_rate_bps"], r["sinr"]] for r in links])

    hist = (run_dir / "label_histograms.csv").read_text()
    (out / "plot_label_histograms.csv").write_text(hist)

    improvement = 1.0 - float(summary["total_delay_sharing"]) / float(summary["total_delay_baseline"])
    lines = [
        f"run directory: {run_dir}",
        f"seed: {summary['seed']}",
        f"sharing clusters: {summary['num_clusters']}",
        f"average EMD: {float(summary['emd_before']):.4f} -> {float(summary['emd_after']):.4f}",
        f"round law beta: {', '.join(f'{b:.4g}' for b in model['beta'])} (NMSE {model['nmse']:.3g})",
        f"rounds to target: {summary['rounds_baseline']} without sharing, {summary['rounds_sharing']} with sharing",
        f"per-round time (s): {float(summary['round_time_baseline']):.4g} -> {float(summary['round_time_sharing']):.4g}",
        f"sharing delay (s): {float(summary['sharing_delay']):.4g}",
        f"total delay (s): {float(summary['total_delay_baseline']):.4g} -> "
        f"{float(summary['total_delay_sharing']):.4g} ({100 * improvement:.1f}% lower)",
        f"plan feasible: {summary['plan_feasible']}",
        f"JFVO iterations: {len(trace) - 1}, final objective {float(trace[-1]['objective']):.4g}",
    ]
    for r in links:
        lines.append(f"  head {r['head']}: {r['num_members']} members, volume {float(r['volume']):.0f}, "
                     f"rate {float(r['multicast_rate_bps']):.3g} bit/s")
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    return text

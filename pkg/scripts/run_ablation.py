"""Run the eight-variant ablation over several seeds and average the metrics.

    python scripts/run_ablation.py --synth-config synth.cfg --seeds 0 1 2 --out runs/ablation
    python scripts/run_ablation.py --features feats.csv --hierarchy daliac --seeds 0
"""

import argparse
from dataclasses import asdict
from pathlib import Path

import numpy as np

from hhar.data import SyntheticSpec, generate_synthetic, load_dataset, split_dataset
from hhar.harness import METRICS, VARIANTS, Report, RunConfig, run_ablation
from hhar.objectives import TrainConfig


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--synth-config")
    src.add_argument("--features")
    p.add_argument("--hierarchy", help="edge file or bundled name, with --features")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--out", default="runs/ablation")
    a = p.parse_args()

    if a.synth_config:
        spec = SyntheticSpec.from_file(a.synth_config)
        base, source = generate_synthetic(spec), {"synthetic": asdict(spec)}
    else:
        if not a.hierarchy:
            p.error("--features needs --hierarchy")
        hier = Path(a.hierarchy)
        if not hier.exists():
            hier = Path(__file__).resolve().parents[1] / "src" / "hhar" / "hierarchies" / f"{a.hierarchy}.tsv"
        base, source = load_dataset(a.features, hier), {"features": a.features, "hierarchy": a.hierarchy}

    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    collected = {v.name: [] for v in VARIANTS}
    for seed in a.seeds:
        rc = RunConfig("ablate", seed, source=source, train=TrainConfig(epochs=a.epochs))
        report = run_ablation(split_dataset(base, rc.fractions, seed), rc)
        (out / f"seed{seed}.json").write_text(report.to_json(), encoding="utf-8")
        for row in report.rows:
            if row["status"] == "ok":
                collected[row["name"]].append(row["metrics"])
        print(f"seed {seed}\n{report.to_table()}")

    rows = []
    for name, runs in collected.items():
        if runs:
            rows.append({"name": name, "status": f"ok x{len(runs)}",
                         "metrics": {k: float(np.mean([r[k] for r in runs])) for k in METRICS}})
        else:
            rows.append({"name": name, "status": "failed"})
    summary = Report("ablate-mean", {"seeds": a.seeds, "source": source, "epochs": a.epochs}, rows)
    (out / "mean.json").write_text(summary.to_json(), encoding="utf-8")
    (out / "mean.txt").write_text(summary.to_table(), encoding="utf-8")
    print("mean over seeds")
    print(summary.to_table(), end="")


if __name__ == "__main__":
    main()

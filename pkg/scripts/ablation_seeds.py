"""Gaze on/off ablation repeated over several seeds.

    python scripts/ablation_seeds.py --seeds 0,1,2 --out runs/ablation

Each seed gets its own ``ablate`` run under ``OUT/seed-N``; a summary table of
test accuracy per seed is printed and written to ``OUT/summary.json``.
"""
import argparse
import json
import statistics
from pathlib import Path

from gazegnn.cli import main as cli


def run(seeds, out: Path, extra):
    rows = []
    for seed in seeds:
        d = out / f"seed-{seed}"
        if cli(["ablate", "--seed", str(seed), "--out", str(d), *extra]) != 0:
            raise SystemExit(f"ablate failed for seed {seed}")
        res = json.loads((d / "ablation.json").read_text())["rows"]
        on, off = (res[k]["metrics"]["accuracy"] for k in ("gaze=on", "gaze=off"))
        rows.append({"seed": seed, "on": on, "off": off, "gap": on - off})
    return rows


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("extra", nargs=argparse.REMAINDER, help="passed to `gazegnn ablate` after --")
    a = ap.parse_args()
    out = Path(a.out)
    extra = a.extra[1:] if a.extra[:1] == ["--"] else a.extra
    rows = run([int(s) for s in a.seeds.split(",")], out, extra)
    print(f"{'seed':>4} {'on':>6} {'off':>6} {'gap':>7}")
    for r in rows:
        print(f"{r['seed']:>4} {r['on']:6.3f} {r['off']:6.3f} {r['gap']:+7.3f}")
    gaps = [r["gap"] for r in rows]
    print(f"mean gap {statistics.mean(gaps):+.3f}")
    (out / "summary.json").write_text(json.dumps({"rows": rows, "mean_gap": statistics.mean(gaps)}, indent=2))

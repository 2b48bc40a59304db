"""Accuracy drop under additive image noise across a grid of noise levels.

    python scripts/robustness.py --sigmas 0,0.05,0.1,0.2 --seeds 0,1,2,3,4

Runs ``gazegnn robust`` once per noise level and reports, for each level, the
mean accuracy drop of both variants and how often gaze=on dropped no more.
"""
import argparse
import json
import statistics
from pathlib import Path

from gazegnn.cli import main as cli

ap = argparse.ArgumentParser()
ap.add_argument("--sigmas", default="0,0.05,0.1,0.2")
ap.add_argument("--seeds", default="0,1,2,3,4")
ap.add_argument("--out", default="runs/robust")
ap.add_argument("extra", nargs=argparse.REMAINDER, help="passed to `gazegnn robust` after --")
a = ap.parse_args()
extra = a.extra[1:] if a.extra[:1] == ["--"] else a.extra

lines = []
for sigma in a.sigmas.split(","):
    d = Path(a.out) / f"sigma-{sigma}"
    if cli(["robust", "--seeds", a.seeds, "--noise-sigma", sigma, "--out", str(d), *extra]) != 0:
        raise SystemExit(f"robust failed at sigma {sigma}")
    recs = json.loads((d / "robust.json").read_text())["records"]
    on = statistics.mean(r["gaze=on"]["drops"]["accuracy"] for r in recs)
    off = statistics.mean(r["gaze=off"]["drops"]["accuracy"] for r in recs)
    wins = sum(r["gaze_on_drop_le_off"] for r in recs)
    lines.append(f"{float(sigma):6.3f} {on:+8.3f} {off:+8.3f} {wins:>3}/{len(recs)}")

print(f"{'sigma':>6} {'on_drop':>8} {'off_drop':>8} wins")
print("\n".join(lines))

"""Timing of both gaze paths as the attention-map Gaussian width varies.

    GAZE_GNN_THREADS=1 python scripts/bench_sigma_sweep.py --sigmas 37.5,75,150,300

Rasterisation cost grows with the window area (about sigma squared); the
patch-aggregation path does not depend on sigma at all.
"""
import argparse
import json
from pathlib import Path

from gazegnn.bench import bench_paths, pinned_threads, thread_limit

ap = argparse.ArgumentParser()
ap.add_argument("--sigmas", default="37.5,75,150,300")
ap.add_argument("--image-size", type=int, default=3000)
ap.add_argument("--n-fixations", type=int, default=1000)
ap.add_argument("--reps", type=int, default=10)
ap.add_argument("--out", default="runs/bench-sweep")
a = ap.parse_args()

threads = thread_limit()
reports = []
with pinned_threads(threads):
    for s in (float(x) for x in a.sigmas.split(",")):
        r = bench_paths(a.image_size, a.n_fixations, s, reps=a.reps, threads=threads)
        reports.append(r.to_dict())
        print(f"sigma {s:7.1f}  map {r.vam.median * 1e3:10.2f} ms  embed {r.gaze_embed.median * 1e3:8.3f} ms  "
              f"speedup {r.speedup_median:8.1f}x")

out = Path(a.out)
out.mkdir(parents=True, exist_ok=True)
(out / "sweep.json").write_text(json.dumps(reports, indent=2))

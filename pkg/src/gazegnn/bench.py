"""Timing harness: direct gaze embedding vs full-resolution attention-map rasterisation."""
from __future__ import annotations

import json
import os
import platform
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

from .gaze import FixationSet, PatchGrid, normalize_durations, rasterize_vam, time_aggregate
from .graph import gaze_embed
from .metrics import format_table

SPEEDUP_THRESHOLD = 10.0
THREADS_ENV = "GAZE_GNN_THREADS"


@dataclass
class PathTiming:
    samples: list[float]
    mean: float
    median: float
    p95: float
    checksum: float

    @classmethod
    def from_samples(cls, samples: list[float], checksum: float) -> "PathTiming":
        a = np.asarray(samples)
        return cls(list(samples), float(a.mean()), float(np.median(a)), float(np.percentile(a, 95)), checksum)


@dataclass
class BenchReport:
    image_size: int
    n_fixations: int
    sigma: float
    reps: int
    warmups: int
    seed: int
    model_size: int
    patch_size: int
    embed_dim: int
    threads: int
    vam: PathTiming
    gaze_embed: PathTiming
    speedup_mean: float
    speedup_median: float
    threshold: float = SPEEDUP_THRESHOLD
    note: str = ("attention-map timing covers rasterisation only; a two-stream pipeline also runs "
                 "a second network on the map, so this ratio is a lower bound on its overhead")
    machine: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.speedup_median >= self.threshold

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def table(self) -> str:
        def ms(t: PathTiming) -> list[str]:
            return [f"{v * 1e3:.4g}" for v in (t.median, t.mean, t.p95)]

        rows = [["attention map (full res)", *ms(self.vam)], ["aggregate + gaze embed", *ms(self.gaze_embed)]]
        out = format_table(["path", "median_ms", "mean_ms", "p95_ms"], rows)
        return (f"{out}\nspeedup (median) {self.speedup_median:.1f}x, (mean) {self.speedup_mean:.1f}x, "
                f"threshold {self.threshold:.0f}x -> {'PASS' if self.passed else 'FAIL'}")


def thread_limit() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be >= 1")
    return n


@contextmanager
def pinned_threads(n: int):
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


def random_fixations(seed: int, size: int, n: int) -> FixationSet:
    rng = np.random.default_rng([seed, 5])
    pts = np.column_stack([rng.uniform(0, size, (n, 2)), rng.integers(100, 1000, n) / 1000.0])
    return FixationSet.from_points(pts.reshape(n, 3), size, size)


def _time(fn, reps: int, warmups: int) -> tuple[list[float], float]:
    checksum = 0.0
    for _ in range(warmups):
        checksum += float(fn().sum())
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        out = fn()
        samples.append(time.perf_counter() - t0)
        # consume the result so no work can be skipped
        checksum += float(out.sum())
    return samples, checksum


def bench_paths(image_size: int = 3000, n_fixations: int = 1000, sigma: float = 150.0, reps: int = 10,
                warmups: int = 3, seed: int = 0, model_size: int = 224, patch_size: int = 16,
                embed_dim: int = 64, threads: int | None = None) -> BenchReport:
    if reps < 10:
        raise ValueError(f"reps must be >= 10 (got {reps})")
    if warmups < 3:
        raise ValueError(f"warmups must be >= 3 (got {warmups})")
    if model_size % patch_size:
        raise ValueError("model_size must be divisible by patch_size")
    threads = thread_limit() if threads is None else threads
    fix = random_fixations(seed, image_size, n_fixations)
    grid = PatchGrid(model_size, model_size, patch_size)

    def vam_path():
        return rasterize_vam(fix, sigma)

    def gaze_path():
        small = fix.rescaled(model_size, model_size)
        return gaze_embed(normalize_durations(time_aggregate(small, grid)), embed_dim).data

    with pinned_threads(threads):
        vam_s, vam_sum = _time(vam_path, reps, warmups)
        gz_s, gz_sum = _time(gaze_path, reps, warmups)
    vam_t = PathTiming.from_samples(vam_s, vam_sum)
    gz_t = PathTiming.from_samples(gz_s, gz_sum)
    return BenchReport(
        image_size=image_size, n_fixations=n_fixations, sigma=sigma, reps=reps, warmups=warmups, seed=seed,
        model_size=model_size, patch_size=patch_size, embed_dim=embed_dim, threads=threads,
        vam=vam_t, gaze_embed=gz_t,
        speedup_mean=vam_t.mean / gz_t.mean, speedup_median=vam_t.median / gz_t.median,
        machine={"python": platform.python_version(), "numpy": np.__version__, "processor": platform.machine()},
    )

"""Eye-gaze fixations: ingestion, per-patch time aggregation and VAM rasterization."""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field

import numpy as np

CSV_HEADER = ("row", "col", "duration_ms")


class GazeFormatError(ValueError):
    pass


@dataclass
class FixationSet:
    """Fixations of one image as an (P, 3) array of (row px, col px, duration s)."""

    points: np.ndarray
    image_height: int
    image_width: int
    n_dropped: int = 0  # out-of-bounds points removed at ingestion
    n_invalid: int = 0  # unparsable rows or non-positive durations

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)

    @classmethod
    def from_points(cls, points, image_height: int, image_width: int) -> "FixationSet":
        """Apply the ingestion rules: drop non-positive durations and out-of-frame points."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        finite = np.isfinite(pts).all(axis=1)
        valid = finite & (pts[:, 2] > 0)
        n_invalid = int((~valid).sum())
        pts = pts[valid]
        inside = (
            (pts[:, 0] >= 0) & (pts[:, 0] < image_height) & (pts[:, 1] >= 0) & (pts[:, 1] < image_width)
        )
        return cls(pts[inside], image_height, image_width, int((~inside).sum()), n_invalid)

    @classmethod
    def empty(cls, image_height: int, image_width: int) -> "FixationSet":
        return cls(np.zeros((0, 3)), image_height, image_width)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def rows(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def cols(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def durations(self) -> np.ndarray:
        return self.points[:, 2]

    def total_duration(self) -> float:
        return math.fsum(self.durations)

    def rescaled(self, height: int, width: int) -> "FixationSet":
        """Map coordinates to an image of size (height, width) by per-axis scale factors."""
        sy = height / self.image_height
        sx = width / self.image_width
        pts = self.points.copy()
        pts[:, 0] *= sy
        pts[:, 1] *= sx
        # guard against rounding pushing a border point onto the far edge
        pts[:, 0] = np.minimum(pts[:, 0], np.nextafter(height, 0))
        pts[:, 1] = np.minimum(pts[:, 1], np.nextafter(width, 0))
        return FixationSet(pts, height, width, self.n_dropped, self.n_invalid)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r, c, d in self.points:
            w.writerow([repr(float(r)), repr(float(c)), repr(round(float(d) * 1000.0, 9))])
        return buf.getvalue()


def parse_gaze_csv(text: str, image_height: int, image_width: int) -> FixationSet:
    """Parse ``row,col,duration_ms`` CSV text. Bad rows are dropped and counted."""
    if not text.strip():
        return FixationSet.empty(image_height, image_width)
    reader = csv.reader(io.StringIO(text))
    header = tuple(h.strip() for h in next(reader))
    if header != CSV_HEADER:
        raise GazeFormatError(f"expected header {','.join(CSV_HEADER)!r}, got {','.join(header)!r}")
    pts, bad = [], 0
    for rec in reader:
        if not rec or not "".join(rec).strip():
            continue
        try:
            r, c, d = (float(x) for x in rec)
        except ValueError:
            bad += 1
            continue
        pts.append((r, c, d / 1000.0))
    fs = FixationSet.from_points(pts, image_height, image_width)
    fs.n_invalid += bad
    return fs


def ingest_gaze(source, image_height: int, image_width: int) -> FixationSet:
    """Read a fixation CSV from a path or an open text stream."""
    if isinstance(source, (str, os.PathLike)):
        with open(source) as fh:
            text = fh.read()
    else:
        text = source.read()
    return parse_gaze_csv(text, image_height, image_width)


@dataclass(frozen=True)
class PatchGrid:
    height: int
    width: int
    patch_size: int
    rows: int = field(init=False)
    cols: int = field(init=False)

    def __post_init__(self):
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")
        object.__setattr__(self, "rows", -(-self.height // self.patch_size))
        object.__setattr__(self, "cols", -(-self.width // self.patch_size))

    @property
    def n_patches(self) -> int:
        return self.rows * self.cols

    def patch_index(self, row, col):
        S = self.patch_size
        return (np.floor(np.asarray(row) / S).astype(np.int64) * self.cols
                + np.floor(np.asarray(col) / S).astype(np.int64))


def time_aggregate(fix: FixationSet, grid: PatchGrid) -> np.ndarray:
    """Sum of fixation durations per patch (length N vector)."""
    if (fix.image_height, fix.image_width) != (grid.height, grid.width):
        raise ValueError(
            f"fixations are for a {fix.image_height}x{fix.image_width} image, grid is {grid.height}x{grid.width}"
        )
    if len(fix) == 0:
        return np.zeros(grid.n_patches)
    idx = grid.patch_index(fix.rows, fix.cols)
    return np.bincount(idx, weights=fix.durations, minlength=grid.n_patches).astype(np.float64)


def normalize_durations(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    total = v.sum()
    return v / total if total > 0 else v.copy()


def gaussian_kernel_1d(sigma: float, truncate: float = 4.0) -> np.ndarray:
    radius = int(math.ceil(truncate * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    return np.exp(-0.5 * (x / sigma) ** 2)


def rasterize_vam(fix: FixationSet, sigma: float, truncate: float = 4.0) -> np.ndarray:
    """Visual attention map: duration-weighted impulses smoothed by a truncated Gaussian.

    The impulse image is convolved with a separable kernel. Because the input is
    sparse, the convolution is evaluated as a sum of kernel windows centred on the
    impulses (the same numbers as filtering the dense impulse image, or as summing a
    Gaussian per fixation). Zero padding at the borders; output max-normalised.
    """
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    H, W = fix.image_height, fix.image_width
    out = np.zeros((H, W))
    if len(fix) == 0:
        return out
    g = gaussian_kernel_1d(sigma, truncate)
    R = (len(g) - 1) // 2
    rows = np.floor(fix.rows).astype(np.int64)
    cols = np.floor(fix.cols).astype(np.int64)
    for r, c, w in zip(rows, cols, fix.durations):
        r0, r1 = max(0, r - R), min(H, r + R + 1)
        c0, c1 = max(0, c - R), min(W, c + R + 1)
        gy = g[r0 - r + R: r1 - r + R] * w
        gx = g[c0 - c + R: c1 - c + R]
        out[r0:r1, c0:c1] += np.outer(gy, gx)
    peak = out.max()
    if peak > 0:
        out /= peak
    return out


def write_pgm(vam: np.ndarray, path) -> None:
    """8-bit binary PGM (values x255, rounded) for quick inspection."""
    vals = np.clip(np.rint(np.asarray(vam) * 255.0), 0, 255).astype(np.uint8)
    h, w = vals.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(vals.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pix = np.frombuffer(data[pos + 1: pos + 1 + w * h], dtype=np.uint8).reshape(h, w)
    return pix.astype(np.float64) / maxval

"""Synthetic gaze/image dataset, geometric augmentation and on-disk manifests."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .gaze import FixationSet, ingest_gaze

N_CLASSES = 3


@dataclass
class SyntheticSample:
    image: np.ndarray
    fixations: FixationSet
    label: int
    # bounding box (r0, c0, r1, c1) of the class-defining blob, half-open
    target_box: tuple[float, float, float, float] | None = None


@dataclass(frozen=True)
class SynthConfig:
    size: int = 64
    blob_sigma: float = 2.5
    blob_amplitude: float = 0.55
    n_decoys: int = 2
    # decoy amplitude as a fraction of the class blob's; near 1 the image alone is ambiguous
    decoy_scale: tuple[float, float] = (0.7, 0.9)
    texture_amplitude: float = 0.25
    n_target_fixations: tuple[int, int] = (8, 14)
    n_scatter_fixations: tuple[int, int] = (1, 3)
    fixation_spread: float = 3.0


def _blob(size: int, r: float, c: float, sigma: float) -> np.ndarray:
    y = np.arange(size)[:, None]
    x = np.arange(size)[None, :]
    return np.exp(-((y - r) ** 2 + (x - c) ** 2) / (2 * sigma * sigma))


def make_sample(seed: int, index: int, cfg: SynthConfig = SynthConfig()) -> SyntheticSample:
    """One sample; a pure function of (seed, index).

    The label is the horizontal band (top / middle / bottom third) holding the
    class blob, so horizontal flips preserve it. Decoys somewhat dimmer than
    the class blob sit anywhere, so the image alone is a weak cue.
    Fixations cluster on the class blob with long dwell times, plus a few short
    uniform scatter points.
    """
    rng = np.random.default_rng([seed, index])
    n = cfg.size
    label = int(rng.integers(N_CLASSES))
    margin = 3 * cfg.blob_sigma
    band = n / N_CLASSES
    r = rng.uniform(max(margin, label * band + cfg.blob_sigma), min(n - margin, (label + 1) * band - cfg.blob_sigma))
    c = rng.uniform(margin, n - margin)

    texture = ndimage.gaussian_filter(rng.normal(size=(n, n)), 3.0, mode="wrap")
    texture = (texture - texture.min()) / (np.ptp(texture) + 1e-12)
    img = 0.15 + cfg.texture_amplitude * texture + 0.03 * rng.normal(size=(n, n))
    img += cfg.blob_amplitude * _blob(n, r, c, cfg.blob_sigma)
    for _ in range(cfg.n_decoys):
        dr, dc = rng.uniform(margin, n - margin, size=2)
        amp = cfg.blob_amplitude * rng.uniform(*cfg.decoy_scale)
        img += amp * _blob(n, dr, dc, cfg.blob_sigma)
    img = np.clip(img, 0.0, 1.0)

    half = 2.5 * cfg.blob_sigma
    box = (r - half, c - half, r + half, c + half)
    n_t = int(rng.integers(cfg.n_target_fixations[0], cfg.n_target_fixations[1] + 1))
    n_s = int(rng.integers(cfg.n_scatter_fixations[0], cfg.n_scatter_fixations[1] + 1))
    tgt = np.column_stack([
        rng.normal(r, cfg.fixation_spread, n_t),
        rng.normal(c, cfg.fixation_spread, n_t),
        rng.integers(200, 900, n_t) / 1000.0,
    ])
    scat = np.column_stack([
        rng.uniform(0, n, n_s),
        rng.uniform(0, n, n_s),
        rng.integers(60, 250, n_s) / 1000.0,
    ])
    pts = np.concatenate([tgt, scat])
    pts = pts[rng.permutation(len(pts))]
    return SyntheticSample(img, FixationSet.from_points(pts, n, n), label, box)


def make_synthetic(seed: int, n: int, height: int = 64, width: int | None = None,
                   cfg: SynthConfig | None = None) -> list[SyntheticSample]:
    width = height if width is None else width
    if height != width:
        raise ValueError("synthetic images are square")
    if n < 6:
        raise ValueError("need n >= 6 so that every class can appear")
    cfg = cfg or SynthConfig(size=height)
    if cfg.size != height:
        cfg = SynthConfig(**{**cfg.__dict__, "size": height})
    return [make_sample(seed, i, cfg) for i in range(n)]


def split_indices(n: int, seed: int, test_frac: float = 0.2, val_frac: float = 0.1):
    """Disjoint (train, val, test) index arrays from a seeded permutation."""
    perm = np.random.default_rng([seed, 7]).permutation(n)
    n_test = max(1, int(round(test_frac * n)))
    n_val = int(round(val_frac * n))
    return perm[n_test + n_val:], perm[n_test:n_test + n_val], perm[:n_test]


# -- geometric transforms ---------------------------------------------------------
@dataclass(frozen=True)
class AugmentConfig:
    crop: bool = True
    flip: bool = True
    rotate: bool = True
    crop_scale: tuple[float, float] = (0.8, 1.0)
    crop_ratio: tuple[float, float] = (3 / 4, 4 / 3)
    max_rotation_deg: float = 5.0


@dataclass(frozen=True)
class Transform:
    """Crop window (source px), horizontal flip and rotation, resampled to out_size."""

    top: float
    left: float
    height: float
    width: float
    out_size: int
    flip: bool = False
    angle_deg: float = 0.0

    def matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """Forward map o = A @ s + b from source (row, col) to output (row, col)."""
        n = self.out_size
        sy, sx = n / self.height, n / self.width
        # pixel-centre aligned resize of the crop window
        A = np.diag([sy, sx])
        b = np.array([(0.5 - self.top) * sy - 0.5, (0.5 - self.left) * sx - 0.5])
        if self.flip:
            F = np.diag([1.0, -1.0])
            A, b = F @ A, F @ b + np.array([0.0, n - 1.0])
        if self.angle_deg:
            t = math.radians(self.angle_deg)
            Rm = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
            ctr = np.full(2, (n - 1) / 2.0)
            A, b = Rm @ A, Rm @ (b - ctr) + ctr
        return A, b

    def apply_image(self, image: np.ndarray) -> np.ndarray:
        A, b = self.matrix()
        Ainv = np.linalg.inv(A)
        return ndimage.affine_transform(
            image, Ainv, offset=-Ainv @ b, output_shape=(self.out_size, self.out_size),
            order=1, mode="constant", cval=0.0,
        )

    def apply_points(self, rows, cols) -> np.ndarray:
        A, b = self.matrix()
        src = np.column_stack([rows, cols])
        return src @ A.T + b

    def apply_fixations(self, fix: FixationSet) -> FixationSet:
        n = self.out_size
        out = self.apply_points(fix.rows, fix.cols)
        pts = np.column_stack([out, fix.durations])
        keep = (out >= 0).all(axis=1) & (out < n).all(axis=1)
        return FixationSet(pts[keep], n, n, fix.n_dropped + int((~keep).sum()), fix.n_invalid)


def identity_transform(height: int, width: int, out_size: int) -> Transform:
    return Transform(0.0, 0.0, float(height), float(width), out_size)


def random_transform(rng: np.random.Generator, height: int, width: int, out_size: int,
                     cfg: AugmentConfig = AugmentConfig()) -> Transform:
    ch, cw = float(height), float(width)
    top = left = 0.0
    if cfg.crop:
        area = height * width * rng.uniform(*cfg.crop_scale)
        ratio = math.exp(rng.uniform(math.log(cfg.crop_ratio[0]), math.log(cfg.crop_ratio[1])))
        cw = min(float(width), math.sqrt(area * ratio))
        ch = min(float(height), math.sqrt(area / ratio))
        top = rng.uniform(0, height - ch)
        left = rng.uniform(0, width - cw)
    flip = bool(cfg.flip and rng.random() < 0.5)
    angle = float(rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg)) if cfg.rotate else 0.0
    return Transform(top, left, ch, cw, out_size, flip, angle)


def apply_transform(sample: SyntheticSample, tf: Transform) -> SyntheticSample:
    box = sample.target_box
    if box is not None:
        corners = tf.apply_points([box[0], box[0], box[2], box[2]], [box[1], box[3], box[1], box[3]])
        box = (*corners.min(axis=0), *corners.max(axis=0))
    return SyntheticSample(tf.apply_image(sample.image), tf.apply_fixations(sample.fixations), sample.label, box)


def augment(sample: SyntheticSample, rng: np.random.Generator, out_size: int,
            cfg: AugmentConfig = AugmentConfig()) -> SyntheticSample:
    """Random resized crop + flip + small rotation, applied identically to pixels and gaze."""
    H, W = sample.image.shape
    return apply_transform(sample, random_transform(rng, H, W, out_size, cfg))


def resize(sample: SyntheticSample, out_size: int) -> SyntheticSample:
    H, W = sample.image.shape
    if (H, W) == (out_size, out_size):
        return sample
    return apply_transform(sample, identity_transform(H, W, out_size))


def add_noise(image: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Additive Gaussian noise with std = sigma * intensity range, clipped to [0, 1]."""
    if sigma == 0:
        return image.copy()
    return np.clip(image + rng.normal(0.0, sigma, size=image.shape), 0.0, 1.0)


# -- manifests -----------------------------------------------------------------
def write_dataset(samples: list[SyntheticSample], out_dir, name: str = "manifest.jsonl") -> Path:
    """Images as .npy, gaze as fixation CSV, one JSON line per sample."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "gaze").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        img_rel = f"images/{i:05d}.npy"
        gaze_rel = f"gaze/{i:05d}.csv"
        np.save(out_dir / img_rel, np.ascontiguousarray(s.image, dtype=np.float64))
        with open(out_dir / gaze_rel, "w") as fh:
            fh.write(s.fixations.to_csv())
        lines.append(json.dumps({"image_path": img_rel, "gaze_path": gaze_rel, "label": int(s.label)}, sort_keys=True))
    manifest = out_dir / name
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_dataset(manifest) -> list[SyntheticSample]:
    manifest = Path(manifest)
    if not manifest.exists():
        raise FileNotFoundError(f"manifest not found: {manifest}")
    root = manifest.parent
    samples = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        img_path = root / rec["image_path"]
        gaze_path = root / rec["gaze_path"]
        for p in (img_path, gaze_path):
            if not os.path.exists(p):
                raise FileNotFoundError(f"{manifest}: referenced file missing: {p}")
        img = np.load(img_path)
        fix = ingest_gaze(gaze_path, *img.shape)
        samples.append(SyntheticSample(img, fix, int(rec["label"])))
    return samples

"""LBP-based image descriptors: LBP of dense moments and bag of dense LBP.

Images are ``(H, W, 3)`` float arrays holding R, G, B intensities in
[0, 255]. LBP codes use a circular neighbourhood sampled with bilinear
interpolation; a neighbour sets its bit when it is ``>=`` the centre, and
codes are bucketed into the ``samples + 2`` uniform rotation-invariant bins
(bit count for patterns with at most two 0/1 transitions, one extra bin for
everything else).
"""
from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IMAGE_SUFFIXES = (".png", ".tif", ".tiff")


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class LbpConfig:
    radius: float = 2
    samples: int = 16

    @property
    def pattern_count(self) -> int:
        return self.samples + 2

    @property
    def margin(self) -> int:
        return int(math.ceil(self.radius))


DEFAULT_LBP = LbpConfig()


def _offsets(config: LbpConfig) -> tuple[np.ndarray, np.ndarray]:
    angles = 2 * np.pi * np.arange(config.samples) / config.samples
    # rounding keeps on-grid neighbours exactly on the grid
    dy = np.round(-config.radius * np.sin(angles), 5)
    dx = np.round(config.radius * np.cos(angles), 5)
    return dy, dx


def lbp_codes(matrix, config: LbpConfig = DEFAULT_LBP) -> np.ndarray:
    """Uniform rotation-invariant LBP bin of every interior pixel.

    The result has shape ``(H - 2m, W - 2m)`` where ``m = ceil(radius)``.
    """
    img = np.asarray(matrix, dtype=np.float64)
    m = config.margin
    if img.ndim != 2 or min(img.shape) < 2 * m + 1:
        raise FeatureError(f"matrix of shape {img.shape} is smaller than the LBP support {2 * m + 1}x{2 * m + 1}")
    h, w = img.shape[0] - 2 * m, img.shape[1] - 2 * m
    # one extra pixel of padding: the far corner of a bilinear cell may lie
    # just outside the support when its weight is exactly zero
    padded = np.pad(img, 1, mode="edge")
    base = m + 1
    center = padded[base:base + h, base:base + w]

    def window(oy, ox):
        return padded[base + oy:base + oy + h, base + ox:base + ox + w]

    bits = np.empty((config.samples, h, w), dtype=bool)
    for p, (dy, dx) in enumerate(zip(*_offsets(config))):
        y0, x0 = int(np.floor(dy)), int(np.floor(dx))
        ty, tx = dy - y0, dx - x0
        a, b = window(y0, x0), window(y0, x0 + 1)
        c, d = window(y0 + 1, x0), window(y0 + 1, x0 + 1)
        top = a + tx * (b - a)
        bottom = c + tx * (d - c)
        bits[p] = (top + ty * (bottom - top)) >= center

    transitions = np.count_nonzero(bits != np.roll(bits, 1, axis=0), axis=0)
    ones = np.count_nonzero(bits, axis=0)
    return np.where(transitions <= 2, ones, config.samples + 1)


def lbp_histogram(matrix, config: LbpConfig = DEFAULT_LBP) -> np.ndarray:
    """Count of interior pixels per uniform rotation-invariant pattern."""
    codes = lbp_codes(matrix, config)
    return np.bincount(codes.ravel(), minlength=config.pattern_count).astype(np.float64)


def _normalized(hist: np.ndarray) -> np.ndarray:
    total = hist.sum()
    return hist / total if total > 0 else hist


def validate_image(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FeatureError(f"expected an (H, W, 3) RGB image, got shape {img.shape}")
    return img


def lbp_of_dense_moments(image, w: int = 16, config: LbpConfig = DEFAULT_LBP) -> np.ndarray:
    """LBP histograms of the per-patch mean and std maps of each channel.

    The image is cut into a non-overlapping grid of ``w x w`` patches (any
    remainder on the right/bottom is dropped). For each channel the mean map
    and the std map get one normalized LBP histogram each, giving
    ``3 * 2 * pattern_count`` values ordered R-mean, R-std, G-mean, ...
    """
    img = validate_image(image)
    gh, gw = img.shape[0] // w, img.shape[1] // w
    support = 2 * config.margin + 1
    if gh < support or gw < support:
        raise FeatureError(f"patch grid {gh}x{gw} is smaller than the LBP support {support}x{support}")
    patches = img[:gh * w, :gw * w].reshape(gh, w, gw, w, 3)
    means = patches.mean(axis=(1, 3))
    stds = patches.std(axis=(1, 3))
    parts = []
    for ch in range(3):
        parts.append(_normalized(lbp_histogram(means[:, :, ch], config)))
        parts.append(_normalized(lbp_histogram(stds[:, :, ch], config)))
    return np.concatenate(parts)


def patch_positions(height: int, width: int, w: int, step: int) -> list[tuple[int, int]]:
    """Top-left corners of every ``w x w`` patch on a grid with the given step."""
    return [(top, left)
            for top in range(0, height - w + 1, step)
            for left in range(0, width - w + 1, step)]


def patch_descriptors(image, w: int = 16, step: int = 16, config: LbpConfig = DEFAULT_LBP) -> np.ndarray:
    """Per-patch LBP descriptors, one row per patch of the dense grid.

    Each row concatenates the L1-normalized LBP histograms of the R, G and B
    channels computed inside the patch, i.e. ``3 * pattern_count`` values.
    """
    img = validate_image(image)
    m = config.margin
    if w < 2 * m + 1:
        raise FeatureError(f"patch size {w} is smaller than the LBP support {2 * m + 1}")
    positions = patch_positions(img.shape[0], img.shape[1], w, step)
    if not positions:
        raise FeatureError(f"image {img.shape[:2]} has no {w}x{w} patch")
    n_bins = config.pattern_count
    inner = w - 2 * m
    out = np.empty((len(positions), 3 * n_bins))
    for ch in range(3):
        # a pixel's code only depends on pixels within the radius, so codes of
        # the whole channel equal the patch-local codes on each patch interior
        codes = lbp_codes(img[:, :, ch], config)
        for row, (top, left) in enumerate(positions):
            block = codes[top:top + inner, left:left + inner]
            hist = np.bincount(block.ravel(), minlength=n_bins)
            out[row, ch * n_bins:(ch + 1) * n_bins] = hist / hist.sum()
    return out


# ---------------------------------------------------------------------------
# Codebooks


@dataclass(frozen=True)
class Codebook:
    centers: np.ndarray
    seed: int = 0
    n_iter: int = 0
    inertia: float = 0.0
    inertia_history: tuple[float, ...] = field(default=(), compare=False)

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    def assign(self, descriptors) -> np.ndarray:
        return nearest_center(np.asarray(descriptors, dtype=np.float64), self.centers)


def nearest_center(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Index of the closest center per row (Euclidean; ties to the lowest index)."""
    out = np.empty(len(X), dtype=np.int64)
    chunk = max(1, 4_000_000 // max(centers.size, 1))
    for start in range(0, len(X), chunk):
        block = X[start:start + chunk]
        d = ((block[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        out[start:start + chunk] = np.argmin(d, axis=1)
    return out


def _kmeans_pp(X: np.ndarray, k: int, rng: random.Random) -> np.ndarray:
    n = len(X)
    chosen = [rng.randrange(n)]
    closest = ((X - X[chosen[0]]) ** 2).sum(1)
    for _ in range(1, k):
        total = float(closest.sum())
        if total <= 0.0:
            taken = set(chosen)
            idx = next(i for i in range(n) if i not in taken)
        else:
            cumulative = np.cumsum(closest)
            idx = int(np.searchsorted(cumulative, rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        chosen.append(idx)
        closest = np.minimum(closest, ((X - X[idx]) ** 2).sum(1))
    return X[chosen].copy()


def build_codebook(descriptors, size: int = 1024, seed: int = 0, max_iter: int = 100) -> Codebook:
    """k-means with k-means++ seeding, deterministic in its inputs.

    Lloyd iterations stop after ``max_iter`` rounds or as soon as no
    assignment changes. A center that loses all its members keeps its
    previous position.
    """
    X = np.asarray(descriptors, dtype=np.float64)
    if X.ndim != 2 or len(X) < size:
        raise FeatureError(f"need at least {size} descriptors, got {len(X)}")
    if not np.all(np.isfinite(X)):
        raise FeatureError("descriptors must be finite")
    rng = random.Random(int(seed))
    centers = _kmeans_pp(X, size, rng)
    assignment = None
    history = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new_assignment = nearest_center(X, centers)
        inertia = float(((X - centers[new_assignment]) ** 2).sum())
        history.append(inertia)
        if assignment is not None and np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        counts = np.bincount(assignment, minlength=size)
        sums = np.zeros_like(centers)
        np.add.at(sums, assignment, X)
        filled = counts > 0
        centers[filled] = sums[filled] / counts[filled, None]
    else:
        # max_iter reached: report the inertia of the final centers
        assignment = nearest_center(X, centers)
        history.append(float(((X - centers[assignment]) ** 2).sum()))
    return Codebook(centers, int(seed), n_iter, history[-1], tuple(history))


def write_codebook(path, codebook: Codebook, header_lines=()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(f"# k={codebook.size} seed={codebook.seed} inertia={codebook.inertia!r}\n")
        writer = csv.writer(fh, lineterminator="\n")
        for row in codebook.centers:
            writer.writerow([repr(float(x)) for x in row])


def read_codebook(path) -> Codebook:
    meta: dict[str, str] = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                for token in line[1:].split():
                    key, eq, value = token.partition("=")
                    if eq:
                        meta[key] = value
            elif line.strip():
                rows.append([float(x) for x in line.strip().split(",")])
    if "k" not in meta:
        raise FeatureError(f"{path}: missing '# k=<n> seed=<u64> inertia=<f>' header")
    centers = np.array(rows, dtype=np.float64)
    if centers.shape[0] != int(meta["k"]) or not np.all(np.isfinite(centers)):
        raise FeatureError(f"{path}: expected {meta['k']} finite centers, found {centers.shape[0]}")
    return Codebook(centers, int(meta.get("seed", 0)), 0, float(meta.get("inertia", "nan")))


def bag_of_dense_lbp(image, codebook: Codebook, w: int = 16, step: int = 16,
                     config: LbpConfig = DEFAULT_LBP) -> np.ndarray:
    """Normalized histogram of nearest codebook centers over the dense patch grid."""
    desc = patch_descriptors(image, w, step, config)
    counts = np.bincount(codebook.assign(desc), minlength=codebook.size).astype(np.float64)
    return counts / counts.sum()


def l2_normalize(vector) -> np.ndarray:
    v = np.asarray(vector, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm < 1e-12:
        return v.copy()
    return v / norm


# ---------------------------------------------------------------------------
# Image folders


def load_image(path) -> np.ndarray:
    """Decode a PNG or uncompressed TIFF into an ``(H, W, 3)`` float array."""
    from PIL import Image as PILImage

    path = Path(path)
    with PILImage.open(path) as im:
        if im.format not in ("PNG", "TIFF"):
            raise FeatureError(f"{path}: unsupported image format {im.format}")
        if im.format == "TIFF" and im.info.get("compression", "raw") not in ("raw", None):
            raise FeatureError(f"{path}: compressed TIFF is not supported")
        return np.asarray(im.convert("RGB"), dtype=np.float64)


def scan_image_folder(root) -> list[tuple[str, str, Path]]:
    """List ``(sample_id, class_name, path)`` for a ``<class>/<image>`` tree, sorted."""
    root = Path(root)
    if not root.is_dir():
        raise FeatureError(f"image folder not found: {root}")
    items = []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for img in sorted(class_dir.iterdir()):
            if img.suffix.lower() in IMAGE_SUFFIXES:
                items.append((f"{class_dir.name}/{img.stem}", class_dir.name, img))
    if not items:
        raise FeatureError(f"no PNG/TIFF images under {root}")
    return items

"""Built-in single-scale extractor: segment-test corners + steered binary
descriptors.

Detection runs the accelerated segment test on the 16-pixel Bresenham
circle of radius 3: a pixel is a candidate when at least ``arc_length``
contiguous circle pixels are all brighter than center + threshold or all
darker than center - threshold. The candidate score is the sum of
|I(ring) - I(center)| over every position inside a qualifying contiguous
run (for arc_length >= 9 only one such run can exist). Greedy non-maximum
suppression over a Chebyshev radius follows, ties broken by (y, x).

Orientation is the intensity-centroid angle atan2(m01, m10) over a
radius-15 disc. Description compares 256 point pairs of a seeded Gaussian
pattern, steered by the keypoint angle, sampled nearest-neighbor from a
5x5 box-smoothed image. All arithmetic is integer or fixed-seed, so the
whole pipeline is deterministic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.ndimage import convolve

from .dataset import GrayImage
from .errors import ImageTooSmall, InvariantViolation, OutOfBounds
from .features import DescriptorMatrix, FeatureSet
from .rng import Lcg

# Bresenham circle of radius 3, clockwise from 12 o'clock, as (dx, dy).
CIRCLE_OFFSETS = (
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
)

PATCH_SIZE = 31
PATCH_RADIUS = PATCH_SIZE // 2
ORIENTATION_RADIUS = 15
PATTERN_SIGMA = PATCH_SIZE / 5.0
DESCRIPTOR_BITS = 256
DEFAULT_PATTERN_SEED = 42


@dataclass(frozen=True)
class FastConfig:
    intensity_threshold: int = 20
    arc_length: int = 9
    nms_radius: int = 3
    border: int = 16
    max_keypoints: int = 2000

    def validate(self) -> None:
        if not 1 <= self.arc_length <= 16:
            raise InvariantViolation("arc_length must be in 1..16")
        if self.border < 16:
            raise InvariantViolation("border must be >= 16 (descriptor footprint)")
        if self.nms_radius < 0 or self.max_keypoints < 1:
            raise InvariantViolation("nms_radius >= 0 and max_keypoints >= 1 required")


@dataclass(frozen=True)
class BriefPattern:
    """256 integer point pairs inside the 31x31 patch.

    Coordinates are Gaussian (sigma = 31/5) LCG samples rounded and clamped
    to [-15, 15]; a pair whose points coincide resamples its second point.
    """

    seed: int
    points_a: np.ndarray  # (256, 2) int32 (dx, dy)
    points_b: np.ndarray

    @classmethod
    def generate(cls, seed: int = DEFAULT_PATTERN_SEED) -> "BriefPattern":
        rng = Lcg(seed)

        def draw_point() -> tuple[int, int]:
            gx = int(np.clip(round(rng.gauss() * PATTERN_SIGMA), -PATCH_RADIUS, PATCH_RADIUS))
            gy = int(np.clip(round(rng.gauss() * PATTERN_SIGMA), -PATCH_RADIUS, PATCH_RADIUS))
            return gx, gy

        pts_a = np.empty((DESCRIPTOR_BITS, 2), np.int32)
        pts_b = np.empty((DESCRIPTOR_BITS, 2), np.int32)
        for i in range(DESCRIPTOR_BITS):
            a = draw_point()
            b = draw_point()
            while b == a:
                b = draw_point()
            pts_a[i] = a
            pts_b[i] = b
        pts_a.flags.writeable = False
        pts_b.flags.writeable = False
        return cls(seed, pts_a, pts_b)


@lru_cache(maxsize=8)
def _pattern_cached(seed: int) -> BriefPattern:
    return BriefPattern.generate(seed)


# ---------------------------------------------------------------------------
# Detection


def fast_score_map(img: GrayImage, cfg: FastConfig | None = None) -> np.ndarray:
    """Segment-test score per pixel (0 where the test fails).

    Pixels within ``cfg.border`` of the image edge always score 0.
    """
    cfg = cfg or FastConfig()
    cfg.validate()
    h, w = img.height, img.width
    if w <= 2 * cfg.border or h <= 2 * cfg.border:
        raise ImageTooSmall(f"image {w}x{h} too small for border {cfg.border}")
    pix = img.pixels.astype(np.int32)
    b = cfg.border
    center = pix[b : h - b, b : w - b]
    ring = np.stack(
        [pix[b + dy : h - b + dy, b + dx : w - b + dx] for dx, dy in CIRCLE_OFFSETS]
    )
    t = cfg.intensity_threshold
    absdiff = np.abs(ring - center)
    score = np.zeros(center.shape, np.float64)
    candidate = np.zeros(center.shape, bool)
    for mask in (ring > center + t, ring < center - t):
        # windows[s] = True when positions s .. s+L-1 (circular) all qualify
        windows = np.ones_like(mask)
        for k in range(cfg.arc_length):
            windows &= np.roll(mask, -k, axis=0)
        covered = np.zeros_like(mask)
        for j in range(cfg.arc_length):
            covered |= np.roll(windows, j, axis=0)
        candidate |= windows.any(axis=0)
        score += np.where(covered, absdiff, 0).sum(axis=0)
    out = np.zeros((h, w), np.float64)
    out[b : h - b, b : w - b] = np.where(candidate, score, 0.0)
    return out


def detect_fast(img: GrayImage, cfg: FastConfig | None = None) -> np.ndarray:
    """Segment-test corners as (n, 5) float32 keypoint rows.

    Columns are (x, y, scale, angle, score) with scale 0 and angle NaN at
    this stage. Non-maximum suppression is greedy by descending score over
    a Chebyshev radius, ties broken by (y, x) ascending; the result is
    sorted by score descending and truncated to ``max_keypoints``.
    """
    cfg = cfg or FastConfig()
    scores = fast_score_map(img, cfg)
    ys, xs = np.nonzero(scores > 0)
    if len(xs) == 0:
        return np.empty((0, 5), np.float32)
    vals = scores[ys, xs]
    order = np.lexsort((xs, ys, -vals))
    ys, xs, vals = ys[order], xs[order], vals[order]

    r = cfg.nms_radius
    h, w = img.height, img.width
    suppressed = np.zeros((h, w), bool)
    keep = []
    for i in range(len(xs)):
        y, x = int(ys[i]), int(xs[i])
        if suppressed[y, x]:
            continue
        keep.append(i)
        suppressed[max(0, y - r) : y + r + 1, max(0, x - r) : x + r + 1] = True
    keep = keep[: cfg.max_keypoints]

    out = np.zeros((len(keep), 5), np.float32)
    out[:, 0] = xs[keep]
    out[:, 1] = ys[keep]
    out[:, 3] = np.nan
    out[:, 4] = vals[keep]
    return out


# ---------------------------------------------------------------------------
# Orientation


@lru_cache(maxsize=8)
def _disc_offsets(radius: int) -> tuple[np.ndarray, np.ndarray]:
    dy, dx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    inside = dx * dx + dy * dy <= radius * radius
    return dx[inside].astype(np.int64), dy[inside].astype(np.int64)


def _orientations(img: GrayImage, xs, ys, radius: int) -> np.ndarray:
    dx, dy = _disc_offsets(radius)
    cx = np.floor(np.asarray(xs, np.float64) + 0.5).astype(np.int64)
    cy = np.floor(np.asarray(ys, np.float64) + 0.5).astype(np.int64)
    if np.any(cx - radius < 0) or np.any(cx + radius > img.width - 1):
        raise OutOfBounds("orientation disc leaves the image")
    if np.any(cy - radius < 0) or np.any(cy + radius > img.height - 1):
        raise OutOfBounds("orientation disc leaves the image")
    intens = img.pixels.astype(np.int64)
    patch = intens[cy[:, None] + dy[None, :], cx[:, None] + dx[None, :]]
    m10 = (patch * dx[None, :]).sum(axis=1)
    m01 = (patch * dy[None, :]).sum(axis=1)
    ang = np.arctan2(m01.astype(np.float64), m10.astype(np.float64))
    ang = np.mod(ang, 2.0 * math.pi)
    ang[(m10 == 0) & (m01 == 0)] = 0.0  # symmetric patch: defined as 0
    return ang


def compute_orientation(img: GrayImage, kp, radius: int = ORIENTATION_RADIUS) -> float:
    """Intensity-centroid angle in [0, 2*pi) for one keypoint (x, y)."""
    x, y = (kp[0], kp[1]) if not hasattr(kp, "x") else (kp.x, kp.y)
    return float(_orientations(img, [x], [y], radius)[0])


# ---------------------------------------------------------------------------
# Description


def box_smooth_sums(img: GrayImage) -> np.ndarray:
    """5x5 neighborhood integer sums with edge replication.

    Comparing sums is equivalent to comparing box-filtered means, and the
    integer arithmetic keeps descriptor bits reproducible.
    """
    return convolve(img.pixels.astype(np.int32), np.ones((5, 5), np.int32), mode="nearest")


def _describe_batch(
    img: GrayImage, kps: np.ndarray, pattern: BriefPattern, smoothed: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Descriptors for (n, 5) keypoint rows with angles set.

    Returns (descriptors (n, 32) uint8, valid mask); a keypoint is invalid
    when any rotated sample position rounds outside the image.
    """
    if smoothed is None:
        smoothed = box_smooth_sums(img)
    n = kps.shape[0]
    if n == 0:
        return np.empty((0, DESCRIPTOR_BITS // 8), np.uint8), np.empty(0, bool)
    ang = kps[:, 3].astype(np.float64)
    cos, sin = np.cos(ang), np.sin(ang)
    pts = np.concatenate([pattern.points_a, pattern.points_b]).astype(np.float64)  # (512, 2)
    # Rotate pattern offsets by each keypoint angle.
    rx = cos[:, None] * pts[None, :, 0] - sin[:, None] * pts[None, :, 1]
    ry = sin[:, None] * pts[None, :, 0] + cos[:, None] * pts[None, :, 1]
    px = np.floor(kps[:, 0:1].astype(np.float64) + rx + 0.5).astype(np.int64)
    py = np.floor(kps[:, 1:2].astype(np.float64) + ry + 0.5).astype(np.int64)
    valid = (
        (px >= 0).all(axis=1)
        & (px <= img.width - 1).all(axis=1)
        & (py >= 0).all(axis=1)
        & (py <= img.height - 1).all(axis=1)
    )
    px = np.clip(px, 0, img.width - 1)
    py = np.clip(py, 0, img.height - 1)
    samples = smoothed[py, px]  # (n, 512)
    bits = samples[:, :DESCRIPTOR_BITS] < samples[:, DESCRIPTOR_BITS:]
    desc = np.packbits(bits, axis=1, bitorder="little")
    return desc, valid


def describe_brief(
    img: GrayImage, kp, pattern: BriefPattern, smoothed: np.ndarray | None = None
) -> np.ndarray:
    """256-bit packed descriptor for a single oriented keypoint.

    ``kp`` is a 5-vector (x, y, scale, angle, score) or Keypoint. Raises
    OutOfBounds when the steered pattern footprint leaves the image.
    """
    if hasattr(kp, "x"):
        row = np.array([[kp.x, kp.y, kp.scale, kp.angle, kp.score]], np.float32)
    else:
        row = np.asarray(kp, np.float32).reshape(1, 5)
    desc, valid = _describe_batch(img, row, pattern, smoothed)
    if not valid[0]:
        raise OutOfBounds("descriptor footprint leaves the image")
    return desc[0]


# ---------------------------------------------------------------------------
# Full pipeline


def extract(
    img: GrayImage,
    cfg: FastConfig | None = None,
    pattern_seed: int = DEFAULT_PATTERN_SEED,
    image_id: str = "",
) -> FeatureSet:
    """Detect, orient and describe; keypoints losing their descriptor
    footprint are dropped. Output scale is the 31 px patch width."""
    cfg = cfg or FastConfig()
    kps = detect_fast(img, cfg)
    pattern = _pattern_cached(pattern_seed)
    smoothed = box_smooth_sums(img)
    if len(kps):
        kps = kps.copy()
        kps[:, 3] = _orientations(img, kps[:, 0], kps[:, 1], ORIENTATION_RADIUS)
        desc, valid = _describe_batch(img, kps, pattern, smoothed)
        kps = kps[valid]
        desc = desc[valid]
        kps[:, 2] = float(PATCH_SIZE)
    else:
        desc = np.empty((0, DESCRIPTOR_BITS // 8), np.uint8)
    fs = FeatureSet(
        image_id,
        img.size,
        kps,
        DescriptorMatrix.packed_binary(desc, DESCRIPTOR_BITS),
    )
    fs.validate()
    return fs

"""Homography algebra, normalized DLT estimation and seeded RANSAC.

The RANSAC here is deliberately plain: uniform minimal samples from the
shared 64-bit LCG, a normalized-DLT fit per sample, inlier counting with a
strict reprojection threshold, adaptive termination, and one final DLT
refit on the best model's inliers. Everything is deterministic given the
seed in :class:`RansacConfig`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (
    DegenerateConfiguration,
    InvariantViolation,
    NoModel,
    PointAtInfinity,
    TooFewMatches,
)
from .rng import Lcg

_DENOM_EPS = 1e-12
_DET_EPS = 1e-12
_H33_EPS = 1e-9
_SIGMA8_EPS = 1e-10
_COLLINEAR_AREA = 1e-8  # px^2


class Correspondence(NamedTuple):
    p: tuple[float, float]  # point in the reference image
    q: tuple[float, float]  # point in the target image


@dataclass(frozen=True, eq=False)
class Homography:
    """3x3 projective transform, normalized so h33 == 1 when possible.

    When |h33| falls below 1e-9 the matrix is normalized to unit Frobenius
    norm instead and ``unit_frobenius`` is set.
    """

    matrix: np.ndarray  # (3, 3) float64, read-only
    unit_frobenius: bool = False

    @classmethod
    def from_matrix(cls, m) -> "Homography":
        m = np.asarray(m, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(m)):
            raise InvariantViolation("homography entries must be finite")
        h33 = m[2, 2]
        if abs(h33) >= _H33_EPS:
            m = m / h33
            flagged = False
        else:
            norm = float(np.linalg.norm(m))
            if norm < _DENOM_EPS:
                raise InvariantViolation("homography is the zero matrix")
            m = m / norm
            # Fix the sign so normalization is canonical.
            flat = m.ravel()
            lead = flat[np.argmax(np.abs(flat))]
            if lead < 0:
                m = -m
            flagged = True
        if abs(np.linalg.det(m)) <= _DET_EPS:
            raise InvariantViolation("homography is not invertible")
        m = np.ascontiguousarray(m)
        m.flags.writeable = False
        obj = cls(m, flagged)
        return obj

    @classmethod
    def identity(cls) -> "Homography":
        return cls.from_matrix(np.eye(3))

    def inverse(self) -> "Homography":
        return Homography.from_matrix(np.linalg.inv(self.matrix))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Homography):
            return NotImplemented
        return np.array_equal(self.matrix, other.matrix)


def apply_homography(h: Homography, p) -> tuple[float, float]:
    """Map one point; raises PointAtInfinity when the denominator vanishes."""
    x, y = float(p[0]), float(p[1])
    m = h.matrix
    den = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if abs(den) < _DENOM_EPS:
        raise PointAtInfinity(f"point ({x}, {y}) maps to infinity")
    return (
        (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / den,
        (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / den,
    )


def apply_homography_array(h: Homography, pts: np.ndarray) -> np.ndarray:
    """Map (n, 2) points; rows mapping to infinity come back as +inf."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    m = h.matrix
    den = m[2, 0] * pts[:, 0] + m[2, 1] * pts[:, 1] + m[2, 2]
    out = np.empty_like(pts)
    bad = np.abs(den) < _DENOM_EPS
    den = np.where(bad, 1.0, den)
    out[:, 0] = (m[0, 0] * pts[:, 0] + m[0, 1] * pts[:, 1] + m[0, 2]) / den
    out[:, 1] = (m[1, 0] * pts[:, 0] + m[1, 1] * pts[:, 1] + m[1, 2]) / den
    out[bad] = np.inf
    return out


def _normalize_points(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hartley normalization: centroid 0, mean distance sqrt(2)."""
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    if d < _DENOM_EPS:
        raise DegenerateConfiguration("all points coincide")
    s = math.sqrt(2.0) / d
    t = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    return (pts - c) * s, t


def dlt_homography(ref_pts, tgt_pts) -> Homography:
    """Normalized DLT from >=4 correspondences.

    Solves the homogeneous 2n x 9 system with the smallest right singular
    vector; the configuration is degenerate when the 8th singular value
    drops below 1e-10 (the solution space then has dimension > 1).
    """
    ref = np.asarray(ref_pts, dtype=np.float64).reshape(-1, 2)
    tgt = np.asarray(tgt_pts, dtype=np.float64).reshape(-1, 2)
    n = ref.shape[0]
    if n < 4 or tgt.shape[0] != n:
        raise DegenerateConfiguration(f"need >= 4 correspondences, got {n}")
    pn, tp = _normalize_points(ref)
    qn, tq = _normalize_points(tgt)
    a = np.zeros((2 * n, 9))
    x, y = pn[:, 0], pn[:, 1]
    u, v = qn[:, 0], qn[:, 1]
    a[0::2, 0] = x
    a[0::2, 1] = y
    a[0::2, 2] = 1.0
    a[0::2, 6] = -u * x
    a[0::2, 7] = -u * y
    a[0::2, 8] = -u
    a[1::2, 3] = x
    a[1::2, 4] = y
    a[1::2, 5] = 1.0
    a[1::2, 6] = -v * x
    a[1::2, 7] = -v * y
    a[1::2, 8] = -v
    _, s, vt = np.linalg.svd(a, full_matrices=True)
    if len(s) >= 8 and s[7] < _SIGMA8_EPS:
        raise DegenerateConfiguration("rank-deficient correspondence configuration")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(tq) @ hn @ tp
    try:
        return Homography.from_matrix(h)
    except InvariantViolation as e:
        raise DegenerateConfiguration(str(e)) from e


def reprojection_error(h: Homography, corr) -> float:
    """|H(p) - q| in pixels; +inf when p maps to infinity."""
    p, q = corr
    try:
        px, py = apply_homography(h, p)
    except PointAtInfinity:
        return math.inf
    return math.hypot(px - q[0], py - q[1])


def reprojection_errors(h: Homography, ref_pts, tgt_pts) -> np.ndarray:
    """Vectorized reprojection errors; infinite rows stay +inf."""
    ref = np.asarray(ref_pts, dtype=np.float64).reshape(-1, 2)
    tgt = np.asarray(tgt_pts, dtype=np.float64).reshape(-1, 2)
    proj = apply_homography_array(h, ref)
    with np.errstate(invalid="ignore"):
        d = proj - tgt
        err = np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2)
    err[~np.isfinite(proj).all(axis=1)] = np.inf
    return err


@dataclass(frozen=True)
class RansacConfig:
    reproj_threshold: float = 3.0  # px
    max_iters: int = 5000
    confidence: float = 0.9999
    seed: int = 0

    def validate(self) -> None:
        if self.reproj_threshold <= 0:
            raise InvariantViolation("reproj_threshold must be positive")
        if not 0.0 < self.confidence < 1.0:
            raise InvariantViolation("confidence must lie strictly in (0, 1)")
        if self.max_iters < 1:
            raise InvariantViolation("max_iters must be >= 1")


@dataclass(frozen=True)
class RansacResult:
    homography: Homography
    inlier_mask: np.ndarray = field(repr=False)  # bool per input correspondence
    iterations_run: int = 0

    @property
    def inlier_count(self) -> int:
        return int(self.inlier_mask.sum())


def _any_three_collinear(pts4: np.ndarray) -> bool:
    """True when any 3 of the 4 points span a triangle of area < 1e-8 px^2."""
    for skip in range(4):
        tri = np.delete(pts4, skip, axis=0)
        area = 0.5 * abs(
            (tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1])
            - (tri[2, 0] - tri[0, 0]) * (tri[1, 1] - tri[0, 1])
        )
        if area < _COLLINEAR_AREA:
            return True
    return False


def ransac_homography(ref_pts, tgt_pts, cfg: RansacConfig | None = None) -> RansacResult:
    """Robust homography fit with adaptive termination and one inlier refit.

    Minimal samples of 4 distinct indices come from the shared LCG seeded
    with ``cfg.seed``; samples whose reference points contain a collinear
    triple are skipped (still counting as iterations). The iteration budget
    shrinks to log(1-confidence)/log(1-w^4) as the best inlier ratio w
    improves, capped at ``cfg.max_iters``.
    """
    cfg = cfg or RansacConfig()
    cfg.validate()
    ref = np.asarray(ref_pts, dtype=np.float64).reshape(-1, 2)
    tgt = np.asarray(tgt_pts, dtype=np.float64).reshape(-1, 2)
    n = ref.shape[0]
    if n < 4 or tgt.shape[0] != n:
        raise TooFewMatches(f"RANSAC needs >= 4 correspondences, got {n}")

    rng = Lcg(cfg.seed)
    best_count = 0
    best_h: Homography | None = None
    best_mask: np.ndarray | None = None
    needed = math.inf
    iters = 0
    log_term = math.log1p(-cfg.confidence)  # log(1 - confidence) < 0

    while iters < cfg.max_iters and iters < needed:
        iters += 1
        idx = rng.sample_distinct(n, 4)
        sample_ref = ref[idx]
        if _any_three_collinear(sample_ref):
            continue
        try:
            h = dlt_homography(sample_ref, tgt[idx])
        except DegenerateConfiguration:
            continue
        err = reprojection_errors(h, ref, tgt)
        mask = err < cfg.reproj_threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_h = h
            best_mask = mask
            w = count / n
            if w >= 1.0:
                needed = iters
            else:
                denom = math.log1p(-(w ** 4))
                if denom < 0.0:
                    needed = math.ceil(log_term / denom)

    if best_h is None or best_mask is None:
        raise NoModel("all RANSAC samples were degenerate")

    # Refit on the winning inlier set; fall back to the minimal-sample
    # model if that refit is itself degenerate.
    try:
        refit = dlt_homography(ref[best_mask], tgt[best_mask])
        refit_mask = reprojection_errors(refit, ref, tgt) < cfg.reproj_threshold
        if int(refit_mask.sum()) >= 4:
            best_h, best_mask = refit, refit_mask
    except DegenerateConfiguration:
        pass
    return RansacResult(best_h, best_mask, iters)


def corner_transfer_error(h_est: Homography, h_gt: Homography, size) -> float:
    """Mean distance between the 4 reference-image corners mapped by the
    estimated vs the ground-truth homography; +inf if any corner maps to
    infinity under either transform. Corners use pixel centers, so a w x h
    image spans (0, 0) .. (w-1, h-1)."""
    w, h = size
    corners = np.array(
        [[0.0, 0.0], [w - 1.0, 0.0], [0.0, h - 1.0], [w - 1.0, h - 1.0]]
    )
    a = apply_homography_array(h_est, corners)
    b = apply_homography_array(h_gt, corners)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        return math.inf
    return float(np.sqrt(((a - b) ** 2).sum(axis=1)).mean())

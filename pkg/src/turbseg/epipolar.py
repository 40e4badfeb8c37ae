"""Robust fundamental-matrix estimation and Sampson-distance motion maps.

Correspondences come from a stabilized flow: p2 = p1 + flow(p1). Pixels on
genuinely moving objects violate the epipolar constraint of the dominant
rigid scene and light up in the Sampson distance map; jitter-induced
violations are small and random and wash out when maps from several
stabilized flows are averaged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, EstimationError, InputError
from .flow import StabilizedFlow

EPIPOLE_DENOM_EPS = 1e-12
MIN_PAIRS = 8


@dataclass
class CorrespondenceSet:
    """Matched point pairs in pixel coordinates, rows of (x, y)."""

    p1: np.ndarray
    p2: np.ndarray

    def __post_init__(self):
        self.p1 = np.asarray(self.p1, dtype=np.float64).reshape(-1, 2)
        self.p2 = np.asarray(self.p2, dtype=np.float64).reshape(-1, 2)
        if self.p1.shape != self.p2.shape:
            raise InputError("correspondence arrays must have equal shape")

    def __len__(self) -> int:
        return self.p1.shape[0]


@dataclass
class FundamentalMatrix:
    """Rank-2, Frobenius-normalized 3x3 matrix."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (3, 3) or not np.isfinite(m).all():
            raise InputError("fundamental matrix must be a finite 3x3 matrix")
        self.m = m


@dataclass
class MotionFeatureMap:
    """Per-frame averaged Sampson map; higher means more likely rigid motion."""

    values: np.ndarray
    normalization_scale: float = 1.0
    frame_index: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or not np.isfinite(v).all() or v.min() < 0:
            raise InputError("motion feature map must be a finite nonnegative 2-D grid")
        self.values = v


def sample_correspondences(flow: StabilizedFlow, stride: int = 4, margin: int = 8) -> CorrespondenceSet:
    """Regular grid of p1 with p2 = p1 + flow(p1); out-of-bounds p2 dropped."""
    if stride < 1:
        raise InputError("stride must be >= 1")
    h, w = flow.field.shape
    xs = np.arange(margin, w - margin, stride)
    ys = np.arange(margin, h - margin, stride)
    if xs.size == 0 or ys.size == 0:
        raise DegenerateGeometryError("margins leave no correspondence grid")
    gx, gy = np.meshgrid(xs, ys)
    gx = gx.ravel()
    gy = gy.ravel()
    px = gx + flow.field.u[gy, gx].astype(np.float64)
    py = gy + flow.field.v[gy, gx].astype(np.float64)
    keep = (px >= 0) & (px <= w - 1) & (py >= 0) & (py <= h - 1)
    if keep.sum() < MIN_PAIRS:
        raise DegenerateGeometryError(
            f"only {int(keep.sum())} in-bounds correspondences, need {MIN_PAIRS}"
        )
    p1 = np.stack([gx[keep], gy[keep]], axis=1).astype(np.float64)
    p2 = np.stack([px[keep], py[keep]], axis=1)
    return CorrespondenceSet(p1, p2)


def _homogeneous(p: np.ndarray) -> np.ndarray:
    return np.concatenate([p, np.ones((p.shape[0], 1))], axis=1)


def _normalizing_transform(p: np.ndarray) -> np.ndarray:
    """Isotropic normalization: centroid to origin, mean distance sqrt(2)."""
    mean = p.mean(axis=0)
    dist = np.sqrt(((p - mean) ** 2).sum(axis=1)).mean()
    if dist < 1e-9:
        raise EstimationError("correspondences are coincident; geometry is degenerate")
    s = np.sqrt(2.0) / dist
    return np.array([[s, 0, -s * mean[0]], [0, s, -s * mean[1]], [0, 0, 1.0]])


def _design_rows(h1: np.ndarray, h2: np.ndarray) -> np.ndarray:
    """Rows of the linear system p2^T F p1 = 0, F flattened row-major."""
    return np.stack(
        [
            h2[:, 0] * h1[:, 0], h2[:, 0] * h1[:, 1], h2[:, 0],
            h2[:, 1] * h1[:, 0], h2[:, 1] * h1[:, 1], h2[:, 1],
            h1[:, 0], h1[:, 1], np.ones(h1.shape[0]),
        ],
        axis=1,
    )


def _finalize(f: np.ndarray) -> np.ndarray:
    """Force rank 2, unit Frobenius norm, and a deterministic sign."""
    u, s, vt = np.linalg.svd(f)
    s = s.copy()
    s[2] = 0.0
    f = (u * s) @ vt
    norm = np.linalg.norm(f)
    if norm < 1e-15 or not np.isfinite(norm):
        raise EstimationError("estimated matrix collapsed to zero")
    f = f / norm
    flat = f.ravel()
    lead = flat[np.argmax(np.abs(flat))]
    if lead < 0:
        f = -f
    return f


def _translation_solution(corrs: CorrespondenceSet) -> FundamentalMatrix:
    """Epipolar geometry of a pure camera translation.

    Correspondences explained by a global translation s fit a whole family
    of fundamental matrices (the design matrix drops to rank 6); the member
    compatible with the translation itself is the skew matrix [s]_x, whose
    epipolar lines run along s. Verified against the data before returning.
    """
    d = corrs.p2 - corrs.p1
    s = np.median(d, axis=0)
    if np.hypot(s[0], s[1]) < 1e-9:
        raise EstimationError("degenerate correspondences: no epipolar geometry (zero motion)")
    f = _finalize(np.array([
        [0.0, 0.0, s[1]],
        [0.0, 0.0, -s[0]],
        [-s[1], s[0], 0.0],
    ]))
    med = float(np.median(sampson_distances(f, corrs.p1, corrs.p2)))
    if med > 1e-6:
        raise EstimationError("rank-deficient system not explained by a global translation")
    return FundamentalMatrix(f)


def estimate_fundamental_8pt(corrs: CorrespondenceSet) -> FundamentalMatrix:
    """Hartley-normalized linear 8-point solution with rank-2 enforcement.

    A joint normalizing transform covers both point sets so that a global
    inter-frame translation is not absorbed by the normalization. When the
    system is rank-deficient (correspondences fit a homography, as under a
    pure camera pan) the translation-compatible solution is returned.
    """
    n = len(corrs)
    if n < MIN_PAIRS:
        raise DegenerateGeometryError(f"need at least {MIN_PAIRS} pairs, got {n}")
    t = _normalizing_transform(np.vstack([corrs.p1, corrs.p2]))
    h1 = _homogeneous(corrs.p1) @ t.T
    h2 = _homogeneous(corrs.p2) @ t.T
    a = _design_rows(h1, h2)
    _, sv, vt = np.linalg.svd(a, full_matrices=True)
    if sv[0] < 1e-12:
        raise EstimationError("degenerate correspondence configuration (rank-deficient system)")
    if sv[7] < 1e-9 * sv[0]:
        return _translation_solution(corrs)
    f_norm = vt[-1].reshape(3, 3)
    f = t.T @ f_norm @ t
    return FundamentalMatrix(_finalize(f))


def sampson_distances(f: np.ndarray, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Sampson distance of each pair under one or many 3x3 matrices.

    f may be (3, 3) or (K, 3, 3); returns (N,) or (K, N). Pairs whose
    denominator falls below EPIPOLE_DENOM_EPS get distance 0.
    """
    h1 = _homogeneous(np.asarray(p1, dtype=np.float64))
    h2 = _homogeneous(np.asarray(p2, dtype=np.float64))
    single = f.ndim == 2
    fk = f[None] if single else f
    fp1 = np.einsum("kij,nj->kni", fk, h1)
    ftp2 = np.einsum("kji,nj->kni", fk, h2)
    num = np.einsum("ni,kni->kn", h2, fp1) ** 2
    den = fp1[:, :, 0] ** 2 + fp1[:, :, 1] ** 2 + ftp2[:, :, 0] ** 2 + ftp2[:, :, 1] ** 2
    out = np.zeros_like(num)
    ok = den > EPIPOLE_DENOM_EPS
    out[ok] = num[ok] / den[ok]
    return out[0] if single else out


def estimate_fundamental_lmeds(
    corrs: CorrespondenceSet,
    iterations: int = 256,
    seed: int = 0,
) -> FundamentalMatrix:
    """Least-median-of-squares estimation over random 8-point samples.

    The candidate whose Sampson-distance median over all pairs is smallest
    wins; it is then re-estimated once on the inlier set selected with the
    classic median-derived robust scale. Deterministic for a fixed seed.
    """
    n = len(corrs)
    if n < MIN_PAIRS:
        raise DegenerateGeometryError(f"need at least {MIN_PAIRS} pairs, got {n}")
    if iterations < 1:
        raise InputError("iterations must be >= 1")
    rng = np.random.default_rng(seed)

    candidates = []
    for _ in range(iterations):
        idx = rng.choice(n, size=MIN_PAIRS, replace=False)
        try:
            cand = estimate_fundamental_8pt(CorrespondenceSet(corrs.p1[idx], corrs.p2[idx]))
        except (EstimationError, DegenerateGeometryError):
            continue
        candidates.append(cand.m)
    if not candidates:
        raise EstimationError("all sampled candidates were degenerate")

    fs = np.stack(candidates)
    dists = sampson_distances(fs, corrs.p1, corrs.p2)
    medians = np.median(dists, axis=1)
    best_idx = int(np.argmin(medians))
    best = fs[best_idx]
    best_median = float(medians[best_idx])

    # robust scale from the median of squared residuals (Rousseeuw)
    scale = 1.4826 * (1.0 + 5.0 / max(n - MIN_PAIRS, 1)) * np.sqrt(max(best_median, 0.0))
    threshold = max((2.5 * scale) ** 2, 1e-12)
    inliers = dists[best_idx] <= threshold
    if inliers.sum() >= MIN_PAIRS:
        try:
            refit = estimate_fundamental_8pt(
                CorrespondenceSet(corrs.p1[inliers], corrs.p2[inliers])
            )
            return refit
        except (EstimationError, DegenerateGeometryError):
            pass
    return FundamentalMatrix(_finalize(best))


def sampson_map(flow: StabilizedFlow, f: FundamentalMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel Sampson distance with p2 = p1 + flow(p1).

    Returns (values, suppressed): pixels whose p2 leaves the image or whose
    denominator vanishes near an epipole get value 0 and are flagged.
    """
    h, w = flow.field.shape
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    px = gx + flow.field.u.astype(np.float64)
    py = gy + flow.field.v.astype(np.float64)

    m = f.m
    x1, y1 = gx, gy
    x2, y2 = px, py
    fp1_0 = m[0, 0] * x1 + m[0, 1] * y1 + m[0, 2]
    fp1_1 = m[1, 0] * x1 + m[1, 1] * y1 + m[1, 2]
    fp1_2 = m[2, 0] * x1 + m[2, 1] * y1 + m[2, 2]
    ftp2_0 = m[0, 0] * x2 + m[1, 0] * y2 + m[2, 0]
    ftp2_1 = m[0, 1] * x2 + m[1, 1] * y2 + m[2, 1]
    num = (x2 * fp1_0 + y2 * fp1_1 + fp1_2) ** 2
    den = fp1_0 ** 2 + fp1_1 ** 2 + ftp2_0 ** 2 + ftp2_1 ** 2

    oob = (px < 0) | (px > w - 1) | (py < 0) | (py > h - 1)
    tiny = den <= EPIPOLE_DENOM_EPS
    suppressed = oob | tiny
    values = np.zeros((h, w), dtype=np.float64)
    ok = ~suppressed
    values[ok] = num[ok] / den[ok]
    return values, suppressed


def motion_feature_map(
    maps: list[np.ndarray],
    normalize: bool = True,
    frame_index: int = 0,
) -> MotionFeatureMap:
    """Average Sampson maps; optionally rescale by the 99th percentile.

    After normalization values are clamped to [0, 1.5] and the divisor is
    recorded so raw magnitudes stay recoverable.
    """
    if not maps:
        raise InputError("need at least one Sampson map")
    shapes = {m.shape for m in maps}
    if len(shapes) > 1:
        raise InputError(f"Sampson maps disagree in shape: {shapes}")
    mean = np.mean(np.stack([np.asarray(m, dtype=np.float64) for m in maps]), axis=0)
    scale = 1.0
    if normalize:
        p99 = float(np.percentile(mean, 99.0))
        if p99 > 1e-12:
            scale = p99
            mean = np.clip(mean / p99, 0.0, 1.5)
    return MotionFeatureMap(mean, normalization_scale=scale, frame_index=frame_index)

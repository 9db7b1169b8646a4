"""Deterministic synthetic scenes, measurement corruption, and estimation.

Everything here is a pure function of the configured seed, so scenes,
corruptions and estimator outputs are bit-identical across runs. The
corruption model mirrors how real pairwise estimates arrive: per-pair
scale is lost (blocks are re-normalized to unit Frobenius norm), some
blocks are noisy, some are outliers, and some are missing entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fundrank.blockmatrix import (
    MultiviewBlockMatrix,
    centers_collinear,
    svp,
)
from fundrank.geometry import CameraPose, depth
from fundrank.solver import ScaleMatrix

__all__ = [
    "GeometryRetryExhausted",
    "DegenerateConfiguration",
    "SceneConfig",
    "CorruptionReport",
    "generate_scene",
    "eight_point",
    "corrupt",
    "normalize_image_frame",
]

_LAYOUTS = ("sphere", "ring", "collinear")
_MAX_REDRAWS = 100
_MIN_DEPTH = 1e-6


class GeometryRetryExhausted(RuntimeError):
    """Could not draw a scene with all points visible in 100 attempts."""


class DegenerateConfiguration(ValueError):
    """Correspondences do not determine a unique epipolar solution."""


@dataclass(frozen=True)
class SceneConfig:
    """Scene layout and corruption regime, all derived from one seed."""

    n_cameras: int
    n_points: int = 40
    layout: str = "sphere"
    noise_sigma: float = 0.0
    outlier_fraction: float = 0.0
    missing_fraction: float = 0.0
    scale_jitter: tuple[float, float] = (0.2, 5.0)
    seed: int = 0

    def __post_init__(self):
        if self.n_cameras < 2:
            raise ValueError(f"n_cameras must be >= 2, got {self.n_cameras}")
        if self.n_points < 1:
            raise ValueError(f"n_points must be >= 1, got {self.n_points}")
        if self.layout not in _LAYOUTS:
            raise ValueError(f"layout must be one of {_LAYOUTS}, got {self.layout!r}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        for name in ("outlier_fraction", "missing_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {value}")
        lo, hi = self.scale_jitter
        if not (0.0 < lo <= hi):
            raise ValueError(f"scale_jitter must satisfy 0 < lo <= hi, got {self.scale_jitter}")


@dataclass
class CorruptionReport:
    """Bookkeeping of what corrupt() did to each pair.

    true_scales holds, per surviving non-outlier pair, the exact scalar by
    which the ground-truth block was multiplied to form the measurement, so
    the noise-free corruption can be inverted exactly.
    """

    outlier_pairs: list[tuple[int, int]] = field(default_factory=list)
    missing_pairs: list[tuple[int, int]] = field(default_factory=list)
    true_scales: ScaleMatrix | None = None


def _look_at(center: np.ndarray, target: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Rotation whose third column (viewing axis) points from center to target."""
    z = target - center
    z = z / np.linalg.norm(z)
    while True:
        up = rng.standard_normal(3)
        up /= np.linalg.norm(up)
        if abs(up @ z) < 0.95:
            break
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def _layout_centers(config: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    n = config.n_cameras
    if config.layout == "sphere":
        dirs = rng.standard_normal((n, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return 3.0 * dirs
    if config.layout == "ring":
        phase = rng.uniform(0.0, 2.0 * np.pi)
        angles = phase + 2.0 * np.pi * np.arange(n) / n
        return np.column_stack([3.0 * np.cos(angles), 3.0 * np.sin(angles), np.zeros(n)])
    # collinear: distinct offsets along a random line, kept away from origin
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    base = rng.standard_normal(3)
    base = 3.0 * base / np.linalg.norm(base)
    offsets = np.linspace(-1.2, 1.2, n)
    return base + offsets[:, None] * axis


def generate_scene(config: SceneConfig) -> tuple[list[CameraPose], np.ndarray]:
    """Deterministic cameras and world points with full mutual visibility.

    All cameras look toward the origin and every point has positive depth
    in every camera. Sphere and ring layouts are certified non-collinear
    (for n >= 3); the collinear layout puts all centers on one random line.
    """
    rng = np.random.default_rng(config.seed)
    for _ in range(_MAX_REDRAWS):
        centers = _layout_centers(config, rng)
        if config.layout != "collinear" and config.n_cameras >= 3:
            if centers_collinear(centers):
                continue
        poses = [CameraPose(R=_look_at(c, np.zeros(3), rng), t=c) for c in centers]
        points = rng.uniform(-0.45, 0.45, size=(config.n_points, 3))
        if all(depth(p, X) > _MIN_DEPTH for p in poses for X in points):
            return poses, points
    raise GeometryRetryExhausted(f"no visible scene in {_MAX_REDRAWS} draws")


def normalize_image_frame(points_per_image) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-image centering and isotropic scaling to the [-1, 1] square.

    Each image's points are translated so their centroid is the origin and
    scaled so the largest coordinate magnitude is 1 (a single point gets
    scale 1). Returns the transformed homogeneous points and the 3 x 3
    transforms T, so a pairwise matrix estimated in the normalized frames
    de-normalizes as F = T_i.T @ F_norm @ T_j.
    """
    normalized, transforms = [], []
    for pts in points_per_image:
        pts = np.asarray(pts, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] not in (2, 3):
            raise ValueError(f"each image needs an (N,2) or (N,3) point array, got {pts.shape}")
        if pts.shape[1] == 3:
            pts = pts[:, :2] / pts[:, 2:3]
        centroid = pts.mean(axis=0)
        spread = np.abs(pts - centroid).max()
        scale = 1.0 / spread if spread > 0 else 1.0
        T = np.array(
            [
                [scale, 0.0, -scale * centroid[0]],
                [0.0, scale, -scale * centroid[1]],
                [0.0, 0.0, 1.0],
            ]
        )
        hom = np.column_stack([pts, np.ones(len(pts))])
        normalized.append(hom @ T.T)
        transforms.append(T)
    return normalized, transforms


def eight_point(correspondences) -> np.ndarray:
    """Normalized eight-point estimate of the pairwise epipolar matrix.

    Input is a sequence of (p_a, p_b) homogeneous image points satisfying
    p_a.T @ F @ p_b = 0. Points are normalized per image, the algebraic
    residual is minimized by SVD, rank 2 is enforced, and the result is
    de-normalized and scaled to unit Frobenius norm with a deterministic
    sign (largest-magnitude entry positive).
    """
    pairs = list(correspondences)
    if len(pairs) < 8:
        raise DegenerateConfiguration(f"need >= 8 correspondences, got {len(pairs)}")
    pts_a = np.array([np.asarray(p, float).reshape(3) for p, _ in pairs])
    pts_b = np.array([np.asarray(q, float).reshape(3) for _, q in pairs])
    (norm_a, norm_b), (Ta, Tb) = normalize_image_frame([pts_a, pts_b])

    D = np.einsum("ka,kb->kab", norm_a, norm_b).reshape(-1, 9)
    sigma = np.linalg.svd(D, compute_uv=False)
    if sigma[7] < 1e-10 * sigma[0]:
        raise DegenerateConfiguration("design matrix rank < 8 (degenerate points)")
    _, _, Vt = np.linalg.svd(D)
    Fn = svp(Vt[-1].reshape(3, 3), 2)
    F = Ta.T @ Fn @ Tb
    F = F / np.linalg.norm(F)
    if F.flat[np.argmax(np.abs(F))] < 0:
        F = -F
    return F


def corrupt(
    F_true: MultiviewBlockMatrix, config: SceneConfig
) -> tuple[MultiviewBlockMatrix, CorruptionReport]:
    """Corrupted measurement matrix drawn deterministically from the config.

    Surviving blocks are scaled by a log-uniform draw from scale_jitter,
    perturbed entrywise with Gaussian noise of relative magnitude
    noise_sigma, and re-normalized to unit Frobenius norm (estimates carry
    no absolute scale). Outlier pairs are replaced by random rank-2
    unit-norm blocks, individually plausible but unrelated to the truth.
    Missing pairs are dropped from the mask symmetrically.
    """
    rng = np.random.default_rng([config.seed, 1])
    n = F_true.n
    pairs = F_true.pairs(upper=True)
    total = len(pairs)
    n_missing = round(config.missing_fraction * total)
    n_outlier = round(config.outlier_fraction * total)
    if n_missing + n_outlier > total:
        raise ValueError(
            "outlier_fraction and missing_fraction together exceed the available "
            f"pairs ({n_outlier} + {n_missing} > {total})"
        )
    order = rng.permutation(total)
    missing = {pairs[k] for k in order[:n_missing]}
    outliers = {pairs[k] for k in order[n_missing : n_missing + n_outlier]}

    lo, hi = config.scale_jitter
    data = np.zeros_like(F_true.data)
    mask = np.zeros((n, n), dtype=bool)
    lam = np.zeros((n, n))
    for i, j in pairs:
        if (i, j) in missing:
            continue
        mask[i, j] = mask[j, i] = True
        if (i, j) in outliers:
            block = svp(rng.standard_normal((3, 3)), 2)
            block /= np.linalg.norm(block)
        else:
            draw = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
            block = draw * F_true.block(i, j)
            if config.noise_sigma > 0:
                block = block + (config.noise_sigma * np.linalg.norm(block) / 3.0) * (
                    rng.standard_normal((3, 3))
                )
            norm = np.linalg.norm(block)
            if norm > 0:
                block = block / norm
                lam[i, j] = lam[j, i] = draw / norm
        data[3 * i : 3 * i + 3, 3 * j : 3 * j + 3] = block
        data[3 * j : 3 * j + 3, 3 * i : 3 * i + 3] = block.T

    report = CorruptionReport(
        outlier_pairs=sorted(outliers),
        missing_pairs=sorted(missing),
        true_scales=ScaleMatrix(lam),
    )
    return MultiviewBlockMatrix(n=n, data=data, mask=mask), report

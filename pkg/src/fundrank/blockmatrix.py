"""Stacked 3n x 3n pairwise-matrix assembly, factorization and rank tools.

The n-camera collection of pairwise fundamental (or essential) matrices is
held as one dense 3n x 3n matrix of 3 x 3 blocks with zero diagonal blocks.
A boolean n x n mask records which pairs carry actual measurements.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fundrank.geometry import CameraPose, fundamental_global, skew

__all__ = [
    "IndexOutOfRange",
    "AsymmetricPair",
    "PairwiseEstimateSet",
    "MultiviewBlockMatrix",
    "FactorPair",
    "BlockRankStats",
    "full_mask",
    "assemble",
    "multiview_from_poses",
    "build_factors",
    "rank_profile",
    "svp",
    "block_rank2_ratio",
    "centers_collinear",
]

_PAIR_SYM_TOL = 1e-6
_COLLINEAR_TOL = 1e-9


class IndexOutOfRange(ValueError):
    """Pair index outside [0, n) or on the excluded diagonal."""


class AsymmetricPair(ValueError):
    """Both orientations of a pair were supplied but are not transposes."""


class PairwiseEstimateSet:
    """Sparse set of estimated 3x3 blocks keyed by ordered camera pair."""

    def __init__(self, n: int):
        if n < 2:
            raise ValueError("need at least 2 cameras")
        self.n = n
        self.entries: dict[tuple[int, int], np.ndarray] = {}

    def add(self, i: int, j: int, F) -> None:
        F = np.asarray(F, dtype=float)
        if F.shape != (3, 3):
            raise ValueError(f"block ({i},{j}) must be 3x3, got {F.shape}")
        self.entries[(i, j)] = F.copy()

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class MultiviewBlockMatrix:
    """Dense 3n x 3n block matrix with a symmetric pair mask.

    The mask is symmetric with a False diagonal; data blocks off the mask
    are zero by convention (measurement semantics) but the class itself only
    enforces shapes, since solver-side matrices reuse the container.
    """

    n: int
    data: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if data.shape != (3 * self.n, 3 * self.n):
            raise ValueError(f"data must be {3 * self.n}x{3 * self.n}, got {data.shape}")
        if mask.shape != (self.n, self.n):
            raise ValueError(f"mask must be {self.n}x{self.n}, got {mask.shape}")
        if np.any(mask != mask.T):
            raise ValueError("mask must be symmetric")
        if np.any(np.diag(mask)):
            raise ValueError("mask diagonal must be False")
        data = data.copy()
        data.setflags(write=False)
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "mask", mask)

    def block(self, i: int, j: int) -> np.ndarray:
        return self.data[3 * i : 3 * i + 3, 3 * j : 3 * j + 3]

    def pairs(self, upper: bool = True):
        """Masked pairs; only i < j when upper."""
        ii, jj = np.nonzero(np.triu(self.mask, 1) if upper else self.mask)
        return list(zip(ii.tolist(), jj.tolist()))


@dataclass(frozen=True)
class FactorPair:
    """Stacked 3n x 3 factors; U @ V.T is the rank-limited asymmetric factor."""

    U: np.ndarray
    V: np.ndarray

    def product(self) -> np.ndarray:
        return self.U @ self.V.T


@dataclass
class BlockRankStats:
    """Summary of per-block third-to-second singular value ratios."""

    mean: float
    median: float
    max: float
    ratios: dict = field(default_factory=dict)


def full_mask(n: int) -> np.ndarray:
    """All pairs present, diagonal excluded."""
    return ~np.eye(n, dtype=bool)


def assemble(estimates, n: int) -> MultiviewBlockMatrix:
    """Place pairwise estimates into the 3n x 3n measurement matrix.

    A pair supplied in one orientation only is mirrored as its transpose.
    If both orientations are supplied they must agree in transpose up to
    a 1e-6 relative discrepancy.
    """
    entries = estimates.entries if hasattr(estimates, "entries") else dict(estimates)
    data = np.zeros((3 * n, 3 * n))
    mask = np.zeros((n, n), dtype=bool)
    for (i, j), F in entries.items():
        if not (0 <= i < n and 0 <= j < n):
            raise IndexOutOfRange(f"pair ({i},{j}) outside camera range [0,{n})")
        if i == j:
            raise IndexOutOfRange(f"pair ({i},{i}) lies on the excluded diagonal")
        F = np.asarray(F, dtype=float)
        if F.shape != (3, 3):
            raise ValueError(f"block ({i},{j}) must be 3x3, got {F.shape}")
        if (j, i) in entries:
            G = np.asarray(entries[(j, i)], dtype=float)
            if np.linalg.norm(G - F.T) > _PAIR_SYM_TOL * np.linalg.norm(F):
                raise AsymmetricPair(f"blocks ({i},{j}) and ({j},{i}) are not transposes")
            data[3 * i : 3 * i + 3, 3 * j : 3 * j + 3] = F
        else:
            data[3 * i : 3 * i + 3, 3 * j : 3 * j + 3] = F
            data[3 * j : 3 * j + 3, 3 * i : 3 * i + 3] = F.T
        mask[i, j] = mask[j, i] = True
    return MultiviewBlockMatrix(n=n, data=data, mask=mask)


def multiview_from_poses(poses: list[CameraPose]) -> MultiviewBlockMatrix:
    """Exact multiview matrix with every off-diagonal pair filled.

    Calibrated poses (K = I) yield the essential-matrix stack.
    """
    n = len(poses)
    data = np.zeros((3 * n, 3 * n))
    for i in range(n):
        for j in range(n):
            if i != j:
                data[3 * i : 3 * i + 3, 3 * j : 3 * j + 3] = fundamental_global(poses[i], poses[j])
    return MultiviewBlockMatrix(n=n, data=data, mask=full_mask(n))


def build_factors(poses: list[CameraPose]) -> FactorPair:
    """Stacked factors with blocks U_i = Ki^-T Ri^T [ti]x and V_i = Ki^-T Ri^T.

    The symmetrized product U V.T + (U V.T).T reproduces the exact multiview
    matrix blockwise. When the camera centers are collinear, the world origin
    is first translated onto their common line; the symmetrized product is
    unchanged by this shift and the asymmetric factor drops to rank <= 2.
    """
    if len(poses) < 2:
        raise ValueError("need at least 2 poses")
    centers = np.array([p.t for p in poses])
    if centers_collinear(centers):
        centroid = centers.mean(axis=0)
        rel = centers - centroid
        _, _, Vt = np.linalg.svd(rel, full_matrices=False)
        axis = Vt[0]
        # foot of the perpendicular from the origin to the camera line
        foot = centroid - np.dot(centroid, axis) * axis
        centers = centers - foot
    U = np.zeros((3 * len(poses), 3))
    V = np.zeros((3 * len(poses), 3))
    for i, pose in enumerate(poses):
        KinvT = np.linalg.inv(pose.K).T
        V[3 * i : 3 * i + 3] = KinvT @ pose.R.T
        U[3 * i : 3 * i + 3] = V[3 * i : 3 * i + 3] @ skew(centers[i])
    return FactorPair(U=U, V=V)


def _as_matrix(M) -> np.ndarray:
    return np.asarray(M.data if hasattr(M, "data") else M, dtype=float)


def rank_profile(M, tol: float = 1e-8) -> tuple[int, np.ndarray]:
    """Numeric rank and full singular spectrum (descending).

    Rank counts singular values >= tol * sigma_1; the default 1e-8 separates
    the exact-geometry spectra by several orders at double precision.
    """
    if not 0.0 < tol < 1.0:
        raise ValueError(f"tol must be in (0,1), got {tol}")
    sigma = np.linalg.svd(_as_matrix(M), compute_uv=False)
    if sigma.size == 0 or sigma[0] == 0.0:
        return 0, sigma
    return int(np.count_nonzero(sigma >= tol * sigma[0])), sigma


def svp(M, r: int) -> np.ndarray:
    """Best rank-r approximation by truncated SVD (Eckart-Young optimum).

    Retained singular vector pairs are sign-normalized (largest-magnitude
    entry of each left vector positive) so factors are deterministic; the
    product is unaffected.
    """
    if r < 1:
        raise ValueError(f"rank must be >= 1, got {r}")
    M = _as_matrix(M)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    r = min(r, s.size)
    U, s, Vt = U[:, :r], s[:r], Vt[:r]
    flip = np.where(U[np.argmax(np.abs(U), axis=0), np.arange(r)] < 0, -1.0, 1.0)
    return (U * (flip * s)) @ (flip[:, None] * Vt)


def block_rank2_ratio(M: MultiviewBlockMatrix) -> BlockRankStats:
    """sigma_3 / sigma_2 per masked block; zero blocks contribute ratio 0."""
    ratios = {}
    for i, j in M.pairs(upper=True):
        s = np.linalg.svd(M.block(i, j), compute_uv=False)
        ratios[(i, j)] = float(s[2] / s[1]) if s[1] > 0.0 else 0.0
    values = np.array(list(ratios.values())) if ratios else np.zeros(1)
    return BlockRankStats(
        mean=float(values.mean()),
        median=float(np.median(values)),
        max=float(values.max()),
        ratios=ratios,
    )


def centers_collinear(centers_or_poses, tol: float = _COLLINEAR_TOL) -> bool:
    """True when all camera centers lie on one line.

    Tested via the second singular value of the centered 3 x n center matrix
    relative to the first. Used for scene labeling only, never by the solver.
    """
    if len(centers_or_poses) and isinstance(centers_or_poses[0], CameraPose):
        centers = np.array([p.t for p in centers_or_poses])
    else:
        centers = np.asarray(centers_or_poses, dtype=float)
    if centers.shape[0] <= 2:
        return True
    rel = centers - centers.mean(axis=0)
    s = np.linalg.svd(rel.T, compute_uv=False)
    if s[0] == 0.0:
        return True
    return bool(s[1] < tol * s[0])

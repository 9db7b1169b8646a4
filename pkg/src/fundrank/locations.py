"""Camera location recovery from pairwise directions, and error metrics.

Pairwise translation directions are read off essential matrices given the
camera rotations; locations are then solved by alternating least squares
over positions and per-pair distances, optionally reweighted by residual
norms to reject corrupted directions. Metrics follow the unit-norm,
sign-resolved conventions used for comparing pairwise estimates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "VanishingSkewPart",
    "DisconnectedGraph",
    "CollapseDetected",
    "ZeroMatrix",
    "DegenerateAlignment",
    "DirectionSet",
    "LocationSolution",
    "ErrorReport",
    "extract_direction",
    "recover_locations",
    "essential_error",
    "location_error",
    "scale_aligned_error",
    "compare_methods",
]

logger = logging.getLogger(__name__)

_SKEW_TOL = 1e-10
_DMIN_FACTOR = 1e-6


class VanishingSkewPart(ValueError):
    """Rotated block has no skew part: coincident centers or corrupt data."""


class DisconnectedGraph(ValueError):
    """Direction measurements do not connect all cameras."""


class CollapseDetected(RuntimeError):
    """All pair distances hit the floor: degenerate measurement set."""


class ZeroMatrix(ValueError):
    """Cannot normalize a (near-)zero matrix."""


class DegenerateAlignment(ValueError):
    """Point sets cannot be aligned (zero spread or nonpositive scale)."""


class DirectionSet:
    """Unit direction per ordered camera pair, in the global frame.

    Entry (i, j) points from camera j toward camera i, i.e. along t_i - t_j.
    When both orientations are present they must be negatives.
    """

    def __init__(self):
        self.entries: dict[tuple[int, int], np.ndarray] = {}

    def add(self, i: int, j: int, direction) -> None:
        v = np.asarray(direction, dtype=float).reshape(3)
        norm = np.linalg.norm(v)
        if norm == 0:
            raise ValueError(f"direction ({i},{j}) is zero")
        v = v / norm
        if (j, i) in self.entries and np.linalg.norm(self.entries[(j, i)] + v) > 1e-6:
            raise ValueError(f"directions ({i},{j}) and ({j},{i}) are not negatives")
        self.entries[(i, j)] = v

    def canonical_pairs(self) -> list[tuple[int, int, np.ndarray]]:
        """Each unordered pair once, as (i, j, direction of t_i - t_j), i < j."""
        out = {}
        for (i, j), v in self.entries.items():
            key = (i, j) if i < j else (j, i)
            if key not in out:
                out[key] = v if i < j else -v
        return [(i, j, v) for (i, j), v in sorted(out.items())]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class LocationSolution:
    """Recovered camera locations, gauge-fixed.

    Locations sum to zero and the mean distance over measured pairs is 1.
    distances maps each measured (i < j) pair to its solved separation.
    """

    t: np.ndarray
    status: bool
    residual_history: list[float] = field(default_factory=list)
    distances: dict = field(default_factory=dict)


@dataclass
class ErrorReport:
    """Per-trial error summary (x100 convention for pairwise-matrix errors)."""

    essential_errors: np.ndarray
    location_errors: np.ndarray
    median_essential: float
    mean_essential: float
    median_location: float
    mean_location: float
    relative_improvement: float
    improved_fraction: float


def _triangulate_depths(pa, pb, Ri, Rj, tj):
    """Depths (a, b) of the midpoint triangulation of one correspondence.

    Camera i sits at the origin, camera j at tj; rays leave along Ri @ pa
    and Rj @ pb. Positive depths mean the point is in front of both.
    """
    ui = Ri @ pa
    uj = Rj @ pb
    M = np.column_stack([ui, -uj])
    sol, *_ = np.linalg.lstsq(M, tj, rcond=None)
    return float(sol[0]), float(sol[1])


def extract_direction(E_ij, R_i, R_j, correspondences=None) -> np.ndarray:
    """Unit direction of t_i - t_j from a pairwise essential block.

    Rotating the block back to the global frame, M = R_i @ E_ij @ R_j.T,
    leaves the cross-product matrix of t_i - t_j as its skew part, whose
    axis is returned normalized. The overall sign is resolved by cheirality
    voting over the supplied correspondences (homogeneous calibrated image
    points (p_i, p_j)); without correspondences the sign convention makes
    the last nonzero coordinate positive.
    """
    E = np.asarray(E_ij, dtype=float)
    M = np.asarray(R_i, float) @ E @ np.asarray(R_j, float).T
    S = 0.5 * (M - M.T)
    if np.linalg.norm(S) < _SKEW_TOL * np.linalg.norm(E):
        raise VanishingSkewPart("skew part vanishes: coincident centers or corrupted block")
    v = np.array([S[2, 1], S[0, 2], S[1, 0]])
    v = v / np.linalg.norm(v)

    if correspondences:
        votes = {1.0: 0, -1.0: 0}
        Ri = np.asarray(R_i, float)
        Rj = np.asarray(R_j, float)
        for pa, pb in correspondences:
            pa = np.asarray(pa, float).reshape(3)
            pb = np.asarray(pb, float).reshape(3)
            pa = pa / pa[2]
            pb = pb / pb[2]
            for sign in (1.0, -1.0):
                # hypothesis t_i = 0, t_j = -sign * v
                a, b = _triangulate_depths(pa, pb, Ri, Rj, -sign * v)
                if a > 0 and b > 0:
                    votes[sign] += 1
        if votes[1.0] != votes[-1.0]:
            return v if votes[1.0] > votes[-1.0] else -v

    nonzero = np.nonzero(v)[0]
    if v[nonzero[-1]] < 0:
        v = -v
    return v


def _connected(n: int, pairs) -> bool:
    seen = {0} if n else set()
    frontier = [0]
    adj = {k: [] for k in range(n)}
    for i, j, _ in pairs:
        adj[i].append(j)
        adj[j].append(i)
    while frontier:
        k = frontier.pop()
        for m in adj[k]:
            if m not in seen:
                seen.add(m)
                frontier.append(m)
    return len(seen) == n


def _centered_basis(n: int) -> np.ndarray:
    """Orthonormal basis of zero-sum n-vectors, deterministic."""
    Q, _ = np.linalg.qr(np.column_stack([np.ones(n), np.eye(n)[:, : n - 1]]))
    return Q[:, 1:]


def _initial_locations(n: int, pairs) -> np.ndarray:
    """Smallest-eigenvector start: zero the direction-orthogonal residuals.

    Minimizes sum over pairs of |(I - g g.T)(t_i - t_j)|^2 over centered,
    unit-norm configurations; exact direction sets make the true (centered)
    configuration an eigenvector with eigenvalue ~0.
    """
    Q = np.zeros((3 * n, 3 * n))
    for i, j, g in pairs:
        P = np.eye(3) - np.outer(g, g)
        Q[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] += P
        Q[3 * j : 3 * j + 3, 3 * j : 3 * j + 3] += P
        Q[3 * i : 3 * i + 3, 3 * j : 3 * j + 3] -= P
        Q[3 * j : 3 * j + 3, 3 * i : 3 * i + 3] -= P
    basis = np.kron(_centered_basis(n), np.eye(3))
    reduced = basis.T @ Q @ basis
    _, vecs = np.linalg.eigh(reduced)
    t = (basis @ vecs[:, 0]).reshape(n, 3)
    # orient so measured separations are predominantly positive
    if sum(g @ (t[i] - t[j]) for i, j, g in pairs) < 0:
        t = -t
    return t


def recover_locations(
    directions: DirectionSet,
    n: int,
    robust: bool = True,
    *,
    delta: float = 1e-3,
    max_iter: int = 100,
    tol: float = 1e-12,
) -> LocationSolution:
    """Camera locations from pairwise directions.

    Minimizes sum over measured pairs of w_ij |(t_i - t_j) - d_ij g_ij|^2
    over locations and per-pair distances d_ij >= d_min, alternating a
    distance projection with a weighted Laplacian solve. With robust=True
    the weights are 1 / max(delta, residual norm), re-estimated each sweep;
    otherwise they stay 1. The returned gauge has zero-sum locations and
    unit mean distance over the measured pairs.
    """
    pairs = directions.canonical_pairs()
    if n < 3:
        raise ValueError(f"need n >= 3 cameras, got {n}")
    if not pairs or not _connected(n, pairs):
        raise DisconnectedGraph("direction graph does not connect all cameras")

    t = _initial_locations(n, pairs)
    history: list[float] = []
    converged = False
    prev_obj = None
    d = {}
    for _ in range(max_iter):
        diffs = {(i, j): t[i] - t[j] for i, j, _ in pairs}
        seps = np.array([np.linalg.norm(diffs[(i, j)]) for i, j, _ in pairs])
        mean_sep = float(seps.mean())
        if mean_sep < 1e-12:
            raise CollapseDetected("all cameras collapsed to one point")
        d_min = _DMIN_FACTOR * mean_sep
        d = {(i, j): max(d_min, float(g @ diffs[(i, j)])) for i, j, g in pairs}
        if all(abs(v - d_min) < 1e-15 * max(1.0, d_min) for v in d.values()):
            raise CollapseDetected("every pair distance sits at the floor")

        residuals = {
            (i, j): np.linalg.norm(diffs[(i, j)] - d[(i, j)] * g) for i, j, g in pairs
        }
        history.append(float(np.sqrt(sum(r * r for r in residuals.values()))))
        if robust:
            w = {k: 1.0 / max(delta, r) for k, r in residuals.items()}
        else:
            w = {k: 1.0 for k in residuals}

        obj = sum(w[k] * residuals[k] ** 2 for k in residuals)
        if prev_obj is not None and abs(prev_obj - obj) <= tol * max(prev_obj, 1e-300):
            converged = True
            break
        prev_obj = obj

        L = np.zeros((n, n))
        rhs = np.zeros((n, 3))
        for i, j, g in pairs:
            wij = w[(i, j)]
            L[i, i] += wij
            L[j, j] += wij
            L[i, j] -= wij
            L[j, i] -= wij
            rhs[i] += wij * d[(i, j)] * g
            rhs[j] -= wij * d[(i, j)] * g
        t = np.linalg.pinv(L) @ rhs  # min-norm solve: zero-sum by construction

    t = t - t.mean(axis=0)
    mean_sep = float(np.mean([np.linalg.norm(t[i] - t[j]) for i, j, _ in pairs]))
    if mean_sep > 0:
        t = t / mean_sep
        d = {k: v / mean_sep for k, v in d.items()}
    return LocationSolution(t=t, status=converged, residual_history=history, distances=d)


def essential_error(E_a, E_b) -> float:
    """Unit-norm, sign-resolved difference of two pairwise matrices, x100."""
    A = np.asarray(E_a, dtype=float)
    B = np.asarray(E_b, dtype=float)
    na = np.linalg.norm(A)
    nb = np.linalg.norm(B)
    if na < 1e-30 or nb < 1e-30:
        raise ZeroMatrix("cannot normalize a zero matrix")
    A = A / na
    B = B / nb
    return 100.0 * float(min(np.linalg.norm(A - B), np.linalg.norm(A + B)))


def scale_aligned_error(M_est, M_ref) -> float:
    """Relative error after the best scalar (sign included) alignment."""
    X = np.asarray(M_est, dtype=float)
    Y = np.asarray(M_ref, dtype=float)
    ny = np.linalg.norm(Y)
    if ny < 1e-30:
        raise ZeroMatrix("reference matrix is zero")
    nx2 = float(np.sum(X * X))
    if nx2 == 0.0:
        return 1.0
    s = float(np.sum(X * Y)) / nx2
    return float(np.linalg.norm(s * X - Y) / ny)


def _similarity_align(X: np.ndarray, Y: np.ndarray):
    """Closed-form similarity (rotation, translation, positive scale) X -> Y."""
    mx = X.mean(axis=0)
    my = Y.mean(axis=0)
    Xc = X - mx
    Yc = Y - my
    if np.sqrt((Xc**2).sum() / len(X)) < 1e-12 or np.sqrt((Yc**2).sum() / len(Y)) < 1e-12:
        raise DegenerateAlignment("point set has no spread")
    C = Yc.T @ Xc / len(X)
    U, D, Vt = np.linalg.svd(C)
    S = np.eye(3)
    if np.linalg.det(U @ Vt) < 0:
        S[2, 2] = -1.0  # reflections are excluded from the alignment group
    R = U @ S @ Vt
    var_x = (Xc**2).sum() / len(X)
    s = float(np.trace(np.diag(D) @ S)) / var_x
    if s <= 0:
        raise DegenerateAlignment("best similarity has nonpositive scale")
    shift = my - s * (R @ mx)
    return s, R, shift


def location_error(t_est, t_ref) -> np.ndarray:
    """Per-camera distances after the best similarity alignment est -> ref."""
    X = np.asarray(t_est, dtype=float).reshape(-1, 3)
    Y = np.asarray(t_ref, dtype=float).reshape(-1, 3)
    if X.shape != Y.shape:
        raise ValueError(f"location counts differ: {X.shape} vs {Y.shape}")
    if len(X) < 3:
        raise ValueError(f"need >= 3 cameras, got {len(X)}")
    s, R, shift = _similarity_align(X, Y)
    aligned = (s * (R @ X.T)).T + shift
    return np.linalg.norm(aligned - Y, axis=1)


def compare_methods(errors_ours, errors_other) -> tuple[float, float]:
    """Mean relative improvement over paired trials, and fraction improved.

    Trials with a zero baseline error but nonzero error of ours are excluded
    from the improvement mean (logged); they still count as not improved.
    """
    ours = np.asarray(errors_ours, dtype=float)
    other = np.asarray(errors_other, dtype=float)
    if ours.shape != other.shape or ours.ndim != 1:
        raise ValueError(f"paired trial lists must match: {ours.shape} vs {other.shape}")
    improved_fraction = float(np.mean(ours < other)) if ours.size else 0.0
    ratios = []
    for k, (a, b) in enumerate(zip(ours, other)):
        if b == 0.0:
            if a > 0.0:
                logger.warning("trial %d has zero baseline error; excluded from ratio mean", k)
                continue
            ratios.append(0.0)
        else:
            ratios.append((b - a) / b)
    mean_improvement = float(np.mean(ratios)) if ratios else float("nan")
    return mean_improvement, improved_fraction

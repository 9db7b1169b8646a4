"""Scale-resolving low-rank recovery of a consistent multiview matrix.

Given a partial, corrupted stack of unit-scale pairwise estimates, the
solver recovers a consistent multiview matrix F = A + A.T with rank(A) = 3
together with the per-pair scale factors relating the estimates to it.
Outliers are suppressed by reweighting per-block residual norms (a mixed
L1/Frobenius objective); the rank constraint is enforced on an auxiliary
copy B of A through a scaled multiplier splitting with singular value
projection.

The main loop is a local method and needs a reasonable starting point. A
cold start therefore runs a deterministic continuation warm-up first: the
block shapes are fitted with unit-magnitude scales (signs re-resolved at
stage boundaries, since estimates carry an arbitrary sign) while the
splitting penalty is ramped up; the scales are then released and polished
once at half penalty, and only then does the reweighted loop run at full
penalty. Pinning the scale magnitudes during the shape phase removes the
per-pair gauge freedom (lambda growing while a block shrinks) that
otherwise lets a cold start escape toward degenerate fits.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from fundrank.blockmatrix import MultiviewBlockMatrix, full_mask, svp

__all__ = [
    "DimensionMismatch",
    "SolverConfig",
    "ScaleMatrix",
    "SolverState",
    "SolveResult",
    "cost",
    "update_weights",
    "update_A",
    "update_lambda",
    "update_B",
    "update_gamma",
    "solve",
]

logger = logging.getLogger(__name__)

_ONES3 = np.ones((3, 3))
_DEGENERATE_BLOCK = 1e-14
# continuation warm-up: penalty ramp for the scale-pinned shape phase, then
# one scale-free polish stage before the full-penalty reweighted loop
_WARM_STAGES = (1.0 / 32.0, 1.0 / 8.0, 1.0 / 2.0)
_WARM_ITERS = 1000
_FREE_STAGE = 0.5
# stationarity is checked over a window of iterations: the per-iteration
# drift of a heavily damped splitting step is far smaller than the real
# remaining travel, so a single-step test would stop too early
_DRIFT_WINDOW = 16


class DimensionMismatch(ValueError):
    """Solver inputs disagree in camera count or matrix shape."""


@dataclass
class SolverConfig:
    """Iteration caps, tolerances and the reweighting floor.

    delta      floor on per-block residual norms in the reweighting (1e-3)
    max_irls   outer reweighting passes
    max_admm   inner splitting iterations per pass
    irls_tol   stop on relative change of the robust cost
    admm_tol   stop on relative primal gap and iterate drift
    rank       target rank of the asymmetric factor A
    dump_dir   when set, iterates are dumped there on a monotonicity breach
    """

    delta: float = 1e-3
    max_irls: int = 30
    max_admm: int = 1000
    irls_tol: float = 1e-8
    admm_tol: float = 1e-9
    rank: int = 3
    dump_dir: str | None = None

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if self.max_irls < 1 or self.max_admm < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.irls_tol <= 0 or self.admm_tol <= 0:
            raise ValueError("tolerances must be > 0")
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")


@dataclass(frozen=True)
class ScaleMatrix:
    """Symmetric per-pair scale factors with an exactly zero diagonal."""

    lam: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        if lam.ndim != 2 or lam.shape[0] != lam.shape[1]:
            raise ValueError(f"lam must be square, got {lam.shape}")
        if np.any(lam != lam.T):
            raise ValueError("lam must be symmetric")
        if np.any(np.diag(lam) != 0.0):
            raise ValueError("lam diagonal must be zero")
        lam = lam.copy()
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)

    @property
    def n(self) -> int:
        return self.lam.shape[0]

    def value(self, i: int, j: int) -> float:
        return float(self.lam[i, j])

    def expanded(self) -> np.ndarray:
        """3n x 3n copy with each scale replicated over its 3 x 3 block."""
        return np.kron(self.lam, _ONES3)

    @classmethod
    def ones_on(cls, mask: np.ndarray) -> "ScaleMatrix":
        return cls(np.asarray(mask, dtype=bool).astype(float))


@dataclass
class SolverState:
    """Final iterate bundle of one solve call."""

    A: np.ndarray
    B: np.ndarray
    gamma: np.ndarray
    scales: ScaleMatrix
    W: np.ndarray
    tau: float
    irls_iterations: int
    admm_iterations: int
    warm_iterations: int
    cost_history: list[float]
    status: str
    monotone_violations: list[tuple[int, float, float]] = field(default_factory=list)


@dataclass
class SolveResult:
    """Recovered multiview matrix, its factor, scales and solver state."""

    F: MultiviewBlockMatrix
    A: np.ndarray
    scales: ScaleMatrix
    state: SolverState

    @property
    def cost_history(self) -> list[float]:
        return self.state.cost_history


def _blocks(M: np.ndarray, n: int) -> np.ndarray:
    """(n, 3, n, 3) view; [i, :, j, :] is the (i, j) block."""
    return M.reshape(n, 3, n, 3)


def _block_norms(M: np.ndarray, n: int) -> np.ndarray:
    """n x n Frobenius norms of the 3 x 3 blocks."""
    B = _blocks(M, n)
    return np.sqrt(np.einsum("iajb,iajb->ij", B, B))


def _mirror_upper(M: np.ndarray) -> np.ndarray:
    """Exactly symmetric matrix built from the strict upper triangle."""
    upper = np.triu(M, 1)
    return upper + upper.T


def _zero_diagonal_blocks(M: np.ndarray, n: int) -> None:
    B = _blocks(M, n)
    idx = np.arange(n)
    B[idx, :, idx, :] = 0.0


def cost(F_hat: MultiviewBlockMatrix, A: np.ndarray, scales: ScaleMatrix) -> float:
    """Robust fit: half the sum over masked pairs of per-block residual norms.

    Residual of pair (i, j) is F_hat_ij - lam_ij * (A + A.T)_ij; both
    orientations of each pair are counted.
    """
    n = F_hat.n
    _check_shapes(F_hat, A, scales)
    R = F_hat.data - scales.expanded() * (A + A.T)
    return 0.5 * float(_block_norms(R, n)[F_hat.mask].sum())


def update_weights(
    F_hat: MultiviewBlockMatrix, A: np.ndarray, scales: ScaleMatrix, delta: float
) -> np.ndarray:
    """Reweighting step: w_ij = 1 / max(delta, residual norm) on the mask.

    Returns the 3n x 3n matrix with each weight replicated over its block;
    entries off the mask are zero.
    """
    if delta <= 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    n = F_hat.n
    R = F_hat.data - scales.expanded() * (A + A.T)
    norms = _mirror_upper(_block_norms(R, n))  # mirrored for exact symmetry
    w = np.where(F_hat.mask, 1.0 / np.maximum(delta, norms), 0.0)
    return np.kron(w, _ONES3)


def update_A(
    F_hat: MultiviewBlockMatrix,
    scales: ScaleMatrix,
    G: np.ndarray,
    W: np.ndarray,
    tau: float,
) -> np.ndarray:
    """Closed-form minimizer of the weighted quadratic plus splitting penalty.

    With G = B + gamma, the antisymmetric part of A is G - G.T and the
    symmetric part solves, entrywise,

        A_s = (W * Lam * F_hat + (tau/4) * G_s) / (W * Lam^2 + tau/4)

    with the diagonal 3 x 3 blocks of A_s forced to zero; the result is
    A = (A_s + A_n) / 2.
    """
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    n = F_hat.n
    _check_shapes(F_hat, G, scales)
    Lam = scales.expanded()
    Gs = G + G.T
    Gn = G - G.T
    As = (W * Lam * F_hat.data + 0.25 * tau * Gs) / (W * Lam * Lam + 0.25 * tau)
    _zero_diagonal_blocks(As, n)
    return 0.5 * (As + Gn)


def update_lambda(
    F_hat: MultiviewBlockMatrix,
    A_s: np.ndarray,
    W: np.ndarray,
    prev: ScaleMatrix | None = None,
) -> ScaleMatrix:
    """Per-pair least-squares scales lam_ij = <F_hat_ij, A_s_ij> / |A_s_ij|^2.

    Computed for i < j on the mask and mirrored; the diagonal stays zero.
    A vanished block (|A_s_ij| < 1e-14) keeps its previous scale rather than
    dividing by near-zero.
    """
    n = F_hat.n
    Fb = _blocks(F_hat.data, n)
    Ab = _blocks(A_s, n)
    inner = np.einsum("iajb,iajb->ij", Fb, Ab)  # trace(F.T @ A) per block
    sq = np.einsum("iajb,iajb->ij", Ab, Ab)
    upper = np.triu(F_hat.mask, 1)
    good = upper & (sq >= _DEGENERATE_BLOCK**2)
    lam = np.zeros((n, n))
    lam[good] = inner[good] / sq[good]
    degenerate = upper & ~good
    if np.any(degenerate) and prev is not None:
        lam[degenerate] = prev.lam[degenerate]
    return ScaleMatrix(_mirror_upper(lam))


def update_B(A: np.ndarray, gamma: np.ndarray, rank: int = 3) -> np.ndarray:
    """Rank projection of the shifted iterate: svp(A - gamma, rank)."""
    return svp(A - gamma, rank)


def update_gamma(gamma: np.ndarray, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Multiplier ascent: gamma + (B - A)."""
    return gamma + (B - A)


def _check_shapes(F_hat, M, scales):
    n = F_hat.n
    if M.shape != (3 * n, 3 * n):
        raise DimensionMismatch(f"matrix must be {3 * n}x{3 * n}, got {M.shape}")
    if scales.n != n:
        raise DimensionMismatch(f"scales are {scales.n}x{scales.n}, expected {n}x{n}")


def _dump_violation(dump_dir, t, prev_cost, new_cost, A, scales):
    os.makedirs(dump_dir, exist_ok=True)
    path = os.path.join(dump_dir, f"monotone_violation_irls{t:03d}.npz")
    np.savez(path, A=A, lam=scales.lam, prev_cost=prev_cost, new_cost=new_cost)
    return path


def _sign_scales(F_hat: MultiviewBlockMatrix, A_s: np.ndarray) -> ScaleMatrix:
    """Unit-magnitude scales with the sign of each pair's fit inner product.

    Measurement blocks carry an arbitrary sign; during the shape phase the
    sign is resolved greedily per pair while the magnitude stays pinned.
    """
    n = F_hat.n
    inner = np.einsum("iajb,iajb->ij", _blocks(F_hat.data, n), _blocks(A_s, n))
    upper = np.triu(F_hat.mask, 1)
    signs = np.where(inner < 0.0, -1.0, 1.0) * upper
    return ScaleMatrix(signs + signs.T)


class _Loop:
    """Shared inner-iteration machinery for warm-up and main passes."""

    def __init__(self, F_hat, config, W):
        self.F_hat = F_hat
        self.config = config
        self.W = W
        self.count = 0
        self.half_norm = 0.5 * np.linalg.norm(F_hat.data)

    def run(self, A, scales, tau, iters, update_lam=True):
        """Iterate the splitting steps until stationarity or the cap.

        With update_lam False the scales stay frozen (shape-phase sweeps).
        Exit requires both the primal gap |B - A| and the drift of A over
        the last window of iterations to fall below admm_tol (relative).
        """
        tol = self.config.admm_tol
        gamma = np.zeros_like(A)
        B = A.copy()
        snapshot = A.copy()
        for k in range(iters):
            G = B + gamma
            A = update_A(self.F_hat, scales, G, self.W, tau)
            if update_lam:
                scales = update_lambda(self.F_hat, A + A.T, self.W, prev=scales)
            B = update_B(A, gamma, self.config.rank)
            gamma = update_gamma(gamma, A, B)
            self.count += 1
            if (k + 1) % _DRIFT_WINDOW == 0:
                denom = max(np.linalg.norm(A), 1.0)
                if (
                    np.linalg.norm(B - A) / denom < tol
                    and np.linalg.norm(A - snapshot) / denom < tol
                ):
                    break
                snapshot = A.copy()
        return A, scales, B, gamma

    def regauge(self, A, scales, B=None, gamma=None):
        """Pin the scale gauge: |A| = |F_hat| / 2, scales compensate.

        (A * s, scales / s) leaves every residual unchanged; pinning it at
        pass boundaries keeps the data and penalty terms on the designed
        relative scale.
        """
        normA = np.linalg.norm(A)
        if normA > 0:
            s = self.half_norm / normA
            A = A * s
            scales = ScaleMatrix(scales.lam / s)
            if B is not None:
                B = B * s
            if gamma is not None:
                gamma = gamma * s
        return A, scales, B, gamma


def solve(
    F_hat: MultiviewBlockMatrix,
    config: SolverConfig | None = None,
    init: tuple[np.ndarray, ScaleMatrix] | None = None,
) -> SolveResult:
    """Recover a consistent multiview matrix from partial, corrupted estimates.

    Parameters
    ----------
    F_hat : MultiviewBlockMatrix
        Measurement matrix with symmetric mask; unmeasured blocks are zero.
    config : SolverConfig, optional
        Caps and tolerances; defaults match the module defaults.
    init : (A0, ScaleMatrix), optional
        Warm start, e.g. the factor product of approximately known poses.
        When given, the continuation warm-up is skipped and the reweighted
        loop starts directly from (A0, scales0). By default the start is
        the deterministic spectral point (A0 = half the rank-3 projection
        of the measurement, scales 1 on the mask) refined by the warm-up.

    Returns
    -------
    SolveResult
        F = A + A.T with every pair filled (measured or not), the factor A,
        per-pair scales, and the final state including the cost history and
        a "converged" / "max_iter" status. Non-convergence is reported via
        the status flag, never raised. The reported gauge has
        |A| = |F_hat| / 2.
    """
    config = config or SolverConfig()
    n = F_hat.n
    w_pairs = F_hat.mask.astype(float)  # initial weights: 1 on the mask
    W = np.kron(w_pairs, _ONES3)
    loop = _Loop(F_hat, config, W)

    if not np.any(F_hat.mask):
        # nothing measured: any rank-feasible point is optimal
        A = np.zeros((3 * n, 3 * n))
        scales = ScaleMatrix(np.zeros((n, n)))
        state = SolverState(A, A.copy(), A.copy(), scales, W, 0.0, 0, 0, 0, [0.0], "converged")
        return SolveResult(
            F=MultiviewBlockMatrix(n=n, data=A, mask=full_mask(n)),
            A=A,
            scales=scales,
            state=state,
        )

    if init is not None:
        A, scales = init
        A = np.asarray(A, dtype=float).copy()
        _check_shapes(F_hat, A, scales)
    else:
        A = 0.5 * svp(F_hat.data, config.rank)
        scales = ScaleMatrix.ones_on(F_hat.mask)
        # shape phase: unit-magnitude scales frozen within each stage, signs
        # re-resolved at stage boundaries, penalty ramped
        for factor in _WARM_STAGES:
            A, scales, _, _ = loop.run(
                A, scales, w_pairs.sum() * factor, _WARM_ITERS, update_lam=False
            )
            scales = _sign_scales(F_hat, A + A.T)
        scales = update_lambda(F_hat, A + A.T, W, prev=scales)
        A, scales, _, _ = loop.regauge(A, scales)
        # joint polish at reduced penalty before the full-penalty loop
        A, scales, _, _ = loop.run(A, scales, w_pairs.sum() * _FREE_STAGE, _WARM_ITERS)
        A, scales, _, _ = loop.regauge(A, scales)
    warm_count = loop.count

    # numerical-zero floor for the robust cost, relative to the cost of the
    # all-zero model; below it the relative-change test is meaningless
    cost_floor = 1e-12 * cost(F_hat, np.zeros_like(A), ScaleMatrix(np.zeros((n, n))))

    history: list[float] = []
    violations: list[tuple[int, float, float]] = []
    status = "max_iter"
    B = A.copy()
    gamma = np.zeros_like(A)
    tau = 0.0
    prev_cost = None

    for t in range(config.max_irls):
        tau = float(w_pairs.sum())  # recomputed per pass, fixed inside
        A, scales, B, gamma = loop.run(A, scales, tau, config.max_admm)
        A, scales, B, gamma = loop.regauge(A, scales, B, gamma)
        c = cost(F_hat, A, scales)
        history.append(c)
        if prev_cost is not None and c > prev_cost + 1e-10 * max(1.0, prev_cost):
            violations.append((t, prev_cost, c))
            logger.warning(
                "cost increased at reweighting pass %d: %.17g -> %.17g", t, prev_cost, c
            )
            if config.dump_dir is not None:
                _dump_violation(config.dump_dir, t, prev_cost, c, A, scales)
        if c <= cost_floor or (
            prev_cost is not None
            and abs(prev_cost - c) <= config.irls_tol * max(prev_cost, 1e-300)
        ):
            status = "converged"
            break
        prev_cost = c
        W = update_weights(F_hat, A, scales, config.delta)
        loop.W = W
        w_pairs = W[::3, ::3]

    state = SolverState(
        A=A,
        B=B,
        gamma=gamma,
        scales=scales,
        W=W,
        tau=tau,
        irls_iterations=len(history),
        admm_iterations=loop.count - warm_count,
        warm_iterations=warm_count,
        cost_history=history,
        status=status,
        monotone_violations=violations,
    )
    F = MultiviewBlockMatrix(n=n, data=A + A.T, mask=full_mask(n))
    return SolveResult(F=F, A=A, scales=scales, state=state)

"""Consistent multiview epipolar-matrix recovery and camera location estimation."""

from fundrank.blockmatrix import (
    FactorPair,
    MultiviewBlockMatrix,
    PairwiseEstimateSet,
    assemble,
    block_rank2_ratio,
    build_factors,
    centers_collinear,
    full_mask,
    multiview_from_poses,
    rank_profile,
    svp,
)
from fundrank.geometry import (
    CameraPose,
    RelativePose,
    essential_global,
    fundamental_global,
    project,
    relative_pose,
    skew,
)
from fundrank.locations import (
    DirectionSet,
    ErrorReport,
    LocationSolution,
    compare_methods,
    essential_error,
    extract_direction,
    location_error,
    recover_locations,
    scale_aligned_error,
)
from fundrank.solver import (
    ScaleMatrix,
    SolveResult,
    SolverConfig,
    SolverState,
    solve,
)
from fundrank.synth import (
    CorruptionReport,
    SceneConfig,
    corrupt,
    eight_point,
    generate_scene,
    normalize_image_frame,
)

__version__ = "0.1.0"

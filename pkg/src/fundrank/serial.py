"""JSON and CSV file formats for scenes, estimates, solutions and metrics.

Matrices are serialized row-major as flat 9-element lists. Floats go
through Python's repr, which round-trips bit-exactly (shortest decimal
with up to 17 significant digits).
"""

from __future__ import annotations

import json

import numpy as np

from fundrank.blockmatrix import MultiviewBlockMatrix, PairwiseEstimateSet
from fundrank.geometry import CameraPose

__all__ = [
    "FileFormatError",
    "load_scene",
    "save_scene",
    "load_estimates",
    "save_estimates",
    "save_solution",
    "load_solution",
    "save_cost_history",
    "save_metrics",
    "METRICS_COLUMNS",
]

METRICS_COLUMNS = (
    "trial",
    "seed",
    "median_ess_err",
    "mean_ess_err",
    "median_loc_err",
    "rel_improvement",
    "improved",
)


class FileFormatError(ValueError):
    """File content does not match the expected schema."""


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FileFormatError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc


def _mat3(values, where):
    arr = np.asarray(values, dtype=float)
    if arr.shape != (9,):
        raise FileFormatError(f"{where}: expected 9 floats, got shape {arr.shape}")
    return arr.reshape(3, 3)


def _vec3(values, where):
    arr = np.asarray(values, dtype=float)
    if arr.shape != (3,):
        raise FileFormatError(f"{where}: expected 3 floats, got shape {arr.shape}")
    return arr


def save_scene(path, poses: list[CameraPose], points: np.ndarray) -> None:
    doc = {
        "n": len(poses),
        "cameras": [
            {
                "R": [float(x) for x in p.R.ravel()],
                "t": [float(x) for x in p.t],
                "K": [float(x) for x in p.K.ravel()],
            }
            for p in poses
        ],
        "points": [[float(x) for x in row] for row in np.asarray(points, dtype=float)],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_scene(path) -> tuple[list[CameraPose], np.ndarray]:
    doc = _read_json(path)
    for key in ("n", "cameras", "points"):
        if key not in doc:
            raise FileFormatError(f"{path}: missing key {key!r}")
    if len(doc["cameras"]) != doc["n"]:
        raise FileFormatError(f"{path}: n={doc['n']} but {len(doc['cameras'])} cameras")
    poses = []
    for k, cam in enumerate(doc["cameras"]):
        try:
            poses.append(
                CameraPose(
                    R=_mat3(cam["R"], f"camera {k} R"),
                    t=_vec3(cam["t"], f"camera {k} t"),
                    K=_mat3(cam["K"], f"camera {k} K"),
                )
            )
        except (KeyError, ValueError) as exc:
            raise FileFormatError(f"{path}: camera {k}: {exc}") from exc
    points = np.asarray(doc["points"], dtype=float)
    if points.size and (points.ndim != 2 or points.shape[1] != 3):
        raise FileFormatError(f"{path}: points must be Nx3, got {points.shape}")
    return poses, points


def save_estimates(path, n: int, blocks) -> None:
    """Write pairwise blocks; accepts a dict {(i, j): 3x3} or a block matrix."""
    if isinstance(blocks, MultiviewBlockMatrix):
        blocks = {(i, j): blocks.block(i, j) for i, j in blocks.pairs(upper=True)}
    doc = {
        "n": n,
        "pairs": [
            {"i": int(i), "j": int(j), "F": [float(x) for x in np.asarray(F).ravel()]}
            for (i, j), F in sorted(blocks.items())
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_estimates(path) -> PairwiseEstimateSet:
    doc = _read_json(path)
    for key in ("n", "pairs"):
        if key not in doc:
            raise FileFormatError(f"{path}: missing key {key!r}")
    est = PairwiseEstimateSet(int(doc["n"]))
    for k, entry in enumerate(doc["pairs"]):
        try:
            est.add(int(entry["i"]), int(entry["j"]), _mat3(entry["F"], f"pair {k}"))
        except (KeyError, ValueError) as exc:
            raise FileFormatError(f"{path}: pair entry {k}: {exc}") from exc
    return est


def save_solution(path, result) -> None:
    """Write the recovered pairs, per-pair scales, and convergence status."""
    n = result.F.n
    pairs = []
    lams = []
    for i in range(n):
        for j in range(i + 1, n):
            pairs.append(
                {"i": i, "j": j, "F": [float(x) for x in result.F.block(i, j).ravel()]}
            )
            lams.append(float(result.scales.value(i, j)))
    doc = {"n": n, "pairs": pairs, "lambda": lams, "status": result.state.status}
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_solution(path) -> dict:
    doc = _read_json(path)
    for key in ("n", "pairs", "lambda", "status"):
        if key not in doc:
            raise FileFormatError(f"{path}: missing key {key!r}")
    if len(doc["lambda"]) != len(doc["pairs"]):
        raise FileFormatError(f"{path}: lambda length differs from pairs length")
    blocks = {}
    lams = {}
    for k, entry in enumerate(doc["pairs"]):
        i, j = int(entry["i"]), int(entry["j"])
        blocks[(i, j)] = _mat3(entry["F"], f"pair {k}")
        lams[(i, j)] = float(doc["lambda"][k])
    return {"n": int(doc["n"]), "blocks": blocks, "lambda": lams, "status": doc["status"]}


def save_cost_history(path, history) -> None:
    """One row per reweighting pass: iteration index and objective value."""
    with open(path, "w") as fh:
        fh.write("iteration,cost\n")
        for k, c in enumerate(history):
            fh.write(f"{k},{c!r}\n")


def save_metrics(path, rows) -> None:
    """Metric table; rows are dicts keyed by METRICS_COLUMNS."""
    with open(path, "w") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for row in rows:
            cells = []
            for col in METRICS_COLUMNS:
                value = row[col]
                cells.append(repr(value) if isinstance(value, float) else str(value))
            fh.write(",".join(cells) + "\n")

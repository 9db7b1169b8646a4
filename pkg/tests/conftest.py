import numpy as np
import pytest

from fundrank.geometry import CameraPose


def random_rotation(rng) -> np.ndarray:
    """Uniform-ish rotation from the QR of a Gaussian matrix, det +1."""
    Q, R = np.linalg.qr(rng.standard_normal((3, 3)))
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 2] = -Q[:, 2]
    return Q


def random_K(rng) -> np.ndarray:
    fx, fy = rng.uniform(0.8, 2.0, size=2)
    skew = rng.uniform(-0.05, 0.05)
    u0, v0 = rng.uniform(-0.2, 0.2, size=2)
    return np.array([[fx, skew, u0], [0.0, fy, v0], [0.0, 0.0, 1.0]])


def random_pose(rng, calibrated=True) -> CameraPose:
    return CameraPose(
        R=random_rotation(rng),
        t=rng.uniform(-2.0, 2.0, size=3),
        K=None if calibrated else random_K(rng),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)

import numpy as np
import pytest

from turbseg.epipolar import CorrespondenceSet, FundamentalMatrix, _finalize


def random_fundamental(rng: np.random.Generator) -> FundamentalMatrix:
    """Random rank-2, Frobenius-normalized 3x3 matrix."""
    while True:
        m = rng.standard_normal((3, 3))
        u, s, vt = np.linalg.svd(m)
        if s[1] > 0.1:
            return FundamentalMatrix(_finalize(m))


def correspondences_from(f: np.ndarray, rng: np.random.Generator, n: int,
                         box: float = 200.0) -> CorrespondenceSet:
    """Exact correspondences satisfying p2^T f p1 = 0.

    p1 is uniform in [0, box]^2; p2 is chosen on the epipolar line f @ p1.
    """
    p1s, p2s = [], []
    while len(p1s) < n:
        p1 = np.array([rng.uniform(0, box), rng.uniform(0, box), 1.0])
        line = f @ p1
        if abs(line[1]) < 1e-6:
            continue
        x2 = rng.uniform(0, box)
        y2 = -(line[0] * x2 + line[2]) / line[1]
        if not np.isfinite(y2) or abs(y2) > 10 * box:
            continue
        p1s.append(p1[:2])
        p2s.append([x2, y2])
    return CorrespondenceSet(np.array(p1s), np.array(p2s))


def frobenius_gap(a: np.ndarray, b: np.ndarray) -> float:
    """Sign-aligned Frobenius distance between two matrices."""
    return min(np.linalg.norm(a - b), np.linalg.norm(a + b))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evosnn.metrics import HypervolumeError, hypervolume_2d, nondominated_mask, spearman

points = st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9)), min_size=0, max_size=25)


def grid_area(pts, ref):
    """Count dominated unit cells on an integer grid."""
    area = 0
    for x, y in itertools.product(range(ref[0]), range(ref[1])):
        if any(px <= x and py <= y for px, py in pts):
            area += 1
    return area


def test_hand_values():
    assert hypervolume_2d([(1, 2), (2, 1)], (3, 3)) == pytest.approx(3.0, abs=1e-12)
    assert hypervolume_2d([(0, 0)], (2, 5)) == 10.0
    assert hypervolume_2d([], (1, 1)) == 0.0
    assert hypervolume_2d([(3, 3)], (3, 3)) == 0.0


def test_dominated_points_add_nothing():
    assert hypervolume_2d([(1, 2), (2, 1), (2, 2)], (3, 3)) == 3.0


def test_point_beyond_reference():
    with pytest.raises(HypervolumeError):
        hypervolume_2d([(1, 4)], (3, 3))


@settings(max_examples=150, deadline=None)
@given(pts=points)
def test_integer_grid_oracle(pts):
    assert hypervolume_2d(pts, (10, 10)) == grid_area(pts, (10, 10))


@settings(max_examples=100, deadline=None)
@given(pts=points, extra=st.tuples(st.integers(0, 9), st.integers(0, 9)))
def test_hypervolume_monotone(pts, extra):
    assert hypervolume_2d(pts + [extra], (10, 10)) >= hypervolume_2d(pts, (10, 10))


@settings(max_examples=100, deadline=None)
@given(pts=points)
def test_nondominated_mask_brute_force(pts):
    mask = nondominated_mask(pts)
    for i, p in enumerate(pts):
        dominated = any(q[0] <= p[0] and q[1] <= p[1] and q != p for q in pts)
        assert mask[i] == (not dominated)


def test_spearman_examples():
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == (1.0, False)
    assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == (-1.0, False)
    assert spearman([1, 1, 1], [1, 2, 3]) == (0.0, True)
    with pytest.raises(ValueError):
        spearman([1, 2], [1, 2])


def test_spearman_matches_scipy_with_ties():
    stats = pytest.importorskip("scipy.stats")
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.integers(0, 5, 20)
        y = rng.integers(0, 5, 20)
        ref = stats.spearmanr(x, y).statistic
        if np.isnan(ref):
            assert spearman(x, y).undefined
        else:
            assert spearman(x, y).rho == pytest.approx(ref, abs=1e-12)


def test_spearman_hand_ties():
    # ranks of x: 1, 2.5, 2.5, 4; pearson on ranks by hand
    x = [1, 2, 2, 3]
    y = [1, 2, 3, 4]
    rx = np.array([1, 2.5, 2.5, 4]) - 2.5
    ry = np.array([1, 2, 3, 4]) - 2.5
    expected = rx @ ry / np.sqrt((rx @ rx) * (ry @ ry))
    assert spearman(x, y).rho == pytest.approx(expected, abs=1e-15)

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from shared.entities.dyadic import DyadicInterval, GridConfig, all_intervals
from shared.entities.measure import (AtomicMeasure, MeasurePair, TruncationWindow, cell_center, hilbert_field,
                                     hilbert_truncated, kernel_matrix, mass, min_gap, poisson,
                                     poisson_comparability_bounds, poisson_hole, poisson_many)
from shared.errors import MeasureError

WIDE = TruncationWindow(1e-6, 2.0)


def test_cell_centers():
    assert cell_center(0, 2) == 0.125
    assert cell_center(3, 2) == 0.875
    nu = AtomicMeasure.from_atoms(3, [(6, 1.0), (1, 2.0)])
    assert_allclose(nu.positions, [3 / 16, 13 / 16])


def test_from_atoms_sorts_and_merges():
    nu = AtomicMeasure.from_atoms(4, [(7, 1.0), (2, 0.5), (7, 0.25)])
    assert nu.cells == (2, 7)
    assert nu.masses == (0.5, 1.25)
    assert nu.total == 1.75


@pytest.mark.parametrize("cells,masses", [
    ((3, 1), (1.0, 1.0)),
    ((1,), (0.0,)),
    ((1,), (math.inf,)),
    ((16,), (1.0,)),
    ((1, 2), (1.0,)),
])
def test_invalid_measures(cells, masses):
    with pytest.raises(MeasureError):
        AtomicMeasure(4, cells, masses)


def test_mass_is_additive_over_children(rng):
    nu = AtomicMeasure.from_atoms(8, zip(rng.choice(256, 40, replace=False).tolist(), rng.uniform(0.1, 2, 40)))
    for I in all_intervals(7):
        left, right = I.halves()
        assert math.isclose(mass(nu, I), mass(nu, left) + mass(nu, right), rel_tol=1e-12, abs_tol=1e-15)
    assert math.isclose(mass(nu, DyadicInterval.unit()), nu.total)


def test_restrict_and_outside_split_the_measure():
    nu = AtomicMeasure.from_atoms(3, [(0, 1.0), (3, 2.0), (5, 4.0)])
    I = DyadicInterval(1, 0)
    assert nu.restrict(I).cells == (0, 3)
    assert nu.restrict_outside(I).cells == (5,)
    assert nu.restrict(I).merge(nu.restrict_outside(I)) == nu


def test_reflection_reverses_cells():
    nu = AtomicMeasure.from_atoms(3, [(0, 1.0), (5, 2.0)])
    assert nu.reflected().cells == (2, 7)
    assert nu.reflected().masses == (2.0, 1.0)
    assert_allclose(nu.reflected().positions, 1.0 - nu.positions[::-1])


def test_poisson_hand_value():
    # one unit atom at 13/16 seen from [0, 1/2): distance 5/16
    nu = AtomicMeasure.from_atoms(3, [(6, 1.0)])
    assert math.isclose(poisson(nu, DyadicInterval(1, 0)), 0.5 / (0.25 + 25 / 256))
    # an atom inside I contributes m/|I|
    assert math.isclose(poisson(nu, DyadicInterval(1, 1)), 2.0)


def test_poisson_hole_drops_the_hole(one_pair):
    hole, target = DyadicInterval(1, 0), DyadicInterval(5, 10)
    outside = AtomicMeasure.from_atoms(10, [(700, 2.0), (900, 0.5)])
    assert math.isclose(poisson_hole(one_pair, hole, target), poisson(outside, target))
    with pytest.raises(MeasureError):
        poisson_hole(one_pair, target, hole)


def test_poisson_many_matches_scalar(rng):
    nu = AtomicMeasure.from_atoms(6, zip(rng.choice(64, 10, replace=False).tolist(), rng.uniform(0.5, 1.5, 10)))
    intervals = all_intervals(4)
    got = poisson_many(nu, np.array([I.left for I in intervals]), np.array([I.right for I in intervals]))
    assert_allclose(got, [poisson(nu, I) for I in intervals], rtol=1e-10)
    assert_allclose(poisson_many(AtomicMeasure.empty(6), np.zeros(3), np.ones(3)), 0.0)


def test_poisson_comparability_bounds_bracket_one():
    low, high = poisson_comparability_bounds(GridConfig(K=12, r=5, eps=0.45))
    assert 0.0 < low < 1.0 < high < 1.05


def test_pair_rejects_common_atoms_and_depth_mismatch(cfg):
    nu = AtomicMeasure.from_atoms(cfg.K, [(5, 1.0)])
    with pytest.raises(MeasureError):
        MeasurePair(nu, nu, cfg)
    with pytest.raises(MeasureError):
        MeasurePair(nu, AtomicMeasure.from_atoms(cfg.K + 1, [(1, 1.0)]), cfg)


def test_pair_from_dict_reports_missing_fields(one_pair):
    data = one_pair.to_dict()
    assert MeasurePair.from_dict(data) == one_pair
    del data['w']
    with pytest.raises(MeasureError):
        MeasurePair.from_dict(data)
    with pytest.raises(MeasureError):
        AtomicMeasure.from_dict({'K': 4, 'atoms': [{'k': 1.5, 'mass': 1.0}]})


def test_window_validation_and_default(one_pair):
    with pytest.raises(MeasureError):
        TruncationWindow(0.0, 1.0)
    with pytest.raises(MeasureError):
        TruncationWindow(0.5, 0.25)
    win = TruncationWindow.default_for(one_pair)
    assert win.eps == 0.5 * min_gap(one_pair.sigma, one_pair.w)
    assert win.delta == 2.0


def test_min_gap():
    a = AtomicMeasure.from_atoms(4, [(1, 1.0), (9, 1.0)])
    b = AtomicMeasure.from_atoms(4, [(4, 1.0), (11, 1.0)])
    assert math.isclose(min_gap(a, b), 2 / 16)
    assert min_gap(a, AtomicMeasure.empty(4)) is None


def test_hilbert_truncated_hand_value():
    nu = AtomicMeasure.from_atoms(2, [(1, 1.0)])
    assert math.isclose(hilbert_truncated(nu, 0.125, WIDE), 4.0)
    assert math.isclose(hilbert_truncated(nu, 0.625, WIDE), -4.0)
    assert hilbert_truncated(nu, 0.125, TruncationWindow(0.01, 0.2)) == 0.0
    with pytest.raises(MeasureError):
        hilbert_truncated(nu, 0.375, WIDE)


def test_kernel_matrix_signs():
    G = kernel_matrix(np.array([0.25]), np.array([0.5, 0.125]), WIDE)
    assert_allclose(G, [[4.0, -8.0]])


def test_hilbert_field_matches_pointwise_sum(one_pair):
    f = np.array([1.0, -2.0, 0.5])
    y = one_pair.sigma.positions
    everywhere = [sum(f * one_pair.sigma.weights / (y - x)) for x in one_pair.w.positions]
    assert_allclose(hilbert_field(f, one_pair, None, WIDE), everywhere, rtol=1e-10)
    right = hilbert_field(f, one_pair, DyadicInterval(1, 1), WIDE)
    y = one_pair.sigma.positions[1:]
    expected = [sum(f[1:] * one_pair.sigma.weights[1:] / (y - x)) for x in one_pair.w.positions]
    assert_allclose(right, expected, rtol=1e-10)
    with pytest.raises(MeasureError):
        hilbert_field(np.ones(2), one_pair, None, WIDE)

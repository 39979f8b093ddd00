import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from shared.entities.dyadic import DyadicInterval, GridConfig, all_intervals
from shared.entities.haar import (HaarCoefficients, average, coefficient_x, energy, energy_haar_sum, epsilon_J,
                                  expand, haar_function, haar_system, mart_diff, project, reconstruct)
from shared.entities.measure import AtomicMeasure
from shared.errors import HaarError

TOL = 1e-10


def random_measure(rng, K=8, atoms=30):
    cells = rng.choice(1 << K, atoms, replace=False).tolist()
    return AtomicMeasure.from_atoms(K, zip(cells, rng.uniform(0.2, 3.0, atoms).tolist()))


@pytest.fixture
def two_atoms():
    """Unit masses at 1/4 and 3/4."""
    return AtomicMeasure.from_atoms(1, [(0, 1.0), (1, 1.0)])


def test_two_atom_haar_values(two_atoms):
    h = haar_function(two_atoms, DyadicInterval.unit())
    assert_allclose(h, [-math.sqrt(0.5), math.sqrt(0.5)])
    assert math.isclose(coefficient_x(two_atoms, DyadicInterval.unit()), math.sqrt(2) / 4)


def test_two_atom_energy(two_atoms):
    unit = DyadicInterval.unit()
    assert math.isclose(energy(two_atoms, unit), 0.25)
    assert math.isclose(energy_haar_sum(two_atoms, unit), 1 / 8)


def test_system_has_one_function_fewer_than_atoms(rng):
    nu = random_measure(rng)
    assert len(haar_system(nu)) == len(nu) - 1
    assert len(haar_system(AtomicMeasure.from_atoms(8, [(3, 1.0)]))) == 0


def test_orthonormal_in_weighted_space(rng):
    nu = random_measure(rng)
    H = haar_system(nu).matrix
    assert_allclose(H @ np.diag(nu.weights) @ H.T, np.eye(len(H)), atol=TOL)
    # every Haar function has mean zero
    assert_allclose(H @ nu.weights, 0.0, atol=TOL)


def test_expand_reconstruct_and_parseval(rng):
    nu = random_measure(rng)
    f = rng.standard_normal(len(nu))
    c = expand(f, nu)
    assert_allclose(reconstruct(c), f, atol=TOL)
    assert math.isclose(c.norm_sq(), float(np.sum(nu.weights * f * f)), rel_tol=1e-10)
    assert math.isclose(c.mean, average(f, nu, DyadicInterval.unit()), rel_tol=1e-12)


def test_martingale_difference_is_the_coefficient_term(rng):
    nu = random_measure(rng)
    f = rng.standard_normal(len(nu))
    c = expand(f, nu)
    system = haar_system(nu)
    for I in system.support:
        assert_allclose(mart_diff(f, nu, I), c.coeffs.get(I, 0.0) * haar_function(nu, I), atol=TOL)


def test_degenerate_interval_has_no_haar_function(two_atoms):
    with pytest.raises(HaarError):
        haar_function(two_atoms, DyadicInterval(1, 0))
    assert coefficient_x(two_atoms, DyadicInterval(1, 0)) == 0.0
    with pytest.raises(HaarError):
        average(np.ones(2), AtomicMeasure.from_atoms(2, [(0, 1.0), (1, 1.0)]), DyadicInterval(1, 1))


def test_energy_identity(rng):
    nu = random_measure(rng)
    for I in all_intervals(4):
        m = sum(nu.masses[nu.atom_slice(I)])
        lhs = energy(nu, I) ** 2 * m * I.length ** 2
        assert math.isclose(lhs, energy_haar_sum(nu, I), rel_tol=1e-9, abs_tol=1e-14)


def test_energy_is_at_most_one_half(rng):
    nu = random_measure(rng)
    assert all(energy(nu, I) <= 0.5 for I in all_intervals(6))


def test_epsilon_collects_deep_ancestors_only():
    cfg = GridConfig(K=10, r=5, eps=0.45)
    nu = AtomicMeasure.from_atoms(10, [(100, 1.0), (700, 1.0), (900, 2.0)])
    unit, J = DyadicInterval.unit(), DyadicInterval(5, 10)
    f = HaarCoefficients(nu, 0.0, {unit: 2.0, DyadicInterval(1, 1): 5.0})
    # J lies in the left half of [0,1), where h_[0,1) = -sqrt(3/(4*1))
    assert math.isclose(epsilon_J(f, J, unit, cfg), 2.0 * -math.sqrt(3 / 4))
    # J is not deeply inside [0,1/2), so i0 = [0,1/2) leaves nothing
    assert epsilon_J(f, J, DyadicInterval(1, 0), cfg) == 0.0


def test_project_keeps_listed_coefficients(rng):
    nu = random_measure(rng)
    c = expand(rng.standard_normal(len(nu)), nu)
    keep = haar_system(nu).support[:3]
    p = project(c, keep)
    assert p.mean == 0.0
    assert set(p.coeffs) <= set(keep)
    assert_allclose(p.vector()[:3], c.vector()[:3])

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from engine.forms import (QUASI_ORTHOGONALITY_BOUND, FormsEngine, make_Q0, monotonicity_bound,
                          orthogonality_violations, stopping_data)
from engine.generators import random_coefficients, uniform_f
from shared.entities.dyadic import DyadicInterval, all_intervals, deeply_contained
from shared.entities.haar import HaarCoefficients, coefficient_x, epsilon_J, haar_system, reconstruct
from shared.entities.measure import mass, poisson
from shared.entities.pairs import Pair, PairCollection
from shared.errors import AdmissibilityError

UNIT = DyadicInterval.unit()
J = DyadicInterval(5, 10)
TILDE = DyadicInterval(1, 0)


def close(a, b, scale=1.0):
    return math.isclose(a, b, rel_tol=1e-8, abs_tol=1e-10 * scale)


def test_q0_of_the_one_pair_instance(one_pair_q0):
    assert list(one_pair_q0) == [Pair(UNIT, J)]
    assert one_pair_q0.tildes == [TILDE]


def test_form_matrix_by_hand(one_pair, one_pair_engine, one_pair_q0):
    sigma, w = one_pair.sigma, one_pair.w
    # H(1_[1/2,1) sigma) at the w atoms, paired with h^w_J
    field = [sum(m / (y - x) for y, m in zip(sigma.positions[1:], sigma.masses[1:])) for x in w.positions]
    h_J = [-math.sqrt(3 / 4), math.sqrt(1 / 12)]
    pairing = sum(m * h * H for m, h, H in zip(w.masses, h_J, field))
    h_unit_left = -math.sqrt(2.5 / 3.5)
    fm = one_pair_engine.form_matrix(one_pair_q0)
    assert fm.rows == [UNIT] and fm.cols == [J]
    assert_allclose(fm.matrix, [[h_unit_left * pairing]], rtol=1e-10)
    assert math.isclose(one_pair_engine.norm(one_pair_q0), abs(h_unit_left * pairing), rel_tol=1e-10)


def test_form_matrix_agrees_with_atom_sums(random_pair, rng):
    eng = FormsEngine(random_pair)
    Q = make_Q0(random_pair, UNIT, [])
    f, g = random_coefficients(random_pair.sigma, rng), random_coefficients(random_pair.w, rng)
    direct = eng.b_form(Q, f, g)
    assert close(eng.form_matrix(Q).evaluate(f, g), direct, 1.0 + abs(direct))


def test_above_and_stop_forms_add_up(random_pair, rng):
    eng = FormsEngine(random_pair)
    f, g = random_coefficients(random_pair.sigma, rng), random_coefficients(random_pair.w, rng)
    total = eng.i0_part(f, g)
    assert close(eng.b_above(f, g) + eng.b_stop(f, g), total, 1.0 + abs(total))


def test_stop_form_is_the_q0_form(random_pair, rng):
    eng = FormsEngine(random_pair)
    Q = make_Q0(random_pair, UNIT, [])
    f = uniform_f(random_pair, [], rng, good_only=True)
    g = random_coefficients(random_pair.w, rng)
    stop = eng.b_stop(f, g)
    assert close(eng.b_form(Q, f, g), stop, 1.0 + abs(stop))


def test_epsilon_is_bounded_for_uniform_f(random_pair, rng):
    f = uniform_f(random_pair, [], rng)
    for J_w in haar_system(random_pair.w).support:
        assert abs(epsilon_J(f, J_w, UNIT, random_pair.cfg)) <= 1.0 + 1e-9


def test_q0_is_admissible(random_pair):
    Q = make_Q0(random_pair, UNIT, [])
    assert Q.admissibility_violations(random_pair.cfg) == []


def test_q0_skips_intervals_inside_S(one_pair):
    assert len(make_Q0(one_pair, UNIT, [DyadicInterval(4, 5)])) == 0


@pytest.mark.parametrize("S_family,energy_family", [
    ([DyadicInterval(1, 0), DyadicInterval(2, 0)], []),
    ([DyadicInterval(1, 0)], [DyadicInterval(2, 3)]),
])
def test_q0_rejects_bad_families(one_pair, S_family, energy_family):
    with pytest.raises(AdmissibilityError):
        make_Q0(one_pair, UNIT, S_family, energy_family)


def test_size_by_hand(one_pair, one_pair_engine, one_pair_q0):
    result = one_pair_engine.size(one_pair_q0)
    assert result.witness == TILDE
    assert result.skipped == 1
    P = poisson(one_pair.sigma.restrict_outside(TILDE), TILDE)
    tent = coefficient_x(one_pair.w, J) ** 2
    assert math.isclose(result.value, math.sqrt(P * P * tent / TILDE.length ** 2), rel_tol=1e-12)


def test_eta_holes_needs_a_covering_S(one_pair_engine, one_pair_q0):
    with pytest.raises(AdmissibilityError):
        one_pair_engine.eta_holes(one_pair_q0, [])
    with pytest.raises(AdmissibilityError):
        one_pair_engine.eta_Holes(one_pair_q0, [])


def test_beta_t_against_direct_sum(random_pair):
    eng = FormsEngine(random_pair)
    Q = make_Q0(random_pair, UNIT, [])
    S_family = list(all_intervals(1, UNIT))[1:]
    expected = 0.0
    for S in S_family:
        hole = random_pair.sigma.restrict_outside(S)
        total = math.fsum(poisson(hole, Jq) ** 2 * coefficient_x(random_pair.w, Jq) ** 2 / Jq.length ** 2
                          for Jq in Q.q2s if deeply_contained(Jq, S, random_pair.cfg))
        if mass(random_pair.sigma, S) > 0.0:
            expected = max(expected, total / mass(random_pair.sigma, S))
    assert math.isclose(eng.beta_t(Q, S_family), math.sqrt(expected), rel_tol=1e-12, abs_tol=1e-300)
    # the whole interval leaves no hole, and an empty family gives nothing
    assert eng.beta_t(Q, [UNIT]) == 0.0
    assert eng.beta_t(Q, []) == 0.0


def test_equal_majorant(random_pair):
    eng = FormsEngine(random_pair)
    Q = make_Q0(random_pair, UNIT, [])
    for u in sorted({p.ratio_exponent for p in Q}):
        sub = Q.subset(p for p in Q if p.ratio_exponent == u)
        assert eng.norm(sub) <= eng.equal_majorant(sub) * (1 + 1e-9) + 1e-12


def test_equal_majorant_rejects_mixed_ratios(one_pair_engine):
    Q = PairCollection(UNIT, [Pair(UNIT, J), Pair(UNIT, DyadicInterval(6, 20))])
    with pytest.raises(AdmissibilityError):
        one_pair_engine.equal_majorant(Q)


def test_phi_is_constant_off_tilde(one_pair, one_pair_engine, one_pair_q0):
    f = HaarCoefficients(one_pair.sigma, 0.0, {UNIT: 2.0})
    phi = one_pair_engine.phi_J(one_pair_q0, reconstruct(f), J)
    height = 2.0 * -math.sqrt(2.5 / 3.5)
    assert_allclose(phi, [0.0, height, height], atol=1e-12)
    with pytest.raises(AdmissibilityError):
        one_pair_engine.phi_J(one_pair_q0, reconstruct(f), TILDE)


def test_monotonicity_ratio_is_bounded(random_pair):
    eng = FormsEngine(random_pair)
    bound = monotonicity_bound(random_pair.cfg)
    for S in all_intervals(3):
        if len(eng.outside(S)) == 0:
            continue
        for J_w in eng.sys_w.support:
            if deeply_contained(J_w, S, random_pair.cfg):
                assert eng.monotonicity_check(S, J_w).ratio <= bound * (1 + 1e-12)


def test_monotonicity_rejects_shallow_intervals(one_pair_engine):
    with pytest.raises(AdmissibilityError):
        one_pair_engine.monotonicity_check(TILDE, J)


def test_monotonicity_bound_value(cfg):
    assert math.isclose(monotonicity_bound(cfg), 1.0 + 2.0 ** -4.4)


def test_stopping_tree_is_quasi_orthogonal(random_pair, rng):
    sigma = random_pair.sigma
    f_vals = rng.standard_normal(len(sigma)) ** 3
    data = stopping_data(f_vals, sigma, UNIT, growth_factor=4.0)
    assert data.growth_violations(4.0) == []
    norm_sq = float(np.sum(sigma.weights * f_vals ** 2))
    assert data.carleson_sum(sigma) <= QUASI_ORTHOGONALITY_BOUND * norm_sq * (1 + 1e-12)


def test_orthogonality_violations():
    a = PairCollection(UNIT, [Pair(UNIT, J)])
    b = PairCollection(UNIT, [Pair(UNIT, J)])
    c = PairCollection(UNIT, [Pair(UNIT, DyadicInterval(5, 21))])
    assert orthogonality_violations([a, c]) == []
    assert len(orthogonality_violations([a, b])) == 1
    # Q1 = [0,1) in three families, split over two tildes
    d = PairCollection(UNIT, [Pair(UNIT, DyadicInterval(5, 22))])
    assert orthogonality_violations([a, c, d]) == []
    same_tilde = [PairCollection(UNIT, [Pair(UNIT, DyadicInterval(5, j))]) for j in (10, 11, 12)]
    problems = orthogonality_violations(same_tilde)
    assert problems == [f"tilde Q1 interval {TILDE} appears in 3 families"]


def test_phi_bound_against_the_stopping_average(one_pair, one_pair_engine, one_pair_q0):
    f_vals = reconstruct(HaarCoefficients(one_pair.sigma, 0.0, {UNIT: 2.0}))
    data = stopping_data(f_vals, one_pair.sigma, UNIT)
    assert data.pi(J) == UNIT
    # mean zero on [0,1): alpha = 2 sigma(left) |phi| / sigma([0,1))
    ratio, vanishes = one_pair_engine.phi_bound(one_pair_q0, f_vals, J, data, TILDE)
    assert ratio == pytest.approx(1.75)
    assert vanishes
    _, vanishes = one_pair_engine.phi_bound(one_pair_q0, f_vals, J, data, UNIT)
    assert not vanishes
    flat = stopping_data(np.ones(3), one_pair.sigma, UNIT)
    zero, _ = one_pair_engine.phi_bound(one_pair_q0, np.zeros(3), J, flat, TILDE)
    assert zero == 0.0

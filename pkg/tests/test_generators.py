import numpy as np
import pytest

from engine.generators import (GENERATORS, adapted_g, adversarial_spike, cantor, cantor_intervals, corpus,
                               corpus_atoms, generate, lattice, random_coefficients, right_of_midpoint, uniform_f, uniform_random)
from shared.entities.dyadic import DyadicInterval, all_intervals
from shared.entities.haar import average, haar_system, reconstruct
from shared.errors import InputError


def test_right_of_midpoint():
    assert right_of_midpoint(DyadicInterval.unit(), 4) == 8
    assert right_of_midpoint(DyadicInterval(2, 3), 4) == 14
    with pytest.raises(InputError):
        right_of_midpoint(DyadicInterval(4, 0), 4)


def test_lattice(cfg):
    pair = lattice(cfg, atoms=4)
    assert pair.sigma.cells == (128, 384, 640, 896)
    assert pair.w.cells == (127, 383, 639, 895)
    assert set(pair.sigma.masses) == {1.0}
    with pytest.raises(InputError):
        lattice(cfg, atoms=3)


def test_cantor(cfg):
    assert cantor_intervals(1) == [DyadicInterval(2, 0), DyadicInterval(2, 3)]
    pair = cantor(cfg, depth=2)
    assert pair.sigma.cells == (32, 224, 800, 992)
    assert pair.sigma.masses == (0.25,) * 4
    assert pair.w.cells == (128, 512, 896)
    assert pair.w.masses == (1 / 16, 1 / 4, 1 / 16)
    with pytest.raises(InputError):
        cantor(cfg, depth=5)


def test_uniform_random(cfg, rng):
    pair = uniform_random(cfg, rng, atoms=20, mass_low=0.5, mass_high=2.0)
    assert len(pair.sigma) == len(pair.w) == 20
    assert all(0.5 <= m <= 2.0 for m in pair.sigma.masses + pair.w.masses)
    with pytest.raises(InputError):
        uniform_random(cfg, rng, atoms=600)
    with pytest.raises(InputError):
        uniform_random(cfg, rng, atoms=4, mass_low=2.0, mass_high=1.0)


def test_adversarial_spike_adds_heavy_neighbours(cfg, rng):
    pair = adversarial_spike(cfg, rng, atoms=10, spikes=3, spike_mass=50.0)
    heavy = [k for k, m in zip(pair.sigma.cells, pair.sigma.masses) if m == 50.0]
    assert 1 <= len(heavy) <= 3
    w_cells = set(pair.w.cells)
    assert all(k - 1 in w_cells or k + 1 in w_cells for k in heavy)


def test_generate_is_seeded(cfg):
    for kind in GENERATORS:
        assert generate(kind, cfg, 11).to_dict() == generate(kind, cfg, 11).to_dict()
    assert generate('uniform-random', cfg, 1).to_dict() != generate('uniform-random', cfg, 2).to_dict()
    with pytest.raises(InputError):
        generate('gaussian', cfg, 1)


def test_corpus_names_and_kinds(small_cfg):
    items = corpus(small_cfg, seed=5, size=6)
    assert [name for name, _ in items][:4] == ['000-uniform-random', '001-lattice', '002-cantor', '003-adversarial-spike']
    assert len(items) == 6


def test_corpus_atoms_cap(cfg, small_cfg):
    assert corpus_atoms(cfg) == 200
    assert corpus_atoms(small_cfg) == 64
    assert corpus_atoms(cfg, 24) == 24
    with pytest.raises(InputError):
        corpus_atoms(cfg, 0)


def test_corpus_atoms_reach_every_kind(cfg):
    items = dict(corpus(cfg, seed=2, size=8, atoms=40))
    assert len(items['000-uniform-random'].sigma) == 40
    assert len(items['001-lattice'].sigma) == 32
    assert len(items['002-cantor'].sigma) == 16
    assert len(items['006-cantor'].sigma) == 8
    assert len(items['003-adversarial-spike'].w) == 40
    assert len(items['003-adversarial-spike'].sigma) >= 40


def test_uniform_f_has_unit_averages(random_pair, rng):
    S_family = [DyadicInterval(3, 2)]
    f = uniform_f(random_pair, S_family, rng)
    values = reconstruct(f)
    assert f.mean == 0.0
    assert not any(S.contains(I) for I in f.coeffs for S in S_family)
    for I in all_intervals(6):
        if any(S.contains(I) for S in S_family) or sum(random_pair.sigma.masses[random_pair.sigma.atom_slice(I)]) == 0:
            continue
        assert average(np.abs(values), random_pair.sigma, I) <= 1.0 + 1e-9


def test_adapted_g_avoids_S(random_pair, rng):
    S_family = [DyadicInterval(2, 1), DyadicInterval(3, 7)]
    g = adapted_g(random_pair, S_family, rng)
    assert g.coeffs
    assert not any(S.contains(J) for J in g.coeffs for S in S_family)


def test_random_coefficients_fill_the_system(random_pair, rng):
    g = random_coefficients(random_pair.w, rng)
    assert len(g.coeffs) == len(haar_system(random_pair.w))

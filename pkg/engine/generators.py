"""Seeded measure pairs and test functions.

Kinds of pairs: uniform-random, lattice, cantor (mutually singular, sigma on
a Cantor set and w on its gaps) and adversarial-spike (heavy sigma atoms next
to w atoms). Every generator takes a numpy Generator so that a seed fixes the
output.
"""

import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from shared.entities.dyadic import DyadicInterval, GridConfig, is_good
from shared.entities.haar import HaarCoefficients, haar_system, reconstruct
from shared.entities.measure import AtomicMeasure, MeasurePair
from shared.errors import InputError
from shared.utils.config_loader import cli_cfg, forms_cfg

logger = logging.getLogger(__name__)

GEN_CFG = cli_cfg['gen']
UNIFORM_CFG = forms_cfg['generators']


def right_of_midpoint(I: DyadicInterval, K: int) -> int:
    """Index of the depth-K cell just right of the midpoint of I."""
    if I.n >= K:
        raise InputError(f"{I} has no midpoint cell at depth K={K}")
    return (2 * I.j + 1) << (K - I.n - 1)


def uniform_random(cfg: GridConfig, rng: np.random.Generator, atoms: Optional[int] = None,
                   mass_low: Optional[float] = None, mass_high: Optional[float] = None) -> MeasurePair:
    """atoms sigma-atoms and atoms w-atoms on distinct random cells with uniform masses."""
    params = GEN_CFG['uniform_random']
    atoms = atoms if atoms is not None else params['atoms']
    low = mass_low if mass_low is not None else params['mass_low']
    high = mass_high if mass_high is not None else params['mass_high']
    if 2 * atoms > (1 << cfg.K):
        raise InputError(f"{2 * atoms} atoms do not fit in 2^{cfg.K} cells")
    if not 0.0 < low <= high:
        raise InputError(f"mass range ({low}, {high}) must satisfy 0 < low <= high")
    cells = rng.choice(1 << cfg.K, size=2 * atoms, replace=False)
    masses = rng.uniform(low, high, size=2 * atoms)
    sigma = AtomicMeasure.from_atoms(cfg.K, zip(cells[:atoms].tolist(), masses[:atoms].tolist()))
    w = AtomicMeasure.from_atoms(cfg.K, zip(cells[atoms:].tolist(), masses[atoms:].tolist()))
    return MeasurePair(sigma, w, cfg)


def lattice(cfg: GridConfig, rng: Optional[np.random.Generator] = None, atoms: Optional[int] = None) -> MeasurePair:
    """Unit atoms at the midpoints of the 2^m intervals of one scale, sigma right and w left of each midpoint."""
    atoms = atoms if atoms is not None else GEN_CFG['lattice']['atoms']
    m = int(round(math.log2(atoms))) if atoms > 0 else -1
    if atoms <= 0 or (1 << m) != atoms or m >= cfg.K:
        raise InputError(f"lattice needs a power of two below 2^{cfg.K} atoms, got {atoms}")
    right = [right_of_midpoint(DyadicInterval(m, j), cfg.K) for j in range(atoms)]
    sigma = AtomicMeasure.from_atoms(cfg.K, ((k, 1.0) for k in right))
    w = AtomicMeasure.from_atoms(cfg.K, ((k - 1, 1.0) for k in right))
    return MeasurePair(sigma, w, cfg)


def cantor_intervals(depth: int) -> List[DyadicInterval]:
    """Intervals kept after depth stages of removing the middle half (two middle quarters)."""
    kept = [DyadicInterval.unit()]
    for _ in range(depth):
        kept = [DyadicInterval(I.n + 2, 4 * I.j + q) for I in kept for q in (0, 3)]
    return kept


def cantor(cfg: GridConfig, rng: Optional[np.random.Generator] = None, depth: Optional[int] = None) -> MeasurePair:
    """sigma: mass 2^-d on each retained stage-d interval; w: mass 4^-s in each gap removed at stage s."""
    depth = depth if depth is not None else GEN_CFG['cantor']['depth']
    if depth < 1 or 2 * depth + 1 > cfg.K:
        raise InputError(f"cantor depth {depth} needs 1 <= d and 2d + 1 <= K={cfg.K}")
    sigma = AtomicMeasure.from_atoms(cfg.K, ((right_of_midpoint(I, cfg.K), 2.0 ** -depth)
                                             for I in cantor_intervals(depth)))
    gaps = []
    for stage in range(1, depth + 1):
        gaps.extend((right_of_midpoint(I, cfg.K), 4.0 ** -stage) for I in cantor_intervals(stage - 1))
    return MeasurePair(sigma, AtomicMeasure.from_atoms(cfg.K, gaps), cfg)


def adversarial_spike(cfg: GridConfig, rng: np.random.Generator, atoms: Optional[int] = None,
                      spikes: Optional[int] = None, spike_mass: Optional[float] = None) -> MeasurePair:
    """A uniform-random pair plus heavy sigma atoms on cells adjacent to w atoms."""
    params = GEN_CFG['adversarial_spike']
    atoms = atoms if atoms is not None else params['atoms']
    spikes = spikes if spikes is not None else params['spikes']
    spike_mass = spike_mass if spike_mass is not None else params['spike_mass']
    base = uniform_random(cfg, rng, atoms=atoms)
    taken = set(base.sigma.cells) | set(base.w.cells)
    extra = []
    for idx in rng.permutation(len(base.w))[:spikes].tolist():
        k = base.w.cells[idx]
        for neighbour in (k + 1, k - 1):
            if 0 <= neighbour < (1 << cfg.K) and neighbour not in taken:
                extra.append((neighbour, float(spike_mass)))
                taken.add(neighbour)
                break
    sigma = AtomicMeasure.from_atoms(cfg.K, list(zip(base.sigma.cells, base.sigma.masses)) + extra)
    return MeasurePair(sigma, base.w, cfg)


GENERATORS: Dict[str, Callable[..., MeasurePair]] = {
    'uniform-random': uniform_random,
    'lattice': lattice,
    'cantor': cantor,
    'adversarial-spike': adversarial_spike,
}


def generate(kind: str, cfg: GridConfig, seed: int, **params) -> MeasurePair:
    if kind not in GENERATORS:
        raise InputError(f"unknown measure kind {kind!r}; choose from {sorted(GENERATORS)}")
    rng = np.random.default_rng(seed)
    pair = GENERATORS[kind](cfg, rng, **{k: v for k, v in params.items() if v is not None})
    logger.info(f"generated {kind} pair: {len(pair.sigma)} sigma atoms, {len(pair.w)} w atoms")
    return pair


def corpus_atoms(cfg: GridConfig, atoms: Optional[int] = None) -> int:
    """Atoms per measure for a corpus on this grid, at most a quarter of the cells."""
    atoms = atoms if atoms is not None else cli_cfg['corpus']['atoms_per_measure']
    if atoms < 1:
        raise InputError(f"a corpus needs at least one atom per measure, got {atoms}")
    return min(atoms, max(1, (1 << cfg.K) // 4))


def corpus(cfg: GridConfig, seed: int, size: Optional[int] = None,
           kinds: Optional[Sequence[str]] = None, atoms: Optional[int] = None) -> List[Tuple[str, MeasurePair]]:
    """size pairs cycling through the kinds; instance i uses seed + i.

    The atom count reaches every kind: lattice rounds it down to a power of
    two and cantor starts from the deepest construction with at most that
    many sigma atoms, getting shallower on later cycles.
    """
    size = size if size is not None else cli_cfg['corpus']['size']
    kinds = list(kinds or cli_cfg['corpus']['kinds'])
    atoms = corpus_atoms(cfg, atoms)
    top = int(math.log2(atoms))
    max_depth = max(1, min((cfg.K - 1) // 2, top))
    out = []
    for i in range(size):
        kind = kinds[i % len(kinds)]
        if kind == 'cantor':
            params = {'depth': max_depth - (i // len(kinds)) % max_depth}
        elif kind == 'lattice':
            params = {'atoms': 1 << top}
        else:
            params = {'atoms': atoms}
        out.append((f"{i:03d}-{kind}", generate(kind, cfg, seed + i, **params)))
    return out


def _averages_outside(values: np.ndarray, nu: AtomicMeasure,
                      S_family: Sequence[DyadicInterval]) -> float:
    """max of E_I |values| over intervals I with mass that lie in no S."""
    weighted = nu.weights * np.abs(values)
    cells = np.asarray(nu.cells, dtype=np.int64)
    best = 0.0
    for n in range(nu.K + 1):
        keys, inverse = np.unique(cells >> (nu.K - n), return_inverse=True)
        num = np.bincount(inverse, weights=weighted)
        den = np.bincount(inverse, weights=nu.weights)
        for j, a, b in zip(keys.tolist(), num.tolist(), den.tolist()):
            I = DyadicInterval(n, j)
            if any(S.contains(I) for S in S_family):
                continue
            best = max(best, a / b)
    return best


def uniform_f(pair: MeasurePair, S_family: Sequence[DyadicInterval], rng: np.random.Generator,
              good_only: Optional[bool] = None) -> HaarCoefficients:
    """Mean-zero f, constant on each S, with E_I |f| <= 1 for every I lying in no S."""
    good_only = UNIFORM_CFG['good_only'] if good_only is None else good_only
    system = haar_system(pair.sigma)
    coeffs = {}
    for I in system.support:
        if any(S.contains(I) for S in S_family):
            continue
        if good_only and not is_good(I, pair.cfg):
            continue
        coeffs[I] = float(rng.standard_normal()) * UNIFORM_CFG['coefficient_scale']
    f = HaarCoefficients(pair.sigma, 0.0, coeffs)
    for _ in range(UNIFORM_CFG['clamp_rounds']):
        top = _averages_outside(reconstruct(f), pair.sigma, S_family)
        if top <= 1.0:
            break
        f = HaarCoefficients(pair.sigma, 0.0, {I: c / top for I, c in f.coeffs.items()})
    else:
        logger.warning("uniform f still exceeds unit averages after the clamp rounds")
    return f


def adapted_g(pair: MeasurePair, S_family: Sequence[DyadicInterval], rng: np.random.Generator) -> HaarCoefficients:
    """Mean-zero g with no Haar coefficient inside any S."""
    system = haar_system(pair.w)
    coeffs = {J: float(rng.standard_normal()) for J in system.support
              if not any(S.contains(J) for S in S_family)}
    return HaarCoefficients(pair.w, 0.0, coeffs)


def random_coefficients(nu: AtomicMeasure, rng: np.random.Generator) -> HaarCoefficients:
    """Mean-zero function with independent Gaussian Haar coefficients."""
    system = haar_system(nu)
    return HaarCoefficients.from_vector(nu, rng.standard_normal(len(system)))

"""Atomic measures on [0,1), Poisson integrals and truncated Hilbert sums.

Every atom sits at the center of a depth-K cell, x = (2k+1)/2^(K+1), so no
atom ever lies on the endpoint of a dyadic interval of scale <= K.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np

from shared.entities.dyadic import DyadicInterval, GridConfig
from shared.errors import MeasureError
from shared.utils.config_loader import measure_cfg

logger = logging.getLogger(__name__)


def cell_center(k: int, K: int) -> float:
    return (2 * k + 1) * 2.0 ** -(K + 1)


@dataclass(frozen=True)
class AtomicMeasure:
    """Finite sum of point masses at depth-K cell centers.

    Atoms are stored as parallel tuples sorted by cell index; positions and
    weights are exposed as numpy arrays for the batch scans.
    """
    K: int
    cells: Tuple[int, ...] = ()
    masses: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.K < 0:
            raise MeasureError(f"measure depth K={self.K} is negative")
        if len(self.cells) != len(self.masses):
            raise MeasureError("cells and masses differ in length")
        limit = 1 << self.K
        previous = -1
        for k, m in zip(self.cells, self.masses):
            if not 0 <= k < limit:
                raise MeasureError(f"cell index k={k} outside [0, 2^{self.K})")
            if k <= previous:
                raise MeasureError(f"atom positions not strictly increasing at k={k}")
            if not (math.isfinite(m) and m > 0.0):
                raise MeasureError(f"atom at k={k} has non-positive or non-finite mass {m}")
            previous = k

    @classmethod
    def from_atoms(cls, K: int, atoms: Iterable[Tuple[int, float]]) -> 'AtomicMeasure':
        """Build from (k, mass) pairs in any order; repeated cells are summed."""
        merged: Dict[int, float] = {}
        for k, m in atoms:
            merged[int(k)] = merged.get(int(k), 0.0) + float(m)
        cells = tuple(sorted(merged))
        return cls(K, cells, tuple(merged[k] for k in cells))

    @classmethod
    def empty(cls, K: int) -> 'AtomicMeasure':
        return cls(K)

    def __len__(self):
        return len(self.cells)

    @cached_property
    def positions(self) -> np.ndarray:
        return (2.0 * np.asarray(self.cells, dtype=float) + 1.0) * 2.0 ** -(self.K + 1)

    @cached_property
    def weights(self) -> np.ndarray:
        return np.asarray(self.masses, dtype=float)

    @property
    def total(self) -> float:
        return math.fsum(self.masses)

    def atom_slice(self, I: DyadicInterval) -> slice:
        """Index range of the atoms lying in I."""
        lo = int(np.searchsorted(self.positions, I.left, side='left'))
        hi = int(np.searchsorted(self.positions, I.right, side='left'))
        return slice(lo, hi)

    def restrict(self, I: DyadicInterval) -> 'AtomicMeasure':
        s = self.atom_slice(I)
        return AtomicMeasure(self.K, self.cells[s], self.masses[s])

    def restrict_outside(self, I: DyadicInterval) -> 'AtomicMeasure':
        s = self.atom_slice(I)
        return AtomicMeasure(self.K, self.cells[:s.start] + self.cells[s.stop:],
                             self.masses[:s.start] + self.masses[s.stop:])

    def merge(self, other: 'AtomicMeasure') -> 'AtomicMeasure':
        if other.K != self.K:
            raise MeasureError(f"cannot merge measures of depth {self.K} and {other.K}")
        return AtomicMeasure.from_atoms(self.K, list(zip(self.cells, self.masses)) + list(zip(other.cells, other.masses)))

    def scaled(self, c: float) -> 'AtomicMeasure':
        if not c > 0.0:
            raise MeasureError(f"scale factor {c} must be positive")
        return AtomicMeasure(self.K, self.cells, tuple(c * m for m in self.masses))

    def reflected(self) -> 'AtomicMeasure':
        """Image under x -> 1 - x."""
        top = (1 << self.K) - 1
        return AtomicMeasure(self.K, tuple(top - k for k in reversed(self.cells)), tuple(reversed(self.masses)))

    def to_dict(self) -> Dict[str, Any]:
        return {'K': self.K, 'atoms': [{'k': k, 'mass': m} for k, m in zip(self.cells, self.masses)]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'AtomicMeasure':
        if not isinstance(data, dict) or 'K' not in data or 'atoms' not in data:
            raise MeasureError("measure record needs fields 'K' and 'atoms'")
        atoms = []
        for position, atom in enumerate(data['atoms']):
            try:
                k, m = atom['k'], atom['mass']
            except (KeyError, TypeError):
                raise MeasureError(f"atoms[{position}] needs fields 'k' and 'mass'") from None
            if isinstance(k, bool) or not isinstance(k, int):
                raise MeasureError(f"atoms[{position}].k must be an integer, got {k!r}")
            atoms.append((k, float(m)))
        cells = tuple(k for k, _ in atoms)
        return cls(int(data['K']), cells, tuple(m for _, m in atoms))


@dataclass(frozen=True)
class TruncationWindow:
    """The kernel window eps < |x - y| < delta."""
    eps: float
    delta: float

    def __post_init__(self):
        if not 0.0 < self.eps < self.delta:
            raise MeasureError(f"truncation window needs 0 < eps < delta, got ({self.eps}, {self.delta})")

    @classmethod
    def default_for(cls, pair: 'MeasurePair') -> 'TruncationWindow':
        """Window that keeps every sigma/w interaction of the pair."""
        window = measure_cfg['window']
        gap = min_gap(pair.sigma, pair.w)
        if gap is None:
            gap = 2.0 ** -pair.cfg.K
        return cls(eps=window['eps_gap_fraction'] * gap, delta=float(window['delta']))

    def keeps(self, distance: float) -> bool:
        return self.eps < abs(distance) < self.delta

    def to_dict(self) -> Dict[str, float]:
        return {'eps': self.eps, 'delta': self.delta}


@dataclass(frozen=True)
class MeasurePair:
    """The weights (sigma, w) on a common grid, with no common point masses."""
    sigma: AtomicMeasure
    w: AtomicMeasure
    cfg: GridConfig = field(default_factory=GridConfig.from_config)

    def __post_init__(self):
        for name, nu in (('sigma', self.sigma), ('w', self.w)):
            if nu.K != self.cfg.K:
                raise MeasureError(f"{name} lives at depth {nu.K}, grid depth is {self.cfg.K}")
        common = set(self.sigma.cells) & set(self.w.cells)
        if common:
            raise MeasureError(f"sigma and w share atoms at cells {sorted(common)[:5]}")

    def reflected(self) -> 'MeasurePair':
        return MeasurePair(self.sigma.reflected(), self.w.reflected(), self.cfg)

    def swapped(self) -> 'MeasurePair':
        """The dual pair (w, sigma)."""
        return MeasurePair(self.w, self.sigma, self.cfg)

    def to_dict(self) -> Dict[str, Any]:
        return {'grid': self.cfg.to_dict(), 'sigma': self.sigma.to_dict(), 'w': self.w.to_dict()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MeasurePair':
        for key in ('grid', 'sigma', 'w'):
            if key not in data:
                raise MeasureError(f"pair record missing field '{key}'")
        grid = data['grid']
        try:
            cfg = GridConfig(K=int(grid['K']), r=int(grid['r']), eps=float(grid['eps']))
        except (KeyError, TypeError) as e:
            raise MeasureError(f"grid record is malformed: {e}") from None
        return cls(AtomicMeasure.from_dict(data['sigma']), AtomicMeasure.from_dict(data['w']), cfg)


def min_gap(a: AtomicMeasure, b: AtomicMeasure) -> Optional[float]:
    """Smallest distance between an atom of a and an atom of b."""
    if len(a) == 0 or len(b) == 0:
        return None
    idx = np.searchsorted(a.positions, b.positions)
    best = math.inf
    for side in (idx - 1, idx):
        ok = (side >= 0) & (side < len(a))
        if ok.any():
            best = min(best, float(np.min(np.abs(a.positions[side[ok]] - b.positions[ok]))))
    return best


def mass(nu: AtomicMeasure, I: DyadicInterval) -> float:
    return math.fsum(nu.masses[nu.atom_slice(I)])


def interval_distance(x: float, left: float, right: float) -> float:
    """Distance from x to the closed interval [left, right]."""
    return max(left - x, x - right, 0.0)


def poisson(nu: AtomicMeasure, I: DyadicInterval) -> float:
    """P(nu, I) = sum m |I| / (|I|^2 + dist(x, I)^2)."""
    L = I.length
    terms = (m * L / (L * L + interval_distance(x, I.left, I.right) ** 2)
             for x, m in zip(nu.positions.tolist(), nu.masses))
    return math.fsum(terms)


def poisson_many(nu: AtomicMeasure, lefts: np.ndarray, rights: np.ndarray) -> np.ndarray:
    """Vectorized Poisson integrals over arbitrary intervals [lefts[i], rights[i])."""
    lefts = np.asarray(lefts, dtype=float)
    rights = np.asarray(rights, dtype=float)
    if len(nu) == 0:
        return np.zeros(lefts.shape)
    L = (rights - lefts)[:, None]
    x = nu.positions[None, :]
    d = np.maximum(np.maximum(lefts[:, None] - x, x - rights[:, None]), 0.0)
    return (nu.weights[None, :] * L / (L * L + d * d)).sum(axis=1)


def poisson_hole(pair: MeasurePair, K_hole: DyadicInterval, target: DyadicInterval) -> float:
    """P(sigma restricted to I0 minus K_hole, target)."""
    if not K_hole.contains(target):
        raise MeasureError(f"target {target} is not inside the hole {K_hole}")
    return poisson(pair.sigma.restrict_outside(K_hole), target)


def poisson_comparability_bounds(cfg: GridConfig) -> Tuple[float, float]:
    """Per-atom bounds on [P(nu,J)/|J|] / [P(nu,L)/|L|] for J in L, L deeply inside K, nu off K.

    The atoms of nu sit at distance at least s|L| from L with s = 2^(r(1-eps)).
    """
    s = 2.0 ** (cfg.r * (1.0 - cfg.eps))
    return s * s / (1.0 + (s + 1.0) ** 2), 1.0 + 1.0 / (s * s)


def kernel_matrix(targets: np.ndarray, sources: np.ndarray, win: TruncationWindow) -> np.ndarray:
    """G[i, j] = 1/(sources[j] - targets[i]) inside the window, 0 outside."""
    diff = np.asarray(sources, dtype=float)[None, :] - np.asarray(targets, dtype=float)[:, None]
    keep = (np.abs(diff) > win.eps) & (np.abs(diff) < win.delta)
    out = np.zeros(diff.shape)
    np.divide(1.0, diff, out=out, where=keep)
    return out


def hilbert_truncated(nu: AtomicMeasure, x: float, win: TruncationWindow) -> float:
    """H_{eps,delta} nu(x) = sum over eps < |x - y| < delta of m/(y - x)."""
    terms: List[float] = []
    for y, m in zip(nu.positions.tolist(), nu.masses):
        if y == x:
            raise MeasureError(f"Hilbert sum evaluated at an atom x={x}")
        if win.keeps(y - x):
            terms.append(m / (y - x))
    return math.fsum(terms)


def hilbert_field(f: np.ndarray, pair: MeasurePair, indicator: Optional[DyadicInterval],
                  win: TruncationWindow) -> np.ndarray:
    """H(1_I f sigma) at every w-atom; indicator=None means no restriction."""
    f = np.asarray(f, dtype=float)
    if f.shape != (len(pair.sigma),):
        raise MeasureError(f"f has shape {f.shape}, sigma has {len(pair.sigma)} atoms")
    source = f * pair.sigma.weights
    if indicator is not None:
        mask = np.zeros(len(pair.sigma))
        mask[pair.sigma.atom_slice(indicator)] = 1.0
        source = source * mask
    G = kernel_matrix(pair.w.positions, pair.sigma.positions, win)
    return np.array([math.fsum(row) for row in (G * source[None, :]).tolist()])

"""Weighted Haar systems on atomic measures.

For a measure nu and a dyadic interval J whose two children both carry mass,

    h_J = sqrt(nu(J-) nu(J+) / nu(J)) * (1_{J+}/nu(J+) - 1_{J-}/nu(J-)),

positive on the right child. Intervals with an empty child are degenerate and
carry no Haar function. A measure with M atoms has exactly M - 1 Haar
functions, which together with the constant span L^2(nu).
"""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, Iterable, List, Optional

import numpy as np

from shared.entities.dyadic import DyadicInterval, GridConfig, child_containing, deeply_contained
from shared.entities.measure import AtomicMeasure
from shared.errors import HaarError

logger = logging.getLogger(__name__)


class HaarSystem:
    """Dense orthonormal Haar basis of a measure.

    Rows of `matrix` are the Haar functions evaluated on the atoms, in
    (scale, index) order of `support`. Orthonormality reads
    matrix @ diag(weights) @ matrix.T == identity.
    """

    def __init__(self, nu: AtomicMeasure):
        self.nu = nu
        self.support: List[DyadicInterval] = self._find_support(nu)
        self.index: Dict[DyadicInterval, int] = {I: row for row, I in enumerate(self.support)}
        size = len(self.support)
        self.matrix = np.zeros((size, len(nu)))
        self.left_value = np.zeros(size)
        self.right_value = np.zeros(size)
        for row, I in enumerate(self.support):
            left, _ = I.halves()
            s, sl = nu.atom_slice(I), nu.atom_slice(left)
            m_left = math.fsum(nu.masses[s.start:sl.stop])
            m_right = math.fsum(nu.masses[sl.stop:s.stop])
            m_total = m_left + m_right
            self.left_value[row] = -math.sqrt(m_right / (m_total * m_left))
            self.right_value[row] = math.sqrt(m_left / (m_total * m_right))
            self.matrix[row, s.start:sl.stop] = self.left_value[row]
            self.matrix[row, sl.stop:s.stop] = self.right_value[row]
        self.x_coeffs = self.matrix @ (nu.weights * nu.positions)
        logger.debug(f"Haar system with {size} functions on {len(nu)} atoms")

    @staticmethod
    def _find_support(nu: AtomicMeasure) -> List[DyadicInterval]:
        found = []
        stack = [DyadicInterval.unit()]
        while stack:
            I = stack.pop()
            s = nu.atom_slice(I)
            if s.stop - s.start < 2 or I.n >= nu.K:
                continue
            left, right = I.halves()
            split = nu.atom_slice(left).stop
            if s.start < split < s.stop:
                found.append(I)
            stack.extend((left, right))
        return sorted(found)

    def __len__(self):
        return len(self.support)

    def __contains__(self, I: DyadicInterval) -> bool:
        return I in self.index

    def value_on_child(self, I: DyadicInterval, child: DyadicInterval) -> float:
        """The constant value of h_I on one of its children; 0 when I is degenerate."""
        row = self.index.get(I)
        if row is None:
            return 0.0
        if child.parent() != I:
            raise HaarError(f"{child} is not a child of {I}")
        return float(self.right_value[row] if child.j & 1 else self.left_value[row])

    def rows(self, intervals: Iterable[DyadicInterval]) -> List[int]:
        return [self.index[I] for I in intervals if I in self.index]


@lru_cache(maxsize=128)
def haar_system(nu: AtomicMeasure) -> HaarSystem:
    return HaarSystem(nu)


@dataclass
class HaarCoefficients:
    """A function in L^2(nu) as its global mean plus Haar coefficients."""
    base: AtomicMeasure
    mean: float = 0.0
    coeffs: Dict[DyadicInterval, float] = field(default_factory=dict)

    def vector(self, system: Optional[HaarSystem] = None) -> np.ndarray:
        """Coefficients in the row order of the Haar system."""
        system = system or haar_system(self.base)
        out = np.zeros(len(system))
        for I, c in self.coeffs.items():
            if I in system.index:
                out[system.index[I]] = c
        return out

    @classmethod
    def from_vector(cls, nu: AtomicMeasure, vec: np.ndarray, mean: float = 0.0) -> 'HaarCoefficients':
        system = haar_system(nu)
        return cls(nu, mean, {I: float(c) for I, c in zip(system.support, vec) if c != 0.0})

    def norm_sq(self) -> float:
        """||f||^2 in L^2(nu), by Parseval."""
        return self.mean ** 2 * self.base.total + math.fsum(c * c for c in self.coeffs.values())

    def to_dict(self) -> Dict[str, Any]:
        return {
            'mean': self.mean,
            'coeffs': [dict(I.to_dict(), value=c) for I, c in sorted(self.coeffs.items())],
        }


def haar_function(nu: AtomicMeasure, J: DyadicInterval) -> np.ndarray:
    """Values of h^nu_J on the atoms of nu."""
    system = haar_system(nu)
    if J not in system:
        raise HaarError(f"{J} is degenerate for this measure (a child has no mass)")
    return system.matrix[system.index[J]].copy()


def expand(f: np.ndarray, nu: AtomicMeasure) -> HaarCoefficients:
    """Haar expansion of f (values on the atoms of nu) over [0,1)."""
    f = np.asarray(f, dtype=float)
    if f.shape != (len(nu),):
        raise HaarError(f"function has shape {f.shape}, measure has {len(nu)} atoms")
    if len(nu) == 0:
        return HaarCoefficients(nu)
    system = haar_system(nu)
    weighted = nu.weights * f
    mean = math.fsum(weighted.tolist()) / nu.total
    return HaarCoefficients.from_vector(nu, system.matrix @ weighted, mean)


def reconstruct(c: HaarCoefficients) -> np.ndarray:
    system = haar_system(c.base)
    return c.mean + system.matrix.T @ c.vector(system)


def average(f: np.ndarray, nu: AtomicMeasure, I: DyadicInterval) -> float:
    """E^nu_I f."""
    s = nu.atom_slice(I)
    total = math.fsum(nu.masses[s])
    if total == 0.0:
        raise HaarError(f"average over {I}, which carries no mass")
    return math.fsum((np.asarray(f, dtype=float)[s] * nu.weights[s]).tolist()) / total


def mart_diff(f: np.ndarray, nu: AtomicMeasure, I: DyadicInterval) -> np.ndarray:
    """Delta^nu_I f = sum over children c of (E_c f) 1_c - (E_I f) 1_I."""
    out = np.zeros(len(nu))
    s = nu.atom_slice(I)
    if s.stop == s.start or I.n >= nu.K:
        return out
    parent_avg = average(f, nu, I)
    for c in I.halves():
        sc = nu.atom_slice(c)
        if sc.stop > sc.start:
            out[sc] = average(f, nu, c) - parent_avg
    return out


def coefficient_x(nu: AtomicMeasure, J: DyadicInterval) -> float:
    """<x, h^nu_J>_nu, zero for degenerate J."""
    system = haar_system(nu)
    row = system.index.get(J)
    return 0.0 if row is None else float(system.x_coeffs[row])


def energy(nu: AtomicMeasure, I: DyadicInterval) -> float:
    """E(nu, I): standard deviation of position under nu restricted to I, over |I|."""
    s = nu.atom_slice(I)
    total = math.fsum(nu.masses[s])
    if total == 0.0:
        return 0.0
    x, m = nu.positions[s], nu.weights[s]
    center = math.fsum((m * x).tolist()) / total
    spread = math.fsum((m * ((x - center) / I.length) ** 2).tolist())
    return math.sqrt(spread / total)


def energy_haar_sum(nu: AtomicMeasure, I: DyadicInterval) -> float:
    """Sum over Haar supports J inside I of <x, h_J>^2."""
    system = haar_system(nu)
    return math.fsum(system.x_coeffs[row] ** 2 for J, row in system.index.items() if I.contains(J))


def epsilon_J(f: HaarCoefficients, J: DyadicInterval, i0: DyadicInterval, cfg: GridConfig) -> float:
    """Sum over I with J deeply inside I, I inside i0, of E^sigma_J Delta^sigma_I f."""
    system = haar_system(f.base)
    terms = []
    for I in J.ancestors():
        if not i0.contains(I):
            break
        if not deeply_contained(J, I, cfg):
            continue
        coeff = f.coeffs.get(I, 0.0)
        if coeff:
            terms.append(coeff * system.value_on_child(I, child_containing(I, J)))
    return math.fsum(terms)


def project(g: HaarCoefficients, intervals: Iterable[DyadicInterval]) -> HaarCoefficients:
    """Keep only the coefficients on the given intervals; the mean is dropped."""
    keep = set(intervals)
    return HaarCoefficients(g.base, 0.0, {I: c for I, c in g.coeffs.items() if I in keep})

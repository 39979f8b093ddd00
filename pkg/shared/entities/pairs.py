"""Pairs of dyadic intervals and the collections the stopping forms run over."""

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence

from shared.entities.dyadic import DyadicInterval, GridConfig, child_containing, deeply_contained, is_good
from shared.entities.measure import AtomicMeasure, mass
from shared.errors import AdmissibilityError


@dataclass(frozen=True, order=True)
class Pair:
    """(Q1, Q2) with Q2 deeply inside Q1."""
    q1: DyadicInterval
    q2: DyadicInterval

    @property
    def tilde_q1(self) -> DyadicInterval:
        """The child of Q1 containing Q2."""
        return child_containing(self.q1, self.q2)

    @property
    def ratio_exponent(self) -> int:
        """u with |Q1| = 2^u |Q2|."""
        return self.q2.n - self.q1.n

    def to_dict(self) -> Dict[str, Any]:
        return {'q1': self.q1.to_dict(), 'q2': self.q2.to_dict()}


class PairCollection:
    """An immutable set of pairs under a root interval i0, indexed by Q2 and by tilde Q1."""

    def __init__(self, i0: DyadicInterval, pairs: Iterable[Pair]):
        self.i0 = i0
        self.pairs: tuple = tuple(sorted(set(pairs)))
        self.by_q2: Dict[DyadicInterval, List[Pair]] = defaultdict(list)
        self.by_tilde: Dict[DyadicInterval, List[Pair]] = defaultdict(list)
        for p in self.pairs:
            self.by_q2[p.q2].append(p)
            self.by_tilde[p.tilde_q1].append(p)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self) -> Iterator[Pair]:
        return iter(self.pairs)

    def __contains__(self, p: Pair) -> bool:
        return p in self.by_q2.get(p.q2, ())

    def __eq__(self, other):
        return isinstance(other, PairCollection) and self.i0 == other.i0 and self.pairs == other.pairs

    def __hash__(self):
        return hash((self.i0, self.pairs))

    @property
    def q1s(self) -> List[DyadicInterval]:
        return sorted({p.q1 for p in self.pairs})

    @property
    def q2s(self) -> List[DyadicInterval]:
        return sorted(self.by_q2)

    @property
    def tildes(self) -> List[DyadicInterval]:
        return sorted(self.by_tilde)

    def k_family(self) -> List[DyadicInterval]:
        """tilde Q1 together with Q2, the intervals the size is taken over."""
        return sorted(set(self.by_tilde) | set(self.by_q2))

    def subset(self, pairs: Iterable[Pair]) -> 'PairCollection':
        return PairCollection(self.i0, pairs)

    def admissibility_violations(self, cfg: GridConfig,
                                 energy_family: Sequence[DyadicInterval] = ()) -> List[str]:
        """Every way the collection fails to be admissible, as readable messages."""
        problems = []
        for p in self.pairs:
            if not self.i0.contains(p.q1):
                problems.append(f"{p.q1} is not inside i0={self.i0}")
            if not is_good(p.q1, cfg):
                problems.append(f"Q1={p.q1} is not good")
            if not deeply_contained(p.q2, p.q1, cfg):
                problems.append(f"Q2={p.q2} is not deeply contained in Q1={p.q1}")
        for q2, group in self.by_q2.items():
            levels = {p.q1.n for p in group}
            for n in range(min(levels), max(levels) + 1):
                I = q2.ancestor(n)
                if n not in levels and is_good(I, cfg):
                    problems.append(f"convexity: good {I} lies between Q1 intervals of Q2={q2} but is missing")
        for K in self.k_family():
            for F in energy_family:
                if F.contains(K):
                    problems.append(f"{K} lies inside energy stopping interval {F}")
                    break
        return problems

    def validate(self, cfg: GridConfig, energy_family: Sequence[DyadicInterval] = ()) -> 'PairCollection':
        problems = self.admissibility_violations(cfg, energy_family)
        if problems:
            raise AdmissibilityError(f"{len(problems)} admissibility violations, first: {problems[0]}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {'i0': self.i0.to_dict(), 'pairs': [p.to_dict() for p in self.pairs]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PairCollection':
        pairs = [Pair(DyadicInterval.from_dict(p['q1']), DyadicInterval.from_dict(p['q2'])) for p in data['pairs']]
        return cls(DyadicInterval.from_dict(data['i0']), pairs)


@dataclass
class StoppingData:
    """A stopping tree rooted at i0 and the averages alpha that produced it."""
    root: DyadicInterval
    alpha: Dict[DyadicInterval, float] = field(default_factory=dict)
    parent: Dict[DyadicInterval, Optional[DyadicInterval]] = field(default_factory=dict)

    @property
    def tree(self) -> List[DyadicInterval]:
        return sorted(self.alpha)

    def pi(self, I: DyadicInterval) -> Optional[DyadicInterval]:
        """The minimal stopping interval containing I, or None outside the root."""
        if not self.root.contains(I):
            return None
        for n in range(I.n, self.root.n - 1, -1):
            candidate = I.ancestor(n)
            if candidate in self.alpha:
                return candidate
        return None

    def children_of(self, F: DyadicInterval) -> List[DyadicInterval]:
        return sorted(G for G, P in self.parent.items() if P == F)

    def carleson_sum(self, sigma: AtomicMeasure) -> float:
        """Sum over F of alpha(F)^2 sigma(F)."""
        return math.fsum(a * a * mass(sigma, F) for F, a in self.alpha.items())

    def growth_violations(self, factor: float) -> List[str]:
        return [f"alpha({F})={self.alpha[F]} does not exceed {factor}*alpha({P})"
                for F, P in self.parent.items() if P is not None and not self.alpha[F] > factor * self.alpha[P]]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'root': self.root.to_dict(),
            'tree': [dict(F.to_dict(), alpha=self.alpha[F]) for F in self.tree],
        }

"""Dyadic intervals of [0,1), goodness and deep containment."""

from dataclasses import dataclass, asdict
from functools import lru_cache
from typing import Any, Dict, Iterator, List, Optional, Tuple

from shared.errors import GridError
from shared.utils.config_loader import grid_cfg


@dataclass(frozen=True, order=True)
class DyadicInterval:
    """The half-open interval [j*2^-n, (j+1)*2^-n).

    Ordering is (scale, index) lexicographic, which is the tie-break used by
    every minimality/maximality scan.
    """
    n: int
    j: int

    def __post_init__(self):
        if self.n < 0:
            raise GridError(f"negative scale level n={self.n}")
        if not 0 <= self.j < (1 << self.n):
            raise GridError(f"index j={self.j} outside [0, 2^{self.n})")

    @classmethod
    def unit(cls) -> 'DyadicInterval':
        return cls(0, 0)

    @property
    def length(self) -> float:
        return 2.0 ** -self.n

    @property
    def left(self) -> float:
        return self.j * 2.0 ** -self.n

    @property
    def right(self) -> float:
        return (self.j + 1) * 2.0 ** -self.n

    @property
    def midpoint(self) -> float:
        return (2 * self.j + 1) * 2.0 ** -(self.n + 1)

    def halves(self) -> Tuple['DyadicInterval', 'DyadicInterval']:
        """Left and right children, with no depth limit."""
        return DyadicInterval(self.n + 1, 2 * self.j), DyadicInterval(self.n + 1, 2 * self.j + 1)

    def parent(self) -> 'DyadicInterval':
        if self.n == 0:
            raise GridError("[0,1) has no parent")
        return DyadicInterval(self.n - 1, self.j >> 1)

    def ancestor(self, n: int) -> 'DyadicInterval':
        """The ancestor at scale level n <= self.n."""
        if not 0 <= n <= self.n:
            raise GridError(f"no ancestor of {self} at level {n}")
        return DyadicInterval(n, self.j >> (self.n - n))

    def ancestors(self) -> Iterator['DyadicInterval']:
        """Strict ancestors from the parent up to [0,1)."""
        for n in range(self.n - 1, -1, -1):
            yield self.ancestor(n)

    def contains(self, other: 'DyadicInterval') -> bool:
        """other is a subset of self (equality included)."""
        return other.n >= self.n and (other.j >> (other.n - self.n)) == self.j

    def strictly_contains(self, other: 'DyadicInterval') -> bool:
        return other.n > self.n and self.contains(other)

    def contains_point(self, x: float) -> bool:
        return self.left <= x < self.right

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DyadicInterval':
        try:
            return cls(int(data['n']), int(data['j']))
        except KeyError as e:
            raise GridError(f"interval record missing field {e}") from None

    def __str__(self):
        return f"[{self.j}/2^{self.n}, {self.j + 1}/2^{self.n})"


@dataclass(frozen=True)
class GridConfig:
    """Depth and goodness parameters of the grid."""
    K: int
    r: int
    eps: float

    def __post_init__(self):
        if self.r < 1:
            raise GridError(f"goodness exponent r={self.r} must be >= 1")
        if not 0.0 < self.eps < 0.5:
            raise GridError(f"goodness exponent eps={self.eps} must lie in (0, 1/2)")
        if self.K < self.r + 2:
            raise GridError(f"depth K={self.K} must be at least r + 2 = {self.r + 2}")

    @classmethod
    def from_config(cls, overrides: Optional[Dict[str, Any]] = None) -> 'GridConfig':
        values = {'K': grid_cfg['K'], 'r': grid_cfg['r'], 'eps': grid_cfg['eps']}
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls(K=int(values['K']), r=int(values['r']), eps=float(values['eps']))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def children(I: DyadicInterval, cfg: GridConfig) -> Tuple[DyadicInterval, DyadicInterval]:
    """Left and right children of I, refusing to go below depth K."""
    if I.n >= cfg.K:
        raise GridError(f"{I} is at the finest scale K={cfg.K}")
    return I.halves()


def child_containing(I: DyadicInterval, J: DyadicInterval) -> DyadicInterval:
    """The child of I that contains J (written I_J)."""
    if not I.strictly_contains(J):
        raise GridError(f"{J} is not a strict subinterval of {I}")
    return J.ancestor(I.n + 1)


def boundary_distance(J: DyadicInterval, I: DyadicInterval) -> float:
    """Distance from J to the endpoints of an interval I containing it."""
    return min(J.left - I.left, I.right - J.right)


def separation_threshold(J: DyadicInterval, I: DyadicInterval, eps: float) -> float:
    return J.length ** eps * I.length ** (1.0 - eps)


@lru_cache(maxsize=None)
def is_good(J: DyadicInterval, cfg: GridConfig) -> bool:
    """True iff J is separated from the boundary of every large strict superinterval.

    Superintervals I~ with |I~| >= 2^(r-1)|J| must satisfy
    dist(J, boundary of I~) >= |J|^eps |I~|^(1-eps); equality passes.
    """
    for I in J.ancestors():
        if J.n - I.n < cfg.r - 1:
            continue
        if boundary_distance(J, I) < separation_threshold(J, I, cfg.eps):
            return False
    return True


def deeply_contained(J: DyadicInterval, I: DyadicInterval, cfg: GridConfig) -> bool:
    """J ⋐ I: J inside I, 2^r|J| <= |I|, and J good."""
    return I.contains(J) and J.n - I.n >= cfg.r and is_good(J, cfg)


def intervals_at(n: int) -> List[DyadicInterval]:
    return [DyadicInterval(n, j) for j in range(1 << n)]


def all_intervals(depth: int, root: Optional[DyadicInterval] = None) -> List[DyadicInterval]:
    """Every dyadic subinterval of root down to scale level depth, in (n, j) order."""
    root = root or DyadicInterval.unit()
    out = []
    for n in range(root.n, depth + 1):
        shift = n - root.n
        base = root.j << shift
        out.extend(DyadicInterval(n, base + k) for k in range(1 << shift))
    return out


def interval_containing(x: float, n: int) -> DyadicInterval:
    if not 0.0 <= x < 1.0:
        raise GridError(f"point {x} outside [0,1)")
    return DyadicInterval(n, int(x * (1 << n)))

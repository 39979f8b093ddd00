"""The size lemma as an algorithm.

A node takes an admissible pair collection Q with tau = size(Q), selects the
interval family L from tent thresholds, partitions Q into small and large
classes by how tilde Q1 and Q2 sit relative to L, and recurses on the small
classes. Every structural fact the argument relies on is checked per node and
collected in `failures`; facts the discrete grid cannot guarantee are counted
in `notes`.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import chain
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

from engine.constants import compute_constants
from engine.forms import FormsEngine, orthogonality_violations
from shared.entities.dyadic import DyadicInterval, GridConfig, deeply_contained
from shared.entities.haar import energy
from shared.entities.measure import AtomicMeasure, MeasurePair, mass, poisson
from shared.entities.pairs import Pair, PairCollection
from shared.errors import AdmissibilityError, DecompositionError, InputError
from shared.utils.config_loader import calibration_cfg, forms_cfg, sizelemma_cfg

logger = logging.getLogger(__name__)

SL_CFG = sizelemma_cfg
ONE_PLUS_SQRT2 = 1.0 + math.sqrt(2.0)


# -- energy stopping ---------------------------------------------------------

@dataclass
class EnergyStopping:
    """Maximal intervals where the energy of w is large against sigma."""
    root: DyadicInterval
    family: List[DyadicInterval]
    c0: float
    h_const: float
    alt_family: List[DyadicInterval] = field(default_factory=list)

    def covered_mass(self, sigma: AtomicMeasure, alternative: bool = False) -> float:
        return math.fsum(mass(sigma, F) for F in (self.alt_family if alternative else self.family))

    def mass_fraction(self, sigma: AtomicMeasure) -> float:
        total = mass(sigma, self.root)
        return self.covered_mass(sigma) / total if total > 0.0 else 0.0

    def to_dict(self, sigma: Optional[AtomicMeasure] = None) -> Dict[str, Any]:
        data = {
            'root': self.root.to_dict(),
            'c0': self.c0,
            'h_const': self.h_const,
            'family': [F.to_dict() for F in self.family],
            'alt_family': [F.to_dict() for F in self.alt_family],
        }
        if sigma is not None:
            data['mass_fraction'] = self.mass_fraction(sigma)
        return data


def energy_violators(pair: MeasurePair, i0: DyadicInterval, c0: float, h_const: float,
                     reading: str = 'restriction') -> List[DyadicInterval]:
    """Maximal I strictly inside i0 with P(sigma_i0, I)^2 E(w, I)^2 w(I) > factor * c0 * H^2 * sigma(I).

    reading='complement' replaces sigma_i0 with sigma restricted to i0 - I.
    """
    if reading not in ('restriction', 'complement'):
        raise ValueError(f"unknown energy reading {reading!r}")
    threshold = SL_CFG['energy_factor'] * c0 * h_const * h_const
    sigma_i0 = pair.sigma.restrict(i0)
    family = []
    stack = list(reversed(i0.halves())) if i0.n < pair.cfg.K else []
    while stack:
        I = stack.pop()
        s = pair.w.atom_slice(I)
        # fewer than two w atoms: zero energy here and below
        if s.stop - s.start < 2:
            continue
        source = sigma_i0 if reading == 'restriction' else sigma_i0.restrict_outside(I)
        P = poisson(source, I)
        lhs = P * P * energy(pair.w, I) ** 2 * mass(pair.w, I)
        if lhs > threshold * mass(pair.sigma, I):
            family.append(I)
        elif I.n < pair.cfg.K:
            stack.extend(reversed(I.halves()))
    return sorted(family)


def energy_stopping(pair: MeasurePair, i0: Optional[DyadicInterval] = None, c0: Optional[float] = None,
                    h_const: Optional[float] = None) -> EnergyStopping:
    i0 = i0 or DyadicInterval.unit()
    c0 = calibration_cfg['c0'] if c0 is None else c0
    if h_const is None:
        h_const = compute_constants(pair).h_const
    stopping = EnergyStopping(
        root=i0,
        family=energy_violators(pair, i0, c0, h_const),
        c0=c0,
        h_const=h_const,
        alt_family=energy_violators(pair, i0, c0, h_const, reading='complement'),
    )
    logger.info(f"energy stopping: {len(stopping.family)} intervals "
                f"({len(stopping.alt_family)} under the complement reading), c0={c0}")
    return stopping


# -- tents and the L collection ---------------------------------------------

def tent_measure(Q: PairCollection, eng: FormsEngine) -> Dict[DyadicInterval, float]:
    """mu(T_L) = sum over J in Q2 with J inside L of <x, h_J>^2, for every L inside i0 with a nonzero value."""
    contributions: Dict[DyadicInterval, List[float]] = defaultdict(list)
    for J in Q.q2s:
        value = eng.x_coeff_sq(J)
        if value == 0.0:
            continue
        for I in chain((J,), J.ancestors()):
            if not Q.i0.contains(I):
                break
            contributions[I].append(value)
    return {I: math.fsum(values) for I, values in contributions.items()}


def minimal(intervals: Sequence[DyadicInterval]) -> List[DyadicInterval]:
    """Members that strictly contain no other member."""
    pool = sorted(set(intervals))
    return [I for I in pool if not any(I.strictly_contains(J) for J in pool)]


@dataclass
class LCollection:
    generation: Dict[DyadicInterval, int] = field(default_factory=dict)
    tents: Dict[DyadicInterval, float] = field(default_factory=dict)
    generations: int = 0

    def __len__(self):
        return len(self.generation)

    def __contains__(self, I: DyadicInterval) -> bool:
        return I in self.generation

    @property
    def members(self) -> List[DyadicInterval]:
        return sorted(self.generation)

    def tent(self, I: DyadicInterval) -> float:
        return self.tents.get(I, 0.0)

    def pi(self, K: DyadicInterval) -> Optional[DyadicInterval]:
        """The minimal member containing K, K itself included."""
        for I in chain((K,), K.ancestors()):
            if I in self.generation:
                return I
        return None

    def parent(self, L: DyadicInterval) -> Optional[DyadicInterval]:
        """The minimal member strictly containing L."""
        for I in L.ancestors():
            if I in self.generation:
                return I
        return None

    def chain(self, K: DyadicInterval) -> List[DyadicInterval]:
        """[pi K, pi^2 K, ...] up to a maximal member."""
        out = []
        current = self.pi(K)
        while current is not None:
            out.append(current)
            current = self.parent(current)
        return out

    def children_map(self) -> Dict[DyadicInterval, List[DyadicInterval]]:
        out: Dict[DyadicInterval, List[DyadicInterval]] = defaultdict(list)
        for L in self.members:
            P = self.parent(L)
            if P is not None:
                out[P].append(L)
        return out

    def children(self, L: DyadicInterval) -> List[DyadicInterval]:
        return [M for M in self.members if self.parent(M) == L]

    def maximal(self) -> List[DyadicInterval]:
        return [L for L in self.members if self.parent(L) is None]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'generations': self.generations,
            'members': [dict(L.to_dict(), generation=self.generation[L], tent=self.tent(L)) for L in self.members],
        }


def kdef_holds(K: DyadicInterval, eng: FormsEngine, tents: Dict[DyadicInterval, float], tau: float) -> bool:
    """P(sigma(I0 - K), K)^2 / |K|^2 * tent(K) >= fraction * tau^2 * sigma(K), for K with sigma(K) > 0."""
    sK = mass(eng.pair.sigma, K)
    if sK == 0.0:
        return False
    P = eng.hole_poisson(K)
    return P * P * tents.get(K, 0.0) / K.length ** 2 >= SL_CFG['kdef_fraction'] * tau * tau * sK


def build_L(Q: PairCollection, eng: FormsEngine, tau: Optional[float] = None) -> LCollection:
    """Initial members from the K threshold, then minimal stock intervals whose tent beats rho times the selected tents."""
    tau = eng.size(Q).value if tau is None else tau
    tents = tent_measure(Q, eng)
    family = Q.k_family()
    if not family or tau <= 0.0:
        return LCollection({}, tents)

    rho = SL_CFG['rho']
    initial = minimal([K for K in family if kdef_holds(K, eng, tents, tau)])
    generation = {K: 0 for K in initial}
    stock = [S for S in family if any(S.strictly_contains(L) for L in initial)]
    rounds = 0
    while stock:
        members = list(generation)

        def selected(S: DyadicInterval) -> float:
            inside = [L for L in members if S.strictly_contains(L)]
            top = [L for L in inside if not any(M.strictly_contains(L) for M in inside)]
            return math.fsum(tents.get(L, 0.0) for L in top)

        new = minimal([S for S in stock if tents.get(S, 0.0) >= rho * selected(S)])
        if not new:
            break
        rounds += 1
        for S in new:
            generation[S] = rounds
        stock = [S for S in stock if not any(L.contains(S) for L in generation)]
    logger.debug(f"L has {len(generation)} members after {rounds} generations")
    return LCollection(generation, tents, rounds)


def check_ddecay(ell: LCollection) -> Tuple[float, Optional[Tuple[DyadicInterval, int]]]:
    """max over (L, t) of [sum of tents of the t-fold L-descendants of L] / (rho^-t tent(L))."""
    rho = SL_CFG['rho']
    kids = ell.children_map()
    worst, witness = 0.0, None
    for L in ell.members:
        base = ell.tent(L)
        level, t = [L], 0
        while True:
            level = [C for P in level for C in kids.get(P, [])]
            if not level:
                break
            t += 1
            lhs = math.fsum(ell.tent(C) for C in level)
            if lhs == 0.0:
                ratio = 0.0
            elif base == 0.0:
                ratio = math.inf
            else:
                ratio = lhs / (rho ** -t * base)
            if ratio > worst:
                worst, witness = ratio, (L, t)
    return worst, witness


def ell_dot(ell: LCollection) -> str:
    """The L collection as a DOT graph, edges from L-parent to L-child."""
    def node(I: DyadicInterval) -> str:
        return f"n{I.n}_{I.j}"

    lines = ['digraph L {']
    for L in ell.members:
        lines.append(f'  {node(L)} [label="{L}\\ngen {ell.generation[L]}"];')
    for P, kids in sorted(ell.children_map().items()):
        for C in kids:
            lines.append(f'  {node(P)} -> {node(C)};')
    lines.append('}')
    return '\n'.join(lines) + '\n'


# -- partition ---------------------------------------------------------------

@dataclass
class Partition:
    """The small and large classes of one node.

    q_lt holds every Q_{L,t} (t >= 1); large2 splits those with t >= 2 into
    sub-classes 1, 2, 3.
    """
    i0: DyadicInterval
    q_lt: Dict[Tuple[DyadicInterval, int], List[Pair]] = field(default_factory=lambda: defaultdict(list))
    small1: Dict[DyadicInterval, List[Pair]] = field(default_factory=lambda: defaultdict(list))
    large1: Dict[DyadicInterval, List[Pair]] = field(default_factory=lambda: defaultdict(list))
    large2: Dict[Tuple[DyadicInterval, int, int], List[Pair]] = field(default_factory=lambda: defaultdict(list))
    small2: List[Pair] = field(default_factory=list)
    large3: List[Pair] = field(default_factory=list)
    large4: List[Pair] = field(default_factory=list)
    large5: List[Pair] = field(default_factory=list)
    failures: Dict[str, List[str]] = field(default_factory=lambda: defaultdict(list))
    notes: Dict[str, int] = field(default_factory=lambda: defaultdict(int))

    def collection(self, pairs: Sequence[Pair]) -> PairCollection:
        return PairCollection(self.i0, pairs)

    def leaves(self) -> Iterator[Tuple[str, PairCollection]]:
        """Every class of the partition with a stable label, in a fixed order."""
        for L, pairs in sorted(self.small1.items()):
            yield f"small1[{L.n},{L.j}]", self.collection(pairs)
        if self.small2:
            yield "small2", self.collection(self.small2)
        for L, pairs in sorted(self.large1.items()):
            yield f"large1[{L.n},{L.j}]", self.collection(pairs)
        for (L, t, sub), pairs in sorted(self.large2.items()):
            yield f"large2[{L.n},{L.j};t={t}].{sub}", self.collection(pairs)
        for name in ('large3', 'large4', 'large5'):
            pairs = getattr(self, name)
            if pairs:
                yield name, self.collection(pairs)

    def small_classes(self) -> List[Tuple[str, PairCollection]]:
        return [(name, Q) for name, Q in self.leaves() if name.startswith('small')]

    def counts(self) -> Dict[str, int]:
        return {name: len(Q) for name, Q in self.leaves()}


def partition(Q: PairCollection, ell: LCollection, cfg: GridConfig) -> Partition:
    """Assign every pair of Q to exactly one class."""
    part = Partition(Q.i0)
    for p in Q:
        tilde = p.tilde_q1
        q2_chain = ell.chain(p.q2)
        if not q2_chain:
            part.small2.append(p)
            continue
        top = ell.pi(tilde)
        if top is None:
            # tilde Q1 has no L-parent, so the maximal member over Q2 sits strictly inside tilde Q1
            star = q2_chain[-1]
            if deeply_contained(p.q2, star, cfg):
                part.large3.append(p)
            elif deeply_contained(star, tilde, cfg):
                part.large4.append(p)
            else:
                part.large5.append(p)
                if not cfg.r <= p.ratio_exponent <= 2 * cfg.r + 2:
                    part.notes['large5_ratio_outside_range'] += 1
            continue
        if top not in q2_chain:
            raise DecompositionError(f"pair ({p.q1}, {p.q2}): pi_L of tilde Q1 is not on the L-chain of Q2")
        t = q2_chain.index(top) + 1
        part.q_lt[(top, t)].append(p)
        if t == 1:
            if tilde == top:
                part.large1[top].append(p)
                if not deeply_contained(p.q2, top, cfg):
                    part.notes['large1_q2_not_deep_in_L'] += 1
            else:
                part.small1[top].append(p)
            continue
        below = q2_chain[t - 2]
        if deeply_contained(p.q2, below, cfg):
            sub = 1
        elif deeply_contained(below, tilde, cfg):
            sub = 2
        else:
            sub = 3
            if not cfg.r <= p.ratio_exponent <= 2 * cfg.r + 2:
                part.notes['large2_sub3_ratio_outside_range'] += 1
        if t > cfg.r + 1 and sub != 1:
            part.failures["t_range"].append(f"pair ({p.q1}, {p.q2}) at t={t} > r+1 is in sub-class {sub}")
        part.large2[(top, t, sub)].append(p)
    return part


# -- one node ---------------------------------------------------------------

@dataclass
class NodeResult:
    """Everything measured at one application of the size lemma."""
    tau: float
    norm: float
    ell: LCollection
    part: Partition
    classes: List[Dict[str, Any]]
    node_constant: float
    decay_constant: float
    ddecay: float
    measured: Dict[str, float]
    failures: Dict[str, List[str]]
    notes: Dict[str, int]

    def children(self) -> List[PairCollection]:
        return [Q for _, Q in self.part.small_classes() if len(Q)]


def failure_count(failures: Dict[str, List[str]]) -> int:
    return sum(len(messages) for messages in failures.values())


def _ratio(numerator: float, denominator: float) -> float:
    if numerator == 0.0:
        return 0.0
    return numerator / denominator if denominator > 0.0 else math.inf


def verify_size_lemma(Q: PairCollection, eng: FormsEngine, energy_family: Sequence[DyadicInterval] = (),
                      tau: Optional[float] = None) -> NodeResult:
    """Build L, partition Q and check every structural fact of the size lemma at this node."""
    cfg = eng.cfg
    tol = SL_CFG['size_tolerance']
    tau = eng.size(Q).value if tau is None else tau
    ell = build_L(Q, eng, tau)
    part = partition(Q, ell, cfg)
    failures: Dict[str, List[str]] = defaultdict(list, {k: list(v) for k, v in part.failures.items()})
    notes: Dict[str, int] = defaultdict(int, part.notes)
    measured: Dict[str, float] = defaultdict(float)

    def note_max(key: str, value: float):
        measured[key] = max(measured[key], value)

    # partition exactness
    leaves = list(part.leaves())
    assigned = [p for _, C in leaves for p in C]
    if len(assigned) != len(Q) or set(assigned) != set(Q.pairs):
        failures["partition"].append(f"{len(assigned)} assignments for {len(Q)} pairs")

    # admissibility, sizes and norms of every class
    norms: Dict[str, float] = {}
    small1_labels = {f"small1[{L.n},{L.j}]": L for L in part.small1}
    classes = []
    for name, C in leaves:
        problems = C.admissibility_violations(cfg, energy_family)
        failures["admissibility"].extend(f"{name}: {msg}" for msg in problems[:3])
        norms[name] = eng.norm(C)
        size = eng.size(C).value
        entry = {'name': name, 'count': len(C), 'size': size, 'norm': norms[name]}
        if name.startswith('small'):
            if size > SL_CFG['small_fraction'] * tau * (1.0 + tol):
                failures["small_size"].append(f"{name} has size {size!r} > tau/4 with tau={tau!r}")
            if name in small1_labels:
                entry['size_in_L'] = eng.size(C, outer=small1_labels[name]).value
        classes.append(entry)

    # decay of tents along L
    ddecay, witness = check_ddecay(ell)
    if ddecay > 1.0 + tol:
        failures["ddecay"].append(f"ratio {ddecay!r} at {witness}")
    if ell.generations > len(Q.k_family()):
        failures["termination"].append(f"{ell.generations} generations for {len(Q.k_family())} intervals")

    # mutual orthogonality at fixed t
    by_t: Dict[int, List[PairCollection]] = defaultdict(list)
    for (L, t), pairs in sorted(part.q_lt.items()):
        by_t[t].append(part.collection(pairs))
    families_to_check = list(by_t.values())
    if part.small1:
        families_to_check.append([part.collection(pairs) for _, pairs in sorted(part.small1.items())])
    for families in families_to_check:
        problems = orthogonality_violations(families)
        failures["orthogonality"].extend(problems[:3])
        union = part.collection([p for C in families for p in C])
        top = max(eng.norm(C) for C in families)
        if eng.norm(union) > math.sqrt(2.0) * top + forms_cfg['tolerances']['subadditivity_abs']:
            failures["orthogonality"].append(f"union norm {eng.norm(union)!r} exceeds sqrt(2) * {top!r}")

    # decay constant and beta(t) for t >= 2
    rho = SL_CFG['rho']
    decay_constant = 0.0
    for (L, t), pairs in sorted(part.q_lt.items()):
        if t < 2:
            continue
        C = part.collection(pairs)
        decay_constant = max(decay_constant, _ratio(eng.norm(C), rho ** (-t / 2.0) * tau))
        note_max('beta', _ratio(eng.beta_t(C, ell.children(L)), tau))

    # lemma-level constants on the large classes
    maximal = ell.maximal()
    holes_cases = [(part.collection(pairs), [L]) for L, pairs in part.large1.items()]
    holes_cases += [(part.collection(part.large3), maximal)] if part.large3 else []
    holes_cases += [(part.collection(pairs), ell.children(L))
                    for (L, t, sub), pairs in part.large2.items() if sub == 1]
    for C, S_family in holes_cases:
        try:
            note_max('c_holes', _ratio(eng.norm(C), eng.eta_holes(C, S_family)))
        except AdmissibilityError as e:  # hypothesis not met on this grid
            notes['holes_hypothesis_unmet'] += 1
            logger.debug(f"holes lemma skipped: {e}")
    Holes_cases = [(part.collection(part.large4), maximal)] if part.large4 else []
    Holes_cases += [(part.collection(pairs), ell.children(L))
                    for (L, t, sub), pairs in part.large2.items() if sub == 2]
    for C, S_family in Holes_cases:
        try:
            note_max('c_holes_big', _ratio(eng.norm(C), eng.eta_Holes(C, S_family)))
        except AdmissibilityError as e:
            notes['Holes_hypothesis_unmet'] += 1
            logger.debug(f"Holes lemma skipped: {e}")
    equal_pairs = list(part.large5) + [p for (L, t, sub), pairs in part.large2.items() if sub == 3 for p in pairs]
    by_exponent: Dict[int, List[Pair]] = defaultdict(list)
    for p in equal_pairs:
        by_exponent[p.ratio_exponent].append(p)
    for pairs in by_exponent.values():
        C = part.collection(pairs)
        B = eng.norm(C)
        note_max('c_equal', _ratio(B, eng.size(C).value))
        majorant = eng.equal_majorant(C)
        if B > majorant * (1.0 + 1e-9) + 1e-300:
            failures["equal_bound"].append(f"norm {B!r} exceeds the majorant {majorant!r}")

    norm = eng.norm(Q)
    child_norms = [norms[name] for name, _ in part.small_classes()]
    node_constant = max(0.0, (norm - ONE_PLUS_SQRT2 * max(child_norms, default=0.0)) / tau) if tau > 0.0 else 0.0
    measured['c_decay'] = decay_constant
    logger.info(f"size lemma node: tau={tau:.6g}, |Q|={len(Q)}, |L|={len(ell)}, C={node_constant:.4g}, "
                f"{failure_count(failures)} failures")
    return NodeResult(tau, norm, ell, part, classes, node_constant, decay_constant, ddecay,
                      dict(measured), dict(failures), dict(notes))


# -- recursion ----------------------------------------------------------------

@dataclass
class DecompositionNode:
    tau: float
    pairs: int
    norm: float
    constant: float
    depth: int
    classes: List[Dict[str, Any]] = field(default_factory=list)
    children: List['DecompositionNode'] = field(default_factory=list)
    measured: Dict[str, float] = field(default_factory=dict)
    ell: Optional[LCollection] = None
    accumulated: float = 0.0

    @property
    def leaf(self) -> bool:
        return not self.children

    def walk(self) -> Iterator['DecompositionNode']:
        yield self
        for child in self.children:
            yield from child.walk()

    def to_dict(self) -> Dict[str, Any]:
        return {
            'tau': self.tau,
            'pairs': self.pairs,
            'norm': self.norm,
            'constant': self.constant,
            'accumulated_bound': self.accumulated,
            'measured': self.measured,
            'L': self.ell.to_dict() if self.ell is not None else None,
            'classes': self.classes,
            'children': [c.to_dict() for c in self.children],
        }


@dataclass
class DecompositionTree:
    root: DecompositionNode
    tau0: float
    threshold: float
    failures: Dict[str, List[str]] = field(default_factory=lambda: defaultdict(list))
    notes: Dict[str, int] = field(default_factory=dict)

    @property
    def depth(self) -> int:
        return max(node.depth for node in self.root.walk())

    @property
    def depth_bound(self) -> int:
        if self.tau0 <= 0.0 or self.tau0 < self.threshold:
            return 1
        return max(0, math.ceil(math.log(self.tau0 / self.threshold, 4))) + 1

    @property
    def c_max(self) -> float:
        return max(node.constant for node in self.root.walk())

    def measured(self) -> Dict[str, float]:
        out: Dict[str, float] = defaultdict(float)
        for node in self.root.walk():
            for key, value in node.measured.items():
                out[key] = max(out[key], value)
        out['c_node'] = self.c_max
        return dict(out)


def accumulated_bound(node: DecompositionNode) -> float:
    """C tau + (1 + sqrt 2) max over children, bottom-up; a leaf contributes its own norm."""
    if node.leaf:
        node.accumulated = node.norm
    else:
        node.accumulated = node.constant * node.tau + ONE_PLUS_SQRT2 * max(accumulated_bound(c) for c in node.children)
    return node.accumulated


def _decompose(Q: PairCollection, eng: FormsEngine, threshold: float, energy_family: Sequence[DyadicInterval],
               depth: int, parent_tau: Optional[float], tree: DecompositionTree) -> DecompositionNode:
    tau = eng.size(Q).value if len(Q) else 0.0
    if parent_tau is not None and tau >= parent_tau:
        raise DecompositionError(f"size did not shrink at depth {depth}: {tau!r} >= {parent_tau!r}")
    if len(Q) == 0 or tau == 0.0 or tau < threshold:
        B = eng.norm(Q)
        if tau > 0.0:
            constant = B / tau
        elif B == 0.0:
            constant = 0.0
        else:
            constant = math.inf
            tree.notes['leaf_with_zero_size_and_positive_norm'] = tree.notes.get('leaf_with_zero_size_and_positive_norm', 0) + 1
        return DecompositionNode(tau, len(Q), B, constant, depth)

    result = verify_size_lemma(Q, eng, energy_family, tau)
    for key, messages in result.failures.items():
        tree.failures[key].extend(f"depth {depth}: {msg}" for msg in messages)
    for key, count in result.notes.items():
        tree.notes[key] = tree.notes.get(key, 0) + count
    node = DecompositionNode(tau, len(Q), result.norm, result.node_constant, depth,
                             classes=result.classes, measured=result.measured, ell=result.ell)
    node.children = [_decompose(C, eng, threshold, energy_family, depth + 1, tau, tree) for C in result.children()]
    return node


def decompose_until(Q: PairCollection, eng: FormsEngine, threshold: Optional[float] = None,
                    energy_family: Sequence[DyadicInterval] = ()) -> DecompositionTree:
    """Apply the size lemma to every small class until sizes drop below threshold."""
    tau0 = eng.size(Q).value if len(Q) else 0.0
    if threshold is None:
        threshold = SL_CFG['threshold_ratio'] * tau0
    elif not threshold > 0.0:
        raise InputError(f"recursion threshold must be positive, got {threshold}")
    tree = DecompositionTree(DecompositionNode(tau0, len(Q), 0.0, 0.0, 0), tau0, threshold)
    tree.root = _decompose(Q, eng, threshold, energy_family, 0, None, tree)
    accumulated_bound(tree.root)

    slack = 1.0 + SL_CFG['accumulated_slack']
    if tree.depth > tree.depth_bound:
        tree.failures["recursion_depth"].append(f"depth {tree.depth} exceeds {tree.depth_bound}")
    if tree.root.norm > tree.root.accumulated * slack:
        tree.failures["accumulated_bound"].append(f"norm {tree.root.norm!r} above {tree.root.accumulated!r}")
    c_max = tree.c_max
    if math.isfinite(c_max) and tree.root.accumulated > 4.0 * c_max * tau0 * slack:
        tree.failures["accumulated_bound"].append(f"{tree.root.accumulated!r} above 4 * {c_max!r} * {tau0!r}")
    logger.info(f"decomposition: tau0={tau0:.6g}, depth={tree.depth}, C_max={c_max:.4g}, "
                f"{failure_count(tree.failures)} failures")
    return tree

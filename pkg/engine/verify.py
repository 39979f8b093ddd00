"""The verification suite.

Every check has a stable id, runs over a corpus of measure pairs and returns a
CheckResult. Exact identities use the tolerances in config/forms.yaml;
measured constants are compared with the caps in config/calibration.yaml.
"""

import logging
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from engine.constants import ConstantsBundle, compute_constants
from engine.forms import (
    QUASI_ORTHOGONALITY_BOUND, FormsEngine, make_Q0, monotonicity_bound, orthogonality_violations, stopping_data,
)
from engine.generators import adapted_g, random_coefficients, uniform_f
from engine.sizelemma import DecompositionTree, EnergyStopping, decompose_until, energy_stopping, energy_violators
from shared.entities.dyadic import (
    DyadicInterval, GridConfig, all_intervals, boundary_distance, child_containing, children, deeply_contained,
    intervals_at, is_good, separation_threshold,
)
from shared.entities.haar import (
    HaarCoefficients, energy, energy_haar_sum, epsilon_J, expand, haar_system, project, reconstruct,
)
from shared.entities.measure import (
    MeasurePair, TruncationWindow, hilbert_field, mass, poisson, poisson_comparability_bounds, poisson_many,
)
from shared.entities.pairs import PairCollection
from shared.errors import TwoWeightError
from shared.reports import VerifyReport
from shared.utils.config_loader import calibration_cfg, cli_cfg, constants_cfg, forms_cfg, sizelemma_cfg

logger = logging.getLogger(__name__)

VERIFY_CFG = cli_cfg['verify']
TOL = forms_cfg['tolerances']


@dataclass
class CheckResult:
    id: str
    passed: bool
    measured: Optional[float] = None
    cap: Optional[float] = None
    instances: int = 0
    failures: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'id': self.id,
            'passed': self.passed,
            'measured': self.measured,
            'cap': self.cap,
            'instances': self.instances,
            'failure_count': len(self.failures),
            'failures': self.failures[:VERIFY_CFG['max_messages']],
        }


class Instance:
    """One corpus pair and the objects its checks share, built on first use."""

    def __init__(self, name: str, pair: MeasurePair, seed: int, win: Optional[TruncationWindow] = None,
                 c0: Optional[float] = None):
        self.name = name
        self.pair = pair
        self.seed = seed
        self.win = win
        self.c0 = c0
        self.i0 = DyadicInterval.unit()

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, stream])

    @cached_property
    def constants(self) -> ConstantsBundle:
        return compute_constants(self.pair, self.win)

    @cached_property
    def engine(self) -> FormsEngine:
        return FormsEngine(self.pair, self.win, self.i0)

    @cached_property
    def stopping(self) -> EnergyStopping:
        return energy_stopping(self.pair, self.i0, self.c0, self.constants.h_const)

    @property
    def S_family(self) -> List[DyadicInterval]:
        return self.stopping.family

    @cached_property
    def q0(self) -> PairCollection:
        return make_Q0(self.pair, self.i0, self.S_family, self.stopping.family)

    @cached_property
    def adapted(self) -> Tuple[HaarCoefficients, HaarCoefficients]:
        """(uniform f, adapted g) for the S family."""
        return uniform_f(self.pair, self.S_family, self.rng(1)), adapted_g(self.pair, self.S_family, self.rng(2))

    @cached_property
    def decomposition(self) -> Tuple[Optional[DecompositionTree], Optional[str]]:
        """The recursion tree over Q0, or the error that stopped it."""
        try:
            return decompose_until(self.q0, self.engine, energy_family=self.stopping.family), None
        except TwoWeightError as e:
            logger.error(f"{self.name}: decomposition stopped: {e}")
            return None, str(e)

    def warm(self) -> None:
        try:
            self.constants
            self.q0
            self.decomposition
        except TwoWeightError as e:
            logger.error(f"{self.name}: {e}")


CheckFn = Callable[['Verifier'], CheckResult]
CHECKS: Dict[str, CheckFn] = {}
CAP_KEYS: Dict[str, str] = {}


def check(check_id: str, cap_key: Optional[str] = None):
    """Register a check under a stable id, optionally bound to a calibration cap."""
    def register(fn: CheckFn) -> CheckFn:
        CHECKS[check_id] = fn
        if cap_key:
            CAP_KEYS[check_id] = cap_key
        return fn
    return register


class Verifier:
    """Runs registered checks over a corpus."""

    def __init__(self, corpus: Sequence[Tuple[str, MeasurePair]], seed: int = 0,
                 caps: Optional[Dict[str, Optional[float]]] = None, random_vectors: Optional[int] = None,
                 workers: int = 1, win: Optional[TruncationWindow] = None, c0: Optional[float] = None,
                 cfg: Optional[GridConfig] = None, require_coverage: bool = False):
        self.c0 = calibration_cfg['c0'] if c0 is None else c0
        self.instances = [Instance(name, pair, seed + k, win, self.c0) for k, (name, pair) in enumerate(corpus)]
        self.seed = seed
        self.caps: Dict[str, Optional[float]] = dict(calibration_cfg)
        self.caps.update(caps or {})
        self.random_vectors = random_vectors if random_vectors is not None else cli_cfg['random_vectors']
        self.workers = max(1, workers)
        if cfg is None:
            cfg = self.instances[0].pair.cfg if self.instances else GridConfig.from_config()
        self.cfg = cfg
        self.require_coverage = require_coverage

    def use_c0(self, c0: float) -> None:
        """Switch every instance to a new c0, dropping what was built from the old one."""
        self.c0 = c0
        for inst in self.instances:
            inst.c0 = c0
            for name in ('stopping', 'q0', 'adapted', 'decomposition'):
                inst.__dict__.pop(name, None)

    def cap(self, check_id: str) -> Optional[float]:
        key = CAP_KEYS.get(check_id)
        if key is None:
            return None
        value = self.caps.get(key)
        if value is None:
            return monotonicity_bound(self.cfg) * (1.0 + 1e-12) if key == 'c_mono' else math.inf
        return float(value)

    def draws_per_instance(self) -> int:
        return max(1, self.random_vectors // max(1, len(self.instances)))

    def outcome(self, check_id: str, failures: List[str], measured: Optional[float] = None,
                instances: Optional[int] = None) -> CheckResult:
        cap = self.cap(check_id)
        if measured is not None and cap is not None and not measured <= cap:
            failures.append(f"measured {measured!r} exceeds the cap {cap!r}")
        count = len(self.instances) if instances is None else instances
        return CheckResult(check_id, not failures, measured, cap, count, failures)

    def prepare(self) -> None:
        """Build constants, Q0 and the recursion tree of every instance, in parallel."""
        if self.workers == 1:
            for inst in self.instances:
                inst.warm()
            return
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            list(pool.map(Instance.warm, self.instances))

    def run(self, only: Optional[Sequence[str]] = None) -> VerifyReport:
        """Run every check whose id starts with one of `only` (all when None)."""
        selected = [cid for cid in CHECKS if not only or any(cid.startswith(prefix) for prefix in only)]
        if any(not cid.startswith('grid.') for cid in selected):
            self.prepare()
        results = []
        for cid in selected:
            try:
                result = CHECKS[cid](self)
            except TwoWeightError as e:
                result = CheckResult(cid, False, failures=[f"{type(e).__name__}: {e}"])
            level = logging.INFO if result.passed else logging.WARNING
            logger.log(level, f"{cid}: {'pass' if result.passed else 'FAIL'}"
                              f"{'' if result.measured is None else f' (measured {result.measured:.6g})'}")
            results.append(result)
        passed = all(r.passed for r in results)
        logger.info(f"verify: {sum(r.passed for r in results)}/{len(results)} checks passed "
                    f"over {len(self.instances)} instances")
        return VerifyReport(len(self.instances), [r.to_dict() for r in results], passed, c0=self.c0)


def _max(values) -> Optional[float]:
    values = [v for v in values if v is not None]
    return max(values) if values else None


def _ratio(numerator: float, denominator: float) -> float:
    if numerator == 0.0:
        return 0.0
    return numerator / denominator if denominator > 0.0 else math.inf


def _close(a: float, b: float, tol: float, scale: float = 1.0) -> bool:
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b), scale)


# -- grid ---------------------------------------------------------------------

@check('grid.partition')
def check_grid_partition(v: Verifier) -> CheckResult:
    failures = []
    for I in all_intervals(min(v.cfg.K, VERIFY_CFG['grid_depth']) - 1):
        left, right = children(I, v.cfg)
        if not (left.left == I.left and left.right == right.left and right.right == I.right):
            failures.append(f"children of {I} do not tile it")
        if not (I.strictly_contains(left) and I.strictly_contains(right)) or left.contains(right):
            failures.append(f"containment broken for the children of {I}")
    return v.outcome('grid.partition', failures, instances=0)


@check('grid.goodness_monotone_eps')
def check_goodness_monotone(v: Verifier) -> CheckResult:
    """Goodness at a smaller eps implies goodness at every larger eps."""
    failures = []
    grids = [GridConfig(v.cfg.K, v.cfg.r, eps) for eps in sorted(VERIFY_CFG['eps_values'])]
    for J in all_intervals(min(v.cfg.K, VERIFY_CFG['grid_depth'])):
        verdicts = [is_good(J, g) for g in grids]
        for (lo, a), (hi, b) in zip(zip(grids, verdicts), zip(grids[1:], verdicts[1:])):
            if a and not b:
                failures.append(f"{J} good at eps={lo.eps} but not at eps={hi.eps}")
    return v.outcome('grid.goodness_monotone_eps', failures, instances=0)


@check('grid.deep_containment')
def check_deep_containment(v: Verifier) -> CheckResult:
    failures = []
    cfg = v.cfg
    depth = min(cfg.K, VERIFY_CFG['grid_depth'])
    for I in all_intervals(min(VERIFY_CFG['comparability_depth'], depth)):
        for J in all_intervals(depth, root=I):
            deep = deeply_contained(J, I, cfg)
            expected = J.n - I.n >= cfg.r and is_good(J, cfg)
            if deep != expected:
                failures.append(f"deeply_contained({J}, {I}) = {deep}")
            if deep and boundary_distance(J, I) < separation_threshold(J, I, cfg.eps):
                failures.append(f"{J} deeply inside {I} but too close to its boundary")
            if deep and not child_containing(I, J).contains(J):
                failures.append(f"child of {I} containing {J} is wrong")
    return v.outcome('grid.deep_containment', failures, instances=0)


# -- measures -----------------------------------------------------------------

@check('measure.additivity')
def check_measure_additivity(v: Verifier) -> CheckResult:
    failures = []
    for inst in v.instances:
        sigma, w = inst.pair.sigma, inst.pair.w
        both = sigma.merge(w)
        for I in all_intervals(min(inst.pair.cfg.K, 6) - 1):
            for nu, label in ((sigma, 'sigma'), (w, 'w')):
                left, right = I.halves()
                if not _close(mass(nu, I), mass(nu, left) + mass(nu, right), 1e-12):
                    failures.append(f"{inst.name}: {label} mass of {I} is not the sum over its children")
            if I.n <= 4 and not _close(poisson(both, I), poisson(sigma, I) + poisson(w, I), 1e-12):
                failures.append(f"{inst.name}: Poisson integral over {I} is not additive")
    return v.outcome('measure.additivity', failures)


@check('measure.poisson_comparability')
def check_poisson_comparability(v: Verifier) -> CheckResult:
    """[P(nu, J)/|J|] / [P(nu, L)/|L|] within fixed bounds for J in L, L deeply inside K, nu off K."""
    failures = []
    worst = 0.0
    instances = v.instances[:VERIFY_CFG['comparability_instances']]
    for inst in instances:
        cfg = inst.pair.cfg
        low, high = poisson_comparability_bounds(cfg)
        for K in all_intervals(VERIFY_CFG['comparability_depth']):
            nu = inst.pair.sigma.restrict_outside(K)
            if len(nu) == 0:
                continue
            for L in all_intervals(min(K.n + cfg.r + 2, cfg.K), root=K):
                if not deeply_contained(L, K, cfg):
                    continue
                base = poisson(nu, L) / L.length
                Js = all_intervals(min(L.n + 3, cfg.K), root=L)
                lefts = np.array([J.left for J in Js])
                rights = np.array([J.right for J in Js])
                ratios = poisson_many(nu, lefts, rights) / (rights - lefts) / base
                worst = max(worst, float(ratios.max()), 1.0 / float(ratios.min()))
                if ratios.min() < low * (1.0 - 1e-12) or ratios.max() > high * (1.0 + 1e-12):
                    failures.append(f"{inst.name}: ratios [{ratios.min()!r}, {ratios.max()!r}] under {L} in {K} "
                                    f"leave [{low!r}, {high!r}]")
    return v.outcome('measure.poisson_comparability', failures, worst, instances=len(instances))


@check('measure.truncation_default_window')
def check_default_window(v: Verifier) -> CheckResult:
    """The default window keeps every sigma/w interaction."""
    failures = []
    for inst in v.instances:
        pair = inst.pair
        if len(pair.sigma) == 0 or len(pair.w) == 0:
            continue
        win = TruncationWindow.default_for(pair)
        field_w = hilbert_field(np.ones(len(pair.sigma)), pair, None, win)
        terms = pair.sigma.weights[None, :] / (pair.sigma.positions[None, :] - pair.w.positions[:, None])
        direct = terms.sum(axis=1)
        scale = np.abs(terms).sum(axis=1)
        if np.any(np.abs(field_w - direct) > 1e-10 * scale):
            failures.append(f"{inst.name}: default window drops interactions")
    return v.outcome('measure.truncation_default_window', failures)


# -- Haar ---------------------------------------------------------------------

def _measures(v: Verifier):
    for inst in v.instances:
        for nu, label in ((inst.pair.sigma, 'sigma'), (inst.pair.w, 'w')):
            if len(nu):
                yield inst, nu, f"{inst.name}/{label}"


@check('haar.orthonormality')
def check_haar_orthonormality(v: Verifier) -> CheckResult:
    failures = []
    for _, nu, label in _measures(v):
        system = haar_system(nu)
        if len(system) != len(nu) - 1:
            failures.append(f"{label}: {len(system)} Haar functions for {len(nu)} atoms")
        gram = system.matrix @ np.diag(nu.weights) @ system.matrix.T
        if not np.allclose(gram, np.eye(len(system)), rtol=0.0, atol=1e-9):
            failures.append(f"{label}: Gram matrix is not the identity")
        if np.any(np.abs(system.matrix @ nu.weights) > 1e-9 * max(1.0, math.sqrt(nu.total))):
            failures.append(f"{label}: a Haar function has nonzero mean")
    return v.outcome('haar.orthonormality', failures)


@check('haar.parseval')
def check_parseval(v: Verifier) -> CheckResult:
    failures = []
    for inst, nu, label in _measures(v):
        f = inst.rng(10).standard_normal(len(nu))
        lhs = math.fsum((nu.weights * f * f).tolist())
        if not _close(expand(f, nu).norm_sq(), lhs, 1e-10):
            failures.append(f"{label}: Parseval fails")
    return v.outcome('haar.parseval', failures)


@check('haar.round_trip')
def check_round_trip(v: Verifier) -> CheckResult:
    failures = []
    for inst, nu, label in _measures(v):
        f = inst.rng(11).standard_normal(len(nu))
        if not np.allclose(reconstruct(expand(f, nu)), f, rtol=0.0, atol=1e-9 * max(1.0, float(np.abs(f).max()))):
            failures.append(f"{label}: reconstruct(expand(f)) differs from f")
    return v.outcome('haar.round_trip', failures)


@check('haar.energy_identity')
def check_energy_identity(v: Verifier) -> CheckResult:
    """E(nu, I)^2 nu(I) |I|^2 equals the sum of <x, h_J>^2 over Haar intervals J inside I."""
    failures = []
    for _, nu, label in _measures(v):
        for I in all_intervals(min(nu.K, 6)):
            m = mass(nu, I)
            if m == 0.0:
                continue
            lhs = energy(nu, I) ** 2 * m * I.length ** 2
            if abs(lhs - energy_haar_sum(nu, I)) > 1e-9 * m * I.length ** 2:
                failures.append(f"{label}: energy identity fails on {I}")
    return v.outcome('haar.energy_identity', failures)


@check('haar.two_overlap_projection')
def check_two_overlap(v: Verifier) -> CheckResult:
    """Projections onto interval sets covering each interval at most twice sum to at most 2||g||^2."""
    failures = []
    worst = 0.0
    for inst, nu, label in _measures(v):
        system = haar_system(nu)
        g = random_coefficients(nu, inst.rng(12))
        total = g.norm_sq()
        if total == 0.0:
            continue
        windows = [[J for J in system.support if J.n in (k, k + 1)] for k in range(nu.K)]
        lhs = math.fsum(project(g, W).norm_sq() for W in windows)
        worst = max(worst, lhs / total)
        if lhs > 2.0 * total * (1.0 + 1e-12):
            failures.append(f"{label}: projections sum to {lhs!r} > 2 * {total!r}")
    return v.outcome('haar.two_overlap_projection', failures, worst)


# -- constants ----------------------------------------------------------------

@check('constants.necessity')
def check_necessity(v: Verifier) -> CheckResult:
    """Both testing constants are at most the norm."""
    failures = []
    for inst in v.instances:
        c = inst.constants
        T = max(c.testing_sw, c.testing_ws)
        if T > c.norm.value * (1.0 + 1e-9) + 1e-12:
            failures.append(f"{inst.name}: testing {T!r} exceeds the norm {c.norm.value!r}")
    return v.outcome('constants.necessity', failures)


@check('constants.oracle_agreement')
def check_oracle_agreement(v: Verifier) -> CheckResult:
    failures = []
    gaps = []
    for inst in v.instances:
        gap = inst.constants.norm.relative_gap
        gaps.append(gap)
        if gap > constants_cfg['oracle']['agreement_rel_tol']:
            failures.append(f"{inst.name}: power iteration is off by {gap!r}")
    return v.outcome('constants.oracle_agreement', failures, _max(gaps))


@check('constants.ratio_cap', cap_key='r_cap')
def check_ratio_cap(v: Verifier) -> CheckResult:
    return v.outcome('constants.ratio_cap', [], _max(inst.constants.ratio for inst in v.instances))


# -- forms --------------------------------------------------------------------

@check('forms.matrix_faithfulness')
def check_matrix_faithfulness(v: Verifier) -> CheckResult:
    """The Haar-coordinate matrix and the atom-level sum agree on random (f, g)."""
    failures = []
    for inst in v.instances:
        Q, eng = inst.q0, inst.engine
        if len(Q) == 0:
            continue
        fm = eng.form_matrix(Q)
        rng = inst.rng(20)
        for _ in range(v.draws_per_instance()):
            f = random_coefficients(inst.pair.sigma, rng)
            g = random_coefficients(inst.pair.w, rng)
            fv = np.abs([f.coeffs.get(I, 0.0) for I in fm.rows])
            gv = np.abs([g.coeffs.get(J, 0.0) for J in fm.cols])
            scale = float(fv @ np.abs(fm.matrix) @ gv)
            a, b = fm.evaluate(f, g), eng.b_form(Q, f, g)
            if not _close(a, b, TOL['matrix_faithfulness'], scale):
                failures.append(f"{inst.name}: matrix gives {a!r}, atom sum gives {b!r}")
    return v.outcome('forms.matrix_faithfulness', failures)


@check('forms.above_stop_identity')
def check_above_stop(v: Verifier) -> CheckResult:
    """B_above = sum of epsilon_J <H(1_I0 sigma), Delta_J g> - B_stop."""
    failures = []
    for inst in v.instances:
        f, g = inst.adapted
        eng = inst.engine
        above, whole, stop = eng.b_above(f, g), eng.i0_part(f, g), eng.b_stop(f, g)
        if not _close(above, whole - stop, TOL['identity'], abs(whole) + abs(stop)):
            failures.append(f"{inst.name}: above={above!r}, whole-stop={whole - stop!r}")
    return v.outcome('forms.above_stop_identity', failures)


@check('forms.epsilon_bound')
def check_epsilon_bound(v: Verifier) -> CheckResult:
    failures = []
    values = []
    for inst in v.instances:
        f, g = inst.adapted
        for J in g.coeffs:
            if not inst.i0.strictly_contains(J):
                continue
            value = abs(epsilon_J(f, J, inst.i0, inst.pair.cfg))
            values.append(value)
            if value > 1.0 + TOL['epsilon_bound']:
                failures.append(f"{inst.name}: |epsilon_J| = {value!r} on {J}")
    return v.outcome('forms.epsilon_bound', failures, _max(values))


@check('forms.subadditivity')
def check_subadditivity(v: Verifier) -> CheckResult:
    """B over mutually orthogonal families is at most sqrt(2) times the largest family norm."""
    failures = []
    for inst in v.instances:
        Q, eng = inst.q0, inst.engine
        for m in VERIFY_CFG['hole_levels']:
            groups: Dict[DyadicInterval, list] = defaultdict(list)
            for p in Q:
                if p.tilde_q1.n >= m:
                    groups[p.tilde_q1.ancestor(m)].append(p)
            families = [PairCollection(Q.i0, pairs) for _, pairs in sorted(groups.items())]
            if len(families) < 2:
                continue
            failures.extend(f"{inst.name}: {msg}" for msg in orthogonality_violations(families))
            union = PairCollection(Q.i0, [p for C in families for p in C])
            top = max(eng.norm(C) for C in families)
            total = eng.norm(union)
            if total > math.sqrt(2.0) * top + TOL['subadditivity_abs']:
                failures.append(f"{inst.name}: level {m}: union norm {total!r} > sqrt(2) * {top!r}")
    return v.outcome('forms.subadditivity', failures)


def _hole_cases(inst: Instance, big: bool):
    """(S level, collection, S family) for the holes checks at every configured level."""
    cfg = inst.pair.cfg
    for m in VERIFY_CFG['hole_levels']:
        if m >= cfg.K:
            continue
        chosen = []
        for p in inst.q0:
            if p.q2.n < m:
                continue
            S = p.q2.ancestor(m)
            if big:
                if deeply_contained(S, p.tilde_q1, cfg):
                    chosen.append(p)
            elif deeply_contained(p.q2, S, cfg) and p.tilde_q1.contains(S):
                chosen.append(p)
        if chosen:
            yield m, PairCollection(inst.i0, chosen), intervals_at(m)


def _tree(inst: Instance) -> Tuple[Optional[DecompositionTree], List[str]]:
    tree, error = inst.decomposition
    return tree, ([] if error is None else [f"{inst.name}: {error}"])


@check('forms.holes_bound', cap_key='c_holes')
def check_holes(v: Verifier) -> CheckResult:
    """B_Q <= C eta when every Q2 sits deeply inside a hole inside tilde Q1."""
    failures, ratios = [], []
    for inst in v.instances:
        for _, C, family in _hole_cases(inst, big=False):
            ratios.append(_ratio(inst.engine.norm(C), inst.engine.eta_holes(C, family)))
        tree, _ = _tree(inst)
        if tree is not None:
            ratios.append(tree.measured().get('c_holes'))
    return v.outcome('forms.holes_bound', failures, _max(ratios))


@check('forms.big_holes_bound', cap_key='c_holes_big')
def check_big_holes(v: Verifier) -> CheckResult:
    """B_Q <= C eta when every Q2 sits in a hole deeply inside tilde Q1."""
    failures, ratios = [], []
    for inst in v.instances:
        for _, C, family in _hole_cases(inst, big=True):
            ratios.append(_ratio(inst.engine.norm(C), inst.engine.eta_Holes(C, family)))
        tree, _ = _tree(inst)
        if tree is not None:
            ratios.append(tree.measured().get('c_holes_big'))
    return v.outcome('forms.big_holes_bound', failures, _max(ratios))


@check('forms.eta_size', cap_key='c_eta')
def check_eta_size(v: Verifier) -> CheckResult:
    ratios = []
    for inst in v.instances:
        for _, C, family in _hole_cases(inst, big=False):
            ratios.append(_ratio(inst.engine.eta_holes(C, family), inst.engine.size(C).value))
    return v.outcome('forms.eta_size', [], _max(ratios))


@check('forms.equal_bound', cap_key='c_equal')
def check_equal(v: Verifier) -> CheckResult:
    """At a fixed ratio |Q1|/|Q2| the norm is below its majorant and a multiple of the size."""
    failures, ratios = [], []
    for inst in v.instances:
        eng = inst.engine
        by_exponent = defaultdict(list)
        for p in inst.q0:
            by_exponent[p.ratio_exponent].append(p)
        for u, pairs in sorted(by_exponent.items()):
            C = PairCollection(inst.i0, pairs)
            B = eng.norm(C)
            majorant = eng.equal_majorant(C)
            if B > majorant * (1.0 + TOL['identity']) + 1e-300:
                failures.append(f"{inst.name}: u={u}: norm {B!r} above the majorant {majorant!r}")
            ratios.append(_ratio(B, eng.size(C).value))
        tree, _ = _tree(inst)
        if tree is not None:
            failures.extend(f"{inst.name}: {msg}" for msg in tree.failures.get('equal_bound', []))
            ratios.append(tree.measured().get('c_equal'))
    return v.outcome('forms.equal_bound', failures, _max(ratios))


@check('forms.monotonicity', cap_key='c_mono')
def check_monotonicity(v: Verifier) -> CheckResult:
    """|<H(1_{I0 - S} sigma), h_J>| against P(sigma(I0 - S), J) <x/|J|, h_J> for J deeply inside S."""
    failures, ratios = [], []
    for inst in v.instances:
        cfg = inst.pair.cfg
        eng = inst.engine
        for m in VERIFY_CFG['hole_levels']:
            if m >= cfg.K:
                continue
            for S in intervals_at(m):
                for J in eng.sys_w.support:
                    if not deeply_contained(J, S, cfg):
                        continue
                    result = eng.monotonicity_check(S, J)
                    if not result.flagged:
                        ratios.append(result.ratio)
    return v.outcome('forms.monotonicity', failures, _max(ratios))


@check('forms.quasi_orthogonality', cap_key='c_quasi')
def check_quasi_orthogonality(v: Verifier) -> CheckResult:
    """sum over the stopping tree of alpha(F)^2 sigma(F) against ||f||^2."""
    failures, ratios = [], []
    factor = forms_cfg['stopping']['growth_factor']
    for inst in v.instances:
        sigma = inst.pair.sigma
        if mass(sigma, inst.i0) == 0.0:
            continue
        rng = inst.rng(30)
        for _ in range(v.draws_per_instance()):
            f_vals = rng.standard_normal(len(sigma))
            data = stopping_data(f_vals, sigma, inst.i0, factor)
            failures.extend(f"{inst.name}: {msg}" for msg in data.growth_violations(factor)[:1])
            norm_sq = math.fsum((sigma.weights * f_vals * f_vals).tolist())
            ratio = _ratio(data.carleson_sum(sigma), norm_sq)
            ratios.append(ratio)
            if ratio > QUASI_ORTHOGONALITY_BOUND * (1.0 + 1e-12):
                failures.append(f"{inst.name}: Carleson sum ratio {ratio!r} above {QUASI_ORTHOGONALITY_BOUND!r}")
    return v.outcome('forms.quasi_orthogonality', failures, _max(ratios))


@check('forms.phi_bound', cap_key='c_phi')
def check_phi_bound(v: Verifier) -> CheckResult:
    """|phi_J| against alpha(pi J) off the hole S around J, and phi_J = 0 on S."""
    failures, ratios = [], []
    factor = forms_cfg['stopping']['growth_factor']
    for inst in v.instances:
        sigma = inst.pair.sigma
        if mass(sigma, inst.i0) == 0.0:
            continue
        rng = inst.rng(31)
        draws = [rng.standard_normal(len(sigma)) for _ in range(v.draws_per_instance())]
        for m, C, _ in _hole_cases(inst, big=False):
            for f_vals in draws:
                data = stopping_data(f_vals, sigma, inst.i0, factor)
                for J in C.q2s:
                    S = J.ancestor(m)
                    ratio, vanishes = inst.engine.phi_bound(C, f_vals, J, data, S)
                    ratios.append(ratio)
                    if not vanishes:
                        failures.append(f"{inst.name}: phi_J for J={J} is non-zero on S={S}")
    return v.outcome('forms.phi_bound', failures, _max(ratios))


@check('forms.stop_equals_q0')
def check_stop_equals_q0(v: Verifier) -> CheckResult:
    """For f and g adapted to the S family the stopping form is B over Q0."""
    failures = []
    for inst in v.instances:
        f, g = inst.adapted
        eng = inst.engine
        Q = inst.q0
        fm = eng.form_matrix(Q)
        fv = np.abs([f.coeffs.get(I, 0.0) for I in fm.rows])
        gv = np.abs([g.coeffs.get(J, 0.0) for J in fm.cols])
        scale = float(fv @ np.abs(fm.matrix) @ gv) if fm.matrix.size else 0.0
        a, b = eng.b_form(Q, f, g), eng.b_stop(f, g)
        if not _close(a, b, TOL['identity'], scale):
            failures.append(f"{inst.name}: B over Q0 = {a!r}, stopping form = {b!r}")
    return v.outcome('forms.stop_equals_q0', failures)


# -- size lemma ---------------------------------------------------------------

@check('sizelemma.energy_mass')
def check_energy_mass(v: Verifier) -> CheckResult:
    failures, fractions = [], []
    bound = sizelemma_cfg['energy_mass_fraction']
    for inst in v.instances:
        fraction = inst.stopping.mass_fraction(inst.pair.sigma)
        fractions.append(fraction)
        if fraction > bound * (1.0 + 1e-12):
            failures.append(f"{inst.name}: energy intervals carry {fraction!r} of sigma(I0) at c0={v.c0!r}")
    return CheckResult('sizelemma.energy_mass', not failures, _max(fractions), bound, len(v.instances), failures)


def stopped_fraction(inst: Instance, c0: float) -> float:
    """Share of sigma(I0) under the energy intervals of one instance at this c0."""
    family = energy_violators(inst.pair, inst.i0, c0, inst.constants.h_const)
    return EnergyStopping(inst.i0, family, c0, inst.constants.h_const).mass_fraction(inst.pair.sigma)


@check('sizelemma.energy_monotone_c0')
def check_energy_monotone(v: Verifier) -> CheckResult:
    """Raising c0 only shrinks the energy stopping family."""
    failures = []
    factors = sorted(VERIFY_CFG['c0_factors'])
    for inst in v.instances:
        h = inst.constants.h_const
        families = [energy_violators(inst.pair, inst.i0, v.c0 * a, h) for a in factors]
        for (a, small), (b, large) in zip(zip(factors, families), zip(factors[1:], families[1:])):
            for F in large:
                if not any(G.contains(F) for G in small):
                    failures.append(f"{inst.name}: {F} stops at c0 x {b} but lies in nothing at c0 x {a}")
    return v.outcome('sizelemma.energy_monotone_c0', failures)


def _tree_check(check_id: str, key: str) -> CheckFn:
    def run(v: Verifier) -> CheckResult:
        failures = []
        for inst in v.instances:
            tree, errors = _tree(inst)
            failures.extend(errors)
            if tree is not None:
                failures.extend(f"{inst.name}: {msg}" for msg in tree.failures.get(key, []))
        return v.outcome(check_id, failures)
    run.__doc__ = f"Recursion-tree facts recorded under '{key}'."
    return run


for _key in ('partition', 'admissibility', 'small_size', 'ddecay', 'termination', 't_range',
             'orthogonality', 'recursion_depth', 'accumulated_bound'):
    check(f'sizelemma.{_key}')(_tree_check(f'sizelemma.{_key}', _key))


@check('sizelemma.node_constant', cap_key='c_node')
def check_node_constant(v: Verifier) -> CheckResult:
    failures, values = [], []
    for inst in v.instances:
        tree, errors = _tree(inst)
        failures.extend(errors)
        if tree is not None:
            values.append(tree.c_max)
    return v.outcome('sizelemma.node_constant', failures, _max(values))


@check('sizelemma.decay_constant', cap_key='c_decay')
def check_decay_constant(v: Verifier) -> CheckResult:
    failures, values = [], []
    for inst in v.instances:
        tree, errors = _tree(inst)
        failures.extend(errors)
        if tree is not None:
            values.append(tree.measured().get('c_decay', 0.0))
    return v.outcome('sizelemma.decay_constant', failures, _max(values))


def reaches_recursion(tree: Optional[DecompositionTree]) -> bool:
    """The tree has a node below the root and some node with a non-empty small class."""
    if tree is None or tree.depth < 1:
        return False
    return any(entry['name'].startswith('small') and entry['count'] > 0
               for node in tree.root.walk() for entry in node.classes)


@check('sizelemma.coverage')
def check_coverage(v: Verifier) -> CheckResult:
    """A seeded corpus must drive at least one instance into the recursion."""
    failures, depths, reached = [], [], 0
    for inst in v.instances:
        tree, errors = _tree(inst)
        failures.extend(errors)
        if tree is not None:
            depths.append(tree.depth)
            reached += reaches_recursion(tree)
    logger.info(f"{reached} of {len(v.instances)} instances reach the recursion")
    if v.require_coverage and v.instances and not reached:
        failures.append(f"no instance reaches depth 1 with a small class (deepest tree: {max(depths, default=0)})")
    return v.outcome('sizelemma.coverage', failures, float(max(depths, default=0)))


def calibrate_c0(v: Verifier) -> Optional[float]:
    """Smallest power of two c0 whose energy intervals stay within the mass bound on every instance.

    Scans down from the top exponent and stops at the first failure; None when
    even the largest c0 in the scan stops too much mass.
    """
    low, high = sizelemma_cfg['c0_exponents']
    bound = sizelemma_cfg['energy_mass_fraction'] * (1.0 + 1e-12)
    best = None
    for exponent in range(high, low - 1, -1):
        c0 = 2.0 ** exponent
        worst = max((stopped_fraction(inst, c0) for inst in v.instances), default=0.0)
        logger.debug(f"c0=2^{exponent}: largest stopped fraction {worst:.6g}")
        if worst > bound:
            break
        best = c0
    logger.info(f"calibrated c0 = {best!r} (stopped fraction bound {sizelemma_cfg['energy_mass_fraction']})")
    return best


def calibrate(report: VerifyReport, safety: Optional[float] = None,
              c0: Optional[float] = None) -> Dict[str, Optional[float]]:
    """New caps: every measured maximum times the safety factor; caps left null stay null.

    c0 replaces the committed energy stopping knob when given.
    """
    safety = cli_cfg['calibration_safety'] if safety is None else safety
    caps = dict(calibration_cfg)
    if c0 is not None:
        caps['c0'] = c0
    for entry in report.checks:
        key = CAP_KEYS.get(entry['id'])
        if key is None or caps.get(key) is None:
            continue
        measured = entry['measured']
        if measured is not None and math.isfinite(measured) and measured > 0.0:
            caps[key] = float(measured) * safety
    return caps

"""Bilinear stopping forms over pair collections and the functionals that bound them.

For a pair collection Q,

    B_Q(f, g) = sum over (Q1, Q2) in Q of
                E^sigma_{Q2} Delta^sigma_{Q1} f * <H(1_{I0 - tilde Q1} sigma), Delta^w_{Q2} g>_w.

Delta^sigma_{Q1} f is constant on tilde Q1, so the first factor is read as that
constant value. In Haar coordinates B_Q(f, g) = fhat^T M ghat with
M[I, J] = h^sigma_I(I_J) * <H(1_{I0 - I_J} sigma), h^w_J>_w.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from engine.spectral import spectral_norm
from shared.entities.dyadic import DyadicInterval, GridConfig, deeply_contained, is_good
from shared.entities.haar import (
    HaarCoefficients, average, epsilon_J, haar_system, mart_diff, reconstruct,
)
from shared.entities.measure import (
    AtomicMeasure, MeasurePair, TruncationWindow, hilbert_field, kernel_matrix, mass, poisson,
)
from shared.entities.pairs import Pair, PairCollection, StoppingData
from shared.errors import AdmissibilityError, MeasureError
from shared.utils.config_loader import forms_cfg

logger = logging.getLogger(__name__)


def monotonicity_bound(cfg: GridConfig) -> float:
    """Upper bound for the monotonicity ratio when J is deeply inside the hole."""
    return 1.0 + 2.0 ** (-2.0 * (cfg.r - 1) * (1.0 - cfg.eps))


# sigma(children of F) <= sigma(F)/4 and the dyadic maximal bound ||Mf||^2 <= 4||f||^2
QUASI_ORTHOGONALITY_BOUND = 16.0 / 3.0


@dataclass
class FormMatrix:
    """B_Q in Haar coordinates: rows are sigma-Haar Q1 intervals, columns w-Haar Q2 intervals."""
    rows: List[DyadicInterval]
    cols: List[DyadicInterval]
    matrix: np.ndarray
    _norm: Optional[float] = field(default=None, repr=False)

    def evaluate(self, f: HaarCoefficients, g: HaarCoefficients) -> float:
        fv = np.array([f.coeffs.get(I, 0.0) for I in self.rows])
        gv = np.array([g.coeffs.get(J, 0.0) for J in self.cols])
        return float(fv @ self.matrix @ gv)

    def norm(self) -> float:
        if self._norm is None:
            self._norm = spectral_norm(self.matrix)
        return self._norm


@dataclass
class SizeResult:
    value: float
    witness: Optional[DyadicInterval]
    skipped: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'value': self.value,
            'witness': self.witness.to_dict() if self.witness else None,
            'skipped_zero_mass': self.skipped,
        }


@dataclass
class MonotonicityResult:
    ratio: float
    flagged: bool = False


class FormsEngine:
    """Caches Haar systems, the w-by-sigma kernel and hole pairings of one pair."""

    def __init__(self, pair: MeasurePair, win: Optional[TruncationWindow] = None,
                 i0: Optional[DyadicInterval] = None):
        self.pair = pair
        self.cfg = pair.cfg
        self.win = win or TruncationWindow.default_for(pair)
        self.i0 = i0 or DyadicInterval.unit()
        self.sys_s = haar_system(pair.sigma)
        self.sys_w = haar_system(pair.w)
        self.G = kernel_matrix(pair.w.positions, pair.sigma.positions, self.win)
        self.sigma_i0 = pair.sigma.restrict(self.i0)
        self._hole_pairings: Dict[DyadicInterval, np.ndarray] = {}
        self._inside_pairings: Dict[DyadicInterval, np.ndarray] = {}
        self._hole_poisson: Dict[Tuple[DyadicInterval, DyadicInterval], float] = {}
        self._outside: Dict[Tuple[DyadicInterval, DyadicInterval], AtomicMeasure] = {}

    # -- Hilbert pairings ---------------------------------------------------

    def _sigma_mask(self, I: DyadicInterval) -> np.ndarray:
        mask = np.zeros(len(self.pair.sigma))
        mask[self.pair.sigma.atom_slice(I)] = 1.0
        return mask

    def _pairings(self, source: np.ndarray) -> np.ndarray:
        field_w = self.G @ source
        return self.sys_w.matrix @ (self.pair.w.weights * field_w)

    def hole_pairings(self, T: DyadicInterval) -> np.ndarray:
        """<H(1_{I0 - T} sigma), h^w_J>_w for every w-Haar row J."""
        if T not in self._hole_pairings:
            source = self.pair.sigma.weights * self._sigma_mask(self.i0) * (1.0 - self._sigma_mask(T))
            self._hole_pairings[T] = self._pairings(source)
        return self._hole_pairings[T]

    def inside_pairings(self, T: DyadicInterval) -> np.ndarray:
        """<H(1_T sigma), h^w_J>_w for every w-Haar row J."""
        if T not in self._inside_pairings:
            self._inside_pairings[T] = self._pairings(self.pair.sigma.weights * self._sigma_mask(T))
        return self._inside_pairings[T]

    def pairing(self, T: DyadicInterval, J: DyadicInterval) -> float:
        row = self.sys_w.index.get(J)
        return 0.0 if row is None else float(self.hole_pairings(T)[row])

    def outside(self, K: DyadicInterval, outer: Optional[DyadicInterval] = None) -> AtomicMeasure:
        """sigma restricted to outer minus K (outer defaults to I0)."""
        key = (K, outer or self.i0)
        if key not in self._outside:
            base = self.sigma_i0 if outer is None else self.pair.sigma.restrict(outer)
            self._outside[key] = base.restrict_outside(K)
        return self._outside[key]

    def hole_poisson(self, K: DyadicInterval, target: Optional[DyadicInterval] = None,
                     outer: Optional[DyadicInterval] = None) -> float:
        """P(sigma(outer - K), target), target defaulting to K."""
        target = target or K
        if outer is not None:
            return poisson(self.outside(K, outer), target)
        key = (K, target)
        if key not in self._hole_poisson:
            self._hole_poisson[key] = poisson(self.outside(K), target)
        return self._hole_poisson[key]

    # -- forms --------------------------------------------------------------

    def form_matrix(self, Q: PairCollection) -> FormMatrix:
        rows = [I for I in Q.q1s if I in self.sys_s]
        cols = [J for J in Q.q2s if J in self.sys_w]
        r_index = {I: k for k, I in enumerate(rows)}
        c_index = {J: k for k, J in enumerate(cols)}
        M = np.zeros((len(rows), len(cols)))
        for p in Q:
            if p.q1 not in r_index or p.q2 not in c_index:
                continue
            tilde = p.tilde_q1
            value = self.sys_s.value_on_child(p.q1, tilde)
            M[r_index[p.q1], c_index[p.q2]] += value * self.hole_pairings(tilde)[self.sys_w.index[p.q2]]
        return FormMatrix(rows, cols, M)

    def norm(self, Q: PairCollection) -> float:
        """The operator norm B_Q."""
        if len(Q) == 0:
            return 0.0
        return self.form_matrix(Q).norm()

    def b_form(self, Q: PairCollection, f: HaarCoefficients, g: HaarCoefficients) -> float:
        """B_Q(f, g) summed over atoms, independent of the Haar-coordinate matrix."""
        sigma, w = self.pair.sigma, self.pair.w
        f_vals, g_vals = reconstruct(f), reconstruct(g)
        in_i0 = self._sigma_mask(self.i0)
        fields: Dict[DyadicInterval, np.ndarray] = {}
        terms = []
        for p in Q:
            tilde = p.tilde_q1
            if mass(sigma, tilde) == 0.0:
                continue
            head = average(mart_diff(f_vals, sigma, p.q1), sigma, tilde)
            if head == 0.0:
                continue
            if tilde not in fields:
                fields[tilde] = hilbert_field(in_i0 * (1.0 - self._sigma_mask(tilde)), self.pair, None, self.win)
            d_g = mart_diff(g_vals, w, p.q2)
            terms.append(head * math.fsum((w.weights * fields[tilde] * d_g).tolist()))
        return math.fsum(terms)

    def _deep_terms(self, f: HaarCoefficients, g: HaarCoefficients):
        """(I, J, fhat(I) h_I(I_J) ghat(J)) over sigma-Haar I in I0 and w-Haar J deeply inside I."""
        for J, gc in sorted(g.coeffs.items()):
            if gc == 0.0 or J not in self.sys_w or not self.i0.contains(J):
                continue
            for I in J.ancestors():
                if not self.i0.contains(I):
                    break
                fc = f.coeffs.get(I, 0.0)
                if fc == 0.0 or I not in self.sys_s or not deeply_contained(J, I, self.cfg):
                    continue
                child = J.ancestor(I.n + 1)
                yield I, J, child, fc * self.sys_s.value_on_child(I, child) * gc

    def b_above(self, f: HaarCoefficients, g: HaarCoefficients) -> float:
        terms = [c * self.inside_pairings(child)[self.sys_w.index[J]] for _, J, child, c in self._deep_terms(f, g)]
        return math.fsum(terms)

    def b_stop(self, f: HaarCoefficients, g: HaarCoefficients) -> float:
        terms = [c * self.hole_pairings(child)[self.sys_w.index[J]] for _, J, child, c in self._deep_terms(f, g)]
        return math.fsum(terms)

    def i0_part(self, f: HaarCoefficients, g: HaarCoefficients) -> float:
        """sum over J of epsilon_J <H(1_{I0} sigma), Delta^w_J g>_w."""
        full = self.inside_pairings(self.i0)
        terms = []
        for J, gc in sorted(g.coeffs.items()):
            if gc == 0.0 or J not in self.sys_w or not self.i0.contains(J):
                continue
            eps_J = epsilon_J(f, J, self.i0, self.cfg)
            terms.append(eps_J * gc * full[self.sys_w.index[J]])
        return math.fsum(terms)

    # -- size and eta functionals -------------------------------------------

    def x_coeff_sq(self, J: DyadicInterval) -> float:
        row = self.sys_w.index.get(J)
        return 0.0 if row is None else float(self.sys_w.x_coeffs[row]) ** 2

    def tent(self, intervals: Iterable[DyadicInterval], L: DyadicInterval) -> float:
        """sum over J in intervals with J inside L of <x, h^w_J>^2."""
        return math.fsum(self.x_coeff_sq(J) for J in intervals if L.contains(J))

    def size(self, Q: PairCollection, outer: Optional[DyadicInterval] = None) -> SizeResult:
        """size(Q), skipping K with sigma(K) = 0.

        outer replaces I0 in P(sigma(I0 - K), K), which gives the variant
        P(sigma(L - K), K) when outer = L.
        """
        q2s = Q.q2s
        best, witness, skipped = 0.0, None, 0
        for K in Q.k_family():
            sK = mass(self.pair.sigma, K)
            if sK == 0.0:
                skipped += 1
                continue
            tent = self.tent(q2s, K)
            if tent == 0.0:
                continue
            P = self.hole_poisson(K, outer=outer)
            value = P * P * tent / (sK * K.length ** 2)
            if value > best:
                best, witness = value, K
        if skipped:
            logger.debug(f"size skipped {skipped} zero-mass intervals")
        return SizeResult(math.sqrt(best), witness, skipped)

    def _hole_sup(self, q2s: Sequence[DyadicInterval], family: Iterable[DyadicInterval]) -> float:
        """sup over S of (1/sigma(S)) sum over J deeply inside S of P(sigma(I0 - S), J)^2 <x/|J|, h_J>^2."""
        best = 0.0
        for S in family:
            sS = mass(self.pair.sigma, S)
            if sS == 0.0:
                continue
            terms = [self.hole_poisson(S, J) ** 2 * self.x_coeff_sq(J) / J.length ** 2
                     for J in q2s if deeply_contained(J, S, self.cfg)]
            best = max(best, math.fsum(terms) / sS)
        return math.sqrt(best)

    def eta_holes(self, Q: PairCollection, S_family: Sequence[DyadicInterval]) -> float:
        for p in Q:
            if not any(deeply_contained(p.q2, S, self.cfg) and p.tilde_q1.contains(S) for S in S_family):
                raise AdmissibilityError(f"pair {p.q1},{p.q2} has no S with Q2 deeply inside S inside tilde Q1")
        return self._hole_sup(Q.q2s, S_family)

    def eta_Holes(self, Q: PairCollection, S_family: Sequence[DyadicInterval]) -> float:
        for p in Q:
            if not any(S.contains(p.q2) and deeply_contained(S, p.tilde_q1, self.cfg) for S in S_family):
                raise AdmissibilityError(f"pair {p.q1},{p.q2} has no S with Q2 inside S deeply inside tilde Q1")
        tildes = Q.tildes
        q2s = Q.q2s
        best = 0.0
        for S in S_family:
            sS = mass(self.pair.sigma, S)
            containing = [T for T in tildes if T.contains(S)]
            if sS == 0.0 or not containing:
                continue
            pi_S = max(containing)
            P = poisson(self.outside(pi_S), S)
            best = max(best, P * P * self.tent(q2s, S) / (sS * S.length ** 2))
        return math.sqrt(best)

    def beta_t(self, Q_Lt: PairCollection, S_L: Sequence[DyadicInterval]) -> float:
        return self._hole_sup(Q_Lt.q2s, S_L)

    def equal_majorant(self, Q: PairCollection) -> float:
        """Cauchy-Schwarz majorant of B_Q when every pair has the same ratio |Q1|/|Q2|."""
        exponents = {p.ratio_exponent for p in Q}
        if len(exponents) > 1:
            raise AdmissibilityError(f"ratio |Q1|/|Q2| is not fixed: exponents {sorted(exponents)}")
        best = 0.0
        for K, group in Q.by_tilde.items():
            sK = mass(self.pair.sigma, K)
            if sK == 0.0:
                continue
            best = max(best, math.fsum(self.pairing(K, p.q2) ** 2 for p in group) / sK)
        return math.sqrt(best)

    # -- pointwise gadgets --------------------------------------------------

    def phi_J(self, Q: PairCollection, f_vals: np.ndarray, J: DyadicInterval) -> np.ndarray:
        """phi_J = sum over pairs with Q2 = J of E_J Delta_{Q1} f * 1_{I0 - tilde Q1}, on sigma-atoms."""
        sigma = self.pair.sigma
        out = np.zeros(len(sigma))
        if J not in Q.by_q2:
            raise AdmissibilityError(f"{J} is not a Q2 interval of the collection")
        in_i0 = self._sigma_mask(self.i0)
        for p in Q.by_q2[J]:
            tilde = p.tilde_q1
            if mass(sigma, tilde) == 0.0:
                continue
            height = average(mart_diff(f_vals, sigma, p.q1), sigma, tilde)
            out += height * in_i0 * (1.0 - self._sigma_mask(tilde))
        return out

    def phi_bound(self, Q: PairCollection, f_vals: np.ndarray, J: DyadicInterval,
                  stopping: StoppingData, S: DyadicInterval) -> Tuple[float, bool]:
        """(max |phi_J| / alpha(pi_F J), whether phi_J vanishes on S)."""
        phi = self.phi_J(Q, f_vals, J)
        top = float(np.max(np.abs(phi))) if len(phi) else 0.0
        vanishes = not np.any(phi[self.pair.sigma.atom_slice(S)])
        F = stopping.pi(J)
        alpha = stopping.alpha.get(F, 0.0) if F is not None else 0.0
        if top == 0.0:
            return 0.0, vanishes
        return (top / alpha if alpha > 0.0 else math.inf), vanishes

    def monotonicity_check(self, S_hole: DyadicInterval, J: DyadicInterval) -> MonotonicityResult:
        """|<H(1_{I0 - S} sigma), h_J>| / [P(sigma(I0 - S), J) <x/|J|, h_J>]."""
        if not deeply_contained(J, S_hole, self.cfg):
            raise AdmissibilityError(f"{J} is not deeply contained in {S_hole}")
        row = self.sys_w.index.get(J)
        if row is None:
            raise AdmissibilityError(f"{J} is degenerate for w")
        if len(self.outside(S_hole)) == 0:
            return MonotonicityResult(0.0, True)
        numerator = abs(float(self.hole_pairings(S_hole)[row]))
        denominator = self.hole_poisson(S_hole, J) * float(self.sys_w.x_coeffs[row]) / J.length
        return MonotonicityResult(numerator / denominator)


def make_Q0(pair: MeasurePair, i0: DyadicInterval, S_family: Sequence[DyadicInterval],
            energy_family: Sequence[DyadicInterval] = ()) -> PairCollection:
    """Pairs (I, J) with J a w-Haar interval deeply inside a good I in i0, J not inside any S."""
    cfg = pair.cfg
    S_family = sorted(S_family)
    for a, b in zip(S_family, S_family[1:]):
        if a.contains(b) or b.contains(a):
            raise AdmissibilityError(f"S family is not disjoint: {a} and {b}")
    for S in S_family:
        if not i0.contains(S):
            raise AdmissibilityError(f"S interval {S} is not inside i0={i0}")
    for F in energy_family:
        if not any(S.contains(F) for S in S_family):
            raise AdmissibilityError(f"energy stopping interval {F} lies in no S")

    pairs = []
    for J in haar_system(pair.w).support:
        if not i0.strictly_contains(J) or any(S.contains(J) for S in S_family):
            continue
        for I in J.ancestors():
            if not i0.contains(I):
                break
            if is_good(I, cfg) and deeply_contained(J, I, cfg):
                pairs.append(Pair(I, J))
    Q = PairCollection(i0, pairs)
    logger.debug(f"Q0 has {len(Q)} pairs over {len(Q.q2s)} Q2 intervals")
    return Q


def stopping_data(f_vals: np.ndarray, sigma: AtomicMeasure, i0: DyadicInterval,
                  growth_factor: Optional[float] = None) -> StoppingData:
    """Stopping tree: add maximal F' inside F with E_{F'}|f| > growth_factor * alpha(F)."""
    factor = growth_factor if growth_factor is not None else forms_cfg['stopping']['growth_factor']
    abs_f = np.abs(np.asarray(f_vals, dtype=float))

    def mean_abs(I: DyadicInterval) -> Optional[float]:
        s = sigma.atom_slice(I)
        total = math.fsum(sigma.masses[s])
        if total == 0.0:
            return None
        return math.fsum((abs_f[s] * sigma.weights[s]).tolist()) / total

    root_alpha = mean_abs(i0)
    if root_alpha is None:
        raise MeasureError(f"stopping data over {i0}, which carries no sigma mass")
    data = StoppingData(i0, {i0: root_alpha}, {i0: None})
    queue = [i0]
    while queue:
        F = queue.pop()
        threshold = factor * data.alpha[F]
        stack = list(F.halves()) if F.n < sigma.K else []
        while stack:
            I = stack.pop()
            a = mean_abs(I)
            if a is None:
                continue
            if a > threshold:
                data.alpha[I] = a
                data.parent[I] = F
                queue.append(I)
            elif I.n < sigma.K:
                stack.extend(I.halves())
    return data


def orthogonality_violations(families: Sequence[PairCollection]) -> List[str]:
    """Mutual orthogonality: disjoint Q2 sets, every tilde Q1 interval in at most two families."""
    problems = []
    seen_q2: Dict[DyadicInterval, int] = {}
    tilde_count: Dict[DyadicInterval, int] = {}
    for k, Q in enumerate(families):
        for J in Q.q2s:
            if J in seen_q2:
                problems.append(f"Q2 interval {J} appears in families {seen_q2[J]} and {k}")
            seen_q2[J] = k
        for T in Q.tildes:
            tilde_count[T] = tilde_count.get(T, 0) + 1
    problems.extend(f"tilde Q1 interval {T} appears in {c} families" for T, c in tilde_count.items() if c > 2)
    return problems

"""A2, interval testing, the norm N and H = A2^(1/2) + T on atomic pairs.

Suprema over intervals are exact on the candidate families used here:
testing depends on an interval only through the atoms it contains, so every
contiguous block of the merged atom list is scanned; A2 scans every interval
with endpoints on atom cell boundaries (plus 0 and 1) and every dyadic
interval of the grid.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from engine.spectral import NormEstimate, estimate_norm
from shared.entities.dyadic import all_intervals
from shared.entities.measure import AtomicMeasure, MeasurePair, TruncationWindow, kernel_matrix, poisson_many
from shared.errors import MeasureError
from shared.utils.config_loader import constants_cfg

logger = logging.getLogger(__name__)

SCAN_CFG = constants_cfg['scan']


@dataclass(frozen=True)
class Witness:
    """An interval [left, right) achieving a supremum."""
    left: float
    right: float

    def to_dict(self) -> Dict[str, float]:
        return {'left': self.left, 'right': self.right}


def _cell_edges(nu: AtomicMeasure) -> np.ndarray:
    cells = np.asarray(nu.cells, dtype=float)
    return np.concatenate([cells, cells + 1.0]) * 2.0 ** -nu.K


def a2_candidates(pair: MeasurePair) -> Tuple[np.ndarray, np.ndarray]:
    """Candidate intervals for the A2 supremum, sorted by (left, right)."""
    edges = np.unique(np.concatenate([_cell_edges(pair.sigma), _cell_edges(pair.w), [0.0, 1.0]]))
    a, b = np.triu_indices(len(edges), k=1)
    lefts, rights = edges[a], edges[b]
    if SCAN_CFG['include_dyadic']:
        dyadic = all_intervals(pair.cfg.K)
        lefts = np.concatenate([lefts, [I.left for I in dyadic]])
        rights = np.concatenate([rights, [I.right for I in dyadic]])
    stacked = np.unique(np.stack([lefts, rights], axis=1), axis=0)
    return stacked[:, 0], stacked[:, 1]


def a2_constant(pair: MeasurePair) -> Tuple[float, Optional[Witness]]:
    """max over candidates of P(sigma, I) P(w, I), first maximizer in (left, right) order."""
    if len(pair.sigma) == 0 or len(pair.w) == 0:
        return 0.0, None
    lefts, rights = a2_candidates(pair)
    chunk = int(SCAN_CFG['chunk_intervals'])
    best, witness = -1.0, None
    for start in range(0, len(lefts), chunk):
        l, r = lefts[start:start + chunk], rights[start:start + chunk]
        values = poisson_many(pair.sigma, l, r) * poisson_many(pair.w, l, r)
        i = int(np.argmax(values))
        if values[i] > best:
            best, witness = float(values[i]), Witness(float(l[i]), float(r[i]))
    logger.debug(f"A2 = {best!r} over {len(lefts)} candidates")
    return best, witness


def testing_constant(pair: MeasurePair, direction: str = 'sigma',
                     win: Optional[TruncationWindow] = None) -> Tuple[float, Optional[Witness]]:
    """Interval testing constant.

    direction='sigma' gives sup_I [integral over I of |H(1_I sigma)|^2 dw / sigma(I)]^(1/2);
    direction='w' is the dual with the roles of sigma and w swapped.
    """
    if direction not in ('sigma', 'w'):
        raise ValueError(f"unknown testing direction {direction!r}")
    win = win or TruncationWindow.default_for(pair)
    src, tgt = (pair.sigma, pair.w) if direction == 'sigma' else (pair.w, pair.sigma)
    if len(src) == 0 or len(tgt) == 0:
        return 0.0, None

    G = kernel_matrix(tgt.positions, src.positions, win)
    positions = np.concatenate([src.positions, tgt.positions])
    order = np.argsort(positions, kind='stable')
    is_src = order < len(src)
    src_before = np.concatenate([[0], np.cumsum(is_src)])
    tgt_before = np.concatenate([[0], np.cumsum(~is_src)])
    src_mass = np.concatenate([[0.0], np.cumsum(src.weights)])
    merged = positions[order]
    half_cell = 2.0 ** -(pair.cfg.K + 1)

    N = len(order)
    best, witness = -1.0, None
    for s in range(N):
        s_src, s_tgt = int(src_before[s]), int(tgt_before[s])
        if s_src == len(src):
            break
        # field at every target atom from source atoms s_src .. s_src + c
        H = np.cumsum(G[:, s_src:] * src.weights[None, s_src:], axis=1)
        Q = tgt.weights[s_tgt:, None] * H[s_tgt:] ** 2
        Qcum = np.vstack([np.zeros((1, Q.shape[1])), np.cumsum(Q, axis=0)])
        ends = np.arange(s + 1, N + 1)
        n_src = src_before[ends] - s_src
        n_tgt = tgt_before[ends] - s_tgt
        valid = n_src > 0
        if not valid.any():
            continue
        ends, n_src, n_tgt = ends[valid], n_src[valid], n_tgt[valid]
        values = Qcum[n_tgt, n_src - 1] / (src_mass[s_src + n_src] - src_mass[s_src])
        i = int(np.argmax(values))
        if values[i] > best:
            best = float(values[i])
            witness = Witness(float(merged[s] - half_cell), float(merged[ends[i] - 1] + half_cell))
    return math.sqrt(max(best, 0.0)), witness


def norm_matrix(pair: MeasurePair, win: TruncationWindow) -> np.ndarray:
    """A[i, j] = sqrt(w_i) sqrt(sigma_j) / (y_j - x_i) inside the window."""
    G = kernel_matrix(pair.w.positions, pair.sigma.positions, win)
    return np.sqrt(pair.w.weights)[:, None] * G * np.sqrt(pair.sigma.weights)[None, :]


def norm_estimate(pair: MeasurePair, win: Optional[TruncationWindow] = None) -> NormEstimate:
    win = win or TruncationWindow.default_for(pair)
    return estimate_norm(norm_matrix(pair, win))


def h_constant(a2: float, testing_sw: float, testing_ws: float) -> float:
    return math.sqrt(a2) + max(testing_sw, testing_ws)


def theorem_ratio(norm: float, h_const: float) -> float:
    """N / H, the empirical comparability ratio."""
    if not h_const > 0.0:
        raise MeasureError("H vanishes on this pair; the ratio N/H is undefined")
    return norm / h_const


@dataclass
class ConstantsBundle:
    """Every constant of one pair, before serialization."""
    a2: float
    a2_witness: Optional[Witness]
    testing_sw: float
    testing_sw_witness: Optional[Witness]
    testing_ws: float
    testing_ws_witness: Optional[Witness]
    norm: NormEstimate
    window: TruncationWindow

    @property
    def h_const(self) -> float:
        return h_constant(self.a2, self.testing_sw, self.testing_ws)

    @property
    def ratio(self) -> Optional[float]:
        h = self.h_const
        return self.norm.value / h if h > 0.0 else None

    def to_dict(self) -> Dict[str, Any]:
        def wit(w: Optional[Witness]):
            return w.to_dict() if w else None
        return {
            'a2': self.a2, 'a2_witness': wit(self.a2_witness),
            'testing_sw': self.testing_sw, 'testing_sw_witness': wit(self.testing_sw_witness),
            'testing_ws': self.testing_ws, 'testing_ws_witness': wit(self.testing_ws_witness),
            'norm': self.norm.value, 'norm_power': self.norm.power_value,
            'power_iterations': self.norm.iterations,
            'h_const': self.h_const, 'ratio': self.ratio,
            'window': self.window.to_dict(),
        }


def compute_constants(pair: MeasurePair, win: Optional[TruncationWindow] = None) -> ConstantsBundle:
    win = win or TruncationWindow.default_for(pair)
    a2, a2_w = a2_constant(pair)
    t_sw, t_sw_w = testing_constant(pair, 'sigma', win)
    t_ws, t_ws_w = testing_constant(pair, 'w', win)
    norm = norm_estimate(pair, win)
    bundle = ConstantsBundle(a2, a2_w, t_sw, t_sw_w, t_ws, t_ws_w, norm, win)
    logger.info(f"constants: A2={a2:.6g} T={max(t_sw, t_ws):.6g} N={norm.value:.6g} H={bundle.h_const:.6g}")
    return bundle

"""Largest singular values by full decomposition and by block power iteration."""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np
import scipy.linalg

from shared.utils.config_loader import constants_cfg

logger = logging.getLogger(__name__)

POWER_CFG = constants_cfg['power_iteration']


@dataclass
class NormEstimate:
    """Both estimates of ||A||_2 and the right singular vector of the top value."""
    value: float
    power_value: float
    iterations: int
    restarted: bool
    right_vector: np.ndarray

    @property
    def relative_gap(self) -> float:
        if self.value == 0.0:
            return abs(self.power_value)
        return abs(self.value - self.power_value) / self.value

    def to_dict(self) -> Dict[str, Any]:
        return {
            'value': self.value,
            'power_value': self.power_value,
            'iterations': self.iterations,
            'restarted': self.restarted,
        }


def spectral_norm(A: np.ndarray) -> float:
    """||A||_2 from the full singular value decomposition; 0 for empty matrices."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    return float(scipy.linalg.svdvals(A)[0])


def _orthonormal(block: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(block)
    return q


def power_iteration(A: np.ndarray, block_size: Optional[int] = None,
                    max_iterations: Optional[int] = None, rel_tol: Optional[float] = None,
                    seed: Optional[int] = None):
    """Block power iteration on A^T A with Rayleigh-Ritz extraction.

    The starting block has the all-ones vector first and seeded Gaussian
    columns after it. If the iterate collapses to zero, the block restarts
    once from a fresh seeded Gaussian block.

    Returns:
        (value, right singular vector, iterations used, restarted flag)
    """
    A = np.asarray(A, dtype=float)
    block_size = block_size or POWER_CFG['block_size']
    max_iterations = max_iterations or POWER_CFG['max_iterations']
    rel_tol = rel_tol if rel_tol is not None else POWER_CFG['rel_tol']
    seed = seed if seed is not None else POWER_CFG['restart_seed']
    m, n = A.shape
    if A.size == 0 or not np.any(A):
        return 0.0, np.zeros(n), 0, False

    rng = np.random.default_rng(seed)
    b = min(block_size, n)
    start = np.empty((n, b))
    start[:, 0] = 1.0
    if b > 1:
        start[:, 1:] = rng.standard_normal((n, b - 1))
    V = _orthonormal(start)

    restarted = False
    value, previous = 0.0, 0.0
    top = V[:, 0]
    iterations = 0
    while iterations < max_iterations:
        iterations += 1
        W = A.T @ (A @ V)
        if np.linalg.norm(W) < POWER_CFG['stagnation_floor']:
            if restarted:
                logger.warning("power iteration collapsed twice; reporting 0")
                return 0.0, np.zeros(n), iterations, True
            logger.debug("power iteration collapsed; restarting from a seeded block")
            V = _orthonormal(rng.standard_normal((n, b)))
            restarted = True
            continue
        V = _orthonormal(W)
        _, s, vt = scipy.linalg.svd(A @ V, full_matrices=False)
        value = float(s[0])
        top = V @ vt[0]
        if abs(value - previous) <= rel_tol * value:
            break
        previous = value
    return value, top, iterations, restarted


def estimate_norm(A: np.ndarray) -> NormEstimate:
    """Spectral norm by both methods, logging when they disagree."""
    A = np.asarray(A, dtype=float)
    exact = spectral_norm(A)
    power, vector, iterations, restarted = power_iteration(A)
    estimate = NormEstimate(exact, power, iterations, restarted, vector)
    if estimate.relative_gap > constants_cfg['oracle']['agreement_rel_tol']:
        logger.warning(f"norm oracles disagree: svd={exact!r} power={power!r} after {iterations} iterations")
    return estimate

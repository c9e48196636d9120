# regress.py
"""Sequentially thresholded least squares on the kinetic-column regression problem."""
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

import config
from errors import BadColumn, EmptySupport, NoConvergence, RankDeficientWarning, SpecInvalid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegressionProblem:
    A: np.ndarray
    y: np.ndarray
    column_labels: tuple
    kinetic_col: int
    coord: Optional[int] = None

    def restore(self):
        """The full EL matrix with the target column put back in place."""
        return np.insert(self.A, self.kinetic_col, self.y, axis=1)

    def source_column(self, j):
        return j if j < self.kinetic_col else j + 1


@dataclass(frozen=True)
class StlsqConfig:
    lam: float
    max_iterations: int = field(default_factory=lambda: config.stlsq_max_iterations)
    ridge: float = field(default_factory=lambda: config.stlsq_ridge)
    normalize: bool = False

    def __post_init__(self):
        if not self.lam > 0:
            raise SpecInvalid(f"Sparsity threshold lambda must be positive, got {self.lam}")
        if self.max_iterations < 1:
            raise SpecInvalid(f"max_iterations must be at least 1, got {self.max_iterations}")
        if self.ridge < 0:
            raise SpecInvalid(f"ridge must be non-negative, got {self.ridge}")


@dataclass(frozen=True)
class SparseSolution:
    theta: np.ndarray
    support: tuple
    iterations: int
    residual_rms: float
    labels: tuple = ()

    def to_json(self):
        return {
            'support': [self.labels[j] if self.labels else j for j in self.support],
            'theta': [float(self.theta[j]) for j in self.support],
            'residual_rms': float(self.residual_rms),
            'iterations': self.iterations,
        }


def build_problem(el, kinetic_col):
    if not 0 <= kinetic_col < el.cols:
        raise BadColumn(f"Kinetic column {kinetic_col} is outside the {el.cols} library columns")
    y = el.values[:, kinetic_col].copy()
    A = np.delete(el.values, kinetic_col, axis=1)
    labels = tuple(label for k, label in enumerate(el.labels) if k != kinetic_col)
    return RegressionProblem(A, y, labels, kinetic_col, el.coord)


def least_squares(A, y, ridge=0.0):
    """argmin |A theta - y|^2 + ridge |theta|^2 through an SVD-based solver."""
    n_cols = A.shape[1]
    if n_cols == 0:
        return np.zeros(0)
    if ridge > 0:
        A = np.vstack([A, np.sqrt(ridge) * np.eye(n_cols)])
        y = np.concatenate([y, np.zeros(n_cols)])
    theta, _, rank, _ = linalg.lstsq(A, y, lapack_driver='gelsd')
    if ridge == 0 and rank < n_cols:
        warnings.warn(f"Effective rank {rank} is below the {n_cols} active columns", RankDeficientWarning)
    return theta


def stlsq(p, cfg):
    A, y = p.A, p.y
    n_cols = A.shape[1]

    # columns that vanish on this coordinate never enter the support
    support = np.any(A != 0.0, axis=0)
    if not support.any():
        raise EmptySupport("Every library column is identically zero for this coordinate")

    scale = np.ones(n_cols)
    if cfg.normalize:
        rms = np.sqrt(np.mean(A ** 2, axis=0))
        scale[support] = rms[support]
    As = A / scale

    theta = np.zeros(n_cols)
    for iteration in range(1, cfg.max_iterations + 1):
        theta = np.zeros(n_cols)
        theta[support] = least_squares(As[:, support], y, cfg.ridge)
        keep = support & (np.abs(theta) >= cfg.lam)
        logger.debug(f"STLSQ iteration {iteration}: {int(support.sum())} -> {int(keep.sum())} active columns")
        if not keep.any():
            raise EmptySupport(f"Threshold {cfg.lam:g} removed every column after {iteration} iteration(s)")
        if np.array_equal(keep, support):
            break
        support = keep
    else:
        raise NoConvergence(f"Support still changing after {cfg.max_iterations} iterations",
                            support=[p.column_labels[j] for j in np.flatnonzero(support)])

    theta = theta / scale
    residual = y - A @ theta
    indices = tuple(int(j) for j in np.flatnonzero(support))
    return SparseSolution(theta, indices, iteration, float(np.sqrt(np.mean(residual ** 2))), tuple(p.column_labels))

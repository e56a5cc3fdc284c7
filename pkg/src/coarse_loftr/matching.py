"""Score matrix, dual-softmax match probabilities, match selection and MAE."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import ConfigError, DimensionError
from .numerics import Tensor

__all__ = ["MatchSet", "score_matrix", "dual_softmax", "extract_matches", "mae", "cell_center"]

DEFAULT_TAU = 0.1
DEFAULT_THRESHOLD = 0.2


@dataclass
class MatchSet:
    matches: list[tuple[int, int, float]] = field(default_factory=list)
    threshold: float = DEFAULT_THRESHOLD

    def __len__(self) -> int:
        return len(self.matches)


def score_matrix(featA: Tensor, featB: Tensor, tau: float = DEFAULT_TAU) -> Tensor:
    """S = featA . featB^T / tau."""
    if tau <= 0:
        raise ConfigError(f"score temperature tau must be positive, got {tau}")
    if featA.ndim != 2 or featB.ndim != 2 or featA.shape[1] != featB.shape[1]:
        raise DimensionError(f"score_matrix: feature shapes {featA.shape} and {featB.shape} disagree")
    return nx.matmul(featA, nx.transpose(featB)) / tau


def dual_softmax(S: Tensor) -> Tensor:
    """Row softmax times column softmax, elementwise."""
    return nx.softmax(S, dim=1) * nx.softmax(S, dim=0)


def extract_matches(P, threshold: float = DEFAULT_THRESHOLD, mnn: bool = True) -> MatchSet:
    """Pairs (i, j) with P[i, j] >= threshold, optionally mutual nearest neighbours.

    ``np.argmax`` returns the first maximum, so ties go to the smaller index.
    """
    if not 0.0 < threshold <= 1.0:
        raise ConfigError(f"match threshold must lie in (0, 1], got {threshold}")
    P = P.data if isinstance(P, Tensor) else np.asarray(P)
    keep = P >= threshold
    if mnn:
        rows = np.zeros_like(keep)
        rows[np.arange(P.shape[0]), P.argmax(axis=1)] = True
        cols = np.zeros_like(keep)
        cols[P.argmax(axis=0), np.arange(P.shape[1])] = True
        keep &= rows & cols
    ii, jj = np.nonzero(keep)
    return MatchSet([(int(i), int(j), float(P[i, j])) for i, j in zip(ii, jj)], threshold)


def mae(P, G) -> float:
    """Mean absolute difference between match probabilities and the 0/1 ground truth."""
    P = P.data if isinstance(P, Tensor) else np.asarray(P)
    G = np.asarray(G)
    if P.shape != G.shape:
        raise DimensionError(f"mae: probability shape {P.shape} differs from ground truth {G.shape}")
    return float(np.abs(P - G).mean())


def cell_center(cell: int, grid_width: int, step: int = 16) -> tuple[int, int]:
    """Pixel (u, v) of a coarse cell's sample point."""
    r, c = divmod(cell, grid_width)
    return c * step + step // 2, r * step + step // 2
